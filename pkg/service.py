"""Main entry point for shrinkage-inverse experiments

Usage:
    python service.py --config scenarios/depoly-gaussian.yaml gen-synthetic
    python service.py --config scenarios/frag-uniform-gamma2.yaml estimate-frag output/samples.csv

Exit codes: 0 success, 1 unexpected error, 2 input error, 3 validation error, 4 numerical error.
"""

import sys

from shrinkage_inverse.cli import main


if __name__ == '__main__':
    sys.exit(main())
