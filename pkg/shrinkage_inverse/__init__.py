"""Forward solvers and inverse estimators for shrinking size distributions"""

__version__ = '0.1.0'

from .errors import InputError, NumericalError, ShrinkageError, ValidationError
from .types import FragmentationKernel, FragmentationParams, Measure, SampleSet

__all__ = [
    '__version__',
    'FragmentationKernel',
    'FragmentationParams',
    'InputError',
    'Measure',
    'NumericalError',
    'SampleSet',
    'ShrinkageError',
    'ValidationError',
]
