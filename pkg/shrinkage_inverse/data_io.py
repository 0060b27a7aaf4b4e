"""CSV and JSON readers and writers; every write is atomic (temp file + rename)"""

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np

from .errors import InputError
from .types import GridFunction, Measure, MomentSeries, SampleSet

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def fmt(value: float) -> str:
    """Shortest text that round-trips a float exactly"""
    return '%.17g' % float(value)


def sha256_of_file(path: PathLike) -> str:
    h = hashlib.sha256()
    with Path(path).open('rb') as f:
        while True:
            block = f.read(1024 * 1024)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


def atomic_write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', newline='', encoding='utf-8') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Wrote {path}")
    return path


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write_text(path, buffer.getvalue())


def write_columns(path: PathLike, columns: Dict[str, Sequence[float]]) -> Path:
    """One CSV column per entry; all columns must have the same length"""
    arrays = [np.asarray(v, dtype=float) for v in columns.values()]
    return write_csv(path, list(columns), zip(*[a.tolist() for a in arrays]))


def read_csv(path: PathLike, required: Sequence[str]) -> List[Dict[str, float]]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"Input file not found: {path}")
    try:
        with path.open('r', newline='', encoding='utf-8') as f:
            reader = csv.DictReader(line for line in f if not line.startswith('#'))
            missing = [c for c in required if c not in (reader.fieldnames or [])]
            if missing:
                raise InputError(f"{path} lacks column(s) {', '.join(missing)}")
            return [{k: float(row[k]) for k in reader.fieldnames} for row in reader]
    except (OSError, ValueError, TypeError, csv.Error) as e:
        raise InputError(f"Could not parse {path}: {e}")


def write_samples(path: PathLike, samples: SampleSet) -> Path:
    rows = ((t, x) for t, sizes in zip(samples.times, samples.sizes) for x in sizes)
    return write_csv(path, ['time', 'size'], ([fmt(t), fmt(x)] for t, x in rows))


def read_samples(path: PathLike) -> SampleSet:
    """SampleSet from a `time,size` CSV, grouped by time"""
    rows = read_csv(path, ['time', 'size'])
    if not rows:
        raise InputError(f"{path} holds no samples")
    groups: Dict[float, List[float]] = {}
    for row in rows:
        groups.setdefault(row['time'], []).append(row['size'])
    times = sorted(groups)
    return SampleSet(times, [groups[t] for t in times])


def write_moments(path: PathLike, series: Sequence[MomentSeries]) -> Path:
    """`t,M{k}...` CSV; all series share one time grid"""
    if not series:
        raise InputError("no moment series to write")
    times = series[0].times
    for s in series[1:]:
        if s.times.shape != times.shape or np.any(s.times != times):
            raise InputError("moment series must share their time grid")
    columns = {'t': times}
    columns.update({f"M{s.k}": s.values for s in series})
    return write_columns(path, columns)


def read_moments(path: PathLike, delta: float = 0.0) -> Dict[int, MomentSeries]:
    rows = read_csv(path, ['t'])
    if not rows:
        raise InputError(f"{path} holds no moment rows")
    orders = sorted(int(c[1:]) for c in rows[0] if c.startswith('M') and c[1:].isdigit())
    if not orders:
        raise InputError(f"{path} has no M<k> column")
    times = [r['t'] for r in rows]
    return {k: MomentSeries(k, times, [r[f"M{k}"] for r in rows], delta) for k in orders}


def write_grid_function(path: PathLike, u: GridFunction) -> Path:
    return write_columns(path, {'x': u.x, 'u': u.values})


def read_grid_function(path: PathLike) -> GridFunction:
    rows = read_csv(path, ['x', 'u'])
    if len(rows) < 2:
        raise InputError(f"{path} needs at least two grid points")
    x = np.array([r['x'] for r in rows])
    return GridFunction(float(x[1] - x[0]), x, [r['u'] for r in rows])


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, 'value'):
        return value.value
    raise TypeError(f"{type(value).__name__} is not JSON serialisable")


def write_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_to_builtin)
    return atomic_write_text(path, text + '\n')


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"Input file not found: {path}")
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"Could not parse {path}: {e}")


def write_measure(path: PathLike, mu: Measure) -> Path:
    return write_json(path, mu.to_dict())


def read_measure(path: PathLike) -> Measure:
    return Measure.from_dict(read_json(path))
