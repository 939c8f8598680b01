"""Series primitives: normalization, squared Euclidean distance, raw file I/O.

All series are fixed-length float32 vectors. Distances are kept in squared
space internally; callers take the square root only when reporting.

Every squared-distance in the package funnels through :func:`ed2_batch` so
that the same (query, series) pair always produces the bit-identical float32
value regardless of which search phase computed it.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DataFileError, UsageError

DTYPE = np.dtype("<f4")

# Population sd below this is treated as a constant series.
CONSTANT_SD = 1e-8


def as_series(values) -> np.ndarray:
    """Coerce to a contiguous float32 vector."""
    s = np.ascontiguousarray(values, dtype=DTYPE)
    if s.ndim != 1 or s.size == 0:
        raise UsageError("a series must be a non-empty 1-D vector")
    return s


def z_normalize(s) -> np.ndarray:
    """Shift/scale to mean 0 and population sd 1.

    A constant series (sd < 1e-8) normalizes to all zeros; that is the
    documented degenerate result, not an error.
    """
    s = as_series(s)
    if not np.isfinite(s).all():
        raise UsageError("series contains non-finite values")
    x = s.astype(np.float64)
    mu = x.mean()
    sd = x.std()  # population (divide-by-n) sd
    if sd < CONSTANT_SD:
        return np.zeros_like(s)
    return ((x - mu) / sd).astype(DTYPE)


def ed2_batch(block: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance of every row in ``block`` to ``q``.

    float32 in, float32 pairwise accumulation out. This is the canonical
    distance kernel; see module docstring.
    """
    d = block - q
    return (d * d).sum(axis=-1)


def euclidean_sq(a, b) -> float:
    """Squared Euclidean distance between two equal-length series."""
    a = as_series(a)
    b = as_series(b)
    if a.shape != b.shape:
        raise UsageError(f"length mismatch: {a.size} vs {b.size}")
    return float(ed2_batch(a[None, :], b)[0])


def euclidean_sq_early_abandon(a, b, bound: float) -> float | None:
    """Squared distance if it is below ``bound``, else None (abandoned).

    Never abandons a pair whose true squared distance is strictly below the
    bound. Evaluated with the vectorized kernel: at these lengths a whole-row
    computation beats a Python-level abandoning loop; block-granular
    abandoning for scans lives in :func:`ed2_batch_abandoning`.
    """
    if bound < 0:
        raise UsageError("bound must be non-negative")
    d = euclidean_sq(a, b)
    return None if d >= bound else d


def ed2_batch_abandoning(
    block: np.ndarray, q: np.ndarray, bound: float, chunk: int = 64
) -> tuple[np.ndarray, np.ndarray]:
    """Early-abandoning batch distance against a fixed bound.

    Returns ``(dists, alive)``. Rows whose running sum reached ``bound``
    are marked dead and their entry in ``dists`` is meaningless. Surviving
    rows are recomputed with the canonical kernel so the values match
    :func:`euclidean_sq` bit for bit.
    """
    rows, n = block.shape
    alive = np.ones(rows, dtype=bool)
    partial = np.zeros(rows, dtype=np.float64)
    for c0 in range(0, n, chunk):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        d = block[idx, c0 : c0 + chunk] - q[c0 : c0 + chunk]
        partial[idx] += (d * d).sum(axis=1, dtype=np.float64)
        alive[idx] = partial[idx] < bound
    dists = np.full(rows, np.inf, dtype=DTYPE)
    idx = np.flatnonzero(alive)
    if idx.size:
        dists[idx] = ed2_batch(block[idx], q)
        # recomputation can land exactly on the bound; drop those rows too
        still = dists[idx] < bound
        alive[idx] = still
    return dists, alive


def write_series_file(path: str, data: np.ndarray) -> int:
    """Write a (count, n) float32 block in the raw dataset format.

    The format is a headerless stream of 32-bit little-endian IEEE-754
    floats, row-major. Returns the number of bytes written.
    """
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    try:
        with open(path, "wb") as f:
            f.write(arr.tobytes())
    except OSError as exc:
        raise DataFileError(f"{path}: {exc}") from exc
    return arr.nbytes


def append_series(f, data: np.ndarray) -> int:
    """Append rows to an already-open raw file handle."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    f.write(arr.tobytes())
    return arr.nbytes


def series_count(path: str, n: int) -> int:
    """Number of series in a raw file, validating divisibility."""
    try:
        size = os.path.getsize(path)
    except OSError as exc:
        raise DataFileError(f"{path}: {exc}") from exc
    if size % (4 * n) != 0:
        raise UsageError(
            f"{path}: size {size} is not a multiple of one {n}-point series"
        )
    return size // (4 * n)


def read_series_file(path: str, n: int, count: int | None = None) -> np.ndarray:
    """Read a raw dataset file into a (count, n) float32 array."""
    total = series_count(path, n)
    if count is None:
        count = total
    elif count > total:
        raise UsageError(f"{path}: requested {count} series, file has {total}")
    try:
        data = np.fromfile(path, dtype=DTYPE, count=count * n)
    except OSError as exc:
        raise DataFileError(f"{path}: {exc}") from exc
    return data.reshape(count, n)
