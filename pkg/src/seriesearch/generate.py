"""Dataset and query-workload generation.

Datasets are random walks: cumulative sums of i.i.d. standard-normal steps,
z-normalized, written in the raw float32 format. Reproducibility contract:
series ``i`` of a dataset seeded with ``seed`` is drawn from a Philox
generator seeded with ``SeedSequence(entropy=seed, spawn_key=(i,))``, so any
(count, length) prefix of the same seed produces identical bytes on every
platform. Workload queries use the same scheme on the workload seed.

Two workload kinds exist: ``noise`` perturbs randomly chosen dataset series
with per-point Gaussian noise of variance sigma^2 in [0.01, 0.1] and
re-normalizes; ``ood`` holds randomly chosen series out of the dataset,
emitting both the query file and the reduced dataset to be indexed.
"""

from __future__ import annotations

import numpy as np

from .core import DTYPE, read_series_file, series_count, write_series_file, z_normalize
from .errors import DataFileError, UsageError

NOISE_VARIANCE_RANGE = (0.01, 0.10)
_BLOCK = 4096


def _series_rng(seed: int, i: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(i,))
    return np.random.Generator(np.random.Philox(ss))


def random_walk_block(start: int, count: int, n: int, seed: int) -> np.ndarray:
    """Series [start, start+count) of the seeded random-walk stream."""
    out = np.empty((count, n), dtype=DTYPE)
    for j in range(count):
        rng = _series_rng(seed, start + j)
        walk = np.cumsum(rng.standard_normal(n))
        out[j] = z_normalize(walk.astype(DTYPE))
    return out


def generate_random_walk(count: int, n: int, seed: int, out_path: str) -> int:
    """Write a random-walk dataset; returns bytes written."""
    if count < 1 or n < 1:
        raise UsageError("count and length must be at least 1")
    written = 0
    try:
        with open(out_path, "wb") as f:
            for start in range(0, count, _BLOCK):
                block = random_walk_block(start, min(_BLOCK, count - start), n, seed)
                f.write(block.tobytes())
                written += block.nbytes
    except OSError as exc:
        raise DataFileError(f"{out_path}: {exc}") from exc
    return written


def generate_noise_workload(
    dataset_path: str,
    n: int,
    count: int,
    sigma2: float,
    seed: int,
    out_path: str,
) -> int:
    """Perturb sampled dataset series with Gaussian noise, re-normalized."""
    lo, hi = NOISE_VARIANCE_RANGE
    if not lo <= sigma2 <= hi:
        raise UsageError(
            f"noise variance {sigma2} outside the supported range [{lo}, {hi}]"
        )
    total = series_count(dataset_path, n)
    data = np.memmap(dataset_path, dtype=DTYPE, mode="r", shape=(total, n))
    sigma = float(np.sqrt(sigma2))
    queries = np.empty((count, n), dtype=DTYPE)
    for j in range(count):
        rng = _series_rng(seed, j)
        src = int(rng.integers(total))
        noisy = data[src].astype(np.float64) + rng.normal(0.0, sigma, n)
        queries[j] = z_normalize(noisy.astype(DTYPE))
    return write_series_file(out_path, queries)


def generate_ood_workload(
    dataset_path: str,
    n: int,
    count: int,
    seed: int,
    out_path: str,
    reduced_path: str,
) -> tuple[int, int]:
    """Hold ``count`` series out of the dataset as queries.

    Writes the query file and the reduced dataset (everything else, original
    order). Returns (query count, reduced count). Must run before indexing.
    """
    total = series_count(dataset_path, n)
    if count > total:
        raise UsageError(f"cannot hold out {count} of {total} series")
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed))
    )
    held = np.sort(rng.choice(total, size=count, replace=False))
    held_set = set(int(i) for i in held)

    data = np.memmap(dataset_path, dtype=DTYPE, mode="r", shape=(total, n))
    write_series_file(out_path, np.asarray(data[held]))
    try:
        with open(reduced_path, "wb") as f:
            for start in range(0, total, _BLOCK):
                stop = min(start + _BLOCK, total)
                keep = [i for i in range(start, stop) if i not in held_set]
                if keep:
                    f.write(np.asarray(data[keep]).tobytes())
    except OSError as exc:
        raise DataFileError(f"{reduced_path}: {exc}") from exc
    return count, total - count


def load_queries(path: str, n: int) -> np.ndarray:
    """Read a query workload file as a (count, n) block."""
    return read_series_file(path, n)
