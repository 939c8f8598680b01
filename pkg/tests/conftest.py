import os

import numpy as np
import pytest

from seriesearch.build import build_index
from seriesearch.core import read_series_file
from seriesearch.generate import generate_random_walk
from seriesearch.persist import IndexSettings, load_index, write_index

N = 64
COUNT = 2000
TAU = 64
SEED = 11


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("data") / "small.bin")
    generate_random_walk(COUNT, N, seed=SEED, out_path=path)
    return path


@pytest.fixture(scope="session")
def small_data(small_dataset):
    return read_series_file(small_dataset, N)


@pytest.fixture(scope="session")
def small_settings():
    return IndexSettings(series_length=N, dataset_size=COUNT, leaf_threshold=TAU)


@pytest.fixture(scope="session")
def small_index_dir(tmp_path_factory, small_dataset, small_settings):
    index = build_index(small_dataset, small_settings, num_threads=4)
    out = str(tmp_path_factory.mktemp("index") / "small")
    write_index(index, out, num_threads=2)
    return out


@pytest.fixture(scope="session")
def small_qidx(small_index_dir):
    return load_index(small_index_dir)


def random_walks(count: int, n: int, seed: int) -> np.ndarray:
    """In-memory z-normalized random walks (independent of the generator)."""
    rng = np.random.default_rng(seed)
    walks = np.cumsum(rng.standard_normal((count, n)), axis=1)
    mu = walks.mean(axis=1, keepdims=True)
    sd = walks.std(axis=1, keepdims=True)
    return ((walks - mu) / sd).astype(np.float32)


# ---------------------------------------------------------------------------
# independent split-gain oracle: plain numpy stats, exhaustive candidate sweep


def oracle_stats(members, starts, ends):
    means = np.empty((len(members), len(starts)), np.float32)
    sds = np.empty_like(means)
    for i, row in enumerate(members):
        x = row.astype(np.float64)
        for j, (a, b) in enumerate(zip(starts, ends)):
            means[i, j] = x[a:b].mean()
            sds[i, j] = x[a:b].std()
    return means, sds


def oracle_qos(means, sds, widths):
    if len(means) == 0:
        return 0.0
    dm = (means.max(axis=0) - means.min(axis=0)).astype(np.float64)
    ds = (sds.max(axis=0) - sds.min(axis=0)).astype(np.float64)
    return float((widths * (dm * dm + ds * ds)).sum())


def oracle_all_gains(node, members):
    """Gain of every candidate split, enumerated independently."""
    starts = node.starts
    ends = node.endpoints
    rho = len(members)
    gains = []
    for seg in range(len(ends)):
        a, b = int(starts[seg]), int(ends[seg])
        mid = (a + b) // 2
        layouts = [(None, a, b)]
        if b - a >= 2:
            layouts += [(mid, a, mid), (mid, mid, b)]
        for attr in ("mean", "sd"):
            for split_point, lo, hi in layouts:
                rmeans, rsds = oracle_stats(members, [lo], [hi])
                vals = rmeans[:, 0] if attr == "mean" else rsds[:, 0]
                vmin, vmax = float(vals.min()), float(vals.max())
                if vmin == vmax:
                    continue
                thr = (vmin + vmax) / 2
                mask = vals.astype(np.float64) < thr
                if split_point is None:
                    cs = starts
                    ce = ends
                else:
                    cs = np.sort(np.concatenate([starts, [split_point]]))
                    ce = np.sort(np.concatenate([ends, [split_point]]))
                w = (ce - cs).astype(np.float64)
                cm, csd = oracle_stats(members, cs, ce)
                # both sides evaluated over the candidate's segmentation
                parent = oracle_qos(cm, csd, w)
                nl = int(mask.sum())
                nr = rho - nl
                gain = parent - (
                    nl * oracle_qos(cm[mask], csd[mask], w)
                    + nr * oracle_qos(cm[~mask], csd[~mask], w)
                ) / rho
                gains.append(((seg, attr, split_point, lo, hi), gain))
    return gains
