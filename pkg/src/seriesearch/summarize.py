"""Summarizations and lower-bounding distances.

Two families of summaries drive pruning:

* equi-segment PAA means discretized into symbol words against
  standard-normal breakpoints, with the classic MINDIST-style lower bound
  (:func:`lb_sax`);
* per-segment mean/sd statistics over a node's adaptive segmentation,
  enveloped into per-node min/max boxes, with the interval-gap lower bound
  (:func:`lb_eapca`).

Segment statistics are computed once, canonically: float64 prefix-sum
arithmetic cast to float32. Every caller (insertion, splitting, index
writing, query evaluation) goes through the same routine, so a series always
produces the bit-identical stats and a query sitting inside its own node's
envelopes gets a lower bound of exactly zero.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from .core import DTYPE
from .errors import UsageError

SUPPORTED_ALPHABETS = (2, 4, 8, 16, 32, 64, 128, 256)


# ---------------------------------------------------------------------------
# canonical segment statistics


def prefix_sums(block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-prefixed cumulative sums of values and squares, float64.

    Accepts ``(n,)`` or ``(rows, n)`` float32 input; output gains a leading
    zero column so a segment [a, b) reduces to two lookups.
    """
    x = np.asarray(block, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    rows = x.shape[0]
    zero = np.zeros((rows, 1), dtype=np.float64)
    cs = np.concatenate([zero, np.cumsum(x, axis=1)], axis=1)
    cs2 = np.concatenate([zero, np.cumsum(x * x, axis=1)], axis=1)
    if single:
        return cs[0], cs2[0]
    return cs, cs2


def stats_from_prefix(cs, cs2, starts, ends) -> tuple[np.ndarray, np.ndarray]:
    """Population mean and sd per segment from prefix sums, cast to float32.

    ``starts``/``ends`` are point-index arrays; shapes broadcast so the same
    call serves a single series or a member block.
    """
    starts = np.asarray(starts)
    ends = np.asarray(ends)
    w = (ends - starts).astype(np.float64)
    mean = (cs[..., ends] - cs[..., starts]) / w
    msq = (cs2[..., ends] - cs2[..., starts]) / w
    var = msq - mean * mean
    sd = np.sqrt(np.maximum(var, 0.0))
    return mean.astype(DTYPE), sd.astype(DTYPE)


def segment_stats(series, start: int, end: int) -> tuple[float, float]:
    """Population mean/sd of points [start, end) of one series."""
    s = np.ascontiguousarray(series, dtype=DTYPE)
    if not 0 <= start < end <= s.size:
        raise UsageError(f"empty or out-of-range segment [{start}, {end})")
    cs, cs2 = prefix_sums(s)
    mean, sd = stats_from_prefix(cs, cs2, np.array([start]), np.array([end]))
    return float(mean[0]), float(sd[0])


def segment_stats_matrix(block: np.ndarray, starts, ends):
    """Per-member segment stats for a (rows, n) block: two (rows, m) arrays."""
    cs, cs2 = prefix_sums(block)
    return stats_from_prefix(cs, cs2, starts, ends)


# ---------------------------------------------------------------------------
# PAA / symbol words


def paa_batch(block: np.ndarray, l: int) -> np.ndarray:
    """Segment means over ``l`` equi-length segments for every row."""
    block = np.asarray(block, dtype=DTYPE)
    single = block.ndim == 1
    if single:
        block = block[None, :]
    rows, n = block.shape
    if n % l != 0:
        raise UsageError(f"series length {n} is not divisible by {l} segments")
    out = block.reshape(rows, l, n // l).mean(axis=2)
    return out[0] if single else out


def paa(series, l: int) -> np.ndarray:
    """PAA vector of one series."""
    return paa_batch(series, l)


def normal_breakpoints(alphabet_size: int) -> np.ndarray:
    """Standard-normal quantiles at i/alphabet_size, i = 1..alphabet_size-1."""
    if alphabet_size not in SUPPORTED_ALPHABETS:
        raise UsageError(
            f"alphabet size must be a power of two in [2, 256], got {alphabet_size}"
        )
    probs = np.arange(1, alphabet_size) / alphabet_size
    return norm.ppf(probs)


def isax_from_paa(paa_values: np.ndarray, breakpoints: np.ndarray) -> np.ndarray:
    """Map PAA values to symbols; a value equal to a cut takes the upper region."""
    symbols = np.searchsorted(breakpoints, np.asarray(paa_values, dtype=np.float64),
                              side="right")
    return symbols.astype(np.uint8)


def symbol_bounds(breakpoints: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-symbol interval [lower, upper]; open ends are +-inf."""
    a = breakpoints.size + 1
    lower = np.empty(a, dtype=np.float64)
    upper = np.empty(a, dtype=np.float64)
    lower[0] = -np.inf
    lower[1:] = breakpoints
    upper[: a - 1] = breakpoints
    upper[a - 1] = np.inf
    return lower, upper


def lb_sax_batch(
    query_paa: np.ndarray,
    words: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    n: int,
) -> np.ndarray:
    """Squared symbol-word lower bound of every word against the query's PAA.

    (n/l) * sum_i gap_i^2 where gap_i is the distance from the query PAA
    value to the word's symbol interval (zero inside).
    """
    q = np.asarray(query_paa, dtype=np.float64)
    lo = lower[words]
    hi = upper[words]
    gap = np.maximum(np.maximum(lo - q, q - hi), 0.0)
    w = n // q.shape[-1]
    return w * (gap * gap).sum(axis=-1)


def lb_sax(query_paa, word, breakpoints: np.ndarray, n: int) -> float:
    """Squared lower bound between one query PAA vector and one symbol word."""
    q = np.asarray(query_paa, dtype=np.float64)
    word = np.asarray(word)
    if q.shape != word.shape:
        raise UsageError("query PAA and word segment counts differ")
    lower, upper = symbol_bounds(breakpoints)
    return float(lb_sax_batch(q, word[None, :], lower, upper, n)[0])


# ---------------------------------------------------------------------------
# EAPCA envelope lower bound


def lb_eapca_from_stats(
    qmeans, qsds, widths, mu_min, mu_max, sd_min, sd_max
) -> float:
    """Squared envelope gap bound: sum_i w_i * (gap_mu_i^2 + gap_sd_i^2).

    An empty envelope (min=+inf) yields +inf, which prunes the node.
    """
    qm = np.asarray(qmeans, dtype=np.float64)
    qs = np.asarray(qsds, dtype=np.float64)
    gm = np.maximum(np.maximum(mu_min - qm, qm - mu_max), 0.0)
    gs = np.maximum(np.maximum(sd_min - qs, qs - sd_max), 0.0)
    return float((widths * (gm * gm + gs * gs)).sum())


def lb_eapca(query, endpoints, mu_min, mu_max, sd_min, sd_max) -> float:
    """Squared lower bound of a query against one node's synopsis.

    ``endpoints`` are the segmentation's right endpoints (last one equals
    the series length); the four envelope arrays have one entry per segment.
    """
    endpoints = np.asarray(endpoints)
    if not (
        len(endpoints)
        == len(mu_min)
        == len(mu_max)
        == len(sd_min)
        == len(sd_max)
    ):
        raise UsageError("segmentation and synopsis lengths differ")
    s = np.ascontiguousarray(query, dtype=DTYPE)
    if endpoints[-1] != s.size:
        raise UsageError("segmentation does not cover the series")
    starts = np.concatenate([[0], endpoints[:-1]])
    cs, cs2 = prefix_sums(s)
    qmeans, qsds = stats_from_prefix(cs, cs2, starts, endpoints)
    widths = (endpoints - starts).astype(np.float64)
    return lb_eapca_from_stats(qmeans, qsds, widths, mu_min, mu_max, sd_min, sd_max)
