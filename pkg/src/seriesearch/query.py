"""Four-phase exact k-NN answering.

Phase 1 walks the tree best-first by envelope lower bound and scans up to
``lmax`` leaves for initial answers. Phase 2 drains the remaining frontier
into a candidate-leaf list without touching the disk. If envelope pruning
removed too little of the tree, a single-threaded skip-sequential scan over
the candidate leaves answers the query. Otherwise phase 3 filters the
candidate leaves' symbol words in parallel, and either a skip-sequential
scan (when word pruning was weak) or a parallel refinement of the surviving
positions (phase 4) produces the final answers.

Pruning comparisons are deliberately asymmetric: a popped bound strictly
greater than the best-so-far ends the walk, while children enter the
frontier only when their bound is strictly below it.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import DTYPE, ed2_batch, ed2_batch_abandoning
from .errors import UsageError
from .persist import QueryableIndex
from .summarize import (
    lb_eapca_from_stats,
    lb_sax_batch,
    paa,
    prefix_sums,
    stats_from_prefix,
)
from .tree import Node


@dataclass
class QueryConfig:
    k: int = 1
    lmax: int = 80
    eapca_th: float = 0.25
    sax_th: float = 0.50
    num_threads: int = 1

    def validate(self) -> None:
        if self.k < 1:
            raise UsageError("k must be at least 1")
        if self.lmax < 1:
            raise UsageError("lmax must be at least 1")
        if not (0.0 <= self.eapca_th <= 1.0 and 0.0 <= self.sax_th <= 1.0):
            raise UsageError("thresholds must lie in [0, 1]")
        if self.num_threads < 1:
            raise UsageError("num_threads must be at least 1")


class ResultSet:
    """The k best answers so far: (squared distance, position), sorted.

    ``bsf`` is the k-th best squared distance. Reads of ``bsf`` are
    unsynchronized (it only ever decreases); insertions re-check under the
    lock, so a stale read can cost a wasted distance computation but never
    a wrong answer. Ties keep the earliest-found entry.
    """

    def __init__(self, k: int):
        self.k = k
        self._dists = [np.inf] * k
        self._positions: list[int | None] = [None] * k
        self._lock = threading.Lock()
        self.bsf = np.inf

    def insert(self, dist: float, pos: int) -> bool:
        if dist >= self.bsf:
            return False
        with self._lock:
            if dist >= self._dists[-1]:
                return False
            at = bisect.bisect_right(self._dists, dist)
            self._dists.insert(at, dist)
            self._positions.insert(at, pos)
            self._dists.pop()
            self._positions.pop()
            self.bsf = self._dists[-1]
            return True

    def distances_sq(self) -> list[float]:
        return list(self._dists)

    def entries(self) -> list[tuple[float, int | None]]:
        """(reported distance, position) pairs; sqrt happens here."""
        return [
            (float(np.sqrt(d)) if np.isfinite(d) else float("inf"), p)
            for d, p in zip(self._dists, self._positions)
        ]


@dataclass
class QueryStats:
    phase_reached: str = "1"
    eapca_pr: float = 0.0
    sax_pr: float = 0.0
    visited_leaves: int = 0
    series_read: int = 0
    bytes_read: int = 0
    fraction_data_accessed: float = 0.0
    input_seconds: float = 0.0
    wall_seconds: float = 0.0
    candidate_leaves: int = 0
    candidate_series: int = 0


class _QueryState:
    """Per-query scratch shared by the phases."""

    def __init__(self, index: QueryableIndex, query: np.ndarray):
        self.index = index
        self.query = query
        self.cs, self.cs2 = prefix_sums(query)
        self.query_paa = paa(query, index.settings.word_segments)
        self.tie = itertools.count()

    def lb(self, node: Node) -> float:
        starts = node.starts
        ends = node.endpoints
        qmeans, qsds = stats_from_prefix(self.cs, self.cs2, starts, ends)
        widths = (ends - starts).astype(np.float64)
        return lb_eapca_from_stats(
            qmeans, qsds, widths,
            node.mu_min, node.mu_max, node.sd_min, node.sd_max,
        )


class QueryEngine:
    """Answers queries against one loaded index, reusing a thread pool."""

    def __init__(self, index: QueryableIndex):
        self.index = index
        self._pool: ThreadPoolExecutor | None = None
        self._pool_size = 0

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None
            self._pool_size = 0

    def _run_workers(self, fn, num_threads: int) -> None:
        if num_threads <= 1:
            fn(0)
            return
        if self._pool is None or self._pool_size < num_threads:
            if self._pool is not None:
                self._pool.shutdown(wait=True)
            self._pool = ThreadPoolExecutor(max_workers=num_threads)
            self._pool_size = num_threads
        futures = [self._pool.submit(fn, i) for i in range(num_threads)]
        for fut in futures:
            fut.result()

    # -- phases ------------------------------------------------------------

    def approx_knn(self, state: _QueryState, pq: list, cfg: QueryConfig,
                   results: ResultSet) -> int:
        """Best-first search over at most ``cfg.lmax`` leaves.

        Leaves the unvisited frontier in ``pq`` for the next phase and
        returns the number of leaves visited.
        """
        index = self.index
        root_lb = state.lb(index.root)
        heapq.heappush(pq, (root_lb, next(state.tie), index.root))
        visited = 0
        while visited < cfg.lmax and pq:
            lb, _, node = heapq.heappop(pq)
            if lb > results.bsf:
                break
            if node.is_leaf:
                first, count = node.file_position
                if count:
                    block = index.store.read_slice(first, count)
                    dists = ed2_batch(block, state.query)
                    for i in np.argsort(dists, kind="stable"):
                        d = float(dists[i])
                        if d >= results.bsf:
                            break
                        results.insert(d, first + int(i))
                visited += 1
            else:
                for child in (node.left, node.right):
                    child_lb = state.lb(child)
                    if child_lb < results.bsf:
                        heapq.heappush(pq, (child_lb, next(state.tie), child))
        return visited

    def find_candidate_leaves(self, state: _QueryState, pq: list, bsf: float,
                              lclist: list) -> None:
        """Drain the frontier into (leaf, lb) pairs; no distances computed."""
        while pq:
            lb, _, node = heapq.heappop(pq)
            if lb > bsf:
                break
            if node.is_leaf:
                lclist.append((node, lb))
            else:
                for child in (node.left, node.right):
                    child_lb = state.lb(child)
                    if child_lb < bsf:
                        heapq.heappush(pq, (child_lb, next(state.tie), child))
        lclist.sort(key=lambda entry: entry[0].file_position[0])

    def find_candidate_series(self, state: _QueryState, bsf: float,
                              lclist: list, num_threads: int) -> list[list]:
        """Word-filter the candidate leaves in parallel.

        Workers claim leaves by fetch-add; each keeps a local list of
        (position, word lower bound) pairs for the positions it could not
        prune. Returns the per-worker lists.
        """
        index = self.index
        locals_: list[list] = [[] for _ in range(num_threads)]
        cursor = itertools.count()
        lock = threading.Lock()

        def take() -> int:
            with lock:
                return next(cursor)

        def worker(wid: int) -> None:
            local = locals_[wid]
            j = take()
            while j < len(lclist):
                leaf, _ = lclist[j]
                first, count = leaf.file_position
                if count:
                    words = index.words[first : first + count]
                    lbs = lb_sax_batch(
                        state.query_paa, words,
                        index.symbol_lower, index.symbol_upper,
                        index.settings.series_length,
                    )
                    for i in np.flatnonzero(lbs < bsf):
                        local.append((first + int(i), float(lbs[i])))
                j = take()

        self._run_workers(worker, num_threads)
        return locals_

    def compute_results(self, state: _QueryState, results: ResultSet,
                        sclist: list[list]) -> None:
        """Refine surviving candidates in parallel against the live bsf.

        One worker per local candidate list (the phase-3 worker count).
        """
        index = self.index

        def worker(wid: int) -> None:
            for pos, lb in sclist[wid]:
                if lb >= results.bsf:
                    continue
                series = index.store.read_one(pos)
                d = float(ed2_batch(series[None, :], state.query)[0])
                if d < results.bsf:
                    results.insert(d, pos)

        self._run_workers(worker, len(sclist))

    def skip_sequential_scan(self, state: _QueryState, lclist: list,
                             results: ResultSet) -> None:
        """Position-ordered scan of candidate leaves with early abandoning.

        A leaf whose stored envelope bound no longer beats the best-so-far
        is skipped without touching its slice.
        """
        index = self.index
        for leaf, lb in lclist:
            if lb >= results.bsf:
                continue
            first, count = leaf.file_position
            if not count:
                continue
            block = index.store.read_slice(first, count)
            dists, alive = ed2_batch_abandoning(block, state.query, results.bsf)
            order = np.argsort(dists, kind="stable")
            for i in order:
                if not alive[i]:
                    break
                results.insert(float(dists[i]), first + int(i))

    # -- the full algorithm --------------------------------------------------

    def exact_knn(self, query, cfg: QueryConfig) -> tuple[ResultSet, QueryStats]:
        cfg.validate()
        index = self.index
        q = np.ascontiguousarray(query, dtype=DTYPE)
        if q.ndim != 1 or q.size != index.settings.series_length:
            raise UsageError(
                f"query length {q.size} does not match index series length "
                f"{index.settings.series_length}"
            )
        store = index.store
        read0 = store.series_read
        input0 = store.read_seconds
        t0 = time.perf_counter()

        state = _QueryState(index, q)
        results = ResultSet(cfg.k)
        stats = QueryStats()
        pq: list = []

        stats.visited_leaves = self.approx_knn(state, pq, cfg, results)
        bsf = results.bsf

        lclist: list = []
        self.find_candidate_leaves(state, pq, bsf, lclist)
        stats.candidate_leaves = len(lclist)
        stats.eapca_pr = 1.0 - len(lclist) / index.total_leaves

        if stats.eapca_pr < cfg.eapca_th:
            self.skip_sequential_scan(state, lclist, results)
            stats.phase_reached = "scan2"
        else:
            sclist = self.find_candidate_series(state, bsf, lclist,
                                                cfg.num_threads)
            n_candidates = sum(len(local) for local in sclist)
            stats.candidate_series = n_candidates
            stats.sax_pr = 1.0 - n_candidates / index.total_series
            if stats.sax_pr < cfg.sax_th:
                self.skip_sequential_scan(state, lclist, results)
                stats.phase_reached = "scan3"
            elif n_candidates:
                self.compute_results(state, results, sclist)
                stats.phase_reached = "4"
            elif lclist:
                stats.phase_reached = "3"
            else:
                stats.phase_reached = "1" if not pq else "2"

        stats.wall_seconds = time.perf_counter() - t0
        stats.series_read = store.series_read - read0
        stats.bytes_read = stats.series_read * index.settings.series_length * 4
        stats.input_seconds = store.read_seconds - input0
        stats.fraction_data_accessed = stats.series_read / index.total_series
        return results, stats


def exact_knn(query, index: QueryableIndex, cfg: QueryConfig):
    """One-shot convenience wrapper around :class:`QueryEngine`."""
    engine = QueryEngine(index)
    try:
        return engine.exact_knn(query, cfg)
    finally:
        engine.close()
