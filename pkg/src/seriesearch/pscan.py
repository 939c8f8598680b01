"""Parallel early-abandoning sequential scan.

The exactness baseline and test oracle: one reader thread streams the
dataset through a two-slot chunk buffer while worker threads claim row
blocks with a fetch-add cursor and evaluate them against the shared
best-so-far with early abandoning. Answers are identical to a naive
nested-loop scan for every thread count.
"""

from __future__ import annotations

import threading

import numpy as np

from .core import DTYPE, ed2_batch, ed2_batch_abandoning, series_count
from .errors import DataFileError, UsageError
from .query import ResultSet

_ROW_BLOCK = 2048


def brute_force_knn(data: np.ndarray, query: np.ndarray, k: int) -> ResultSet:
    """Single-pass reference scan over an in-memory block."""
    results = ResultSet(k)
    dists = ed2_batch(data, query)
    order = np.argsort(dists, kind="stable")[:k]
    for i in order:
        results.insert(float(dists[i]), int(i))
    return results


def pscan_query(
    dataset_path: str,
    n: int,
    query: np.ndarray,
    k: int,
    num_threads: int = 1,
    chunk_series: int = 16384,
) -> ResultSet:
    """Exact k-NN of one query via the parallel double-buffered scan."""
    if num_threads < 1:
        raise UsageError("num_threads must be at least 1")
    total = series_count(dataset_path, n)
    query = np.ascontiguousarray(query, dtype=DTYPE)
    if query.size != n:
        raise UsageError(f"query length {query.size} != {n}")
    results = ResultSet(k)

    slots = [np.empty((chunk_series, n), dtype=DTYPE) for _ in range(2)]
    slot_rows = [0, 0]
    slot_base = [0, 0]
    ready = [threading.Semaphore(0), threading.Semaphore(0)]
    done = [threading.Semaphore(1), threading.Semaphore(1)]
    stop = threading.Event()

    def reader():
        try:
            with open(dataset_path, "rb") as f:
                toggle = 0
                offset = 0
                while offset < total:
                    rows = min(chunk_series, total - offset)
                    done[toggle].acquire()
                    data = np.fromfile(f, dtype=DTYPE, count=rows * n)
                    if data.size != rows * n:
                        raise DataFileError(f"{dataset_path}: truncated")
                    slots[toggle][:rows] = data.reshape(rows, n)
                    slot_rows[toggle] = rows
                    slot_base[toggle] = offset
                    ready[toggle].release()
                    offset += rows
                    toggle = 1 - toggle
        except BaseException as exc:
            errors.append(exc)
            stop.set()
            for sem in ready:
                sem.release()

    errors: list = []
    chunks = (total + chunk_series - 1) // chunk_series

    def scan_chunk(toggle: int):
        rows = slot_rows[toggle]
        base = slot_base[toggle]
        block = slots[toggle]
        cursor = [0]
        lock = threading.Lock()

        def take():
            with lock:
                start = cursor[0]
                cursor[0] += _ROW_BLOCK
                return start

        def worker():
            try:
                start = take()
                while start < rows:
                    stopi = min(start + _ROW_BLOCK, rows)
                    sub = block[start:stopi]
                    dists, alive = ed2_batch_abandoning(sub, query, results.bsf)
                    for i in np.flatnonzero(alive):
                        results.insert(float(dists[i]), base + start + int(i))
                    start = take()
            except BaseException as exc:
                errors.append(exc)
                cursor[0] = rows  # stop the other workers

        if num_threads == 1:
            worker()
        else:
            threads = [
                threading.Thread(target=worker, daemon=True)
                for _ in range(num_threads)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

    reader_thread = threading.Thread(target=reader, daemon=True)
    reader_thread.start()
    toggle = 0
    for _ in range(chunks):
        ready[toggle].acquire()
        if stop.is_set():
            break
        scan_chunk(toggle)
        done[toggle].release()
        toggle = 1 - toggle
    reader_thread.join()
    if errors:
        raise errors[0]
    return results


def pscan(
    dataset_path: str,
    n: int,
    queries: np.ndarray,
    k: int,
    num_threads: int = 1,
) -> list[ResultSet]:
    """Run a whole workload sequentially through the parallel scan."""
    return [
        pscan_query(dataset_path, n, q, k, num_threads=num_threads)
        for q in np.atleast_2d(queries)
    ]
