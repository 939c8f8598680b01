"""Parallel index construction.

One coordinator thread (the caller of :func:`build_index`) reads the dataset
into a two-slot buffer while insert workers drain the other slot, claiming
series with a fetch-add cursor. Each worker owns a region of a pre-allocated
raw store; leaves keep handles into those regions. At every round boundary
the workers run a flush protocol: worker 0 acts as flush coordinator and,
when enough regions fill up, appends every leaf's in-memory series to that
leaf's spill file and resets all buffers.

The protocol must never lose a series: for any thread count, buffer size and
flush threshold, the multiset recoverable from spill files plus regions
equals the input dataset.
"""

from __future__ import annotations

import math
import os
import shutil
import tempfile
import threading
import time

import numpy as np

from .core import DTYPE, read_series_file, series_count
from .errors import DataFileError, UsageError
from .summarize import prefix_sums
from .tree import IdAllocator, Node, get_best_split_policy, route_to_leaf, split_node, update_leaf_synopsis

DEFAULT_DBSIZE = 120_000
DBSIZE_SCALE_POINT = 1_000_000
BUSYWAIT_SPINS = 1000


def default_dbsize(dataset_size: int) -> int:
    """120K series per read chunk, scaled down proportionally below 1M."""
    if dataset_size >= DBSIZE_SCALE_POINT:
        return DEFAULT_DBSIZE
    return max(1, math.ceil(DEFAULT_DBSIZE * dataset_size / DBSIZE_SCALE_POINT))


def default_flush_threshold(num_insert_workers: int) -> int:
    """Half the insert workers, rounded up."""
    return max(1, (num_insert_workers + 1) // 2)


class FetchAddCounter:
    def __init__(self, value: int = 0):
        self._value = value
        self._lock = threading.Lock()

    def fetch_add(self, delta: int = 1) -> int:
        with self._lock:
            old = self._value
            self._value += delta
            return old

    def reset(self, value: int = 0) -> None:
        with self._lock:
            self._value = value

    @property
    def value(self) -> int:
        with self._lock:
            return self._value


class BuildTrace:
    """Optional event recorder for construction tests."""

    def __init__(self):
        self.events: list[tuple] = []
        self._lock = threading.Lock()

    def note(self, worker_id: int, kind: str, **info):
        with self._lock:
            self.events.append((worker_id, kind, info))

    def of_kind(self, kind: str):
        return [e for e in self.events if e[1] == kind]


class Region:
    """One worker's slice of the raw store."""

    def __init__(self, capacity: int, n: int):
        self.data = np.empty((capacity, n), dtype=DTYPE)
        self.cursor = 0

    @property
    def capacity(self) -> int:
        return self.data.shape[0]

    def free(self) -> int:
        return self.capacity - self.cursor

    def append(self, series: np.ndarray) -> int:
        row = self.cursor
        self.data[row] = series
        self.cursor = row + 1
        return row

    def reset(self) -> None:
        self.cursor = 0


class SBuffer:
    """Per-leaf payload: region handles plus a spill-file row count."""

    def __init__(self):
        self.mem: list[tuple[int, int]] = []  # (worker_id, row)
        self.spilled = 0


class SeriesIndex:
    """The in-memory index produced by construction.

    Holds the tree, the raw store regions, and the per-leaf spill files in
    ``scratch_dir``. Index writing consumes this and releases the buffers.
    """

    def __init__(self, settings, scratch_dir: str, num_workers: int,
                 region_capacity: int, trace: BuildTrace | None = None):
        settings.validate()
        self.settings = settings
        self.scratch_dir = scratch_dir
        self.ids = IdAllocator()
        n = settings.series_length
        self.root = Node(self.ids.take(), [n])
        self.root.sbuffer = SBuffer()
        self.regions = [Region(region_capacity, n) for _ in range(num_workers)]
        self.trace = trace
        self._scratch_owned = False

    # -- leaf storage ------------------------------------------------------

    def spill_path(self, leaf: Node) -> str:
        return os.path.join(self.scratch_dir, f"leaf_{leaf.node_id}.bin")

    def leaf_members(self, leaf: Node) -> np.ndarray:
        """All series stored in a leaf: spilled rows first, then in-memory."""
        n = self.settings.series_length
        parts = []
        sb = leaf.sbuffer
        if sb.spilled:
            parts.append(read_series_file(self.spill_path(leaf), n, sb.spilled))
        if sb.mem:
            rows = np.empty((len(sb.mem), n), dtype=DTYPE)
            for i, (wid, row) in enumerate(sb.mem):
                rows[i] = self.regions[wid].data[row]
            parts.append(rows)
        if not parts:
            return np.empty((0, n), dtype=DTYPE)
        return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)

    def leaves_inorder(self) -> list[Node]:
        return list(self.root.iter_leaves())

    def release_buffers(self) -> None:
        self.regions = []
        for leaf in self.leaves_inorder():
            sb = leaf.sbuffer
            if sb is not None and sb.spilled:
                path = self.spill_path(leaf)
                if os.path.exists(path):
                    os.remove(path)
            leaf.sbuffer = None
        if self._scratch_owned and os.path.isdir(self.scratch_dir):
            shutil.rmtree(self.scratch_dir, ignore_errors=True)


class _Shared:
    """State shared between the coordinator and the insert workers."""

    def __init__(self, num_threads: int, dbsize: int, n: int, flush_threshold: int):
        self.num_insert_workers = num_threads - 1
        self.initial_dbsize = dbsize
        self.flush_threshold = flush_threshold
        self.dbuffer = [np.empty((dbsize, n), dtype=DTYPE) for _ in range(2)]
        self.db_size = [0, 0]
        self.db_counter = [FetchAddCounter(), FetchAddCounter()]
        self.finished = [False, False]
        self.flush_counter = FetchAddCounter()
        self.flush_order = False
        self.handshake = [False] * self.num_insert_workers
        self.dbarrier = threading.Barrier(num_threads)
        self.continue_barrier = threading.Barrier(self.num_insert_workers)
        self.flush_barrier = threading.Barrier(self.num_insert_workers)
        self.abort: BaseException | None = None

    def break_all(self):
        self.dbarrier.abort()
        self.continue_barrier.abort()
        self.flush_barrier.abort()


def _spin_until(predicate, shared: _Shared):
    spins = 0
    while not predicate():
        if shared.abort is not None:
            raise _Aborted()
        spins += 1
        if spins >= BUSYWAIT_SPINS:
            time.sleep(0)


class _Aborted(Exception):
    pass


def insert_series_to_node(index: SeriesIndex, root: Node, series: np.ndarray,
                          worker_id: int) -> None:
    """Insert one series, splitting the target leaf if it overflows.

    Routes from ``root``, re-routing whenever a concurrent split turned the
    locked node into an internal one. The raw bytes land in the calling
    worker's region; the leaf records a handle.
    """
    prefix = prefix_sums(series)
    tau = index.settings.leaf_threshold
    node = route_to_leaf(root, prefix=prefix)
    node.lock.acquire()
    while not node.is_leaf:
        node.lock.release()
        node = route_to_leaf(node, prefix=prefix)
        node.lock.acquire()
    try:
        update_leaf_synopsis(node, prefix=prefix)
        row = index.regions[worker_id].append(series)
        node.sbuffer.mem.append((worker_id, row))
        if index.trace is not None:
            index.trace.note(worker_id, "region_write", leaf=node.node_id, row=row)
        if node.rho > tau:
            _split_leaf(index, node)
    finally:
        node.lock.release()


def _split_leaf(index: SeriesIndex, leaf: Node) -> None:
    """Split a leaf that just exceeded the threshold (leaf lock held)."""
    members = index.leaf_members(leaf)
    spilled = leaf.sbuffer.spilled
    mem_handles = leaf.sbuffer.mem
    policy = get_best_split_policy(leaf, members)

    def init_child(child: Node, mask: np.ndarray):
        sb = SBuffer()
        disk_rows = members[:spilled][mask[:spilled]]
        if len(disk_rows):
            with open(index.spill_path(child), "wb") as f:
                f.write(np.ascontiguousarray(disk_rows).tobytes())
            sb.spilled = len(disk_rows)
        for keep, handle in zip(mask[spilled:], mem_handles):
            if keep:
                sb.mem.append(handle)
        child.sbuffer = sb

    split_node(leaf, policy, members, index.ids, init_child=init_child)
    if spilled:
        os.remove(index.spill_path(leaf))
    leaf.sbuffer = None


def _flush_all_leaves(index: SeriesIndex) -> None:
    """Append every leaf's in-memory series to its spill file, reset buffers."""
    for leaf in index.root.iter_leaves():
        sb = leaf.sbuffer
        if not sb.mem:
            continue
        rows = np.empty((len(sb.mem), index.settings.series_length), dtype=DTYPE)
        for i, (wid, row) in enumerate(sb.mem):
            rows[i] = index.regions[wid].data[row]
        try:
            with open(index.spill_path(leaf), "ab") as f:
                f.write(rows.tobytes())
        except OSError as exc:
            raise DataFileError(f"spill write failed: {exc}") from exc
        sb.spilled += len(sb.mem)
        sb.mem.clear()
    for region in index.regions:
        region.reset()


def flush_coordinator(index: SeriesIndex, shared: _Shared) -> None:
    """Round-boundary flush decision and execution (runs on worker 0)."""
    shared.handshake[0] = True
    for w in range(shared.num_insert_workers):
        _spin_until(lambda w=w: shared.handshake[w], shared)
    own_full = index.regions[0].free() < shared.initial_dbsize
    if own_full or shared.flush_counter.value >= shared.flush_threshold:
        shared.flush_order = True
    shared.flush_counter.reset(0)
    shared.continue_barrier.wait()
    shared.handshake[0] = False
    if shared.flush_order:
        if index.trace is not None:
            index.trace.note(0, "flush")
        _flush_all_leaves(index)
        shared.flush_barrier.wait()
        # cleared only after every worker passed the barrier, so a slow
        # reader can never miss the order and leave the barrier short
        shared.flush_order = False


def flush_worker(index: SeriesIndex, shared: _Shared, worker_id: int) -> None:
    """Round-boundary participation of a non-coordinating worker."""
    if index.regions[worker_id].free() < shared.initial_dbsize:
        shared.flush_counter.fetch_add()
        if index.trace is not None:
            index.trace.note(worker_id, "region_full")
    shared.handshake[worker_id] = True
    shared.continue_barrier.wait()
    shared.handshake[worker_id] = False
    if shared.flush_order:
        if index.trace is not None:
            index.trace.note(worker_id, "flush_order_seen")
        shared.flush_barrier.wait()
        if index.trace is not None:
            index.trace.note(worker_id, "flush_barrier_passed")


def insert_worker_loop(index: SeriesIndex, shared: _Shared, worker_id: int) -> None:
    """Claim series from the active slot until the coordinator finishes."""
    toggle = 0
    region = index.regions[worker_id]
    rounds = 0
    while not shared.finished[toggle]:
        size = shared.db_size[toggle]
        if region.free() >= size:
            pos = shared.db_counter[toggle].fetch_add()
            while pos < size:
                if index.trace is not None:
                    index.trace.note(worker_id, "claim", round=rounds,
                                     slot=toggle, pos=pos)
                insert_series_to_node(
                    index, index.root, shared.dbuffer[toggle][pos], worker_id
                )
                pos = shared.db_counter[toggle].fetch_add()
        shared.dbarrier.wait()
        if worker_id == 0:
            flush_coordinator(index, shared)
        else:
            flush_worker(index, shared, worker_id)
        toggle = 1 - toggle
        rounds += 1


def _worker_main(index, shared, worker_id):
    try:
        insert_worker_loop(index, shared, worker_id)
    except threading.BrokenBarrierError:
        pass
    except _Aborted:
        pass
    except BaseException as exc:  # propagate through the coordinator
        if shared.abort is None:
            shared.abort = exc
        shared.break_all()


def build_index(
    dataset_path: str,
    settings,
    num_threads: int,
    buffer_bytes: int | None = None,
    dbsize: int | None = None,
    flush_threshold: int | None = None,
    scratch_dir: str | None = None,
    trace: BuildTrace | None = None,
) -> SeriesIndex:
    """Build the in-memory index from a raw dataset file.

    ``num_threads`` counts the read coordinator plus the insert workers, so
    it must be at least 2. ``buffer_bytes`` is the total raw-store size,
    split evenly into per-worker regions; each region must hold at least one
    read chunk.
    """
    settings.validate()
    n = settings.series_length
    data_size = series_count(dataset_path, n)
    if data_size != settings.dataset_size:
        raise UsageError(
            f"{dataset_path}: has {data_size} series, settings say "
            f"{settings.dataset_size}"
        )
    if num_threads < 2:
        raise UsageError("need at least 2 threads (coordinator + 1 worker)")
    num_workers = num_threads - 1
    if dbsize is None:
        dbsize = default_dbsize(data_size)
    if flush_threshold is None:
        flush_threshold = default_flush_threshold(num_workers)
    if buffer_bytes is None:
        region_capacity = max(dbsize, math.ceil(data_size / num_workers) + dbsize)
    else:
        region_capacity = buffer_bytes // (4 * n * num_workers)
    if region_capacity < dbsize:
        raise UsageError(
            f"buffer too small: each of {num_workers} regions holds "
            f"{region_capacity} series, need at least one chunk of {dbsize}"
        )

    if scratch_dir is None:
        scratch_dir = tempfile.mkdtemp(prefix="seriesearch-build-")
        owned = True
    else:
        os.makedirs(scratch_dir, exist_ok=True)
        owned = False
    index = SeriesIndex(settings, scratch_dir, num_workers, region_capacity, trace)
    index._scratch_owned = owned

    shared = _Shared(num_threads, dbsize, n, flush_threshold)
    try:
        with open(dataset_path, "rb") as f:
            toggle = 0
            first = min(dbsize, data_size)
            shared.db_size[toggle] = first
            _read_chunk(f, shared.dbuffer[toggle], first, n)
            toggle = 1

            workers = [
                threading.Thread(
                    target=_worker_main, args=(index, shared, wid), daemon=True
                )
                for wid in range(num_workers)
            ]
            for t in workers:
                t.start()

            total = first
            try:
                while total < data_size:
                    chunk = min(dbsize, data_size - total)
                    shared.db_size[toggle] = chunk
                    _read_chunk(f, shared.dbuffer[toggle], chunk, n)
                    shared.db_counter[toggle].reset(0)
                    total += chunk
                    toggle = 1 - toggle
                    shared.dbarrier.wait()
                shared.finished[toggle] = True
                shared.dbarrier.wait()
            except threading.BrokenBarrierError:
                pass
            except BaseException as exc:
                if shared.abort is None:
                    shared.abort = exc
                shared.break_all()
            for t in workers:
                t.join()
    except OSError as exc:
        shared.abort = DataFileError(f"{dataset_path}: {exc}")

    if shared.abort is not None:
        index.release_buffers()
        raise shared.abort
    return index


def _read_chunk(f, slot: np.ndarray, count: int, n: int) -> None:
    data = np.fromfile(f, dtype=DTYPE, count=count * n)
    if data.size != count * n:
        raise DataFileError("dataset file truncated mid-read")
    slot[:count] = data.reshape(count, n)
