"""Index writing and loading.

Writing materializes three files into the index directory:

* ``lrd.bin``  raw series, float32 LE, grouped by leaf, leaves in in-order
  traversal order (dataset_size x n values);
* ``lsd.bin``  one symbol word per series, one unsigned byte per segment,
  aligned position-for-position with ``lrd.bin`` (dataset_size x l bytes);
* ``htree.bin`` header + postorder node records.

``htree.bin`` layout, all integers little-endian, floats IEEE-754:

    header  := magic "HTREEB01" | format_version u32 | n u32 |
               dataset_size u64 | leaf_threshold u32 | word_segments u32 |
               alphabet u32 | num_nodes u32
    record  := flags u8 (bit0 = leaf) | m u32 | m x endpoint u32 |
               m x (mu_min f32, mu_max f32, sd_min f32, sd_max f32) |
               rho u64 | payload
    payload := leaf:     first_series u64 | count u64
               internal: segment u32 | attribute u8 | kind u8 |
                         split_point u32 | route_start u32 | route_end u32 |
                         threshold f64

Workers post-process leaves in in-order rank (claimed by fetch-add): they
compute the symbol words and push the leaf's contribution into every
ancestor's envelopes. The writer thread appends each processed leaf to the
data files in order, and a worker does not claim its next leaf until the
one it just processed has been written, which bounds staged memory.
"""

from __future__ import annotations

import os
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .core import DTYPE
from .errors import DataFileError, IntegrityError, UsageError
from .summarize import (
    isax_from_paa,
    normal_breakpoints,
    paa_batch,
    prefix_sums,
    stats_from_prefix,
    symbol_bounds,
)
from .tree import MEAN, SD, IdAllocator, Node, SplitPolicy

MAGIC = b"HTREEB01"
FORMAT_VERSION = 1
HTREE_NAME = "htree.bin"
LRD_NAME = "lrd.bin"
LSD_NAME = "lsd.bin"

_HEADER = struct.Struct("<8sIIQIIII")
_BUSYWAIT_SPINS = 1000


@dataclass
class IndexSettings:
    """The persisted header that makes an index self-describing."""

    series_length: int
    dataset_size: int
    leaf_threshold: int
    word_segments: int = 16
    alphabet_size: int = 256
    format_version: int = FORMAT_VERSION

    def validate(self) -> None:
        if self.series_length <= 0 or self.dataset_size <= 0:
            raise UsageError("series length and dataset size must be positive")
        if self.leaf_threshold <= 0:
            raise UsageError("leaf threshold must be positive")
        if self.word_segments <= 0 or self.series_length % self.word_segments != 0:
            raise UsageError(
                f"series length {self.series_length} is not divisible by "
                f"{self.word_segments} word segments"
            )
        if self.alphabet_size != 256:
            raise UsageError("only the 256-symbol alphabet is supported on disk")


class SeriesStore:
    """Raw-series access with read accounting.

    Backed either by the in-memory array produced right after writing or by
    a read-only memmap of ``lrd.bin``. Every read is counted so a query can
    report how much data it touched.
    """

    def __init__(self, data: np.ndarray):
        self.data = data
        self._lock = threading.Lock()
        self.series_read = 0
        self.read_seconds = 0.0

    def _account(self, count: int, dt: float) -> None:
        with self._lock:
            self.series_read += count
            self.read_seconds += dt

    def read_slice(self, first: int, count: int) -> np.ndarray:
        t0 = time.perf_counter()
        out = np.asarray(self.data[first : first + count])
        self._account(count, time.perf_counter() - t0)
        return out

    def read_one(self, pos: int) -> np.ndarray:
        t0 = time.perf_counter()
        out = np.asarray(self.data[pos])
        self._account(1, time.perf_counter() - t0)
        return out

    def reset_stats(self) -> None:
        with self._lock:
            self.series_read = 0
            self.read_seconds = 0.0


class QueryableIndex:
    """A written (or loaded) index ready for query answering."""

    def __init__(self, settings: IndexSettings, root: Node, store: SeriesStore,
                 words: np.ndarray):
        self.settings = settings
        self.root = root
        self.store = store
        self.words = words
        self.leaves = list(root.iter_leaves())
        self.total_leaves = len(self.leaves)
        self.total_series = settings.dataset_size
        self.breakpoints = normal_breakpoints(settings.alphabet_size)
        self.symbol_lower, self.symbol_upper = symbol_bounds(self.breakpoints)


# ---------------------------------------------------------------------------
# leaf post-processing


def vsplit_synopsis(leaf: Node, series: np.ndarray, prefix=None) -> None:
    """Push one series' stats into every vertically-split ancestor segment.

    Walks from the leaf to the root; at each ancestor whose split was
    vertical, widens that segment's envelope with the series' mean/sd over
    the original (un-split) segment bounds, under the ancestor's lock.
    ``prefix`` may carry the series' precomputed prefix sums.
    """
    if prefix is None:
        cs = cs2 = None
    else:
        cs, cs2 = prefix
    node = leaf
    while node is not None:
        policy = node.policy
        if policy is not None and policy.is_vsplit:
            i = policy.segment_index
            a, b = node.segment_bounds(i)
            if cs is None:
                cs, cs2 = prefix_sums(np.ascontiguousarray(series, dtype=DTYPE))
            means, sds = stats_from_prefix(
                cs, cs2, np.array([a]), np.array([b])
            )
            mean, sd = float(means[0]), float(sds[0])
            with node.lock:
                if mean < node.mu_min[i]:
                    node.mu_min[i] = mean
                if mean > node.mu_max[i]:
                    node.mu_max[i] = mean
                if sd < node.sd_min[i]:
                    node.sd_min[i] = sd
                if sd > node.sd_max[i]:
                    node.sd_max[i] = sd
        node = node.parent


def _child_to_parent_segments(parent: Node):
    """(child_idx, parent_idx) pairs for segments not created by a v-split."""
    policy = parent.policy
    if policy is not None and policy.is_vsplit:
        i = policy.segment_index
        pairs = [(j, j) for j in range(i)]
        pairs += [
            (j + 1, j) for j in range(i + 1, parent.num_segments)
        ]
        return pairs
    return [(j, j) for j in range(parent.num_segments)]


def hsplit_synopsis(leaf: Node) -> None:
    """Merge envelopes child-into-parent along the leaf's ancestor chain.

    At each parent, every segment except the one it split vertically takes
    the union with the child's corresponding segment envelope (the split
    segment is handled per-series by :func:`vsplit_synopsis`).
    """
    node = leaf
    parent = node.parent
    while parent is not None:
        with parent.lock:
            for child_j, parent_j in _child_to_parent_segments(parent):
                if node.mu_min[child_j] < parent.mu_min[parent_j]:
                    parent.mu_min[parent_j] = node.mu_min[child_j]
                if node.mu_max[child_j] > parent.mu_max[parent_j]:
                    parent.mu_max[parent_j] = node.mu_max[child_j]
                if node.sd_min[child_j] < parent.sd_min[parent_j]:
                    parent.sd_min[parent_j] = node.sd_min[child_j]
                if node.sd_max[child_j] > parent.sd_max[parent_j]:
                    parent.sd_max[parent_j] = node.sd_max[child_j]
        node = parent
        parent = node.parent


def process_leaf(index, leaf: Node, breakpoints: np.ndarray) -> None:
    """Stage a leaf's raw block and symbol words; update ancestor synopses."""
    members = index.leaf_members(leaf)
    settings = index.settings
    if len(members):
        words = isax_from_paa(
            paa_batch(members, settings.word_segments), breakpoints
        )
        css, css2 = prefix_sums(members)
        for i, series in enumerate(members):
            vsplit_synopsis(leaf, series, prefix=(css[i], css2[i]))
    else:
        words = np.empty((0, settings.word_segments), dtype=np.uint8)
    hsplit_synopsis(leaf)
    leaf.staged_raw = members
    leaf.staged_words = words


# ---------------------------------------------------------------------------
# writing


def _spin_until(predicate):
    spins = 0
    while not predicate():
        spins += 1
        if spins >= _BUSYWAIT_SPINS:
            time.sleep(0)


def write_index_worker(index, leaves: list[Node], counter, breakpoints,
                       failures: list) -> None:
    """Claim in-order leaf ranks by fetch-add and post-process each one.

    Waits for the writer to consume a processed leaf before claiming the
    next, which keeps at most one staged leaf per worker.
    """
    try:
        j = counter.fetch_add()
        while j < len(leaves):
            leaf = leaves[j]
            process_leaf(index, leaf, breakpoints)
            leaf.processed = True
            _spin_until(lambda: leaf.written or failures)
            if failures:
                return
            j = counter.fetch_add()
    except BaseException as exc:
        failures.append(exc)


def write_index(index, out_dir: str, num_threads: int = 1) -> QueryableIndex:
    """Materialize a built index to ``out_dir`` and return it query-ready.

    The returned object serves queries from memory (the arrays just
    written); :func:`load_index` produces the equivalent object from disk.
    Build buffers and spill files are released on success.
    """
    from .build import FetchAddCounter  # local import, no module cycle

    settings = index.settings
    settings.validate()
    os.makedirs(out_dir, exist_ok=True)
    leaves = index.leaves_inorder()
    breakpoints = normal_breakpoints(settings.alphabet_size)

    counter = FetchAddCounter()
    failures: list = []
    workers = [
        threading.Thread(
            target=write_index_worker,
            args=(index, leaves, counter, breakpoints, failures),
            daemon=True,
        )
        for _ in range(max(1, num_threads))
    ]
    for t in workers:
        t.start()

    lrd_path = os.path.join(out_dir, LRD_NAME)
    lsd_path = os.path.join(out_dir, LSD_NAME)
    htree_path = os.path.join(out_dir, HTREE_NAME)
    raw_blocks: list[np.ndarray] = []
    word_blocks: list[np.ndarray] = []
    try:
        offset = 0
        with open(lrd_path, "wb") as lrd, open(lsd_path, "wb") as lsd:
            for leaf in leaves:
                _spin_until(lambda: leaf.processed or failures)
                if failures:
                    break
                lrd.write(np.ascontiguousarray(leaf.staged_raw).tobytes())
                lsd.write(np.ascontiguousarray(leaf.staged_words).tobytes())
                count = len(leaf.staged_raw)
                leaf.file_position = (offset, count)
                leaf.rho = count
                offset += count
                raw_blocks.append(leaf.staged_raw)
                word_blocks.append(leaf.staged_words)
                leaf.staged_raw = None
                leaf.staged_words = None
                leaf.written = True
        for t in workers:
            t.join()
        if failures:
            raise failures[0]
        if offset != settings.dataset_size:
            raise IntegrityError(
                f"wrote {offset} series, settings expected {settings.dataset_size}"
            )
        with open(htree_path, "wb") as f:
            f.write(
                _HEADER.pack(
                    MAGIC,
                    settings.format_version,
                    settings.series_length,
                    settings.dataset_size,
                    settings.leaf_threshold,
                    settings.word_segments,
                    settings.alphabet_size,
                    sum(1 for _ in index.root.iter_nodes()),
                )
            )
            _write_tree_postorder(index.root, f)
    except OSError as exc:
        failures.append(exc)  # unblock workers spinning on the written flag
        for t in workers:
            t.join()
        for path in (lrd_path, lsd_path, htree_path):
            if os.path.exists(path):
                os.remove(path)
        raise DataFileError(f"index write failed: {exc}") from exc
    except BaseException:
        for path in (lrd_path, lsd_path, htree_path):
            if os.path.exists(path):
                os.remove(path)
        raise

    index.release_buffers()

    n = settings.series_length
    raw = (
        np.concatenate(raw_blocks, axis=0)
        if raw_blocks
        else np.empty((0, n), dtype=DTYPE)
    )
    words = (
        np.concatenate(word_blocks, axis=0)
        if word_blocks
        else np.empty((0, settings.word_segments), dtype=np.uint8)
    )
    return QueryableIndex(settings, index.root, SeriesStore(raw), words)


def _write_tree_postorder(node: Node, f) -> None:
    """Serialize postorder, fixing internal sizes to the sum of children."""
    if not node.is_leaf:
        _write_tree_postorder(node.left, f)
        _write_tree_postorder(node.right, f)
        node.rho = node.left.rho + node.right.rho
    f.write(_node_record(node))


def _node_record(node: Node) -> bytes:
    m = node.num_segments
    parts = [
        struct.pack("<BI", 1 if node.is_leaf else 0, m),
        node.endpoints.astype("<u4").tobytes(),
    ]
    synopsis = np.empty((m, 4), dtype=DTYPE)
    synopsis[:, 0] = node.mu_min
    synopsis[:, 1] = node.mu_max
    synopsis[:, 2] = node.sd_min
    synopsis[:, 3] = node.sd_max
    parts.append(synopsis.tobytes())
    parts.append(struct.pack("<Q", node.rho))
    if node.is_leaf:
        first, count = node.file_position
        parts.append(struct.pack("<QQ", first, count))
    else:
        p = node.policy
        parts.append(
            struct.pack(
                "<IBBIIId",
                p.segment_index,
                0 if p.attribute == MEAN else 1,
                1 if p.is_vsplit else 0,
                p.split_point if p.is_vsplit else 0,
                p.route_start,
                p.route_end,
                p.threshold,
            )
        )
    return b"".join(parts)


# ---------------------------------------------------------------------------
# loading


def _read_exact(f, size: int, path: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise IntegrityError(f"{path}: truncated (wanted {size} more bytes)")
    return data


def _read_node_record(f, ids: IdAllocator, path: str) -> Node:
    flags, m = struct.unpack("<BI", _read_exact(f, 5, path))
    endpoints = np.frombuffer(_read_exact(f, 4 * m, path), dtype="<u4").astype(
        np.int64
    )
    synopsis = np.frombuffer(
        _read_exact(f, 16 * m, path), dtype=DTYPE
    ).reshape(m, 4)
    (rho,) = struct.unpack("<Q", _read_exact(f, 8, path))
    node = Node(ids.take(), endpoints)
    node.mu_min = synopsis[:, 0].copy()
    node.mu_max = synopsis[:, 1].copy()
    node.sd_min = synopsis[:, 2].copy()
    node.sd_max = synopsis[:, 3].copy()
    node.rho = int(rho)
    if flags & 1:
        first, count = struct.unpack("<QQ", _read_exact(f, 16, path))
        node.file_position = (first, count)
        node.written = True
    else:
        seg, attr, kind, sp, rs, re_, thr = struct.unpack(
            "<IBBIIId", _read_exact(f, 26, path)
        )
        node.is_leaf = False
        node.policy = SplitPolicy(
            segment_index=seg,
            attribute=MEAN if attr == 0 else SD,
            split_point=sp if kind == 1 else None,
            route_start=rs,
            route_end=re_,
            threshold=thr,
        )
    node.processed = True
    return node


def load_index(index_dir: str) -> QueryableIndex:
    """Load a written index: tree and words resident, raw data on demand."""
    htree_path = os.path.join(index_dir, HTREE_NAME)
    lrd_path = os.path.join(index_dir, LRD_NAME)
    lsd_path = os.path.join(index_dir, LSD_NAME)
    for path in (htree_path, lrd_path, lsd_path):
        if not os.path.exists(path):
            raise IntegrityError(f"{path}: missing")

    with open(htree_path, "rb") as f:
        header = _read_exact(f, _HEADER.size, htree_path)
        magic, version, n, dataset_size, tau, l, alphabet, num_nodes = (
            _HEADER.unpack(header)
        )
        if magic != MAGIC:
            raise IntegrityError(f"{htree_path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise IntegrityError(
                f"{htree_path}: format version {version}, expected {FORMAT_VERSION}"
            )
        settings = IndexSettings(
            series_length=n,
            dataset_size=dataset_size,
            leaf_threshold=tau,
            word_segments=l,
            alphabet_size=alphabet,
            format_version=version,
        )
        try:
            settings.validate()
        except UsageError as exc:
            raise IntegrityError(f"{htree_path}: bad settings: {exc}") from exc
        ids = IdAllocator()
        stack: list[Node] = []
        for _ in range(num_nodes):
            node = _read_node_record(f, ids, htree_path)
            if not node.is_leaf:
                if len(stack) < 2:
                    raise IntegrityError(
                        f"{htree_path}: malformed postorder stream"
                    )
                node.right = stack.pop()
                node.left = stack.pop()
                node.right.parent = node
                node.left.parent = node
            stack.append(node)
        if f.read(1):
            raise IntegrityError(f"{htree_path}: trailing bytes after tree")
    if len(stack) != 1:
        raise IntegrityError(f"{htree_path}: postorder stream left {len(stack)} roots")
    root = stack[0]

    expected_lrd = dataset_size * n * 4
    actual_lrd = os.path.getsize(lrd_path)
    if actual_lrd != expected_lrd:
        raise IntegrityError(
            f"{lrd_path}: size {actual_lrd}, expected {expected_lrd}"
        )
    expected_lsd = dataset_size * l
    actual_lsd = os.path.getsize(lsd_path)
    if actual_lsd != expected_lsd:
        raise IntegrityError(
            f"{lsd_path}: size {actual_lsd}, expected {expected_lsd}"
        )

    words = np.fromfile(lsd_path, dtype=np.uint8).reshape(dataset_size, l)
    raw = np.memmap(lrd_path, dtype=DTYPE, mode="r", shape=(dataset_size, n))
    return QueryableIndex(settings, root, SeriesStore(raw), words)
