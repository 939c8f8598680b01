"""The unbalanced binary index tree.

Every node carries an adaptive segmentation (right endpoints over [0, n))
and a synopsis: per-segment min/max envelopes of member means and sds.
A full leaf is split either horizontally (children keep the segmentation)
or vertically (children gain one endpoint inside the chosen segment), on
either the mean or the sd of one segment.

Split quality is ranked by the envelope-volume measure

    qos(N) = sum_i w_i * ((mu_max_i - mu_min_i)^2 + (sd_max_i - sd_min_i)^2)

and a candidate's gain is qos over all members minus the member-weighted
average qos of the two children it would produce, computed by actually
partitioning the members. Both sides are evaluated over the candidate's
result segmentation (for a vertical candidate, the refined one): z-normalized
series all have mean 0 and sd 1 over the whole series, so comparing against
the parent's own coarser segmentation would hide exactly the variance a
vertical split exposes and starve the tree of resolution.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .core import DTYPE
from .summarize import prefix_sums, stats_from_prefix

MEAN = "mean"
SD = "sd"


class IdAllocator:
    """Thread-safe monotonically increasing node ids."""

    def __init__(self, start: int = 0):
        self._next = start
        self._lock = threading.Lock()

    def take(self) -> int:
        with self._lock:
            nid = self._next
            self._next += 1
            return nid


@dataclass
class SplitPolicy:
    """How an internal node routes a series to a child.

    ``split_point`` is None for a horizontal split. The routing value is the
    mean (or sd) of the series over [route_start, route_end): a horizontal
    split routes on the whole segment, a vertical split on the chosen half.
    Strictly-less goes left.
    """

    segment_index: int
    attribute: str  # MEAN or SD
    split_point: int | None
    route_start: int
    route_end: int
    threshold: float
    gain: float = 0.0

    @property
    def is_vsplit(self) -> bool:
        return self.split_point is not None

    def route_value(self, cs, cs2) -> float:
        mean, sd = stats_from_prefix(
            cs, cs2, np.array([self.route_start]), np.array([self.route_end])
        )
        v = mean[0] if self.attribute == MEAN else sd[0]
        return float(v)

    def goes_left(self, cs, cs2) -> bool:
        return self.route_value(cs, cs2) < self.threshold

    def route_mask(self, members: np.ndarray) -> np.ndarray:
        """Boolean go-left mask for a (rows, n) member block."""
        cs, cs2 = prefix_sums(members)
        means, sds = stats_from_prefix(
            cs, cs2, np.array([self.route_start]), np.array([self.route_end])
        )
        vals = means[:, 0] if self.attribute == MEAN else sds[:, 0]
        return vals.astype(np.float64) < self.threshold


class Node:
    """A tree node; starts life as an empty leaf."""

    def __init__(self, node_id: int, endpoints, parent: "Node | None" = None):
        self.node_id = node_id
        self.endpoints = np.asarray(endpoints, dtype=np.int64)
        m = len(self.endpoints)
        self.mu_min = np.full(m, np.inf, dtype=DTYPE)
        self.mu_max = np.full(m, -np.inf, dtype=DTYPE)
        self.sd_min = np.full(m, np.inf, dtype=DTYPE)
        self.sd_max = np.full(m, -np.inf, dtype=DTYPE)
        self.rho = 0
        self.is_leaf = True
        self.parent = parent
        self.left: Node | None = None
        self.right: Node | None = None
        self.policy: SplitPolicy | None = None
        self.lock = threading.Lock()
        # leaf payload during construction (attached by the builder)
        self.sbuffer = None
        # leaf payload after index writing
        self.file_position: tuple[int, int] | None = None
        # index-writing flow control
        self.processed = False
        self.written = False
        self.staged_raw: np.ndarray | None = None
        self.staged_words: np.ndarray | None = None

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0], self.endpoints[:-1]])

    @property
    def widths(self) -> np.ndarray:
        return self.endpoints - self.starts

    @property
    def num_segments(self) -> int:
        return len(self.endpoints)

    def segment_bounds(self, i: int) -> tuple[int, int]:
        start = 0 if i == 0 else int(self.endpoints[i - 1])
        return start, int(self.endpoints[i])

    def widen(self, means: np.ndarray, sds: np.ndarray) -> None:
        """Widen the envelopes to include one series' segment stats."""
        np.minimum(self.mu_min, means, out=self.mu_min)
        np.maximum(self.mu_max, means, out=self.mu_max)
        np.minimum(self.sd_min, sds, out=self.sd_min)
        np.maximum(self.sd_max, sds, out=self.sd_max)

    def set_envelopes_from(self, means: np.ndarray, sds: np.ndarray) -> None:
        """Recompute envelopes from a (rows, m) stats block."""
        if means.shape[0] == 0:
            m = self.num_segments
            self.mu_min = np.full(m, np.inf, dtype=DTYPE)
            self.mu_max = np.full(m, -np.inf, dtype=DTYPE)
            self.sd_min = np.full(m, np.inf, dtype=DTYPE)
            self.sd_max = np.full(m, -np.inf, dtype=DTYPE)
            return
        self.mu_min = means.min(axis=0).astype(DTYPE)
        self.mu_max = means.max(axis=0).astype(DTYPE)
        self.sd_min = sds.min(axis=0).astype(DTYPE)
        self.sd_max = sds.max(axis=0).astype(DTYPE)

    def iter_leaves(self):
        """Leaves left to right (in-order over a binary tree)."""
        stack = [self]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                yield node
            else:
                stack.append(node.right)
                stack.append(node.left)

    def iter_nodes(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def __repr__(self):  # debugging aid only
        kind = "leaf" if self.is_leaf else "internal"
        return f"<Node {self.node_id} {kind} m={self.num_segments} rho={self.rho}>"


def route_to_leaf(start: Node, series=None, prefix=None) -> Node:
    """Follow split policies from ``start`` down to the unique leaf.

    Pass either the raw series or its precomputed prefix sums.
    """
    if prefix is None:
        cs, cs2 = prefix_sums(np.ascontiguousarray(series, dtype=DTYPE))
    else:
        cs, cs2 = prefix
    node = start
    while not node.is_leaf:
        node = node.left if node.policy.goes_left(cs, cs2) else node.right
    return node


def update_leaf_synopsis(leaf: Node, series=None, prefix=None) -> None:
    """Widen a leaf's envelopes with one series and count it.

    Caller must hold the leaf's lock when used concurrently.
    """
    if prefix is None:
        cs, cs2 = prefix_sums(np.ascontiguousarray(series, dtype=DTYPE))
    else:
        cs, cs2 = prefix
    means, sds = stats_from_prefix(cs, cs2, leaf.starts, leaf.endpoints)
    leaf.widen(means, sds)
    leaf.rho += 1


def _qos(means: np.ndarray, sds: np.ndarray, widths: np.ndarray) -> float:
    """Envelope-volume quality measure over a member stats block."""
    if means.shape[0] == 0:
        return 0.0
    dm = (means.max(axis=0) - means.min(axis=0)).astype(np.float64)
    ds = (sds.max(axis=0) - sds.min(axis=0)).astype(np.float64)
    return float((widths.astype(np.float64) * (dm * dm + ds * ds)).sum())


def _candidate_layouts(node: Node):
    """Candidate routing intervals in deterministic tie-break order.

    Per segment: the two horizontal candidates (mean then sd), then for
    segments of width >= 2 the four vertical candidates (mean-left,
    mean-right, sd-left, sd-right), ordered attribute-major so ties resolve
    lowest segment, mean before sd, horizontal before vertical.
    """
    out = []
    for i in range(node.num_segments):
        a, b = node.segment_bounds(i)
        mid = (a + b) // 2
        halves = [(a, mid), (mid, b)] if b - a >= 2 else []
        for attr in (MEAN, SD):
            out.append((i, attr, None, a, b))
            for lo, hi in halves:
                out.append((i, attr, mid, lo, hi))
    return out


def get_best_split_policy(node: Node, members: np.ndarray) -> SplitPolicy:
    """Pick the gain-maximizing split for a full leaf.

    Deterministic given the members; if every candidate has zero gain the
    fallback is a horizontal mean split of segment 0.
    """
    rho, _ = members.shape
    cs, cs2 = prefix_sums(members)
    starts, ends = node.starts, node.endpoints
    widths = node.widths

    # stats caches keyed by (start, end), covering base segments and halves
    cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def seg_stats(a: int, b: int):
        key = (a, b)
        if key not in cache:
            mean, sd = stats_from_prefix(cs, cs2, np.array([a]), np.array([b]))
            cache[key] = (mean[:, 0], sd[:, 0])
        return cache[key]

    base_means = np.empty((rho, node.num_segments), dtype=DTYPE)
    base_sds = np.empty((rho, node.num_segments), dtype=DTYPE)
    for i in range(node.num_segments):
        a, b = node.segment_bounds(i)
        m, s = seg_stats(a, b)
        base_means[:, i] = m
        base_sds[:, i] = s

    # member stats over the candidate's result segmentation, keyed by the
    # vertically refined segment (None = unchanged)
    layout_cache: dict = {
        None: (base_means, base_sds, widths.astype(np.float64))
    }

    def layout_stats(seg_idx: int, split_point: int | None):
        key = None if split_point is None else (seg_idx, split_point)
        if key not in layout_cache:
            a, b = node.segment_bounds(seg_idx)
            lm, ls = seg_stats(a, split_point)
            rm, rs = seg_stats(split_point, b)
            means = np.concatenate(
                [
                    base_means[:, :seg_idx],
                    lm[:, None],
                    rm[:, None],
                    base_means[:, seg_idx + 1 :],
                ],
                axis=1,
            )
            sds = np.concatenate(
                [
                    base_sds[:, :seg_idx],
                    ls[:, None],
                    rs[:, None],
                    base_sds[:, seg_idx + 1 :],
                ],
                axis=1,
            )
            w = np.concatenate(
                [
                    widths[:seg_idx],
                    [split_point - a, b - split_point],
                    widths[seg_idx + 1 :],
                ]
            ).astype(np.float64)
            layout_cache[key] = (means, sds, w)
        return layout_cache[key]

    best: SplitPolicy | None = None
    best_gain = 0.0
    for seg_idx, attr, split_point, lo, hi in _candidate_layouts(node):
        mean_col, sd_col = seg_stats(lo, hi)
        vals = mean_col if attr == MEAN else sd_col
        vmin = float(vals.min())
        vmax = float(vals.max())
        if vmin == vmax:
            continue  # cannot separate anything on this attribute
        threshold = (vmin + vmax) / 2.0
        mask = vals.astype(np.float64) < threshold
        nl = int(mask.sum())
        nr = rho - nl
        means, sds, w = layout_stats(seg_idx, split_point)
        qos_all = _qos(means, sds, w)
        qos_l = _qos(means[mask], sds[mask], w)
        qos_r = _qos(means[~mask], sds[~mask], w)
        gain = qos_all - (nl * qos_l + nr * qos_r) / rho
        if gain > best_gain:
            best_gain = gain
            best = SplitPolicy(seg_idx, attr, split_point, lo, hi, threshold, gain)

    if best is None:
        a, b = node.segment_bounds(0)
        mu = float(node.mu_min[0]) if np.isfinite(node.mu_min[0]) else 0.0
        mx = float(node.mu_max[0]) if np.isfinite(node.mu_max[0]) else 0.0
        best = SplitPolicy(0, MEAN, None, a, b, (mu + mx) / 2.0, 0.0)
    return best


def split_node(
    leaf: Node,
    policy: SplitPolicy,
    members: np.ndarray,
    ids: IdAllocator,
    init_child=None,
) -> tuple[Node, Node, np.ndarray]:
    """Split a full leaf into two children according to ``policy``.

    Children get fresh envelopes recomputed from their own members over
    their own segmentation; a vertical split inserts the split point as a
    new endpoint. ``init_child(child, member_mask)`` runs for both children
    before the parent is marked internal, so concurrent routing never
    reaches an uninitialized child. A child receiving every member is a
    permitted (skewed) outcome. Caller holds the leaf's lock.
    """
    if policy.is_vsplit:
        endpoints = np.sort(
            np.concatenate([leaf.endpoints, [policy.split_point]])
        )
    else:
        endpoints = leaf.endpoints.copy()

    left = Node(ids.take(), endpoints, parent=leaf)
    right = Node(ids.take(), endpoints.copy(), parent=leaf)

    go_left = policy.route_mask(members)
    cs, cs2 = prefix_sums(members)
    starts = np.concatenate([[0], endpoints[:-1]])
    means, sds = stats_from_prefix(cs, cs2, starts, endpoints)
    left.set_envelopes_from(means[go_left], sds[go_left])
    right.set_envelopes_from(means[~go_left], sds[~go_left])
    left.rho = int(go_left.sum())
    right.rho = len(members) - left.rho

    leaf.left = left
    leaf.right = right
    leaf.policy = policy
    if init_child is not None:
        init_child(left, go_left)
        init_child(right, ~go_left)
    leaf.is_leaf = False
    return left, right, go_left
