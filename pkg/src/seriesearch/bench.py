"""Workload measurement.

Runs queries one at a time, recording wall/input/CPU time and the fraction
of raw data touched per query, then aggregates. With at least 11 queries
the aggregate discards the 5 best and 5 worst by total time and averages
the rest; smaller workloads average everything and carry a warning.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .query import QueryConfig, QueryEngine

DISCARD_EACH_SIDE = 5


@dataclass
class QueryRecord:
    query_id: int
    k: int
    phase_reached: str
    eapca_pr: float
    sax_pr: float
    series_read: int
    bytes_read: int
    fraction_data_accessed: float
    wall_time_s: float
    input_time_s: float
    cpu_time_s: float
    distances: list[float]
    positions: list[int | None]

    def to_dict(self) -> dict:
        return asdict(self)


def run_workload(engine: QueryEngine, queries: np.ndarray, cfg: QueryConfig,
                 include_answers: bool = True) -> list[QueryRecord]:
    records = []
    for qid, q in enumerate(np.atleast_2d(queries)):
        results, stats = engine.exact_knn(q, cfg)
        entries = results.entries() if include_answers else []
        records.append(
            QueryRecord(
                query_id=qid,
                k=cfg.k,
                phase_reached=stats.phase_reached,
                eapca_pr=stats.eapca_pr,
                sax_pr=stats.sax_pr,
                series_read=stats.series_read,
                bytes_read=stats.bytes_read,
                fraction_data_accessed=stats.fraction_data_accessed,
                wall_time_s=stats.wall_seconds,
                input_time_s=stats.input_seconds,
                cpu_time_s=max(0.0, stats.wall_seconds - stats.input_seconds),
                distances=[d for d, _ in entries],
                positions=[p for _, p in entries],
            )
        )
    return records


def aggregate(records: list[QueryRecord]) -> dict:
    """Middle-of-the-pack averages; see module docstring for the discard rule."""
    count = len(records)
    if count == 0:
        return {"count": 0, "used": 0, "warning": "empty workload"}
    order = sorted(records, key=lambda r: r.wall_time_s)
    if count >= 2 * DISCARD_EACH_SIDE + 1:
        used = order[DISCARD_EACH_SIDE : count - DISCARD_EACH_SIDE]
        warning = None
    else:
        used = order
        warning = (
            f"workload of {count} queries is too small for the "
            f"discard-{DISCARD_EACH_SIDE}-best/worst rule; averaging all"
        )
    out = {
        "count": count,
        "used": len(used),
        "discarded": count - len(used),
        "mean_wall_time_s": float(np.mean([r.wall_time_s for r in used])),
        "mean_input_time_s": float(np.mean([r.input_time_s for r in used])),
        "mean_cpu_time_s": float(np.mean([r.cpu_time_s for r in used])),
        "mean_fraction_data_accessed": float(
            np.mean([r.fraction_data_accessed for r in used])
        ),
        "mean_bytes_read": float(np.mean([r.bytes_read for r in used])),
    }
    if warning:
        out["warning"] = warning
    return out
