"""FastAPI service wrapping the engine.

The service keeps loaded indexes in a registry keyed by directory, so a
long-running instance pays the load cost once and answers any number of
queries from memory. Run it with::

    uvicorn seriesearch.service:app

Domain errors map to JSON bodies carrying a ``kind`` the CLI turns into
exit codes: usage -> 400, io -> 404, integrity -> 409.
"""

from __future__ import annotations

import os
import threading
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__
from .bench import aggregate, run_workload
from .build import build_index
from .core import DTYPE, series_count
from .errors import SeriesearchError
from .generate import (
    generate_noise_workload,
    generate_ood_workload,
    generate_random_walk,
    load_queries,
)
from .persist import IndexSettings, load_index, write_index
from .query import QueryConfig, QueryEngine
from .pscan import pscan
from .schemas import (
    BenchRequest,
    BenchResponse,
    BuildIndexRequest,
    BuildIndexResponse,
    ErrorBody,
    GenerateRequest,
    GenerateResponse,
    IndexInfo,
    LoadIndexRequest,
    QueryAnswer,
    QueryMetricsModel,
    QueryRequest,
    QueryResponse,
    ScanAnswer,
    ScanRequest,
    ScanResponse,
    WorkloadRequest,
    WorkloadResponse,
)

_STATUS = {"usage": 400, "io": 404, "integrity": 409}

app = FastAPI(title="seriesearch", version=__version__)

_registry: dict[str, QueryEngine] = {}
_registry_lock = threading.Lock()


def _engine_for(index_dir: str) -> QueryEngine:
    key = os.path.abspath(index_dir)
    with _registry_lock:
        engine = _registry.get(key)
        if engine is None:
            engine = QueryEngine(load_index(key))
            _registry[key] = engine
        return engine


def _register(index_dir: str, engine: QueryEngine) -> None:
    with _registry_lock:
        _registry[os.path.abspath(index_dir)] = engine


def _info(index_dir: str, engine: QueryEngine) -> IndexInfo:
    index = engine.index
    return IndexInfo(
        index_dir=os.path.abspath(index_dir),
        series=index.total_series,
        length=index.settings.series_length,
        leaf_threshold=index.settings.leaf_threshold,
        leaves=index.total_leaves,
        nodes=sum(1 for _ in index.root.iter_nodes()),
    )


@app.exception_handler(SeriesearchError)
async def _domain_error(request: Request, exc: SeriesearchError):
    body = ErrorBody(error=str(exc), kind=exc.kind)
    return JSONResponse(status_code=_STATUS[exc.kind],
                        content=body.model_dump())


@app.get("/healthz")
def healthz():
    return {"status": "ok", "version": __version__}


@app.post("/datasets/generate", response_model=GenerateResponse)
def datasets_generate(req: GenerateRequest):
    written = generate_random_walk(req.count, req.length, req.seed, req.out)
    return GenerateResponse(
        path=req.out, count=req.count, length=req.length, bytes_written=written
    )


@app.post("/workloads/generate", response_model=WorkloadResponse)
def workloads_generate(req: WorkloadRequest):
    if req.kind == "noise":
        generate_noise_workload(
            req.dataset, req.length, req.count, req.sigma2, req.seed, req.out
        )
        return WorkloadResponse(queries_path=req.out, count=req.count)
    held, kept = generate_ood_workload(
        req.dataset, req.length, req.count, req.seed, req.out, req.reduced_dataset
    )
    return WorkloadResponse(
        queries_path=req.out,
        count=held,
        reduced_dataset_path=req.reduced_dataset,
        reduced_count=kept,
    )


@app.post("/indexes/build", response_model=BuildIndexResponse)
def indexes_build(req: BuildIndexRequest):
    dataset_size = series_count(req.dataset, req.length)
    settings = IndexSettings(
        series_length=req.length,
        dataset_size=dataset_size,
        leaf_threshold=req.leaf_size,
    )
    t0 = time.perf_counter()
    index = build_index(
        req.dataset,
        settings,
        num_threads=req.threads,
        buffer_bytes=req.buffer_mb * (1 << 20),
        dbsize=req.dbsize,
        flush_threshold=req.flush_threshold,
    )
    t1 = time.perf_counter()
    qidx = write_index(index, req.out, num_threads=max(1, req.threads - 1))
    t2 = time.perf_counter()
    engine = QueryEngine(qidx)
    _register(req.out, engine)
    info = _info(req.out, engine)
    return BuildIndexResponse(
        **info.model_dump(), build_seconds=t1 - t0, write_seconds=t2 - t1
    )


@app.post("/indexes/load", response_model=IndexInfo)
def indexes_load(req: LoadIndexRequest):
    key = os.path.abspath(req.index)
    with _registry_lock:
        _registry.pop(key, None)
    engine = _engine_for(key)
    return _info(key, engine)


@app.get("/indexes")
def indexes_list():
    with _registry_lock:
        return {"loaded": sorted(_registry)}


def _query_config(req) -> QueryConfig:
    return QueryConfig(
        k=req.k,
        lmax=req.lmax,
        eapca_th=req.eapca_th,
        sax_th=req.sax_th,
        num_threads=req.threads,
    )


@app.post("/query", response_model=QueryResponse)
def query(req: QueryRequest):
    engine = _engine_for(req.index)
    n = engine.index.settings.series_length
    if req.series is not None:
        queries = np.asarray(req.series, dtype=DTYPE)[None, :]
    else:
        queries = load_queries(req.queries, n)
    records = run_workload(engine, queries, _query_config(req))
    answers = [
        QueryAnswer(
            query_id=r.query_id,
            distances=r.distances,
            positions=r.positions,
            metrics=QueryMetricsModel(
                query_id=r.query_id,
                k=r.k,
                phase_reached=r.phase_reached,
                eapca_pr=r.eapca_pr,
                sax_pr=r.sax_pr,
                series_read=r.series_read,
                bytes_read=r.bytes_read,
                fraction_data_accessed=r.fraction_data_accessed,
                wall_time_s=r.wall_time_s,
                input_time_s=r.input_time_s,
                cpu_time_s=r.cpu_time_s,
            ),
        )
        for r in records
    ]
    return QueryResponse(answers=answers)


@app.post("/scan", response_model=ScanResponse)
def scan(req: ScanRequest):
    queries = load_queries(req.queries, req.length)
    t0 = time.perf_counter()
    result_sets = pscan(req.dataset, req.length, queries, req.k, req.threads)
    wall = time.perf_counter() - t0
    answers = []
    for qid, rs in enumerate(result_sets):
        entries = rs.entries()
        answers.append(
            ScanAnswer(
                query_id=qid,
                distances=[d for d, _ in entries],
                positions=[p for _, p in entries],
            )
        )
    return ScanResponse(answers=answers, wall_time_s=wall)


@app.post("/bench", response_model=BenchResponse)
def bench(req: BenchRequest):
    engine = _engine_for(req.index)
    n = engine.index.settings.series_length
    queries = load_queries(req.queries, n)
    records = run_workload(
        engine, queries, _query_config(req), include_answers=req.include_answers
    )
    dicts = [r.to_dict() for r in records]
    if not req.include_answers:
        for d in dicts:
            d.pop("distances")
            d.pop("positions")
    return BenchResponse(per_query=dicts, aggregate=aggregate(records))
