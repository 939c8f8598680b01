"""Request/response models for the HTTP service.

All file paths are interpreted on the machine running the service; the CLI
talks to an in-process app by default, so paths behave like local paths.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, model_validator


class GenerateRequest(BaseModel):
    count: int = Field(ge=1)
    length: int = Field(ge=1)
    seed: int = 0
    out: str


class GenerateResponse(BaseModel):
    path: str
    count: int
    length: int
    bytes_written: int


class WorkloadRequest(BaseModel):
    dataset: str
    length: int = Field(ge=1)
    kind: Literal["noise", "ood"]
    sigma2: float | None = None
    count: int = Field(default=100, ge=1)
    seed: int = 0
    out: str
    reduced_dataset: str | None = None

    @model_validator(mode="after")
    def _check_kind_arguments(self):
        if self.kind == "noise" and self.sigma2 is None:
            raise ValueError("noise workloads need sigma2")
        if self.kind == "ood" and not self.reduced_dataset:
            raise ValueError("ood workloads need reduced_dataset")
        return self


class WorkloadResponse(BaseModel):
    queries_path: str
    count: int
    reduced_dataset_path: str | None = None
    reduced_count: int | None = None


class BuildIndexRequest(BaseModel):
    dataset: str
    length: int = Field(ge=1)
    leaf_size: int = Field(default=1000, ge=1)
    buffer_mb: int = Field(default=256, ge=1)
    dbsize: int | None = Field(default=None, ge=1)
    threads: int = Field(default=4, ge=2)
    flush_threshold: int | None = Field(default=None, ge=1)
    out: str


class IndexInfo(BaseModel):
    index_dir: str
    series: int
    length: int
    leaf_threshold: int
    leaves: int
    nodes: int


class BuildIndexResponse(IndexInfo):
    build_seconds: float
    write_seconds: float


class LoadIndexRequest(BaseModel):
    index: str


class QueryParams(BaseModel):
    index: str
    k: int = Field(default=1, ge=1)
    lmax: int = Field(default=80, ge=1)
    eapca_th: float = Field(default=0.25, ge=0.0, le=1.0)
    sax_th: float = Field(default=0.50, ge=0.0, le=1.0)
    threads: int = Field(default=1, ge=1)


class QueryRequest(QueryParams):
    queries: str | None = None
    series: list[float] | None = None

    @model_validator(mode="after")
    def _one_input(self):
        if (self.queries is None) == (self.series is None):
            raise ValueError("provide exactly one of queries (a path) or series")
        return self


class QueryMetricsModel(BaseModel):
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


class QueryAnswer(BaseModel):
    query_id: int
    distances: list[float]
    positions: list[int | None]
    metrics: QueryMetricsModel


class QueryResponse(BaseModel):
    answers: list[QueryAnswer]


class ScanRequest(BaseModel):
    dataset: str
    length: int = Field(ge=1)
    queries: str
    k: int = Field(default=1, ge=1)
    threads: int = Field(default=1, ge=1)


class ScanAnswer(BaseModel):
    query_id: int
    distances: list[float]
    positions: list[int | None]


class ScanResponse(BaseModel):
    answers: list[ScanAnswer]
    wall_time_s: float


class BenchRequest(QueryParams):
    queries: str
    include_answers: bool = False


class BenchResponse(BaseModel):
    per_query: list[dict]
    aggregate: dict


class ErrorBody(BaseModel):
    error: str
    kind: Literal["usage", "io", "integrity"]
