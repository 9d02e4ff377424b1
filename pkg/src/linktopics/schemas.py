"""Request/response models for the HTTP service.

Every stage endpoint takes the file paths it reads and writes (as seen by
the server process) plus the subset of pipeline parameters it uses;
unspecified parameters fall back to the defaults in ``PipelineConfig``.
"""

from __future__ import annotations

from pydantic import BaseModel

from .config import PipelineConfig


class StageResponse(BaseModel):
    ok: bool = True
    stage: str
    summary: dict
    outputs: dict[str, str]


class ConfigOverrides(BaseModel):
    """Partial config; only set fields override the defaults."""

    link_threshold: float | None = None
    max_candidates: int | None = None
    ngram_max: int | None = None
    min_df: int | None = None
    min_doc_links: int | None = None
    rank: int | None = None
    als_lambda: float | None = None
    als_iterations: int | None = None
    als_seed: int | None = None
    n_topics: int | None = None
    alpha: float | str | None = None
    beta: float | None = None
    lda_iterations: int | None = None
    infer_iterations: int | None = None
    burn_in: int | None = None
    lda_seed: int | None = None
    mask_fraction: float | None = None
    intruder_members: int | None = None
    deterministic: bool | None = None
    threads: int | None = None

    def apply(self, base: PipelineConfig) -> PipelineConfig:
        overrides = {k: v for k, v in self.model_dump().items()
                     if v is not None}
        return base.model_copy(update=overrides)


class IngestRequest(BaseModel):
    source: str
    redirects: str
    sitelinks: str
    out: str
    lang: str | None = None
    config: ConfigOverrides = ConfigOverrides()


class BuildAnchorsRequest(BaseModel):
    corpus: str
    lang: str
    out: str
    config: ConfigOverrides = ConfigOverrides()


class BuildAdjacencyRequest(BaseModel):
    corpus: str
    lang: str
    out: str
    config: ConfigOverrides = ConfigOverrides()


class FactorizeRequest(BaseModel):
    adjacency: str
    out: str
    config: ConfigOverrides = ConfigOverrides()


class DensifyRequest(BaseModel):
    corpus: str
    dictionary: str
    factor_model: str
    out: str
    lang: str
    config: ConfigOverrides = ConfigOverrides()


class TrainLdaRequest(BaseModel):
    bags: str
    out: str
    config: ConfigOverrides = ConfigOverrides()


class InferRequest(BaseModel):
    topic_model: str
    bags: str
    out: str
    config: ConfigOverrides = ConfigOverrides()


class EvalDisambigRequest(BaseModel):
    adjacency: str
    dictionary: str
    out: str
    config: ConfigOverrides = ConfigOverrides()


class IntrudersRequest(BaseModel):
    topic_model: str
    out_tasks: str
    out_answers: str
    n_topics: int
    config: ConfigOverrides = ConfigOverrides()


class LangBiasRequest(BaseModel):
    vectors: str
    out: str
    sample_per_lang: int
    config: ConfigOverrides = ConfigOverrides()


class DistancesRequest(BaseModel):
    vectors: str
    out: str
    mode: str = "all"
    config: ConfigOverrides = ConfigOverrides()


class ClassifyRequest(BaseModel):
    train_vectors: str
    train_labels: str
    test_vectors: str
    test_labels: str
    out: str
    config: ConfigOverrides = ConfigOverrides()
