"""Single configuration surface for the pipeline.

Defaults follow the standard constants used throughout: link threshold
6.5%, 1-4-grams, at most 10 candidates per anchor, factorization rank 150,
5% evaluation masking, at least 10 links per document and a vocabulary
floor of 500 documents per concept.  Precedence when assembling a config:
command-line flag > config file > default.
"""

from __future__ import annotations

from pydantic import BaseModel, Field, model_validator


class PipelineConfig(BaseModel):
    languages: list[str] = Field(default_factory=list)

    corpus_path: str | None = None
    redirects_path: str | None = None
    sitelinks_path: str | None = None
    workdir: str = "."

    link_threshold: float = 0.065
    max_candidates: int = 10
    ngram_max: int = 4
    min_df: int = 500
    min_doc_links: int = 10

    rank: int = 150
    als_lambda: float = 0.05
    als_iterations: int = 10
    als_seed: int = 0

    n_topics: int = 40
    alpha: float | str = "auto"  # "auto" means 50/K
    beta: float = 0.01
    lda_iterations: int = 200
    infer_iterations: int = 100
    burn_in: int = 50
    lda_seed: int = 0

    mask_fraction: float = 0.05
    intruder_members: int = 5
    intruder_presentation: int = 6

    deterministic: bool = True
    threads: int = 1

    @model_validator(mode="after")
    def _check(self) -> "PipelineConfig":
        if not (0.0 <= self.link_threshold <= 1.0):
            raise ValueError("link_threshold must be in [0, 1]")
        if self.max_candidates < 1 or self.ngram_max < 1:
            raise ValueError("max_candidates and ngram_max must be >= 1")
        if self.min_df < 1 or self.min_doc_links < 1:
            raise ValueError("min_df and min_doc_links must be >= 1")
        if not (0.0 < self.mask_fraction < 1.0):
            raise ValueError("mask_fraction must be in (0, 1)")
        if self.intruder_presentation != self.intruder_members + 1:
            raise ValueError("presentation length must be members + 1")
        if isinstance(self.alpha, str) and self.alpha != "auto":
            raise ValueError('alpha must be a number or "auto"')
        return self

    def resolved_alpha(self) -> float:
        if self.alpha == "auto":
            return 50.0 / self.n_topics
        return float(self.alpha)


def default_config() -> PipelineConfig:
    return PipelineConfig()


# cross-check table used by the self-test: field -> expected default
PINNED_DEFAULTS = {
    "link_threshold": 0.065,
    "max_candidates": 10,
    "ngram_max": 4,
    "min_df": 500,
    "min_doc_links": 10,
    "rank": 150,
    "mask_fraction": 0.05,
    "intruder_members": 5,
    "intruder_presentation": 6,
}


def audit_defaults(config: PipelineConfig) -> list[str]:
    """Names of fields whose value drifted from the expected defaults."""
    return [name for name, expected in PINNED_DEFAULTS.items()
            if getattr(config, name) != expected]
