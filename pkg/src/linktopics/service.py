"""FastAPI service wrapping the pipeline stages.

Each subcommand of the CLI maps to one endpoint; the CLI is a thin client.
Stages run synchronously in the request (desk-scale corpora); artifacts live
on the server's filesystem at the paths given in the request.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, HTTPException

from . import __version__
from .anchors import DictionaryError
from .config import PipelineConfig, audit_defaults, default_config
from .corpus import CorpusError
from .densify import DensifyError
from .evaluation import EvalError
from .pipeline import MissingArtifactError, PipelineError, \
    stage_build_adjacency, stage_build_anchors, stage_classify, \
    stage_densify, stage_distances, stage_eval_disambig, stage_factorize, \
    stage_infer, stage_ingest, stage_intruders, stage_lang_bias, \
    stage_train_lda
from .schemas import (BuildAdjacencyRequest, BuildAnchorsRequest,
                      ClassifyRequest, DensifyRequest, DistancesRequest,
                      EvalDisambigRequest, FactorizeRequest, InferRequest,
                      IngestRequest, IntrudersRequest, LangBiasRequest,
                      StageResponse, TrainLdaRequest)
from .topics import TopicModelError

logger = logging.getLogger(__name__)

USER_ERRORS = (PipelineError, CorpusError, DictionaryError, DensifyError,
               TopicModelError, EvalError, ValueError)


def _run(stage: str, fn, *args, **kwargs) -> StageResponse:
    try:
        result = fn(*args, **kwargs)
    except MissingArtifactError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    except USER_ERRORS as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    outputs = result.pop("outputs", {})
    return StageResponse(stage=stage, summary=result, outputs=outputs)


def create_app() -> FastAPI:
    app = FastAPI(title="linktopics", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"ok": True, "version": __version__}

    @app.get("/defaults")
    def defaults() -> dict:
        config = default_config()
        drift = audit_defaults(config)
        if drift:  # self-test: shipped defaults must match the defaults table
            raise HTTPException(status_code=500,
                                detail=f"default drift in fields: {drift}")
        return config.model_dump()

    @app.post("/ingest", response_model=StageResponse)
    def ingest(req: IngestRequest) -> StageResponse:
        config = req.config.apply(default_config())
        return _run("ingest", stage_ingest, req.source, req.redirects,
                    req.sitelinks, req.out, lang=req.lang, config=config)

    @app.post("/build-anchors", response_model=StageResponse)
    def build_anchors(req: BuildAnchorsRequest) -> StageResponse:
        config = req.config.apply(default_config())
        return _run("build-anchors", stage_build_anchors, req.corpus,
                    req.lang, req.out, config=config)

    @app.post("/build-adjacency", response_model=StageResponse)
    def build_adjacency(req: BuildAdjacencyRequest) -> StageResponse:
        config = req.config.apply(default_config())
        return _run("build-adjacency", stage_build_adjacency, req.corpus,
                    req.lang, req.out, config=config)

    @app.post("/factorize", response_model=StageResponse)
    def factorize(req: FactorizeRequest) -> StageResponse:
        config = req.config.apply(default_config())
        return _run("factorize", stage_factorize, req.adjacency, req.out,
                    config=config)

    @app.post("/densify", response_model=StageResponse)
    def densify(req: DensifyRequest) -> StageResponse:
        config = req.config.apply(default_config())
        return _run("densify", stage_densify, req.corpus, req.dictionary,
                    req.factor_model, req.out, req.lang, config=config)

    @app.post("/train-lda", response_model=StageResponse)
    def train_lda(req: TrainLdaRequest) -> StageResponse:
        config = req.config.apply(default_config())
        return _run("train-lda", stage_train_lda, req.bags, req.out,
                    config=config)

    @app.post("/infer", response_model=StageResponse)
    def infer(req: InferRequest) -> StageResponse:
        config = req.config.apply(default_config())
        return _run("infer", stage_infer, req.topic_model, req.bags,
                    req.out, config=config)

    @app.post("/eval-disambig", response_model=StageResponse)
    def eval_disambig(req: EvalDisambigRequest) -> StageResponse:
        config = req.config.apply(default_config())
        return _run("eval-disambig", stage_eval_disambig, req.adjacency,
                    req.dictionary, req.out, config=config)

    @app.post("/intruders", response_model=StageResponse)
    def intruders(req: IntrudersRequest) -> StageResponse:
        config = req.config.apply(default_config())
        return _run("intruders", stage_intruders, req.topic_model,
                    req.out_tasks, req.out_answers, req.n_topics,
                    config=config)

    @app.post("/lang-bias", response_model=StageResponse)
    def lang_bias(req: LangBiasRequest) -> StageResponse:
        config = req.config.apply(default_config())
        return _run("lang-bias", stage_lang_bias, req.vectors, req.out,
                    req.sample_per_lang, config=config)

    @app.post("/distances", response_model=StageResponse)
    def distances(req: DistancesRequest) -> StageResponse:
        config = req.config.apply(default_config())
        return _run("distances", stage_distances, req.vectors, req.out,
                    mode=req.mode, config=config)

    @app.post("/classify", response_model=StageResponse)
    def classify(req: ClassifyRequest) -> StageResponse:
        config = req.config.apply(default_config())
        return _run("classify", stage_classify, req.train_vectors,
                    req.train_labels, req.test_vectors, req.test_labels,
                    req.out, config=config)

    return app


app = create_app()
