"""FastAPI application exposing the mining/training pipeline.

Endpoints map 1:1 onto the CLI subcommands: /generate, /run, /mine, /eval,
/sweep, plus /health. Domain errors surface as JSON bodies with a stable
``code`` field so clients can map them onto exit codes.
"""

from __future__ import annotations

import hashlib
import os

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import RunConfig
from ..dataio import (
    read_dataset,
    write_dataset,
    write_pairs_csv,
    write_per_query_ap_csv,
)
from ..embeddings import EmbeddingMatrix, pairwise_similarity
from ..errors import MineTuneError
from ..metrics import cmc, mean_ap, mining_accuracy, rank_gallery
from ..mining import mine_all
from ..model import embed, load_checkpoint
from ..pipeline import _strip_nan, run_experiment
from ..synth import generate
from . import schemas


def _file_sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _load_compatible(checkpoint: str, dataset: str):
    params = load_checkpoint(checkpoint)
    ds = read_dataset(dataset)
    if params.d_in != ds.dim:
        raise ValueError(
            f"checkpoint expects {params.d_in}-d features, dataset has {ds.dim}-d"
        )
    return params, ds


def _dataset_info(path: str) -> schemas.DatasetFileInfo:
    ds = read_dataset(path)
    return schemas.DatasetFileInfo(
        path=path,
        items=ds.n,
        dim=ds.dim,
        n_cameras=ds.meta.n_cameras,
        has_true_identity=ds.meta.true_ids is not None,
        sha256=_file_sha256(path),
    )


def _sweep_config(config: RunConfig, param: str, value: float) -> RunConfig:
    cfg = config.model_copy(deep=True)
    if param == "lambda":
        cfg.train.lam = float(value)
        return cfg
    iv = int(value)
    if iv != value:
        raise HTTPException(status_code=422, detail=f"{param} needs an integer value, got {value}")
    if param == "k":
        cfg.train.k = iv
    elif param == "n_r":
        cfg.train.anchor_batch_size = iv
    elif param in ("n_p", "n_e"):
        if cfg.generator is None:
            raise HTTPException(
                status_code=422,
                detail=f"sweeping {param} needs a generator block, not dataset paths",
            )
        if param == "n_p":
            cfg.generator.virtual.n_identities = iv
        else:
            cfg.generator.virtual.samples_per_identity = iv
    else:
        raise HTTPException(status_code=422, detail=f"unknown sweep parameter {param!r}")
    return cfg


def create_app() -> FastAPI:
    app = FastAPI(title="minetune", version=__version__)

    @app.exception_handler(MineTuneError)
    async def _domain_error(request, exc: MineTuneError):
        return JSONResponse(status_code=400, content={"detail": str(exc), "code": exc.code})

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(request, exc: FileNotFoundError):
        return JSONResponse(status_code=404, content={"detail": str(exc), "code": "io"})

    @app.exception_handler(OSError)
    async def _os_error(request, exc: OSError):
        return JSONResponse(status_code=400, content={"detail": str(exc), "code": "io"})

    @app.exception_handler(ValueError)
    async def _value_error(request, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc), "code": "validation"})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/generate", response_model=schemas.GenerateResponse)
    def generate_datasets(req: schemas.GenerateRequest):
        os.makedirs(req.out_dir, exist_ok=True)
        vpath = os.path.join(req.out_dir, "virtual.bin")
        write_dataset(vpath, generate(req.virtual, "virtual"))
        resp = schemas.GenerateResponse(virtual=_dataset_info(vpath))
        if req.real is not None:
            rpath = os.path.join(req.out_dir, "real.bin")
            write_dataset(rpath, generate(req.real, "real"))
            resp.real = _dataset_info(rpath)
        return resp

    @app.post("/run", response_model=schemas.RunResponse)
    def run(req: schemas.RunRequest):
        report = run_experiment(req.config)
        out = req.config.output_dir
        return schemas.RunResponse(
            report=report,
            report_path=os.path.join(out, "report.json") if out else None,
            coarse_checkpoint=os.path.join(out, "coarse.ckpt") if out else None,
            final_checkpoint=(
                os.path.join(out, "final.ckpt")
                if out and req.config.ablation != "none"
                else None
            ),
        )

    @app.post("/mine", response_model=schemas.MineResponse)
    def mine(req: schemas.MineRequest):
        params, ds = _load_compatible(req.checkpoint, req.dataset)
        feats = embed(params, ds.vectors)
        s = pairwise_similarity(
            EmbeddingMatrix(vectors=feats, meta=ds.meta, normalized=True)
        )
        pairs = mine_all(s, ds.meta, req.k, req.exclude_same_camera)
        truth = None
        if ds.meta.true_ids is not None:
            truth = {int(v): int(t) for v, t in zip(ds.meta.item_ids, ds.meta.true_ids)}
        models = [
            schemas.MinedPairModel(
                anchor=p.anchor,
                positive=p.positive,
                f_score=p.f_score,
                same_identity=(
                    truth[p.anchor] == truth[p.positive] if truth is not None else None
                ),
            )
            for p in pairs
        ]
        out_path = None
        if req.out:
            write_pairs_csv(req.out, pairs, ds.meta)
            out_path = req.out
        acc = mining_accuracy(pairs, ds.meta) if truth is not None and pairs else None
        return schemas.MineResponse(
            pairs=models,
            count=len(pairs),
            anchors_skipped=ds.n - len(pairs),
            mining_accuracy=acc,
            out_path=out_path,
        )

    @app.post("/eval", response_model=schemas.EvalResponse)
    def evaluate(req: schemas.EvalRequest):
        params, ds = _load_compatible(req.checkpoint, req.dataset)
        if ds.meta.true_ids is None:
            return schemas.EvalResponse(
                note="dataset carries no ground-truth identities; retrieval metrics unavailable"
            )
        feats = embed(params, ds.vectors)
        ranked = rank_gallery(feats, ds.meta, feats, ds.meta)
        m_ap, evaluated, skipped = mean_ap(ranked)
        cmc_values = cmc(ranked, tuple(req.ranks))
        if req.per_query_csv:
            write_per_query_ap_csv(req.per_query_csv, ranked)
        body = _strip_nan(
            {
                "mAP": m_ap,
                "cmc": {str(k): v for k, v in cmc_values.items()},
                "queries_evaluated": evaluated,
                "queries_skipped": skipped,
            }
        )
        return schemas.EvalResponse(**body, per_query_csv=req.per_query_csv)

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        items = []
        for value in req.values:
            cfg = _sweep_config(req.config, req.param, value)
            if req.config.output_dir:
                tag = f"{req.param}_{value:g}"
                cfg.output_dir = os.path.join(req.config.output_dir, tag)
            report = run_experiment(cfg)
            items.append(
                schemas.SweepItem(
                    value=float(value),
                    mAP=report.get("mAP"),
                    rank1=report.get("cmc", {}).get("1"),
                    mining_accuracy=report.get("mining_accuracy"),
                    report_path=(
                        os.path.join(cfg.output_dir, "report.json")
                        if cfg.output_dir
                        else None
                    ),
                )
            )
        return schemas.SweepResponse(param=req.param, items=items)

    return app
