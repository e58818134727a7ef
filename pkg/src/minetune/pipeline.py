"""End-to-end training pipeline: supervised pretraining on pseudo-labeled
virtual data, per-epoch positive-pair mining on the unlabeled real data, and
multi-task fine-tuning (classification + triplet) on both.

Every fine-tune epoch re-embeds the real set with the current weights,
re-normalizes, rebuilds the similarity matrix and re-mines pairs, so the
mining graph is never stale; each epoch's history records a hash of the
similarity matrix it mined from. All randomness comes from per-epoch
substreams of the training seed, making runs bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import math
import os

import numpy as np

from .config import RunConfig, TrainConfig
from .dataio import read_dataset
from .embeddings import EmbeddingMatrix, pairwise_similarity
from .errors import NoPairsMinedError
from .metrics import evaluate_features, mining_accuracy
from .mining import mine_all, mine_random
from .model import (
    EmbedderParams,
    combined_loss,
    cross_entropy_loss,
    embed,
    init_params,
    save_checkpoint,
    sgd_step,
)
from .synth import generate

# substream tags for the independent RNG lanes of one run
_VIRTUAL_BATCHES, _ANCHOR_BATCHES, _RANDOM_MINING = 31, 41, 51

REPORT_SCHEMA = "minetune-report-v1"

_REPORT_NOTES = {
    "renormalization": (
        "real features are re-embedded and re-normalized at the start of every "
        "fine-tune epoch before the similarity matrix is rebuilt"
    ),
    "batch_interleaving": (
        "each fine-tune step combines one virtual classification batch with one "
        "mined-pair triplet batch (1:1)"
    ),
    "pseudo_classes": (
        "triplet pseudo classes are implicit per (anchor, positive) pair within "
        "a batch and are never reused across epochs"
    ),
}


def effective_lr(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: base lr, divided by 10 from lr_drop_epoch onwards."""
    return cfg.lr / 10.0 if epoch >= cfg.lr_drop_epoch else cfg.lr


def _epoch_rng(seed: int, lane: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, lane, epoch]))


class _VirtualStream:
    """Endless deterministic stream of (features, labels) batches."""

    def __init__(self, x, labels, rng, batch_size):
        self.x = x
        self.labels = labels
        self.rng = rng
        self.batch_size = min(batch_size, len(labels))
        self.perm = rng.permutation(len(labels))
        self.pos = 0

    def next_batch(self):
        if self.pos + self.batch_size > len(self.perm):
            self.perm = self.rng.permutation(len(self.perm))
            self.pos = 0
        idx = self.perm[self.pos : self.pos + self.batch_size]
        self.pos += self.batch_size
        return self.x[idx], self.labels[idx]


def pretrain(virtual: EmbeddingMatrix, cfg: TrainConfig) -> EmbedderParams:
    """Train the embedder + classifier on pseudo-labeled data only.

    With pretrain_epochs == 0 this returns the (seeded) initialization
    untouched.
    """
    labels = virtual.meta.pseudo_labels
    if labels is None:
        raise ValueError("pretraining needs a dataset with pseudo labels")
    n_classes = int(labels.max()) + 1
    params = init_params(
        virtual.dim, cfg.embed_dim, n_classes, cfg.hidden_dim, seed=cfg.seed
    )
    for epoch in range(cfg.pretrain_epochs):
        lr = effective_lr(cfg, epoch)
        stream = _VirtualStream(
            virtual.vectors, labels, _epoch_rng(cfg.seed, _VIRTUAL_BATCHES, epoch),
            cfg.virtual_batch_size,
        )
        for _ in range(math.ceil(virtual.n / stream.batch_size)):
            x, y = stream.next_batch()
            _, grads = cross_entropy_loss(params, x, y)
            params = sgd_step(params, grads, lr)
    return params


def finetune(
    params: EmbedderParams,
    virtual: EmbeddingMatrix,
    real: EmbeddingMatrix,
    cfg: TrainConfig,
    ablation: str = "cf",
):
    """Iterate mining and multi-task optimization for the fine-tune epochs.

    Returns (params, history) with one record per epoch. Raises
    NoPairsMinedError as soon as an epoch mines nothing.
    """
    if ablation not in ("cf", "random"):
        raise ValueError(f"finetune ablation must be 'cf' or 'random', got {ablation!r}")
    labels = virtual.meta.pseudo_labels
    if labels is None:
        raise ValueError("fine-tuning needs pseudo labels on the virtual data")
    has_truth = real.meta.true_ids is not None
    pos_of = {int(v): i for i, v in enumerate(real.meta.item_ids)}

    history = []
    for epoch in range(cfg.pretrain_epochs, cfg.total_epochs):
        lr = effective_lr(cfg, epoch)
        feats = embed(params, real.vectors)
        emb = EmbeddingMatrix(vectors=feats, meta=real.meta, normalized=True)
        s = pairwise_similarity(emb)
        s_hash = hashlib.sha256(s.tobytes()).hexdigest()[:16]

        if ablation == "cf":
            pairs = mine_all(s, real.meta, cfg.k, cfg.exclude_same_camera)
        else:
            pairs = mine_random(
                s, real.meta, cfg.k, cfg.exclude_same_camera,
                _epoch_rng(cfg.seed, _RANDOM_MINING, epoch),
            )
        if not pairs:
            raise NoPairsMinedError(
                f"epoch {epoch}: no pairs mined (k={cfg.k}, "
                f"cross_camera={cfg.exclude_same_camera})"
            )
        acc = mining_accuracy(pairs, real.meta) if has_truth else None

        anchor_rows = np.array([pos_of[p.anchor] for p in pairs], dtype=np.int64)
        positive_rows = np.array([pos_of[p.positive] for p in pairs], dtype=np.int64)
        order = _epoch_rng(cfg.seed, _ANCHOR_BATCHES, epoch).permutation(len(pairs))
        stream = _VirtualStream(
            virtual.vectors, labels, _epoch_rng(cfg.seed, _VIRTUAL_BATCHES, epoch),
            cfg.virtual_batch_size,
        )

        cls_losses, tri_losses, totals = [], [], []
        collisions = 0
        n_triplets = 0
        for start in range(0, len(order), cfg.anchor_batch_size):
            chunk = order[start : start + cfg.anchor_batch_size]
            if chunk.size < 2:
                continue  # a lone pair cannot form a triplet
            a_rows = anchor_rows[chunk]
            p_rows = positive_rows[chunk]
            vx, vy = stream.next_batch()
            loss, grads, aux = combined_loss(
                params,
                vx,
                vy,
                real.vectors[a_rows],
                real.vectors[p_rows],
                cfg.margin,
                cfg.lam,
                cfg.negative_pool,
            )
            params = sgd_step(params, grads, lr)
            cls_losses.append(aux["cls_loss"])
            tri_losses.append(aux["tri_loss"])
            totals.append(loss)
            if has_truth:
                pool_truth = np.concatenate(
                    [real.meta.true_ids[a_rows], real.meta.true_ids[p_rows]]
                )
                z = aux["triplet"]["negative_indices"]
                collisions += int(
                    np.sum(pool_truth[z] == real.meta.true_ids[a_rows])
                )
                n_triplets += chunk.size

        record = {
            "epoch": epoch,
            "lr": lr,
            "n_pairs": len(pairs),
            "anchors_skipped": real.n - len(pairs),
            "mining_accuracy": acc,
            "cls_loss": float(np.mean(cls_losses)) if cls_losses else None,
            "tri_loss": float(np.mean(tri_losses)) if tri_losses else None,
            "loss": float(np.mean(totals)) if totals else None,
            "negative_collision_rate": (
                collisions / n_triplets if has_truth and n_triplets else None
            ),
            "s_hash": s_hash,
        }
        if cfg.eval_every and (epoch - cfg.pretrain_epochs + 1) % cfg.eval_every == 0:
            record["metrics"] = evaluate_features(embed(params, real.vectors), real.meta)
        history.append(record)
    return params, history


def _metrics_block(metrics: dict) -> dict:
    return {
        "mAP": metrics["mAP"],
        "cmc": {str(k): v for k, v in metrics["cmc"].items()},
        "queries_evaluated": metrics["queries_evaluated"],
        "queries_skipped": metrics["queries_skipped"],
    }


def _strip_nan(obj):
    """NaN/inf -> None recursively, so reports stay strict JSON."""
    if isinstance(obj, dict):
        return {k: _strip_nan(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_strip_nan(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def run_experiment(config: RunConfig) -> dict:
    """Full experiment: data, pretraining, optional fine-tuning, evaluation.

    Returns the report dict; when config.output_dir is set, also writes
    report.json, coarse.ckpt and (when fine-tuned) final.ckpt there.
    """
    if config.generator is not None:
        virtual = generate(config.generator.virtual, "virtual")
        real = generate(config.generator.real, "real")
    else:
        virtual = read_dataset(config.datasets.virtual, role="virtual")
        real = read_dataset(config.datasets.real, role="real")

    cfg = config.train
    ranks = tuple(config.eval.ranks)
    coarse_params = pretrain(virtual, cfg)
    coarse = evaluate_features(embed(coarse_params, real.vectors), real.meta, ranks)

    report = {
        "schema": REPORT_SCHEMA,
        "config": config.model_dump(mode="json", by_alias=True),
        "notes": dict(_REPORT_NOTES),
        "coarse": _metrics_block(coarse),
    }
    final_params = None
    if config.ablation == "none":
        report["mAP"] = coarse["mAP"]
        report["cmc"] = _metrics_block(coarse)["cmc"]
    else:
        final_params, history = finetune(coarse_params, virtual, real, cfg, config.ablation)
        final = evaluate_features(embed(final_params, real.vectors), real.meta, ranks)
        report["final"] = _metrics_block(final)
        report["mAP"] = final["mAP"]
        report["cmc"] = _metrics_block(final)["cmc"]
        report["history"] = history
        accs = [h["mining_accuracy"] for h in history if h["mining_accuracy"] is not None]
        colls = [
            h["negative_collision_rate"]
            for h in history
            if h["negative_collision_rate"] is not None
        ]
        if accs:
            report["mining_accuracy"] = accs[-1]
        if colls:
            report["negative_collision_rate"] = float(np.mean(colls))
    report = _strip_nan(report)

    if config.output_dir:
        os.makedirs(config.output_dir, exist_ok=True)
        save_checkpoint(os.path.join(config.output_dir, "coarse.ckpt"), coarse_params)
        if final_params is not None:
            save_checkpoint(os.path.join(config.output_dir, "final.ckpt"), final_params)
        with open(os.path.join(config.output_dir, "report.json"), "w") as fh:
            fh.write(report_json(report))
    return report


def report_json(report: dict) -> str:
    """Canonical report serialization (stable key order, trailing newline)."""
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"
