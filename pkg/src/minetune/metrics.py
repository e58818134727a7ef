"""Cross-camera retrieval metrics (CMC, mAP) and mining diagnostics.

Protocol: for each query, gallery entries sharing BOTH the query's camera and
identity are excluded (this also removes the query itself when the two sets
overlap); the remaining same-identity entries are the relevant ones. Queries
left with zero relevant entries are dropped from the averages and counted.
Gallery ranking uses the exponential similarity ordering (equivalently,
ascending Euclidean distance) with ties broken by ascending item id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import ItemMeta
from .errors import EmptyGalleryError, NoGroundTruthError


@dataclass(frozen=True)
class RankedQuery:
    """One query's ranked gallery after protocol exclusion."""

    query_id: int
    gallery_ids: np.ndarray  # ranked item ids, best first
    relevant: np.ndarray  # bool, aligned with gallery_ids

    @property
    def n_relevant(self) -> int:
        return int(self.relevant.sum())


def rank_gallery(
    query_vectors: np.ndarray,
    query_meta: ItemMeta,
    gallery_vectors: np.ndarray,
    gallery_meta: ItemMeta,
) -> list:
    """Rank the gallery for every query under the cross-camera protocol.

    Both feature sets must be unit-normalized. Returns one RankedQuery per
    query, in query input order.
    """
    if gallery_vectors.shape[0] == 0:
        raise EmptyGalleryError("gallery is empty")
    if query_meta.true_ids is None or gallery_meta.true_ids is None:
        raise NoGroundTruthError("retrieval metrics need identity labels")

    q = np.asarray(query_vectors, dtype=np.float64)
    g = np.asarray(gallery_vectors, dtype=np.float64)
    d2 = (
        np.sum(q * q, axis=1)[:, None]
        + np.sum(g * g, axis=1)[None, :]
        - 2.0 * (q @ g.T)
    )
    dist = np.sqrt(np.clip(d2, 0.0, None))

    out = []
    g_ids = gallery_meta.item_ids
    for i in range(q.shape[0]):
        same_id = gallery_meta.true_ids == query_meta.true_ids[i]
        junk = same_id & (gallery_meta.camera_ids == query_meta.camera_ids[i])
        keep = np.flatnonzero(~junk)
        order = keep[np.lexsort((g_ids[keep], dist[i, keep]))]
        out.append(
            RankedQuery(
                query_id=int(query_meta.item_ids[i]),
                gallery_ids=g_ids[order],
                relevant=same_id[order],
            )
        )
    return out


def average_precision(ranked: RankedQuery) -> float:
    """AP of one query: precision at each relevant hit, averaged over the
    total relevant count. Undefined (ValueError) without relevant entries."""
    hits = np.flatnonzero(ranked.relevant)
    if hits.size == 0:
        raise ValueError("average precision undefined without relevant entries")
    precisions = (np.arange(hits.size) + 1.0) / (hits + 1.0)
    return float(np.sum(precisions) / hits.size)


def mean_ap(ranked_lists: list) -> tuple:
    """(mAP over evaluable queries, evaluated count, skipped count)."""
    aps = [average_precision(r) for r in ranked_lists if r.n_relevant > 0]
    skipped = len(ranked_lists) - len(aps)
    if not aps:
        return float("nan"), 0, skipped
    return float(np.mean(aps)), len(aps), skipped


def cmc(ranked_lists: list, ranks=(1, 5, 10, 20)) -> dict:
    """Cumulative match characteristic: fraction of evaluable queries with a
    relevant entry somewhere in the top r, for each requested rank."""
    usable = [r for r in ranked_lists if r.n_relevant > 0]
    out = {}
    for r in ranks:
        if usable:
            hits = sum(1 for q in usable if bool(q.relevant[: int(r)].any()))
            out[int(r)] = hits / len(usable)
        else:
            out[int(r)] = float("nan")
    return out


def mining_accuracy(pairs: list, meta: ItemMeta) -> float:
    """Fraction of mined pairs whose two items share the true identity."""
    if meta.true_ids is None:
        raise NoGroundTruthError("mining accuracy needs identity labels")
    if not pairs:
        return float("nan")
    lookup = {int(v): i for i, v in enumerate(meta.item_ids)}
    same = [
        int(meta.true_ids[lookup[p.anchor]] == meta.true_ids[lookup[p.positive]])
        for p in pairs
    ]
    return float(np.mean(same))


def evaluate_features(features: np.ndarray, meta: ItemMeta, ranks=(1, 5, 10, 20)) -> dict:
    """Self-retrieval evaluation: every item queries the full set.

    The protocol exclusion drops each query's own gallery entry (same camera,
    same identity), so no extra self-filtering is needed.
    """
    ranked = rank_gallery(features, meta, features, meta)
    m_ap, evaluated, skipped = mean_ap(ranked)
    return {
        "mAP": m_ap,
        "cmc": cmc(ranked, ranks),
        "queries_evaluated": evaluated,
        "queries_skipped": skipped,
    }
