"""Feature storage, L2 normalization and exponential pairwise similarity.

Similarity between two unit-normalized feature vectors is
``exp(-||v_p - v_q||_2)``: 1 for identical vectors, ``exp(-2)`` for antipodal
ones, strictly decreasing in Euclidean distance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NotNormalizedError, ZeroVectorError

ZERO_NORM_EPS = 1e-12
UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class ItemMeta:
    """Per-item metadata, stored columnar.

    Item ids are arbitrary unique integers; all ordering guarantees elsewhere
    in the package (tie-breaks, output order) are expressed in terms of these
    ids, never in terms of row positions.
    """

    item_ids: np.ndarray  # (n,) int64, unique
    camera_ids: np.ndarray  # (n,) int64 in [0, n_cameras)
    n_cameras: int
    true_ids: np.ndarray | None = None  # hidden labels, used by evaluation only
    pseudo_labels: np.ndarray | None = None  # training labels (virtual data)

    def __post_init__(self):
        ids = np.asarray(self.item_ids, dtype=np.int64)
        cams = np.asarray(self.camera_ids, dtype=np.int64)
        object.__setattr__(self, "item_ids", ids)
        object.__setattr__(self, "camera_ids", cams)
        if ids.ndim != 1 or cams.shape != ids.shape:
            raise ValueError("item_ids and camera_ids must be 1-D and equal length")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("item_ids must be unique")
        if self.n_cameras < 1:
            raise ValueError("n_cameras must be >= 1")
        if len(cams) and (cams.min() < 0 or cams.max() >= self.n_cameras):
            raise ValueError("camera_ids must lie in [0, n_cameras)")
        for name in ("true_ids", "pseudo_labels"):
            val = getattr(self, name)
            if val is not None:
                arr = np.asarray(val, dtype=np.int64)
                if arr.shape != ids.shape:
                    raise ValueError(f"{name} must match item count")
                object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.item_ids)

    def position_of(self, item_id: int) -> int:
        """Row position of an item id; raises KeyError when absent."""
        hits = np.flatnonzero(self.item_ids == item_id)
        if hits.size == 0:
            raise KeyError(f"unknown item id {item_id}")
        return int(hits[0])


@dataclass(frozen=True)
class EmbeddingMatrix:
    """n x d feature matrix plus metadata.

    ``normalized`` certifies that every row has unit L2 norm; operations that
    assume unit scale (pairwise similarity) refuse to run without it.
    """

    vectors: np.ndarray  # (n, d) float64
    meta: ItemMeta
    normalized: bool = False

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        object.__setattr__(self, "vectors", vec)
        if vec.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        if vec.shape[0] != len(self.meta):
            raise ValueError("vectors and meta disagree on item count")
        if vec.shape[1] < 1:
            raise ValueError("feature dimension must be >= 1")
        if not np.all(np.isfinite(vec)):
            raise ValueError("vectors must be finite")
        if self.normalized:
            norms = np.linalg.norm(vec, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise ValueError("normalized flag set but rows are not unit norm")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def normalize(self) -> "EmbeddingMatrix":
        """Return a copy with every row scaled to unit L2 norm."""
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(norms < ZERO_NORM_EPS):
            bad = self.meta.item_ids[norms < ZERO_NORM_EPS][:5]
            raise ZeroVectorError(f"rows with (near-)zero norm, item ids {bad.tolist()}")
        return replace(self, vectors=self.vectors / norms[:, None], normalized=True)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit L2 norm, preserving its direction."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("expected a 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector must be finite")
    norm = np.linalg.norm(v)
    if norm < ZERO_NORM_EPS:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm:.3e}")
    return v / norm


def pairwise_similarity(emb: EmbeddingMatrix) -> np.ndarray:
    """Dense n x n similarity matrix ``S[p, q] = exp(-||v_p - v_q||_2)``.

    Requires unit-normalized rows, which bound distances by 2 and therefore
    every entry by [exp(-2), 1]. The result is exactly symmetric with a unit
    diagonal.
    """
    if not emb.normalized:
        raise NotNormalizedError("pairwise_similarity requires a normalized EmbeddingMatrix")
    x = emb.vectors
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    # unit rows: squared distances live in [0, 4]; clip matmul round-off
    np.clip(d2, 0.0, 4.0, out=d2)
    s = np.exp(-np.sqrt(d2))
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, 1.0)
    return s
