"""Synthetic cross-camera datasets with a controllable factor structure.

Each identity is an isotropic Gaussian prototype; each sample adds
pose/background noise to its prototype and is then pushed through a fixed
per-camera affine style map (a random rotation plus shift, both scaled by
``camera_strength``). Camera 0 is always the identity map, and a camera's map
depends only on (seed, camera id), not on how many cameras the dataset
declares.

Samples of one identity are spread over the cameras as evenly as possible
(per-camera counts differ by at most one). Feature values are quantized to
float32 so that writing a dataset to disk and reading it back is lossless.

The "virtual" role carries usable pseudo labels (equal to the true
identities, which cost nothing here); the "real" role keeps its identities
hidden from training, available to evaluation only. Drawing the two roles
from different seeds is what models the virtual-to-real gap: prototypes and
camera styles both differ across roles.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .config import GeneratorConfig
from .embeddings import EmbeddingMatrix, ItemMeta

# substream tags so each random draw has its own independent stream
_PROTO, _POSE, _CAMS, _STYLE = 1, 2, 3, 4

# relative weight of the two style-map components per unit camera_strength:
# rotation angle in radians, shift as a fraction of the typical feature norm
# (sigma_identity * sqrt(dim)). The shift dominates by design: it is the
# systematic, camera-coherent part of the corruption.
_ROTATION_SCALE = 0.4
_SHIFT_SCALE = 0.5

ROLES = ("virtual", "real")


@lru_cache(maxsize=256)
def _style_basis(seed: int, dim: int, camera_id: int):
    """Unit-scale rotation generator and shift direction for one camera.

    The basis is independent of camera_strength: scaling the strength moves
    every camera further along the same rotation geodesic and shift line,
    so camera distortion grows monotonically with the knob.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STYLE, camera_id]))
    b = rng.standard_normal((dim, dim))
    a = (b - b.T) / 2.0
    norm = np.linalg.norm(a, 2)
    if norm > 0:
        a = a / norm
    shift = rng.standard_normal(dim)
    shift = shift / np.linalg.norm(shift)
    return a, shift


def _style_map(cfg: GeneratorConfig, camera_id: int):
    """Rotation matrix and shift vector for one camera under cfg."""
    if camera_id == 0 or cfg.camera_strength == 0.0:
        return np.eye(cfg.dim), np.zeros(cfg.dim)
    a, shift = _style_basis(cfg.seed, cfg.dim, camera_id)
    rot = expm(_ROTATION_SCALE * cfg.camera_strength * a)
    scale = _SHIFT_SCALE * cfg.camera_strength * cfg.sigma_identity * np.sqrt(cfg.dim)
    return rot, scale * shift


def camera_transform(v: np.ndarray, camera_id: int, cfg: GeneratorConfig) -> np.ndarray:
    """Apply one camera's affine style map to a feature vector."""
    if not 0 <= camera_id < cfg.n_cameras:
        raise ValueError(f"camera_id {camera_id} out of range [0, {cfg.n_cameras})")
    v = np.asarray(v, dtype=np.float64)
    rot, shift = _style_map(cfg, camera_id)
    return v @ rot.T + shift


def generate(cfg: GeneratorConfig, role: str) -> EmbeddingMatrix:
    """Build one dataset of cfg.n_identities * cfg.samples_per_identity items.

    Deterministic given (cfg, role); the same config generates bit-identical
    data every time.
    """
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    n_id, n_e, n_c, d = cfg.n_identities, cfg.samples_per_identity, cfg.n_cameras, cfg.dim
    n = n_id * n_e

    proto_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _PROTO]))
    pose_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _POSE]))
    cam_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _CAMS]))

    protos = cfg.sigma_identity * proto_rng.standard_normal((n_id, d))
    true_ids = np.repeat(np.arange(n_id, dtype=np.int64), n_e)
    x = protos[true_ids] + cfg.sigma_pose * pose_rng.standard_normal((n, d))

    # balanced camera assignment per identity: round-robin, order shuffled
    cameras = np.empty(n, dtype=np.int64)
    base = np.arange(n_e, dtype=np.int64) % n_c
    for i in range(n_id):
        cameras[i * n_e : (i + 1) * n_e] = base[cam_rng.permutation(n_e)]

    for c in range(n_c):
        rows = cameras == c
        if not np.any(rows):
            continue
        rot, shift = _style_map(cfg, c)
        x[rows] = x[rows] @ rot.T + shift

    # float32 grid so the on-disk format round-trips exactly
    x = x.astype(np.float32).astype(np.float64)

    meta = ItemMeta(
        item_ids=np.arange(n, dtype=np.int64),
        camera_ids=cameras,
        n_cameras=n_c,
        true_ids=true_ids,
        pseudo_labels=true_ids.copy() if role == "virtual" else None,
    )
    return EmbeddingMatrix(vectors=x, meta=meta, normalized=False)
