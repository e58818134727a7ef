import numpy as np
import pytest

from minetune.embeddings import EmbeddingMatrix, ItemMeta


def make_meta(camera_ids, n_cameras=None, item_ids=None, true_ids=None, pseudo=None):
    camera_ids = np.asarray(camera_ids, dtype=np.int64)
    n = len(camera_ids)
    if item_ids is None:
        item_ids = np.arange(n, dtype=np.int64)
    if n_cameras is None:
        n_cameras = int(camera_ids.max()) + 1 if n else 1
    return ItemMeta(
        item_ids=np.asarray(item_ids, dtype=np.int64),
        camera_ids=camera_ids,
        n_cameras=n_cameras,
        true_ids=None if true_ids is None else np.asarray(true_ids, dtype=np.int64),
        pseudo_labels=None if pseudo is None else np.asarray(pseudo, dtype=np.int64),
    )


def random_unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_embedding(rng, n, d, n_cameras=2, with_truth=False, n_identities=None):
    meta = make_meta(
        rng.integers(0, n_cameras, size=n),
        n_cameras=n_cameras,
        true_ids=rng.integers(0, n_identities or max(2, n // 3), size=n) if with_truth else None,
    )
    return EmbeddingMatrix(
        vectors=random_unit_rows(rng, n, d), meta=meta, normalized=True
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
