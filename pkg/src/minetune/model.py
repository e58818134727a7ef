"""Trainable embedder with a classification head, and the training losses.

The embedder is an affine map (optionally one tanh hidden layer) followed by
L2 normalization, so every embedding lives on the unit sphere and matches the
distance conventions of the similarity/mining code. The classifier head
consumes the normalized embedding.

Losses come with exact analytic gradients (validated against central finite
differences in the tests):

  * softmax cross-entropy, averaged over the batch;
  * batch-hard triplet: per anchor, the positive is its mined partner and
    the negative is the closest other batch member, margin-hinged, summed
    over anchors;
  * their weighted sum  L = L_cls + lambda * L_tri.

Checkpoint file layout (little-endian): uint32 header
(d_in, d_out, hidden_dim, n_classes) followed by the parameters as raw
float64 in order [w_hidden, b_hidden (when hidden_dim > 0), w, b, w_cls,
b_cls], each row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BatchTooSmallError, ZeroVectorError

_HEADER = struct.Struct("<4I")
_DIST_EPS = 1e-12


@dataclass
class EmbedderParams:
    """Weights of the embedder and classifier. Also reused as the gradient
    container, since gradients share every shape."""

    w: np.ndarray  # (d_in or hidden_dim, d_out)
    b: np.ndarray  # (d_out,)
    w_cls: np.ndarray  # (d_out, n_classes)
    b_cls: np.ndarray  # (n_classes,)
    w_hidden: np.ndarray | None = None  # (d_in, hidden_dim)
    b_hidden: np.ndarray | None = None  # (hidden_dim,)

    @property
    def d_in(self) -> int:
        return self.w_hidden.shape[0] if self.w_hidden is not None else self.w.shape[0]

    @property
    def d_out(self) -> int:
        return self.w.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_hidden.shape[1] if self.w_hidden is not None else 0

    @property
    def n_classes(self) -> int:
        return self.w_cls.shape[1]

    def arrays(self) -> list:
        """Parameter arrays in the declared (checkpoint) order."""
        out = []
        if self.w_hidden is not None:
            out.extend([self.w_hidden, self.b_hidden])
        out.extend([self.w, self.b, self.w_cls, self.b_cls])
        return out


def init_params(
    d_in: int, d_out: int, n_classes: int, hidden_dim: int = 0, seed: int = 0
) -> EmbedderParams:
    """Gaussian init scaled by 1/sqrt(fan_in); biases start at zero."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    w_hidden = b_hidden = None
    fan = d_in
    if hidden_dim > 0:
        w_hidden = rng.standard_normal((d_in, hidden_dim)) / np.sqrt(d_in)
        b_hidden = np.zeros(hidden_dim)
        fan = hidden_dim
    w = rng.standard_normal((fan, d_out)) / np.sqrt(fan)
    b = np.zeros(d_out)
    w_cls = rng.standard_normal((d_out, n_classes)) / np.sqrt(d_out)
    b_cls = np.zeros(n_classes)
    return EmbedderParams(w=w, b=b, w_cls=w_cls, b_cls=b_cls, w_hidden=w_hidden, b_hidden=b_hidden)


def zeros_like_params(params: EmbedderParams) -> EmbedderParams:
    return EmbedderParams(
        w=np.zeros_like(params.w),
        b=np.zeros_like(params.b),
        w_cls=np.zeros_like(params.w_cls),
        b_cls=np.zeros_like(params.b_cls),
        w_hidden=None if params.w_hidden is None else np.zeros_like(params.w_hidden),
        b_hidden=None if params.b_hidden is None else np.zeros_like(params.b_hidden),
    )


def add_scaled(grads: EmbedderParams, other: EmbedderParams, scale: float) -> None:
    """grads += scale * other, in place."""
    grads.w += scale * other.w
    grads.b += scale * other.b
    grads.w_cls += scale * other.w_cls
    grads.b_cls += scale * other.b_cls
    if grads.w_hidden is not None:
        grads.w_hidden += scale * other.w_hidden
        grads.b_hidden += scale * other.b_hidden


def pack(params: EmbedderParams) -> np.ndarray:
    """Flatten all parameters into one float64 vector (checkpoint order)."""
    return np.concatenate([a.ravel() for a in params.arrays()])


def unpack(vec: np.ndarray, like: EmbedderParams) -> EmbedderParams:
    """Inverse of pack, using ``like`` for the shapes."""
    out = zeros_like_params(like)
    offset = 0
    for src, dst in zip(like.arrays(), out.arrays()):
        size = src.size
        dst[...] = vec[offset : offset + size].reshape(src.shape)
        offset += size
    if offset != vec.size:
        raise ValueError("parameter vector has the wrong length")
    return out


def sgd_step(params: EmbedderParams, grads: EmbedderParams, lr: float) -> EmbedderParams:
    """Plain gradient step: params - lr * grads."""
    return EmbedderParams(
        w=params.w - lr * grads.w,
        b=params.b - lr * grads.b,
        w_cls=params.w_cls - lr * grads.w_cls,
        b_cls=params.b_cls - lr * grads.b_cls,
        w_hidden=None if params.w_hidden is None else params.w_hidden - lr * grads.w_hidden,
        b_hidden=None if params.b_hidden is None else params.b_hidden - lr * grads.b_hidden,
    )


def _forward(params: EmbedderParams, x: np.ndarray):
    """Embed a batch; returns (embeddings, cache for the backward pass)."""
    h = x
    if params.w_hidden is not None:
        h = np.tanh(x @ params.w_hidden + params.b_hidden)
    u = h @ params.w + params.b
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms < _DIST_EPS):
        raise ZeroVectorError("embedder produced a zero vector before normalization")
    e = u / norms[:, None]
    return e, (x, h, e, norms)


def _backward(params: EmbedderParams, cache, d_e: np.ndarray) -> EmbedderParams:
    """Gradients of sum(d_e * embeddings) w.r.t. all parameters."""
    x, h, e, norms = cache
    d_u = (d_e - np.sum(d_e * e, axis=1, keepdims=True) * e) / norms[:, None]
    grads = zeros_like_params(params)
    grads.w = h.T @ d_u
    grads.b = d_u.sum(axis=0)
    if params.w_hidden is not None:
        d_h = d_u @ params.w.T
        d_pre = d_h * (1.0 - h * h)
        grads.w_hidden = x.T @ d_pre
        grads.b_hidden = d_pre.sum(axis=0)
    return grads


def embed(params: EmbedderParams, x: np.ndarray) -> np.ndarray:
    """Unit-norm embedding of a vector (d_in,) or batch (m, d_in)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    e, _ = _forward(params, x[None, :] if single else x)
    return e[0] if single else e


def cross_entropy_loss(params: EmbedderParams, x: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy of the classifier head over a batch.

    Returns (loss, gradients).
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= params.n_classes:
        raise ValueError("labels out of range for the classifier head")
    m = x.shape[0]
    e, cache = _forward(params, x)
    logits = e @ params.w_cls + params.b_cls
    logits -= logits.max(axis=1, keepdims=True)
    expz = np.exp(logits)
    probs = expz / expz.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(probs[np.arange(m), labels])))

    d_logits = probs.copy()
    d_logits[np.arange(m), labels] -= 1.0
    d_logits /= m
    grads = _backward(params, cache, d_logits @ params.w_cls.T)
    grads.w_cls = e.T @ d_logits
    grads.b_cls = d_logits.sum(axis=0)
    return loss, grads


def _pairwise_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.sqrt(np.clip(d2, 0.0, None))


def triplet_loss(
    params: EmbedderParams,
    anchors: np.ndarray,
    positives: np.ndarray,
    margin: float,
    negative_pool: str = "pairs",
):
    """Batch-hard triplet loss over mined (anchor, positive) pairs.

    Per anchor i the negative z_i is the embedded-space closest batch member
    other than the pair itself; with ``negative_pool="pairs"`` (default) the
    candidates are the other anchors and their positives, with ``"anchors"``
    the other anchors only. The hinge is
    ``[d(a_i, p_i) - d(a_i, z_i) + margin]_+`` summed over the batch, and
    gradients treat the z_i selection as fixed.

    Returns (loss, gradients, aux) where aux records the selected negative
    pool indices, distances and which hinges were active.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.float64)
    n_r = anchors.shape[0]
    if n_r < 2:
        raise BatchTooSmallError(f"need at least 2 anchors, got {n_r}")
    if positives.shape != anchors.shape:
        raise ValueError("anchors and positives must have identical shapes")

    e_a, cache_a = _forward(params, anchors)
    e_p, cache_p = _forward(params, positives)
    pool = np.vstack([e_a, e_p])

    dist = _pairwise_dist(e_a, pool)
    rows = np.arange(n_r)
    dist[rows, rows] = np.inf  # the anchor itself
    dist[rows, rows + n_r] = np.inf  # its own positive
    if negative_pool == "anchors":
        dist[:, n_r:] = np.inf
    elif negative_pool != "pairs":
        raise ValueError(f"unknown negative_pool {negative_pool!r}")

    z = np.argmin(dist, axis=1)
    d_neg = dist[rows, z]
    two_best = np.partition(dist, 1, axis=1)[:, :2]  # argmin-ambiguity margin
    neg_gap = two_best[:, 1] - two_best[:, 0]
    d_pos = np.linalg.norm(e_a - e_p, axis=1)
    hinge = d_pos - d_neg + margin
    active = hinge > 0.0
    loss = float(np.sum(hinge[active]))

    d_ea = np.zeros_like(e_a)
    d_ep = np.zeros_like(e_p)
    d_pool = np.zeros_like(pool)
    safe_pos = active & (d_pos > _DIST_EPS)
    u = np.zeros_like(e_a)
    u[safe_pos] = (e_a[safe_pos] - e_p[safe_pos]) / d_pos[safe_pos, None]
    d_ea += u
    d_ep -= u
    safe_neg = active & (d_neg > _DIST_EPS)
    v = np.zeros_like(e_a)
    v[safe_neg] = (e_a[safe_neg] - pool[z[safe_neg]]) / d_neg[safe_neg, None]
    d_ea -= v
    np.add.at(d_pool, z[safe_neg], v[safe_neg])
    d_ea += d_pool[:n_r]
    d_ep += d_pool[n_r:]

    grads = _backward(params, cache_a, d_ea)
    add_scaled(grads, _backward(params, cache_p, d_ep), 1.0)
    aux = {
        "negative_indices": z,
        "d_pos": d_pos,
        "d_neg": d_neg,
        "gap": neg_gap,
        "active": active,
    }
    return loss, grads, aux


def combined_loss(
    params: EmbedderParams,
    virtual_x: np.ndarray,
    virtual_labels: np.ndarray,
    anchors: np.ndarray,
    positives: np.ndarray,
    margin: float,
    lam: float,
    negative_pool: str = "pairs",
):
    """Multi-task objective L = L_cls + lambda * L_tri.

    Returns (loss, gradients, aux); aux carries both component losses and the
    triplet aux block. With lam == 0 the gradients are exactly the
    cross-entropy gradients.
    """
    cls_loss, grads = cross_entropy_loss(params, virtual_x, virtual_labels)
    tri_loss, tri_grads, tri_aux = triplet_loss(params, anchors, positives, margin, negative_pool)
    if lam != 0.0:
        add_scaled(grads, tri_grads, lam)
    loss = cls_loss + lam * tri_loss
    aux = {"cls_loss": cls_loss, "tri_loss": tri_loss, "triplet": tri_aux}
    return loss, grads, aux


def save_checkpoint(path, params: EmbedderParams) -> None:
    """Write header (d_in, d_out, hidden_dim, n_classes) + raw float64 data."""
    header = _HEADER.pack(params.d_in, params.d_out, params.hidden_dim, params.n_classes)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pack(params).astype("<f8").tobytes())


def load_checkpoint(path) -> EmbedderParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("checkpoint file too short for its header")
    d_in, d_out, hidden_dim, n_classes = _HEADER.unpack_from(raw)
    template = EmbedderParams(
        w=np.zeros(((hidden_dim or d_in), d_out)),
        b=np.zeros(d_out),
        w_cls=np.zeros((d_out, n_classes)),
        b_cls=np.zeros(n_classes),
        w_hidden=np.zeros((d_in, hidden_dim)) if hidden_dim else None,
        b_hidden=np.zeros(hidden_dim) if hidden_dim else None,
    )
    expected = sum(a.size for a in template.arrays())
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != expected:
        raise ValueError(
            f"checkpoint holds {data.size} values, header implies {expected}"
        )
    return unpack(data.astype(np.float64), template)
