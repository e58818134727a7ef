"""k-reciprocal neighborhoods, collaborative-filtering rescoring and
positive-pair mining over a precomputed similarity matrix.

The mining pass for an anchor p:

  1. N(p, k): the k most similar items (optionally restricted to items from
     other cameras),
  2. R(p): the candidates q in N(p, k) whose own top-k lists contain p back,
  3. every q in R(p) is rescored through the shared neighbors
     c in R(p) & R(q):

         F(p, q) = S[p, q] + sum_c w(q, c) * S[p, c]
         w(q, c) = S[q, c] / sum_c' S[q, c']

  4. the candidate with the highest F becomes p's positive partner.

Ties anywhere resolve toward the smallest item id, so results are fully
deterministic. Camera exclusion is applied while building N(p, k), which
makes the reciprocal sets, the collaborator sets and the mined pairs all live
in the cross-camera graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import ItemMeta
from .errors import KTooLargeError


@dataclass(frozen=True)
class NeighborIndex:
    """Per-item ranked top-k neighbor lists.

    ``neighbors[i]``/``similarities[i]`` hold the row positions and
    similarities of item i's list, best first; lists may be shorter than k
    when camera exclusion removes candidates.
    """

    k: int
    camera_excluded: bool
    item_ids: np.ndarray  # (n,) ids aligned with row positions
    neighbors: list  # list of int arrays (row positions)
    similarities: list  # list of float arrays

    @property
    def n(self) -> int:
        return len(self.item_ids)

    def position_of(self, item_id: int) -> int:
        hits = np.flatnonzero(self.item_ids == item_id)
        if hits.size == 0:
            raise KeyError(f"unknown item id {item_id}")
        return int(hits[0])

    def neighbor_ids(self, item_id: int) -> np.ndarray:
        """Neighbor item ids of one item, best first."""
        return self.item_ids[self.neighbors[self.position_of(item_id)]]


@dataclass(frozen=True)
class ReciprocalSet:
    anchor: int  # item id
    members: frozenset  # item ids


@dataclass(frozen=True)
class CollaboratorSet:
    p: int
    q: int
    members: frozenset  # item ids


@dataclass(frozen=True)
class MinedPair:
    anchor: int  # item id
    positive: int  # item id
    f_score: float


def top_k_neighbors(
    s: np.ndarray,
    meta: ItemMeta,
    k: int,
    exclude_same_camera: bool = True,
) -> NeighborIndex:
    """Ranked top-k lists for every item, ties toward the smaller item id.

    An item never appears in its own list; with ``exclude_same_camera`` no
    neighbor shares the item's camera (lists can then end up shorter than k,
    or empty).
    """
    n = s.shape[0]
    if s.shape != (n, n):
        raise ValueError("similarity matrix must be square")
    if len(meta) != n:
        raise ValueError("meta and similarity matrix disagree on item count")
    if not 1 <= k < n:
        raise KTooLargeError(f"k={k} must satisfy 1 <= k < n={n}")

    masked = s.copy()
    np.fill_diagonal(masked, -np.inf)
    if exclude_same_camera:
        same = meta.camera_ids[:, None] == meta.camera_ids[None, :]
        masked[same] = -np.inf

    ids = meta.item_ids
    neighbors: list = []
    sims: list = []
    for p in range(n):
        row = masked[p]
        valid = np.flatnonzero(row != -np.inf)
        if valid.size > k:
            # kth largest value bounds the list; fill value-ties by ascending id
            kth = np.partition(row[valid], valid.size - k)[valid.size - k]
            above = valid[row[valid] > kth]
            equal = valid[row[valid] == kth]
            equal = equal[np.argsort(ids[equal], kind="stable")][: k - above.size]
            chosen = np.concatenate([above, equal])
        else:
            chosen = valid
        order = np.lexsort((ids[chosen], -row[chosen]))
        chosen = chosen[order]
        neighbors.append(chosen.astype(np.int64))
        sims.append(s[p, chosen])
    return NeighborIndex(
        k=k,
        camera_excluded=exclude_same_camera,
        item_ids=ids,
        neighbors=neighbors,
        similarities=sims,
    )


def _membership_matrix(idx: NeighborIndex) -> np.ndarray:
    """Boolean matrix M with M[p, q] = True iff q is in N(p, k)."""
    n = idx.n
    m = np.zeros((n, n), dtype=bool)
    for p, nb in enumerate(idx.neighbors):
        m[p, nb] = True
    return m


def reciprocal_matrix(idx: NeighborIndex) -> np.ndarray:
    """Boolean matrix R with R[p, q] = True iff q and p are mutual top-k."""
    m = _membership_matrix(idx)
    return m & m.T


def reciprocal_set(idx: NeighborIndex, p: int) -> ReciprocalSet:
    """Mutual-neighbor set of one item: q in N(p,k) with p back in N(q,k)."""
    pos = idx.position_of(p)
    members = [
        int(idx.item_ids[q])
        for q in idx.neighbors[pos]
        if np.any(idx.neighbors[q] == pos)
    ]
    return ReciprocalSet(anchor=int(p), members=frozenset(members))


def collaborators(rp: ReciprocalSet, rq: ReciprocalSet) -> CollaboratorSet:
    """Shared mutual neighbors of two items (a plain set intersection)."""
    return CollaboratorSet(p=rp.anchor, q=rq.anchor, members=rp.members & rq.members)


def cf_similarity(
    s: np.ndarray,
    p: int,
    q: int,
    collab: CollaboratorSet,
    item_ids: np.ndarray | None = None,
) -> float:
    """Collaborative-filtering similarity F(p, q).

    ``p``, ``q`` and the collaborator members are item ids; when ``item_ids``
    is omitted, ids are taken to coincide with row positions of ``s``. An
    empty collaborator set leaves the plain similarity unchanged; otherwise
    the collaborator weights w(q, c) sum to one.
    """
    if item_ids is None:
        pos = {int(i): int(i) for i in (p, q, *collab.members)}
    else:
        lookup = {int(v): i for i, v in enumerate(np.asarray(item_ids))}
        pos = {int(i): lookup[int(i)] for i in (p, q, *collab.members)}
    base = float(s[pos[p], pos[q]])
    if not collab.members:
        return base
    c_pos = np.array([pos[c] for c in sorted(collab.members)], dtype=np.int64)
    w = s[pos[q], c_pos]
    w = w / w.sum()
    return float(base + w @ s[pos[p], c_pos])


def _mine_one(s, r, p, ids, id_order):
    """Best positive for anchor position p given the reciprocal matrix r.

    ``id_order[pos]`` ranks positions by ascending item id so argmax ties
    break toward the smallest id. Returns None when R(p) is empty.
    """
    cand = np.flatnonzero(r[p])
    if cand.size == 0:
        return None
    cand = cand[np.argsort(id_order[cand], kind="stable")]
    coll = r[cand] & r[p]  # (m, n): collaborator mask per candidate
    wq = np.where(coll, s[cand], 0.0)
    denom = wq.sum(axis=1, keepdims=True)
    np.divide(wq, denom, out=wq, where=denom > 0)
    f = s[p, cand] + wq @ s[p]
    best = int(np.argmax(f))  # first maximum = smallest id on ties
    return MinedPair(anchor=int(ids[p]), positive=int(ids[cand[best]]), f_score=float(f[best]))


def mine_positive_pair(s: np.ndarray, idx: NeighborIndex, p: int) -> MinedPair | None:
    """Mined pair for a single anchor (item id), or None when R(p) is empty."""
    r = reciprocal_matrix(idx)
    ids = idx.item_ids
    id_order = np.argsort(np.argsort(ids))
    return _mine_one(s, r, idx.position_of(p), ids, id_order)


def mine_all(
    s: np.ndarray,
    meta: ItemMeta,
    k: int,
    exclude_same_camera: bool = True,
) -> list:
    """One mining pass over every item as anchor.

    Anchors whose reciprocal set is empty are skipped (their absence from the
    output is the skip count). Output is ordered by ascending anchor id.
    """
    idx = top_k_neighbors(s, meta, k, exclude_same_camera)
    r = reciprocal_matrix(idx)
    ids = idx.item_ids
    id_order = np.argsort(np.argsort(ids))
    pairs = []
    for p in np.argsort(ids, kind="stable"):
        pair = _mine_one(s, r, int(p), ids, id_order)
        if pair is not None:
            pairs.append(pair)
    return pairs


def mine_random(
    s: np.ndarray,
    meta: ItemMeta,
    k: int,
    exclude_same_camera: bool,
    rng: np.random.Generator,
) -> list:
    """Baseline miner: positives drawn uniformly from R(p) instead of by F.

    The recorded score is the plain similarity of the drawn pair.
    """
    idx = top_k_neighbors(s, meta, k, exclude_same_camera)
    r = reciprocal_matrix(idx)
    ids = idx.item_ids
    id_order = np.argsort(np.argsort(ids))
    pairs = []
    for p in np.argsort(ids, kind="stable"):
        cand = np.flatnonzero(r[p])
        if cand.size == 0:
            continue
        cand = cand[np.argsort(id_order[cand], kind="stable")]
        q = cand[int(rng.integers(cand.size))]
        pairs.append(MinedPair(anchor=int(ids[p]), positive=int(ids[q]), f_score=float(s[p, q])))
    return pairs
