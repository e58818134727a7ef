"""Dataset and mined-pair file formats.

Binary dataset layout (all little-endian):

    header:  uint32 n, uint32 dim, uint32 n_cameras, uint32 has_true_identity
    record:  uint32 item_id, uint32 camera_id,
             uint32 true_identity   (present only when the header flag is 1)
             dim x float32 feature values

The CSV import path expects columns ``item_id, camera_id, identity,
f0..f{dim-1}``; the identity column may be left blank (all rows or none).

Mined pairs are dumped as CSV with columns ``anchor_id, positive_id, f_score,
same_identity``; the last column stays blank when the dataset carries no
ground-truth identities.
"""

from __future__ import annotations

import csv
import struct

import numpy as np

from .embeddings import EmbeddingMatrix, ItemMeta
from .mining import MinedPair

_HEADER = struct.Struct("<4I")


def write_dataset(path, emb: EmbeddingMatrix) -> None:
    has_truth = emb.meta.true_ids is not None
    rec = _record_dtype(emb.dim, has_truth)
    out = np.empty(emb.n, dtype=rec)
    out["item_id"] = emb.meta.item_ids
    out["camera_id"] = emb.meta.camera_ids
    if has_truth:
        out["identity"] = emb.meta.true_ids
    out["features"] = emb.vectors.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(emb.n, emb.dim, emb.meta.n_cameras, int(has_truth)))
        fh.write(out.tobytes())


def read_dataset(path, role: str = "real") -> EmbeddingMatrix:
    """Load a binary dataset; ``role="virtual"`` promotes the stored
    identities to usable pseudo labels (and requires them to be present)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: too short for a dataset header")
    n, dim, n_cameras, has_truth = _HEADER.unpack_from(raw)
    rec = _record_dtype(dim, bool(has_truth))
    expected = _HEADER.size + n * rec.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype=rec, count=n, offset=_HEADER.size)

    true_ids = data["identity"].astype(np.int64) if has_truth else None
    if role == "virtual":
        if true_ids is None:
            raise ValueError(f"{path}: virtual role needs identities in the file")
        pseudo = true_ids.copy()
    elif role == "real":
        pseudo = None
    else:
        raise ValueError(f"unknown role {role!r}")
    meta = ItemMeta(
        item_ids=data["item_id"].astype(np.int64),
        camera_ids=data["camera_id"].astype(np.int64),
        n_cameras=int(n_cameras),
        true_ids=true_ids,
        pseudo_labels=pseudo,
    )
    vectors = data["features"].astype(np.float64)
    if n == 0:
        vectors = vectors.reshape(0, dim)
    return EmbeddingMatrix(vectors=vectors, meta=meta, normalized=False)


def _record_dtype(dim: int, has_truth: bool) -> np.dtype:
    fields = [("item_id", "<u4"), ("camera_id", "<u4")]
    if has_truth:
        fields.append(("identity", "<u4"))
    fields.append(("features", "<f4", (dim,)))
    return np.dtype(fields)


def read_csv_dataset(path) -> EmbeddingMatrix:
    """Import a dataset from CSV (see module docstring for the columns)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty CSV")
        header = [h.strip() for h in header]
        expected_prefix = ["item_id", "camera_id", "identity"]
        if header[:3] != expected_prefix:
            raise ValueError(f"{path}: columns must start with {expected_prefix}")
        dim = len(header) - 3
        if dim < 1 or header[3:] != [f"f{i}" for i in range(dim)]:
            raise ValueError(f"{path}: feature columns must be f0..f{{dim-1}}")
        ids, cams, idents, feats = [], [], [], []
        for row in reader:
            if not row:
                continue
            if len(row) != 3 + dim:
                raise ValueError(f"{path}: row with {len(row)} fields, expected {3 + dim}")
            ids.append(int(row[0]))
            cams.append(int(row[1]))
            idents.append(row[2].strip())
            feats.append([float(v) for v in row[3:]])
    if not ids:
        raise ValueError(f"{path}: no data rows")
    blank = [v == "" for v in idents]
    if any(blank) and not all(blank):
        raise ValueError(f"{path}: identity column must be all blank or all filled")
    true_ids = None if all(blank) else np.array([int(v) for v in idents], dtype=np.int64)
    cams_arr = np.array(cams, dtype=np.int64)
    meta = ItemMeta(
        item_ids=np.array(ids, dtype=np.int64),
        camera_ids=cams_arr,
        n_cameras=int(cams_arr.max()) + 1,
        true_ids=true_ids,
    )
    return EmbeddingMatrix(vectors=np.array(feats, dtype=np.float64), meta=meta, normalized=False)


def write_pairs_csv(path, pairs: list, meta: ItemMeta) -> None:
    """Dump mined pairs; the same_identity column is blank without labels."""
    lookup = None
    if meta.true_ids is not None:
        lookup = {int(v): int(t) for v, t in zip(meta.item_ids, meta.true_ids)}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["anchor_id", "positive_id", "f_score", "same_identity"])
        for p in pairs:
            same = ""
            if lookup is not None:
                same = int(lookup[p.anchor] == lookup[p.positive])
            writer.writerow([p.anchor, p.positive, repr(p.f_score), same])


def read_pairs_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        return [
            MinedPair(anchor=int(r[0]), positive=int(r[1]), f_score=float(r[2]))
            for r in reader
            if r
        ]


def write_per_query_ap_csv(path, ranked_lists) -> None:
    """Per-query average precision; the ap column is blank for queries the
    protocol left without relevant entries."""
    from .metrics import average_precision

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "ap"])
        for ranked in ranked_lists:
            ap = repr(average_precision(ranked)) if ranked.n_relevant else ""
            writer.writerow([ranked.query_id, ap])
