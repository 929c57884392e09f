"""Translation-family embedding models: parameter layout, scoring, checkpoints.

All three model kinds score a candidate link as the negated L2 length of a
translation residual, so a higher score always means a more plausible link:

  TransE  -||h + r - t||
  TransR  -||M_r h + r - M_r t||          (per-relation projection matrix)
  TransD  -||h_perp + r - t_perp||        (dynamic projections built from
                                           per-entity and per-relation vectors)

Scoring is pure and, for a given parameter set, independent of batch shape:
all reductions go through einsum, whose accumulation order does not depend on
how many rows are scored at once.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .io import atomic_write_bytes

CHECKPOINT_VERSION = 1


class ModelKind(str, Enum):
    TRANSE = "transe"
    TRANSR = "transr"
    TRANSD = "transd"


@dataclass
class EmbeddingModel:
    """Entity/relation vectors plus kind-specific projection parameters.

    Array shapes:
      entity_vecs    (n_entities, d_e)
      relation_vecs  (n_relations, d_r)
      rel_proj_mats  (n_relations, d_r, d_e)   TransR only
      ent_proj_vecs  (n_entities, d_e)         TransD only
      rel_proj_vecs  (n_relations, d_r)        TransD only
    """

    kind: ModelKind
    entity_vecs: np.ndarray
    relation_vecs: np.ndarray
    rel_proj_mats: np.ndarray | None = None
    ent_proj_vecs: np.ndarray | None = None
    rel_proj_vecs: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_entities(self) -> int:
        return self.entity_vecs.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_vecs.shape[0]

    @property
    def d_e(self) -> int:
        return self.entity_vecs.shape[1]

    @property
    def d_r(self) -> int:
        return self.relation_vecs.shape[1]

    def param_blocks(self) -> dict[str, np.ndarray]:
        """Trainable arrays in checkpoint order."""
        blocks = {"entity_vecs": self.entity_vecs, "relation_vecs": self.relation_vecs}
        if self.kind is ModelKind.TRANSR:
            blocks["rel_proj_mats"] = self.rel_proj_mats
        elif self.kind is ModelKind.TRANSD:
            blocks["ent_proj_vecs"] = self.ent_proj_vecs
            blocks["rel_proj_vecs"] = self.rel_proj_vecs
        return blocks

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            kind=self.kind,
            entity_vecs=self.entity_vecs.copy(),
            relation_vecs=self.relation_vecs.copy(),
            rel_proj_mats=None if self.rel_proj_mats is None else self.rel_proj_mats.copy(),
            ent_proj_vecs=None if self.ent_proj_vecs is None else self.ent_proj_vecs.copy(),
            rel_proj_vecs=None if self.rel_proj_vecs is None else self.rel_proj_vecs.copy(),
            meta=dict(self.meta),
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(block).all() for block in self.param_blocks().values())


def init_model(
    kind: ModelKind,
    n_entities: int,
    n_relations: int,
    d_e: int,
    d_r: int,
    rng: np.random.Generator,
) -> EmbeddingModel:
    """Initialize parameters: uniform in [-6/sqrt(d), 6/sqrt(d)], then unit-normalized.

    TransR projection matrices start as (truncated) identities so the model
    begins at its TransE restriction; TransD projection vectors start from
    the same uniform scheme without normalization.
    """
    if kind is ModelKind.TRANSE and d_e != d_r:
        raise ConfigError("TransE requires equal entity and relation dimensions")

    def uniform_rows(n: int, d: int, normalize: bool) -> np.ndarray:
        bound = 6.0 / np.sqrt(d)
        rows = rng.uniform(-bound, bound, size=(n, d))
        if normalize:
            norms = np.linalg.norm(rows, axis=1, keepdims=True)
            rows = rows / np.maximum(norms, 1e-12)
        return rows

    model = EmbeddingModel(
        kind=kind,
        entity_vecs=uniform_rows(n_entities, d_e, normalize=True),
        relation_vecs=uniform_rows(n_relations, d_r, normalize=True),
    )
    if kind is ModelKind.TRANSR:
        eye = np.zeros((d_r, d_e))
        np.fill_diagonal(eye, 1.0)
        model.rel_proj_mats = np.broadcast_to(eye, (n_relations, d_r, d_e)).copy()
    elif kind is ModelKind.TRANSD:
        model.ent_proj_vecs = uniform_rows(n_entities, d_e, normalize=False)
        model.rel_proj_vecs = uniform_rows(n_relations, d_r, normalize=False)
    return model


def _transd_project(
    vecs: np.ndarray, proj_vecs: np.ndarray, rel_proj: np.ndarray, d_r: int
) -> np.ndarray:
    """Dynamic projection: (r_p e_p^T + I) e, computed without forming matrices."""
    d_e = vecs.shape[1]
    dots = np.einsum("bi,bi->b", proj_vecs, vecs)
    identity_part = np.zeros((vecs.shape[0], d_r))
    k = min(d_e, d_r)
    identity_part[:, :k] = vecs[:, :k]
    return rel_proj * dots[:, None] + identity_part


def score_batch(
    model: EmbeddingModel,
    heads: Sequence[int] | np.ndarray,
    relations: Sequence[int] | np.ndarray,
    tails: Sequence[int] | np.ndarray,
) -> np.ndarray:
    """Score each (head, relation, tail) row; higher means more plausible."""
    h_idx = np.asarray(heads, dtype=np.intp)
    r_idx = np.asarray(relations, dtype=np.intp)
    t_idx = np.asarray(tails, dtype=np.intp)
    h = model.entity_vecs[h_idx]
    t = model.entity_vecs[t_idx]
    r = model.relation_vecs[r_idx]
    if model.kind is ModelKind.TRANSE:
        res = h + r - t
    elif model.kind is ModelKind.TRANSR:
        mats = model.rel_proj_mats[r_idx]
        res = np.einsum("bij,bj->bi", mats, h) + r - np.einsum("bij,bj->bi", mats, t)
    elif model.kind is ModelKind.TRANSD:
        r_proj = model.rel_proj_vecs[r_idx]
        h_perp = _transd_project(h, model.ent_proj_vecs[h_idx], r_proj, model.d_r)
        t_perp = _transd_project(t, model.ent_proj_vecs[t_idx], r_proj, model.d_r)
        res = h_perp + r - t_perp
    else:  # pragma: no cover - enum is exhaustive
        raise ConfigError(f"unknown model kind {model.kind}")
    return -np.sqrt(np.einsum("bi,bi->b", res, res))


def score_triple(model: EmbeddingModel, head: int, relation: int, tail: int) -> float:
    """Score one candidate link. Ids must be valid for the parameter tables."""
    if not (0 <= head < model.n_entities and 0 <= tail < model.n_entities):
        raise ValueError(f"entity id out of range: ({head}, {relation}, {tail})")
    if not 0 <= relation < model.n_relations:
        raise ValueError(f"relation id out of range: {relation}")
    return float(score_batch(model, [head], [relation], [tail])[0])


# -- checkpoint format -------------------------------------------------------
#
# A checkpoint is a JSON header describing the model, length-prefixed with a
# little-endian uint32, followed by the raw little-endian float64 bytes of
# each parameter block in param_blocks() order.


def model_to_bytes(model: EmbeddingModel) -> bytes:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind.value,
        "n_entities": model.n_entities,
        "n_relations": model.n_relations,
        "d_e": model.d_e,
        "d_r": model.d_r,
        "blocks": [
            {"name": name, "shape": list(block.shape)}
            for name, block in model.param_blocks().items()
        ],
        "meta": model.meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<I", len(header_bytes)), header_bytes]
    for block in model.param_blocks().values():
        parts.append(np.ascontiguousarray(block, dtype="<f8").tobytes())
    return b"".join(parts)


def model_digest(model: EmbeddingModel) -> str:
    """Stable sha256 fingerprint of the serialized parameters."""
    return hashlib.sha256(model_to_bytes(model)).hexdigest()


def save_checkpoint(model: EmbeddingModel, path: str | Path) -> None:
    atomic_write_bytes(path, model_to_bytes(model))


def model_from_bytes(data: bytes) -> EmbeddingModel:
    if len(data) < 4:
        raise DataError("checkpoint truncated: missing header length")
    (header_len,) = struct.unpack("<I", data[:4])
    if len(data) < 4 + header_len:
        raise DataError("checkpoint truncated: incomplete header")
    header = json.loads(data[4 : 4 + header_len].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {header.get('format_version')!r}")
    kind = ModelKind(header["kind"])
    offset = 4 + header_len
    arrays: dict[str, np.ndarray] = {}
    for spec in header["blocks"]:
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape)) * 8
        if offset + nbytes > len(data):
            raise DataError(f"checkpoint truncated in block {spec['name']!r}")
        arrays[spec["name"]] = (
            np.frombuffer(data[offset : offset + nbytes], dtype="<f8").reshape(shape).copy()
        )
        offset += nbytes
    if offset != len(data):
        raise DataError("checkpoint has trailing bytes beyond declared blocks")
    model = EmbeddingModel(
        kind=kind,
        entity_vecs=arrays["entity_vecs"],
        relation_vecs=arrays["relation_vecs"],
        rel_proj_mats=arrays.get("rel_proj_mats"),
        ent_proj_vecs=arrays.get("ent_proj_vecs"),
        rel_proj_vecs=arrays.get("rel_proj_vecs"),
        meta=header.get("meta", {}),
    )
    expected = {
        "entity_vecs": (header["n_entities"], header["d_e"]),
        "relation_vecs": (header["n_relations"], header["d_r"]),
    }
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise DataError(f"checkpoint block {name!r} shape mismatch with header")
    return model


def load_checkpoint(path: str | Path) -> EmbeddingModel:
    return model_from_bytes(Path(path).read_bytes())
