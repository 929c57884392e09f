"""Precomputed link-score tables: score once, run anomaly inference forever.

Scoring every schema-valid pair is the expensive part of inference
(quadratic in entity count), but the resulting matrices are reusable for any
number of inputs. A ScoreTable either materializes those matrices ("dense")
or, when the estimated footprint exceeds a caller-supplied memory budget,
keeps the model and computes lookups on demand with identical semantics.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .graph import KnowledgeGraph
from .models import EmbeddingModel, model_digest, score_batch
from .schema import AT_LOCATION, LOCATED_NEAR, OBJECT, SCENE

log = logging.getLogger(__name__)

_BUILD_CHUNK_ROWS = 256


class ScoreTable:
    """Link scores for all object-object and object-scene pairs.

    LocatedNear lookups are symmetrized: lookup(a, b) is the mean of the raw
    scores in both orientations, so lookup(a, b) == lookup(b, a) always.
    """

    def __init__(
        self,
        object_labels: Sequence[str],
        scene_labels: Sequence[str],
        located_near: np.ndarray | None = None,
        at_location: np.ndarray | None = None,
        model: EmbeddingModel | None = None,
        object_entity_ids: np.ndarray | None = None,
        scene_entity_ids: np.ndarray | None = None,
        relation_ids: tuple[int, int] | None = None,
        provenance: dict | None = None,
    ):
        self.object_labels = list(object_labels)
        self.scene_labels = list(scene_labels)
        self.object_index = {label: i for i, label in enumerate(self.object_labels)}
        self.scene_index = {label: i for i, label in enumerate(self.scene_labels)}
        self.located_near = located_near
        self.at_location = at_location
        self._model = model
        self._object_entity_ids = object_entity_ids
        self._scene_entity_ids = scene_entity_ids
        self._relation_ids = relation_ids
        self.provenance = provenance or {}
        if located_near is None and model is None:
            raise ConfigError("score table needs either dense matrices or a model")

    @property
    def dense(self) -> bool:
        return self.located_near is not None

    @property
    def n_objects(self) -> int:
        return len(self.object_labels)

    @property
    def n_scenes(self) -> int:
        return len(self.scene_labels)

    def has_object(self, label: str) -> bool:
        return label in self.object_index

    def has_scene(self, label: str) -> bool:
        return label in self.scene_index

    # -- lookups -------------------------------------------------------------

    def _raw_ln(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        if self.dense:
            return self.located_near[np.ix_(rows, cols)]
        ln_rel = self._relation_ids[1]
        heads = np.repeat(self._object_entity_ids[rows], len(cols))
        tails = np.tile(self._object_entity_ids[cols], len(rows))
        rels = np.full(len(heads), ln_rel, dtype=np.intp)
        return score_batch(self._model, heads, rels, tails).reshape(len(rows), len(cols))

    def ln_pairs(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        """Symmetrized LocatedNear scores for every (row, col) object-index pair."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        return (self._raw_ln(rows, cols) + self._raw_ln(cols, rows).T) / 2.0

    def al_pairs(self, obj_rows: Sequence[int], scene_cols: Sequence[int]) -> np.ndarray:
        """AtLocation scores for every (object-index, scene-index) pair."""
        obj_rows = np.asarray(obj_rows, dtype=np.intp)
        scene_cols = np.asarray(scene_cols, dtype=np.intp)
        if self.dense:
            return self.at_location[np.ix_(obj_rows, scene_cols)]
        al_rel = self._relation_ids[0]
        heads = np.repeat(self._object_entity_ids[obj_rows], len(scene_cols))
        tails = np.tile(self._scene_entity_ids[scene_cols], len(obj_rows))
        rels = np.full(len(heads), al_rel, dtype=np.intp)
        return score_batch(self._model, heads, rels, tails).reshape(len(obj_rows), len(scene_cols))

    def ln(self, a: str, b: str) -> float:
        """Symmetrized LocatedNear score between two object labels."""
        return float(self.ln_pairs([self.object_index[a]], [self.object_index[b]])[0, 0])

    def al(self, obj: str, scene: str) -> float:
        """AtLocation score between an object label and a scene label."""
        return float(self.al_pairs([self.object_index[obj]], [self.scene_index[scene]])[0, 0])

    # -- persistence -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        if not self.dense:
            raise ConfigError("an on-demand score table cannot be persisted; rebuild it dense")
        header = json.dumps(
            {
                "object_labels": self.object_labels,
                "scene_labels": self.scene_labels,
                "provenance": self.provenance,
            },
            sort_keys=True,
        )
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.savez(
                fh,
                located_near=self.located_near,
                at_location=self.at_location,
                header=np.array(header),
            )
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "ScoreTable":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            return cls(
                object_labels=header["object_labels"],
                scene_labels=header["scene_labels"],
                located_near=data["located_near"].copy(),
                at_location=data["at_location"].copy(),
                provenance=header.get("provenance", {}),
            )


def estimate_table_bytes(n_objects: int, n_scenes: int) -> int:
    return 8 * (n_objects * n_objects + n_objects * n_scenes)


def _pair_scores(
    model: EmbeddingModel,
    head_ids: np.ndarray,
    relation: int,
    tail_ids: np.ndarray,
) -> np.ndarray:
    """Dense (len(head_ids), len(tail_ids)) score matrix, filled in row chunks."""
    out = np.empty((len(head_ids), len(tail_ids)))
    rels = np.full(len(tail_ids), relation, dtype=np.intp)
    for start in range(0, len(head_ids), _BUILD_CHUNK_ROWS):
        block = head_ids[start : start + _BUILD_CHUNK_ROWS]
        heads = np.repeat(block, len(tail_ids))
        tails = np.tile(tail_ids, len(block))
        rel_col = np.tile(rels, len(block))
        out[start : start + len(block)] = score_batch(model, heads, rel_col, tails).reshape(
            len(block), len(tail_ids)
        )
    return out


def build_score_table(
    model: EmbeddingModel,
    graph: KnowledgeGraph,
    memory_budget_bytes: int | None = None,
) -> ScoreTable:
    """Score all object-object and object-scene pairs of the graph's entities.

    When ``memory_budget_bytes`` is given and the dense matrices would exceed
    it, returns an on-demand table backed by the model with identical lookup
    semantics instead of materializing.
    """
    al = graph.relation_by_name(AT_LOCATION)
    ln = graph.relation_by_name(LOCATED_NEAR)
    if al is None or ln is None:
        raise DataError("graph schema lacks the object-scene relations")
    object_ids = np.asarray(graph.entities_of_type(OBJECT), dtype=np.intp)
    scene_ids = np.asarray(graph.entities_of_type(SCENE), dtype=np.intp)
    if model.n_entities != graph.n_entities:
        raise DataError(
            f"model covers {model.n_entities} entities but graph has {graph.n_entities}"
        )
    object_labels = [graph.entity(int(i)).label for i in object_ids]
    scene_labels = [graph.entity(int(i)).label for i in scene_ids]
    provenance = {
        "model_digest": model_digest(model),
        "kind": model.kind.value,
        "d_e": model.d_e,
        "d_r": model.d_r,
    }
    estimated = estimate_table_bytes(len(object_ids), len(scene_ids))
    if memory_budget_bytes is not None and estimated > memory_budget_bytes:
        log.warning(
            "estimated score table size %d bytes exceeds budget %d; using on-demand lookups",
            estimated,
            memory_budget_bytes,
        )
        return ScoreTable(
            object_labels,
            scene_labels,
            model=model,
            object_entity_ids=object_ids,
            scene_entity_ids=scene_ids,
            relation_ids=(al.id, ln.id),
            provenance=provenance,
        )
    located_near = _pair_scores(model, object_ids, ln.id, object_ids)
    at_location = _pair_scores(model, object_ids, al.id, scene_ids)
    return ScoreTable(
        object_labels,
        scene_labels,
        located_near=located_near,
        at_location=at_location,
        provenance=provenance,
    )
