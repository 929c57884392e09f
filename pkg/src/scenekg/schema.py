"""Entity, relation and annotation types for object-scene knowledge graphs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, NamedTuple

# Entity types are plain strings so new kinds can be added without touching
# any graph code. The household instantiation uses exactly these two.
OBJECT = "object"
SCENE = "scene"

AT_LOCATION = "AtLocation"
LOCATED_NEAR = "LocatedNear"


def normalize_label(label: str) -> str:
    """Lowercase, trim and collapse internal whitespace runs to single spaces."""
    return " ".join(label.strip().lower().split())


@dataclass(frozen=True)
class Entity:
    """A graph node: dense integer id, normalized label, entity type."""

    id: int
    label: str
    etype: str


@dataclass(frozen=True)
class RelationType:
    """A typed edge label restricting which entity types it may connect."""

    id: int
    name: str
    head_type: str
    tail_type: str
    symmetric: bool = False


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


def household_schema() -> list[RelationType]:
    """The object/scene relation schema: objects sit in scenes and near each other."""
    return [
        RelationType(0, AT_LOCATION, head_type=OBJECT, tail_type=SCENE, symmetric=False),
        RelationType(1, LOCATED_NEAR, head_type=OBJECT, tail_type=OBJECT, symmetric=True),
    ]


@dataclass(frozen=True)
class SceneAnnotation:
    """One labeled scene: its type and the set of object labels seen in it.

    ``objects`` is stored as an ordered, deduplicated tuple of normalized
    labels; duplicates in the source record are collapsed on construction.
    """

    scene_id: str
    scene_type: str
    objects: tuple[str, ...]

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "SceneAnnotation":
        """Build from a parsed JSON record, normalizing and deduplicating labels.

        Raises ValueError on missing fields, wrong field types, or an empty
        scene type after normalization.
        """
        try:
            scene_id = record["scene_id"]
            scene_type = record["scene_type"]
            objects = record["objects"]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"missing field: {exc}") from exc
        if not isinstance(scene_id, str) or not isinstance(scene_type, str):
            raise ValueError("scene_id and scene_type must be strings")
        if not isinstance(objects, list) or not all(isinstance(o, str) for o in objects):
            raise ValueError("objects must be a list of strings")
        scene_type = normalize_label(scene_type)
        if not scene_type:
            raise ValueError("scene_type is empty")
        seen: dict[str, None] = {}
        for obj in objects:
            label = normalize_label(obj)
            if label:
                seen.setdefault(label)
        return cls(scene_id=scene_id, scene_type=scene_type, objects=tuple(seen))

    def to_record(self) -> dict[str, Any]:
        return {
            "scene_id": self.scene_id,
            "scene_type": self.scene_type,
            "objects": list(self.objects),
        }
