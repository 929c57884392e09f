"""Knowledge graph container: entity registry, triple set, lookup indices."""

from __future__ import annotations

import json
from pathlib import Path

from .errors import DataError
from .io import atomic_write_text
from .schema import Entity, RelationType, Triple, household_schema


class SchemaViolation(ValueError):
    """Triple does not satisfy the relation's head/tail type constraints."""


class KnowledgeGraph:
    """Directed triple store over typed entities.

    Entities get dense integer ids in first-seen order. Triples are
    deduplicated; adding a triple for a symmetric relation stores both
    orientations. ``by_head_relation`` / ``by_tail_relation`` index the
    triple set for membership tests and candidate enumeration and can be
    rebuilt from scratch to verify consistency.
    """

    def __init__(self, relations: list[RelationType] | None = None):
        self.relations: list[RelationType] = (
            list(relations) if relations is not None else household_schema()
        )
        self._relations_by_name = {r.name: r for r in self.relations}
        self.entities: list[Entity] = []
        self._entity_ids: dict[tuple[str, str], int] = {}
        self._entities_by_type: dict[str, list[int]] = {}
        self.triples: set[Triple] = set()
        self.by_head_relation: dict[tuple[int, int], set[int]] = {}
        self.by_tail_relation: dict[tuple[int, int], set[int]] = {}
        self._frozen = False

    # -- entities ----------------------------------------------------------

    def add_entity(self, label: str, etype: str) -> int:
        """Return the id for (label, etype), creating the entity if new."""
        key = (label, etype)
        eid = self._entity_ids.get(key)
        if eid is None:
            self._check_mutable()
            eid = len(self.entities)
            self.entities.append(Entity(id=eid, label=label, etype=etype))
            self._entity_ids[key] = eid
            self._entities_by_type.setdefault(etype, []).append(eid)
        return eid

    def entity_id(self, label: str, etype: str) -> int | None:
        return self._entity_ids.get((label, etype))

    def entity(self, eid: int) -> Entity:
        return self.entities[eid]

    def entities_of_type(self, etype: str) -> list[int]:
        """Ids of all entities with the given type, in id order."""
        return list(self._entities_by_type.get(etype, []))

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    # -- relations ---------------------------------------------------------

    def relation_by_name(self, name: str) -> RelationType | None:
        return self._relations_by_name.get(name)

    def relation(self, rid: int) -> RelationType:
        return self.relations[rid]

    # -- triples -----------------------------------------------------------

    def validate_triple(self, head: int, relation: int, tail: int) -> None:
        if not (0 <= head < self.n_entities and 0 <= tail < self.n_entities):
            raise SchemaViolation(f"entity id out of range in ({head}, {relation}, {tail})")
        if not 0 <= relation < len(self.relations):
            raise SchemaViolation(f"unknown relation id {relation}")
        rel = self.relations[relation]
        h_type = self.entities[head].etype
        t_type = self.entities[tail].etype
        if h_type != rel.head_type or t_type != rel.tail_type:
            raise SchemaViolation(
                f"({h_type}, {rel.name}, {t_type}) violates schema "
                f"({rel.head_type}, {rel.name}, {rel.tail_type})"
            )
        if h_type == t_type and head == tail:
            raise SchemaViolation(f"self-loop ({head}, {rel.name}, {head})")

    def add_triple(self, head: int, relation: int, tail: int) -> int:
        """Insert a triple (and its mirror for symmetric relations).

        Returns the number of stored triples actually added (0 if all were
        already present). Raises SchemaViolation on type mismatch.
        """
        self._check_mutable()
        self.validate_triple(head, relation, tail)
        added = self._insert(Triple(head, relation, tail))
        if self.relations[relation].symmetric:
            added += self._insert(Triple(tail, relation, head))
        return added

    def _insert(self, triple: Triple) -> int:
        if triple in self.triples:
            return 0
        self.triples.add(triple)
        h, r, t = triple
        self.by_head_relation.setdefault((h, r), set()).add(t)
        self.by_tail_relation.setdefault((t, r), set()).add(h)
        return 1

    def has_triple(self, head: int, relation: int, tail: int) -> bool:
        return Triple(head, relation, tail) in self.triples

    def triple_count(self, relation_name: str) -> int:
        rel = self._relations_by_name.get(relation_name)
        if rel is None:
            return 0
        return sum(1 for t in self.triples if t.relation == rel.id)

    def link_counts(self) -> dict[str, int]:
        """Per-relation link counts; symmetric relations report stored/2."""
        counts = {}
        for rel in self.relations:
            stored = self.triple_count(rel.name)
            counts[rel.name] = stored // 2 if rel.symmetric else stored
        return counts

    # -- immutability ------------------------------------------------------

    def freeze(self) -> "KnowledgeGraph":
        """Mark construction finished; further mutation raises."""
        self._frozen = True
        return self

    def _check_mutable(self) -> None:
        if self._frozen:
            raise DataError("graph is frozen; build a new graph instead of mutating")

    # -- index maintenance ---------------------------------------------------

    def rebuilt_indices(self) -> tuple[dict, dict]:
        """Recompute both indices from the triple set alone."""
        by_head: dict[tuple[int, int], set[int]] = {}
        by_tail: dict[tuple[int, int], set[int]] = {}
        for h, r, t in self.triples:
            by_head.setdefault((h, r), set()).add(t)
            by_tail.setdefault((t, r), set()).add(h)
        return by_head, by_tail

    def verify_indices(self) -> bool:
        by_head, by_tail = self.rebuilt_indices()
        return by_head == self.by_head_relation and by_tail == self.by_tail_relation

    # -- persistence ---------------------------------------------------------

    def sorted_triples(self) -> list[Triple]:
        return sorted(self.triples, key=lambda t: (t.relation, t.head, t.tail))


def _sidecar_path(tsv_path: Path) -> Path:
    return tsv_path.with_suffix(".json")


def save_graph(graph: KnowledgeGraph, tsv_path: str | Path) -> None:
    """Write the triple set as TSV plus a JSON sidecar with entity/relation tables.

    The TSV has three columns (head label, relation name, tail label) in a
    deterministic sort order; the sidecar preserves ids so a load reproduces
    the graph exactly.
    """
    tsv_path = Path(tsv_path)
    lines = []
    for h, r, t in graph.sorted_triples():
        lines.append(
            f"{graph.entities[h].label}\t{graph.relations[r].name}\t{graph.entities[t].label}\n"
        )
    atomic_write_text(tsv_path, "".join(lines))
    sidecar = {
        "entities": [
            {"id": e.id, "label": e.label, "etype": e.etype} for e in graph.entities
        ],
        "relations": [
            {
                "id": r.id,
                "name": r.name,
                "head_type": r.head_type,
                "tail_type": r.tail_type,
                "symmetric": r.symmetric,
            }
            for r in graph.relations
        ],
    }
    atomic_write_text(
        _sidecar_path(tsv_path), json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )


def load_graph(tsv_path: str | Path) -> KnowledgeGraph:
    """Load a graph written by :func:`save_graph` (lossless round-trip)."""
    tsv_path = Path(tsv_path)
    sidecar_path = _sidecar_path(tsv_path)
    try:
        sidecar = json.loads(sidecar_path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"graph sidecar not found: {sidecar_path}") from exc
    relations = [
        RelationType(
            id=r["id"],
            name=r["name"],
            head_type=r["head_type"],
            tail_type=r["tail_type"],
            symmetric=r["symmetric"],
        )
        for r in sorted(sidecar["relations"], key=lambda r: r["id"])
    ]
    graph = KnowledgeGraph(relations)
    for rec in sorted(sidecar["entities"], key=lambda e: e["id"]):
        eid = graph.add_entity(rec["label"], rec["etype"])
        if eid != rec["id"]:
            raise DataError(f"non-contiguous entity ids in sidecar at id {rec['id']}")
    with open(tsv_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{tsv_path}:{lineno}: expected 3 tab-separated columns")
            head_label, rel_name, tail_label = parts
            rel = graph.relation_by_name(rel_name)
            if rel is None:
                raise DataError(f"{tsv_path}:{lineno}: unknown relation {rel_name!r}")
            head = graph.entity_id(head_label, rel.head_type)
            tail = graph.entity_id(tail_label, rel.tail_type)
            if head is None or tail is None:
                raise DataError(f"{tsv_path}:{lineno}: entity missing from sidecar")
            graph._insert(Triple(head, rel.id, tail))
    return graph.freeze()
