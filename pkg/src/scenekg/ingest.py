"""Build training graphs from scene annotations and apply dataset filters."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

from .errors import ConfigError, DataError
from .graph import KnowledgeGraph, SchemaViolation
from .schema import (
    AT_LOCATION,
    LOCATED_NEAR,
    OBJECT,
    SCENE,
    SceneAnnotation,
    Triple,
    normalize_label,
)

log = logging.getLogger(__name__)


@dataclass
class IngestStats:
    """Entity and link accounting for a built graph, in link-count-table shape."""

    n_annotations: int = 0
    n_entities: int = 0
    links: dict[str, int] = field(default_factory=dict)

    @property
    def total_links(self) -> int:
        return sum(self.links.values())

    def to_dict(self) -> dict:
        return {
            "annotations": self.n_annotations,
            "entities": self.n_entities,
            "links": dict(self.links),
            "total_links": self.total_links,
        }


@dataclass
class MergeStats:
    added: int = 0
    duplicates: int = 0
    rejected: int = 0
    rejections: list[str] = field(default_factory=list)


def _graph_stats(graph: KnowledgeGraph, n_annotations: int = 0) -> IngestStats:
    return IngestStats(
        n_annotations=n_annotations,
        n_entities=graph.n_entities,
        links=graph.link_counts(),
    )


def ingest_annotations(
    annotations: Iterable[SceneAnnotation],
    object_whitelist: set[str] | None = None,
) -> tuple[KnowledgeGraph, IngestStats]:
    """Turn co-occurrence annotations into a training knowledge graph.

    Every surviving object in an annotation gets an AtLocation link to the
    annotation's scene type, and every unordered pair of distinct surviving
    objects gets a LocatedNear link (stored in both orientations). Objects
    outside ``object_whitelist`` (when given) are dropped first. Triples are
    deduplicated across annotations, so ingesting the same annotation twice
    is a no-op.
    """
    graph = KnowledgeGraph()
    al = graph.relation_by_name(AT_LOCATION)
    ln = graph.relation_by_name(LOCATED_NEAR)
    assert al is not None and ln is not None
    whitelist = (
        {normalize_label(c) for c in object_whitelist} if object_whitelist is not None else None
    )
    count = 0
    for ann in annotations:
        count += 1
        objects = [o for o in ann.objects if whitelist is None or o in whitelist]
        if not objects:
            continue
        scene_eid = graph.add_entity(ann.scene_type, SCENE)
        object_eids = [graph.add_entity(o, OBJECT) for o in objects]
        for oid in object_eids:
            graph.add_triple(oid, al.id, scene_eid)
        for a, b in combinations(object_eids, 2):
            graph.add_triple(a, ln.id, b)
    if count == 0:
        raise DataError("annotation stream is empty")
    graph.freeze()
    return graph, _graph_stats(graph, n_annotations=count)


def merge_external_triples(
    graph: KnowledgeGraph,
    extra: Iterable[tuple[str, str, str]],
) -> MergeStats:
    """Fold externally sourced (head, relation, tail) label rows into the graph.

    New entities are created as needed; duplicates are silently skipped;
    schema-invalid rows are rejected, counted and reported. A label already
    known under a different entity type (e.g. a scene used as a LocatedNear
    head) counts as schema-invalid rather than spawning a same-label entity
    of the other type. Returns counts of stored triples actually added (a
    fresh symmetric link adds both orientations).
    """
    was_frozen = graph._frozen
    graph._frozen = False
    stats = MergeStats()
    label_types: dict[str, set[str]] = {}
    for ent in graph.entities:
        label_types.setdefault(ent.label, set()).add(ent.etype)

    def resolve(label: str, etype: str) -> int | None:
        known = label_types.get(label)
        if known is not None and etype not in known:
            return None
        label_types.setdefault(label, set()).add(etype)
        return graph.add_entity(normalize_label(label), etype)

    try:
        for row_num, (head_label, rel_name, tail_label) in enumerate(extra, start=1):
            rel = graph.relation_by_name(rel_name)
            if rel is None:
                stats.rejected += 1
                stats.rejections.append(f"row {row_num}: unknown relation {rel_name!r}")
                continue
            head = resolve(normalize_label(head_label), rel.head_type)
            tail = resolve(normalize_label(tail_label), rel.tail_type)
            if head is None or tail is None:
                stats.rejected += 1
                stats.rejections.append(
                    f"row {row_num}: label bound to a different entity type for {rel.name}"
                )
                continue
            try:
                added = graph.add_triple(head, rel.id, tail)
            except SchemaViolation as exc:
                stats.rejected += 1
                stats.rejections.append(f"row {row_num}: {exc}")
                continue
            if added:
                stats.added += added
            else:
                stats.duplicates += 1
    finally:
        graph._frozen = was_frozen
    for message in stats.rejections:
        log.warning("external triple rejected: %s", message)
    return stats


def _rebuild(graph: KnowledgeGraph, keep_triples: set[Triple], keep_entity) -> KnowledgeGraph:
    """Rebuild a graph from surviving triples, recompacting entity ids.

    ``keep_entity(Entity) -> bool`` decides which entities survive; surviving
    entities keep their relative order, so compaction is deterministic.
    """
    out = KnowledgeGraph(graph.relations)
    id_map: dict[int, int] = {}
    for ent in graph.entities:
        if keep_entity(ent):
            id_map[ent.id] = out.add_entity(ent.label, ent.etype)
    for h, r, t in sorted(keep_triples):
        out._insert(Triple(id_map[h], r, id_map[t]))
    return out.freeze()


def apply_frequency_filter(
    graph: KnowledgeGraph,
    annotations: Iterable[SceneAnnotation],
    scene_co_threshold: float,
    object_co_threshold: float,
) -> KnowledgeGraph:
    """Drop infrequent links, producing the "Filtered" graph variant.

    An AtLocation link (o, s) survives when the fraction of type-s
    annotations containing o is at least ``scene_co_threshold``. A
    LocatedNear link (a, b) survives when co-occurrence count divided by
    min(count(a), count(b)) is at least ``object_co_threshold``. Links with
    no annotation evidence (e.g. merged from an external source) count as
    frequency zero. Entities left without links are removed and ids
    recompacted.
    """
    if not 0.0 <= scene_co_threshold <= 1.0 or not 0.0 <= object_co_threshold <= 1.0:
        raise ConfigError("frequency thresholds must lie in [0, 1]")
    annotations = list(annotations)
    scene_totals: dict[str, int] = {}
    object_in_scene: dict[tuple[str, str], int] = {}
    object_totals: dict[str, int] = {}
    pair_counts: dict[tuple[str, str], int] = {}
    for ann in annotations:
        scene_totals[ann.scene_type] = scene_totals.get(ann.scene_type, 0) + 1
        for o in ann.objects:
            key = (o, ann.scene_type)
            object_in_scene[key] = object_in_scene.get(key, 0) + 1
            object_totals[o] = object_totals.get(o, 0) + 1
        for a, b in combinations(sorted(ann.objects), 2):
            pair_counts[(a, b)] = pair_counts.get((a, b), 0) + 1

    al = graph.relation_by_name(AT_LOCATION)
    ln = graph.relation_by_name(LOCATED_NEAR)
    keep = set()
    for triple in graph.triples:
        h_label = graph.entities[triple.head].label
        t_label = graph.entities[triple.tail].label
        if al is not None and triple.relation == al.id:
            denom = scene_totals.get(t_label, 0)
            ratio = object_in_scene.get((h_label, t_label), 0) / denom if denom else 0.0
            if ratio >= scene_co_threshold:
                keep.add(triple)
        elif ln is not None and triple.relation == ln.id:
            pair = (h_label, t_label) if h_label <= t_label else (t_label, h_label)
            denom = min(object_totals.get(h_label, 0), object_totals.get(t_label, 0))
            ratio = pair_counts.get(pair, 0) / denom if denom else 0.0
            if ratio >= object_co_threshold:
                keep.add(triple)
        else:
            keep.add(triple)
    linked = {eid for t in keep for eid in (t.head, t.tail)}
    return _rebuild(graph, keep, keep_entity=lambda ent: ent.id in linked)


def apply_class_whitelist(graph: KnowledgeGraph, classes: set[str]) -> KnowledgeGraph:
    """Keep only objects whose label is in ``classes`` (the "Detector" variant).

    Links touching a removed object are dropped with it; scene entities are
    retained regardless of remaining links. Ids are recompacted.
    """
    if not classes:
        raise ConfigError("class whitelist is empty")
    allowed = {normalize_label(c) for c in classes}

    def survives(ent) -> bool:
        return ent.etype != OBJECT or ent.label in allowed

    keep = {
        t
        for t in graph.triples
        if survives(graph.entities[t.head]) and survives(graph.entities[t.tail])
    }
    return _rebuild(graph, keep, keep_entity=survives)


def graph_stats(graph: KnowledgeGraph, n_annotations: int = 0) -> IngestStats:
    """Public stats snapshot for an already-built graph."""
    return _graph_stats(graph, n_annotations)


def triples_from_annotations(
    graph: KnowledgeGraph, annotations: Iterable[SceneAnnotation]
) -> tuple[list[Triple], dict[str, int]]:
    """Held-out triples an annotation set implies over an existing vocabulary.

    Builds the same AtLocation/LocatedNear links as ingestion, resolved
    against ``graph`` without mutating it. Links touching entities absent
    from the graph and links already stored in the graph are skipped and
    counted; LocatedNear pairs contribute both orientations, matching the
    graph's storage convention.
    """
    al = graph.relation_by_name(AT_LOCATION)
    ln = graph.relation_by_name(LOCATED_NEAR)
    skipped = {"unknown_entities": 0, "in_training": 0}
    out: dict[Triple, None] = {}

    def consider(triple: Triple) -> None:
        if triple in graph.triples:
            skipped["in_training"] += 1
        else:
            out.setdefault(triple)

    for ann in annotations:
        scene_eid = graph.entity_id(ann.scene_type, SCENE)
        object_eids = {o: graph.entity_id(o, OBJECT) for o in ann.objects}
        for o, eid in object_eids.items():
            if eid is None or al is None:
                skipped["unknown_entities"] += 1
                continue
            if scene_eid is None:
                skipped["unknown_entities"] += 1
                continue
            consider(Triple(eid, al.id, scene_eid))
        for a, b in combinations(ann.objects, 2):
            ea, eb = object_eids[a], object_eids[b]
            if ea is None or eb is None or ln is None:
                skipped["unknown_entities"] += 1
                continue
            consider(Triple(ea, ln.id, eb))
            consider(Triple(eb, ln.id, ea))
    return list(out), skipped


def format_link_table(rows: list[tuple[str, IngestStats]]) -> str:
    """Render per-graph entity and link counts as an aligned text table."""
    headers = ["Graph", "Entities", AT_LOCATION, LOCATED_NEAR, "Total"]
    body = []
    for name, stats in rows:
        al = stats.links.get(AT_LOCATION, 0)
        ln = stats.links.get(LOCATED_NEAR, 0)
        body.append([name, str(stats.n_entities), str(al), str(ln), str(al + ln)])
    widths = [max(len(headers[i]), *(len(r[i]) for r in body)) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    for row in body:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)
