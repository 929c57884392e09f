import pytest

from scenekg.errors import DataError
from scenekg.graph import KnowledgeGraph, SchemaViolation, load_graph, save_graph
from scenekg.schema import AT_LOCATION, LOCATED_NEAR, OBJECT, SCENE, Triple


@pytest.fixture
def small_graph() -> KnowledgeGraph:
    g = KnowledgeGraph()
    toaster = g.add_entity("toaster", OBJECT)
    oven = g.add_entity("oven", OBJECT)
    kitchen = g.add_entity("kitchen", SCENE)
    al = g.relation_by_name(AT_LOCATION).id
    ln = g.relation_by_name(LOCATED_NEAR).id
    g.add_triple(toaster, al, kitchen)
    g.add_triple(oven, al, kitchen)
    g.add_triple(toaster, ln, oven)
    return g


def test_entity_ids_contiguous_first_seen():
    g = KnowledgeGraph()
    assert g.add_entity("a", OBJECT) == 0
    assert g.add_entity("b", OBJECT) == 1
    assert g.add_entity("a", OBJECT) == 0  # get-or-create
    assert g.add_entity("a", SCENE) == 2  # (label, etype) pairs are distinct
    assert [e.id for e in g.entities] == [0, 1, 2]


def test_symmetric_relation_stores_both_orientations(small_graph):
    ln = small_graph.relation_by_name(LOCATED_NEAR).id
    assert small_graph.has_triple(0, ln, 1)
    assert small_graph.has_triple(1, ln, 0)
    for h, r, t in small_graph.triples:
        if small_graph.relation(r).symmetric:
            assert Triple(t, r, h) in small_graph.triples


def test_duplicate_triples_not_stored(small_graph):
    al = small_graph.relation_by_name(AT_LOCATION).id
    before = len(small_graph.triples)
    assert small_graph.add_triple(0, al, 2) == 0
    assert len(small_graph.triples) == before


def test_schema_violations_rejected(small_graph):
    al = small_graph.relation_by_name(AT_LOCATION).id
    ln = small_graph.relation_by_name(LOCATED_NEAR).id
    with pytest.raises(SchemaViolation):
        small_graph.add_triple(2, al, 0)  # scene in head position
    with pytest.raises(SchemaViolation):
        small_graph.add_triple(0, ln, 2)  # scene as LocatedNear tail
    with pytest.raises(SchemaViolation):
        small_graph.add_triple(0, ln, 0)  # self-loop
    with pytest.raises(SchemaViolation):
        small_graph.add_triple(0, al, 99)  # unknown id


def test_link_counts_report_symmetric_as_undirected(small_graph):
    counts = small_graph.link_counts()
    assert counts[AT_LOCATION] == 2
    assert counts[LOCATED_NEAR] == 1  # stored count is 2
    assert small_graph.triple_count(LOCATED_NEAR) == 2


def test_indices_match_rebuild(small_graph):
    assert small_graph.verify_indices()
    by_head, by_tail = small_graph.rebuilt_indices()
    assert by_head == small_graph.by_head_relation
    assert by_tail == small_graph.by_tail_relation


def test_frozen_graph_rejects_mutation(small_graph):
    small_graph.freeze()
    with pytest.raises(DataError):
        small_graph.add_entity("sink", OBJECT)
    al = small_graph.relation_by_name(AT_LOCATION).id
    with pytest.raises(DataError):
        small_graph.add_triple(1, al, 2)


def test_tsv_round_trip_is_lossless(small_graph, tmp_path):
    path = tmp_path / "graph.tsv"
    save_graph(small_graph, path)
    loaded = load_graph(path)
    assert loaded.triples == small_graph.triples
    assert loaded.entities == small_graph.entities
    assert loaded.relations == small_graph.relations
    assert loaded.verify_indices()
    # saving the loaded graph reproduces the files byte for byte
    path2 = tmp_path / "again.tsv"
    save_graph(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()
    assert (
        (tmp_path / "graph.json").read_text().replace("graph", "again")
        == (tmp_path / "again.json").read_text().replace("graph", "again")
    )


def test_load_graph_requires_sidecar(tmp_path):
    path = tmp_path / "orphan.tsv"
    path.write_text("a\tAtLocation\tb\n")
    with pytest.raises(DataError):
        load_graph(path)
