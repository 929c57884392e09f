import pytest

from scenekg.schema import (
    AT_LOCATION,
    LOCATED_NEAR,
    OBJECT,
    SCENE,
    SceneAnnotation,
    household_schema,
    normalize_label,
)


def test_normalize_label_collapses_whitespace_and_case():
    assert normalize_label("  Coffee   Maker ") == "coffee maker"
    assert normalize_label("TOASTER") == "toaster"
    assert normalize_label("a\tb\nc") == "a b c"


def test_household_schema_shape():
    relations = household_schema()
    by_name = {r.name: r for r in relations}
    al = by_name[AT_LOCATION]
    ln = by_name[LOCATED_NEAR]
    assert (al.head_type, al.tail_type, al.symmetric) == (OBJECT, SCENE, False)
    assert (ln.head_type, ln.tail_type, ln.symmetric) == (OBJECT, OBJECT, True)
    assert [r.id for r in relations] == [0, 1]


def test_annotation_parse_normalizes_and_deduplicates():
    ann = SceneAnnotation.from_record(
        {"scene_id": "img1", "scene_type": " Kitchen ", "objects": ["Oven", "oven ", "Toaster"]}
    )
    assert ann.scene_type == "kitchen"
    assert ann.objects == ("oven", "toaster")


@pytest.mark.parametrize(
    "record",
    [
        {"scene_type": "kitchen", "objects": []},
        {"scene_id": "x", "objects": []},
        {"scene_id": "x", "scene_type": "kitchen"},
        {"scene_id": "x", "scene_type": "   ", "objects": []},
        {"scene_id": "x", "scene_type": "kitchen", "objects": "oven"},
        {"scene_id": "x", "scene_type": "kitchen", "objects": [1, 2]},
        {"scene_id": 3, "scene_type": "kitchen", "objects": []},
    ],
)
def test_annotation_parse_rejects_malformed(record):
    with pytest.raises(ValueError):
        SceneAnnotation.from_record(record)


def test_annotation_round_trip():
    ann = SceneAnnotation.from_record(
        {"scene_id": "img9", "scene_type": "garden", "objects": ["rose", "hose"]}
    )
    assert SceneAnnotation.from_record(ann.to_record()) == ann
