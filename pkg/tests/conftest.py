"""Shared fixtures: small corpora, trained toy models, hand-built tables."""

from __future__ import annotations

import numpy as np
import pytest

from scenekg.anomaly import AnomalyDatapoint
from scenekg.datagen import SyntheticWorldSpec, generate_synthetic_world, split_annotations
from scenekg.ingest import ingest_annotations
from scenekg.models import ModelKind
from scenekg.schema import SceneAnnotation
from scenekg.scoring import ScoreTable, build_score_table
from scenekg.training import TrainConfig, train


def make_annotation(scene_id: str, scene_type: str, objects) -> SceneAnnotation:
    return SceneAnnotation.from_record(
        {"scene_id": scene_id, "scene_type": scene_type, "objects": list(objects)}
    )


@pytest.fixture(scope="session")
def tiny_world():
    """Small clustered corpus: 3 scene types x 8 objects, disjoint clusters."""
    spec = SyntheticWorldSpec(
        n_scene_types=3,
        objects_per_scene_cluster=8,
        overlap_fraction=0.0,
        annotations_per_scene=12,
        objects_per_annotation=4,
        seed=11,
    )
    annotations, affinity = generate_synthetic_world(spec)
    return spec, annotations, affinity


@pytest.fixture(scope="session")
def tiny_split(tiny_world):
    _, annotations, _ = tiny_world
    return split_annotations(annotations, (0.8, 0.1, 0.1), seed=11)


@pytest.fixture(scope="session")
def tiny_graph(tiny_split):
    graph, _ = ingest_annotations(tiny_split.train)
    return graph


@pytest.fixture(scope="session")
def tiny_model(tiny_graph):
    config = TrainConfig(
        kind=ModelKind.TRANSE, d_e=16, d_r=16, learning_rate=0.1, epochs=120, seed=11
    )
    return train(tiny_graph, config).model


@pytest.fixture(scope="session")
def tiny_table(tiny_model, tiny_graph) -> ScoreTable:
    return build_score_table(tiny_model, tiny_graph)


def random_table(rng: np.random.Generator, n_objects: int = 10, n_scenes: int = 6) -> ScoreTable:
    """A random dense score table with realistic (non-positive) entries."""
    objects = [f"o{i:02d}" for i in range(n_objects)]
    scenes = [f"s{i:02d}" for i in range(n_scenes)]
    return ScoreTable(
        objects,
        scenes,
        located_near=-rng.uniform(0.0, 2.0, size=(n_objects, n_objects)),
        at_location=-rng.uniform(0.0, 2.0, size=(n_objects, n_scenes)),
    )


def random_datapoint(
    rng: np.random.Generator, table: ScoreTable, n_objects: int = 5
) -> AnomalyDatapoint:
    labels = [table.object_labels[i] for i in rng.choice(table.n_objects, n_objects, replace=False)]
    return AnomalyDatapoint(
        scene_type=table.scene_labels[int(rng.integers(table.n_scenes))],
        objects=tuple(labels),
        anomaly_label=labels[int(rng.integers(len(labels)))],
    )
