"""Benchmark construction: splits, injected-anomaly datasets, synthetic worlds."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .anomaly import AnomalyDatapoint
from .errors import ConfigError
from .schema import SceneAnnotation

log = logging.getLogger(__name__)


# -- splitting ---------------------------------------------------------------


@dataclass
class SplitSet:
    train: list[SceneAnnotation] = field(default_factory=list)
    validation: list[SceneAnnotation] = field(default_factory=list)
    test: list[SceneAnnotation] = field(default_factory=list)


def split_annotations(
    annotations: Sequence[SceneAnnotation],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitSet:
    """Split annotations per scene type with deterministic shuffling.

    Within each type, validation and test receive floor(n * ratio)
    annotations and train takes the remainder, so train always gets at least
    one annotation per type. Types with fewer annotations than split parts go
    entirely to train with a warning, which keeps rare types trainable.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ConfigError("split ratios must be non-negative")
    by_type: dict[str, list[SceneAnnotation]] = {}
    for ann in annotations:
        by_type.setdefault(ann.scene_type, []).append(ann)
    if not by_type:
        raise ConfigError("no annotations to split")
    rng = np.random.default_rng(seed)
    split = SplitSet()
    for scene_type in sorted(by_type):
        group = sorted(by_type[scene_type], key=lambda a: a.scene_id)
        order = rng.permutation(len(group))
        group = [group[i] for i in order]
        n = len(group)
        if n < 3:
            log.warning(
                "scene type %r has only %d annotation(s); assigning all to train",
                scene_type,
                n,
            )
            split.train.extend(group)
            continue
        n_val = int(np.floor(n * ratios[1]))
        n_test = int(np.floor(n * ratios[2]))
        n_train = n - n_val - n_test
        split.train.extend(group[:n_train])
        split.validation.extend(group[n_train : n_train + n_val])
        split.test.extend(group[n_train + n_val :])
    return split


# -- anomaly dataset generation -------------------------------------------------


def _objects_by_scene_type(
    annotations: Iterable[SceneAnnotation],
) -> tuple[set[str], dict[str, set[str]]]:
    all_objects: set[str] = set()
    per_type: dict[str, set[str]] = {}
    for ann in annotations:
        objs = set(ann.objects)
        all_objects |= objs
        per_type.setdefault(ann.scene_type, set()).update(objs)
    return all_objects, per_type


def _emit_datapoints(
    eval_annotations: Iterable[SceneAnnotation],
    anomaly_pools: dict[str, list[str]],
) -> Iterator[AnomalyDatapoint]:
    for ann in eval_annotations:
        if not ann.objects:
            continue
        pool = anomaly_pools.get(ann.scene_type, [])
        for anomaly in pool:
            objects = list(ann.objects)
            if anomaly not in objects:
                objects.append(anomaly)
            yield AnomalyDatapoint(
                scene_type=ann.scene_type,
                objects=tuple(objects),
                anomaly_label=anomaly,
            )


def generate_out_of_scene(
    train_annotations: Sequence[SceneAnnotation],
    eval_annotations: Sequence[SceneAnnotation],
) -> Iterator[AnomalyDatapoint]:
    """Inject every object a scene type has never co-occurred with in training.

    For each scene type, the anomaly pool is every training object minus the
    objects seen in that type's training annotations. Each eval annotation
    emits one datapoint per pooled anomaly, appended to its object list.
    """
    if not train_annotations or not eval_annotations:
        raise ConfigError("train and eval annotation sets must be non-empty")
    all_objects, per_type = _objects_by_scene_type(train_annotations)
    pools = {
        scene_type: sorted(all_objects - seen) for scene_type, seen in per_type.items()
    }
    eval_types = {ann.scene_type for ann in eval_annotations}
    for scene_type in sorted(eval_types - set(pools)):
        pools[scene_type] = sorted(all_objects)
    yield from _emit_datapoints(eval_annotations, pools)


def generate_unique_out_of_scene(
    train_annotations: Sequence[SceneAnnotation],
    eval_annotations: Sequence[SceneAnnotation],
) -> Iterator[AnomalyDatapoint]:
    """Out-of-scene generation restricted to single-scene-type objects.

    Objects that occur in more than one scene type across training are
    excluded from every anomaly pool; such objects are plausible in several
    contexts, so injecting them would create spurious "anomalies".
    """
    if not train_annotations or not eval_annotations:
        raise ConfigError("train and eval annotation sets must be non-empty")
    all_objects, per_type = _objects_by_scene_type(train_annotations)
    type_counts: dict[str, int] = {o: 0 for o in all_objects}
    for seen in per_type.values():
        for obj in seen:
            type_counts[obj] += 1
    unique_objects = {o for o, c in type_counts.items() if c == 1}
    pools = {
        scene_type: sorted((all_objects - seen) & unique_objects)
        for scene_type, seen in per_type.items()
    }
    eval_types = {ann.scene_type for ann in eval_annotations}
    for scene_type in sorted(eval_types - set(pools)):
        pools[scene_type] = sorted(unique_objects)
    yield from _emit_datapoints(eval_annotations, pools)


@dataclass
class RestrictionReport:
    kept: int = 0
    dropped_anomaly_oov: int = 0
    dropped_too_small: int = 0

    def to_dict(self) -> dict:
        return {
            "kept": self.kept,
            "dropped_anomaly_out_of_vocabulary": self.dropped_anomaly_oov,
            "dropped_too_few_objects": self.dropped_too_small,
        }


def restrict_to_vocabulary(
    datapoints: Iterable[AnomalyDatapoint],
    vocabulary: set[str],
    min_objects: int = 5,
) -> tuple[list[AnomalyDatapoint], RestrictionReport]:
    """Drop datapoints a restricted-vocabulary model cannot be tested on.

    Datapoints whose anomaly is out of vocabulary are removed entirely;
    out-of-vocabulary context objects are stripped from the rest; datapoints
    left with fewer than ``min_objects`` objects are removed.
    """
    if min_objects < 2:
        raise ConfigError("min_objects must be at least 2")
    report = RestrictionReport()
    kept: list[AnomalyDatapoint] = []
    for dp in datapoints:
        if dp.anomaly_label not in vocabulary:
            report.dropped_anomaly_oov += 1
            continue
        objects = tuple(o for o in dp.objects if o in vocabulary)
        if len(objects) < min_objects:
            report.dropped_too_small += 1
            continue
        kept.append(
            AnomalyDatapoint(
                scene_type=dp.scene_type, objects=objects, anomaly_label=dp.anomaly_label
            )
        )
    report.kept = len(kept)
    if not kept:
        log.warning("vocabulary restriction removed every datapoint")
    return kept, report


# -- synthetic worlds --------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticWorldSpec:
    """Clustered object-scene world for desk-scale benchmarks.

    Each scene type owns a cluster of objects; a fraction of each cluster is
    shared with the next cluster (cyclically), mimicking real scene types
    with overlapping contents. Annotations sample objects from their scene's
    cluster without replacement.
    """

    n_scene_types: int = 5
    objects_per_scene_cluster: int = 20
    overlap_fraction: float = 0.1
    annotations_per_scene: int = 40
    objects_per_annotation: int = 8
    seed: int = 0

    def validate(self) -> None:
        if min(
            self.n_scene_types,
            self.objects_per_scene_cluster,
            self.annotations_per_scene,
            self.objects_per_annotation,
        ) <= 0:
            raise ConfigError("all synthetic world counts must be positive")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ConfigError("overlap_fraction must lie in [0, 1)")
        if self.objects_per_annotation > self.objects_per_scene_cluster:
            raise ConfigError("objects_per_annotation exceeds the cluster size")
        shared = int(round(self.overlap_fraction * self.objects_per_scene_cluster))
        if shared > 0 and self.n_scene_types < 2:
            raise ConfigError("overlap requires at least two scene types")

    def to_dict(self) -> dict:
        return {
            "n_scene_types": self.n_scene_types,
            "objects_per_scene_cluster": self.objects_per_scene_cluster,
            "overlap_fraction": self.overlap_fraction,
            "annotations_per_scene": self.annotations_per_scene,
            "objects_per_annotation": self.objects_per_annotation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticWorldSpec":
        return cls(**d)


def generate_synthetic_world(
    spec: SyntheticWorldSpec,
) -> tuple[list[SceneAnnotation], dict[str, list[str]]]:
    """Sample a clustered annotation corpus plus its ground-truth affinity map.

    Cluster i consists of its own core objects plus the first ``shared``
    objects of cluster i+1's core, so shared objects belong to exactly two
    scene types. The affinity map gives, for every object, the scene types
    whose cluster contains it; objects with a single affinity are the
    ground-truth-unique anomaly candidates for every other scene type.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_scene_types
    cluster_size = spec.objects_per_scene_cluster
    shared = int(round(spec.overlap_fraction * cluster_size))
    core_size = cluster_size - shared
    scene_types = [f"scene_{i:02d}" for i in range(n)]
    cores = [
        [f"obj_{i * core_size + j:04d}" for j in range(core_size)] for i in range(n)
    ]
    clusters = {
        scene_types[i]: cores[i] + cores[(i + 1) % n][:shared] for i in range(n)
    }
    affinity: dict[str, list[str]] = {}
    for scene_type in scene_types:
        for obj in clusters[scene_type]:
            affinity.setdefault(obj, []).append(scene_type)
    annotations: list[SceneAnnotation] = []
    for scene_type in scene_types:
        cluster = clusters[scene_type]
        for a in range(spec.annotations_per_scene):
            picks = rng.choice(len(cluster), size=spec.objects_per_annotation, replace=False)
            annotations.append(
                SceneAnnotation(
                    scene_id=f"{scene_type}_ann_{a:04d}",
                    scene_type=scene_type,
                    objects=tuple(cluster[int(p)] for p in sorted(picks)),
                )
            )
    return annotations, {obj: sorted(types) for obj, types in sorted(affinity.items())}
