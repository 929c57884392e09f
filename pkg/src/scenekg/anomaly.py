"""Contextual anomaly inference over a score table.

Given a set of object labels observed together, each object is tried as the
anomaly candidate and receives:

  object context   mean symmetrized LocatedNear score between the candidate
                   and every other object in the set;
  scene context    mean AtLocation score between the candidate and the m
                   scenes most compatible with the whole object set (scene
                   compatibility averages AtLocation scores over all objects,
                   candidate included, and is computed once per input);
  anomaly score    -alpha * object_context - (1 - alpha) * scene_context.

The candidate with the highest anomaly score is the predicted anomaly. Ties
break lexicographically by label so rankings are deterministic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .io import RecordError, atomic_write_text
from .schema import normalize_label
from .scoring import ScoreTable

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InferenceConfig:
    """Weighting between object and scene context, and the scene count m."""

    alpha: float = 1.0
    m: int = 3

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.m < 1:
            raise ConfigError(f"m must be a positive integer, got {self.m}")


@dataclass(frozen=True)
class AnomalyDatapoint:
    """One evaluation input: a scene's object set with an injected anomaly.

    ``scene_type`` is ground truth used only for scene-prediction accuracy;
    inference never sees it.
    """

    scene_type: str
    objects: tuple[str, ...]
    anomaly_label: str

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "AnomalyDatapoint":
        try:
            scene_type = normalize_label(record["scene_type"])
            objects_raw = record["objects"]
            anomaly = normalize_label(record["anomaly"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"missing field: {exc}") from exc
        if not isinstance(objects_raw, list) or not all(isinstance(o, str) for o in objects_raw):
            raise ValueError("objects must be a list of strings")
        seen: dict[str, None] = {}
        for obj in objects_raw:
            label = normalize_label(obj)
            if label:
                seen.setdefault(label)
        objects = tuple(seen)
        if anomaly not in objects:
            raise ValueError(f"anomaly {anomaly!r} not among the objects")
        if len(objects) < 2:
            raise ValueError("datapoint needs at least 2 objects")
        return cls(scene_type=scene_type, objects=objects, anomaly_label=anomaly)

    def to_record(self) -> dict[str, Any]:
        return {
            "scene_type": self.scene_type,
            "objects": list(self.objects),
            "anomaly": self.anomaly_label,
        }


def read_datapoints(path: str | Path) -> tuple[list[AnomalyDatapoint], list[RecordError]]:
    """Read anomaly datapoints from JSON-lines, rejecting bad lines individually."""
    datapoints: list[AnomalyDatapoint] = []
    rejects: list[RecordError] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                datapoints.append(AnomalyDatapoint.from_record(json.loads(line)))
            except (json.JSONDecodeError, ValueError) as exc:
                rejects.append(RecordError(lineno, str(exc)))
                log.warning("%s:%d: rejected datapoint: %s", path, lineno, exc)
    return datapoints, rejects


def write_datapoints(path: str | Path, datapoints: Iterable[AnomalyDatapoint]) -> None:
    lines = [json.dumps(d.to_record(), sort_keys=True) + "\n" for d in datapoints]
    atomic_write_text(path, "".join(lines))


# -- scoring primitives --------------------------------------------------------


def _dedup(labels: Iterable[str]) -> list[str]:
    seen: dict[str, None] = {}
    for label in labels:
        seen.setdefault(label)
    return list(seen)


def object_score(table: ScoreTable, candidate: str, objects: Sequence[str]) -> float:
    """Mean symmetrized LocatedNear score between the candidate and the rest.

    The mean is over the actual summands, i.e. divided by the number of other
    resolvable objects. Unresolvable labels are skipped (logged); if no other
    object resolves, raises DataError.
    """
    if not table.has_object(candidate):
        raise DataError(f"candidate {candidate!r} not in the score table vocabulary")
    others = [o for o in _dedup(objects) if o != candidate]
    resolved = [o for o in others if table.has_object(o)]
    skipped = [o for o in others if not table.has_object(o)]
    if skipped:
        log.warning("object_score: skipping unresolvable labels %s", skipped)
    if not resolved:
        raise DataError(f"no resolvable context objects for candidate {candidate!r}")
    cand_idx = [table.object_index[candidate]]
    other_idx = [table.object_index[o] for o in resolved]
    return float(np.mean(table.ln_pairs(cand_idx, other_idx)[0]))


def predict_scenes(
    table: ScoreTable, objects: Sequence[str], m: int
) -> list[tuple[str, float]]:
    """The m scenes most compatible with the object set, best first.

    Compatibility of a scene is the mean AtLocation score over all resolvable
    objects (anomaly candidate included). Ties break lexicographically;
    m larger than the scene count is clamped with a warning.
    """
    if m < 1:
        raise ConfigError(f"m must be >= 1, got {m}")
    if m > table.n_scenes:
        log.warning("m=%d exceeds scene count %d; clamping", m, table.n_scenes)
        m = table.n_scenes
    resolved = [o for o in _dedup(objects) if table.has_object(o)]
    if not resolved:
        raise DataError("no resolvable objects to predict scenes from")
    obj_idx = [table.object_index[o] for o in resolved]
    compat = table.al_pairs(obj_idx, list(range(table.n_scenes))).mean(axis=0)
    order = sorted(range(table.n_scenes), key=lambda s: (-compat[s], table.scene_labels[s]))
    return [(table.scene_labels[s], float(compat[s])) for s in order[:m]]


def scene_score(table: ScoreTable, candidate: str, predicted_scenes: Sequence[str]) -> float:
    """Mean AtLocation score between the candidate and the predicted scenes."""
    if not predicted_scenes:
        raise ConfigError("predicted_scenes is empty")
    if not table.has_object(candidate):
        raise DataError(f"candidate {candidate!r} not in the score table vocabulary")
    cand_idx = [table.object_index[candidate]]
    scene_idx = [table.scene_index[s] for s in predicted_scenes]
    return float(np.mean(table.al_pairs(cand_idx, scene_idx)[0]))


def anomaly_score(object_context: float, scene_context: float, alpha: float) -> float:
    """Negative weighted sum of the two context scores; higher = more anomalous."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    return -alpha * object_context - (1.0 - alpha) * scene_context


# -- per-input inference ---------------------------------------------------------


@dataclass(frozen=True)
class CandidateScore:
    label: str
    object_score: float
    scene_score: float
    anomaly_score: float


@dataclass
class AnomalyRanking:
    """All candidates of one input, sorted by anomaly score (best guess first)."""

    scene_type: str
    predicted_scenes: list[str]
    candidates: list[CandidateScore]
    dropped: list[str] = field(default_factory=list)

    @property
    def prediction(self) -> str:
        return self.candidates[0].label

    def top(self, k: int) -> list[str]:
        return [c.label for c in self.candidates[:k]]

    def to_record(self) -> dict[str, Any]:
        return {
            "scene_type": self.scene_type,
            "predicted_scenes": list(self.predicted_scenes),
            "candidates": [
                {
                    "label": c.label,
                    "object_score": c.object_score,
                    "scene_score": c.scene_score,
                    "anomaly_score": c.anomaly_score,
                }
                for c in self.candidates
            ],
            "dropped": list(self.dropped),
        }


def detect(
    table: ScoreTable, datapoint: AnomalyDatapoint, config: InferenceConfig
) -> AnomalyRanking:
    """Score every object of the input as an anomaly candidate.

    The scene prediction is computed once from the full (resolvable) object
    set and shared across candidates. Unresolvable labels are dropped from
    the context; fewer than two resolvable objects is an error.
    """
    config.validate()
    objects = _dedup(datapoint.objects)
    resolved = [o for o in objects if table.has_object(o)]
    dropped = [o for o in objects if not table.has_object(o)]
    if dropped:
        log.warning(
            "detect: dropping unresolvable objects %s (scene_type=%s)",
            dropped,
            datapoint.scene_type,
        )
    if len(resolved) < 2:
        raise DataError(
            f"datapoint (scene_type={datapoint.scene_type!r}, "
            f"anomaly={datapoint.anomaly_label!r}) has fewer than 2 resolvable objects"
        )
    predicted = [label for label, _ in predict_scenes(table, resolved, config.m)]
    candidates = []
    for label in resolved:
        z_obj = object_score(table, label, resolved)
        z_scn = scene_score(table, label, predicted)
        candidates.append(
            CandidateScore(
                label=label,
                object_score=z_obj,
                scene_score=z_scn,
                anomaly_score=anomaly_score(z_obj, z_scn, config.alpha),
            )
        )
    candidates.sort(key=lambda c: (-c.anomaly_score, c.label))
    return AnomalyRanking(
        scene_type=datapoint.scene_type,
        predicted_scenes=predicted,
        candidates=candidates,
        dropped=dropped,
    )


def write_rankings(path: str | Path, rankings: Iterable[AnomalyRanking]) -> None:
    lines = [json.dumps(r.to_record(), sort_keys=True) + "\n" for r in rankings]
    atomic_write_text(path, "".join(lines))


# -- dataset-level evaluation ------------------------------------------------------


@dataclass
class TopKReport:
    """Accuracy of anomaly and scene prediction at each requested cutoff."""

    n_total: int
    n_evaluated: int
    skip_reasons: dict[str, int]
    top_k_accuracy: dict[int, float]
    scene_top_k_accuracy: dict[int, float]
    miss_counts: dict[int, dict[str, int]]

    @property
    def n_skipped(self) -> int:
        return sum(self.skip_reasons.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_total": self.n_total,
            "n_evaluated": self.n_evaluated,
            "n_skipped": self.n_skipped,
            "skip_reasons": dict(self.skip_reasons),
            "top_k_accuracy": {str(k): v for k, v in sorted(self.top_k_accuracy.items())},
            "scene_top_k_accuracy": {
                str(k): v for k, v in sorted(self.scene_top_k_accuracy.items())
            },
            "miss_counts": {
                str(k): dict(sorted(v.items())) for k, v in sorted(self.miss_counts.items())
            },
        }


def evaluate_topk(
    table: ScoreTable,
    dataset: Sequence[AnomalyDatapoint],
    config: InferenceConfig,
    k_values: Sequence[int],
) -> TopKReport:
    """Top-k anomaly accuracy, scene-prediction accuracy and per-label misses.

    Datapoints whose anomaly label is outside the table vocabulary (or with
    too little resolvable context) are skipped and counted by reason, never
    silently dropped. Accuracies are over the evaluated datapoints.
    """
    if not dataset:
        raise ConfigError("anomaly dataset is empty")
    k_values = sorted(set(int(k) for k in k_values))
    hits = {k: 0 for k in k_values}
    scene_hits = {k: 0 for k in k_values}
    miss_counts: dict[int, dict[str, int]] = {k: {} for k in k_values}
    skip_reasons: dict[str, int] = {}
    n_evaluated = 0
    for dp in dataset:
        if not table.has_object(dp.anomaly_label):
            skip_reasons["anomaly_out_of_vocabulary"] = (
                skip_reasons.get("anomaly_out_of_vocabulary", 0) + 1
            )
            continue
        try:
            ranking = detect(table, dp, config)
        except DataError:
            skip_reasons["too_few_resolvable_objects"] = (
                skip_reasons.get("too_few_resolvable_objects", 0) + 1
            )
            continue
        n_evaluated += 1
        scene_order = [
            label
            for label, _ in predict_scenes(
                table, [c.label for c in ranking.candidates], table.n_scenes
            )
        ]
        for k in k_values:
            if dp.anomaly_label in ranking.top(k):
                hits[k] += 1
            else:
                by_label = miss_counts[k]
                by_label[dp.anomaly_label] = by_label.get(dp.anomaly_label, 0) + 1
            if dp.scene_type in scene_order[:k]:
                scene_hits[k] += 1
    if n_evaluated == 0:
        log.warning("no datapoint could be evaluated (all %d skipped)", len(dataset))
    denom = max(n_evaluated, 1)
    return TopKReport(
        n_total=len(dataset),
        n_evaluated=n_evaluated,
        skip_reasons=skip_reasons,
        top_k_accuracy={k: hits[k] / denom for k in k_values},
        scene_top_k_accuracy={k: scene_hits[k] / denom for k in k_values},
        miss_counts=miss_counts,
    )


# -- trade-off sweep -----------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    alpha: float
    m: int
    k: int
    accuracy: float


def sweep(
    table: ScoreTable,
    dataset: Sequence[AnomalyDatapoint],
    alpha_grid: Sequence[float],
    m_grid: Sequence[int],
    k_values: Sequence[int],
) -> list[SweepCell]:
    """Full-factorial top-k accuracy over (alpha, m) settings."""
    if not alpha_grid or not m_grid:
        raise ConfigError("alpha and m grids must be non-empty")
    cells: list[SweepCell] = []
    for alpha in alpha_grid:
        for m in m_grid:
            report = evaluate_topk(table, dataset, InferenceConfig(alpha=alpha, m=m), k_values)
            for k in sorted(report.top_k_accuracy):
                cells.append(
                    SweepCell(alpha=alpha, m=m, k=k, accuracy=report.top_k_accuracy[k])
                )
    return cells


def write_sweep_csv(cells: Sequence[SweepCell], path: str | Path) -> None:
    lines = ["alpha,m,k,accuracy\n"]
    for cell in cells:
        lines.append(f"{cell.alpha!r},{cell.m},{cell.k},{cell.accuracy!r}\n")
    atomic_write_text(path, "".join(lines))
