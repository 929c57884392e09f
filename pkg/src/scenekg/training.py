"""Margin-ranking training for translation embeddings, with negative sampling.

The objective is the classic pairwise hinge over (positive, corrupted)
triple pairs:

    loss = mean over pairs of max(0, margin - score(pos) + score(neg))

optimized by mini-batch SGD with analytic gradients, per-epoch projection of
entity vectors onto the unit ball, and an optional learning-rate schedule.
Everything downstream of the seed is deterministic: two runs with the same
graph and config produce bitwise-identical parameters.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, NoValidCorruption, TrainingError
from .graph import KnowledgeGraph
from .io import atomic_write_text
from .models import EmbeddingModel, ModelKind, init_model
from .schema import Triple

log = logging.getLogger(__name__)

_NORM_EPS = 1e-12


class LRSchedule(str, Enum):
    NONE = "none"
    LINEAR = "linear"
    ONE_CYCLE = "one_cycle"


# Fraction of total steps spent warming up under the one-cycle schedule.
ONE_CYCLE_PEAK_FRACTION = 0.3


@dataclass
class TrainConfig:
    kind: ModelKind
    d_e: int
    d_r: int
    learning_rate: float = 0.1
    lr_schedule: LRSchedule = LRSchedule.NONE
    epochs: int = 100
    batch_size: int = 512
    margin: float = 1.0
    negatives_per_positive: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.d_e <= 0 or self.d_r <= 0:
            raise ConfigError("embedding dimensions must be positive")
        if self.kind is ModelKind.TRANSE and self.d_e != self.d_r:
            raise ConfigError("TransE requires d_e == d_r")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if self.negatives_per_positive <= 0:
            raise ConfigError("negatives_per_positive must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["lr_schedule"] = self.lr_schedule.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["kind"] = ModelKind(d["kind"])
        d["lr_schedule"] = LRSchedule(d.get("lr_schedule", "none"))
        return cls(**d)


# Best configurations for the three full-scale household-corpus graph
# variants; usable as-is through grid_search or train.
REFERENCE_PRESETS: dict[str, TrainConfig] = {
    "full": TrainConfig(
        kind=ModelKind.TRANSD,
        d_e=75,
        d_r=75,
        learning_rate=5e-3,
        lr_schedule=LRSchedule.LINEAR,
        epochs=500,
    ),
    "filtered": TrainConfig(
        kind=ModelKind.TRANSR,
        d_e=300,
        d_r=150,
        learning_rate=1e-3,
        lr_schedule=LRSchedule.NONE,
        epochs=1000,
    ),
    "detector": TrainConfig(
        kind=ModelKind.TRANSD,
        d_e=400,
        d_r=100,
        learning_rate=1e-4,
        lr_schedule=LRSchedule.NONE,
        epochs=1000,
    ),
}


def lr_at(config: TrainConfig, step: int, total_steps: int) -> float:
    """Learning rate for a global step index under the configured schedule."""
    base = config.learning_rate
    if config.lr_schedule is LRSchedule.NONE or total_steps <= 0:
        return base
    if config.lr_schedule is LRSchedule.LINEAR:
        return base * (1.0 - step / total_steps)
    peak_step = ONE_CYCLE_PEAK_FRACTION * total_steps
    if step < peak_step:
        return base * (step / peak_step)
    return base * (1.0 - (step - peak_step) / (total_steps - peak_step))


# -- negative sampling -------------------------------------------------------


def _pools(graph: KnowledgeGraph, relation: int) -> tuple[np.ndarray, np.ndarray]:
    rel = graph.relation(relation)
    return (
        np.asarray(graph.entities_of_type(rel.head_type), dtype=np.intp),
        np.asarray(graph.entities_of_type(rel.tail_type), dtype=np.intp),
    )


def _is_legal(graph: KnowledgeGraph, head: int, relation: int, tail: int) -> bool:
    if head == tail and graph.relation(relation).head_type == graph.relation(relation).tail_type:
        return False
    return Triple(head, relation, tail) not in graph.triples


def _exact_corruption(
    graph: KnowledgeGraph,
    triple: Triple,
    rng: np.random.Generator,
    head_pool: np.ndarray,
    tail_pool: np.ndarray,
) -> Triple:
    """Enumerate all legal corruptions and sample one with the rejection law.

    Head-side outcomes carry weight 1/(2 * head pool size) and tail-side
    outcomes 1/(2 * tail pool size), matching what rejection sampling over a
    fair side coin and a uniform candidate converges to.
    """
    h, r, t = triple
    outcomes: list[Triple] = []
    weights: list[float] = []
    for cand in head_pool:
        if _is_legal(graph, int(cand), r, t):
            outcomes.append(Triple(int(cand), r, t))
            weights.append(0.5 / len(head_pool))
    for cand in tail_pool:
        if _is_legal(graph, h, r, int(cand)):
            outcomes.append(Triple(h, r, int(cand)))
            weights.append(0.5 / len(tail_pool))
    if not outcomes:
        raise NoValidCorruption(f"no legal corruption for triple {triple}")
    probs = np.asarray(weights)
    probs = probs / probs.sum()
    return outcomes[int(rng.choice(len(outcomes), p=probs))]


def corrupt_triple(
    graph: KnowledgeGraph,
    triple: Triple,
    rng: np.random.Generator,
    max_tries: int = 64,
) -> Triple:
    """Replace the head or the tail (fair coin) with a uniformly drawn entity
    of the same type, resampling until the result is absent from the graph.

    Raises NoValidCorruption when every candidate replacement on both sides
    already forms a stored triple, in which case callers skip the positive.
    """
    h, r, t = triple
    head_pool, tail_pool = _pools(graph, r)
    for _ in range(max_tries):
        if rng.random() < 0.5:
            cand = int(head_pool[rng.integers(len(head_pool))])
            if _is_legal(graph, cand, r, t):
                return Triple(cand, r, t)
        else:
            cand = int(tail_pool[rng.integers(len(tail_pool))])
            if _is_legal(graph, h, r, cand):
                return Triple(h, r, cand)
    return _exact_corruption(graph, triple, rng, head_pool, tail_pool)


def _corrupt_rows(
    graph: KnowledgeGraph,
    rows: np.ndarray,
    rng: np.random.Generator,
    pools: dict[int, tuple[np.ndarray, np.ndarray]],
    max_rounds: int = 50,
) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt a (n, 3) batch of positive rows; returns (negatives, kept mask).

    Rows whose positives admit no legal corruption are masked out.
    """
    n = rows.shape[0]
    neg = rows.copy()
    done = np.zeros(n, dtype=bool)
    kept = np.ones(n, dtype=bool)
    pending = np.flatnonzero(~done)
    for _ in range(max_rounds):
        if pending.size == 0:
            break
        for rel_id in sorted(set(int(r) for r in rows[pending, 1])):
            sel = pending[rows[pending, 1] == rel_id]
            if sel.size == 0:
                continue
            head_pool, tail_pool = pools[rel_id]
            replace_head = rng.random(sel.size) < 0.5
            cand_h = head_pool[rng.integers(0, len(head_pool), size=sel.size)]
            cand_t = tail_pool[rng.integers(0, len(tail_pool), size=sel.size)]
            for j, row_idx in enumerate(sel):
                h, r, t = (int(v) for v in rows[row_idx])
                if replace_head[j]:
                    cand = int(cand_h[j])
                    if _is_legal(graph, cand, r, t):
                        neg[row_idx, 0] = cand
                        done[row_idx] = True
                else:
                    cand = int(cand_t[j])
                    if _is_legal(graph, h, r, cand):
                        neg[row_idx, 2] = cand
                        done[row_idx] = True
        pending = np.flatnonzero(~done)
    for row_idx in pending:
        h, r, t = (int(v) for v in rows[row_idx])
        head_pool, tail_pool = pools[int(r)]
        try:
            corrupted = _exact_corruption(graph, Triple(h, r, t), rng, head_pool, tail_pool)
        except NoValidCorruption:
            kept[row_idx] = False
            continue
        neg[row_idx] = corrupted
    return neg, kept


# -- loss and analytic gradients ---------------------------------------------


def _forward(model: EmbeddingModel, h_idx, r_idx, t_idx):
    """Residuals plus whatever the backward pass needs, per model kind."""
    h = model.entity_vecs[h_idx]
    t = model.entity_vecs[t_idx]
    r = model.relation_vecs[r_idx]
    ctx: dict[str, np.ndarray] = {}
    if model.kind is ModelKind.TRANSE:
        res = h + r - t
    elif model.kind is ModelKind.TRANSR:
        mats = model.rel_proj_mats[r_idx]
        res = np.einsum("bij,bj->bi", mats, h) + r - np.einsum("bij,bj->bi", mats, t)
        ctx["mats"] = mats
        ctx["h"] = h
        ctx["t"] = t
    else:
        h_p = model.ent_proj_vecs[h_idx]
        t_p = model.ent_proj_vecs[t_idx]
        r_p = model.rel_proj_vecs[r_idx]
        d_r = model.d_r
        k = min(model.d_e, d_r)
        dots_h = np.einsum("bi,bi->b", h_p, h)
        dots_t = np.einsum("bi,bi->b", t_p, t)
        h_perp = r_p * dots_h[:, None]
        h_perp[:, :k] += h[:, :k]
        t_perp = r_p * dots_t[:, None]
        t_perp[:, :k] += t[:, :k]
        res = h_perp + r - t_perp
        ctx.update(h=h, t=t, h_p=h_p, t_p=t_p, r_p=r_p, dots_h=dots_h, dots_t=dots_t)
    norms = np.sqrt(np.einsum("bi,bi->b", res, res))
    ctx["res"] = res
    ctx["norms"] = norms
    return norms, ctx


def _backward(model: EmbeddingModel, grads, h_idx, r_idx, t_idx, ctx, coeff) -> None:
    """Accumulate d(sum_i coeff_i * ||res_i||)/dtheta into ``grads``."""
    u = ctx["res"] * (coeff / np.maximum(ctx["norms"], _NORM_EPS))[:, None]
    if model.kind is ModelKind.TRANSE:
        np.add.at(grads["entity_vecs"], h_idx, u)
        np.add.at(grads["entity_vecs"], t_idx, -u)
        np.add.at(grads["relation_vecs"], r_idx, u)
    elif model.kind is ModelKind.TRANSR:
        back = np.einsum("bij,bi->bj", ctx["mats"], u)
        np.add.at(grads["entity_vecs"], h_idx, back)
        np.add.at(grads["entity_vecs"], t_idx, -back)
        np.add.at(grads["relation_vecs"], r_idx, u)
        outer = np.einsum("bi,bj->bij", u, ctx["h"] - ctx["t"])
        np.add.at(grads["rel_proj_mats"], r_idx, outer)
    else:
        k = min(model.d_e, model.d_r)
        ru = np.einsum("bi,bi->b", ctx["r_p"], u)
        pad_u = np.zeros((u.shape[0], model.d_e))
        pad_u[:, :k] = u[:, :k]
        np.add.at(grads["entity_vecs"], h_idx, ctx["h_p"] * ru[:, None] + pad_u)
        np.add.at(grads["entity_vecs"], t_idx, -(ctx["t_p"] * ru[:, None] + pad_u))
        np.add.at(grads["ent_proj_vecs"], h_idx, ctx["h"] * ru[:, None])
        np.add.at(grads["ent_proj_vecs"], t_idx, -ctx["t"] * ru[:, None])
        np.add.at(grads["rel_proj_vecs"], r_idx, (ctx["dots_h"] - ctx["dots_t"])[:, None] * u)
        np.add.at(grads["relation_vecs"], r_idx, u)


def margin_loss_and_gradients(
    model: EmbeddingModel,
    positives: np.ndarray,
    negatives: np.ndarray,
    margin: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean hinge loss over (positive, negative) row pairs and its gradients.

    ``positives`` and ``negatives`` are (n, 3) integer arrays of
    (head, relation, tail) rows; gradient arrays match param_blocks shapes.
    """
    positives = np.asarray(positives, dtype=np.intp)
    negatives = np.asarray(negatives, dtype=np.intp)
    n = positives.shape[0]
    pos_norms, pos_ctx = _forward(model, positives[:, 0], positives[:, 1], positives[:, 2])
    neg_norms, neg_ctx = _forward(model, negatives[:, 0], negatives[:, 1], negatives[:, 2])
    slack = margin + pos_norms - neg_norms
    active = slack > 0.0
    loss = float(np.sum(np.where(active, slack, 0.0)) / n)
    grads = {name: np.zeros_like(block) for name, block in model.param_blocks().items()}
    coeff = active.astype(float) / n
    _backward(model, grads, positives[:, 0], positives[:, 1], positives[:, 2], pos_ctx, coeff)
    _backward(model, grads, negatives[:, 0], negatives[:, 1], negatives[:, 2], neg_ctx, -coeff)
    return loss, grads


# -- training loop -----------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    loss: float
    lr: float


class TrainResult(NamedTuple):
    model: EmbeddingModel
    history: list[EpochStats]


def _renormalize_entities(model: EmbeddingModel) -> None:
    norms = np.linalg.norm(model.entity_vecs, axis=1)
    over = norms > 1.0
    if over.any():
        model.entity_vecs[over] /= norms[over, None]


def train(graph: KnowledgeGraph, config: TrainConfig) -> TrainResult:
    """Fit an embedding model to the graph's triples.

    Each epoch shuffles the triples, pairs every positive with
    ``negatives_per_positive`` corrupted triples, applies an SGD step per
    mini-batch at the scheduled learning rate, then projects entity vectors
    back onto the unit ball. Positives with no legal corruption are skipped.
    """
    config.validate()
    if not graph.triples:
        raise ConfigError("cannot train on an empty graph")
    rng = np.random.default_rng(config.seed)
    model = init_model(
        config.kind, graph.n_entities, len(graph.relations), config.d_e, config.d_r, rng
    )
    model.meta = {"config": config.to_dict(), "seed": config.seed}
    history: list[EpochStats] = []
    if config.epochs == 0:
        return TrainResult(model, history)

    triples = np.asarray(graph.sorted_triples(), dtype=np.intp)
    n = triples.shape[0]
    pools = {rel.id: _pools(graph, rel.id) for rel in graph.relations}
    n_batches = (n + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * n_batches
    step = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_lr = lr_at(config, step, total_steps)
        loss_sum = 0.0
        pair_count = 0
        for batch_idx in range(n_batches):
            rows = triples[perm[batch_idx * config.batch_size : (batch_idx + 1) * config.batch_size]]
            if config.negatives_per_positive > 1:
                rows = np.repeat(rows, config.negatives_per_positive, axis=0)
            neg, kept = _corrupt_rows(graph, rows, rng, pools)
            lr = lr_at(config, step, total_steps)
            step += 1
            if not kept.any():
                continue
            pos_rows = rows[kept]
            neg_rows = neg[kept]
            loss, grads = margin_loss_and_gradients(model, pos_rows, neg_rows, config.margin)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch_idx}")
            blocks = model.param_blocks()
            for name, grad in grads.items():
                blocks[name] -= lr * grad
            loss_sum += loss * len(pos_rows)
            pair_count += len(pos_rows)
        _renormalize_entities(model)
        if not model.all_finite():
            raise TrainingError(f"non-finite parameters after epoch {epoch}")
        mean_loss = loss_sum / pair_count if pair_count else 0.0
        history.append(EpochStats(epoch=epoch, loss=mean_loss, lr=epoch_lr))
        log.debug("epoch %d: loss %.6f lr %.6g", epoch, mean_loss, epoch_lr)
    return TrainResult(model, history)


def write_training_log(history: Sequence[EpochStats], path: str | Path) -> None:
    """CSV log with one row per epoch: epoch, mean loss, epoch-start lr."""
    lines = ["epoch,loss,lr\n"]
    for entry in history:
        lines.append(f"{entry.epoch},{entry.loss!r},{entry.lr!r}\n")
    atomic_write_text(path, "".join(lines))


# -- grid search ---------------------------------------------------------------


class GridSearchResult(NamedTuple):
    best_config: TrainConfig
    best_model: EmbeddingModel
    leaderboard: list[dict]


def grid_search(
    graph: KnowledgeGraph,
    validation_eval: Callable[[EmbeddingModel], float],
    grid: Sequence[TrainConfig],
    leaderboard_path: str | Path | None = None,
) -> GridSearchResult:
    """Train every config, score each model with ``validation_eval`` (higher
    is better) and return the argmax; ties keep the earliest grid entry.

    A config whose training or evaluation raises is recorded on the
    leaderboard and skipped; if every config fails, raises TrainingError.
    """
    if not grid:
        raise ConfigError("grid is empty")
    leaderboard: list[dict] = []
    best: tuple[float, int, TrainConfig, EmbeddingModel] | None = None
    for position, config in enumerate(grid):
        entry: dict = {"position": position, "config": config.to_dict()}
        try:
            result = train(graph, config)
            score = float(validation_eval(result.model))
            entry["score"] = score
            entry["status"] = "ok"
            if best is None or score > best[0]:
                best = (score, position, config, result.model)
        except Exception as exc:  # noqa: BLE001 - one bad config must not kill the search
            entry["status"] = "failed"
            entry["error"] = str(exc)
            log.warning("grid entry %d failed: %s", position, exc)
        leaderboard.append(entry)
        if leaderboard_path is not None:
            atomic_write_text(
                leaderboard_path, json.dumps(leaderboard, indent=2, sort_keys=True) + "\n"
            )
    if best is None:
        raise TrainingError("every grid configuration failed")
    return GridSearchResult(best_config=best[2], best_model=best[3], leaderboard=leaderboard)
