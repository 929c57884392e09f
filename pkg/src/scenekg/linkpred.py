"""Ranking metrics for link prediction: hits@k, mean rank, MRR."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError
from .graph import KnowledgeGraph
from .models import EmbeddingModel, score_batch
from .schema import Triple


class RankResult(NamedTuple):
    triple: Triple
    head_rank: int
    tail_rank: int
    filtered: bool


def _slot_rank(
    model: EmbeddingModel,
    candidates: np.ndarray,
    fixed_head: int | None,
    fixed_tail: int | None,
    relation: int,
    true_entity: int,
    excluded: set[int],
) -> int:
    """Rank of the true entity among candidate replacements, by descending score.

    Ties are pessimistic: equal-scoring candidates count as ranked above the
    true entity. ``excluded`` candidates (other known-true completions, in
    filtered mode) are removed before ranking.
    """
    if excluded:
        keep = np.array([c not in excluded or c == true_entity for c in candidates])
        candidates = candidates[keep]
    rel_col = np.full(len(candidates), relation, dtype=np.intp)
    if fixed_head is None:
        heads, tails = candidates, np.full(len(candidates), fixed_tail, dtype=np.intp)
    else:
        heads, tails = np.full(len(candidates), fixed_head, dtype=np.intp), candidates
    scores = score_batch(model, heads, rel_col, tails)
    true_pos = int(np.flatnonzero(candidates == true_entity)[0])
    true_score = scores[true_pos]
    others = np.delete(scores, true_pos)
    return 1 + int(np.sum(others >= true_score))


def rank_triple(
    model: EmbeddingModel,
    graph: KnowledgeGraph,
    known_triples: set[Triple],
    triple: Triple,
    filtered: bool,
) -> RankResult:
    """Rank the true head and tail of a triple against same-type candidates.

    In filtered mode, candidates that complete a triple present in
    ``known_triples`` (other than the query triple itself) are excluded.
    """
    h, r, t = triple
    rel = graph.relation(r)
    head_candidates = np.asarray(graph.entities_of_type(rel.head_type), dtype=np.intp)
    tail_candidates = np.asarray(graph.entities_of_type(rel.tail_type), dtype=np.intp)
    head_excluded: set[int] = set()
    tail_excluded: set[int] = set()
    if filtered:
        head_excluded = {
            c for c in (int(x) for x in head_candidates) if Triple(c, r, t) in known_triples and c != h
        }
        tail_excluded = {
            c for c in (int(x) for x in tail_candidates) if Triple(h, r, c) in known_triples and c != t
        }
    head_rank = _slot_rank(model, head_candidates, None, t, r, h, head_excluded)
    tail_rank = _slot_rank(model, tail_candidates, h, None, r, t, tail_excluded)
    return RankResult(triple=triple, head_rank=head_rank, tail_rank=tail_rank, filtered=filtered)


@dataclass
class LinkMetrics:
    hits: dict[int, float]
    mean_rank: float
    mrr: float
    filtered: bool
    n_test: int

    def to_dict(self) -> dict:
        return {
            "hits": {str(k): v for k, v in sorted(self.hits.items())},
            "mean_rank": self.mean_rank,
            "mrr": self.mrr,
            "filtered": self.filtered,
            "n_test": self.n_test,
        }


def evaluate(
    model: EmbeddingModel,
    graph: KnowledgeGraph,
    known_triples: set[Triple],
    test_triples: Iterable[Triple],
    k_values: Sequence[int],
    filtered: bool = True,
) -> LinkMetrics:
    """Aggregate head and tail ranks over a test set.

    hits@k is the fraction of ranks <= k, mean_rank the average rank, and
    mrr the mean reciprocal rank, all over the 2 * n_test individual ranks.
    """
    test = list(test_triples)
    if not test:
        raise ConfigError("test set is empty")
    ranks: list[int] = []
    for triple in test:
        result = rank_triple(model, graph, known_triples, triple, filtered)
        ranks.extend((result.head_rank, result.tail_rank))
    arr = np.asarray(ranks, dtype=float)
    return LinkMetrics(
        hits={int(k): float(np.mean(arr <= k)) for k in k_values},
        mean_rank=float(arr.mean()),
        mrr=float((1.0 / arr).mean()),
        filtered=filtered,
        n_test=len(test),
    )
