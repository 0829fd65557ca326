"""Retrieval ranks, Recall@K, mean rank variance, and top-N re-ranking.

Directions: TR ranks each instance's text (per language) among all texts of
that language by similarity to the instance's image; IR ranks each
instance's image among all images by similarity to the text. Rank 1 is most
similar; ties break toward the lower candidate index so tables are
platform-reproducible.

Report JSON key order is fixed: direction, per_language (lang -> r1/r5/r10),
mean_recall, mrv, recall_gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .corpus import MultilingualCorpus
from .errors import InvalidConfig, NotNormalized, SingleLanguage
from .numerics import similarity

DIRECTION_TR = "TR"
DIRECTION_IR = "IR"

RECALL_LEVELS = (1, 5, 10)

# Pair scorer: (query_index, candidate_index, text_vector, image_vector) -> score.
PairScorer = Callable[[int, int, np.ndarray, np.ndarray], float]


@dataclass
class RankTable:
    direction: str
    ranks: np.ndarray           # (N, K) int, 1-based
    pool_sizes: list[int]       # per-language candidate pool size
    languages: list[str] = field(default_factory=list)

    @property
    def n_instances(self) -> int:
        return self.ranks.shape[0]

    @property
    def n_languages(self) -> int:
        return self.ranks.shape[1]

    def validate(self) -> None:
        if self.direction not in (DIRECTION_TR, DIRECTION_IR):
            raise InvalidConfig(f"unknown direction {self.direction!r}")
        if np.any(self.ranks < 1):
            raise InvalidConfig("ranks are 1-based")
        for k, pool in enumerate(self.pool_sizes):
            if np.any(self.ranks[:, k] > pool):
                raise InvalidConfig(f"rank exceeds pool size {pool} in language {k}")


@dataclass
class MetricsReport:
    direction: str
    per_language: dict[str, dict[str, float]]
    mean_recall: dict[str, float]
    mrv: float | None
    recall_gap: float
    mean_rank: np.ndarray | None = None   # per-instance mean rank, not serialized

    def to_json_dict(self) -> dict:
        return {
            "direction": self.direction,
            "per_language": self.per_language,
            "mean_recall": self.mean_recall,
            "mrv": self.mrv,
            "recall_gap": self.recall_gap,
        }


@dataclass
class RerankConfig:
    """top_n defaults to 128, or 256 when the candidate pool exceeds 10^4."""

    top_n: int | None = None
    scorer: PairScorer | None = None

    def resolve_top_n(self, pool: int) -> int:
        if self.top_n is not None:
            if self.top_n < 1:
                raise InvalidConfig("top_n must be >= 1")
            return self.top_n
        return 256 if pool > 10_000 else 128


def _rank_of_diagonal(sims: np.ndarray) -> np.ndarray:
    """Rank of candidate j for query j in a square similarity matrix.

    Rank = 1 + (#strictly better) + (#ties at lower candidate index).
    """
    n = sims.shape[0]
    diag = sims[np.arange(n), np.arange(n)]
    better = (sims > diag[:, None]).sum(axis=1)
    idx = np.arange(n)
    tied_before = ((sims == diag[:, None]) & (idx[None, :] < idx[:, None])).sum(axis=1)
    return (1 + better + tied_before).astype(np.int64)


def compute_ranks(corpus: MultilingualCorpus, direction: str) -> RankTable:
    """Rank table of the true candidate for every (instance, language)."""
    if not corpus.normalized:
        raise NotNormalized("rank computation requires a normalized corpus")
    n, k = corpus.n_instances, corpus.n_languages
    ranks = np.empty((n, k), dtype=np.int64)
    for kk in range(k):
        if direction == DIRECTION_TR:
            sims = similarity(corpus.image_embeddings, corpus.text_embeddings[:, kk, :])
        elif direction == DIRECTION_IR:
            sims = similarity(corpus.text_embeddings[:, kk, :], corpus.image_embeddings)
        else:
            raise InvalidConfig(f"unknown direction {direction!r}")
        ranks[:, kk] = _rank_of_diagonal(sims)
    table = RankTable(direction=direction, ranks=ranks,
                      pool_sizes=[n] * k, languages=list(corpus.language_codes))
    table.validate()
    return table


def recall_at_k(table: RankTable, k: int) -> np.ndarray:
    """Fraction of instances with rank <= k, per language."""
    if k < 1:
        raise InvalidConfig("recall level must be >= 1")
    return (table.ranks <= k).mean(axis=0)


def mrv(table: RankTable) -> float:
    """Mean over instances and languages of squared rank deviation from the
    instance's mean rank."""
    if table.n_languages < 2:
        raise SingleLanguage("rank variance needs at least two languages")
    r = table.ranks.astype(np.float64)
    centered = r - r.mean(axis=1, keepdims=True)
    return float(np.mean(centered ** 2))


def metrics_report(table: RankTable) -> MetricsReport:
    langs = table.languages or [f"lang{k}" for k in range(table.n_languages)]
    per_language = {}
    recalls = {lvl: recall_at_k(table, lvl) for lvl in RECALL_LEVELS}
    for kk, lang in enumerate(langs):
        per_language[lang] = {f"r{lvl}": float(recalls[lvl][kk]) for lvl in RECALL_LEVELS}
    mean_recall = {f"r{lvl}": float(recalls[lvl].mean()) for lvl in RECALL_LEVELS}
    r1 = recalls[1]
    report = MetricsReport(
        direction=table.direction,
        per_language=per_language,
        mean_recall=mean_recall,
        mrv=mrv(table) if table.n_languages >= 2 else None,
        recall_gap=float(r1.max() - r1.min()),
        mean_rank=table.ranks.mean(axis=1),
    )
    return report


def oracle_scorer() -> PairScorer:
    """Scores 1 for the true pair, 0 otherwise (identity oracle)."""
    def score(query_index, candidate_index, text_vec, image_vec):
        return 1.0 if query_index == candidate_index else 0.0
    return score


def mitm_scorer(head) -> PairScorer:
    """Adapter turning a match head into a pair scorer (ignores indices)."""
    def score(query_index, candidate_index, text_vec, image_vec):
        return head.score_pair(text_vec, image_vec)
    return score


def _query_sims(corpus: MultilingualCorpus, direction: str, j: int, kk: int) -> np.ndarray:
    if direction == DIRECTION_TR:
        return corpus.text_embeddings[:, kk, :] @ corpus.image_embeddings[j]
    if direction == DIRECTION_IR:
        return corpus.image_embeddings @ corpus.text_embeddings[j, kk]
    raise InvalidConfig(f"unknown direction {direction!r}")


def query_order(corpus: MultilingualCorpus, direction: str, j: int, kk: int,
                rerank: RerankConfig | None = None):
    """Full candidate ordering for one query, best first.

    Cosine order with index tie-break; with a rerank config, the top-N
    shortlist is re-sorted by descending scorer value (stable, so a
    constant scorer leaves the order unchanged) and the tail keeps its
    cosine positions. Returns (order, similarities).
    """
    sims = _query_sims(corpus, direction, j, kk)
    n = sims.size
    order = np.lexsort((np.arange(n), -sims))
    if rerank is None:
        return order, sims
    if rerank.scorer is None:
        raise InvalidConfig("re-ranking requires a scorer")
    top_n = rerank.resolve_top_n(n)
    short = order[:top_n]
    scores = np.empty(short.size)
    for pos, cand in enumerate(short):
        cand = int(cand)
        if direction == DIRECTION_TR:
            text_vec = corpus.text_embeddings[cand, kk]
            image_vec = corpus.image_embeddings[j]
        else:
            text_vec = corpus.text_embeddings[j, kk]
            image_vec = corpus.image_embeddings[cand]
        scores[pos] = rerank.scorer(j, cand, text_vec, image_vec)
    reordered = short[np.lexsort((np.arange(short.size), -scores))]
    return np.concatenate([reordered, order[top_n:]]), sims


def rerank_top_n(corpus: MultilingualCorpus, direction: str,
                 cfg: RerankConfig) -> RankTable:
    """Re-order each query's top-N cosine candidates by scorer value.

    Returns the rank table of the true candidate after re-ranking;
    candidates beyond the shortlist keep their cosine positions.
    """
    if cfg.scorer is None:
        raise InvalidConfig("re-ranking requires a scorer")
    if not corpus.normalized:
        raise NotNormalized("re-ranking requires a normalized corpus")
    n, k = corpus.n_instances, corpus.n_languages
    ranks = np.empty((n, k), dtype=np.int64)
    for kk in range(k):
        for j in range(n):
            order, _ = query_order(corpus, direction, j, kk, rerank=cfg)
            ranks[j, kk] = int(np.nonzero(order == j)[0][0]) + 1
    table = RankTable(direction=direction, ranks=ranks,
                      pool_sizes=[n] * k, languages=list(corpus.language_codes))
    table.validate()
    return table
