"""Point-wise ranking metrics over (RankedList, GroundTruth) pairs.

All metrics use binary relevance, live in [0, 1], and are averaged
arithmetically over ground-truth users. A user present in the truth but
missing a prediction list scores zero on every per-user metric: a model
refusing to answer is a miss, not an exclusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import InvalidCatalogSize, InvalidParameter, UserMismatch

RANK_METRICS = ("hr_at_k", "mrr_at_k", "ndcg_at_k", "map_at_k")


@dataclass(frozen=True)
class RankedList:
    """Top-K recommendations for one user; position 0 is the top item."""

    user_id: str
    items: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.items)) != len(self.items):
            raise InvalidParameter(
                f"ranked list for user {self.user_id!r} contains duplicate items"
            )


@dataclass(frozen=True)
class GroundTruth:
    """Held-out relevant items for one user; never empty."""

    user_id: str
    relevant: frozenset[str]

    def __post_init__(self):
        if not self.relevant:
            raise InvalidParameter(f"ground truth for user {self.user_id!r} is empty")


@dataclass(frozen=True)
class MetricReport:
    hr_at_k: float
    mrr_at_k: float
    ndcg_at_k: float
    map_at_k: float
    coverage: float
    k: int
    n_users: int


def _check_pair(preds: RankedList, truth: GroundTruth, k: int) -> None:
    if preds.user_id != truth.user_id:
        raise UserMismatch(
            f"predictions for {preds.user_id!r} scored against truth for {truth.user_id!r}"
        )
    if k < 1:
        raise InvalidParameter(f"k must be >= 1, got {k}")


def hit_rate_at_k(preds: RankedList, truth: GroundTruth, k: int) -> float:
    """1.0 if any relevant item appears in the first k positions, else 0.0."""
    _check_pair(preds, truth, k)
    return 1.0 if any(item in truth.relevant for item in preds.items[:k]) else 0.0


def mrr_at_k(preds: RankedList, truth: GroundTruth, k: int) -> float:
    """Reciprocal rank of the first relevant item within top k; 0 if none."""
    _check_pair(preds, truth, k)
    for position, item in enumerate(preds.items[:k], start=1):
        if item in truth.relevant:
            return 1.0 / position
    return 0.0


def ndcg_at_k(preds: RankedList, truth: GroundTruth, k: int) -> float:
    """Binary-relevance NDCG: DCG over top k divided by the ideal DCG."""
    _check_pair(preds, truth, k)
    dcg = 0.0
    for position, item in enumerate(preds.items[:k], start=1):
        if item in truth.relevant:
            dcg += 1.0 / math.log2(position + 1)
    ideal_hits = min(len(truth.relevant), k)
    idcg = sum(1.0 / math.log2(p + 1) for p in range(1, ideal_hits + 1))
    return dcg / idcg if idcg > 0 else 0.0


def map_at_k(preds: RankedList, truth: GroundTruth, k: int) -> float:
    """Average precision at k, normalized by min(|truth|, k).

    The normalization makes a perfect truncated list score 1 even when the
    truth set is larger than k.
    """
    _check_pair(preds, truth, k)
    hits = 0
    precision_sum = 0.0
    for position, item in enumerate(preds.items[:k], start=1):
        if item in truth.relevant:
            hits += 1
            precision_sum += hits / position
    denom = min(len(truth.relevant), k)
    return precision_sum / denom if denom > 0 else 0.0


def coverage(all_preds: Iterable[RankedList], catalog_size: int) -> float:
    """Fraction of the catalog recommended to at least one user."""
    if catalog_size < 1:
        raise InvalidCatalogSize(f"catalog_size must be >= 1, got {catalog_size}")
    recommended: set[str] = set()
    for preds in all_preds:
        recommended.update(preds.items)
    return len(recommended) / catalog_size


def per_user_metrics(
    all_preds: Iterable[RankedList],
    all_truths: Iterable[GroundTruth],
    k: int,
) -> dict[str, dict[str, float]]:
    """Per-user metric values for every ground-truth user.

    Users lacking a prediction list are scored against an empty list. The
    same numbers feed both the global averages and the slice reports, which
    keeps population-weighted slice means exactly consistent with the
    global means.
    """
    preds_by_user: dict[str, RankedList] = {}
    for preds in all_preds:
        if preds.user_id in preds_by_user:
            raise InvalidParameter(f"duplicate prediction list for user {preds.user_id!r}")
        preds_by_user[preds.user_id] = preds

    out: dict[str, dict[str, float]] = {}
    for truth in all_truths:
        if truth.user_id in out:
            raise InvalidParameter(f"duplicate ground truth for user {truth.user_id!r}")
        preds = preds_by_user.get(truth.user_id)
        if preds is None:
            preds = RankedList(user_id=truth.user_id, items=())
        out[truth.user_id] = {
            "hr_at_k": hit_rate_at_k(preds, truth, k),
            "mrr_at_k": mrr_at_k(preds, truth, k),
            "ndcg_at_k": ndcg_at_k(preds, truth, k),
            "map_at_k": map_at_k(preds, truth, k),
        }
    return out


def evaluate_standard(
    all_preds: Iterable[RankedList],
    all_truths: Iterable[GroundTruth],
    k: int,
    catalog_size: int,
) -> MetricReport:
    """Arithmetic mean of per-user metrics plus global catalog coverage."""
    all_preds = list(all_preds)
    per_user = per_user_metrics(all_preds, all_truths, k)
    n = len(per_user)
    sums = dict.fromkeys(RANK_METRICS, 0.0)
    for user_id in sorted(per_user):
        for name in RANK_METRICS:
            sums[name] += per_user[user_id][name]
    means: Mapping[str, float] = (
        {name: sums[name] / n for name in RANK_METRICS}
        if n
        else dict.fromkeys(RANK_METRICS, 0.0)
    )
    return MetricReport(
        hr_at_k=means["hr_at_k"],
        mrr_at_k=means["mrr_at_k"],
        ndcg_at_k=means["ndcg_at_k"],
        map_at_k=means["map_at_k"],
        coverage=coverage(all_preds, catalog_size),
        k=k,
        n_users=n,
    )
