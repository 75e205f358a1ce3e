"""Behavioral test tier: history-perturbation stability and error distance.

The stability test swaps a single event in a user's listening history for
another track by the same artist, re-queries the model, and measures how
much the top-k list moved (Jaccard similarity of the two lists as sets).
The error-distance test grades *how wrong* misses are through the item
metadata hierarchy: exact item 0.0, same artist 0.5, unrelated 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .datamodel import InteractionEvent, ItemRecord
from .errors import EmptyHistory, InvalidParameter, ModelQueryFailure, UnknownItem
from .metrics import GroundTruth, RankedList
from .models import ModelHandle, recommend
from .util import make_rng, substream

SAME_ARTIST_SWAP = "same_artist_swap"
DEFAULT_SAMPLE_USERS = 1000


@dataclass(frozen=True)
class PerturbationSpec:
    n_sample_users: int = DEFAULT_SAMPLE_USERS
    seed: int = 0
    strategy: str = SAME_ARTIST_SWAP

    def __post_init__(self):
        if self.n_sample_users < 1:
            raise InvalidParameter(f"n_sample_users must be >= 1, got {self.n_sample_users}")
        if self.strategy != SAME_ARTIST_SWAP:
            raise InvalidParameter(f"unsupported perturbation strategy {self.strategy!r}")


@dataclass(frozen=True)
class SwapRecord:
    position: int
    old_item: str
    new_item: str


@dataclass(frozen=True)
class StabilityReport:
    mean_jaccard: float
    per_user: dict[str, float]
    n_evaluated: int
    n_skipped: int


@dataclass(frozen=True)
class ErrorDistanceReport:
    mean_distance: float
    quality: float
    per_user: dict[str, float]


def popularity_rank(
    train_events: Sequence[InteractionEvent], items: Mapping[str, ItemRecord]
) -> dict[str, int]:
    """Rank every catalog item by training playcount; rank 0 = most popular.

    Items never played in training sort after all played ones, by item_id.
    """
    totals: dict[str, int] = {}
    for event in train_events:
        totals[event.item_id] = totals.get(event.item_id, 0) + event.playcount
    ordered = sorted(items, key=lambda item: (-totals.get(item, 0), item))
    return {item: rank for rank, item in enumerate(ordered)}


def perturb_history(
    history: Sequence[InteractionEvent],
    items: Mapping[str, ItemRecord],
    rng: np.random.Generator,
    *,
    ranks: Mapping[str, int],
) -> tuple[list[InteractionEvent], SwapRecord]:
    """Swap the item of one uniformly chosen history event.

    The replacement is a different track by the same artist when one exists;
    otherwise the catalog item at the nearest popularity rank, ties broken
    toward the more popular side. All other event fields are preserved.
    """
    if not history:
        raise EmptyHistory("cannot perturb an empty history")
    position = int(rng.integers(len(history)))
    old_item = history[position].item_id
    record = items.get(old_item)
    if record is None:
        raise UnknownItem(f"history item {old_item!r} missing from catalog")

    same_artist = sorted(
        item_id
        for item_id, other in items.items()
        if other.artist_id == record.artist_id and item_id != old_item
    )
    if same_artist:
        new_item = same_artist[int(rng.integers(len(same_artist)))]
    else:
        old_rank = ranks[old_item]
        new_item = min(
            (item_id for item_id in items if item_id != old_item),
            key=lambda item_id: (abs(ranks[item_id] - old_rank), ranks[item_id]),
        )
    perturbed = list(history)
    perturbed[position] = replace(history[position], item_id=new_item)
    return perturbed, SwapRecord(position=position, old_item=old_item, new_item=new_item)


def sample_users(user_ids: Iterable[str], spec: PerturbationSpec) -> list[str]:
    """Deterministic sample of users to perturb; all of them if few enough."""
    candidates = sorted(user_ids)
    if len(candidates) <= spec.n_sample_users:
        return candidates
    rng = make_rng(spec.seed)
    picks = rng.choice(len(candidates), size=spec.n_sample_users, replace=False)
    return [candidates[i] for i in sorted(picks)]


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    """Set Jaccard similarity; two empty sets count as identical."""
    set_a, set_b = set(a), set(b)
    union = set_a | set_b
    if not union:
        return 1.0
    return len(set_a & set_b) / len(union)


def stability_test(
    model: ModelHandle,
    users: Sequence[str],
    histories: Mapping[str, Sequence[InteractionEvent]],
    items: Mapping[str, ItemRecord],
    spec: PerturbationSpec,
    k: int,
    *,
    ranks: Mapping[str, int],
) -> StabilityReport:
    """Query each sampled user before and after one history swap.

    Users with empty histories cannot be perturbed; they are skipped and
    counted. Each user's perturbation RNG is derived from (spec.seed,
    user_id), so results do not depend on iteration order.
    """
    per_user: dict[str, float] = {}
    n_skipped = 0
    for user_id in sorted(users):
        history = list(histories.get(user_id, ()))
        if not history:
            n_skipped += 1
            continue
        rng = substream(spec.seed, "perturb", user_id)
        perturbed, _ = perturb_history(history, items, rng, ranks=ranks)
        try:
            original_list = recommend(model, user_id, [e.item_id for e in history], k)
            perturbed_list = recommend(model, user_id, [e.item_id for e in perturbed], k)
        except ModelQueryFailure:
            raise
        except Exception as exc:  # noqa: BLE001
            raise ModelQueryFailure(f"stability query failed for {user_id!r}: {exc}") from exc
        per_user[user_id] = jaccard(original_list.items, perturbed_list.items)
    n_evaluated = len(per_user)
    mean = sum(per_user.values()) / n_evaluated if n_evaluated else 0.0
    return StabilityReport(
        mean_jaccard=mean,
        per_user=per_user,
        n_evaluated=n_evaluated,
        n_skipped=n_skipped,
    )


def stability_from_lists(
    original: Mapping[str, Sequence[str]],
    perturbed: Mapping[str, Sequence[str]],
    evaluated_users: Sequence[str],
    n_skipped: int,
) -> StabilityReport:
    """Build a stability report from two pre-computed prediction maps.

    Used for external models, where the file protocol is batch-only: the
    harness re-runs fit_predict on a perturbed training file and compares
    the sampled users' lists.
    """
    per_user = {
        user_id: jaccard(original.get(user_id, ()), perturbed.get(user_id, ()))
        for user_id in sorted(evaluated_users)
    }
    n_evaluated = len(per_user)
    mean = sum(per_user.values()) / n_evaluated if n_evaluated else 0.0
    return StabilityReport(
        mean_jaccard=mean,
        per_user=per_user,
        n_evaluated=n_evaluated,
        n_skipped=n_skipped,
    )


def error_distance_test(
    all_preds: Iterable[RankedList],
    all_truths: Iterable[GroundTruth],
    items: Mapping[str, ItemRecord],
    k: int,
) -> ErrorDistanceReport:
    """Metadata distance between each user's top-k and their truth set.

    Per-user distance is the minimum over (prediction, truth) pairs of the
    hierarchy distance: 0 exact, 0.5 same artist, 1 otherwise. Users with
    no predictions score 1. Reported quality is 1 - mean distance so the
    value fits the higher-is-better scale.
    """
    preds_by_user = {p.user_id: p for p in all_preds}
    per_user: dict[str, float] = {}
    for truth in sorted(all_truths, key=lambda t: t.user_id):
        preds = preds_by_user.get(truth.user_id)
        top = list(preds.items[:k]) if preds is not None else []
        for item_id in top:
            if item_id not in items:
                raise UnknownItem(f"predicted item {item_id!r} missing from catalog")
        for item_id in truth.relevant:
            if item_id not in items:
                raise UnknownItem(f"truth item {item_id!r} missing from catalog")
        if not top:
            per_user[truth.user_id] = 1.0
            continue
        if any(item in truth.relevant for item in top):
            per_user[truth.user_id] = 0.0
            continue
        truth_artists = {items[t].artist_id for t in truth.relevant}
        if any(items[p].artist_id in truth_artists for p in top):
            per_user[truth.user_id] = 0.5
        else:
            per_user[truth.user_id] = 1.0
    mean = sum(per_user.values()) / len(per_user) if per_user else 0.0
    return ErrorDistanceReport(mean_distance=mean, quality=1.0 - mean, per_user=per_user)
