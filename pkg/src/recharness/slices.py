"""Slice-level evaluation: standard metrics restricted to user groups and
item-popularity buckets.

User-keyed kinds (country, gender, activity quartiles, cold start) group the
evaluated users and average their per-user metrics within each group, so the
population-weighted mean of group values reproduces the global value
exactly. Item popularity is evaluated per (user, truth-item) pair instead,
because one user's truth set can span several buckets; a pair counts as a
hit when that item appears in the user's top-k list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .datamodel import Dataset, InteractionEvent
from .errors import (
    DanglingReference,
    EmptyTraining,
    InvalidParameter,
    UnknownSliceKind,
)
from .metrics import RANK_METRICS, GroundTruth, RankedList, per_user_metrics

USER_KEYED_KINDS = ("user_country", "user_gender", "user_activity", "cold_start")
SLICE_KINDS = USER_KEYED_KINDS + ("item_popularity",)
QUANTILE_KINDS = ("user_activity", "item_popularity")
UNSEEN_BUCKET = "unseen"
UNKNOWN_GROUP = "unknown"
LOW_SUPPORT_FLOOR = 5


@dataclass(frozen=True)
class SliceSpec:
    kind: str
    n_buckets: int = 4

    def __post_init__(self):
        if self.kind not in SLICE_KINDS:
            raise UnknownSliceKind(
                f"unknown slice kind {self.kind!r}; expected one of {SLICE_KINDS}"
            )
        if self.kind in QUANTILE_KINDS and self.n_buckets < 2:
            raise InvalidParameter(
                f"{self.kind} requires n_buckets >= 2, got {self.n_buckets}"
            )


@dataclass(frozen=True)
class SliceGroup:
    """Metric values for one group plus its population count."""

    metrics: dict[str, float]
    count: int
    low_support: bool


@dataclass(frozen=True)
class SliceReport:
    kind: str
    groups: dict[str, SliceGroup]
    worst_group_hr: float
    hr_std_across_groups: float

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "groups": {
                label: {
                    "metrics": dict(group.metrics),
                    "count": group.count,
                    "low_support": group.low_support,
                }
                for label, group in self.groups.items()
            },
            "worst_group_hr": self.worst_group_hr,
            "hr_std_across_groups": self.hr_std_across_groups,
        }


def popularity_buckets(
    train_events: Sequence[InteractionEvent], n_buckets: int
) -> dict[str, str]:
    """Bucket trained items into popularity quantiles by total playcount.

    Labels run from ``pop_0`` (least popular) to ``pop_{n-1}``. Items absent
    from training are not in the mapping; look them up with
    :func:`bucket_label`, which reports them as ``unseen``. Ties break by
    (count, item_id) so the split is deterministic.
    """
    if n_buckets < 2:
        raise InvalidParameter(f"n_buckets must be >= 2, got {n_buckets}")
    if not train_events:
        raise EmptyTraining("cannot bucket items with no training events")
    totals: dict[str, int] = {}
    for event in train_events:
        totals[event.item_id] = totals.get(event.item_id, 0) + event.playcount
    ordered = sorted(totals, key=lambda item: (totals[item], item))
    n = len(ordered)
    return {item: f"pop_{position * n_buckets // n}" for position, item in enumerate(ordered)}


def bucket_label(buckets: Mapping[str, str], item_id: str) -> str:
    return buckets.get(item_id, UNSEEN_BUCKET)


def _quantile_groups(keyed: list[tuple[int, str]], n_buckets: int, prefix: str) -> dict[str, str]:
    """Assign each (sort_key, id) to a quantile label, ties broken by id."""
    ordered = sorted(keyed, key=lambda pair: (pair[0], pair[1]))
    n = len(ordered)
    return {
        member: f"{prefix}_{position * n_buckets // n}"
        for position, (_, member) in enumerate(ordered)
    }


def _finish(kind: str, label_values: dict[str, list[dict[str, float]]],
            low_support_floor: int) -> SliceReport:
    groups: dict[str, SliceGroup] = {}
    for label in sorted(label_values):
        rows = label_values[label]
        count = len(rows)
        metric_names = sorted(rows[0])
        means = {}
        for name in metric_names:
            total = 0.0
            for row in rows:
                total += row[name]
            means[name] = total / count
        groups[label] = SliceGroup(
            metrics=means, count=count, low_support=count < low_support_floor
        )
    hr_values = [g.metrics["hr_at_k"] for g in groups.values()]
    worst = min(hr_values)
    mean_hr = sum(hr_values) / len(hr_values)
    variance = sum((h - mean_hr) ** 2 for h in hr_values) / len(hr_values)
    return SliceReport(
        kind=kind,
        groups=groups,
        worst_group_hr=worst,
        hr_std_across_groups=math.sqrt(variance),
    )


def slice_evaluate(
    all_preds: Iterable[RankedList],
    all_truths: Iterable[GroundTruth],
    dataset: Dataset,
    spec: SliceSpec,
    k: int,
    *,
    train_events: Sequence[InteractionEvent] | None = None,
    cold_start_users: frozenset[str] | set[str] | None = None,
    low_support_floor: int = LOW_SUPPORT_FLOOR,
) -> SliceReport:
    """Evaluate one slice kind over the given predictions and truths.

    ``user_activity`` and ``item_popularity`` need ``train_events`` (quantile
    boundaries are computed on the training fold only); ``cold_start`` needs
    ``cold_start_users``. Missing user metadata lands in group ``unknown``.
    """
    all_preds = list(all_preds)
    all_truths = list(all_truths)
    truth_by_user = {t.user_id: t for t in all_truths}

    if spec.kind == "item_popularity":
        if train_events is None:
            raise InvalidParameter("item_popularity slice requires train_events")
        buckets = popularity_buckets(train_events, spec.n_buckets)
        top_by_user = {p.user_id: set(p.items[:k]) for p in all_preds}
        label_values: dict[str, list[dict[str, float]]] = {}
        for user_id in sorted(truth_by_user):
            top = top_by_user.get(user_id, set())
            for item in sorted(truth_by_user[user_id].relevant):
                hit = 1.0 if item in top else 0.0
                label_values.setdefault(bucket_label(buckets, item), []).append(
                    {"hr_at_k": hit}
                )
        return _finish(spec.kind, label_values, low_support_floor)

    per_user = per_user_metrics(all_preds, all_truths, k)
    users = sorted(per_user)

    if spec.kind == "user_country":
        labels = {u: _user_field(dataset, u, "country") for u in users}
    elif spec.kind == "user_gender":
        labels = {u: _user_field(dataset, u, "gender") for u in users}
    elif spec.kind == "user_activity":
        if train_events is None:
            raise InvalidParameter("user_activity slice requires train_events")
        train_play: dict[str, int] = {}
        for event in train_events:
            train_play[event.user_id] = train_play.get(event.user_id, 0) + event.playcount
        labels = _quantile_groups(
            [(train_play.get(u, 0), u) for u in users], spec.n_buckets, "act"
        )
    elif spec.kind == "cold_start":
        if cold_start_users is None:
            raise InvalidParameter("cold_start slice requires cold_start_users")
        labels = {u: ("cold" if u in cold_start_users else "warm") for u in users}
    else:  # pragma: no cover - SliceSpec already validates
        raise UnknownSliceKind(spec.kind)

    label_values = {}
    for user_id in users:
        label_values.setdefault(labels[user_id], []).append(
            {name: per_user[user_id][name] for name in RANK_METRICS}
        )
    return _finish(spec.kind, label_values, low_support_floor)


def _user_field(dataset: Dataset, user_id: str, field: str) -> str:
    record = dataset.users.get(user_id)
    if record is None:
        raise DanglingReference(f"evaluated user {user_id!r} missing from user catalog")
    value = getattr(record, field)
    return value if value else UNKNOWN_GROUP
