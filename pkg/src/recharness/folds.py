"""Seeded event-level fold partition and the rotating train/val/test schedule.

Events (not users) are the unit of folding, so users whose events all land
in the test fold become measurable cold-start cases. The rotation yields k
runs; in each one a fold serves as test, its cyclic predecessor as
validation, and the remaining k-2 folds as training. Run 0 tests the last
fold (fold k-1) with fold k-2 as validation, run 1 tests fold 0, and so on.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from collections import Counter

import numpy as np

from .datamodel import Dataset, InteractionEvent
from .errors import InconsistentSplit, InvalidK, TooFewEvents
from .util import canonical_json, make_rng


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of each event (in canonical dataset order) to a fold."""

    k: int
    seed: int
    assignment: tuple[int, ...]

    def fold_sizes(self) -> dict[int, int]:
        sizes = Counter(self.assignment)
        return {fold: sizes.get(fold, 0) for fold in range(self.k)}

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "assignment": list(self.assignment)}

    @classmethod
    def from_dict(cls, payload: dict) -> "FoldPlan":
        return cls(
            k=int(payload["k"]),
            seed=int(payload["seed"]),
            assignment=tuple(int(f) for f in payload["assignment"]),
        )

    def save(self, path: str) -> None:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(self.to_dict()))

    @classmethod
    def load(cls, path: str) -> "FoldPlan":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class RunSplit:
    """Role assignment of the k folds for one run of the rotation."""

    run_id: int
    train_folds: frozenset[int]
    val_fold: int
    test_fold: int


@dataclass(frozen=True)
class SplitMaterialization:
    """One run's concrete training events and held-out truths."""

    run_id: int
    train_events: tuple[InteractionEvent, ...]
    val_truth: dict[str, frozenset[str]]
    test_truth: dict[str, frozenset[str]]
    cold_start_users: frozenset[str]


def partition(dataset: Dataset, k: int, seed: int) -> FoldPlan:
    """Assign every event to one of k folds by seeded shuffle + round robin.

    Fold sizes differ by at most one. The plan depends only on the canonical
    event order, k, and the seed.
    """
    if k < 3:
        raise InvalidK(f"need k >= 3 (one train fold plus val plus test), got {k}")
    n = len(dataset.events)
    if n < k:
        raise TooFewEvents(f"dataset has {n} events, need at least {k}")
    rng = make_rng(seed)
    order = rng.permutation(n)
    assignment = [0] * n
    for position, event_index in enumerate(order):
        assignment[event_index] = position % k
    return FoldPlan(k=k, seed=seed, assignment=tuple(assignment))


def rotation_schedule(k: int) -> list[RunSplit]:
    """All k runs of the rotation; each fold is test once and val once."""
    if k < 3:
        raise InvalidK(f"need k >= 3, got {k}")
    splits = []
    for run_id in range(k):
        test_fold = (k - 1 + run_id) % k
        val_fold = (test_fold - 1) % k
        train = frozenset(range(k)) - {test_fold, val_fold}
        splits.append(
            RunSplit(run_id=run_id, train_folds=train, val_fold=val_fold, test_fold=test_fold)
        )
    return splits


def _check_split(plan: FoldPlan, split: RunSplit) -> None:
    parts = set(split.train_folds) | {split.val_fold, split.test_fold}
    if len(split.train_folds) != plan.k - 2 or parts != set(range(plan.k)):
        raise InconsistentSplit(
            f"split (train={sorted(split.train_folds)}, val={split.val_fold}, "
            f"test={split.test_fold}) does not cover folds 0..{plan.k - 1} disjointly"
        )
    if split.val_fold in split.train_folds or split.test_fold in split.train_folds:
        raise InconsistentSplit("train folds overlap val/test fold")


def materialize_split(dataset: Dataset, plan: FoldPlan, split: RunSplit) -> SplitMaterialization:
    """Realize one run: training events in canonical order plus fold truths."""
    _check_split(plan, split)
    if len(plan.assignment) != len(dataset.events):
        raise InconsistentSplit(
            f"plan covers {len(plan.assignment)} events, dataset has {len(dataset.events)}"
        )
    train_events: list[InteractionEvent] = []
    val_sets: dict[str, set[str]] = {}
    test_sets: dict[str, set[str]] = {}
    train_users: set[str] = set()
    for event, fold in zip(dataset.events, plan.assignment):
        if fold in split.train_folds:
            train_events.append(event)
            train_users.add(event.user_id)
        elif fold == split.val_fold:
            val_sets.setdefault(event.user_id, set()).add(event.item_id)
        else:
            test_sets.setdefault(event.user_id, set()).add(event.item_id)
    cold = frozenset(u for u in test_sets if u not in train_users)
    return SplitMaterialization(
        run_id=split.run_id,
        train_events=tuple(train_events),
        val_truth={u: frozenset(s) for u, s in val_sets.items()},
        test_truth={u: frozenset(s) for u, s in test_sets.items()},
        cold_start_users=cold,
    )
