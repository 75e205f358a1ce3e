"""Black-box model contract: in-process and external bindings, baseline
recommenders, and the per-run hyperparameter budget.

In-process models implement ``fit(train_events)`` and
``recommend(user_id, history, k)``. External models are driven through a
directory exchange: the harness writes ``train.tsv``, ``test_users.tsv`` and
``request.json`` into a request directory, invokes the model command with
that directory as its sole argument, and reads back ``predictions.tsv``
(columns user_id, rank, item_id; rank is 1-based). Exit status 0 means
success.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import subprocess
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .datamodel import InteractionEvent, write_events_tsv
from .errors import (
    BudgetExceeded,
    EmptyTraining,
    ExternalModelFailure,
    InvalidParameter,
    MalformedPredictions,
    ModelQueryFailure,
    Timeout,
)
from .metrics import RankedList
from .util import substream

DEFAULT_BUDGET = 50
DEFAULT_TIMEOUT_SECS = 3600.0
PREDICTION_COLUMNS = ("user_id", "rank", "item_id")


@dataclass(frozen=True)
class HyperparameterSetting:
    """Opaque key/value setting with an insertion-order-independent hash."""

    params: tuple[tuple[str, str], ...]

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "HyperparameterSetting":
        return cls(params=tuple(sorted((str(k), str(v)) for k, v in mapping.items())))

    @property
    def canonical_hash(self) -> str:
        rendered = "\x1f".join(f"{k}={v}" for k, v in self.params)
        return hashlib.sha256(rendered.encode("utf-8")).hexdigest()


class TrainBudget:
    """Counts distinct hyperparameter settings trained within one run.

    Re-training an already-seen setting is free; the (limit+1)-th *distinct*
    setting raises BudgetExceeded. Each run of the rotation gets a fresh
    budget.
    """

    def __init__(self, limit: int = DEFAULT_BUDGET):
        if limit < 1:
            raise InvalidParameter(f"budget limit must be >= 1, got {limit}")
        self.limit = limit
        self._seen: set[str] = set()

    @property
    def seen_hashes(self) -> frozenset[str]:
        return frozenset(self._seen)

    @property
    def remaining(self) -> int:
        return self.limit - len(self._seen)

    def register(self, setting: HyperparameterSetting) -> None:
        digest = setting.canonical_hash
        if digest in self._seen:
            return
        if len(self._seen) >= self.limit:
            raise BudgetExceeded(
                f"setting #{len(self._seen) + 1} exceeds budget of {self.limit} "
                f"distinct hyperparameter settings"
            )
        self._seen.add(digest)


# --- in-process baselines ---------------------------------------------------

def _popularity_order(train_events: Sequence[InteractionEvent]) -> list[str]:
    """Items seen in training, most played first, ties broken by item_id."""
    totals: dict[str, int] = {}
    for event in train_events:
        totals[event.item_id] = totals.get(event.item_id, 0) + event.playcount
    return sorted(totals, key=lambda item: (-totals[item], item))


class PopularityRec:
    """Recommends the globally most played items; optionally skips items the
    querying user has already seen."""

    name = "popularity"
    concurrent_query_safe = True

    def __init__(self, exclude_seen: bool = False):
        self.exclude_seen = exclude_seen
        self._order: list[str] | None = None

    def hyperparameters(self) -> dict[str, str]:
        return {"model": self.name, "exclude_seen": str(self.exclude_seen)}

    def fit(self, train_events: Sequence[InteractionEvent]) -> None:
        if not train_events:
            raise EmptyTraining("popularity baseline needs at least one training event")
        self._order = _popularity_order(train_events)

    def recommend(self, user_id: str, history: Sequence[str], k: int) -> list[str]:
        if self._order is None:
            raise ModelQueryFailure("popularity baseline queried before training")
        if not self.exclude_seen:
            return self._order[:k]
        seen = set(history)
        return [item for item in self._order if item not in seen][:k]


class CooccurrenceRec:
    """Item-kNN on symmetric co-occurrence counts within user histories.

    Candidate score is the sum of co-occurrence counts with the query
    history; history items are excluded; short result lists are backfilled
    in popularity order.
    """

    name = "cooc"
    concurrent_query_safe = True

    def __init__(self, neighborhood: int = 100):
        if neighborhood < 1:
            raise InvalidParameter(f"neighborhood must be >= 1, got {neighborhood}")
        self.neighborhood = neighborhood
        self._neighbors: dict[str, list[tuple[str, int]]] | None = None
        self._fallback: list[str] | None = None

    def hyperparameters(self) -> dict[str, str]:
        return {"model": self.name, "neighborhood": str(self.neighborhood)}

    def fit(self, train_events: Sequence[InteractionEvent]) -> None:
        if not train_events:
            raise EmptyTraining("co-occurrence baseline needs at least one training event")
        by_user: dict[str, set[str]] = {}
        for event in train_events:
            by_user.setdefault(event.user_id, set()).add(event.item_id)
        counts: dict[str, dict[str, int]] = {}
        for user_id in sorted(by_user):
            items = sorted(by_user[user_id])
            for i, a in enumerate(items):
                row_a = counts.setdefault(a, {})
                for b in items[i + 1:]:
                    row_a[b] = row_a.get(b, 0) + 1
                    row_b = counts.setdefault(b, {})
                    row_b[a] = row_b.get(a, 0) + 1
        self._neighbors = {
            item: sorted(row.items(), key=lambda kv: (-kv[1], kv[0]))[: self.neighborhood]
            for item, row in counts.items()
        }
        self._fallback = _popularity_order(train_events)

    def recommend(self, user_id: str, history: Sequence[str], k: int) -> list[str]:
        if self._neighbors is None or self._fallback is None:
            raise ModelQueryFailure("co-occurrence baseline queried before training")
        seen = set(history)
        scores: dict[str, int] = {}
        for item in sorted(seen):
            for neighbor, count in self._neighbors.get(item, ()):
                if neighbor not in seen:
                    scores[neighbor] = scores.get(neighbor, 0) + count
        ranked = sorted(scores, key=lambda item: (-scores[item], item))[:k]
        if len(ranked) < k:
            chosen = set(ranked)
            for item in self._fallback:
                if len(ranked) >= k:
                    break
                if item not in seen and item not in chosen:
                    ranked.append(item)
                    chosen.add(item)
        return ranked


class RandomRec:
    """Uniformly random duplicate-free lists, deterministic per (seed, user)."""

    name = "random"
    concurrent_query_safe = True

    def __init__(self, seed: int = 0, exclude_seen: bool = False):
        self.seed = seed
        self.exclude_seen = exclude_seen
        self._items: list[str] | None = None

    def hyperparameters(self) -> dict[str, str]:
        return {
            "model": self.name,
            "seed": str(self.seed),
            "exclude_seen": str(self.exclude_seen),
        }

    def fit(self, train_events: Sequence[InteractionEvent]) -> None:
        if not train_events:
            raise EmptyTraining("random baseline needs at least one training event")
        self._items = sorted({event.item_id for event in train_events})

    def recommend(self, user_id: str, history: Sequence[str], k: int) -> list[str]:
        if self._items is None:
            raise ModelQueryFailure("random baseline queried before training")
        pool = self._items
        if self.exclude_seen:
            seen = set(history)
            pool = [item for item in pool if item not in seen]
        size = min(k, len(pool))
        rng = substream(self.seed, "random-rec", user_id)
        picks = rng.choice(len(pool), size=size, replace=False)
        return [pool[i] for i in picks]


class OracleRec:
    """Diagnostic handle that answers with the held-out truth itself.

    Only useful for harness self-tests (perfect-score paths); it is not a
    model anyone can submit.
    """

    name = "oracle"
    concurrent_query_safe = True

    def __init__(self, truths: Mapping[str, Iterable[str]]):
        self._truths = {user: sorted(items) for user, items in truths.items()}

    def hyperparameters(self) -> dict[str, str]:
        return {"model": self.name}

    def fit(self, train_events: Sequence[InteractionEvent]) -> None:
        pass

    def recommend(self, user_id: str, history: Sequence[str], k: int) -> list[str]:
        return self._truths.get(user_id, [])[:k]


# --- handles -----------------------------------------------------------------

@dataclass(frozen=True)
class ModelHandle:
    """Uniform wrapper over in-process model objects and external commands."""

    name: str
    binding: str  # "in_process" | "external"
    concurrent_query_safe: bool
    model: object | None = None
    command: tuple[str, ...] = ()
    workdir: str | None = None
    timeout_secs: float = DEFAULT_TIMEOUT_SECS
    params: dict[str, str] = field(default_factory=dict)

    def setting(self) -> HyperparameterSetting:
        if self.binding == "in_process":
            return HyperparameterSetting.from_mapping(self.model.hyperparameters())
        return HyperparameterSetting.from_mapping(
            {"model": self.name, "command": " ".join(self.command), **self.params}
        )


def in_process_handle(model, name: str | None = None) -> ModelHandle:
    return ModelHandle(
        name=name or model.name,
        binding="in_process",
        concurrent_query_safe=bool(getattr(model, "concurrent_query_safe", False)),
        model=model,
    )


def external_handle(
    command: Sequence[str],
    name: str = "external",
    workdir: str | None = None,
    timeout_secs: float = DEFAULT_TIMEOUT_SECS,
    params: Mapping[str, str] | None = None,
) -> ModelHandle:
    command = tuple(command)
    if not command:
        raise InvalidParameter("external command must be non-empty")
    executable = command[0]
    if shutil.which(executable) is None and not (
        os.path.isfile(executable) and os.access(executable, os.X_OK)
    ):
        raise InvalidParameter(f"external command not executable: {executable!r}")
    return ModelHandle(
        name=name,
        binding="external",
        concurrent_query_safe=False,
        command=command,
        workdir=workdir,
        timeout_secs=timeout_secs,
        params=dict(params or {}),
    )


def train(
    handle: ModelHandle,
    train_events: Sequence[InteractionEvent],
    setting: HyperparameterSetting,
    budget: TrainBudget,
) -> str:
    """Charge the budget and fit in-process state; returns a state token.

    External models defer actual fitting to the fit_predict exchange in
    :func:`run_external`; training still counts against the budget.
    """
    budget.register(setting)
    if handle.binding == "in_process":
        handle.model.fit(train_events)
    return f"{handle.name}:{setting.canonical_hash[:12]}"


def recommend(handle: ModelHandle, user_id: str, history: Sequence[str], k: int) -> RankedList:
    """Query one user's top-k list from a trained in-process model."""
    if k < 1:
        raise InvalidParameter(f"k must be >= 1, got {k}")
    if handle.binding != "in_process":
        raise ModelQueryFailure(
            f"model {handle.name!r} is external; per-user queries go through run_external"
        )
    try:
        items = list(handle.model.recommend(user_id, history, k))
    except ModelQueryFailure:
        raise
    except Exception as exc:  # noqa: BLE001 - model code is a black box
        raise ModelQueryFailure(f"model {handle.name!r} failed for user {user_id!r}: {exc}") from exc
    if len(items) > k:
        items = items[:k]
    try:
        return RankedList(user_id=user_id, items=tuple(items))
    except InvalidParameter as exc:
        raise ModelQueryFailure(
            f"model {handle.name!r} returned duplicate items for user {user_id!r}"
        ) from exc


# --- baseline factories (construct-and-train convenience) --------------------

def baseline_popularity(
    train_events: Sequence[InteractionEvent], k: int, exclude_seen: bool = False
) -> ModelHandle:
    model = PopularityRec(exclude_seen=exclude_seen)
    model.fit(train_events)
    return in_process_handle(model)


def baseline_cooccurrence(
    train_events: Sequence[InteractionEvent], k: int, neighborhood: int = 100
) -> ModelHandle:
    model = CooccurrenceRec(neighborhood=neighborhood)
    model.fit(train_events)
    return in_process_handle(model)


# --- external file protocol ---------------------------------------------------

def prepare_request_dir(
    request_dir: str,
    train_events: Sequence[InteractionEvent],
    test_users: Sequence[str],
    k: int,
    run_id: int,
    seed: int,
    budget_remaining: int,
    val_events: Sequence[InteractionEvent] | None = None,
) -> None:
    """Lay out one fit_predict exchange for an external model.

    ``val.tsv`` is written only when validation events are supplied; models
    may use it for tuning but it never contributes to scores.
    """
    os.makedirs(request_dir, exist_ok=True)
    write_events_tsv(os.path.join(request_dir, "train.tsv"), train_events)
    with open(os.path.join(request_dir, "test_users.tsv"), "w", encoding="utf-8") as fh:
        fh.write("user_id\n")
        for user in test_users:
            fh.write(f"{user}\n")
    request = {
        "k": k,
        "run_id": run_id,
        "seed": seed,
        "phase": "fit_predict",
        "budget_remaining": budget_remaining,
    }
    if val_events is not None:
        write_events_tsv(os.path.join(request_dir, "val.tsv"), val_events)
        request["val_events"] = "val.tsv"
    with open(os.path.join(request_dir, "request.json"), "w", encoding="utf-8") as fh:
        json.dump(request, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_predictions_tsv(
    path: str, preds: Mapping[str, Sequence[str]], user_order: Sequence[str]
) -> None:
    """Render predictions in the wire format, one row per (user, rank)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(PREDICTION_COLUMNS) + "\n")
        for user in user_order:
            for rank, item in enumerate(preds.get(user, ()), start=1):
                fh.write(f"{user}\t{rank}\t{item}\n")


def parse_predictions_tsv(
    path: str, expected_users: Sequence[str], k: int
) -> dict[str, list[str]]:
    """Parse and validate predictions.tsv against the request contract."""
    if not os.path.isfile(path):
        raise MalformedPredictions(f"predictions file missing: {path}")
    preds: dict[str, list[str]] = {}
    expected = set(expected_users)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\r\n").split("\t")
        if header != list(PREDICTION_COLUMNS):
            raise MalformedPredictions(
                f"expected header {list(PREDICTION_COLUMNS)}, got {header}"
            )
        for line_no, line in enumerate(fh, start=2):
            stripped = line.rstrip("\r\n")
            if stripped == "":
                continue
            fields = stripped.split("\t")
            if len(fields) != 3:
                raise MalformedPredictions(f"line {line_no}: expected 3 fields")
            user, rank_raw, item = fields
            try:
                rank = int(rank_raw)
            except ValueError:
                raise MalformedPredictions(
                    f"line {line_no}: rank is not an integer: {rank_raw!r}"
                ) from None
            if user not in expected:
                raise MalformedPredictions(
                    f"line {line_no}: user {user!r} was not requested"
                )
            row = preds.setdefault(user, [])
            if rank != len(row) + 1:
                raise MalformedPredictions(
                    f"line {line_no}: user {user!r} rank {rank} out of order "
                    f"(expected {len(row) + 1})"
                )
            if item in row:
                raise MalformedPredictions(
                    f"line {line_no}: duplicate item {item!r} for user {user!r}"
                )
            row.append(item)
            if len(row) > k:
                raise MalformedPredictions(
                    f"line {line_no}: user {user!r} has more than k={k} predictions"
                )
    missing = sorted(expected - set(preds))
    if missing:
        raise MalformedPredictions(f"predictions missing for user {missing[0]!r}")
    return preds


def run_external(handle: ModelHandle, request_dir: str) -> dict[str, list[str]]:
    """Invoke an external model on a prepared request directory.

    The command receives the directory path as its sole argument; on exit 0
    the harness parses and validates ``predictions.tsv``.
    """
    for required in ("train.tsv", "test_users.tsv", "request.json"):
        if not os.path.isfile(os.path.join(request_dir, required)):
            raise InvalidParameter(f"request dir missing {required}: {request_dir}")
    with open(os.path.join(request_dir, "request.json"), "r", encoding="utf-8") as fh:
        request = json.load(fh)
    with open(os.path.join(request_dir, "test_users.tsv"), "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    expected_users = [line for line in lines[1:] if line]

    cmd = list(handle.command) + [str(request_dir)]
    try:
        proc = subprocess.run(
            cmd,
            cwd=handle.workdir,
            capture_output=True,
            text=True,
            timeout=handle.timeout_secs,
        )
    except subprocess.TimeoutExpired as exc:
        partial = (exc.stderr or b"")
        if isinstance(partial, bytes):
            partial = partial.decode("utf-8", "replace")
        raise Timeout(
            f"model {handle.name!r} exceeded {handle.timeout_secs}s; "
            f"partial stderr: {partial[-500:]}"
        ) from exc
    except OSError as exc:
        raise ExternalModelFailure(f"could not start {cmd[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        raise ExternalModelFailure(
            f"model {handle.name!r} exited {proc.returncode}; "
            f"stderr: {proc.stderr[-1000:]}"
        )
    return parse_predictions_tsv(
        os.path.join(request_dir, "predictions.tsv"), expected_users, int(request["k"])
    )
