"""Full evaluation loop: partition, rotate, train, predict, run all three
test tiers, and aggregate into a report.

The loop is reproducible end to end: given the same dataset files, config
and seed, the report body (everything outside the ``meta`` block) is
byte-identical across invocations. Wall-clock timings, timestamps and host
facts live only in ``meta``.
"""

from __future__ import annotations

import concurrent.futures
import platform
import shlex
import sys
import tempfile
import time
from dataclasses import dataclass

from . import behavioral, folds, metrics, slices
from ._version import __version__
from .datamodel import Dataset, InteractionEvent, load_dataset
from .errors import InvalidParameter
from .metrics import GroundTruth, RankedList
from .models import (
    CooccurrenceRec,
    ModelHandle,
    OracleRec,
    PopularityRec,
    RandomRec,
    TrainBudget,
    external_handle,
    in_process_handle,
    prepare_request_dir,
    recommend,
    run_external,
    train,
)
from .scoring import DEFAULT_INCLUDED_TESTS, RunReport, TestResult, aggregate
from .util import stable_u64, substream

SLICE_TEST_IDS = {
    "user_country": "slice.country.worst",
    "user_gender": "slice.gender.worst",
    "user_activity": "slice.activity.worst",
    "item_popularity": "slice.popularity.worst",
}

ALL_TEST_IDS = frozenset(
    ("hr_at_k", "mrr_at_k", "ndcg_at_k", "map_at_k", "coverage",
     "slice.cold_start.hr", "behavioral.stability", "behavioral.error_quality")
) | frozenset(SLICE_TEST_IDS.values())


@dataclass(frozen=True)
class EvalConfig:
    """Parameters of one full local evaluation."""

    events_path: str
    items_path: str
    users_path: str
    k: int = 20
    folds: int = 5
    seed: int = 0
    model: str = "popularity"
    exclude_seen: bool = False
    included_tests: tuple[str, ...] = DEFAULT_INCLUDED_TESTS
    sample_users: int = behavioral.DEFAULT_SAMPLE_USERS
    budget_limit: int = 50
    timeout_secs: float = 3600.0
    n_buckets: int = 4
    neighborhood: int = 100
    parallel_runs: bool = False
    per_user_values: bool = False
    request_root: str | None = None

    def __post_init__(self):
        if self.folds < 3:
            raise InvalidParameter(f"folds must be >= 3, got {self.folds}")
        if self.k < 1:
            raise InvalidParameter(f"k must be >= 1, got {self.k}")
        if self.budget_limit < 1:
            raise InvalidParameter(f"budget must be >= 1, got {self.budget_limit}")
        if not self.included_tests:
            raise InvalidParameter("included_tests must be non-empty")
        unknown = sorted(set(self.included_tests) - ALL_TEST_IDS)
        if unknown:
            raise InvalidParameter(
                f"unknown test id {unknown[0]!r}; known: {sorted(ALL_TEST_IDS)}"
            )


def build_model_handle(config: EvalConfig, materialization: folds.SplitMaterialization) -> ModelHandle:
    """Resolve the config's model selector into a handle for one run."""
    selector = config.model
    if selector == "popularity":
        return in_process_handle(PopularityRec(exclude_seen=config.exclude_seen))
    if selector == "cooc":
        return in_process_handle(CooccurrenceRec(neighborhood=config.neighborhood))
    if selector == "random":
        return in_process_handle(
            RandomRec(seed=stable_u64("random-model", config.seed), exclude_seen=config.exclude_seen)
        )
    if selector == "oracle":
        return in_process_handle(OracleRec(materialization.test_truth))
    if selector.startswith("external:"):
        command = shlex.split(selector[len("external:"):])
        return external_handle(command, timeout_secs=config.timeout_secs)
    raise InvalidParameter(
        f"unknown model {selector!r}; expected random|popularity|cooc|oracle|external:<cmd>"
    )


@dataclass
class _RunOutcome:
    run_id: int
    results: list[TestResult]
    slice_reports: dict[str, dict]
    per_user: dict[str, list[float]]
    timings: dict[str, float]


def run_evaluation(
    config: EvalConfig,
    dataset: Dataset | None = None,
    model_factory=None,
) -> tuple[RunReport, folds.FoldPlan]:
    """Execute the whole rotation and return (report, fold plan).

    ``model_factory`` may be supplied to inject a custom handle per run
    (it receives the run's SplitMaterialization); the CLI uses the string
    selector in the config.
    """
    started = time.time()
    clock_start = time.perf_counter()
    timings: dict[str, object] = {}

    t0 = time.perf_counter()
    if dataset is None:
        dataset = load_dataset(config.events_path, config.items_path, config.users_path)
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    plan = folds.partition(dataset, config.folds, config.seed)
    schedule = folds.rotation_schedule(config.folds)
    timings["partition"] = time.perf_counter() - t0

    factory = model_factory or (lambda m: build_model_handle(config, m))
    request_root = config.request_root
    if request_root is None and config.model.startswith("external:"):
        request_root = tempfile.mkdtemp(prefix="recharness-requests-")

    def one_run(split: folds.RunSplit) -> _RunOutcome:
        return _run_one(dataset, plan, split, config, factory, request_root)

    parallel = config.parallel_runs and not config.model.startswith("external:")
    if parallel:
        with concurrent.futures.ThreadPoolExecutor(max_workers=config.folds) as pool:
            outcomes = list(pool.map(one_run, schedule))
    else:
        outcomes = [one_run(split) for split in schedule]
    outcomes.sort(key=lambda o: o.run_id)

    all_results: list[TestResult] = []
    slice_block: dict[str, dict] = {}
    per_user_values: dict[str, list[float]] = {}
    run_timings: dict[str, dict[str, float]] = {}
    for outcome in outcomes:
        all_results.extend(outcome.results)
        slice_block[str(outcome.run_id)] = outcome.slice_reports
        run_timings[str(outcome.run_id)] = outcome.timings
        for test_id, values in outcome.per_user.items():
            per_user_values.setdefault(test_id, []).extend(values)
    timings["runs"] = run_timings
    timings["total"] = time.perf_counter() - clock_start

    final_score = aggregate(all_results, config.included_tests)
    meta = {
        "created_utc": started,
        "host": platform.node(),
        "python": sys.version.split()[0],
        "wall_clock": timings,
    }
    report = RunReport(
        harness_version=__version__,
        dataset_digest=dataset.digest(),
        fold_seed=config.seed,
        k=config.k,
        folds=config.folds,
        model=config.model,
        included_tests=tuple(config.included_tests),
        results=tuple(sorted(all_results, key=lambda r: (r.test_id, r.run_id))),
        final_score=final_score,
        slices=slice_block,
        per_user_values=per_user_values if config.per_user_values else None,
        meta=meta,
    )
    return report, plan


def _histories(train_events) -> dict[str, list[InteractionEvent]]:
    out: dict[str, list[InteractionEvent]] = {}
    for event in train_events:
        out.setdefault(event.user_id, []).append(event)
    return out


def _run_one(
    dataset: Dataset,
    plan: folds.FoldPlan,
    split: folds.RunSplit,
    config: EvalConfig,
    factory,
    request_root: str | None,
) -> _RunOutcome:
    timings: dict[str, float] = {}
    run_id = split.run_id

    mat = folds.materialize_split(dataset, plan, split)
    handle = factory(mat)
    histories = _histories(mat.train_events)
    test_users = sorted(mat.test_truth)
    truths = [GroundTruth(user_id=u, relevant=mat.test_truth[u]) for u in test_users]

    t0 = time.perf_counter()
    budget = TrainBudget(config.budget_limit)
    train(handle, mat.train_events, handle.setting(), budget)
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if handle.binding == "in_process":
        preds = [
            recommend(handle, u, [e.item_id for e in histories.get(u, ())], config.k)
            for u in test_users
        ]
    else:
        if request_root is None:  # factory-built external handle
            request_root = tempfile.mkdtemp(prefix="recharness-requests-")
        val_events = [
            e for e, f in zip(dataset.events, plan.assignment) if f == split.val_fold
        ]
        request_dir = f"{request_root}/run_{run_id:02d}"
        prepare_request_dir(
            request_dir,
            mat.train_events,
            test_users,
            config.k,
            run_id,
            config.seed,
            budget.remaining,
            val_events=val_events,
        )
        raw = run_external(handle, request_dir)
        preds = [RankedList(user_id=u, items=tuple(raw[u][: config.k])) for u in test_users]
    timings["predict"] = time.perf_counter() - t0

    results: list[TestResult] = []

    t0 = time.perf_counter()
    standard = metrics.evaluate_standard(preds, truths, config.k, len(dataset.items))
    for test_id, value in (
        ("hr_at_k", standard.hr_at_k),
        ("mrr_at_k", standard.mrr_at_k),
        ("ndcg_at_k", standard.ndcg_at_k),
        ("map_at_k", standard.map_at_k),
        ("coverage", standard.coverage),
    ):
        results.append(TestResult(test_id=test_id, run_id=run_id, value=value))
    per_user: dict[str, list[float]] = {}
    if config.per_user_values:
        pum = metrics.per_user_metrics(preds, truths, config.k)
        for name in metrics.RANK_METRICS:
            per_user[name] = [pum[u][name] for u in sorted(pum)]
    timings["metrics"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    slice_reports: dict[str, dict] = {}
    for kind in slices.SLICE_KINDS:
        spec = slices.SliceSpec(kind=kind, n_buckets=config.n_buckets)
        report = slices.slice_evaluate(
            preds,
            truths,
            dataset,
            spec,
            config.k,
            train_events=mat.train_events,
            cold_start_users=mat.cold_start_users,
        )
        slice_reports[kind] = report.to_dict()
        if kind in SLICE_TEST_IDS:
            results.append(
                TestResult(test_id=SLICE_TEST_IDS[kind], run_id=run_id, value=report.worst_group_hr)
            )
        else:  # cold_start: hit rate of the cold group, vacuously 1 if none
            cold = report.groups.get("cold")
            value = cold.metrics["hr_at_k"] if cold is not None else 1.0
            results.append(TestResult(test_id="slice.cold_start.hr", run_id=run_id, value=value))
    timings["slices"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    perturb_spec = behavioral.PerturbationSpec(
        n_sample_users=config.sample_users,
        seed=stable_u64("perturb-seed", config.seed, run_id),
    )
    sampled = behavioral.sample_users(test_users, perturb_spec)
    ranks = behavioral.popularity_rank(mat.train_events, dataset.items)
    if handle.binding == "in_process":
        stability = behavioral.stability_test(
            handle, sampled, histories, dataset.items, perturb_spec, config.k, ranks=ranks
        )
    else:
        stability = _external_stability(
            handle, mat, histories, sampled, perturb_spec, config, ranks,
            {p.user_id: list(p.items) for p in preds}, request_root, run_id, dataset, plan, split,
        )
    results.append(
        TestResult(test_id="behavioral.stability", run_id=run_id, value=stability.mean_jaccard)
    )
    distance = behavioral.error_distance_test(preds, truths, dataset.items, config.k)
    results.append(
        TestResult(test_id="behavioral.error_quality", run_id=run_id, value=distance.quality)
    )
    timings["behavioral"] = time.perf_counter() - t0

    return _RunOutcome(
        run_id=run_id,
        results=results,
        slice_reports=slice_reports,
        per_user=per_user,
        timings=timings,
    )


def _external_stability(
    handle: ModelHandle,
    mat: folds.SplitMaterialization,
    histories: dict[str, list[InteractionEvent]],
    sampled: list[str],
    spec: behavioral.PerturbationSpec,
    config: EvalConfig,
    ranks: dict[str, int],
    original_preds: dict[str, list[str]],
    request_root: str | None,
    run_id: int,
    dataset: Dataset,
    plan: folds.FoldPlan,
    split: folds.RunSplit,
) -> behavioral.StabilityReport:
    """Stability for batch-only external models.

    The file protocol offers no per-query histories, so the perturbation is
    applied to the sampled users' rows of the training file and the model is
    re-run fit_predict; lists are compared user by user. The per-user RNG
    streams match the in-process path exactly.
    """
    evaluated: list[str] = []
    n_skipped = 0
    swaps: dict[str, list[InteractionEvent]] = {}
    for user_id in sorted(sampled):
        history = histories.get(user_id, [])
        if not history:
            n_skipped += 1
            continue
        rng = substream(spec.seed, "perturb", user_id)
        perturbed, _ = behavioral.perturb_history(history, dataset.items, rng, ranks=ranks)
        swaps[user_id] = perturbed
        evaluated.append(user_id)
    if not evaluated:
        return behavioral.StabilityReport(
            mean_jaccard=0.0, per_user={}, n_evaluated=0, n_skipped=n_skipped
        )

    position: dict[str, int] = {u: 0 for u in swaps}
    perturbed_train: list[InteractionEvent] = []
    for event in mat.train_events:
        if event.user_id in swaps:
            index = position[event.user_id]
            perturbed_train.append(swaps[event.user_id][index])
            position[event.user_id] = index + 1
        else:
            perturbed_train.append(event)

    request_dir = f"{request_root}/run_{run_id:02d}_perturbed"
    prepare_request_dir(
        request_dir,
        perturbed_train,
        evaluated,
        config.k,
        run_id,
        config.seed,
        0,
    )
    perturbed_preds = run_external(handle, request_dir)
    return behavioral.stability_from_lists(original_preds, perturbed_preds, evaluated, n_skipped)
