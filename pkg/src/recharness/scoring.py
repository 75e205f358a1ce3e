"""Score aggregation, report serialization, and statistical verification.

Every test emits a higher-is-better value in [0, 1], which makes the final
score a plain unweighted mean: first average each test over the runs of the
rotation, then average across tests. Verification compares two reports per
test through 95% percentile-bootstrap confidence intervals of the mean and
passes only under mutual containment (each report's mean inside the other's
interval), a symmetric and conservative reading.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyInput,
    IncompatibleReports,
    InvalidParameter,
    MissingTestValue,
)
from .util import canonical_json, make_rng, stable_u64

_VALUE_EPS = 1e-9

DEFAULT_INCLUDED_TESTS = (
    "hr_at_k",
    "mrr_at_k",
    "ndcg_at_k",
    "map_at_k",
    "slice.country.worst",
    "slice.popularity.worst",
    "slice.cold_start.hr",
    "behavioral.stability",
    "behavioral.error_quality",
)


@dataclass(frozen=True)
class TestResult:
    """One named test's value for one run of the rotation."""

    __test__ = False  # keep pytest's collector away from the name

    test_id: str
    run_id: int
    value: float

    def __post_init__(self):
        if not (-_VALUE_EPS <= self.value <= 1.0 + _VALUE_EPS):
            raise InvalidParameter(
                f"test {self.test_id!r} run {self.run_id} value {self.value} outside [0, 1]"
            )
        object.__setattr__(self, "value", min(1.0, max(0.0, float(self.value))))


def aggregate(results: Iterable[TestResult], included_tests: Iterable[str]) -> float:
    """Mean over runs per test, then unweighted mean over included tests."""
    included = sorted(set(included_tests))
    if not included:
        raise InvalidParameter("included_tests must be non-empty")
    table: dict[tuple[str, int], float] = {}
    runs: set[int] = set()
    for result in results:
        key = (result.test_id, result.run_id)
        if key in table:
            raise InvalidParameter(f"duplicate result for test {key[0]!r} run {key[1]}")
        table[key] = result.value
        runs.add(result.run_id)
    if not runs:
        raise MissingTestValue("no test results to aggregate")
    run_ids = sorted(runs)
    test_means = []
    for test_id in included:
        values = []
        for run_id in run_ids:
            if (test_id, run_id) not in table:
                raise MissingTestValue(f"test {test_id!r} has no value for run {run_id}")
            values.append(table[(test_id, run_id)])
        test_means.append(sum(values) / len(values))
    return sum(test_means) / len(test_means)


def bootstrap_mean_ci(
    values: Sequence[float],
    n_boot: int = 10000,
    alpha: float = 0.05,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap CI for the mean of *values*.

    Resamples with replacement n_boot times and returns the (alpha/2,
    1 - alpha/2) empirical quantiles of the resampled means, widened if
    necessary so the interval always contains the sample mean. Deterministic
    for a given seed.
    """
    if len(values) == 0:
        raise EmptyInput("cannot bootstrap an empty sample")
    if n_boot < 1:
        raise InvalidParameter(f"n_boot must be >= 1, got {n_boot}")
    if not (0.0 < alpha < 1.0):
        raise InvalidParameter(f"alpha must be in (0, 1), got {alpha}")
    arr = np.asarray(values, dtype=np.float64)
    rng = make_rng(seed)
    indices = rng.integers(0, arr.size, size=(n_boot, arr.size))
    means = arr[indices].mean(axis=1)
    low, high = np.quantile(means, [alpha / 2.0, 1.0 - alpha / 2.0])
    sample_mean = float(arr.mean())
    return (min(float(low), sample_mean), max(float(high), sample_mean))


@dataclass(frozen=True)
class RunReport:
    """Full record of one local or remote evaluation."""

    harness_version: str
    dataset_digest: str
    fold_seed: int
    k: int
    folds: int
    model: str
    included_tests: tuple[str, ...]
    results: tuple[TestResult, ...]
    final_score: float
    slices: dict = field(default_factory=dict)
    per_user_values: dict[str, list[float]] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ordered = tuple(sorted(self.results, key=lambda r: (r.test_id, r.run_id)))
        object.__setattr__(self, "results", ordered)

    def body_dict(self) -> dict:
        """Everything except the metadata block (the comparable content)."""
        body = {
            "harness_version": self.harness_version,
            "dataset_digest": self.dataset_digest,
            "fold_seed": self.fold_seed,
            "k": self.k,
            "folds": self.folds,
            "model": self.model,
            "included_tests": list(self.included_tests),
            "results": [
                {"test_id": r.test_id, "run_id": r.run_id, "value": r.value}
                for r in self.results
            ],
            "final_score": self.final_score,
            "slices": self.slices,
        }
        if self.per_user_values is not None:
            body["per_user_values"] = self.per_user_values
        return body

    def body_json(self) -> str:
        """Canonical JSON of the report without ``meta``; byte-comparable."""
        return canonical_json(self.body_dict())

    def to_dict(self) -> dict:
        payload = self.body_dict()
        payload["meta"] = self.meta
        return payload

    def save(self, path: str) -> None:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(self.to_dict()))
            fh.write("\n")

    @classmethod
    def from_dict(cls, payload: Mapping) -> "RunReport":
        results = tuple(
            TestResult(test_id=r["test_id"], run_id=int(r["run_id"]), value=float(r["value"]))
            for r in payload["results"]
        )
        per_user = payload.get("per_user_values")
        if per_user is not None:
            per_user = {t: [float(v) for v in vs] for t, vs in per_user.items()}
        return cls(
            harness_version=str(payload["harness_version"]),
            dataset_digest=str(payload["dataset_digest"]),
            fold_seed=int(payload["fold_seed"]),
            k=int(payload["k"]),
            folds=int(payload["folds"]),
            model=str(payload["model"]),
            included_tests=tuple(payload["included_tests"]),
            results=results,
            final_score=float(payload["final_score"]),
            slices=dict(payload.get("slices", {})),
            per_user_values=per_user,
            meta=dict(payload.get("meta", {})),
        )

    @classmethod
    def load(cls, path: str) -> "RunReport":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def recompute_final_score(self) -> float:
        return aggregate(self.results, self.included_tests)

    def values_for(self, test_id: str) -> list[float]:
        values = [r.value for r in sorted(self.results, key=lambda r: r.run_id)
                  if r.test_id == test_id]
        if not values:
            raise MissingTestValue(f"report has no values for test {test_id!r}")
        return values


@dataclass(frozen=True)
class TestComparison:
    __test__ = False

    test_id: str
    local_mean: float
    remote_mean: float
    local_ci: tuple[float, float]
    remote_ci: tuple[float, float]
    passed: bool


@dataclass(frozen=True)
class VerificationResult:
    per_test: dict[str, TestComparison]
    overall_pass: bool

    def to_dict(self) -> dict:
        return {
            "per_test": {
                t: {
                    "local_mean": c.local_mean,
                    "remote_mean": c.remote_mean,
                    "local_ci": list(c.local_ci),
                    "remote_ci": list(c.remote_ci),
                    "passed": c.passed,
                }
                for t, c in self.per_test.items()
            },
            "overall_pass": self.overall_pass,
        }


def _contains(ci: tuple[float, float], value: float) -> bool:
    return ci[0] <= value <= ci[1]


def verify(
    local: RunReport,
    remote: RunReport,
    n_boot: int = 10000,
    alpha: float = 0.05,
    unit: str = "run",
) -> VerificationResult:
    """Statistically compare two reports test by test.

    A test passes when each report's mean lies inside the other report's
    bootstrapped CI. The CI of each side depends only on that side's values
    and the test id, so verify(a, b) and verify(b, a) agree. ``unit="user"``
    bootstraps per-user values where a report carries them, falling back to
    run-level values otherwise.
    """
    if unit not in ("run", "user"):
        raise InvalidParameter(f"unit must be 'run' or 'user', got {unit!r}")
    if local.harness_version != remote.harness_version:
        raise IncompatibleReports(
            f"harness version mismatch: {local.harness_version!r} vs {remote.harness_version!r}"
        )
    if local.k != remote.k:
        raise IncompatibleReports(f"k mismatch: {local.k} vs {remote.k}")
    if set(local.included_tests) != set(remote.included_tests):
        raise IncompatibleReports("included test sets differ")

    per_test: dict[str, TestComparison] = {}
    for test_id in sorted(set(local.included_tests)):
        local_values = _verification_values(local, test_id, unit)
        remote_values = _verification_values(remote, test_id, unit)
        seed = stable_u64("verify-ci", test_id)
        local_ci = bootstrap_mean_ci(local_values, n_boot=n_boot, alpha=alpha, seed=seed)
        remote_ci = bootstrap_mean_ci(remote_values, n_boot=n_boot, alpha=alpha, seed=seed)
        local_mean = sum(local_values) / len(local_values)
        remote_mean = sum(remote_values) / len(remote_values)
        passed = _contains(local_ci, remote_mean) and _contains(remote_ci, local_mean)
        per_test[test_id] = TestComparison(
            test_id=test_id,
            local_mean=local_mean,
            remote_mean=remote_mean,
            local_ci=local_ci,
            remote_ci=remote_ci,
            passed=passed,
        )
    return VerificationResult(
        per_test=per_test,
        overall_pass=all(c.passed for c in per_test.values()),
    )


def _verification_values(report: RunReport, test_id: str, unit: str) -> list[float]:
    if unit == "user" and report.per_user_values and test_id in report.per_user_values:
        values = report.per_user_values[test_id]
        if values:
            return list(values)
    return report.values_for(test_id)
