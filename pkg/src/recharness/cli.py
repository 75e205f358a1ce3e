"""Command-line front end.

Subcommands:

* ``gen``     write a synthetic power-law dataset as three TSV files
* ``eval``    run the full local evaluation loop and write a report
* ``verify``  statistically compare a local and a remote report
* ``report``  render a report file as plain-text tables

Exit codes: 0 success (for ``verify``: comparison passed); 1 verification
ran and failed; 2 usage, IO, data or protocol errors; 3 incompatible
reports.
"""

from __future__ import annotations

import argparse
import json
import sys

from .datamodel import generate_synthetic, save_dataset
from .errors import HarnessError, IncompatibleReports
from .harness import EvalConfig, run_evaluation
from .scoring import DEFAULT_INCLUDED_TESTS, RunReport, verify
from .util import canonical_json

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_ERROR = 2
EXIT_INCOMPATIBLE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recharness",
        description="Rounded offline evaluation for top-K recommenders: "
        "ranking metrics, slice metrics, and behavioral tests under a "
        "seeded rotating fold protocol.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic power-law dataset")
    gen.add_argument("--users", type=int, default=1000)
    gen.add_argument("--items", type=int, default=500)
    gen.add_argument("--events", type=int, default=50000)
    gen.add_argument("--zipf", type=float, default=1.1, help="popularity exponent")
    gen.add_argument("--artists", type=int, default=None,
                     help="default: items // 5, at least 1")
    gen.add_argument("--countries", default="US,UK,JP,DE,BR", help="comma-separated codes")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-dir", default=".", help="where events/items/users TSVs go")

    ev = sub.add_parser("eval", help="run the full local evaluation loop")
    ev.add_argument("--events", required=True)
    ev.add_argument("--items", required=True)
    ev.add_argument("--users", required=True)
    ev.add_argument("--k", type=int, default=20)
    ev.add_argument("--folds", type=int, default=5)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--model", default="popularity",
                    help="random | popularity | cooc | external:<command>")
    ev.add_argument("--exclude-seen", action="store_true",
                    help="filter a user's training items out of their recommendations")
    ev.add_argument("--tests", default=",".join(DEFAULT_INCLUDED_TESTS),
                    help="comma-separated test ids included in the final score")
    ev.add_argument("--budget", type=int, default=50,
                    help="distinct hyperparameter settings allowed per run")
    ev.add_argument("--timeout-secs", type=float, default=3600.0)
    ev.add_argument("--sample-users", type=int, default=1000,
                    help="users sampled for the perturbation test")
    ev.add_argument("--buckets", type=int, default=4,
                    help="quantile buckets for popularity/activity slices")
    ev.add_argument("--neighborhood", type=int, default=100,
                    help="neighbor list size for the co-occurrence baseline")
    ev.add_argument("--per-user-values", action="store_true",
                    help="embed per-user metric values for user-level verification")
    ev.add_argument("--parallel-runs", action="store_true",
                    help="run rotation runs concurrently (in-process models only)")
    ev.add_argument("--out", default="report.json")
    ev.add_argument("--foldplan-out", default=None,
                    help="fold assignment audit file (default: <out>.foldplan.json)")

    vf = sub.add_parser("verify", help="compare local and remote reports")
    vf.add_argument("local")
    vf.add_argument("remote")
    vf.add_argument("--n-boot", type=int, default=10000)
    vf.add_argument("--alpha", type=float, default=0.05)
    vf.add_argument("--unit", choices=("run", "user"), default="run",
                    help="bootstrap per-run values or per-user values when present")
    vf.add_argument("--out", default=None, help="optionally write the comparison as JSON")

    rp = sub.add_parser("report", help="render a report file as tables")
    rp.add_argument("path")
    return parser


def cmd_gen(args) -> int:
    artists = args.artists if args.artists is not None else max(1, args.items // 5)
    countries = [c for c in args.countries.split(",") if c]
    dataset = generate_synthetic(
        n_users=args.users,
        n_items=args.items,
        n_events=args.events,
        zipf_exponent=args.zipf,
        n_artists=artists,
        countries=countries,
        seed=args.seed,
    )
    out = args.out_dir.rstrip("/")
    save_dataset(dataset, f"{out}/events.tsv", f"{out}/items.tsv", f"{out}/users.tsv")
    print(f"wrote {len(dataset.events)} events, {len(dataset.items)} items, "
          f"{len(dataset.users)} users to {out}/")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = EvalConfig(
        events_path=args.events,
        items_path=args.items,
        users_path=args.users,
        k=args.k,
        folds=args.folds,
        seed=args.seed,
        model=args.model,
        exclude_seen=args.exclude_seen,
        included_tests=tuple(t for t in args.tests.split(",") if t),
        sample_users=args.sample_users,
        budget_limit=args.budget,
        timeout_secs=args.timeout_secs,
        n_buckets=args.buckets,
        neighborhood=args.neighborhood,
        parallel_runs=args.parallel_runs,
        per_user_values=args.per_user_values,
    )
    report, plan = run_evaluation(config)
    report.save(args.out)
    foldplan_path = args.foldplan_out or f"{args.out}.foldplan.json"
    plan.save(foldplan_path)
    print(f"model={report.model} k={report.k} folds={report.folds} seed={report.fold_seed}")
    print(f"final_score={report.final_score:.6f}")
    print(f"report written to {args.out}; fold plan to {foldplan_path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    local = RunReport.load(args.local)
    remote = RunReport.load(args.remote)
    result = verify(local, remote, n_boot=args.n_boot, alpha=args.alpha, unit=args.unit)
    for test_id in sorted(result.per_test):
        c = result.per_test[test_id]
        status = "pass" if c.passed else "FAIL"
        print(
            f"{status}  {test_id}: local {c.local_mean:.4f} "
            f"[{c.local_ci[0]:.4f}, {c.local_ci[1]:.4f}] vs remote {c.remote_mean:.4f} "
            f"[{c.remote_ci[0]:.4f}, {c.remote_ci[1]:.4f}]"
        )
    print(f"overall: {'PASS' if result.overall_pass else 'FAIL'}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(result.to_dict()))
            fh.write("\n")
    return EXIT_OK if result.overall_pass else EXIT_VERIFY_FAILED


def cmd_report(args) -> int:
    with open(args.path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"parse error at byte offset {exc.pos}: {exc.msg}", file=sys.stderr)
        return EXIT_ERROR
    report = RunReport.from_dict(payload)

    run_ids = sorted({r.run_id for r in report.results})
    test_ids = sorted({r.test_id for r in report.results})
    table = {(r.test_id, r.run_id): r.value for r in report.results}

    print(f"# Evaluation report (model={report.model}, k={report.k}, "
          f"folds={report.folds}, seed={report.fold_seed})")
    print()
    header = ["test"] + [f"run {r}" for r in run_ids] + ["mean"]
    print("| " + " | ".join(header) + " |")
    print("|" + "|".join(["---"] * len(header)) + "|")
    for test_id in test_ids:
        values = [table[(test_id, r)] for r in run_ids]
        mean = sum(values) / len(values)
        marker = "*" if test_id not in report.included_tests else ""
        cells = [f"{test_id}{marker}"] + [f"{v:.4f}" for v in values] + [f"{mean:.4f}"]
        print("| " + " | ".join(cells) + " |")
    print()
    print("`*` = reported only, not part of the final score")
    print()

    for run_id in run_ids:
        run_slices = report.slices.get(str(run_id), {})
        if not run_slices:
            continue
        print(f"## Slices, run {run_id}")
        print()
        print("| kind | group | members | hr_at_k |")
        print("|---|---|---|---|")
        for kind in sorted(run_slices):
            groups = run_slices[kind]["groups"]
            for label in sorted(groups):
                group = groups[label]
                flag = " (low support)" if group.get("low_support") else ""
                hr = group["metrics"].get("hr_at_k", 0.0)
                print(f"| {kind} | {label}{flag} | {group['count']} | {hr:.4f} |")
        print()
    print(f"final_score: {report.final_score:.6f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"gen": cmd_gen, "eval": cmd_eval, "verify": cmd_verify, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except IncompatibleReports as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except json.JSONDecodeError as exc:
        print(f"parse error at byte offset {exc.pos}: {exc.msg}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
