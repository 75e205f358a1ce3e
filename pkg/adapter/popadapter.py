"""Reference external recommender: a popularity baseline speaking the
request-directory file protocol.

Invoked as ``pop-adapter <request_dir>`` (or ``python popadapter.py
<request_dir>``). The directory must hold:

* ``train.tsv``       tab-separated events: user_id, item_id, timestamp, playcount
* ``test_users.tsv``  one user_id per line after a header
* ``request.json``    at least ``k`` (list length), plus run bookkeeping

The adapter ranks items by total training playcount (ties broken by
item_id), writes the same top-k list for every requested user to
``predictions.tsv`` (columns user_id, rank, item_id; rank 1-based; rows in
test-user order), and exits 0. Any contract violation exits nonzero with a
diagnostic on stderr. Only the standard library is used; the adapter never
imports the harness.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass

TRAIN_COLUMNS = ["user_id", "item_id", "timestamp", "playcount"]


class AdapterError(Exception):
    """Raised on any malformed input; turned into a nonzero exit."""


@dataclass(frozen=True)
class AdapterRequest:
    k: int
    run_id: int = 0
    seed: int = 0
    phase: str = "fit_predict"
    budget_remaining: int = 0

    @classmethod
    def load(cls, path: str) -> "AdapterRequest":
        if not os.path.isfile(path):
            raise AdapterError(f"missing request file: {path}")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise AdapterError(f"request.json is not valid JSON: {exc}") from exc
        try:
            k = int(payload["k"])
        except (KeyError, TypeError, ValueError):
            raise AdapterError("request.json must carry an integer 'k'") from None
        if k < 1:
            raise AdapterError(f"k must be >= 1, got {k}")
        return cls(
            k=k,
            run_id=int(payload.get("run_id", 0)),
            seed=int(payload.get("seed", 0)),
            phase=str(payload.get("phase", "fit_predict")),
            budget_remaining=int(payload.get("budget_remaining", 0)),
        )


def read_item_playcounts(train_path: str) -> dict[str, int]:
    """Total playcount per item from train.tsv."""
    if not os.path.isfile(train_path):
        raise AdapterError(f"missing training file: {train_path}")
    counts: dict[str, int] = {}
    with open(train_path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").split("\t")
        if header != TRAIN_COLUMNS:
            raise AdapterError(f"train.tsv header must be {TRAIN_COLUMNS}, got {header}")
        for line_no, line in enumerate(fh, start=2):
            stripped = line.rstrip("\r\n")
            if not stripped:
                continue
            fields = stripped.split("\t")
            if len(fields) != 4:
                raise AdapterError(f"train.tsv:{line_no}: expected 4 fields")
            item = fields[1]
            try:
                playcount = int(fields[3])
            except ValueError:
                raise AdapterError(
                    f"train.tsv:{line_no}: playcount is not an integer"
                ) from None
            if playcount < 1:
                raise AdapterError(f"train.tsv:{line_no}: playcount must be >= 1")
            counts[item] = counts.get(item, 0) + playcount
    if not counts:
        raise AdapterError("train.tsv holds no events")
    return counts


def read_test_users(path: str) -> list[str]:
    if not os.path.isfile(path):
        raise AdapterError(f"missing test users file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "user_id":
        raise AdapterError("test_users.tsv must start with a 'user_id' header")
    return [line for line in lines[1:] if line]


def rank_items(counts: dict[str, int], k: int) -> list[str]:
    """Most played first; ties broken by item_id ascending."""
    return sorted(counts, key=lambda item: (-counts[item], item))[:k]


def write_predictions(path: str, users: list[str], top_items: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("user_id\trank\titem_id\n")
        for user in users:
            for rank, item in enumerate(top_items, start=1):
                fh.write(f"{user}\t{rank}\t{item}\n")


def run(request_dir: str) -> None:
    request = AdapterRequest.load(os.path.join(request_dir, "request.json"))
    counts = read_item_playcounts(os.path.join(request_dir, "train.tsv"))
    users = read_test_users(os.path.join(request_dir, "test_users.tsv"))
    top_items = rank_items(counts, request.k)
    write_predictions(os.path.join(request_dir, "predictions.tsv"), users, top_items)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: pop-adapter <request_dir>", file=sys.stderr)
        return 2
    try:
        run(argv[0])
    except AdapterError as exc:
        print(f"pop-adapter: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"pop-adapter: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
