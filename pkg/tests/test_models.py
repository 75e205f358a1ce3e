import os
import stat
import sys
import textwrap

import pytest

from recharness.errors import (
    BudgetExceeded,
    EmptyTraining,
    ExternalModelFailure,
    InvalidParameter,
    MalformedPredictions,
    ModelQueryFailure,
    Timeout,
)
from recharness.models import (
    CooccurrenceRec,
    HyperparameterSetting,
    OracleRec,
    PopularityRec,
    RandomRec,
    TrainBudget,
    baseline_cooccurrence,
    baseline_popularity,
    external_handle,
    in_process_handle,
    parse_predictions_tsv,
    prepare_request_dir,
    recommend,
    run_external,
    train,
    write_predictions_tsv,
)

from conftest import build_dataset


def events(*rows):
    return build_dataset(list(rows)).events


class TestHyperparameterSetting:
    def test_hash_is_order_independent(self):
        a = HyperparameterSetting.from_mapping({"lr": "0.1", "depth": "3"})
        b = HyperparameterSetting.from_mapping({"depth": "3", "lr": "0.1"})
        assert a.canonical_hash == b.canonical_hash

    def test_different_values_different_hash(self):
        a = HyperparameterSetting.from_mapping({"lr": "0.1"})
        b = HyperparameterSetting.from_mapping({"lr": "0.2"})
        assert a.canonical_hash != b.canonical_hash


class TestTrainBudget:
    def test_repeat_setting_is_free(self):
        budget = TrainBudget(limit=50)
        settings = [HyperparameterSetting.from_mapping({"n": str(i)}) for i in range(50)]
        for s in settings:
            budget.register(s)
        budget.register(settings[3])  # repeat of #3: allowed
        assert budget.remaining == 0

    def test_fifty_first_distinct_setting_raises(self):
        budget = TrainBudget(limit=50)
        for i in range(50):
            budget.register(HyperparameterSetting.from_mapping({"n": str(i)}))
        with pytest.raises(BudgetExceeded):
            budget.register(HyperparameterSetting.from_mapping({"n": "50"}))

    def test_train_charges_budget(self):
        ev = events(("u1", "a", 1, 1))
        budget = TrainBudget(limit=1)
        handle = in_process_handle(PopularityRec())
        train(handle, ev, HyperparameterSetting.from_mapping({"x": "1"}), budget)
        with pytest.raises(BudgetExceeded):
            train(handle, ev, HyperparameterSetting.from_mapping({"x": "2"}), budget)


class TestPopularityBaseline:
    def test_top_by_playcount(self):
        ev = events(("u1", "a", 1, 3), ("u2", "b", 1, 2), ("u3", "c", 1, 1))
        handle = baseline_popularity(ev, k=2)
        for user in ("u1", "u2", "anyone"):
            assert recommend(handle, user, [], 2).items == ("a", "b")

    def test_exclusion_filters_history(self):
        ev = events(("u1", "a", 1, 3), ("u2", "b", 1, 2), ("u3", "c", 1, 1))
        handle = baseline_popularity(ev, k=2, exclude_seen=True)
        assert recommend(handle, "u1", ["a"], 2).items == ("b", "c")

    def test_tie_breaks_lexicographically(self):
        ev = events(("u1", "a", 1, 2), ("u2", "b", 1, 2))
        handle = baseline_popularity(ev, k=1)
        assert recommend(handle, "u1", [], 1).items == ("a",)

    def test_empty_training_rejected(self):
        with pytest.raises(EmptyTraining):
            baseline_popularity([], k=1)


class TestCooccurrenceBaseline:
    def test_cooccurring_item_ranked_first(self):
        ev = events(
            ("u1", "a", 1, 1), ("u1", "b", 2, 1),
            ("u2", "a", 1, 1), ("u2", "b", 2, 1),
            ("u3", "c", 1, 1),
        )
        handle = baseline_cooccurrence(ev, k=2)
        # cooc(a,b) = 2 from two users; query [a] puts b first
        assert recommend(handle, "u9", ["a"], 2).items[0] == "b"

    def test_empty_history_falls_back_to_popularity(self):
        ev = events(("u1", "a", 1, 5), ("u1", "b", 2, 1), ("u2", "b", 3, 1))
        handle = baseline_cooccurrence(ev, k=2)
        assert recommend(handle, "u9", [], 2).items == ("a", "b")

    def test_single_user_corpus_fallback_excludes_history(self):
        ev = events(("u1", "a", 1, 1))
        handle = baseline_cooccurrence(ev, k=3)
        # catalog is {a}; excluding the history leaves nothing to recommend
        assert recommend(handle, "u1", ["a"], 3).items == ()

    def test_history_items_never_recommended(self):
        ev = events(
            ("u1", "a", 1, 1), ("u1", "b", 2, 1), ("u2", "a", 1, 1),
            ("u2", "c", 2, 1), ("u3", "b", 1, 1), ("u3", "c", 2, 1),
        )
        handle = baseline_cooccurrence(ev, k=3)
        assert "a" not in recommend(handle, "u9", ["a"], 3).items

    def test_neighborhood_truncation(self):
        rows = [("hub", f"i{n}", n, 1) for n in range(6)]
        rows += [("other", "i0", 1, 1), ("other", "i1", 2, 1)]
        ev = events(*rows)
        small = CooccurrenceRec(neighborhood=1)
        small.fit(ev)
        # i0's strongest neighbor is i1 (count 2); all others truncated away
        assert small._neighbors["i0"] == [("i1", 2)]


class TestRandomBaseline:
    def test_deterministic_per_seed_and_user(self):
        ev = events(*[("u1", f"i{n}", n, 1) for n in range(10)])
        model = RandomRec(seed=99)
        model.fit(ev)
        first = model.recommend("alice", [], 5)
        assert model.recommend("alice", [], 5) == first
        assert model.recommend("alice", ["i1"], 5) == first  # ignores history
        assert len(set(first)) == 5

    def test_different_users_differ_generally(self):
        ev = events(*[("u1", f"i{n}", n, 1) for n in range(30)])
        model = RandomRec(seed=7)
        model.fit(ev)
        lists = {tuple(model.recommend(f"user{n}", [], 5)) for n in range(8)}
        assert len(lists) > 1


class TestOracle:
    def test_returns_truth(self):
        model = OracleRec({"u1": {"b", "a"}})
        model.fit(())
        assert model.recommend("u1", [], 5) == ["a", "b"]
        assert model.recommend("unknown", [], 5) == []


class TestRecommendWrapper:
    def test_rejects_duplicates_from_model(self):
        class Broken:
            name = "broken"
            concurrent_query_safe = True

            def hyperparameters(self):
                return {"model": "broken"}

            def fit(self, train_events):
                pass

            def recommend(self, user_id, history, k):
                return ["x", "x"]

        handle = in_process_handle(Broken())
        with pytest.raises(ModelQueryFailure, match="duplicate"):
            recommend(handle, "u1", [], 3)

    def test_wraps_model_exceptions_with_user(self):
        class Crashy:
            name = "crashy"
            concurrent_query_safe = True

            def hyperparameters(self):
                return {"model": "crashy"}

            def fit(self, train_events):
                pass

            def recommend(self, user_id, history, k):
                raise RuntimeError("boom")

        handle = in_process_handle(Crashy())
        with pytest.raises(ModelQueryFailure, match="u42"):
            recommend(handle, "u42", [], 3)

    def test_truncates_overlong_lists(self):
        class Chatty:
            name = "chatty"
            concurrent_query_safe = True

            def hyperparameters(self):
                return {"model": "chatty"}

            def fit(self, train_events):
                pass

            def recommend(self, user_id, history, k):
                return [f"i{n}" for n in range(k + 5)]

        handle = in_process_handle(Chatty())
        assert len(recommend(handle, "u", [], 4).items) == 4


def make_script(tmp_path, body, name="model.py"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(body), encoding="utf-8")
    path.chmod(path.stat().st_mode | stat.S_IXUSR)
    return str(path)


ECHO_MODEL = """
    import os, sys
    request_dir = sys.argv[1]
    with open(os.path.join(request_dir, "test_users.tsv")) as fh:
        users = [line.strip() for line in fh.readlines()[1:] if line.strip()]
    with open(os.path.join(request_dir, "predictions.tsv"), "w") as fh:
        fh.write("user_id\\trank\\titem_id\\n")
        for user in users:
            fh.write(f"{user}\\t1\\ti00001\\n")
            fh.write(f"{user}\\t2\\ti00002\\n")
"""


class TestExternalProtocol:
    def request_dir(self, tmp_path):
        ev = events(("u1", "i00001", 1, 1), ("u2", "i00002", 2, 1))
        request = tmp_path / "req"
        prepare_request_dir(
            str(request), ev, ["u1", "u2"], k=3, run_id=0, seed=5, budget_remaining=49
        )
        return request

    def test_echo_adapter_round_trip(self, tmp_path):
        script = make_script(tmp_path, ECHO_MODEL)
        request = self.request_dir(tmp_path)
        handle = external_handle([sys.executable, script])
        preds = run_external(handle, str(request))
        assert preds == {"u1": ["i00001", "i00002"], "u2": ["i00001", "i00002"]}

    def test_missing_user_named(self, tmp_path):
        script = make_script(
            tmp_path,
            """
            import os, sys
            request_dir = sys.argv[1]
            with open(os.path.join(request_dir, "predictions.tsv"), "w") as fh:
                fh.write("user_id\\trank\\titem_id\\n")
                fh.write("u1\\t1\\ti00001\\n")
            """,
        )
        request = self.request_dir(tmp_path)
        handle = external_handle([sys.executable, script])
        with pytest.raises(MalformedPredictions, match="u2"):
            run_external(handle, str(request))

    def test_nonzero_exit_captured(self, tmp_path):
        script = make_script(
            tmp_path,
            """
            import sys
            sys.stderr.write("model exploded\\n")
            sys.exit(3)
            """,
        )
        request = self.request_dir(tmp_path)
        handle = external_handle([sys.executable, script])
        with pytest.raises(ExternalModelFailure, match="model exploded"):
            run_external(handle, str(request))

    def test_timeout(self, tmp_path):
        script = make_script(
            tmp_path,
            """
            import sys, time
            time.sleep(30)
            """,
        )
        request = self.request_dir(tmp_path)
        handle = external_handle([sys.executable, script], timeout_secs=0.5)
        with pytest.raises(Timeout):
            run_external(handle, str(request))

    def test_missing_request_files_rejected(self, tmp_path):
        script = make_script(tmp_path, ECHO_MODEL)
        handle = external_handle([sys.executable, script])
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(InvalidParameter, match="train.tsv"):
            run_external(handle, str(empty))

    def test_unexecutable_command_rejected(self):
        with pytest.raises(InvalidParameter):
            external_handle(["/no/such/binary"])

    def test_duplicate_prediction_rejected(self, tmp_path):
        path = tmp_path / "p.tsv"
        path.write_text(
            "user_id\trank\titem_id\nu1\t1\ta\nu1\t2\ta\n", encoding="utf-8"
        )
        with pytest.raises(MalformedPredictions, match="duplicate"):
            parse_predictions_tsv(str(path), ["u1"], 5)

    def test_out_of_order_rank_rejected(self, tmp_path):
        path = tmp_path / "p.tsv"
        path.write_text(
            "user_id\trank\titem_id\nu1\t2\ta\n", encoding="utf-8"
        )
        with pytest.raises(MalformedPredictions, match="out of order"):
            parse_predictions_tsv(str(path), ["u1"], 5)

    def test_more_than_k_rejected(self, tmp_path):
        path = tmp_path / "p.tsv"
        path.write_text(
            "user_id\trank\titem_id\nu1\t1\ta\nu1\t2\tb\n", encoding="utf-8"
        )
        with pytest.raises(MalformedPredictions, match="more than k"):
            parse_predictions_tsv(str(path), ["u1"], 1)

    def test_writer_parser_round_trip(self, tmp_path):
        path = tmp_path / "p.tsv"
        preds = {"u1": ["a", "b"], "u2": ["c"]}
        write_predictions_tsv(str(path), preds, ["u1", "u2"])
        assert parse_predictions_tsv(str(path), ["u1", "u2"], 5) == preds

    def test_val_events_written_when_supplied(self, tmp_path):
        ev = events(("u1", "i1", 1, 1), ("u2", "i2", 2, 1))
        request = tmp_path / "withval"
        prepare_request_dir(
            str(request), ev, ["u1"], k=2, run_id=1, seed=0, budget_remaining=50,
            val_events=ev[:1],
        )
        assert (request / "val.tsv").exists()
        body = (request / "request.json").read_text(encoding="utf-8")
        assert '"val_events": "val.tsv"' in body
