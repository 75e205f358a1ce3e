import numpy as np
import pytest

from recharness.behavioral import (
    PerturbationSpec,
    error_distance_test,
    jaccard,
    perturb_history,
    popularity_rank,
    sample_users,
    stability_from_lists,
    stability_test,
)
from recharness.errors import EmptyHistory, InvalidParameter, UnknownItem
from recharness.metrics import GroundTruth, RankedList
from recharness.models import baseline_popularity

from conftest import build_dataset


def rl(user, *items):
    return RankedList(user_id=user, items=tuple(items))


def gt(user, *items):
    return GroundTruth(user_id=user, relevant=frozenset(items))


@pytest.fixture
def catalog_dataset():
    return build_dataset(
        [
            ("u1", "t1", 1, 5),
            ("u1", "t3", 2, 3),
            ("u2", "t2", 1, 2),
            ("u2", "solo", 2, 1),
            ("u3", "t4", 1, 4),
        ],
        item_artists={
            "t1": "metal_band", "t2": "metal_band",
            "t3": "rock_band", "t4": "rock_band",
            "solo": "one_hit",
        },
    )


class TestPerturbHistory:
    def test_single_alternative_is_forced(self, catalog_dataset):
        history = [e for e in catalog_dataset.events if e.item_id == "t1"]
        ranks = popularity_rank(catalog_dataset.events, catalog_dataset.items)
        perturbed, swap = perturb_history(
            history, catalog_dataset.items, np.random.default_rng(0), ranks=ranks
        )
        # t1's artist has exactly one other track: t2
        assert swap.old_item == "t1" and swap.new_item == "t2"
        assert [e.item_id for e in perturbed] == ["t2"]
        assert perturbed[0].timestamp == history[0].timestamp
        assert perturbed[0].playcount == history[0].playcount

    def test_single_track_artist_swaps_to_nearest_popularity_rank(self, catalog_dataset):
        history = [e for e in catalog_dataset.events if e.item_id == "solo"]
        ranks = popularity_rank(catalog_dataset.events, catalog_dataset.items)
        # playcounts: t1=5, t4=4, t3=3, t2=2, solo=1 -> ranks 0..4, solo last.
        # nearest other rank to solo (4) is t2 (3).
        assert ranks == {"t1": 0, "t4": 1, "t3": 2, "t2": 3, "solo": 4}
        perturbed, swap = perturb_history(
            history, catalog_dataset.items, np.random.default_rng(0), ranks=ranks
        )
        assert swap.new_item == "t2"

    def test_nearest_rank_tie_prefers_more_popular(self):
        ds = build_dataset(
            [("u1", "low", 1, 1), ("u1", "mid", 2, 2), ("u1", "high", 3, 3)],
            item_artists={"low": "a1", "mid": "a2", "high": "a3"},
        )
        ranks = popularity_rank(ds.events, ds.items)
        assert ranks == {"high": 0, "mid": 1, "low": 2}
        history = [e for e in ds.events if e.item_id == "mid"]
        perturbed, swap = perturb_history(
            history, ds.items, np.random.default_rng(0), ranks=ranks
        )
        # high (rank 0) and low (rank 2) are both one rank away; prefer popular
        assert swap.new_item == "high"

    def test_exactly_one_position_changes(self, catalog_dataset):
        history = [e for e in catalog_dataset.events if e.user_id in ("u1", "u2")]
        assert len(history) == 4
        ranks = popularity_rank(catalog_dataset.events, catalog_dataset.items)
        perturbed, swap = perturb_history(
            history, catalog_dataset.items, np.random.default_rng(7), ranks=ranks
        )
        assert len(perturbed) == len(history)
        diffs = [
            i for i in range(len(history))
            if perturbed[i].item_id != history[i].item_id
        ]
        assert diffs == [swap.position]
        assert perturbed[swap.position].item_id != history[swap.position].item_id

    def test_empty_history_rejected(self, catalog_dataset):
        with pytest.raises(EmptyHistory):
            perturb_history([], catalog_dataset.items, np.random.default_rng(0), ranks={})


class TestJaccard:
    def test_identical(self):
        assert jaccard(["a", "b", "c"], ["a", "b", "c"]) == 1.0

    def test_partial(self):
        assert jaccard(["a", "b", "c"], ["a", "b", "d"]) == 0.5

    def test_empty_pair(self):
        assert jaccard([], []) == 1.0


class TestSampleUsers:
    def test_small_population_taken_whole(self):
        spec = PerturbationSpec(n_sample_users=10, seed=0)
        assert sample_users(["b", "a"], spec) == ["a", "b"]

    def test_sampling_is_deterministic(self):
        users = [f"u{n}" for n in range(100)]
        spec = PerturbationSpec(n_sample_users=5, seed=3)
        assert sample_users(users, spec) == sample_users(users, spec)
        assert len(sample_users(users, spec)) == 5

    def test_invalid_spec(self):
        with pytest.raises(InvalidParameter):
            PerturbationSpec(n_sample_users=0)
        with pytest.raises(InvalidParameter):
            PerturbationSpec(strategy="shuffle_everything")


class TestStability:
    def test_popularity_without_exclusion_is_perfectly_stable(self, catalog_dataset):
        handle = baseline_popularity(catalog_dataset.events, k=3)
        histories = {}
        for e in catalog_dataset.events:
            histories.setdefault(e.user_id, []).append(e)
        spec = PerturbationSpec(n_sample_users=10, seed=1)
        ranks = popularity_rank(catalog_dataset.events, catalog_dataset.items)
        report = stability_test(
            handle, sorted(histories), histories, catalog_dataset.items, spec, 3, ranks=ranks
        )
        assert report.mean_jaccard == 1.0
        assert report.n_evaluated == 3 and report.n_skipped == 0
        assert all(v == 1.0 for v in report.per_user.values())

    def test_empty_history_users_are_skipped(self, catalog_dataset):
        handle = baseline_popularity(catalog_dataset.events, k=3)
        histories = {"u1": [e for e in catalog_dataset.events if e.user_id == "u1"]}
        spec = PerturbationSpec(n_sample_users=10, seed=1)
        ranks = popularity_rank(catalog_dataset.events, catalog_dataset.items)
        report = stability_test(
            handle, ["u1", "ghost"], histories, catalog_dataset.items, spec, 3, ranks=ranks
        )
        assert report.n_evaluated == 1 and report.n_skipped == 1

    def test_mean_is_arithmetic_mean(self):
        report = stability_from_lists(
            original={"u1": ["a", "b"], "u2": ["a", "b"]},
            perturbed={"u1": ["a", "b"], "u2": ["c", "d"]},
            evaluated_users=["u1", "u2"],
            n_skipped=0,
        )
        assert report.mean_jaccard == pytest.approx(0.5)
        assert report.per_user == {"u1": 1.0, "u2": 0.0}


class TestErrorDistance:
    def test_unrelated_prediction_distance_one(self, catalog_dataset):
        # truth is a rock_band track; predictions hold a metal_band track only
        report = error_distance_test(
            [rl("u1", "t1")], [gt("u1", "t4")], catalog_dataset.items, 2
        )
        assert report.per_user["u1"] == 1.0
        assert report.quality == 0.0

    def test_exact_hit_distance_zero(self, catalog_dataset):
        report = error_distance_test(
            [rl("u1", "t1")], [gt("u1", "t1")], catalog_dataset.items, 2
        )
        assert report.per_user["u1"] == 0.0

    def test_same_artist_distance_half(self, catalog_dataset):
        # miss, but t2 shares metal_band with truth t1
        report = error_distance_test(
            [rl("u1", "t2")], [gt("u1", "t1")], catalog_dataset.items, 2
        )
        assert report.per_user["u1"] == 0.5
        assert report.quality == 0.5

    def test_missing_prediction_list_distance_one(self, catalog_dataset):
        report = error_distance_test([], [gt("u1", "t1")], catalog_dataset.items, 2)
        assert report.per_user["u1"] == 1.0

    def test_values_limited_to_three_levels(self, catalog_dataset):
        preds = [rl("u1", "t2"), rl("u2", "t2"), rl("u3", "t4")]
        truths = [gt("u1", "t1"), gt("u2", "t2"), gt("u3", "t1")]
        report = error_distance_test(preds, truths, catalog_dataset.items, 2)
        assert set(report.per_user.values()) <= {0.0, 0.5, 1.0}
        assert report.quality + report.mean_distance == pytest.approx(1.0)

    def test_hit_implies_zero_distance(self, catalog_dataset):
        preds = [rl("u1", "t3", "t1")]
        truths = [gt("u1", "t1")]
        report = error_distance_test(preds, truths, catalog_dataset.items, 2)
        assert report.per_user["u1"] == 0.0

    def test_unknown_item_rejected(self, catalog_dataset):
        with pytest.raises(UnknownItem):
            error_distance_test(
                [rl("u1", "mystery")], [gt("u1", "t1")], catalog_dataset.items, 2
            )


class TestDeterminism:
    def test_stability_is_reproducible_and_order_insensitive(self, catalog_dataset):
        handle = baseline_popularity(catalog_dataset.events, k=2, exclude_seen=True)
        histories = {}
        for e in catalog_dataset.events:
            histories.setdefault(e.user_id, []).append(e)
        spec = PerturbationSpec(n_sample_users=10, seed=5)
        ranks = popularity_rank(catalog_dataset.events, catalog_dataset.items)
        first = stability_test(
            handle, ["u1", "u2", "u3"], histories, catalog_dataset.items, spec, 2, ranks=ranks
        )
        second = stability_test(
            handle, ["u3", "u2", "u1"], histories, catalog_dataset.items, spec, 2, ranks=ranks
        )
        assert first == second
