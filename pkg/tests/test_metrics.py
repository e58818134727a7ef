import numpy as np
import pytest

from minetune.errors import EmptyGalleryError, NoGroundTruthError
from minetune.metrics import (
    RankedQuery,
    average_precision,
    cmc,
    evaluate_features,
    mean_ap,
    mining_accuracy,
    rank_gallery,
)
from minetune.mining import MinedPair

from conftest import make_meta, random_unit_rows


def ranked(relevant, query_id=0):
    rel = np.asarray(relevant, dtype=bool)
    return RankedQuery(
        query_id=query_id,
        gallery_ids=np.arange(len(rel)),
        relevant=rel,
    )


class TestRankGallery:
    def test_single_valid_item_at_rank_one(self):
        qmeta = make_meta([0], item_ids=[0], true_ids=[5])
        gmeta = make_meta([1], item_ids=[1], true_ids=[5])
        out = rank_gallery(np.array([[1.0, 0.0]]), qmeta, np.array([[0.0, 1.0]]), gmeta)
        assert list(out[0].gallery_ids) == [1]
        assert out[0].relevant.tolist() == [True]

    def test_same_camera_relatives_excluded_and_query_skippable(self):
        # queries 0 and 1: their only same-identity item shares their camera,
        # so they end up with zero relevant entries and are skipped; queries 2
        # and 3 find each other across cameras
        feats = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]])
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        meta = make_meta([0, 0, 1, 0], true_ids=[7, 7, 8, 8])
        out = rank_gallery(feats, meta, feats, meta)
        assert out[0].n_relevant == 0
        # the excluded entries are gone entirely, not just marked irrelevant
        assert 1 not in out[0].gallery_ids
        m, evaluated, skipped = mean_ap(out)
        assert evaluated == 2
        assert skipped == 2
        assert m == 1.0

    def test_three_item_hand_order(self):
        # query at e0; gallery at distances 0.2, 0.6, 1.4 (ids 2, 0, 1)
        q = np.array([[1.0, 0.0]])
        ang = [1.4, 0.6, 0.2]
        g = np.array([[np.cos(a), np.sin(a)] for a in ang])
        qmeta = make_meta([0], item_ids=[10], true_ids=[1])
        gmeta = make_meta([1, 1, 1], item_ids=[0, 1, 2], true_ids=[1, 2, 1])
        out = rank_gallery(q, qmeta, g, gmeta)
        assert list(out[0].gallery_ids) == [2, 1, 0]
        assert out[0].relevant.tolist() == [True, False, True]

    def test_distance_tie_breaks_by_id(self):
        q = np.array([[1.0, 0.0]])
        g = np.array([[0.0, 1.0], [0.0, -1.0], [0.0, 1.0]])
        qmeta = make_meta([0], item_ids=[99], true_ids=[1])
        gmeta = make_meta([1, 1, 1], item_ids=[30, 20, 10], true_ids=[1, 1, 2])
        out = rank_gallery(q, qmeta, g, gmeta)
        assert list(out[0].gallery_ids) == [10, 20, 30]

    def test_empty_gallery(self):
        qmeta = make_meta([0], true_ids=[0])
        with pytest.raises(EmptyGalleryError):
            rank_gallery(
                np.ones((1, 2)),
                qmeta,
                np.empty((0, 2)),
                make_meta([], n_cameras=1, item_ids=[], true_ids=[]),
            )

    def test_needs_ground_truth(self):
        meta = make_meta([0, 1])
        feats = random_unit_rows(np.random.default_rng(0), 2, 3)
        with pytest.raises(NoGroundTruthError):
            rank_gallery(feats, meta, feats, meta)


class TestAveragePrecision:
    def test_relevant_at_rank_one(self):
        assert average_precision(ranked([True, False, False])) == 1.0

    def test_single_relevant_at_rank_two(self):
        assert average_precision(ranked([False, True])) == 0.5

    def test_two_relevant_ranks_one_and_three(self):
        assert average_precision(ranked([True, False, True])) == pytest.approx(
            0.8333333333333333, abs=1e-15
        )

    def test_no_relevant_raises(self):
        with pytest.raises(ValueError):
            average_precision(ranked([False, False]))


class TestMeanAp:
    def test_skips_and_counts_empty_queries(self):
        lists = [ranked([True]), ranked([False]), ranked([False, True])]
        m, evaluated, skipped = mean_ap(lists)
        assert (evaluated, skipped) == (2, 1)
        assert m == pytest.approx(0.75)

    def test_perfect_ranking_gives_one(self):
        lists = [ranked([True, True, False]) for _ in range(4)]
        m, _, _ = mean_ap(lists)
        assert m == 1.0


class TestCmc:
    def test_all_hits_at_rank_one(self):
        out = cmc([ranked([True]) for _ in range(3)], ranks=(1, 5))
        assert out == {1: 1.0, 5: 1.0}

    def test_hit_at_rank_three(self):
        out = cmc([ranked([False, False, True, False])], ranks=(1, 5))
        assert out[1] == 0.0
        assert out[5] == 1.0

    def test_mixed_four_query_case(self):
        lists = [
            ranked([True, False]),
            ranked([False, True]),
            ranked([False, False, True]),
            ranked([False, False, False, True]),
        ]
        out = cmc(lists, ranks=(1, 2, 3, 4))
        assert out == {1: 0.25, 2: 0.5, 3: 0.75, 4: 1.0}

    def test_monotone_in_rank(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 12))
            lists = [
                ranked(rng.integers(0, 2, size=int(rng.integers(1, 10))).astype(bool))
                for _ in range(n)
            ]
            if not any(r.n_relevant for r in lists):
                continue
            vals = cmc(lists, ranks=range(1, 11))
            seq = [vals[r] for r in range(1, 11)]
            assert all(a <= b + 1e-15 for a, b in zip(seq, seq[1:]))


class TestPermutationInvariance:
    def test_gallery_order_does_not_matter(self, rng):
        n = 20
        feats = random_unit_rows(rng, n, 5)
        cams = rng.integers(0, 3, size=n)
        ids = rng.integers(0, 5, size=n)
        meta = make_meta(cams, true_ids=ids)
        base = evaluate_features(feats, meta)
        perm = rng.permutation(n)
        meta_p = make_meta(
            cams[perm], item_ids=np.arange(n)[perm], true_ids=ids[perm]
        )
        shuffled = rank_gallery(feats, meta, feats[perm], meta_p)
        m, evaluated, skipped = mean_ap(shuffled)
        assert m == pytest.approx(base["mAP"], abs=1e-12)
        assert cmc(shuffled) == pytest.approx(base["cmc"])


class TestMiningAccuracy:
    def test_all_correct(self):
        meta = make_meta([0, 1], true_ids=[3, 3])
        pairs = [MinedPair(0, 1, 1.0), MinedPair(1, 0, 1.0)]
        assert mining_accuracy(pairs, meta) == 1.0

    def test_none_correct(self):
        meta = make_meta([0, 1], true_ids=[3, 4])
        pairs = [MinedPair(0, 1, 1.0)]
        assert mining_accuracy(pairs, meta) == 0.0

    def test_requires_ground_truth(self):
        meta = make_meta([0, 1])
        with pytest.raises(NoGroundTruthError):
            mining_accuracy([MinedPair(0, 1, 1.0)], meta)


class TestEvaluateFeatures:
    def test_perfect_clusters(self, rng):
        centers = np.eye(4)
        feats = np.repeat(centers, 4, axis=0) + 0.01 * rng.standard_normal((16, 4))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        meta = make_meta(
            np.tile([0, 1, 0, 1], 4), true_ids=np.repeat(np.arange(4), 4)
        )
        out = evaluate_features(feats, meta)
        assert out["mAP"] == 1.0
        assert out["cmc"][1] == 1.0
        assert out["queries_skipped"] == 0
