import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_mine, random_unit_rows
from ssml import dplm
from ssml.errors import InvalidGammaError
from ssml.featurestore import Dictionary, normalize_rows
from ssml.similarity import similarity_matrix


def mined(entries, tau=0.6, gamma=0.25, probe=0):
    dic = Dictionary(entries)
    sim = similarity_matrix(dic, tau)
    return dplm.mine(probe, dic, sim, tau, gamma)


def test_candidate_set_excludes_self():
    s = np.array([1.0, 0.9, 0.3])
    assert list(dplm.candidate_set(s, 0.6, probe=0)) == [1]


def test_candidate_set_threshold_is_inclusive():
    s = np.array([1.0, 0.59999, 0.6])
    assert list(dplm.candidate_set(s, 0.6, probe=0)) == [2]


def test_candidate_set_empty_is_legal():
    s = np.array([1.0, 0.1, 0.2])
    assert dplm.candidate_set(s, 0.6, probe=0).size == 0


def test_candidate_set_orders_by_similarity_then_index():
    s = np.array([0.5, 0.9, 0.7, 0.9, 0.8])
    assert list(dplm.candidate_set(s, 0.6, probe=0)) == [1, 3, 4, 2]


def test_rank_consistency_mutual_pair():
    # A and B are each other's only neighbor above tau
    entries = normalize_rows(
        np.array([[1.0, 0.05, 0], [1.0, -0.05, 0], [-1, 0, 0.1], [-1, 0, -0.1]])
    )
    r = mined(entries, probe=0)
    assert 1 in r.p_rank


def test_rank_consistency_one_sided_attraction():
    # probe 0 sees 1 in its candidates, but 0 is not in 1's top-K
    sim_rows = np.array(
        [
            [1.0, 0.7, 0.0, 0.0],
            [0.7, 1.0, 0.9, 0.9],
            [0.0, 0.9, 1.0, 0.0],
            [0.0, 0.9, 0.0, 1.0],
        ],
        dtype=np.float32,
    )
    from ssml.similarity import SimilarityMatrix

    sim = SimilarityMatrix(values=sim_rows, thresholded=True, tau=0.6)
    p_ps = dplm.candidate_set(sim_rows[0], 0.6, probe=0)
    assert list(p_ps) == [1]
    # K = 1, and 1's top-1 is 2 (similarity 0.9 beats 0.7), so 0 drops out
    assert dplm.rank_consistent_set(0, p_ps, sim, 0.6).size == 0


def test_adjacent_set_duplicate_row_first():
    entries = normalize_rows(
        np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.8, 0.6, 0.0], [0.0, 0.9, 0.44]])
    )
    dic = Dictionary(entries)
    sim = similarity_matrix(dic, 0.6)
    assert 1 in dplm.adjacent_set(0, sim, k=1)


def test_adjacent_set_k_zero_empty(rng):
    dic = Dictionary(random_unit_rows(rng, 5, 3))
    sim = similarity_matrix(dic, 0.6)
    assert dplm.adjacent_set(0, sim, 0).size == 0


def test_adjacent_set_matches_oracle_n6(rng):
    entries = random_unit_rows(rng, 6, 4)
    dic = Dictionary(entries)
    sim = similarity_matrix(dic, 0.3)
    rows = sim.values.astype(np.float64)
    for probe in range(6):
        dists = sorted(
            (float(np.linalg.norm(rows[probe] - rows[j])), j)
            for j in range(6)
            if j != probe
        )
        expected = sorted(j for _, j in dists[:3])
        assert list(dplm.adjacent_set(probe, sim, 3)) == expected


def test_mine_three_tight_clusters():
    # 3 clusters x 4 points, intra cosine ~0.99, inter ~0
    rng = np.random.default_rng(5)
    centers = np.eye(3, 8)
    rows = np.repeat(centers, 4, axis=0) + 0.05 * rng.standard_normal((12, 8))
    entries = normalize_rows(rows)
    dic = Dictionary(entries)
    sim = similarity_matrix(dic, 0.6)
    r = dplm.mine(0, dic, sim, 0.6, 0.25)
    assert sorted(r.p_pos) == [1, 2, 3]
    assert len(r.n_hard) == int(np.ceil(0.25 * len(r.n_neg)))
    assert set(r.n_hard) <= set(r.n_neg)


def test_mine_intersection_semantics():
    assert list(np.intersect1d([1, 2], [2, 3])) == [2]


def test_mine_single_sample_degenerate():
    entries = np.array([[1.0, 0.0]], dtype=np.float32)
    dic = Dictionary(entries)
    sim = similarity_matrix(dic, 0.6)
    r = dplm.mine(0, dic, sim, 0.6, 0.25)
    assert r.p_pos.size == 0 and r.n_neg.size == 0 and r.n_hard.size == 0


def test_mine_rejects_bad_gamma(rng):
    dic = Dictionary(random_unit_rows(rng, 4, 3))
    sim = similarity_matrix(dic, 0.6)
    for gamma in (0.0, -0.1, 1.5):
        with pytest.raises(InvalidGammaError):
            dplm.mine(0, dic, sim, 0.6, gamma)


def test_hard_negatives_use_raw_similarity_order():
    s = np.array([1.0, 0.95, 0.2, 0.5, 0.4])
    negs = np.array([2, 3, 4])
    # ceil(0.5 * 3) = 2; raw similarities rank 3 (0.5) above 4 (0.4) above 2
    assert list(dplm.hard_negative_labels(negs, s, 0.5)) == [3, 4]


def test_mine_matches_oracle_five_points(rng):
    entries = random_unit_rows(rng, 5, 3)
    dic = Dictionary(entries)
    for tau in (0.3, 0.6):
        sim = similarity_matrix(dic, tau)
        for probe in range(5):
            ref = naive_mine(entries, tau, 0.25, probe)
            got = dplm.mine(probe, dic, sim, tau, 0.25)
            assert list(got.p_ps) == ref["p_ps"]
            assert list(got.p_rank) == ref["p_rank"]
            assert list(got.p_adj) == ref["p_adj"]
            assert list(got.p_pos) == ref["p_pos"]
            assert list(got.n_hard) == ref["n_hard"]


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.3, 0.6]), st.sampled_from([0.01, 0.25]))
@settings(max_examples=25, deadline=None)
def test_mine_partition_property(seed, tau, gamma):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 24))
    entries = random_unit_rows(rng, n, int(rng.integers(2, 8)))
    dic = Dictionary(entries)
    sim = similarity_matrix(dic, tau)
    for r in dplm.mine_all(dic, sim, tau, gamma):
        assert np.intersect1d(r.p_pos, r.n_neg).size == 0
        combined = np.union1d(np.union1d(r.p_pos, r.n_neg), [r.probe])
        assert np.array_equal(combined, np.arange(n))
        assert set(r.p_pos) <= set(r.p_rank) and set(r.p_pos) <= set(r.p_adj)
        assert set(r.p_rank) <= set(r.p_ps)
        assert len(r.p_adj) <= r.k
        assert r.probe not in set(r.p_ps) and r.probe not in set(r.n_neg)
        if r.n_neg.size:
            assert len(r.n_hard) == int(np.ceil(gamma * len(r.n_neg)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_raising_tau_never_enlarges_candidates(seed):
    rng = np.random.default_rng(seed)
    entries = random_unit_rows(rng, 16, 5)
    e64 = entries.astype(np.float64)
    s = e64 @ e64[3]
    previous = None
    for tau in (0.2, 0.4, 0.6, 0.8):
        current = set(dplm.candidate_set(s, tau, probe=3).tolist())
        if previous is not None:
            assert current <= previous
        previous = current


def test_mine_all_equals_mine(rng):
    for _ in range(5):
        n = int(rng.integers(4, 40))
        entries = random_unit_rows(rng, n, int(rng.integers(2, 10)))
        dic = Dictionary(entries)
        sim = similarity_matrix(dic, 0.6)
        batched = dplm.mine_all(dic, sim, 0.6, 0.25)
        for probe in range(n):
            single = dplm.mine(probe, dic, sim, 0.6, 0.25)
            for attr in ("p_ps", "p_rank", "p_adj", "p_pos", "n_neg", "n_hard"):
                assert np.array_equal(
                    getattr(single, attr), getattr(batched[probe], attr)
                ), attr


def test_permutation_equivariance(rng):
    n, d = 14, 5
    entries = random_unit_rows(rng, n, d)
    perm = rng.permutation(n)
    inverse = np.argsort(perm)

    dic = Dictionary(entries)
    sim = similarity_matrix(dic, 0.6)
    dic_p = Dictionary(entries[perm])
    sim_p = similarity_matrix(dic_p, 0.6)

    for probe in range(n):
        base = dplm.mine(probe, dic, sim, 0.6, 0.25)
        moved = dplm.mine(int(inverse[probe]), dic_p, sim_p, 0.6, 0.25)
        for attr in ("p_pos", "p_rank", "p_adj", "n_neg"):
            assert set(perm[getattr(moved, attr)]) == set(getattr(base, attr)), attr


def test_positives_of_kinds(rng):
    dic = Dictionary(random_unit_rows(rng, 10, 4))
    sim = similarity_matrix(dic, 0.3)
    r = dplm.mine(0, dic, sim, 0.3, 0.25)
    assert dplm.positives_of(r, "ps") is r.p_ps
    assert dplm.positives_of(r, "rank") is r.p_rank
    assert dplm.positives_of(r, "adj") is r.p_adj
    assert dplm.positives_of(r, "intersection") is r.p_pos
    with pytest.raises(ValueError):
        dplm.positives_of(r, "bogus")


def test_format_result():
    r = dplm.MiningResult(
        probe=4,
        p_ps=np.array([1, 2]),
        k=2,
        p_rank=np.array([1]),
        p_adj=np.array([1, 2]),
        p_pos=np.array([1, 2]),
        n_neg=np.array([3]),
        n_hard=np.array([3]),
        similarities=np.zeros(5),
    )
    assert dplm.format_result(r) == "4\tP+:1,2\tNhard:3"
