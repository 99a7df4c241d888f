import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attrloss.core import DegenerateInputError, DimensionError
from attrloss.evaluation import (
    EvalReport,
    GallerySplit,
    cmc_curve,
    concat_paired_features,
    cosine_similarity,
    max_residual,
    rank_k_identification,
    spectral_norm,
    verification_accuracy,
    verify_distance_bounds,
)

from oracles import pairs_loop


def test_cosine_examples():
    a = np.array([1.0, 2.0, -3.0])
    assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity([1, 0], [0, 3]) == 0.0
    assert cosine_similarity(a, -a) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(DegenerateInputError):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(DimensionError):
        cosine_similarity([1, 0], [1, 0, 0])


def test_concat_examples(rng):
    a, b = rng.normal(size=4), rng.normal(size=4)
    assert cosine_similarity(concat_paired_features(a, a), concat_paired_features(b, b)) == pytest.approx(
        cosine_similarity(a, b), abs=1e-14
    )
    assert concat_paired_features(a, b).shape == (8,)
    z = np.zeros(4)
    assert cosine_similarity(concat_paired_features(a, z), concat_paired_features(b, z)) == pytest.approx(
        cosine_similarity(a, b), abs=1e-14
    )


def brute_ranks(split):
    ranks = []
    for pf, pl in zip(split.probe_features, split.probe_labels):
        sims = [cosine_similarity(pf, gf) for gf in split.gallery_features]
        t = list(split.gallery_labels).index(pl)
        ranks.append(1 + sum(1 for j, s in enumerate(sims) if s > sims[t] or (s == sims[t] and j < t)))
    return ranks


def brute_rank_k(split, k):
    r = brute_ranks(split)
    return sum(1 for x in r if x <= k) / len(r)


def hand_split():
    g = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.2]])
    p = np.array([[0.9, 0.1], [0.6, 0.7], [0.2, 1.0], [-0.5, 0.5], [0.1, -1.0]])
    return GallerySplit(g, np.array([10, 20, 30]), p, np.array([10, 20, 20, 30, 30]))


def test_hand_built_split_matches_brute_force():
    split = hand_split()
    for k in (1, 2, 3):
        assert rank_k_identification(split, k) == brute_rank_k(split, k)
    np.testing.assert_array_equal(split.true_ranks(), brute_ranks(split))


def test_perfect_features():
    f = np.eye(4)
    split = GallerySplit(f, np.arange(4), f.copy(), np.arange(4))
    assert rank_k_identification(split, 1) == 1.0
    np.testing.assert_array_equal(cmc_curve(split), np.ones(4))


def test_adversarial_second_rank():
    # each probe is closest to the next identity's gallery entry, then its own
    angles = np.array([0.0, 1.0, 2.0, 3.0])
    g = np.stack([np.cos(angles), np.sin(angles)], 1)
    p = np.stack([np.cos(angles + 0.6), np.sin(angles + 0.6)], 1)
    split = GallerySplit(g, np.arange(4), p[:3], np.arange(3))
    np.testing.assert_array_equal(cmc_curve(split), [0.0, 1.0, 1.0, 1.0])


def test_k_equal_gallery_size_is_one(rng):
    split = GallerySplit(rng.normal(size=(5, 3)), np.arange(5), rng.normal(size=(9, 3)), rng.integers(0, 5, 9))
    assert rank_k_identification(split, 5) == 1.0
    with pytest.raises(ValueError):
        rank_k_identification(split, 6)


@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 12))
@settings(max_examples=60, deadline=None)
def test_cmc_monotone_and_complete(seed, n_gallery, n_probe):
    r = np.random.default_rng(seed)
    split = GallerySplit(r.normal(size=(n_gallery, 3)), np.arange(n_gallery),
                         r.normal(size=(n_probe, 3)), r.integers(0, n_gallery, n_probe))
    cmc = cmc_curve(split)
    assert len(cmc) == n_gallery
    assert np.all(np.diff(cmc) >= 0) and cmc[-1] == 1.0
    for k in range(1, n_gallery + 1):
        assert cmc[k - 1] == brute_rank_k(split, k)


def brute_verification(sims, same):
    best = 0.0
    cands = sorted(set(sims))
    thresholds = [cands[0] - 1] + [(a + b) / 2 for a, b in zip(cands, cands[1:])] + [cands[-1] + 1]
    for t in thresholds:
        acc = sum((s > t) == y for s, y in zip(sims, same)) / len(sims)
        best = max(best, acc)
    return best


def test_six_pairs_match_brute_force():
    sims = [0.9, 0.8, 0.3, 0.75, 0.1, 0.5]
    same = [True, True, False, False, False, True]
    acc, thr = verification_accuracy(sims, same)
    assert acc == brute_verification(sims, same) == 5 / 6
    assert sum((s > thr) == y for s, y in zip(sims, same)) == 5


def test_perfect_separation_and_flip():
    sims = np.array([0.9, 0.8, 0.1, 0.2])
    same = np.array([True, True, False, False])
    assert verification_accuracy(sims, same)[0] == 1.0
    flipped = verification_accuracy(sims, ~same)[0]
    assert flipped >= 0.5


@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=1, max_size=20))
def test_verification_matches_brute_force(rows):
    sims = [s / 5 for s, _ in rows]
    same = [y for _, y in rows]
    assert verification_accuracy(sims, same)[0] == brute_verification(sims, same)


def test_report_exports():
    report = EvalReport.from_split(hand_split())
    assert report.to_csv().startswith("metric,value\nrank1,")
    assert report.cmc_csv().splitlines()[0] == "k,rate"
    assert "cosine similarity" in report.summary()


def test_gallery_validation():
    with pytest.raises(ValueError):
        GallerySplit(np.eye(2), np.array([0, 0]), np.eye(2), np.array([0, 0]))
    with pytest.raises(ValueError):
        GallerySplit(np.eye(2), np.array([0, 1]), np.eye(2), np.array([0, 2]))


# --- feature-distance bounds -----------------------------------------------------


def test_spectral_norm_examples(rng):
    assert spectral_norm(np.eye(2)) == pytest.approx(1.0, abs=1e-12)
    assert spectral_norm(np.zeros((3, 2))) == 0.0
    A = rng.normal(size=(4, 3))
    assert spectral_norm(A) == pytest.approx(np.linalg.svd(A, compute_uv=False)[0], rel=1e-9)


def brute_epsilon(f, y, p, G, tau):
    best = None
    for i, j in pairs_loop(y, p, tau):
        r = (f[i] - f[j]) - G @ (p[i] - p[j])
        v = float(np.sqrt(sum(x * x for x in r)))
        best = v if best is None else max(best, v)
    return best


def test_equal_features_epsilon(rng):
    p = np.repeat(rng.uniform(-1, 1, (4, 3)) * 0.01, 3, axis=0)
    y = np.repeat(np.arange(4), 3)
    f = np.ones((12, 2))
    G = rng.normal(size=(2, 3))
    rep = verify_distance_bounds(f, y, p, G, 0.1)
    expected = max(np.linalg.norm(G @ (p[i] - p[j])) for i, j in pairs_loop(y, p, 0.1))
    assert rep.epsilon == pytest.approx(expected, abs=1e-15)
    assert rep.violations == 0


def test_random_instance_bounds_and_epsilon(rng):
    for _ in range(5):
        y = np.repeat(np.arange(4), 5)
        p = np.repeat(rng.uniform(-1, 1, (4, 3)) * 0.02, 5, axis=0) + 0.001 * rng.normal(size=(20, 3))
        f = rng.normal(size=(20, 3))
        G = rng.normal(size=(3, 3))
        rep = verify_distance_bounds(f, y, p, G, 0.1)
        assert rep.qualifying_classes
        assert rep.violations == 0
        assert all(ok for *_, ok in rep.centroid_pairs)
        assert abs(rep.epsilon - brute_epsilon(f, y, p, G, 0.1)) <= 1e-12
        assert abs(rep.epsilon - max_residual(f, y, p, G, 0.1)) == 0


def test_no_qualifying_pairs():
    f = np.eye(3)
    y = np.array([0, 1, 2])
    p = np.diag([1.0, 1.0, 1.0])
    rep = verify_distance_bounds(f, y, p, np.zeros((3, 3)), 0.1)
    assert rep.epsilon is None and rep.centroid_bound is None
    assert rep.violations == 0
    assert "undefined" in rep.summary()


def test_zero_g_reports_singular():
    y = np.array([0, 1])
    rep = verify_distance_bounds(np.array([[0.0, 1.0], [0.0, 1.0]]), y, np.zeros((2, 3)), np.zeros((2, 3)), 0.1)
    assert not rep.nonsingular
    assert rep.epsilon == 0.0 and rep.violations == 0


def test_bounds_detect_inconsistency():
    # a class whose samples are far apart although a common neighbor pins both
    f = np.array([[0.0], [10.0], [5.0]])
    y = np.array([0, 0, 1])
    p = np.zeros((3, 1))
    rep = verify_distance_bounds(f, y, p, np.zeros((1, 1)), 0.5)
    # epsilon = 5 so the intra bound 2 * 5 = 10 is attained, not exceeded
    assert rep.epsilon == 5.0 and rep.intra_bound == 10.0 and rep.violations == 0
    assert "intra,0" in rep.to_csv()


def test_parallel_gallery_entries_tie_to_lower_index():
    g = np.array([[2.0, 2.0, -2.0], [3.0, 3.0, -3.0], [1.0, 0.0, 0.0]])
    p = np.array([[1.0, 3.0, 1.0], [2.0, -1.0, -1.0]])
    split = GallerySplit(g, np.array([0, 1, 2]), p, np.array([1, 1]))
    # identity 1 always ties with identity 0, which wins on index
    assert split.true_ranks()[0] == 2
