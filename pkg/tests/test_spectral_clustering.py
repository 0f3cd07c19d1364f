import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import kl_brute, matrix_power_rows
from sigregime.spectral_clustering import (
    PrototypeSet,
    TransitionSpectrum,
    build_similarity,
    cluster_similarity,
    eigengap_profile,
    init_prototypes,
    k_prototypes,
    kl_divergence,
    kl_matrix,
    multiscale_cluster,
    power_rows,
    spectrum,
    transition_matrix,
)


def random_similarity(rng, n):
    x = rng.normal(size=(n, 2))
    d = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
    return np.exp(-d)


def block_similarity(sizes, within=1.0, across=0.0):
    n = sum(sizes)
    W = np.full((n, n), across)
    start = 0
    for size in sizes:
        W[start : start + size, start : start + size] = within
        start += size
    return W


def block_distances(rng, sizes, spread=0.2, gap=10.0):
    centres = np.arange(len(sizes)) * gap
    x = np.concatenate([c + spread * rng.random(size) for c, size in zip(centres, sizes)])
    return np.abs(x[:, None] - x[None, :]), np.repeat(np.arange(len(sizes)), sizes)


def fake_spectrum(eigenvalues):
    lam = np.asarray(eigenvalues, dtype=float)
    return TransitionSpectrum(lam, np.eye(lam.size), np.ones(lam.size))


class TestBuildSimilarity:
    def test_zero_distance_gives_one(self):
        W = build_similarity(np.zeros((3, 3)), lambda d: np.exp(-d / 0.7**2))
        np.testing.assert_array_equal(W, np.ones((3, 3)))

    def test_unit_off_diagonal(self):
        d = 1.0 - np.eye(3)
        W = build_similarity(d, lambda x: np.exp(-x))
        assert W[0, 1] == pytest.approx(math.exp(-1))
        assert W[1, 1] == 1.0

    def test_monotone(self, rng):
        x = rng.normal(size=(6, 2))
        d = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
        W = build_similarity(d, lambda v: np.exp(-v))
        order = np.argsort(d, axis=None)
        assert np.all(np.diff(W.ravel()[order]) <= 0)

    def test_inverse_similarity_gets_lazy_self_weight(self):
        W = build_similarity(np.array([[0.0, 2.0], [2.0, 0.0]]), lambda d: 1.0 / d)
        np.testing.assert_array_equal(W, [[0.5, 0.5], [0.5, 0.5]])

    def test_inverse_similarity_spectrum_non_negative(self, rng):
        x = rng.normal(size=(15, 2))
        d = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
        for power in (1.0, 2.0):
            W = build_similarity(d, lambda v, p=power: v**-p)
            lam = spectrum(W).eigenvalues
            assert lam.min() >= -1e-12

    def test_duplicate_points_rejected_for_inverse(self):
        d = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        with pytest.raises(ValueError, match="not finite"):
            build_similarity(d, lambda v: 1.0 / v)

    @pytest.mark.parametrize(
        "d, match",
        [
            (np.array([[0.0, 1.0], [2.0, 0.0]]), "symmetric"),
            (np.array([[0.0, -1.0], [-1.0, 0.0]]), "non-negative"),
            (np.array([[1.0, 1.0], [1.0, 0.0]]), "zero diagonal"),
        ],
    )
    def test_invalid(self, d, match):
        with pytest.raises(ValueError, match=match):
            build_similarity(d, lambda x: np.exp(-x))


class TestTransitionMatrix:
    def test_identity(self):
        P, D = transition_matrix(np.eye(3))
        np.testing.assert_array_equal(P, np.eye(3))
        np.testing.assert_array_equal(D, np.ones(3))

    def test_all_ones(self):
        P, _ = transition_matrix(np.ones((4, 4)))
        np.testing.assert_array_equal(P, np.full((4, 4), 0.25))

    def test_two_by_two(self):
        P, D = transition_matrix([[1.0, 3.0], [3.0, 1.0]])
        np.testing.assert_allclose(P, [[0.25, 0.75], [0.75, 0.25]])
        np.testing.assert_array_equal(D, [4.0, 4.0])

    def test_zero_row(self):
        with pytest.raises(ValueError, match="positive sum"):
            transition_matrix(np.zeros((2, 2)))

    def test_rows_stochastic(self, rng):
        P, _ = transition_matrix(random_similarity(rng, 9))
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


class TestSpectrum:
    def test_block_diagonal_multiplicity(self):
        spec = spectrum(block_similarity([3, 4, 2]))
        assert np.sum(np.abs(spec.eigenvalues - 1.0) < 1e-10) == 3

    @pytest.mark.parametrize("a", [0.1, 0.5, 0.9])
    def test_two_by_two(self, a):
        spec = spectrum([[1.0, a], [a, 1.0]])
        np.testing.assert_allclose(spec.eigenvalues, [1.0, (1 - a) / (1 + a)], atol=1e-14)

    def test_identity(self):
        np.testing.assert_allclose(spectrum(np.eye(5)).eigenvalues, 1.0)

    def test_eigenvectors_of_P(self, rng):
        W = random_similarity(rng, 8)
        P, _ = transition_matrix(W)
        spec = spectrum(W)
        np.testing.assert_allclose(P @ spec.eigenvectors, spec.eigenvectors * spec.eigenvalues, atol=1e-12)

    def test_range_and_leading_value(self, rng):
        for n in range(2, 13):
            lam = spectrum(random_similarity(rng, n)).eigenvalues
            assert lam[0] == pytest.approx(1.0, abs=1e-10)
            assert np.all(lam >= -1 - 1e-10) and np.all(lam <= 1 + 1e-10)
            assert np.all(np.diff(lam) <= 0)

    def test_projectors(self, rng):
        for n in (3, 7, 12):
            spec = spectrum(random_similarity(rng, n))
            A = [spec.projector(k) for k in range(n)]
            for k in range(n):
                np.testing.assert_allclose(A[k] @ A[k], A[k], atol=1e-8)
                for j in range(n):
                    if j != k:
                        np.testing.assert_allclose(A[k] @ A[j], 0.0, atol=1e-8)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            spectrum([[1.0, 0.2], [0.3, 1.0]])


class TestPowerRows:
    def test_t_one_is_P(self, rng):
        W = random_similarity(rng, 10)
        P, _ = transition_matrix(W)
        np.testing.assert_allclose(power_rows(spectrum(W), 1), P, atol=1e-10)

    def test_against_repeated_multiplication(self, rng):
        for n in (2, 5, 12):
            W = random_similarity(rng, n)
            spec = spectrum(W)
            for t in (1, 2, 7, 32):
                np.testing.assert_allclose(power_rows(spec, t), matrix_power_rows(W, t), atol=1e-8)

    def test_stationary(self):
        spec = spectrum(np.ones((2, 2)))
        for t in (1, 5, 100):
            np.testing.assert_allclose(power_rows(spec, t), 0.5, atol=1e-12)

    def test_blocks_converge(self, rng):
        W = block_similarity([4, 5], within=0.0)
        W[:4, :4] = rng.uniform(0.2, 1.0, size=(4, 4))
        W[4:, 4:] = rng.uniform(0.2, 1.0, size=(5, 5))
        W = 0.5 * (W + W.T)
        Pt = power_rows(spectrum(W), 500)
        for block in (slice(0, 4), slice(4, 9)):
            rows = Pt[block]
            assert np.max(np.abs(rows - rows[0])) < 1e-8
        np.testing.assert_allclose(Pt.sum(axis=1), 1.0, atol=1e-8)

    def test_invalid_t(self):
        with pytest.raises(ValueError):
            power_rows(spectrum(np.eye(2)), 0)


class TestEigengapProfile:
    def test_two_unit_eigenvalues(self):
        prof = eigengap_profile(fake_spectrum([1.0, 1.0, 0.3]), T=50)
        t = np.arange(1, 51)
        np.testing.assert_allclose(prof.gaps[1], 1 - 0.3**t)
        assert np.all(np.diff(prof.gaps[1]) >= 0)
        assert np.all(prof.revealed == 2)
        # The gap saturates at 1.0 in floating point; the plateau counts once.
        assert len(prof.local_maxima) == 1

    def test_revealed_count_moves(self):
        # Brute-force scan of lambda = (1, 0.99, 0.5): K_t is 3 at t=1, 2 for t in 2..68, then 1.
        prof = eigengap_profile(fake_spectrum([1.0, 0.99, 0.5]), T=1000)
        assert prof.revealed[0] == 3
        assert np.all(prof.revealed[1:68] == 2)
        assert np.all(prof.revealed[68:] == 1)
        assert np.all(prof.maximal >= prof.gaps.max(axis=0))
        assert np.all(prof.maximal <= 1.0)

    def test_all_unit_eigenvalues(self):
        prof = eigengap_profile(fake_spectrum([1.0, 1.0, 1.0]), T=20)
        np.testing.assert_array_equal(prof.gaps[:2], 0.0)
        # Only the last gap (against lambda_{n+1} = 0) is open: n singletons.
        np.testing.assert_array_equal(prof.gaps[2], 1.0)
        assert prof.local_maxima == (1,)
        assert np.all(prof.revealed == 3)

    def test_flat_zero_profile_has_no_maxima(self):
        prof = eigengap_profile(fake_spectrum([1.0, 1.0, 1.0]), T=20, k_max=2)
        assert prof.local_maxima == ()

    def test_plateau_collapsed(self):
        from sigregime.spectral_clustering import _local_maxima

        assert _local_maxima(np.array([0.1, 0.5, 0.5, 0.5, 0.2, 0.6, 0.6])) == (2, 6)
        assert _local_maxima(np.array([0.3, 0.2, 0.2, 0.4])) == (1, 4)

    def test_negative_eigenvalues_literal(self):
        prof = eigengap_profile(fake_spectrum([1.0, 0.2, -0.9]), T=4)
        assert prof.gap(2, 2) == pytest.approx(0.2**2 - 0.81)
        assert prof.gap(2, 2) < 0

    def test_revealer(self):
        prof = eigengap_profile(fake_spectrum([1.0, 0.99, 0.5]), T=1000)
        t2 = prof.revealer(2)
        steps = np.arange(2, 69)
        assert t2 == steps[np.argmax(0.99**steps - 0.5**steps)]
        assert prof.revealer(7) is None


class TestKL:
    def test_self_zero(self):
        p = np.array([0.2, 0.3, 0.5])
        assert kl_divergence(p, p) == 0.0

    def test_log_two(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))

    def test_support_violation(self):
        assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf

    def test_unnormalised_rejected(self):
        with pytest.raises(ValueError, match="sum to 1"):
            kl_divergence([0.5, 0.6], [0.5, 0.5])

    @settings(max_examples=100, deadline=None)
    @given(
        arrays(np.float64, 6, elements=st.floats(0, 1)),
        arrays(np.float64, 6, elements=st.floats(0.01, 1)),
    )
    def test_gibbs(self, p, q):
        if p.sum() == 0:
            p[0] = 1.0
        p, q = p / p.sum(), q / q.sum()
        value = kl_divergence(p, q)
        assert value >= 0.0
        assert value == pytest.approx(kl_brute(p, q), abs=1e-12)

    def test_matrix_matches_scalar(self, rng):
        rows = rng.dirichlet(np.ones(5), size=4)
        rows[0, 1] = 0.0
        rows[0] /= rows[0].sum()
        protos = rng.dirichlet(np.ones(5), size=3)
        protos[2, 3] = 0.0
        protos[2] /= protos[2].sum()
        M = kl_matrix(rows, protos)
        for m in range(4):
            for j in range(3):
                assert M[m, j] == pytest.approx(kl_brute(rows[m], protos[j]), abs=1e-12)


class TestInitPrototypes:
    def test_single(self, rng):
        Pt = power_rows(spectrum(random_similarity(rng, 6)), 3)
        Q = init_prototypes(Pt, 1, rng)
        assert Q.k == 1
        assert np.min(np.abs(Pt - Q.Q[0]).max(axis=1)) < 1e-9

    def test_two_blocks_cover_both(self, rng):
        W = block_similarity([5, 5], within=1.0, across=1e-3)
        Pt = power_rows(spectrum(W), 5)
        for _ in range(10):
            Q = init_prototypes(Pt, 2, rng).Q
            first = np.argmin(np.abs(Pt - Q[0]).max(axis=1))
            second = np.argmin(np.abs(Pt - Q[1]).max(axis=1))
            assert (first < 5) != (second < 5)

    def test_all_rows(self, rng):
        Pt = power_rows(spectrum(random_similarity(rng, 7)), 2)
        Q = init_prototypes(Pt, 7, rng).Q
        picked = {int(np.argmin(np.abs(Pt - q).max(axis=1))) for q in Q}
        assert picked == set(range(7))

    def test_too_many(self, rng):
        with pytest.raises(ValueError):
            init_prototypes(np.eye(3), 4, rng)


class TestKPrototypes:
    def test_blocks_exact(self, rng):
        Pt = power_rows(spectrum(block_similarity([4, 6])), 3)
        for _ in range(5):
            part = k_prototypes(Pt, 2, init_prototypes(Pt, 2, rng))
            assert part.as_sets() == {frozenset(range(4)), frozenset(range(4, 10))}
            assert part.objective == pytest.approx(0.0, abs=1e-12)

    def test_any_valid_start(self, rng):
        Pt = power_rows(spectrum(block_similarity([3, 3])), 2)
        Q0 = PrototypeSet(rng.dirichlet(np.ones(6), size=2))
        part = k_prototypes(Pt, 2, Q0)
        assert part.as_sets() == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}

    def test_single_cluster(self, rng):
        Pt = power_rows(spectrum(random_similarity(rng, 6)), 4)
        part = k_prototypes(Pt, 1, init_prototypes(Pt, 1, rng))
        assert part.groups() == [list(range(6))]

    def test_singletons(self, rng):
        Pt = power_rows(spectrum(random_similarity(rng, 5)), 1)
        part = k_prototypes(Pt, 5, init_prototypes(Pt, 5, rng))
        assert sorted(len(g) for g in part.groups()) == [1] * 5

    def test_objective_non_increasing(self, rng):
        for _ in range(10):
            W = random_similarity(rng, 30)
            Pt = power_rows(spectrum(W), 3)
            k = int(rng.integers(2, 6))
            part = k_prototypes(Pt, k, init_prototypes(Pt, k, rng))
            assert np.all(np.diff(part.history) <= 1e-12)

    def test_fixed_point(self, rng):
        W = random_similarity(rng, 25)
        Pt = power_rows(spectrum(W), 4)
        part = k_prototypes(Pt, 3, init_prototypes(Pt, 3, rng))
        Q = np.array([Pt[part.labels == j].mean(axis=0) for j in range(3)])
        Q /= Q.sum(axis=1, keepdims=True)
        again = k_prototypes(Pt, 3, PrototypeSet(Q))
        np.testing.assert_array_equal(again.labels, part.labels)

    def test_empty_cluster_repair(self):
        Pt = power_rows(spectrum(block_similarity([3, 3], across=1e-2)), 2)
        # Both prototypes start in the first block, so the second one starts empty-handed.
        Q0 = PrototypeSet(np.vstack([Pt[0], Pt[0]]))
        part = k_prototypes(Pt, 2, Q0)
        assert part.as_sets() == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}

    def test_duplicate_rows_still_fill_every_cluster(self):
        Pt = np.full((4, 4), 0.25)
        part = k_prototypes(Pt, 3, PrototypeSet(Pt[:3]))
        assert set(part.labels.tolist()) == {0, 1, 2}

    @pytest.mark.parametrize("k", [0, 7])
    def test_invalid_k(self, k):
        Pt = np.full((6, 6), 1 / 6)
        with pytest.raises(ValueError):
            k_prototypes(Pt, k, PrototypeSet(np.full((1, 6), 1 / 6)))


class TestMultiscale:
    def test_two_perfect_blocks(self, rng):
        res = cluster_similarity(block_similarity([5, 7]), T=100, restarts=3, rng=rng)
        assert [s.k for s in res.suggestions] == [2]
        s = res.suggestions[0]
        assert s.separation == pytest.approx(1.0, abs=1e-12)
        assert {frozenset(np.flatnonzero(s.labels == j)) for j in range(2)} == {frozenset(range(5)), frozenset(range(5, 12))}

    def test_nearly_perfect_blocks_separation_grows(self, rng):
        W = block_similarity([5, 7], within=1.0, across=1e-9)
        seps = [cluster_similarity(W, T=T, restarts=2, rng=rng).suggestions[0].separation for T in (1, 3, 10)]
        assert seps == sorted(seps)
        assert seps[-1] > 1 - 1e-6

    def test_two_points_far_apart(self, rng):
        eps = 1e-4
        res = cluster_similarity([[1.0, eps], [eps, 1.0]], T=50, restarts=2, rng=rng)
        best = res.suggestions[0]
        assert best.k == 2 and not best.trivial
        assert sorted(best.labels.tolist()) == [0, 1]

    def test_trivial_flag(self, rng):
        res = cluster_similarity(np.ones((4, 4)) + np.eye(4), T=50, restarts=1, rng=rng)
        assert all(s.trivial == (s.k == 1) for s in res.suggestions)

    def test_sorted_and_bounded(self, rng):
        W = random_similarity(rng, 40)
        res = cluster_similarity(W, T=300, restarts=2, rng=rng)
        seps = [s.separation for s in res.suggestions]
        assert seps == sorted(seps, reverse=True)
        assert all(-1 < x <= 1 for x in seps)

    def test_cluster_definition(self, rng):
        d, truth = block_distances(rng, [6, 4, 5])
        res = multiscale_cluster(d, lambda x: np.exp(-x), T=500, restarts=3, rng=rng)
        best = next(s for s in res.suggestions if not s.trivial)
        assert best.k == 3
        assert {frozenset(np.flatnonzero(best.labels == j)) for j in range(3)} == {
            frozenset(np.flatnonzero(truth == j)) for j in range(3)
        }

    def test_permutation_equivariance(self, rng):
        d, _ = block_distances(rng, [5, 6, 4])
        perm = rng.permutation(d.shape[0])
        sim = lambda x: np.exp(-x)  # noqa: E731
        a = multiscale_cluster(d, sim, T=300, restarts=3, rng=np.random.default_rng(1))
        b = multiscale_cluster(d[np.ix_(perm, perm)], sim, T=300, restarts=3, rng=np.random.default_rng(2))
        assert [s.k for s in a.suggestions] == [s.k for s in b.suggestions]
        for sa, sb in zip(a.suggestions, b.suggestions):
            groups_a = {frozenset(np.flatnonzero(sa.labels == j)) for j in range(sa.k)}
            groups_b = {frozenset(perm[np.flatnonzero(sb.labels == j)]) for j in range(sb.k)}
            assert groups_a == groups_b
            assert sa.separation == pytest.approx(sb.separation, abs=1e-10)

    def test_rng_required(self):
        with pytest.raises(ValueError, match="generator"):
            cluster_similarity(np.eye(3))

    def test_deterministic(self):
        W = random_similarity(np.random.default_rng(5), 30)
        a = cluster_similarity(W, T=200, restarts=4, rng=np.random.default_rng(9))
        b = cluster_similarity(W, T=200, restarts=4, rng=np.random.default_rng(9))
        for sa, sb in zip(a.suggestions, b.suggestions):
            np.testing.assert_array_equal(sa.labels, sb.labels)
