import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ekhmc.ensemble import (
    Ensemble,
    affine_map,
    covariance_solve,
    ensemble_covariance,
    ensemble_mean,
    generalized_sqrt,
    preconditioned_noise,
)
from ekhmc.errors import InvalidInputError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def matrices(max_dim=4, min_count=2, max_count=8):
    shapes = st.tuples(st.integers(1, max_dim), st.integers(min_count, max_count))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite))


class TestEnsemble:
    def test_shapes_and_counts(self):
        e = Ensemble.at_rest(np.zeros((3, 5)))
        assert e.dim == 3 and e.count == 5
        assert np.all(e.momenta == 0)

    def test_rejects_mismatched_blocks(self):
        with pytest.raises(InvalidInputError):
            Ensemble(np.zeros((2, 4)), np.zeros((2, 3)))

    def test_rejects_single_particle(self):
        with pytest.raises(InvalidInputError):
            Ensemble.at_rest(np.zeros((2, 1)))

    def test_replace_drops_cache_when_positions_change(self):
        e = Ensemble(np.zeros((1, 2)), np.zeros((1, 2)), forward_values=np.ones((1, 2)))
        assert e.replace(momenta=np.ones((1, 2))).forward_values is not None
        assert e.replace(positions=np.ones((1, 2))).forward_values is None


class TestCovariance:
    def test_two_point_example(self):
        spread = ensemble_covariance(np.array([[1.0, -1.0], [0.0, 0.0]]))
        np.testing.assert_allclose(spread.mean, [0, 0])
        np.testing.assert_allclose(spread.covariance, [[1, 0], [0, 0]])

    def test_biased_normalisation(self):
        q = np.array([[0.0, 1.0, 2.0]])
        assert ensemble_covariance(q).covariance[0, 0] == pytest.approx(2.0 / 3.0)

    def test_single_particle_rejected(self):
        with pytest.raises(InvalidInputError):
            ensemble_covariance(np.zeros((2, 1)))

    def test_mean(self):
        np.testing.assert_allclose(ensemble_mean([[1.0, 3.0], [2.0, 4.0]]), [2.0, 3.0])

    @given(matrices())
    def test_symmetric_psd(self, q):
        c = ensemble_covariance(q).covariance
        np.testing.assert_array_equal(c, c.T)
        scale = max(1.0, np.abs(c).max())
        assert np.linalg.eigvalsh(c).min() >= -1e-12 * scale

    @given(matrices(), arrays(np.float64, 4, elements=finite))
    def test_translation_invariant(self, q, shift):
        b = shift[: q.shape[0], None]
        c0 = ensemble_covariance(q).covariance
        c1 = ensemble_covariance(q + b).covariance
        np.testing.assert_allclose(c1, c0, atol=1e-9 * max(1.0, np.abs(q).max() ** 2))

    @given(matrices(), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, q, rnd):
        perm = list(range(q.shape[1]))
        rnd.shuffle(perm)
        np.testing.assert_allclose(ensemble_covariance(q[:, perm]).covariance, ensemble_covariance(q).covariance,
                                   atol=1e-9 * max(1.0, np.abs(q).max() ** 2))

    @given(matrices())
    def test_generalized_sqrt_factorises(self, q):
        spread = ensemble_covariance(q)
        s = generalized_sqrt(spread)
        assert s.shape == q.shape
        np.testing.assert_allclose(s @ s.T, spread.covariance, atol=1e-12 * max(1.0, np.abs(q).max() ** 2))

    def test_generalized_sqrt_two_points(self):
        s = generalized_sqrt(ensemble_covariance(np.array([[1.0, -1.0], [0.0, 0.0]])))
        np.testing.assert_allclose(s @ s.T, [[1, 0], [0, 0]], atol=1e-12)


class TestCovarianceSolve:
    def test_well_conditioned_matches_solve(self, rng):
        spread = ensemble_covariance(rng.standard_normal((3, 20)))
        rhs = rng.standard_normal((3, 4))
        np.testing.assert_allclose(covariance_solve(spread, rhs), np.linalg.solve(spread.covariance, rhs),
                                   rtol=1e-10)

    def test_collapsed_returns_zero(self):
        spread = ensemble_covariance(np.ones((2, 5)))
        np.testing.assert_array_equal(covariance_solve(spread, np.ones(2)), 0.0)

    def test_singular_is_finite(self, rng):
        q = rng.standard_normal((1, 6))
        spread = ensemble_covariance(np.vstack([q, 2 * q]))
        x = covariance_solve(spread, spread.centered)
        assert np.all(np.isfinite(x))
        # C x = Q holds on the range of C
        np.testing.assert_allclose(spread.covariance @ x, spread.centered, atol=1e-6)


class TestNoise:
    def test_column_covariance_full(self):
        rng = np.random.default_rng(11)
        spread = ensemble_covariance(np.array([[0.0, 1.0, -2.0], [1.0, 0.5, 3.0]]))
        draws = np.stack([preconditioned_noise(spread, 2.0, rng, method="full")[:, 0] for _ in range(100_000)])
        emp = draws.T @ draws / len(draws)
        target = 2.0 * spread.covariance
        assert np.linalg.norm(emp - target) / np.linalg.norm(target) < 0.03

    def test_reduced_matches_full_in_law(self):
        rng = np.random.default_rng(5)
        spread = ensemble_covariance(rng.standard_normal((2, 300)))
        draws = np.concatenate([preconditioned_noise(spread, 1.0, rng, method="reduced").T for _ in range(300)])
        emp = draws.T @ draws / len(draws)
        assert np.linalg.norm(emp - spread.covariance) / np.linalg.norm(spread.covariance) < 0.03

    def test_columns_independent_under_reduced(self):
        rng = np.random.default_rng(6)
        spread = ensemble_covariance(rng.standard_normal((1, 300)))
        pairs = np.array([preconditioned_noise(spread, 1.0, rng, method="reduced")[0, :2] for _ in range(20_000)])
        corr = np.corrcoef(pairs.T)[0, 1]
        assert abs(corr) < 0.03

    def test_collapsed_ensemble_gives_zero_noise(self, rng):
        spread = ensemble_covariance(np.full((2, 4), 3.0))
        np.testing.assert_array_equal(preconditioned_noise(spread, 1.0, rng), 0.0)

    def test_same_seed_same_draw(self):
        spread = ensemble_covariance(np.arange(12.0).reshape(2, 6) ** 1.5)
        a = preconditioned_noise(spread, 1.0, np.random.default_rng(3))
        b = preconditioned_noise(spread, 1.0, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("method", ["full", "reduced"])
    def test_affine_equivariance_of_noise(self, method, rng):
        q = rng.standard_normal((3, 400))
        A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        seed = 17
        base = preconditioned_noise(ensemble_covariance(q), 1.0, np.random.default_rng(seed), method=method)
        mapped = preconditioned_noise(ensemble_covariance(A @ q + 1.0), 1.0, np.random.default_rng(seed),
                                      method=method)
        np.testing.assert_allclose(mapped, A @ base, atol=1e-9)

    def test_rejects_bad_scale(self, rng):
        with pytest.raises(InvalidInputError):
            preconditioned_noise(ensemble_covariance(np.eye(2)), 0.0, rng)


def test_affine_map_rejects_singular():
    e = Ensemble.at_rest(np.eye(2))
    with pytest.raises(InvalidInputError):
        affine_map(e, np.zeros((2, 2)), np.zeros(2))
