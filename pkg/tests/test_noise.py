"""Tests for the noise families and second-order analysis.

Covers:
1. The equicorrelated adversarial matrix and its sampling representation
2. Long-range correlation construction, PSD repair, and the decay envelope
3. Closed-form moments of every shipped family (validate_moments at 1e5)
4. The Gaussian squared-noise identities: empirical Cov(xi_k^2, xi_l^2)
   against 2 Sigma_kl^2 and E[(xi_k^2 - 1) xi_l] against 0
5. The null variance split R0 + S0, its exact small cases, and the
   class-wide envelope 2 C1 eps^4 (sum b^-2)^2
"""

import math

import numpy as np
import pytest

from seqdetect.noise import (
    AdversarialEquicorrelated,
    CorrelatedGaussian,
    CorrelationMatrix,
    IidGaussian,
    IidRademacher,
    IidScaledUniform,
    LongRangeGaussian,
    adversarial_sigma,
    isserlis_cov_sq,
    long_range_correlation,
    null_variance_decomposition,
    validate_moments,
)
from seqdetect.sequences import OperatorFamily, ProblemSpec, SmoothnessFamily

INV_SQRT2 = 1.0 / math.sqrt(2.0)


def flat_spec(eps=1.0):
    return ProblemSpec(
        OperatorFamily.well_posed(), SmoothnessFamily.ordinary_smooth(1.0), eps=eps
    )


class TestAdversarialSigma:
    def test_two_by_two_equals_half(self):
        m = adversarial_sigma(2, INV_SQRT2).entries
        assert m == pytest.approx(np.array([[1.0, 0.5], [0.5, 1.0]]), abs=1e-12)

    def test_dimension_one(self):
        assert adversarial_sigma(1, 0.9).entries == pytest.approx(np.array([[1.0]]))

    def test_products_off_diagonal(self):
        m = adversarial_sigma(3, 0.8).entries
        off = m[~np.eye(3, dtype=bool)]
        assert off == pytest.approx(0.64)
        assert np.all(off >= 0.5)

    def test_loading_range_enforced(self):
        with pytest.raises(ValueError, match="factor loadings"):
            adversarial_sigma(3, 0.5)
        with pytest.raises(ValueError, match="factor loadings"):
            adversarial_sigma(3, 1.0)

    def test_always_psd(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            d = int(rng.integers(1, 40))
            loadings = rng.uniform(INV_SQRT2, 0.999, size=d)
            sigma = adversarial_sigma(d, loadings)
            assert sigma.min_eigenvalue() >= -1e-12


class TestLongRangeCorrelation:
    def test_small_case_exact(self):
        m = long_range_correlation(2, 1.0, 0.5).entries
        assert m == pytest.approx(np.array([[1.0, 0.5], [0.5, 1.0]]))

    def test_tiny_amplitude_near_identity(self):
        m = long_range_correlation(6, 1.0, 0.002).entries
        off = m[~np.eye(6, dtype=bool)]
        assert np.all(np.abs(off) <= 0.002 + 1e-12)

    def test_repair_keeps_decay_envelope(self):
        cov = long_range_correlation(3, 1.0, 0.9)
        m = cov.entries
        assert cov.min_eigenvalue() >= -1e-10
        assert abs(m[0, 1]) <= 0.9 + 1e-12
        assert abs(m[0, 2]) <= 0.45 + 1e-12

    def test_envelope_holds_at_larger_dimension(self):
        cov = long_range_correlation(64, 0.7, 0.9)
        gaps = np.abs(np.subtract.outer(np.arange(64), np.arange(64)))
        off = gaps > 0
        assert np.all(
            np.abs(cov.entries[off]) <= 0.9 * gaps[off].astype(float) ** -0.7 + 1e-12
        )
        assert cov.min_eigenvalue() >= -1e-10


class TestCorrelationMatrixValidation:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            CorrelationMatrix(np.array([[1.0, 0.3], [0.1, 1.0]]))

    def test_rejects_bad_diagonal(self):
        with pytest.raises(ValueError, match="unit diagonal"):
            CorrelationMatrix(np.array([[2.0, 0.0], [0.0, 1.0]]))

    def test_rejects_indefinite_matrix(self):
        bad = np.array([[1.0, 0.8, -0.8], [0.8, 1.0, 0.8], [-0.8, 0.8, 1.0]])
        with pytest.raises(ValueError, match="positive semidefinite"):
            CorrelationMatrix(bad)


class TestSampling:
    def test_rademacher_support_and_moments(self):
        x = IidRademacher().sample_block(2000, 4, np.random.default_rng(2))
        assert set(np.unique(x)) == {-1.0, 1.0}
        assert np.all(x**4 == 1.0)

    def test_scaled_uniform_range(self):
        x = IidScaledUniform().sample_block(2000, 3, np.random.default_rng(3))
        assert np.all(np.abs(x) <= math.sqrt(3.0))

    def test_deterministic_given_stream(self):
        model = LongRangeGaussian(1.0, 0.5)
        a = model.sample(6, np.random.default_rng(77))
        b = model.sample(6, np.random.default_rng(77))
        assert np.array_equal(a, b)

    def test_fixed_dimension_mismatch(self):
        model = AdversarialEquicorrelated(4)
        with pytest.raises(ValueError, match="fixed at dimension"):
            model.sample(5, np.random.default_rng(0))

    def test_adversarial_empirical_correlation(self):
        model = AdversarialEquicorrelated(3, INV_SQRT2)
        x = model.sample_block(200_000, 3, np.random.default_rng(8))
        emp = np.corrcoef(x.T)
        assert emp[0, 1] == pytest.approx(0.5, abs=0.01)
        assert emp[0, 2] == pytest.approx(0.5, abs=0.01)

    def test_correlated_gaussian_matches_matrix(self):
        cov = long_range_correlation(4, 1.0, 0.5)
        model = CorrelatedGaussian(cov)
        x = model.sample_block(200_000, 4, np.random.default_rng(9))
        emp = np.cov(x.T)
        assert np.allclose(emp, cov.entries, atol=0.012)


class TestMomentValidation:
    @pytest.mark.parametrize(
        "model",
        [
            IidGaussian(),
            IidRademacher(),
            IidScaledUniform(),
            LongRangeGaussian(1.0, 0.5),
            AdversarialEquicorrelated(8, INV_SQRT2),
        ],
        ids=lambda m: m.kind,
    )
    def test_shipped_models_stay_in_class(self, model):
        report = validate_moments(model, 100_000, np.random.default_rng(13))
        assert report.within_xi

    def test_adversarial_marginals_are_gaussian(self):
        report = validate_moments(
            AdversarialEquicorrelated(6, INV_SQRT2), 100_000, np.random.default_rng(21)
        )
        assert np.all(np.abs(report.fourth_moment - 3.0) <= 3.0 * report.fourth_moment_se)

    def test_reps_floor(self):
        with pytest.raises(ValueError, match="10\\^4"):
            validate_moments(IidGaussian(), 5000, np.random.default_rng(0))


class TestSquaredNoiseIdentities:
    def test_isserlis_entries(self):
        cov = CorrelationMatrix(np.array([[1.0, 0.5], [0.5, 1.0]]))
        m = isserlis_cov_sq(cov)
        assert m[0, 0] == 2.0
        assert m[0, 1] == pytest.approx(0.5)

    @pytest.mark.parametrize("d_loading", [INV_SQRT2, 0.85])
    def test_empirical_cov_of_squares(self, d_loading):
        cov = adversarial_sigma(4, d_loading)
        model = CorrelatedGaussian(cov)
        x = model.sample_block(100_000, 4, np.random.default_rng(31))
        sq = x * x
        expected = isserlis_cov_sq(cov)
        centred = sq - sq.mean(axis=0)
        for k in range(4):
            for l in range(4):
                prods = centred[:, k] * centred[:, l]
                emp = prods.mean()
                se = prods.std(ddof=1) / math.sqrt(len(prods))
                assert abs(emp - expected[k, l]) <= 3.0 * se

    def test_square_is_uncorrelated_with_level(self):
        # E[(xi_k^2 - 1) xi_l] = 0 for jointly Gaussian pairs
        model = CorrelatedGaussian(long_range_correlation(4, 1.0, 0.5))
        x = model.sample_block(100_000, 4, np.random.default_rng(37))
        for k in range(4):
            for l in range(4):
                prods = (x[:, k] ** 2 - 1.0) * x[:, l]
                se = prods.std(ddof=1) / math.sqrt(len(prods))
                assert abs(prods.mean()) <= 3.0 * se


class TestNullVarianceDecomposition:
    def test_two_dim_exact_values(self):
        cov = CorrelationMatrix(np.array([[1.0, 0.5], [0.5, 1.0]]))
        r0, s0 = null_variance_decomposition(flat_spec(eps=1.0), cov, 2)
        assert r0 == pytest.approx(4.0)
        assert s0 == pytest.approx(1.0)

    def test_independent_noise_has_no_cross_term(self):
        r0, s0 = null_variance_decomposition(flat_spec(), CorrelationMatrix.identity(5), 5)
        assert s0 == 0.0

    def test_matches_empirical_variance(self):
        spec = ProblemSpec(
            OperatorFamily.mildly_ill_posed(0.5),
            SmoothnessFamily.ordinary_smooth(1.0),
            eps=0.5,
        )
        cov = adversarial_sigma(6, 0.75)
        r0, s0 = null_variance_decomposition(spec, cov, 6)
        model = CorrelatedGaussian(cov)
        x = model.sample_block(150_000, 6, np.random.default_rng(41))
        y = spec.eps * x
        w = spec.operator.inv_sq_array(np.arange(1, 7))
        t_vals = (y * y - spec.eps**2) @ w
        assert float(np.var(t_vals, ddof=1)) == pytest.approx(r0 + s0, rel=0.05)

    def test_class_envelope(self):
        # R0 + S0 <= 2 C1 eps^4 (sum b^-2)^2 with C1 = 2 for Gaussian noise
        rng = np.random.default_rng(43)
        spec = ProblemSpec(
            OperatorFamily.mildly_ill_posed(0.8),
            SmoothnessFamily.ordinary_smooth(1.0),
            eps=0.7,
        )
        for _ in range(20):
            d = int(rng.integers(2, 9))
            f = rng.normal(size=(d, d + 2))
            m = f @ f.T
            scale = np.sqrt(np.diag(m))
            cov = CorrelationMatrix(m / np.outer(scale, scale))
            r0, s0 = null_variance_decomposition(spec, cov, d)
            w = spec.operator.inv_sq_array(np.arange(1, d + 1))
            envelope = 2.0 * 2.0 * spec.eps**4 * float(w.sum()) ** 2
            assert r0 + s0 <= envelope * (1.0 + 1e-12)

    def test_dimension_guard(self):
        with pytest.raises(ValueError, match="cannot cover"):
            null_variance_decomposition(flat_spec(), CorrelationMatrix.identity(3), 4)
