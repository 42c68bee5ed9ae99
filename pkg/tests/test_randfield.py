import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from jumpflux.randfield import (CovarianceSpec, KarhunenLoeveField, default_cutoff, kl_sample,
                                matern_kernel, nystrom_eigenpairs)


def bessel_matern(nu, sigma2, rho, r):
    """Independent oracle: the textbook Bessel form, evaluated directly."""
    z = math.sqrt(2 * nu) * r / rho
    return sigma2 * 2 ** (1 - nu) / special.gamma(nu) * z**nu * special.kv(nu, z)


def test_kernel_diagonal_is_variance():
    assert matern_kernel(CovarianceSpec(0.5, 1.0, 1.0), 0.3, 0.3) == 1.0
    assert matern_kernel(CovarianceSpec(1.3, 2.5, 0.2), 0.7, 0.7) == 2.5


def test_kernel_exponential_case():
    spec = CovarianceSpec(0.5, 1.0, 1.0, domain=(0.0, 2.0))
    value = matern_kernel(spec, 0.0, 1.0)
    assert value == pytest.approx(math.exp(-1.0), rel=1e-14)
    assert value == pytest.approx(bessel_matern(0.5, 1.0, 1.0, 1.0), rel=1e-12)


def test_kernel_squared_exponential_limit():
    spec = CovarianceSpec(math.inf, 0.1, 0.1)
    assert matern_kernel(spec, 0.2, 0.3) == pytest.approx(0.1 * math.exp(-0.5), rel=1e-12)
    # large nu approaches the limit
    near = CovarianceSpec(200.0, 0.1, 0.1)
    assert matern_kernel(near, 0.2, 0.3) == pytest.approx(0.1 * math.exp(-0.5), rel=5e-3)


@pytest.mark.parametrize("nu", [0.3, 0.5, 1.0, 1.5, 2.5, 3.7])
@pytest.mark.parametrize("r", [1e-3, 0.05, 0.3, 1.0])
def test_kernel_matches_bessel_oracle(nu, r):
    spec = CovarianceSpec(nu, 1.7, 0.2)
    assert matern_kernel(spec, 0.0, r) == pytest.approx(bessel_matern(nu, 1.7, 0.2, r), rel=1e-10)


def test_kernel_far_tail_does_not_overflow():
    spec = CovarianceSpec(1.0, 1.0, 1e-3)
    value = matern_kernel(spec, 0.0, 1.0)
    assert value == 0.0 or (np.isfinite(value) and value >= 0.0)


def test_kernel_rejects_non_finite():
    with pytest.raises(ValueError):
        matern_kernel(CovarianceSpec(), np.nan, 0.1)


@pytest.mark.parametrize("kwargs", [dict(nu=0.0), dict(variance=-1.0),
                                    dict(correlation_length=0.0), dict(domain=(1.0, 1.0))])
def test_spec_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        CovarianceSpec(**kwargs)


@settings(max_examples=60, deadline=None)
@given(nu=st.sampled_from([0.5, 0.8, 1.5, math.inf]),
       x=st.floats(0, 1), y=st.floats(0, 1))
def test_kernel_symmetric_and_bounded(nu, x, y):
    spec = CovarianceSpec(nu, 0.4, 0.1)
    kxy = matern_kernel(spec, x, y)
    assert kxy == matern_kernel(spec, y, x)
    assert 0.0 <= kxy <= 0.4


def test_nystrom_trace_identity():
    basis = nystrom_eigenpairs(CovarianceSpec(math.inf, 0.1, 0.1), n_quad=200, cutoff=50)
    assert basis.eigenvalues.sum() == pytest.approx(0.1, rel=0.01)
    assert basis.eigenvalues.sum() <= basis.trace + 1e-8


def test_nystrom_single_pair_bounded_by_trace():
    basis = nystrom_eigenpairs(CovarianceSpec(0.5, 1.0, 0.1), n_quad=64, cutoff=1)
    assert basis.cutoff == 1
    assert basis.eigenvalues[0] <= basis.trace


def test_nystrom_eigenvalues_ordered_and_nonnegative():
    basis = nystrom_eigenpairs(CovarianceSpec(0.5, 1.0, 0.1), n_quad=300, cutoff=300)
    eta = basis.eigenvalues
    assert np.all(eta >= 0.0)
    assert np.all(np.diff(eta) <= 0.0)


def test_nystrom_orthonormal():
    basis = nystrom_eigenpairs(CovarianceSpec(1.5, 1.0, 0.2), n_quad=256, cutoff=40)
    e, w = basis.eigenvectors, basis.weights
    gram = e.T @ (w[:, None] * e)
    np.testing.assert_allclose(gram, np.eye(40), atol=1e-8)


def test_nystrom_extension_reproduces_node_values():
    basis = nystrom_eigenpairs(CovarianceSpec(1.5, 1.0, 0.2), n_quad=128, cutoff=10)
    np.testing.assert_allclose(basis.eigenfunctions(basis.nodes), basis.eigenvectors, atol=1e-9)


def test_nystrom_rejects_bad_cutoff():
    with pytest.raises(ValueError):
        nystrom_eigenpairs(CovarianceSpec(), n_quad=10, cutoff=11)


def test_default_cutoff_energy():
    eta = np.array([0.5, 0.3, 0.15, 0.05])
    assert default_cutoff(eta, 0.8) == 2
    assert default_cutoff(eta, 0.95) == 3
    assert default_cutoff(eta, 1.0) == 4


def test_zero_coefficients_give_zero_field():
    basis = nystrom_eigenpairs(CovarianceSpec(0.5, 1.0, 0.1), n_quad=64)
    from jumpflux.randfield import KLRealization

    w = KLRealization(basis, np.zeros(basis.cutoff))
    np.testing.assert_array_equal(w(np.linspace(0, 1, 17)), 0.0)


def test_single_term_expansion():
    basis = nystrom_eigenpairs(CovarianceSpec(1.5, 1.0, 0.2), n_quad=128, cutoff=1)
    from jumpflux.randfield import KLRealization

    x = np.linspace(0.05, 0.95, 7)
    w = KLRealization(basis, np.array([1.3]))
    expected = 1.3 * math.sqrt(basis.eigenvalues[0]) * basis.eigenfunctions(x)[:, 0]
    np.testing.assert_allclose(w(x), expected, rtol=1e-10)


def test_sampling_is_deterministic():
    basis = nystrom_eigenpairs(CovarianceSpec(0.5, 1.0, 0.1), n_quad=64)
    x = np.linspace(0, 1, 33)
    a = kl_sample(basis, 42)(x)
    b = kl_sample(basis, 42)(x)
    assert a.tobytes() == b.tobytes()


def test_cap_applies_only_outside_domain():
    basis = nystrom_eigenpairs(CovarianceSpec(1.5, 1.0, 0.3), n_quad=64)
    w = kl_sample(basis, 3)
    outside = np.array([-0.5, 1.5])
    assert np.all(w(outside) <= w.truncation_cap + 1e-15)
    inside = np.linspace(0, 1, 11)
    np.testing.assert_array_equal(w(inside), w.untruncated(inside))


def test_pointwise_variance_matches_expansion():
    """Sample variance of W(x) against sum_i eta_i e_i(x)^2, within 3 standard errors."""
    spec = CovarianceSpec(0.5, 1.0, 0.5)
    basis = nystrom_eigenpairs(spec, n_quad=128)
    x = np.array([0.3])
    phi = basis.eigenfunctions(x)[0]
    target = float(np.sum(basis.eigenvalues * phi**2))
    rng = np.random.default_rng(11)
    vals = np.array([kl_sample(basis, rng)(x)[0] for _ in range(5000)])
    se = target * math.sqrt(2.0 / (vals.size - 1))
    assert abs(vals.var(ddof=1) - target) <= 3 * se


class TestEstimator:
    def test_fit_transform(self):
        kl = KarhunenLoeveField(CovarianceSpec(0.5, 1.0, 0.1), n_quad=64).fit()
        assert kl.n_terms_ == kl.basis_.cutoff
        z = np.zeros((3, kl.n_terms_))
        z[1, 0] = 1.0
        out = kl.transform(z)
        assert out.shape == (3, 64)
        np.testing.assert_allclose(out[1], math.sqrt(kl.basis_.eigenvalues[0])
                                   * kl.basis_.eigenvectors[:, 0])

    def test_get_params(self):
        kl = KarhunenLoeveField(n_quad=32, n_terms=5)
        assert kl.get_params()["n_terms"] == 5

    def test_export(self, tmp_path):
        kl = KarhunenLoeveField(CovarianceSpec(0.5, 1.0, 0.1), n_quad=32, n_terms=4).fit()
        path = kl.export_eigenvalues(tmp_path / "eig.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "index,eigenvalue"
        assert len(lines) == 5
