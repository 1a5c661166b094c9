import math

import numpy as np
import pytest
from scipy import integrate, stats

from penalty_prior.densities import ExpNorm, Gaussian, GridDensity, Laplace
from penalty_prior.divergence import (
    KLReport,
    QuadratureConfig,
    gaussian_renyi,
    kl_dirac,
    kl_gaussian_gaussian,
    kl_numeric,
    kl_numeric_with_error,
    renyi_divergence,
    renyi_prior_candidate,
    renyi_prior_candidate_log,
    variational_objective,
    verify_correspondence,
)
from penalty_prior.errors import (
    InvalidParameterError,
    RescalingError,
    SupportViolationError,
)
from penalty_prior.grid import GridFunction
from penalty_prior.prior_engine import (
    PenaltySpec,
    PosteriorFamily,
    derive_prior_dirac,
    derive_prior_grid,
    derive_prior_symbolic,
    normalize_prior,
    quadratic_family,
)

FIXED1 = PosteriorFamily("GaussianFixedVar", sigma2=1.0)


def test_kl_gaussian_examples():
    assert kl_gaussian_gaussian(0.0, 1.0, 1.0) == 0.0
    assert kl_gaussian_gaussian(1.0, 1.0, 1.0) == 0.5
    # Frozen from adaptive quadrature of int beta ln(beta / alpha).
    assert kl_gaussian_gaussian(1.0, 1.0, 2.0) == pytest.approx(0.3465735902799726, abs=1e-14)


def test_kl_gaussian_rejects_bad_variance():
    with pytest.raises(InvalidParameterError):
        kl_gaussian_gaussian(0.0, 0.0, 1.0)
    with pytest.raises(InvalidParameterError):
        kl_gaussian_gaussian(0.0, 1.0, -2.0)


def test_kl_dirac_examples():
    assert kl_dirac(Laplace(2.0), 1.5, 1.0) == pytest.approx(3.0, abs=1e-15)
    lam = 1.7
    assert kl_dirac(Gaussian(0.0, 1 / (2 * lam)), 0.0, 1.0) == pytest.approx(0.5 * math.log(math.pi / lam))
    prior = ExpNorm(1.3, 3)
    mu = np.array([0.2, -0.1, 0.4])
    diff = kl_dirac(prior, mu, 1e-3) - kl_dirac(prior, mu, 1e-6)
    assert diff == pytest.approx(3 * math.log(1e-6 / 1e-3), rel=1e-13)


def test_kl_dirac_support_violation():
    grid = GridFunction.from_function(lambda t: np.where(np.abs(t) < 1, 0.0, -1e308) * 1.0, -5.0, 5.0, 64)
    prior = GridDensity(grid.with_values(np.where(np.abs(grid.x) < 1, 0.0, -800.0)), kappa=1.0)
    with pytest.raises(SupportViolationError):
        kl_dirac(type("Zero", (), {"logpdf": lambda self, m: -np.inf, "dim": 1})(), 0.0)
    assert math.isfinite(kl_dirac(prior, 0.0))


def test_kl_numeric_matches_closed_form():
    assert kl_numeric(FIXED1, 1.0, None, Gaussian(0.0, 2.0)) == pytest.approx(
        kl_gaussian_gaussian(1.0, 1.0, 2.0), abs=1e-10)


def test_kl_numeric_self_is_zero():
    post = PosteriorFamily("GaussianFixedVar", sigma2=0.5)
    a = derive_prior_grid(PenaltySpec("L2", 1.0), post)
    assert kl_numeric(post, 0.0, None, Gaussian(0.0, 0.5)) == pytest.approx(0.0, abs=1e-12)
    assert normalize_prior(a).kappa > 0


def test_kl_numeric_against_quadrature_for_laplace():
    beta = stats.norm(0.4, math.sqrt(0.6))
    val, _ = integrate.quad(lambda t: beta.pdf(t) * (beta.logpdf(t) - Laplace(1.5).logpdf(t)),
                            -20, 20, points=[0.0], limit=200, epsabs=1e-13)
    post = PosteriorFamily("GaussianFixedVar", sigma2=0.6)
    assert kl_numeric(post, 0.4, None, Laplace(1.5)) == pytest.approx(val, abs=1e-5)


def test_kl_numeric_monte_carlo_expnorm():
    post = PosteriorFamily("GaussianFixedVar", dim=2, sigma2=1.0)
    prior = ExpNorm(math.sqrt(6.0), 2)
    vals = [kl_numeric_with_error(post, [0.0, 0.0], None, prior, QuadratureConfig(mc_samples=200000, seed=s))
            for s in range(4)]
    mean = np.mean([v for v, _ in vals])
    for v, se in vals:
        assert math.isfinite(v)
        assert abs(v - mean) <= 3 * math.sqrt(2) * se


def test_monte_carlo_is_bit_deterministic():
    post = PosteriorFamily("GaussianFixedVar", dim=3, sigma2=0.5)
    cfg = QuadratureConfig(mc_samples=5000, seed=7)
    a = kl_numeric(post, [0.1, 0.2, 0.3], None, ExpNorm(2.0, 3), cfg)
    b = kl_numeric(post, [0.1, 0.2, 0.3], None, ExpNorm(2.0, 3), cfg)
    assert a == b


def test_kl_additivity_over_products():
    post2 = PosteriorFamily("GaussianFixedVar", 2, (0.5, 2.0))
    prior2 = Gaussian([0.3, -1.0], [1.5, 0.7], 2)
    total = kl_numeric(post2, [0.4, 0.1], None, prior2)
    parts = (kl_gaussian_gaussian(0.4, 0.5, 1.5, 0.3) + kl_gaussian_gaussian(0.1, 2.0, 0.7, -1.0))
    assert total == pytest.approx(parts, abs=1e-8)
    lap_total = kl_numeric(post2, [0.4, 0.1], None, Laplace(1.2, 2))
    lap_parts = (kl_numeric(PosteriorFamily("GaussianFixedVar", sigma2=0.5), 0.4, None, Laplace(1.2))
                 + kl_numeric(PosteriorFamily("GaussianFixedVar", sigma2=2.0), 0.1, None, Laplace(1.2)))
    assert lap_total == pytest.approx(lap_parts, abs=1e-8)


def test_kl_non_negative():
    rng = np.random.default_rng(3)
    for _ in range(30):
        mu, s2, s0 = rng.normal(), rng.uniform(0.1, 3), rng.uniform(0.1, 3)
        assert kl_numeric(PosteriorFamily("GaussianFixedVar", sigma2=s2), mu, None, Gaussian(0, s0)) >= -1e-9


# correspondence

MU21 = np.linspace(-2, 2, 21)


def test_verify_l2_dirac():
    rep = verify_correspondence(PenaltySpec("L2", 3.0), PosteriorFamily("Dirac"), Gaussian(0, 1 / 6), MU21)
    assert rep.max_residual <= 1e-10 and rep.method == "closed_form"


def test_verify_rigid_family():
    s0 = 2.0
    fam = quadratic_family(lambda s: 0.5 * s / s0 + 0.5 * math.log(s0 / s) - 0.5, lambda s: 0.5 / s0)
    rep = verify_correspondence(fam, PosteriorFamily("GaussianFreeVar"), Gaussian(0, s0),
                                np.linspace(-2, 2, 5), [0.5, 1.0, 2.0])
    assert rep.max_residual <= 1e-8
    assert rep.fitted_K == pytest.approx(0.0, abs=1e-12)


def test_verify_wrong_prior_fails():
    rep = verify_correspondence(PenaltySpec("L1", 1.0), PosteriorFamily("Dirac"), Gaussian(0, 1), MU21)
    assert rep.max_residual > 0.1
    assert not rep.passes(1e-6)


def test_verify_constant_shift_invariance():
    base = PenaltySpec("EvenPolynomial", 1.0, poly_coeffs=(0.0, 1.0))
    shifted = PenaltySpec("EvenPolynomial", 1.0, poly_coeffs=(0.75, 1.0))
    post = PosteriorFamily("Dirac")
    prior = Gaussian(0, 0.7)
    a = verify_correspondence(base, post, prior, MU21)
    b = verify_correspondence(shifted, post, prior, MU21)
    assert b.fitted_K == pytest.approx(a.fitted_K + 0.75, abs=1e-12)
    np.testing.assert_allclose([r["residual"] for r in a.residuals],
                               [r["residual"] for r in b.residuals], atol=1e-12)


def test_correspondence_identity_symbolic_and_grid():
    post = PosteriorFamily("GaussianFixedVar", sigma2=0.5)
    pen = PenaltySpec("EvenPolynomial", 1.0, poly_coeffs=(0.0, 0.5, 0.2))
    sym = normalize_prior(derive_prior_symbolic(pen, post))
    rep = verify_correspondence(pen, post, sym, MU21)
    assert rep.max_residual <= 1e-6
    grid_prior = normalize_prior(derive_prior_grid(pen, post))
    rep = verify_correspondence(pen, post, grid_prior, MU21)
    assert rep.max_residual <= 1e-3


def test_map_degenerate_case():
    for pen in (PenaltySpec("L2", 2.0), PenaltySpec("L1", 3.0), PenaltySpec("GroupLasso", 1.5, 3)):
        prior = derive_prior_dirac(pen)
        eps = 2.0 ** -52
        for mu in (0.3, -1.1):
            m = np.full(pen.dim, mu)
            expect = float(pen.value(m if pen.dim > 1 else mu)) + math.log(prior.kappa) - pen.dim * math.log(eps)
            assert kl_dirac(prior, m if pen.dim > 1 else mu, eps) == pytest.approx(expect, rel=1e-14)


def test_kl_report_json():
    rep = KLReport(0.1, 0.2, [{"mu": 0.0, "nu": None, "residual": 0.2}], "quadrature", 64)
    assert set(rep.to_json()) == {"fitted_K", "max_residual", "residuals", "method", "n_samples_or_nodes"}


def test_variational_objective():
    val = variational_objective(2.0, FIXED1, 1.0, None, Gaussian(0, 2.0), scale=0.5)
    assert val == pytest.approx(2.0 + 0.5 * kl_gaussian_gaussian(1, 1, 2), abs=1e-12)


# Renyi

def test_renyi_self_is_zero():
    assert renyi_divergence(Gaussian(0.3, 0.8), Gaussian(0.3, 0.8), 2.0) == pytest.approx(0.0, abs=1e-12)


def test_renyi_against_trapezoid_oracle():
    # Frozen from a 600001-point trapezoid over [-30, 30].
    assert renyi_divergence(Gaussian(1.0, 1.0), Gaussian(0.0, 1.0), 2.0) == pytest.approx(1.0, abs=1e-6)


def test_renyi_closed_form_helper():
    for g in (0.5, 2.0, 3.0):
        assert renyi_divergence(Gaussian(0.4, 1.3), Gaussian(-0.2, 2.1), g) == pytest.approx(
            gaussian_renyi(g, 0.4, 1.3, -0.2, 2.1), abs=1e-10)


def test_renyi_infinite_when_integral_diverges():
    # gamma var2 + (1 - gamma) var1 <= 0 makes the integral diverge.
    assert renyi_divergence(Gaussian(0.0, 3.0), Gaussian(0.0, 1.0), 3.0) == math.inf


@pytest.mark.parametrize("gamma,tol", [(1.1, 1e-2), (1.01, 1e-3), (1.001, 1e-4)])
def test_renyi_tends_to_kl(gamma, tol):
    d = renyi_divergence(Gaussian(0.3, 1.0), Gaussian(0.0, 1.0), gamma)
    assert abs(d - kl_gaussian_gaussian(0.3, 1.0, 1.0)) <= tol


def test_renyi_monte_carlo_in_two_dimensions():
    beta = Gaussian([0.2, -0.1], 1.0, 2)
    alpha = Gaussian(0.0, 1.5, 2)
    d = renyi_divergence(beta, alpha, 0.5, QuadratureConfig(mc_samples=200000, seed=1))
    exact = gaussian_renyi(0.5, 0.2, 1.0, 0.0, 1.5) + gaussian_renyi(0.5, -0.1, 1.0, 0.0, 1.5)
    assert d == pytest.approx(exact, abs=5e-3)


def _target_penalty(gamma, s0=2.0):
    x = np.linspace(-20.0, 20.0, 4096, endpoint=False)
    r = np.array([gaussian_renyi(gamma, m, 1.0, 0.0, s0) for m in x])
    return PenaltySpec("GridSampled", grid=GridFunction(-20.0, 20.0, r))


@pytest.mark.parametrize("gamma", [0.5, 2.0])
def test_renyi_candidate_recovers_gaussian(gamma):
    pen = _target_penalty(gamma)
    log_a = renyi_prior_candidate_log(pen, FIXED1, gamma, 0.0)
    m = log_a.central(0.5)
    np.testing.assert_allclose(log_a.values[m], Gaussian(0.0, 2.0).logpdf(log_a.x[m]), atol=1e-8)
    cand = GridDensity(log_a, kappa=1.0)
    for mu in np.linspace(-3, 3, 7):
        d = renyi_divergence(Gaussian(mu, 1.0), cand, gamma)
        assert d == pytest.approx(float(pen.value(mu)), abs=1e-3)


def test_renyi_candidate_same_for_both_orders():
    a = renyi_prior_candidate(_target_penalty(0.5), FIXED1, 0.5, 0.0)
    b = renyi_prior_candidate(_target_penalty(2.0), FIXED1, 2.0, 0.0)
    m = a.central(0.5)
    np.testing.assert_allclose(a.values[m], b.values[m], atol=1e-8)


def test_renyi_candidate_constant_penalty_smoke():
    pen = PenaltySpec("GridSampled", grid=GridFunction(-20.0, 20.0, np.full(4096, 0.3)))
    out = renyi_prior_candidate(pen, FIXED1, 2.0, 0.0)
    assert np.all(np.isfinite(out.values))


def test_renyi_candidate_overflow():
    pen = PenaltySpec("GridSampled", grid=GridFunction(-20.0, 20.0, np.full(4096, 1000.0)))
    with pytest.raises(RescalingError):
        renyi_prior_candidate(pen, FIXED1, 2.0, 0.0)
