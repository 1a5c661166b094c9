import json
import math

import numpy as np
import pytest
from scipy.stats import norm

from penalty_prior.convergence_rates import (
    RateWitness,
    ToyModel,
    corollary_rate,
    rate_bound,
    standard_toy_model,
    verify_witness,
)
from penalty_prior.densities import Gaussian
from penalty_prior.errors import HypothesisViolationError, InvalidParameterError, InvalidWitnessError


def test_rate_bound_examples():
    assert rate_bound(1, 0, 0, lambda n: n ** -0.25, 16) == pytest.approx(0.25, rel=1e-15)
    assert rate_bound(1, 2, 3, 1.0, 1) == 6
    with pytest.raises(InvalidWitnessError):
        rate_bound(1, 0, 0, lambda n: 1.0 / n, 2)
    with pytest.raises(InvalidWitnessError):
        rate_bound(0, 0, 0, 1.0, 1)
    with pytest.raises(InvalidWitnessError):
        rate_bound(-1, 2, 0, 1.0, 1)


def test_rate_bound_monotone_in_n():
    eps = lambda n: n ** -0.3
    vals = [rate_bound(0.5, 0.0, 2.0, eps, n) for n in range(1, 2000, 7)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_toy_model_divergence_and_lipschitz():
    m = ToyModel((0.5, -1.0), noise_var=2.0, radius=0.5)
    assert m.divergence([1.5, -1.0], n=10) == pytest.approx(10 * 1.0 / 4.0)
    assert m.k == pytest.approx(2 * 0.5 / 4.0)
    assert m.lipschitz_holds()
    assert not ToyModel((0.0,), 1.0, 1.0, k=0.1).lipschitz_holds()
    with pytest.raises(InvalidParameterError):
        ToyModel((0.0,), noise_var=0.0)


def test_interval_masses_against_cdf():
    from penalty_prior.convergence_rates import _log_interval_masses
    d = Gaussian([0.0, 1.0], [1.0, 4.0], 2)
    box = np.array([[-0.3, 0.2], [3.0, 3.5]])
    expect = np.log([norm.cdf(0.2) - norm.cdf(-0.3), norm.cdf(1.25) - norm.cdf(1.0)])
    np.testing.assert_allclose(_log_interval_masses(d, box), expect, rtol=1e-13)
    tiny = np.array([[-1e-9, 1e-9]])
    np.testing.assert_allclose(_log_interval_masses(Gaussian(0.0, 1.0), tiny),
                               [math.log(2e-9 * norm.pdf(0.0))], rtol=1e-9)


@pytest.mark.parametrize("gamma", [0.5, 0.99])
def test_constructed_witness_passes(gamma):
    model = standard_toy_model()
    w = corollary_rate(model, gamma)
    assert w.C1 == pytest.approx(0.5) and w.C2 == 0.0 and w.C3 > 0
    rep = verify_witness(model, w, [10 ** 2, 10 ** 3, 10 ** 4, 10 ** 5], mc_samples=20000)
    assert rep.all_conditions_hold and rep.passed
    for c in rep.checks:
        assert c.R_n_estimate <= c.bound_value
        assert c.R_n_mc <= c.bound_value + 3 * c.mc_standard_error


def test_slower_rate_needs_larger_constant():
    model = standard_toy_model()
    assert corollary_rate(model, 0.99).C3 > corollary_rate(model, 0.5).C3


def test_construction_scale_is_at_least_one():
    w = corollary_rate(standard_toy_model(), 0.7)
    for n in (1, 2, 10, 12345):
        assert n * w.eps(n) ** 2 >= 1.0
        assert n * w.eps(n) ** 2 == pytest.approx(n ** 0.3, rel=1e-14)


def test_small_c3_breaks_conditions_near_one():
    # For gamma close to 1 the interval-mass term outgrows C3 n eps_n^2 over the tested range.
    model = standard_toy_model()
    w = corollary_rate(model, 0.99)
    broken = RateWitness(w.C1, 0.0, w.C3 / 2.0, 0.99, w.center, w.radius, w.alpha, w.beta_tilde)
    rep = verify_witness(model, broken, [10, 10 ** 3, 10 ** 5], mc_samples=5000)
    assert rep.checks[0].mass_ok
    assert not rep.checks[-1].mass_ok
    assert not rep.all_conditions_hold


def test_small_c3_breaks_conditions_at_moderate_n():
    # For gamma = 0.5 the polynomial growth of C3 n eps_n^2 wins eventually.
    model = standard_toy_model()
    w = corollary_rate(model, 0.5)
    broken = RateWitness(w.C1, 0.0, w.C3 / 20.0, 0.5, w.center, w.radius, w.alpha, w.beta_tilde)
    rep = verify_witness(model, broken, [10 ** 2, 10 ** 6], mc_samples=5000)
    assert [c.mass_ok for c in rep.checks] == [False, True]


def test_degenerate_n_one():
    model = standard_toy_model()
    rep = verify_witness(model, corollary_rate(model, 0.5), [1], mc_samples=5000)
    c = rep.checks[0]
    assert c.eps_n == 1.0
    assert all(math.isfinite(v) for v in (c.bound_value, c.R_n_estimate, c.R_n_mc))


def test_gamma_outside_open_interval():
    for g in (0.0, 1.0, 1.5):
        with pytest.raises(InvalidParameterError):
            corollary_rate(standard_toy_model(), g)


def test_hypothesis_violations():
    with pytest.raises(HypothesisViolationError):
        corollary_rate(ToyModel((0.0,), k=0.01), 0.5)


def test_multi_dimensional_witness():
    model = ToyModel((0.2, -0.3, 1.0))
    w = corollary_rate(model, 0.5)
    rep = verify_witness(model, w, [100, 1000], mc_samples=5000)
    assert rep.passed and rep.all_conditions_hold


def test_report_is_deterministic_and_serializable():
    model = standard_toy_model()
    w = corollary_rate(model, 0.5)
    a = json.dumps(verify_witness(model, w, [100, 1000], mc_samples=3000, seed=4).to_json(), sort_keys=True)
    b = json.dumps(verify_witness(model, w, [100, 1000], mc_samples=3000, seed=4).to_json(), sort_keys=True)
    assert a == b
    assert set(json.loads(json.dumps(w.to_json()))) >= {"C1", "C2", "C3", "gamma"}
