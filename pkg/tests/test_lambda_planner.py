import csv
import io
import math

import numpy as np
import pytest

from penalty_prior.densities import ExpNorm, Gaussian, Laplace
from penalty_prior.errors import InvalidParameterError, UnsupportedPenaltyError
from penalty_prior.lambda_planner import (
    ArchitectureSpec,
    LambdaPlan,
    LayerShape,
    PriorConditionTarget,
    check_prior_condition,
    default_sweep,
    lambda_bayesian,
    lambda_usual,
    plan,
    solve_lambda_from_condition,
)
from penalty_prior.prior_engine import PenaltySpec, derive_prior_dirac

MNIST = ArchitectureSpec((LayerShape(1, 100, 784), LayerShape(2, 10, 100)), 42000, 100)


def test_bayesian_examples():
    assert lambda_bayesian("L2", 512) == 256
    assert lambda_bayesian("GroupLasso", 3) == pytest.approx(math.sqrt(12), rel=1e-15)
    assert lambda_bayesian("ReversedGroupLasso", 1000, 200) == math.sqrt(201000)
    assert round(lambda_bayesian("ReversedGroupLasso", 1000, 200), 3) == 448.330
    assert lambda_bayesian("L1", 8) == 4.0


def test_usual_examples():
    assert lambda_usual("L2", 17, 3) == 1
    assert lambda_usual("L1", 17) == 1
    assert lambda_usual("GroupLasso", 25) == 5
    assert lambda_usual("ReversedGroupLasso", 7, 100) == 10


def test_table_formulas_over_grid():
    for P in (2 ** k for k in range(13)):
        for n_l in (1, 2, 17, 256, 1024):
            assert lambda_bayesian("L2", P, n_l) == P / 2
            assert lambda_bayesian("L1", P, n_l) == math.sqrt(2 * P)
            assert lambda_bayesian("GroupLasso", P, n_l) == math.sqrt(P * (P + 1))
            assert lambda_bayesian("ReversedGroupLasso", P, n_l) == math.sqrt(P * (n_l + 1))
            assert lambda_usual("GroupLasso", P, n_l) == math.sqrt(P)
            assert lambda_usual("ReversedGroupLasso", P, n_l) == math.sqrt(n_l)


def test_bad_inputs():
    with pytest.raises(UnsupportedPenaltyError):
        lambda_bayesian("Elastic", 4)
    with pytest.raises(UnsupportedPenaltyError):
        lambda_usual("Elastic", 4)
    with pytest.raises(InvalidParameterError):
        lambda_bayesian("L2", 0)
    with pytest.raises(InvalidParameterError):
        lambda_bayesian("ReversedGroupLasso", 4)
    with pytest.raises(InvalidParameterError):
        ArchitectureSpec((LayerShape(1, 3, 4),), 10, 20)
    with pytest.raises(InvalidParameterError):
        ArchitectureSpec((), 10, 2)


def test_plan_bayesian_example():
    p = plan(MNIST, "L2", "Bayesian")
    assert p.per_layer == {1: 392.0, 2: 50.0}
    assert p.global_lambda == 1 / 42000
    assert p.per_batch_scale == 100 / 42000


def test_plan_usual_example():
    p = plan(MNIST, "L2", "Usual", global_lambda=1e-4)
    assert p.per_layer == {1: 1.0, 2: 1.0}
    assert p.global_lambda == 1e-4
    with pytest.raises(InvalidParameterError):
        plan(MNIST, "L2", "Usual")


def test_sparse_group_lasso_plan():
    sparse = plan(MNIST, "SparseGroupLasso", "Bayesian", mixing_gamma=0.0)
    group = plan(MNIST, "GroupLasso", "Bayesian")
    assert sparse.per_layer == group.per_layer
    assert sparse.per_layer_l1 == {1: math.sqrt(1568), 2: math.sqrt(200)}
    for g in (-0.1, 1.5, None):
        with pytest.raises(InvalidParameterError):
            plan(MNIST, "SparseGroupLasso", "Bayesian", mixing_gamma=g)
    with pytest.raises(InvalidParameterError):
        plan(MNIST, "L2", "Bayesian", mixing_gamma=0.5)


def test_plan_invariants():
    with pytest.raises(InvalidParameterError):
        LambdaPlan({1: 0.0}, 1.0, 0.1, "Usual", "L2")
    with pytest.raises(InvalidParameterError):
        plan(MNIST, "L2", "Sometimes")


def test_scaling_contract():
    arch = ArchitectureSpec((LayerShape(1, 5, 7),), 1003, 10)
    p = plan(arch, "L1", "Bayesian")
    batches = [min(arch.B, arch.n - s) for s in range(0, arch.n, arch.B)]
    assert len(batches) == math.ceil(arch.n / arch.B)
    total = math.fsum(p.batch_scale(b) for b in batches)
    assert abs(total * p.global_lambda * p.per_layer[1] - p.global_lambda * p.per_layer[1]) <= 1e-12


def test_json_and_csv():
    record = MNIST.to_json()
    assert record == {"layers": [{"l": 1, "n_l": 100, "P_l": 784}, {"l": 2, "n_l": 10, "P_l": 100}],
                      "n": 42000, "B": 100}
    assert ArchitectureSpec.from_json(record) == MNIST
    p = plan(MNIST, "GroupLasso", "Bayesian", annotate=True)
    out = p.to_json()
    assert {"per_layer", "global_lambda", "per_batch_scale", "scheme", "penalty_kind"} <= set(out)
    assert out["annotations"]["observed_overestimate_range"] == [10.0, 100.0]
    rows = list(csv.DictReader(io.StringIO(p.to_csv())))
    assert [r["l"] for r in rows] == ["1", "2"]
    assert float(rows[0]["lambda_l"]) == math.sqrt(784 * 785)
    with pytest.raises(InvalidParameterError):
        ArchitectureSpec.from_json({"layers": [{"l": 1}], "n": 3, "B": 1})


def test_default_sweeps():
    assert len(default_sweep("Usual")) == 8
    assert default_sweep("Usual")[0] == pytest.approx(1e-6)
    b = default_sweep("Bayesian", 1000)
    assert len(b) == 7 and 1e-3 in [pytest.approx(v) for v in b]
    assert all(isinstance(v, float) for v in b)


def test_prior_condition_examples():
    rep = check_prior_condition(Gaussian(0.0, 1 / 512), PriorConditionTarget("Prior", 512))
    assert rep.passed and rep.moment_err == 0
    rep = check_prior_condition(Laplace(math.sqrt(16)), PriorConditionTarget("Prior", 8))
    assert rep.passed and rep.moment == pytest.approx(1 / 8, rel=1e-15)
    rep = check_prior_condition(ExpNorm(math.sqrt(20), 4), PriorConditionTarget("PriorPrime", 4),
                                mc_samples=10 ** 6, seed=0)
    assert rep.passed
    assert rep.mc_moment == pytest.approx(1.0, rel=1e-2)
    assert rep.moment == pytest.approx(1.0, rel=1e-14)


def test_prior_condition_rejects_wrong_scale():
    assert not check_prior_condition(Gaussian(0.0, 1.0), PriorConditionTarget("Prior", 4)).passed
    assert not check_prior_condition(ExpNorm(1.0, 3), PriorConditionTarget("PriorPrime", 3),
                                     mc_samples=10 ** 4).passed


@pytest.mark.parametrize("P,n_l", [(1, 1), (4, 3), (16, 8), (100, 10)])
def test_condition_closure(P, n_l):
    for kind, mode, dim in (("L2", "Prior", 1), ("L1", "Prior", 1), ("GroupLasso", "PriorPrime", P)):
        lam = lambda_bayesian(kind, P, n_l)
        prior = derive_prior_dirac(PenaltySpec(kind, lam, dim))
        rep = check_prior_condition(prior, PriorConditionTarget(mode, P, n_l), mc_samples=10 ** 5)
        assert rep.passed, (kind, rep)
    lam = lambda_bayesian("ReversedGroupLasso", P, n_l)
    prior = derive_prior_dirac(PenaltySpec("GroupLasso", lam, n_l))
    rep = check_prior_condition(prior, PriorConditionTarget("PriorPrime", P, n_l, group_dim=n_l),
                                mc_samples=10 ** 5)
    assert rep.passed


def test_solve_examples():
    assert solve_lambda_from_condition("Gaussian", PriorConditionTarget("Prior", 512)) == pytest.approx(256, rel=1e-12)
    assert solve_lambda_from_condition("Laplace", PriorConditionTarget("Prior", 2)) == pytest.approx(2, rel=1e-12)
    assert solve_lambda_from_condition("ExpNorm", PriorConditionTarget("PriorPrime", 1)) == pytest.approx(
        math.sqrt(2), rel=1e-12)


def test_solve_inverse_consistency():
    for P in (1, 3, 64, 4096):
        assert solve_lambda_from_condition("Gaussian", PriorConditionTarget("Prior", P)) == pytest.approx(
            lambda_bayesian("L2", P), rel=1e-10)
        assert solve_lambda_from_condition("Laplace", PriorConditionTarget("Prior", P)) == pytest.approx(
            lambda_bayesian("L1", P), rel=1e-10)
        assert solve_lambda_from_condition("ExpNorm", PriorConditionTarget("PriorPrime", P)) == pytest.approx(
            lambda_bayesian("GroupLasso", P), rel=1e-10)
        for n_l in (1, 9):
            t = PriorConditionTarget("PriorPrime", P, n_l, group_dim=n_l)
            assert solve_lambda_from_condition("ExpNorm", t) == pytest.approx(
                lambda_bayesian("ReversedGroupLasso", P, n_l), rel=1e-10)


def test_solve_unknown_family():
    with pytest.raises(UnsupportedPenaltyError):
        solve_lambda_from_condition("Cauchy", PriorConditionTarget("Prior", 2))


def test_exp_norm_sampling_matches_closed_form():
    draws = ExpNorm(2.0, 3).sample(np.random.default_rng(5), 200000)
    sq = np.sum(draws ** 2, axis=1)
    assert abs(sq.mean() - 3.0) <= 4 * sq.std() / math.sqrt(len(sq))
