"""Convergence-rate witness on Gaussian mean estimation."""

from penalty_prior.convergence_rates import corollary_rate, standard_toy_model, verify_witness

model = standard_toy_model()
for gamma in (0.5, 0.9):
    w = corollary_rate(model, gamma)
    rep = verify_witness(model, w, [10 ** 2, 10 ** 3, 10 ** 4, 10 ** 5], mc_samples=20000)
    print(f"gamma={gamma}: C1={w.C1:.3g} C2={w.C2:.3g} C3={w.C3:.3g} passed={rep.passed}")
    for c in rep.checks:
        print(f"  n={c.n:>6}  R_n={c.R_n_estimate:.3e}  bound={c.bound_value:.3e}")
