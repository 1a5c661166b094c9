"""Priors matching common penalties, checked against r = KL + K."""

import numpy as np

from penalty_prior.divergence import verify_correspondence
from penalty_prior.prior_engine import (
    PenaltySpec,
    PosteriorFamily,
    derive_prior_dirac,
    derive_prior_grid,
    derive_prior_symbolic,
    normalize_prior,
)

mu = np.linspace(-2, 2, 21)

for pen in (PenaltySpec("L2", 2.0), PenaltySpec("L1", 1.5), PenaltySpec("GroupLasso", 1.2, 3)):
    prior = derive_prior_dirac(pen)
    grid = mu if pen.dim == 1 else [np.full(pen.dim, m) for m in mu]
    rep = verify_correspondence(pen, PosteriorFamily("Dirac", pen.dim), prior, grid)
    print(f"{pen.kind:>11} -> {prior.to_json()}  max residual {rep.max_residual:.1e}")

# A quartic penalty under a Gaussian posterior, symbolic and on a grid.
pen = PenaltySpec("EvenPolynomial", 1.0, poly_coeffs=(0.0, 0.5, 0.1))
post = PosteriorFamily("GaussianFixedVar", sigma2=0.5)
sym = derive_prior_symbolic(pen, post)
grid = derive_prior_grid(pen, post)
m = grid.central(0.5)
print("symbolic log-density coefficients:", sym.to_json())
print(f"grid vs symbolic on the central half: {np.max(np.abs(grid.values[m] - sym(grid.x[m]))):.1e}")
rep = verify_correspondence(pen, post, normalize_prior(sym), mu)
print(f"quartic correspondence residual {rep.max_residual:.1e}, K = {rep.fitted_K:.4f}")
