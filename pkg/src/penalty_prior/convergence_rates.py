"""Convergence-rate bound for variational inference on a closed-form toy model.

The generic bound states ``inf_beta R_n(beta) <= (C1 + C2 + C3) eps_n^2``
whenever a witness ``(C1, C2, C3, eps_n, W_n, beta_tilde)`` satisfies three
hypotheses.  The toy model is Gaussian mean estimation, where the
per-sample divergence ``D(p0 || p_w) = ||w - w*||^2 / (2 noise_var)`` is
known exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import logsumexp
from scipy.stats import norm, truncnorm

from .densities import Gaussian
from .errors import HypothesisViolationError, InvalidParameterError, InvalidWitnessError

PROBE_POINTS = 101
C3_SAFETY = 1.01


@dataclass(frozen=True)
class ToyModel:
    """Observations ``y ~ N(w*, noise_var I)``; Lipschitz data ``(r, k)`` on the sup-norm ball."""

    w_star: tuple
    noise_var: float = 1.0
    radius: float = 1.0
    k: Optional[float] = None

    def __post_init__(self):
        w = tuple(float(v) for v in np.atleast_1d(self.w_star))
        object.__setattr__(self, "w_star", w)
        if not self.noise_var > 0 or not self.radius > 0:
            raise InvalidParameterError("noise variance and radius must be positive")
        if self.k is None:
            object.__setattr__(self, "k", len(w) * self.radius / (2.0 * self.noise_var))
        if not self.k > 0:
            raise InvalidParameterError("the Lipschitz constant must be positive")

    @property
    def dim(self):
        return len(self.w_star)

    def divergence(self, w, n=1):
        """``D(p0^(n) || p_w^(n))`` for points ``w`` with trailing axis ``dim``."""
        d = np.asarray(w, dtype=float) - np.asarray(self.w_star)
        return n * np.sum(d * d, axis=-1) / (2.0 * self.noise_var)

    def lipschitz_holds(self, n_probe=PROBE_POINTS):
        """Probe ``D <= k ||w - w*||_inf`` on the radius-``r`` ball along diagonals and axes."""
        t = np.linspace(-self.radius, self.radius, n_probe)
        pts = _probe_points(np.asarray(self.w_star), t)
        sup = np.max(np.abs(pts - np.asarray(self.w_star)), axis=-1)
        return bool(np.all(self.divergence(pts) <= self.k * sup + 1e-15))


def standard_toy_model():
    """``w* = 0``, unit noise, ``r = 1``, ``k = 1/2``."""
    return ToyModel((0.0,), 1.0, 1.0)


def _probe_points(center, offsets):
    """Points ``center + t e_j`` for every axis and ``center + t (1, ..., 1)``."""
    dim = len(center)
    rows = [np.repeat(center[None, :], len(offsets), axis=0) for _ in range(dim + 1)]
    for j in range(dim):
        rows[j][:, j] += offsets
    rows[dim] += offsets[:, None]
    return np.concatenate(rows)


@dataclass
class RateWitness:
    """Constants, rate and sets certifying the bound.

    ``eps_n(n) = n^(-gamma/2)`` unless a custom ``eps_fn`` is given; the sets
    are intervals of half-width ``radius * eps_n^2 / eps_tilde^2`` around
    ``center``; ``beta_tilde`` and ``alpha`` are product densities.
    """

    C1: float
    C2: float
    C3: float
    gamma: float
    center: tuple
    radius: float
    alpha: Gaussian
    beta_tilde: Gaussian
    eps_tilde: float = 1.0
    eps_fn: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        consts = (self.C1, self.C2, self.C3)
        if any(c < 0 for c in consts) or sum(consts) <= 0:
            raise InvalidWitnessError(f"constants must be non-negative with a positive sum, got {consts}")

    def eps(self, n):
        return self.eps_fn(n) if self.eps_fn is not None else float(n) ** (-self.gamma / 2.0)

    def intervals(self, n):
        half = self.radius * self.eps(n) ** 2 / self.eps_tilde ** 2
        c = np.asarray(self.center)
        return np.stack([c - half, c + half], axis=1)

    def to_json(self):
        return {"C1": self.C1, "C2": self.C2, "C3": self.C3, "gamma": self.gamma,
                "center": list(self.center), "radius": self.radius, "eps_tilde": self.eps_tilde}


def rate_bound(C1, C2, C3, eps_n, n):
    """``(C1 + C2 + C3) eps_n^2``; ``eps_n`` is a value or a function of ``n``."""
    eps = eps_n(n) if callable(eps_n) else float(eps_n)
    consts = (C1, C2, C3)
    if any(c < 0 for c in consts) or sum(consts) <= 0:
        raise InvalidWitnessError(f"constants must be non-negative with a positive sum, got {consts}")
    if n * eps * eps < 1.0 - 1e-12:
        raise InvalidWitnessError(f"n eps_n^2 = {n * eps * eps:g} < 1 at n = {n}")
    return sum(consts) * eps * eps


def _log_interval_masses(density, intervals):
    """``ln density_j([lo_j, hi_j])`` for a product Gaussian, stable for narrow intervals."""
    sd = np.sqrt(density.var)
    a = (intervals[:, 0] - density.mu) / sd
    b = (intervals[:, 1] - density.mu) / sd
    # Mirror to the side where the upper tail is small so the difference keeps its digits.
    flip = a + b > 0
    a2, b2 = np.where(flip, -b, a), np.where(flip, -a, b)
    with np.errstate(divide="ignore"):
        wide = norm.logcdf(b2) + np.log(-np.expm1(norm.logcdf(a2) - norm.logcdf(b2)))
    # Narrow intervals: Gauss-Legendre on the density avoids cancellation.
    x, w = leggauss(32)
    half, mid = (b - a) / 2.0, (b + a) / 2.0
    pts = mid[:, None] + half[:, None] * x[None, :]
    narrow = np.log(half) + logsumexp(norm.logpdf(pts), axis=1, b=w[None, :])
    return np.where(b - a < 1.0, narrow, wide)


def _truncated_sq_error(density, intervals, w_star):
    """``E (w_j - w*_j)^2`` per coordinate under the density truncated to the intervals."""
    sd = np.sqrt(density.var)
    a = (intervals[:, 0] - density.mu) / sd
    b = (intervals[:, 1] - density.mu) / sd
    mean, var = truncnorm.stats(a, b, loc=density.mu, scale=sd, moments="mv")
    return np.asarray(var) + (np.asarray(mean) - w_star) ** 2, (a, b, sd)


@dataclass
class WitnessCheck:
    n: int
    eps_n: float
    bound_value: float
    R_n_estimate: float
    R_n_mc: float
    mc_standard_error: float
    divergence_ok: bool
    density_ratio_ok: bool
    mass_ok: bool
    conditions_hold: bool
    within_bound: bool
    status: str

    def to_json(self):
        return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in self.__dict__.items()}


@dataclass
class WitnessReport:
    checks: list

    @property
    def passed(self):
        return all(c.within_bound or not c.conditions_hold for c in self.checks) and all(
            c.status == "ok" for c in self.checks)

    @property
    def all_conditions_hold(self):
        return all(c.conditions_hold for c in self.checks)

    def to_json(self):
        return {"passed": self.passed, "all_conditions_hold": self.all_conditions_hold,
                "per_n": [c.to_json() for c in self.checks]}


def verify_witness(model, witness, n_list, mc_samples=10 ** 5, seed=0):
    """Check the three hypotheses at each ``n`` and compare ``R_n`` with the bound.

    The hypotheses are probed on ``PROBE_POINTS`` points per interval (plus
    the diagonal).  ``R_n`` is evaluated for ``beta_tilde`` truncated to the
    sets: the expected divergence from truncated-normal moments (cross-checked
    by Monte Carlo) plus ``-sum_j ln beta_tilde_j(W_j) / n``.
    """
    rng = np.random.default_rng(seed)
    w_star = np.asarray(model.w_star)
    checks = []
    for n in n_list:
        n = int(n)
        eps = witness.eps(n)
        scale = n * eps * eps
        bound = rate_bound(witness.C1, witness.C2, witness.C3, eps, n)
        box = witness.intervals(n)
        offsets = np.linspace(-1.0, 1.0, PROBE_POINTS)
        probe = _probe_points(np.asarray(witness.center), offsets * (box[0, 1] - box[0, 0]) / 2.0)
        divergence_ok = bool(np.all(model.divergence(probe, n) <= witness.C1 * scale * (1 + 1e-12)))
        log_ratio = witness.beta_tilde.logpdf(probe) - witness.alpha.logpdf(probe)
        density_ratio_ok = bool(np.all(log_ratio <= witness.C2 * scale + 1e-12))
        neg_log_mass = -float(np.sum(_log_interval_masses(witness.beta_tilde, box)))
        mass_ok = neg_log_mass <= witness.C3 * scale * (1 + 1e-12)
        holds = divergence_ok and density_ratio_ok and mass_ok

        sq, (a, b, sd) = _truncated_sq_error(witness.beta_tilde, box, w_star)
        expected_div = float(np.sum(sq)) / (2.0 * model.noise_var)
        r_closed = expected_div + neg_log_mass / n

        draws = truncnorm.rvs(a, b, loc=witness.beta_tilde.mu, scale=sd,
                              size=(mc_samples, model.dim), random_state=rng)
        per = np.sum((draws - w_star) ** 2, axis=1) / (2.0 * model.noise_var)
        r_mc = float(per.mean()) + neg_log_mass / n
        se = float(per.std(ddof=1) / math.sqrt(mc_samples))
        status = "ok" if abs(r_mc - r_closed) <= 5.0 * se + 1e-15 else "inconclusive"
        checks.append(WitnessCheck(n, eps, bound, r_closed, r_mc, se, divergence_ok,
                                   density_ratio_ok, bool(mass_ok), holds,
                                   r_closed <= bound, status))
    return WitnessReport(checks)


def corollary_rate(model, gamma, alpha=None, n_max=10 ** 5, extra_n=()):
    """Witness for the rate ``eps_n = n^(-gamma/2)``.

    ``beta_tilde = alpha`` (default ``N(w*, I)``), ``eps_tilde = 1``,
    ``C1 = r k``, ``C2 = 0`` and ``C3`` the largest value of
    ``-sum_j ln alpha_j(W_j^n) / n^(1 - gamma)`` over a log-spaced grid of
    ``n`` up to ``n_max`` (plus ``extra_n``), inflated by 1%.
    """
    if not 0.0 < gamma < 1.0:
        raise InvalidParameterError(f"gamma must lie in the open interval (0, 1), got {gamma}")
    if alpha is None:
        alpha = Gaussian(np.asarray(model.w_star), 1.0, model.dim)
    if not float(alpha.pdf(np.asarray(model.w_star) if model.dim > 1 else model.w_star[0])) > 0:
        raise HypothesisViolationError("the prior vanishes at the true parameter")
    if not model.lipschitz_holds():
        raise HypothesisViolationError("D(p0 || p_w) <= k ||w - w*||_inf fails on the radius-r ball")

    draft = RateWitness(model.radius * model.k, 0.0, 1.0, gamma, model.w_star, model.radius,
                        alpha, alpha)
    grid = np.unique(np.concatenate([
        np.round(np.logspace(0.0, math.log10(n_max), 400)),
        np.asarray(list(extra_n), dtype=float),
    ]))
    worst = 0.0
    for n in grid:
        box = draft.intervals(n)
        mass = -float(np.sum(_log_interval_masses(alpha, box)))
        worst = max(worst, mass / n ** (1.0 - gamma))
    draft.C3 = float(C3_SAFETY * worst)
    return draft
