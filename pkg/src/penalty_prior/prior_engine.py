"""Derive the prior equivalent to a penalty for a translation-invariant posterior family.

For a posterior family ``beta_{mu,nu}(theta) = beta_{0,nu}(theta - mu)`` and a
penalty ``r_nu(mu)``, the candidate log-prior is

    A_nu = -Ent(beta_{0,nu}) - F^-1[ F r_nu / F beta_{0,nu}(-.) ],

i.e. ``-Ent`` minus the function ``g`` solving ``g * beta_{0,nu}(-.) = r_nu``.
The penalty equals ``KL(beta_{mu,nu} || exp(A)/kappa)`` up to a constant
exactly when ``A_nu`` does not depend on ``nu`` and ``exp(A)`` is integrable.

Three derivation paths are provided: closed-form Dirac-derivative calculus
for even polynomial penalties under Gaussian posteriors, band-limited FFT
deconvolution of grid-sampled penalties, and the degenerate Dirac posterior
(MAP) path where ``A = -r``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .densities import ExpNorm, Gaussian, GridDensity, Laplace, LogPoly, PriorDensity, grid_integral
from .dirac import deconvolve_polynomial
from .errors import (
    ConfigurationError,
    DerivationError,
    InvalidParameterError,
    NonNormalizablePriorError,
    PenaltyPriorError,
    UnsupportedPenaltyError,
)
from .grid import GridFunction, gaussian_deconvolve

PENALTY_KINDS = ("L2", "L1", "GroupLasso", "ReversedGroupLasso", "EvenPolynomial", "GridSampled")
POSTERIOR_KINDS = ("Dirac", "GaussianFixedVar", "GaussianFreeVar")
DEFAULT_EPSILON = 2.0 ** -52
DEFAULT_MAX_DEGREE = 8
SYMBOLIC_TOLERANCE = 1e-9
GRID_TOLERANCE = 1e-4


def _validate_even_coeffs(coeffs):
    coeffs = [float(c) for c in coeffs]
    if not coeffs or not all(math.isfinite(c) for c in coeffs):
        raise InvalidParameterError(f"polynomial coefficients must be finite, got {coeffs}")
    return coeffs


@dataclass(frozen=True)
class PenaltySpec:
    """A penalty ``r(mu, nu)`` on the mean of a posterior.

    ``lam`` multiplies the reference penalty of each kind:

    * ``L2``: ``sum_i mu_i^2``; ``L1``: ``sum_i |mu_i|``
    * ``GroupLasso`` / ``ReversedGroupLasso``: ``||mu||_2`` over the group
    * ``EvenPolynomial``: ``sum_i sum_k c_k mu_i^(2k)`` with ``c = poly_coeffs``
    * ``GridSampled``: ``sum_i grid(mu_i)``

    ``nu_dependence`` maps a value of the extra posterior parameters to the
    ``poly_coeffs`` (or the grid) in force for that value.
    """

    kind: str
    lam: float = 1.0
    dim: int = 1
    poly_coeffs: Optional[tuple] = None
    grid: Optional[GridFunction] = None
    nu_dependence: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise InvalidParameterError(f"unknown penalty kind {self.kind!r}")
        if not self.lam > 0 or not math.isfinite(self.lam):
            raise InvalidParameterError(f"penalty factor must be positive, got {self.lam}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidParameterError(f"dimension must be a positive integer, got {self.dim}")
        if self.poly_coeffs is not None:
            coeffs = tuple(_validate_even_coeffs(self.poly_coeffs))
            object.__setattr__(self, "poly_coeffs", coeffs)
        if self.kind == "EvenPolynomial":
            if self.poly_coeffs is None and self.nu_dependence is None:
                raise InvalidParameterError("EvenPolynomial needs poly_coeffs or nu_dependence")
            if self.poly_coeffs is not None and not self.poly_coeffs[-1] > 0:
                raise InvalidParameterError("EvenPolynomial needs a positive leading coefficient")
        if self.kind == "GridSampled":
            if self.grid is None and self.nu_dependence is None:
                raise InvalidParameterError("GridSampled needs a grid or nu_dependence")
            if self.grid is not None and np.iscomplexobj(self.grid.values):
                raise InvalidParameterError("a grid-sampled penalty must be real")

    @property
    def is_polynomial(self):
        return self.kind in ("L2", "EvenPolynomial")

    def even_coeffs(self, nu=None):
        """Coefficients of ``mu^(2k)`` (including ``lam``) in force for ``nu``."""
        if self.kind == "L2":
            base = [0.0, 1.0]
        elif self.kind == "EvenPolynomial":
            if self.nu_dependence is not None and nu is not None:
                base = _validate_even_coeffs(self.nu_dependence(nu))
            elif self.poly_coeffs is not None:
                base = list(self.poly_coeffs)
            else:
                raise InvalidParameterError("this penalty depends on nu; pass a value for it")
        else:
            raise UnsupportedPenaltyError(
                f"{self.kind} is not an even polynomial; use the grid or Dirac path"
            )
        return [self.lam * c for c in base]

    def ascending_coeffs(self, nu=None):
        """Ascending coefficients in ``mu`` of the per-coordinate polynomial."""
        out = []
        for c in self.even_coeffs(nu):
            out.extend([c, 0.0])
        return out[:-1]

    def grid_for(self, nu=None):
        if self.kind != "GridSampled":
            raise UnsupportedPenaltyError(f"{self.kind} carries no grid")
        grid = self.nu_dependence(nu) if (self.nu_dependence is not None and nu is not None) else self.grid
        if grid is None:
            raise InvalidParameterError("this penalty depends on nu; pass a value for it")
        return grid.with_values(self.lam * np.asarray(grid.values, dtype=float))

    def value(self, mu, nu=None):
        """Evaluate ``r_nu(mu)``; ``mu`` has trailing axis ``dim`` (optional when 1)."""
        m = np.asarray(mu, dtype=float)
        if self.dim == 1 and (m.ndim == 0 or m.shape[-1] != 1):
            m = m[..., None]
        if m.shape[-1] != self.dim:
            raise InvalidParameterError(f"expected points of dimension {self.dim}, got {m.shape}")
        if self.kind == "L2":
            return self.lam * np.sum(m * m, axis=-1)
        if self.kind == "L1":
            return self.lam * np.sum(np.abs(m), axis=-1)
        if self.kind in ("GroupLasso", "ReversedGroupLasso"):
            return self.lam * np.linalg.norm(m, axis=-1)
        if self.kind == "EvenPolynomial":
            poly = self.ascending_coeffs(nu)
            return np.sum(np.polynomial.polynomial.polyval(m, poly), axis=-1)
        grid = self.grid_for(nu)
        spline = CubicSpline(grid.x, grid.values)
        return np.sum(spline(m), axis=-1)

    def to_json(self):
        record = {"kind": self.kind, "lambda": self.lam, "dim": self.dim}
        if self.poly_coeffs is not None:
            record["poly_coeffs"] = list(self.poly_coeffs)
        if self.grid is not None:
            record["grid"] = self.grid.to_json()
        return record

    @classmethod
    def from_json(cls, record):
        grid = GridFunction.from_json(record["grid"]) if record.get("grid") else None
        coeffs = record.get("poly_coeffs")
        return cls(record["kind"], float(record.get("lambda", 1.0)), int(record.get("dim", 1)),
                   tuple(coeffs) if coeffs is not None else None, grid)


def quadratic_family(a, b):
    """Penalty ``a(s2) + b(s2) mu^2`` on Gaussian posteriors ``N(mu, s2)``."""
    return PenaltySpec("EvenPolynomial", nu_dependence=lambda s2: [a(s2), b(s2)])


@dataclass(frozen=True)
class PosteriorFamily:
    """A translation-invariant family ``beta_{mu,nu}``.

    ``GaussianFixedVar`` uses ``sigma2`` for every member; ``GaussianFreeVar``
    treats the variances as the extra parameters ``nu``.  A Dirac member is
    read as a uniform density of width ``epsilon_machine`` per coordinate.
    """

    kind: str
    dim: int = 1
    sigma2: object = None
    epsilon_machine: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.kind not in POSTERIOR_KINDS:
            raise InvalidParameterError(f"unknown posterior kind {self.kind!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidParameterError(f"dimension must be a positive integer, got {self.dim}")
        if self.kind == "GaussianFixedVar" and self.sigma2 is None:
            raise InvalidParameterError("GaussianFixedVar needs sigma2")
        if self.sigma2 is not None:
            s2 = np.asarray(self.sigma2, dtype=float)
            if s2.ndim == 0:
                object.__setattr__(self, "sigma2", float(s2))
            else:
                object.__setattr__(self, "sigma2", tuple(float(v) for v in s2))
        if not self.epsilon_machine > 0:
            raise InvalidParameterError("epsilon_machine must be positive")

    @property
    def is_gaussian(self):
        return self.kind != "Dirac"

    def variances(self, nu=None):
        """Per-coordinate variances in force for ``nu``."""
        if not self.is_gaussian:
            raise InvalidParameterError("a Dirac family has no variance")
        source = nu if (self.kind == "GaussianFreeVar" and nu is not None) else self.sigma2
        if source is None:
            raise InvalidParameterError("GaussianFreeVar needs a variance value nu")
        s2 = np.broadcast_to(np.asarray(source, dtype=float), (self.dim,)).copy()
        if not np.all(np.isfinite(s2)) or np.any(s2 <= 0):
            raise InvalidParameterError(f"posterior variances must be positive and finite, got {source}")
        return s2

    def member(self, mu, nu=None):
        """The density ``beta_{mu,nu}`` (Gaussian kinds only)."""
        return Gaussian(mu, self.variances(nu), self.dim)

    def to_json(self):
        s2 = list(self.sigma2) if isinstance(self.sigma2, tuple) else self.sigma2
        return {"kind": self.kind, "dim": self.dim, "sigma2": s2,
                "epsilon_machine": self.epsilon_machine}

    @classmethod
    def from_json(cls, record):
        return cls(record["kind"], int(record.get("dim", 1)), record.get("sigma2"),
                   float(record.get("epsilon_machine", DEFAULT_EPSILON)))


def entropy(posterior, nu=None):
    """Differential entropy of ``beta_{0,nu}`` (``N ln eps`` for a Dirac)."""
    if posterior.kind == "Dirac":
        return posterior.dim * math.log(posterior.epsilon_machine)
    s2 = posterior.variances(nu)
    return 0.5 * float(np.sum(np.log(2.0 * math.pi * math.e * s2)))


@dataclass(eq=False)
class LogDensityPoly:
    """``A(theta) = entropy_const + sum_i p_i(theta_i)`` with one coefficient row per coordinate."""

    coeffs: np.ndarray
    entropy_const: float
    dim: int = 1

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if rows.shape[0] == 1 and self.dim > 1:
            rows = np.repeat(rows, self.dim, axis=0)
        self.coeffs = rows
        self.dim = rows.shape[0]

    def __call__(self, theta):
        t = np.asarray(theta, dtype=float)
        if self.dim == 1 and (t.ndim == 0 or t.shape[-1] != 1):
            t = t[..., None]
        total = np.full(t.shape[:-1], self.entropy_const)
        for i, row in enumerate(self.coeffs):
            total = total + np.polynomial.polynomial.polyval(t[..., i], row)
        return total

    def trimmed_rows(self):
        out = []
        for row in self.coeffs:
            nz = np.flatnonzero(row)
            out.append(row[: nz[-1] + 1] if nz.size else row[:1])
        return out

    @property
    def integrable(self):
        for row in self.trimmed_rows():
            degree = len(row) - 1
            if degree < 2 or degree % 2 or not row[-1] < 0:
                return False
        return True

    def to_json(self):
        return {"coeffs": self.coeffs.tolist(), "entropy_const": self.entropy_const, "dim": self.dim}


def derive_prior_symbolic(penalty, posterior, nu=None, *, max_degree=DEFAULT_MAX_DEGREE):
    """Closed-form ``A_nu`` for an even polynomial penalty under a Gaussian posterior.

    Per coordinate, the penalty's transform is a finite Dirac series; it is
    multiplied by ``exp(s2 xi^2 / 2)`` through Leibniz' rule and transformed
    back term by term.
    """
    if not posterior.is_gaussian:
        raise InvalidParameterError("the symbolic path needs a Gaussian posterior")
    if not penalty.is_polynomial:
        raise UnsupportedPenaltyError(f"{penalty.kind} has no polynomial form")
    poly = penalty.ascending_coeffs(nu)
    degree = len(poly) - 1
    if degree > max_degree:
        raise ConfigurationError(f"penalty degree {degree} exceeds the configured maximum {max_degree}")
    s2 = posterior.variances(nu)
    cache = {}
    rows = []
    for v in s2:
        if v not in cache:
            cache[v] = [-c for c in deconvolve_polynomial(poly, float(v))]
        rows.append(cache[v])
    return LogDensityPoly(np.array(rows), -entropy(posterior, nu), posterior.dim)


def _grid_probe_integrable(a_values, x):
    """Check that ``A`` falls off on both sides of its maximum.

    Requires ``exp(A)`` at both grid ends to be below 1e-12 of its peak and
    ``A`` to be non-increasing over the outer tenth of the grid on each side,
    a discrete stand-in for a lower bound ``-A >= a|theta|^b + k``.
    """
    a = np.asarray(a_values, dtype=float)
    peak = a.max()
    if a[0] > peak + math.log(1e-12) or a[-1] > peak + math.log(1e-12):
        return False
    tail = max(len(a) // 10, 2)
    if np.any(np.diff(a[-tail:]) > 1e-12 * max(1.0, abs(peak))):
        return False
    if np.any(np.diff(a[:tail]) < -1e-12 * max(1.0, abs(peak))):
        return False
    return True


def default_penalty_grid(penalty, posterior, nu=None, n_points=4096):
    """Sample ``penalty`` on ``[-20 sigma, 20 sigma)``."""
    sigma = math.sqrt(float(posterior.variances(nu)[0])) if posterior.is_gaussian else 1.0
    lo, hi = -20.0 * sigma, 20.0 * sigma
    return GridFunction.from_function(lambda t: penalty.value(t, nu), lo, hi, n_points)


def derive_prior_grid(penalty, posterior, band_limit=None, *, nu=None, tikhonov=False):
    """Grid samples of ``A_nu`` by band-limited FFT deconvolution.

    ``penalty`` is a :class:`GridFunction` of penalty values, or a
    :class:`PenaltySpec` (its own grid for ``GridSampled``, otherwise sampled
    on ``[-20 sigma, 20 sigma)`` with 4096 points).  ``band_limit`` defaults to
    ``min(4/sigma, Nyquist/4)``.
    """
    if not posterior.is_gaussian:
        raise ConfigurationError("the grid path needs a Gaussian posterior")
    s2 = posterior.variances(nu)
    if posterior.dim != 1 and not np.all(s2 == s2[0]):
        raise UnsupportedPenaltyError("the grid path handles one coordinate at a time")
    if isinstance(penalty, PenaltySpec):
        if penalty.dim != 1 and penalty.kind in ("GroupLasso", "ReversedGroupLasso"):
            raise UnsupportedPenaltyError("non-separable penalties need an N-dimensional deconvolution")
        grid = penalty.grid_for(nu) if penalty.kind == "GridSampled" else default_penalty_grid(
            PenaltySpec(penalty.kind, penalty.lam, 1, penalty.poly_coeffs, penalty.grid,
                        penalty.nu_dependence), posterior, nu)
    else:
        grid = penalty
    if np.iscomplexobj(grid.values):
        raise InvalidParameterError("a grid-sampled penalty must be real")
    g = gaussian_deconvolve(grid, float(s2[0]), band_limit, tikhonov=tikhonov)
    coordinate_entropy = 0.5 * math.log(2.0 * math.pi * math.e * float(s2[0]))
    return grid.with_values(-coordinate_entropy - g)


def normalize_prior(a):
    """Turn a log-density ``A`` into the prior ``exp(A) / kappa``.

    Gaussian-shaped polynomials are normalised in closed form, other
    polynomials by adaptive quadrature, grids by the trapezoid rule.
    """
    if isinstance(a, LogDensityPoly):
        if not a.integrable:
            raise NonNormalizablePriorError(
                "exp(A) is not integrable: each coordinate needs even degree >= 2 "
                "with a negative leading coefficient"
            )
        rows = a.trimmed_rows()
        if all(len(r) == 3 for r in rows):
            var = np.array([-0.5 / r[2] for r in rows])
            mean = np.array([r[1] for r in rows]) * var
            log_kappa = a.entropy_const + sum(
                r[0] + m * m / (2.0 * v) + 0.5 * math.log(2.0 * math.pi * v)
                for r, m, v in zip(rows, mean, var)
            )
            return Gaussian(mean, var, a.dim, kappa=_checked_exp(log_kappa))
        width = max(len(r) for r in rows)
        padded = np.array([np.pad(r, (0, width - len(r))) for r in rows])
        prior = LogPoly(padded, a.entropy_const)
        _checked_exp(math.log(prior.kappa) if prior.kappa > 0 else -math.inf)
        return prior
    if isinstance(a, GridFunction):
        if np.iscomplexobj(a.values):
            raise InvalidParameterError("a log-density must be real")
        if not _grid_probe_integrable(a.values, a.x):
            raise NonNormalizablePriorError("exp(A) does not decay towards the grid ends")
        kappa = grid_integral(a)
        if not (1e-300 < kappa < math.inf):
            raise NonNormalizablePriorError(f"normalisation constant {kappa} is out of range")
        return GridDensity(a, kappa)
    raise InvalidParameterError(f"cannot normalise {type(a).__name__}")


def _checked_exp(log_kappa):
    if not math.isfinite(log_kappa) or log_kappa < math.log(1e-300) or log_kappa > 709.0:
        raise NonNormalizablePriorError(f"normalisation constant exp({log_kappa}) is out of range")
    return math.exp(log_kappa)


def derive_prior_dirac(penalty):
    """Prior for Dirac posteriors: ``A = -r`` and ``alpha = exp(-r) / kappa``.

    The entropy of the Dirac is left out of ``A`` (it only shifts ``kappa``'s
    partner constant in the KL), so ``kappa = int exp(-r)``.
    """
    lam, dim = penalty.lam, penalty.dim
    if penalty.kind == "L2":
        return Gaussian(0.0, 1.0 / (2.0 * lam), dim)
    if penalty.kind == "L1":
        return Laplace(lam, dim)
    if penalty.kind in ("GroupLasso", "ReversedGroupLasso"):
        return ExpNorm(lam, dim)
    if penalty.kind == "EvenPolynomial":
        poly = penalty.ascending_coeffs()
        return normalize_prior(LogDensityPoly(np.array([[-c for c in poly]]), 0.0, dim))
    if dim != 1:
        raise UnsupportedPenaltyError("grid-sampled Dirac priors are one-dimensional")
    grid = penalty.grid_for()
    return normalize_prior(grid.with_values(-np.asarray(grid.values)))


@dataclass
class ConditionAReport:
    """Outcome of the nu-independence and integrability check on ``A_nu``.

    ``max_deviation`` is the largest ``|A_nu1(theta) - A_nu2(theta)|`` on the
    probe grid, constants included; ``shape_deviation`` is the same after
    removing each pair's best constant offset.
    """

    independent_of_nu: bool
    max_deviation: float
    integrable: bool
    tested_nus: list
    method: str = "symbolic"
    tolerance: float = SYMBOLIC_TOLERANCE
    shape_deviation: float = 0.0
    log_densities: list = field(default_factory=list, repr=False)

    @property
    def holds(self):
        return self.independent_of_nu and self.integrable

    def to_json(self):
        return {
            "independent_of_nu": self.independent_of_nu,
            "max_deviation": self.max_deviation,
            "shape_deviation": self.shape_deviation,
            "integrable": self.integrable,
            "holds": self.holds,
            "tested_nus": [np.asarray(v).tolist() for v in self.tested_nus],
            "method": self.method,
            "tolerance": self.tolerance,
        }


def _derive_any(penalty, posterior, nu, band_limit):
    if posterior.kind == "Dirac":
        prior_log = derive_prior_dirac(penalty)
        return "dirac", prior_log
    if penalty.is_polynomial:
        return "symbolic", derive_prior_symbolic(penalty, posterior, nu)
    return "grid", derive_prior_grid(penalty, posterior, band_limit, nu=nu)


def check_condition_A(penalty, posterior, nu_samples: Sequence = (), *, probe=None,
                      tolerance=None, band_limit=None):
    """Derive ``A_nu`` for every ``nu`` and test independence and integrability."""
    nus = list(nu_samples) if posterior.kind == "GaussianFreeVar" else []
    if not nus:
        nus = [None]
    derived = []
    method = None
    for nu in nus:
        try:
            method, a = _derive_any(penalty, posterior, nu, band_limit)
        except PenaltyPriorError as exc:
            raise DerivationError(f"derivation failed for nu={nu!r}: {exc}", nu=nu) from exc
        derived.append(a)

    if method == "dirac":
        return ConditionAReport(True, 0.0, True, nus, "dirac", 0.0, 0.0, derived)

    if tolerance is None:
        tolerance = SYMBOLIC_TOLERANCE if method == "symbolic" else GRID_TOLERANCE
    if method == "symbolic":
        if probe is None:
            probe = np.linspace(-5.0, 5.0, 201)
        probe = np.asarray(probe, dtype=float)
        if posterior.dim > 1 and (probe.ndim == 1):
            probe = np.repeat(probe[:, None], posterior.dim, axis=1)
        values = [a(probe) for a in derived]
        integrable = all(a.integrable for a in derived)
    else:
        first = derived[0]
        mask = first.central(0.5) if probe is None else None
        x = first.x[mask] if probe is None else np.asarray(probe, dtype=float)
        values = [CubicSpline(a.x, a.values)(x) for a in derived]
        integrable = all(_grid_probe_integrable(a.values, a.x) for a in derived)

    max_dev = 0.0
    shape_dev = 0.0
    for u, v in itertools.combinations(values, 2):
        diff = u - v
        max_dev = max(max_dev, float(np.max(np.abs(diff))))
        shape_dev = max(shape_dev, float(np.max(np.abs(diff - diff.mean()))))
    return ConditionAReport(max_dev <= tolerance, max_dev, integrable, nus, method,
                            tolerance, shape_dev, derived)


def derive_prior(penalty, posterior, nu_samples=(), **kwargs):
    """Derive, check and normalise in one call.  Returns ``(prior, report)``.

    The prior is normalised from the first ``A_nu`` even when the check
    fails, so callers can inspect it.
    """
    report = check_condition_A(penalty, posterior, nu_samples, **kwargs)
    first = report.log_densities[0]
    prior = first if isinstance(first, PriorDensity) else normalize_prior(first)
    return prior, report
