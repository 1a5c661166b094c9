"""Probability densities used as priors and as members of posterior families.

Every density stores ``kappa``, the normalisation constant of the
unnormalised log-density ``A`` it was built from: ``density = exp(A) / kappa``.
When a density is constructed directly, ``A`` is taken to be the log-density
up to its natural normaliser (e.g. ``-theta^2 / (2 var)`` for a Gaussian).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.special import gammaln

from .errors import InvalidParameterError, NonNormalizablePriorError
from .grid import GridFunction


def _as_points(theta, dim):
    """Return ``theta`` as an array whose last axis has length ``dim``."""
    arr = np.asarray(theta, dtype=float)
    if dim == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
        arr = arr[..., None]
    if arr.shape[-1] != dim:
        raise InvalidParameterError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr


def _squeeze(samples, dim):
    return samples[:, 0] if dim == 1 else samples


def log_sphere_surface(n):
    """Log of the surface area of the unit (n-1)-sphere in R^n."""
    return math.log(2.0) + 0.5 * n * math.log(math.pi) - gammaln(0.5 * n)


class PriorDensity:
    form = "abstract"
    dim = 1
    kappa = 1.0

    def logpdf(self, theta):
        raise NotImplementedError

    def pdf(self, theta):
        return np.exp(self.logpdf(theta))

    def log_unnormalized(self, theta):
        """The log-density ``A`` whose integral is ``kappa``."""
        return self.logpdf(theta) + math.log(self.kappa)

    def sample(self, rng, size):
        raise NotImplementedError

    def second_moment(self):
        """``E ||theta||^2`` summed over all coordinates."""
        raise NotImplementedError

    def mean(self):
        return np.zeros(self.dim)

    def to_json(self):
        raise NotImplementedError

    def __repr__(self):
        fields = ", ".join(f"{k}={v!r}" for k, v in self.to_json().items() if k != "form")
        return f"{self.form}({fields})"


class Gaussian(PriorDensity):
    """Product of independent normals; ``mean`` and ``var`` may be per-coordinate."""

    form = "Gaussian"

    def __init__(self, mean=0.0, var=1.0, dim=1, kappa=None):
        self.dim = int(dim)
        self.mu = np.broadcast_to(np.asarray(mean, dtype=float), (self.dim,)).copy()
        self.var = np.broadcast_to(np.asarray(var, dtype=float), (self.dim,)).copy()
        if not np.all(np.isfinite(self.var)) or np.any(self.var <= 0):
            raise InvalidParameterError(f"Gaussian variance must be positive and finite, got {var}")
        self._log_norm = 0.5 * float(np.sum(np.log(2.0 * math.pi * self.var)))
        self.kappa = math.exp(self._log_norm) if kappa is None else float(kappa)

    def logpdf(self, theta):
        t = _as_points(theta, self.dim)
        return -0.5 * np.sum((t - self.mu) ** 2 / self.var, axis=-1) - self._log_norm

    def sample(self, rng, size):
        z = rng.standard_normal((size, self.dim))
        return _squeeze(self.mu + np.sqrt(self.var) * z, self.dim)

    def second_moment(self):
        return float(np.sum(self.var + self.mu ** 2))

    def mean(self):
        return self.mu.copy()

    def entropy(self):
        return 0.5 * float(np.sum(np.log(2.0 * math.pi * math.e * self.var)))

    def to_json(self):
        def plain(a):
            return float(a[0]) if np.all(a == a[0]) else [float(v) for v in a]

        return {"form": self.form, "mean": plain(self.mu), "var": plain(self.var),
                "dim": self.dim, "kappa": self.kappa}


class Laplace(PriorDensity):
    """Product of independent Laplace densities ``(rate/2) exp(-rate |theta|)``."""

    form = "Laplace"

    def __init__(self, rate, dim=1, kappa=None):
        if not rate > 0 or not math.isfinite(rate):
            raise InvalidParameterError(f"Laplace rate must be positive, got {rate}")
        self.rate = float(rate)
        self.dim = int(dim)
        self.kappa = (2.0 / self.rate) ** self.dim if kappa is None else float(kappa)

    def logpdf(self, theta):
        t = _as_points(theta, self.dim)
        return self.dim * math.log(self.rate / 2.0) - self.rate * np.sum(np.abs(t), axis=-1)

    def sample(self, rng, size):
        return _squeeze(rng.laplace(0.0, 1.0 / self.rate, (size, self.dim)), self.dim)

    def second_moment(self):
        return self.dim * 2.0 / self.rate ** 2

    def to_json(self):
        return {"form": self.form, "rate": self.rate, "dim": self.dim, "kappa": self.kappa}


class ExpNorm(PriorDensity):
    """Density proportional to ``exp(-rate ||theta||_2)`` on R^dim.

    Normalised by ``rate^P / (S_{P-1} Gamma(P))``; the radius is
    Gamma(shape P, rate) distributed and the direction uniform.
    """

    form = "ExpNorm"

    def __init__(self, rate, dim, kappa=None):
        if not rate > 0 or not math.isfinite(rate):
            raise InvalidParameterError(f"ExpNorm rate must be positive, got {rate}")
        self.rate = float(rate)
        self.dim = int(dim)
        self.log_normalizer = (self.dim * math.log(self.rate)
                               - log_sphere_surface(self.dim) - gammaln(self.dim))
        self.kappa = math.exp(-self.log_normalizer) if kappa is None else float(kappa)

    def logpdf(self, theta):
        t = _as_points(theta, self.dim)
        return self.log_normalizer - self.rate * np.linalg.norm(t, axis=-1)

    def sample(self, rng, size):
        radius = rng.gamma(self.dim, 1.0 / self.rate, size)
        direction = rng.standard_normal((size, self.dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        return _squeeze(radius[:, None] * direction, self.dim)

    def second_moment(self):
        return self.dim * (self.dim + 1) / self.rate ** 2

    def to_json(self):
        return {"form": self.form, "rate": self.rate, "dim": self.dim, "kappa": self.kappa}


def _polyval(coeffs, t):
    return np.polynomial.polynomial.polyval(t, coeffs)


def _poly_support(coeffs, drop=60.0):
    """Interval outside which ``exp(poly)`` is below ``exp(-drop)`` times its peak."""
    probe = np.linspace(-1.0, 1.0, 2001)
    radius = 1.0
    for _ in range(60):
        vals = _polyval(coeffs, probe * radius)
        peak = vals.max()
        if vals[0] < peak - drop and vals[-1] < peak - drop:
            return -radius, radius, peak
        radius *= 2.0
    raise NonNormalizablePriorError("exp(A) does not decay within |theta| <= 2^60")


class LogPoly(PriorDensity):
    """Density ``exp(A) / kappa`` with ``A(theta) = const + sum_i p_i(theta_i)``.

    ``coeffs`` holds one row of ascending polynomial coefficients per
    coordinate.
    """

    form = "LogPoly"

    def __init__(self, coeffs, entropy_const=0.0, kappa=None):
        rows = np.atleast_2d(np.asarray(coeffs, dtype=float))
        self.coeffs = rows
        self.dim = rows.shape[0]
        self.entropy_const = float(entropy_const)
        self._log_kappas = [self._log_integral(row) for row in rows]
        log_kappa = self.entropy_const + sum(self._log_kappas)
        self.kappa = math.exp(log_kappa) if kappa is None else float(kappa)
        self._log_kappa = log_kappa if kappa is None else math.log(kappa)

    @staticmethod
    def _log_integral(row):
        lo, hi, peak = _poly_support(row)
        val, _ = integrate.quad(lambda t: math.exp(_polyval(row, t) - peak), lo, hi,
                                limit=400, epsabs=0.0, epsrel=1e-13)
        if not val > 0 or not math.isfinite(val):
            raise NonNormalizablePriorError("integral of exp(A) is not a positive finite number")
        return peak + math.log(val)

    def log_unnormalized(self, theta):
        t = _as_points(theta, self.dim)
        total = np.full(t.shape[:-1], self.entropy_const)
        for i, row in enumerate(self.coeffs):
            total = total + _polyval(row, t[..., i])
        return total

    def logpdf(self, theta):
        return self.log_unnormalized(theta) - self._log_kappa

    def _coordinate_moment(self, i, power):
        row = self.coeffs[i]
        lo, hi, peak = _poly_support(row)
        val, _ = integrate.quad(lambda t: t ** power * math.exp(_polyval(row, t) - peak),
                                lo, hi, limit=400, epsabs=0.0, epsrel=1e-12)
        return val / math.exp(self._log_kappas[i] - peak)

    def mean(self):
        return np.array([self._coordinate_moment(i, 1) for i in range(self.dim)])

    def second_moment(self):
        return float(sum(self._coordinate_moment(i, 2) for i in range(self.dim)))

    def sample(self, rng, size):
        out = np.empty((size, self.dim))
        for i, row in enumerate(self.coeffs):
            lo, hi, peak = _poly_support(row)
            t = np.linspace(lo, hi, 1 << 16)
            cdf = integrate.cumulative_trapezoid(np.exp(_polyval(row, t) - peak), t, initial=0.0)
            out[:, i] = np.interp(rng.random(size) * cdf[-1], cdf, t)
        return _squeeze(out, self.dim)

    def to_json(self):
        return {"form": self.form, "coeffs": self.coeffs.tolist(),
                "entropy_const": self.entropy_const, "dim": self.dim, "kappa": self.kappa}


class GridDensity(PriorDensity):
    """One-dimensional density ``exp(A) / kappa`` with ``A`` sampled on a grid.

    Between samples ``A`` is a not-a-knot cubic spline; outside the grid the
    end polynomials of the spline are extended.
    """

    form = "Grid"
    dim = 1

    def __init__(self, log_values, kappa=None):
        if np.iscomplexobj(log_values.values):
            raise InvalidParameterError("grid log-density must be real")
        self.grid = log_values
        x = log_values.x
        self._spline = CubicSpline(x, log_values.values, extrapolate=True)
        if kappa is None:
            kappa = grid_integral(log_values)
        self.kappa = float(kappa)
        self._log_kappa = math.log(self.kappa)

    def log_unnormalized(self, theta):
        t = _as_points(theta, 1)[..., 0]
        return self._spline(t)

    def logpdf(self, theta):
        return self.log_unnormalized(theta) - self._log_kappa

    def _weights(self):
        return np.exp(self.grid.values - self._log_kappa)

    def second_moment(self):
        x = self.grid.x
        return float(integrate.trapezoid(x * x * self._weights(), x))

    def mean(self):
        x = self.grid.x
        return np.array([integrate.trapezoid(x * self._weights(), x)])

    def sample(self, rng, size):
        x = self.grid.x
        cdf = integrate.cumulative_trapezoid(self._weights(), x, initial=0.0)
        return np.interp(rng.random(size) * cdf[-1], cdf, x)

    def to_json(self):
        return {"form": self.form, "log_density": self.grid.to_json(), "dim": 1, "kappa": self.kappa}


def grid_integral(log_values):
    """Integral of ``exp(A)`` over the grid by the trapezoid rule with a halving check.

    The full-resolution estimate is accepted when it agrees with the
    half-resolution one to 1e-9 relative; otherwise Simpson's rule is used.
    """
    a = np.asarray(log_values.values, dtype=float)
    shift = float(a.max())
    w = np.exp(a - shift)
    dx = log_values.dx
    fine = integrate.trapezoid(w, dx=dx)
    coarse = integrate.trapezoid(w[:-1:2], dx=2 * dx) + integrate.trapezoid(w[-2:], dx=dx)
    if abs(fine - coarse) > 1e-9 * abs(fine):
        fine = integrate.simpson(w, dx=dx)
    if not fine > 0 or not math.isfinite(fine):
        raise NonNormalizablePriorError("integral of exp(A) over the grid is not positive")
    return math.exp(shift) * fine


def density_from_json(record):
    form = record["form"]
    kappa = record.get("kappa")
    if form == "Gaussian":
        return Gaussian(record.get("mean", 0.0), record["var"], record.get("dim", 1), kappa)
    if form == "Laplace":
        return Laplace(record["rate"], record.get("dim", 1), kappa)
    if form == "ExpNorm":
        return ExpNorm(record["rate"], record["dim"], kappa)
    if form == "LogPoly":
        return LogPoly(record["coeffs"], record.get("entropy_const", 0.0), kappa)
    if form == "Grid":
        return GridDensity(GridFunction.from_json(record["log_density"]), kappa)
    raise InvalidParameterError(f"unknown density form {form!r}")
