"""Uniform sampling grids, discrete Fourier transforms and Gaussian deconvolution.

The continuous Fourier convention used throughout is

    (F g)(xi) = int g(x) exp(-i xi x) dx,

so a centred Gaussian density of variance ``var`` has transform
``exp(-var * xi**2 / 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import erfc

from .errors import (
    ConfigurationError,
    IllConditionedDeconvolutionError,
    InvalidParameterError,
    NumericalFailureError,
)

UNDERFLOW_THRESHOLD = 1e-300
TIKHONOV_FLOOR = 1e-12
MAX_INTERNAL_POINTS = 1 << 24


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of a function on the endpoint-exclusive grid ``lo + k*(hi-lo)/n``."""

    lo: float
    hi: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if not np.iscomplexobj(values):
            values = values.astype(float)
        object.__setattr__(self, "values", values)
        if not self.hi > self.lo:
            raise InvalidParameterError(f"grid needs hi > lo, got [{self.lo}, {self.hi})")
        n = values.shape[0] if values.ndim == 1 else -1
        if n < 8 or n & (n - 1):
            raise InvalidParameterError(
                f"grid needs a 1-D power-of-two number of points >= 8, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidParameterError("grid values must be finite")

    @classmethod
    def from_function(cls, fn, lo, hi, n_points):
        x = lo + (hi - lo) * np.arange(n_points) / n_points
        return cls(lo, hi, fn(x))

    @property
    def n_points(self):
        return self.values.shape[0]

    @property
    def dx(self):
        return (self.hi - self.lo) / self.n_points

    @property
    def x(self):
        return self.lo + self.dx * np.arange(self.n_points)

    @property
    def nyquist(self):
        """Largest angular frequency the grid resolves."""
        return math.pi / self.dx

    def with_values(self, values):
        return GridFunction(self.lo, self.hi, values)

    def central(self, fraction=0.5):
        """Boolean mask of the points inside the central ``fraction`` of the domain."""
        mid = 0.5 * (self.lo + self.hi)
        half = 0.5 * fraction * (self.hi - self.lo)
        return np.abs(self.x - mid) <= half

    def to_json(self):
        if np.iscomplexobj(self.values):
            vals = [[float(v.real), float(v.imag)] for v in self.values]
        else:
            vals = [float(v) for v in self.values]
        return {"lo": float(self.lo), "hi": float(self.hi), "n_points": self.n_points, "values": vals}

    @classmethod
    def from_json(cls, record):
        vals = record["values"]
        if vals and isinstance(vals[0], (list, tuple)):
            arr = np.array([complex(re, im) for re, im in vals])
        else:
            arr = np.asarray(vals, dtype=float)
        if "n_points" in record and int(record["n_points"]) != arr.shape[0]:
            raise InvalidParameterError(
                f"n_points={record['n_points']} disagrees with {arr.shape[0]} values"
            )
        return cls(float(record["lo"]), float(record["hi"]), arr)


def angular_frequencies(n_points, dx):
    return 2.0 * math.pi * np.fft.fftfreq(n_points, d=dx)


def forward_dft(grid):
    """Riemann-sum approximation of the continuous transform, in FFT order.

    Returns ``(xi, spectrum)``.
    """
    xi = angular_frequencies(grid.n_points, grid.dx)
    spectrum = grid.dx * np.exp(-1j * xi * grid.lo) * np.fft.fft(grid.values)
    return xi, spectrum


def inverse_dft(spectrum, lo, hi):
    """Exact inverse of :func:`forward_dft` for a grid on ``[lo, hi)``."""
    n = len(spectrum)
    dx = (hi - lo) / n
    xi = angular_frequencies(n, dx)
    return GridFunction(lo, hi, np.fft.ifft(np.asarray(spectrum) * np.exp(1j * xi * lo)) / dx)


def default_band_limit(var, dx):
    return min(4.0 / math.sqrt(var), (math.pi / dx) / 4.0)


def _extend_and_clamp(values, x, dx, taper_offset, taper_width, degree):
    """Continue ``values`` past both grid ends and clamp them smoothly to a constant.

    Outside the grid the samples are continued with low-degree polynomial fits
    of the outermost sixteenth of the data.  An erf taper centred
    ``taper_offset`` beyond each end then blends the continuation into a
    common constant, which makes the padded signal smooth and periodic.
    Returns the padded abscissae, padded samples and the index of the first
    original sample.
    """
    n = len(values)
    k = max(n // 16, degree + 2)
    left = Polynomial.fit(x[:k], values[:k], degree)
    right = Polynomial.fit(x[-k:], values[-k:], degree)

    pad = taper_offset + 7.0 * taper_width
    m = 1 << int(math.ceil(math.log2(n + 2 * math.ceil(pad / dx))))
    if m > MAX_INTERNAL_POINTS:
        raise ConfigurationError(
            f"band limit too small for this grid: padding needs {m} points"
        )
    start = (m - n) // 2
    xp = x[0] + dx * (np.arange(m) - start)
    padded = np.empty(m)
    padded[start:start + n] = values
    padded[:start] = left(xp[:start])
    padded[start + n:] = right(xp[start + n:])

    t_left = x[0] - taper_offset
    t_right = x[-1] + taper_offset
    level = max(left(t_left), right(t_right))
    window = 0.25 * erfc((t_left - xp) / taper_width) * erfc((xp - t_right) / taper_width)
    return xp, window * padded + (1.0 - window) * level, start


def gaussian_deconvolve(grid, var, band_limit=None, *, tikhonov=False, accuracy=36.0, degree=4):
    """Solve ``g * N(0, var) = f`` for ``g`` on the grid of ``f``.

    The transform of ``f`` is divided by ``exp(-var xi^2 / 2)`` and every
    frequency with ``|xi| > band_limit`` is discarded before transforming
    back.  Because ``f`` is generally not periodic on the grid, it is first
    continued smoothly beyond the grid and clamped (see
    :func:`_extend_and_clamp`); the taper width is chosen so the clamp's
    spectrum has decayed by ``exp(-accuracy)`` at the band edge after
    amplification.

    ``tikhonov=True`` replaces the plain division by
    ``H / (H^2 + TIKHONOV_FLOOR^2)`` instead of raising when ``H`` underflows.
    """
    if var <= 0 or not math.isfinite(var):
        raise InvalidParameterError(f"kernel variance must be positive, got {var}")
    values = np.asarray(grid.values)
    if np.iscomplexobj(values):
        raise InvalidParameterError("deconvolution expects real samples")
    dx = grid.dx
    if band_limit is None:
        band_limit = default_band_limit(var, dx)
    if band_limit <= 0:
        raise ConfigurationError(f"band limit must be positive, got {band_limit}")
    if band_limit > grid.nyquist:
        raise ConfigurationError(
            f"band limit {band_limit:g} exceeds the grid's Nyquist frequency {grid.nyquist:g}"
        )
    log_peak = var * band_limit ** 2 / 2.0
    if not tikhonov and log_peak > -math.log(UNDERFLOW_THRESHOLD):
        bad = math.sqrt(-2.0 * math.log(UNDERFLOW_THRESHOLD) / var)
        raise IllConditionedDeconvolutionError(
            f"kernel transform drops below {UNDERFLOW_THRESHOLD:g} at |xi| = {bad:g} "
            f"inside the band |xi| <= {band_limit:g}",
            frequency=bad,
        )

    if not np.any(values):
        return np.zeros_like(values)

    spread = 4.0 * accuracy / band_limit ** 2
    width = math.sqrt(spread + 2.0 * var)
    xp, padded, start = _extend_and_clamp(values, grid.x, dx, 3.0 * width, width, degree)
    m = len(padded)
    xi = angular_frequencies(m, dx)
    spectrum = np.fft.fft(padded)
    out = np.zeros_like(spectrum)
    band = np.abs(xi) <= band_limit
    if tikhonov:
        h = np.exp(-var * xi[band] ** 2 / 2.0)
        out[band] = spectrum[band] * h / (h * h + TIKHONOV_FLOOR ** 2)
    else:
        out[band] = spectrum[band] * np.exp(var * xi[band] ** 2 / 2.0)
    result = np.fft.ifft(out)[start:start + len(values)]

    scale = max(1.0, float(np.abs(result.real).max()))
    residue = float(np.abs(result.imag).max())
    if residue > 1e-10 * scale:
        raise NumericalFailureError(
            f"deconvolution left an imaginary residue of {residue:.3g}", location="ifft"
        )
    return result.real
