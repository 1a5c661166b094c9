"""Finite combinations of Dirac derivatives and their Fourier calculus.

A :class:`DiracSeries` represents ``sum_n c_n delta^(n)`` supported at the
origin.  This is exactly the class that the Fourier transforms of
polynomials live in:

    F[x^n] = 2 pi i^n delta^(n),        F^-1[delta^(n)](x) = (-i x)^n / (2 pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import NumericalFailureError


@dataclass
class DiracSeries:
    coeffs: dict = field(default_factory=dict)

    @property
    def order(self):
        return max(self.coeffs, default=-1)

    @classmethod
    def fourier_of_polynomial(cls, poly):
        """``F`` of the polynomial with ascending coefficients ``poly``."""
        return cls({n: 2.0 * math.pi * (1j ** n) * c for n, c in enumerate(poly) if c != 0})

    def multiply_smooth(self, derivatives):
        """Product with a smooth function ``h`` given by ``derivatives[j] = h^(j)(0)``.

        Leibniz' rule on the test-function side gives
        ``h delta^(n) = sum_j C(n, j) (-1)^j h^(j)(0) delta^(n-j)``.
        """
        out = {}
        for n, c in self.coeffs.items():
            if n >= len(derivatives):
                raise ValueError(f"need derivatives up to order {n}, got {len(derivatives) - 1}")
            for j in range(n + 1):
                d = derivatives[j]
                if d == 0:
                    continue
                term = c * math.comb(n, j) * (-1) ** j * d
                out[n - j] = out.get(n - j, 0.0) + term
        return DiracSeries({k: v for k, v in out.items() if v != 0})

    def inverse_fourier(self, imag_tol=1e-12):
        """Ascending real coefficients of the polynomial ``F^-1[self]``."""
        poly = [0j] * (self.order + 1)
        for n, c in self.coeffs.items():
            poly[n] += c * (-1j) ** n / (2.0 * math.pi)
        scale = max((abs(p) for p in poly), default=0.0)
        if any(abs(p.imag) > imag_tol * max(scale, 1.0) for p in poly):
            raise NumericalFailureError("inverse transform of the Dirac series is not real")
        return [p.real for p in poly]


def gaussian_reciprocal_derivatives(var, order):
    """Derivatives at 0 of ``exp(var xi^2 / 2)``, the reciprocal Gaussian transform."""
    out = [0.0] * (order + 1)
    for j in range(order // 2 + 1):
        out[2 * j] = math.factorial(2 * j) / math.factorial(j) * (var / 2.0) ** j
    return out


def deconvolve_polynomial(poly, var):
    """Polynomial ``g`` with ``g * N(0, var) = poly``, via the Dirac calculus."""
    series = DiracSeries.fourier_of_polynomial(poly)
    if not series.coeffs:
        return [0.0] * max(len(poly), 1)
    divided = series.multiply_smooth(gaussian_reciprocal_derivatives(var, series.order))
    out = divided.inverse_fourier()
    return out + [0.0] * (len(poly) - len(out))
