"""Per-layer penalty factors from Glorot-style moment conditions on the prior.

A prior on the incoming weights of a neuron with fan-in ``P`` satisfies
(Prior) when each weight has mean 0 and second moment ``1/P``, and
(Prior') when the squared norm of a group of weights has expectation equal
to the group size divided by ``P``.  For a single neuron's incoming weights
the group size is ``P`` and the target is 1; for the reversed group-Lasso a
group collects the ``n_l`` outgoing weights of one input, giving ``n_l / P``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import bisect

from .densities import ExpNorm, Gaussian, Laplace
from .errors import InvalidParameterError, NumericalFailureError, UnsupportedPenaltyError

KINDS = ("L2", "L1", "GroupLasso", "ReversedGroupLasso", "SparseGroupLasso")
SCHEMES = ("Bayesian", "Usual")

# Observed ratio between the theoretical global factor 1/n and the best swept one.
OBSERVED_OVERESTIMATE_RANGE = (10.0, 100.0)


def _check_shape(P_l, n_l=None):
    if int(P_l) != P_l or P_l < 1:
        raise InvalidParameterError(f"fan-in must be a positive integer, got {P_l}")
    if n_l is not None and (int(n_l) != n_l or n_l < 1):
        raise InvalidParameterError(f"layer width must be a positive integer, got {n_l}")


def lambda_bayesian(kind, P_l, n_l=None):
    """Per-layer factor making the equivalent prior satisfy (Prior) / (Prior')."""
    _check_shape(P_l, n_l)
    if kind == "L2":
        return P_l / 2.0
    if kind == "L1":
        return math.sqrt(2.0 * P_l)
    if kind == "GroupLasso":
        return math.sqrt(P_l * (P_l + 1.0))
    if kind == "ReversedGroupLasso":
        if n_l is None:
            raise InvalidParameterError("the reversed group-Lasso factor needs n_l")
        return math.sqrt(P_l * (n_l + 1.0))
    raise UnsupportedPenaltyError(f"no Bayesian factor for penalty kind {kind!r}")


def lambda_usual(kind, P_l, n_l=None):
    """The conventional per-layer factor."""
    _check_shape(P_l, n_l)
    if kind in ("L2", "L1"):
        return 1.0
    if kind == "GroupLasso":
        return math.sqrt(P_l)
    if kind == "ReversedGroupLasso":
        if n_l is None:
            raise InvalidParameterError("the reversed group-Lasso factor needs n_l")
        return math.sqrt(n_l)
    raise UnsupportedPenaltyError(f"no usual factor for penalty kind {kind!r}")


@dataclass(frozen=True)
class LayerShape:
    index: int
    n_l: int
    P_l: int

    def __post_init__(self):
        _check_shape(self.P_l, self.n_l)

    def to_json(self):
        return {"l": self.index, "n_l": self.n_l, "P_l": self.P_l}


@dataclass(frozen=True)
class ArchitectureSpec:
    layers: tuple
    n: int
    B: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise InvalidParameterError("an architecture needs at least one layer")
        if self.n < 1 or self.B < 1 or self.B > self.n:
            raise InvalidParameterError(f"need 1 <= B <= n, got B={self.B}, n={self.n}")

    @classmethod
    def from_widths(cls, widths, n, B):
        """Dense network with ``widths = (inputs, hidden..., outputs)``."""
        layers = [LayerShape(i + 1, widths[i + 1], widths[i]) for i in range(len(widths) - 1)]
        return cls(tuple(layers), n, B)

    def to_json(self):
        return {"layers": [layer.to_json() for layer in self.layers], "n": self.n, "B": self.B}

    @classmethod
    def from_json(cls, record):
        try:
            layers = [LayerShape(int(r["l"]), int(r["n_l"]), int(r["P_l"])) for r in record["layers"]]
            return cls(tuple(layers), int(record["n"]), int(record["B"]))
        except (KeyError, TypeError) as exc:
            raise InvalidParameterError(f"malformed architecture record: {exc}") from exc


@dataclass
class LambdaPlan:
    """Per-layer factors ``lambda_l`` with a global factor and minibatch scale.

    The whole-network penalty is ``global_lambda * sum_l lambda_l r(w_l)``;
    each minibatch of size ``b`` carries the fraction ``b / n`` of it.  For the
    sparse group-Lasso ``per_layer`` holds the group factors and
    ``per_layer_l1`` the L1 factors, mixed as ``(1 - gamma) group + gamma L1``.
    """

    per_layer: dict
    global_lambda: float
    per_batch_scale: float
    scheme: str
    penalty_kind: str
    mixing_gamma: Optional[float] = None
    per_layer_l1: Optional[dict] = None
    layers: tuple = ()
    n: int = 1
    annotations: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(not v > 0 for v in self.per_layer.values()):
            raise InvalidParameterError("per-layer factors must be positive")
        if (self.mixing_gamma is not None) != (self.penalty_kind == "SparseGroupLasso"):
            raise InvalidParameterError("mixing_gamma is used by the sparse group-Lasso only")

    def batch_scale(self, batch_size):
        """Share of the full-dataset penalty carried by a batch of ``batch_size`` samples."""
        return batch_size / self.n

    def scaled(self, global_lambda):
        return LambdaPlan(dict(self.per_layer), global_lambda, self.per_batch_scale, self.scheme,
                          self.penalty_kind, self.mixing_gamma,
                          None if self.per_layer_l1 is None else dict(self.per_layer_l1),
                          self.layers, self.n, dict(self.annotations))

    def to_json(self):
        record = {
            "per_layer": {str(k): v for k, v in sorted(self.per_layer.items())},
            "global_lambda": self.global_lambda,
            "per_batch_scale": self.per_batch_scale,
            "scheme": self.scheme,
            "penalty_kind": self.penalty_kind,
        }
        if self.mixing_gamma is not None:
            record["mixing_gamma"] = self.mixing_gamma
            record["per_layer_l1"] = {str(k): v for k, v in sorted(self.per_layer_l1.items())}
        if self.annotations:
            record["annotations"] = self.annotations
        return record

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["l", "n_l", "P_l", "lambda_l"]
        if self.per_layer_l1 is not None:
            header.append("lambda_l1")
        writer.writerow(header)
        for layer in self.layers:
            row = [layer.index, layer.n_l, layer.P_l, repr(self.per_layer[layer.index])]
            if self.per_layer_l1 is not None:
                row.append(repr(self.per_layer_l1[layer.index]))
            writer.writerow(row)
        return buf.getvalue()


def plan(arch, kind, scheme, mixing_gamma=None, global_lambda=None, annotate=False):
    """Build a :class:`LambdaPlan`.

    The Bayesian scheme uses ``global_lambda = 1/n``; the usual scheme needs
    the caller's value (it is a sweep parameter).
    """
    if scheme not in SCHEMES:
        raise InvalidParameterError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if kind not in KINDS:
        raise UnsupportedPenaltyError(f"unknown penalty kind {kind!r}")
    factor = lambda_bayesian if scheme == "Bayesian" else lambda_usual
    if scheme == "Bayesian":
        global_lambda = 1.0 / arch.n if global_lambda is None else global_lambda
    elif global_lambda is None:
        raise InvalidParameterError("the usual scheme needs a global lambda")
    if not global_lambda >= 0 or not math.isfinite(global_lambda):
        raise InvalidParameterError(f"global lambda must be non-negative, got {global_lambda}")

    l1 = None
    if kind == "SparseGroupLasso":
        if mixing_gamma is None or not 0.0 <= mixing_gamma <= 1.0:
            raise InvalidParameterError(f"mixing_gamma must lie in [0, 1], got {mixing_gamma}")
        per_layer = {s.index: factor("GroupLasso", s.P_l, s.n_l) for s in arch.layers}
        l1 = {s.index: factor("L1", s.P_l, s.n_l) for s in arch.layers}
    else:
        if mixing_gamma is not None:
            raise InvalidParameterError("mixing_gamma is used by the sparse group-Lasso only")
        per_layer = {s.index: factor(kind, s.P_l, s.n_l) for s in arch.layers}
    notes = {}
    if annotate and scheme == "Bayesian":
        notes["observed_overestimate_range"] = list(OBSERVED_OVERESTIMATE_RANGE)
    return LambdaPlan(per_layer, float(global_lambda), arch.B / arch.n, scheme, kind,
                      mixing_gamma, l1, arch.layers, arch.n, notes)


def default_sweep(scheme, n=None):
    """Global-factor sweep in half-decades."""
    if scheme == "Bayesian":
        if n is None:
            raise InvalidParameterError("the Bayesian sweep needs the dataset size")
        return [10.0 ** float(e) / n for e in np.arange(-2.5, 0.51, 0.5)]
    return [10.0 ** float(e) for e in np.arange(-6.0, -2.49, 0.5)]


@dataclass(frozen=True)
class PriorConditionTarget:
    """``Prior``: per-weight second moment ``1/P_l``.  ``PriorPrime``: group ``E||w||^2 = group_dim/P_l``."""

    mode: str
    P_l: int
    n_l: int = 1
    group_dim: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("Prior", "PriorPrime"):
            raise InvalidParameterError(f"unknown condition {self.mode!r}")
        _check_shape(self.P_l, self.n_l)

    def target_moment(self, dim):
        if self.mode == "Prior":
            return dim / self.P_l
        group = self.group_dim if self.group_dim is not None else dim
        return group / self.P_l


@dataclass
class PriorConditionReport:
    mean_err: float
    moment_err: float
    passed: bool
    method: str
    target_moment: float
    moment: float
    standard_error: float = 0.0
    mc_moment: Optional[float] = None

    def to_json(self):
        return {
            "mean_err": self.mean_err,
            "moment_err": self.moment_err,
            "pass": self.passed,
            "method": self.method,
            "target_moment": self.target_moment,
            "moment": self.moment,
            "standard_error": self.standard_error,
            "mc_moment": self.mc_moment,
        }


_MC_CHUNK_VALUES = 1 << 22


def check_prior_condition(prior, target, mc_samples=10 ** 6, seed=0, tolerance=1e-12):
    """Compare the prior's moments with the target.

    Gaussian and Laplace priors use closed forms and must match to
    ``tolerance`` (relative).  ExpNorm priors report the closed form but pass
    on a Monte-Carlo estimate being within three standard errors of the target.
    """
    target_m = target.target_moment(prior.dim)
    if isinstance(prior, (Gaussian, Laplace)):
        moment = prior.second_moment()
        mean_err = float(np.max(np.abs(prior.mean())))
        err = abs(moment - target_m)
        ok = err <= tolerance * target_m and mean_err <= tolerance
        return PriorConditionReport(mean_err, err, ok, "closed_form", target_m, moment)
    if isinstance(prior, ExpNorm):
        rng = np.random.default_rng(seed)
        # Chunked so memory stays bounded in high dimension.
        chunk = max(1, _MC_CHUNK_VALUES // prior.dim)
        sq_parts, total, total_sq = [], np.zeros(prior.dim), np.zeros(prior.dim)
        for start in range(0, mc_samples, chunk):
            draws = prior.sample(rng, min(chunk, mc_samples - start)).reshape(-1, prior.dim)
            sq_parts.append(np.sum(draws * draws, axis=1))
            total += draws.sum(axis=0)
            total_sq += (draws * draws).sum(axis=0)
        sq = np.concatenate(sq_parts)
        mc = float(sq.mean())
        se = float(sq.std(ddof=1) / math.sqrt(mc_samples))
        means = total / mc_samples
        coord_var = (total_sq - mc_samples * means ** 2) / (mc_samples - 1)
        mean_se = float(np.sqrt(np.max(coord_var))) / math.sqrt(mc_samples)
        mean_err = float(np.max(np.abs(means)))
        closed = prior.second_moment()
        ok = abs(mc - target_m) <= 3.0 * se and mean_err <= 3.0 * mean_se * math.sqrt(prior.dim)
        return PriorConditionReport(mean_err, abs(closed - target_m), ok, "monte_carlo",
                                    target_m, closed, se, mc)
    raise UnsupportedPenaltyError(f"no moment check for {type(prior).__name__} priors")


def _family_moment(family, lam, dim):
    """``E ||theta||^2`` of the Dirac prior of each family, in closed form."""
    if family == "Gaussian":
        return dim / (2.0 * lam)
    if family == "Laplace":
        return 2.0 * dim / lam ** 2
    if family == "ExpNorm":
        return dim * (dim + 1.0) / lam ** 2
    raise UnsupportedPenaltyError(f"unknown prior family {family!r}")


_FAMILY_DIM = {"Gaussian": "one", "Laplace": "one", "ExpNorm": "group"}


def solve_lambda_from_condition(prior_family, target, dim=None):
    """Solve for the penalty factor whose Dirac prior meets ``target`` by bisection.

    Per-weight families (Gaussian, Laplace) use one coordinate; the ExpNorm
    family uses ``dim`` coordinates (default ``P_l``).
    """
    if prior_family not in _FAMILY_DIM:
        raise UnsupportedPenaltyError(f"unknown prior family {prior_family!r}")
    if dim is None:
        dim = 1 if _FAMILY_DIM[prior_family] == "one" else (target.group_dim or target.P_l)
    goal = target.target_moment(dim)

    def excess(log_lam):
        return math.log(_family_moment(prior_family, math.exp(log_lam), dim)) - math.log(goal)

    lo, hi = -50.0, 50.0
    if excess(lo) * excess(hi) > 0:
        raise NumericalFailureError("could not bracket the penalty factor", location=(lo, hi))
    log_lam = bisect(excess, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    return math.exp(log_lam)
