"""Command-line front end: ``penalty-prior <command> [flags]``.

Exit codes: 0 success, 1 a verification failed, 2 invalid input,
3 numerical failure.  Reports are JSON with sorted keys, written to
``--out`` or standard output.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import errors
from .convergence_rates import ToyModel, corollary_rate, verify_witness
from .densities import ExpNorm, Gaussian, GridDensity, Laplace, PriorDensity, density_from_json
from .divergence import (
    QuadratureConfig,
    gaussian_renyi,
    renyi_divergence,
    renyi_prior_candidate_log,
    verify_correspondence,
)
from .grid import GridFunction
from .lambda_planner import ArchitectureSpec, plan
from .prior_engine import (
    PenaltySpec,
    PosteriorFamily,
    check_condition_A,
    normalize_prior,
)
from .pruning_lab import MLPModel, TrainConfig, lambda_sweep, load_csv_dataset, make_synthetic_dataset
from .pruning_lab.training import train_two_phase

OK, VERIFICATION_FAILED, INVALID_INPUT, NUMERICAL_FAILURE = 0, 1, 2, 3

PENALTY_NAMES = {
    "l2": "L2",
    "l1": "L1",
    "group-lasso": "GroupLasso",
    "reversed-group-lasso": "ReversedGroupLasso",
    "sparse-group-lasso": "SparseGroupLasso",
    "poly": "EvenPolynomial",
    "grid": "GridSampled",
}
NAMED_PENALTIES = ("l2", "l1", "group-lasso", "reversed-group-lasso")

INPUT_ERRORS = (errors.InvalidParameterError, errors.ConfigurationError,
                errors.UnsupportedPenaltyError, errors.InvalidWitnessError,
                errors.HypothesisViolationError, errors.DomainError)


@dataclass
class CommandResult:
    exit_code: int
    report: Optional[dict] = None
    summary: str = ""
    report_path: Optional[str] = None


class InputError(Exception):
    pass


def _floats(text, name):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"{name}: expected comma-separated numbers, got {text!r}") from exc


def _read_json(path, name):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{name}: cannot read JSON from {path!r}: {exc}") from exc


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _penalty_from_args(args, allow=None):
    name = args.penalty
    if allow is not None and name not in allow:
        raise InputError(f"--penalty must be one of {sorted(allow)}, got {name!r}")
    if name in NAMED_PENALTIES and args.lam is None:
        raise InputError("--lambda is required for this penalty")
    lam = 1.0 if args.lam is None else args.lam
    kind = PENALTY_NAMES[name]
    if kind == "EvenPolynomial":
        if not args.coeffs:
            raise InputError("--coeffs is required for --penalty poly")
        return PenaltySpec(kind, lam, args.dim, tuple(_floats(args.coeffs, "--coeffs")))
    if kind == "GridSampled":
        if not args.grid:
            raise InputError("--grid is required for --penalty grid")
        return PenaltySpec(kind, lam, 1, grid=GridFunction.from_json(_read_json(args.grid, "--grid")))
    return PenaltySpec(kind, lam, args.dim)


def _posterior_from_args(args):
    if args.posterior == "dirac":
        return PosteriorFamily("Dirac", args.dim, epsilon_machine=args.epsilon), []
    if not args.sigma2:
        raise InputError("--sigma2 is required for a Gaussian posterior")
    values = _floats(args.sigma2, "--sigma2")
    if len(values) == 1:
        return PosteriorFamily("GaussianFixedVar", args.dim, values[0], args.epsilon), []
    return PosteriorFamily("GaussianFreeVar", args.dim, values[0], args.epsilon), values


def _prior_from_text(text, dim):
    """``gaussian:VAR`` or ``gaussian:MEAN,VAR``, ``laplace:RATE``, ``expnorm:RATE`` or a JSON file."""
    if ":" not in text:
        return density_from_json(_read_json(text, "--prior"))
    form, _, rest = text.partition(":")
    vals = _floats(rest, "--prior")
    form = form.lower()
    if form == "gaussian" and len(vals) in (1, 2):
        return Gaussian(vals[0] if len(vals) == 2 else 0.0, vals[-1], dim)
    if form == "laplace" and len(vals) == 1:
        return Laplace(vals[0], dim)
    if form == "expnorm" and len(vals) == 1:
        return ExpNorm(vals[0], dim)
    raise InputError(f"cannot parse --prior {text!r}")


def cmd_derive_prior(args):
    penalty = _penalty_from_args(args, allow=set(PENALTY_NAMES) - {"sparse-group-lasso"})
    posterior, nus = _posterior_from_args(args)
    report = check_condition_A(penalty, posterior, nus, band_limit=args.band_limit,
                               tolerance=args.tolerance)
    first = report.log_densities[0]
    out = {"condition_A": report.to_json(), "penalty": penalty.to_json(),
           "posterior": posterior.to_json()}
    if isinstance(first, PriorDensity):
        prior = first
    else:
        out["log_density"] = first.to_json()
        try:
            prior = normalize_prior(first)
        except errors.NonNormalizablePriorError as exc:
            out["prior"] = None
            out["normalization_error"] = str(exc)
            return CommandResult(VERIFICATION_FAILED, out, f"prior is not normalisable: {exc}")
    out["prior"] = prior.to_json()
    code = OK if report.holds else VERIFICATION_FAILED
    summary = (f"prior {prior.form}; condition (A) {'holds' if report.holds else 'fails'} "
               f"(max deviation {report.max_deviation:.3g})")
    return CommandResult(code, out, summary)


def cmd_verify(args):
    penalty = _penalty_from_args(args, allow=set(PENALTY_NAMES) - {"sparse-group-lasso"})
    posterior, nus = _posterior_from_args(args)
    prior = _prior_from_text(args.prior, args.dim)
    lo, hi, count = _floats(args.mu_grid, "--mu-grid")
    mu_grid = np.linspace(lo, hi, int(count))
    cfg = QuadratureConfig(args.nodes, args.mc_samples, args.seed)
    rep = verify_correspondence(penalty, posterior, prior, mu_grid, nus or [None], cfg)
    tol = 1e-6 if args.tolerance is None else args.tolerance
    ok = rep.passes(tol)
    out = {"kl_report": rep.to_json(), "tolerance": tol, "passed": ok, "prior": prior.to_json()}
    return CommandResult(OK if ok else VERIFICATION_FAILED, out,
                         f"max residual {rep.max_residual:.3g} (tolerance {tol:g})")


def cmd_plan_lambda(args):
    arch = ArchitectureSpec.from_json(_read_json(args.arch, "--arch"))
    kind = PENALTY_NAMES.get(args.penalty)
    if kind is None or kind in ("EvenPolynomial", "GridSampled"):
        raise InputError(f"--penalty {args.penalty!r} has no per-layer plan")
    lam_plan = plan(arch, kind, args.scheme.capitalize(), args.mixing_gamma, args.lam,
                    annotate=args.annotate)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(lam_plan.to_csv())
    return CommandResult(OK, lam_plan.to_json(), f"{len(arch.layers)} layers planned")


def _dataset_from_args(args):
    if args.data == "synthetic":
        return make_synthetic_dataset(args.samples, args.features, args.classes, args.noise, args.seed)
    return load_csv_dataset(args.data, args.seed)


def cmd_train_prune(args):
    ds = _dataset_from_args(args)
    n_train = len(ds.train)
    if args.arch:
        record = _read_json(args.arch, "--arch")
        base = ArchitectureSpec.from_json(record)
        widths = [base.layers[0].P_l] + [layer.n_l for layer in base.layers]
        batch = base.B
    else:
        widths = [ds.n_features] + [int(v) for v in _floats(args.hidden, "--hidden")] + [ds.n_classes]
        batch = args.batch
    if widths[0] != ds.n_features or widths[-1] != ds.n_classes:
        raise InputError(f"architecture {widths} does not fit {ds.n_features} features / {ds.n_classes} classes")
    arch = ArchitectureSpec.from_widths(widths, n_train, min(batch, n_train))
    kind = PENALTY_NAMES.get(args.penalty)
    if kind is None or kind in ("EvenPolynomial", "GridSampled"):
        raise InputError(f"--penalty {args.penalty!r} cannot be trained")
    scheme = args.scheme.capitalize()
    lrs = tuple(_floats(args.lr, "--lr"))
    cfg = TrainConfig(learning_rates=lrs, patience=args.patience, seed=args.seed,
                      max_epochs=args.epochs, prune_threshold=args.threshold)
    if args.sweep:
        sweep = None if args.lam == "auto" else _floats(args.lam, "--lambda")
        points = lambda_sweep(ds, arch, kind, scheme, sweep, cfg, args.mixing_gamma)
        out = {"sweep": [p.to_json() for p in points]}
        return CommandResult(OK, out, f"{len(points)} sweep points")
    if args.lam == "auto":
        if scheme != "Bayesian":
            raise InputError("--lambda auto needs --scheme bayesian (the usual scheme is swept)")
        global_lambda = None
    else:
        try:
            global_lambda = float(args.lam)
        except ValueError as exc:
            raise InputError(f"--lambda must be a number or 'auto', got {args.lam!r}") from exc
    lam_plan = plan(arch, kind, scheme, args.mixing_gamma, global_lambda)
    model = MLPModel.initialize(widths, np.random.default_rng(args.seed), cfg.activation)
    report = train_two_phase(model, ds, lam_plan, cfg)
    return CommandResult(OK, report.to_json(),
                         f"test accuracy {report.final_test_acc:.4f}, {report.final_param_count} parameters")


def cmd_rate_bound(args):
    if not 0.0 < args.gamma < 1.0:
        raise InputError(f"--gamma must lie in (0, 1), got {args.gamma}")
    model = ToyModel(tuple(_floats(args.w_star, "--w-star")), args.noise_var, args.radius)
    n_list = [int(v) for v in _floats(args.n_list, "--n-list")]
    witness = corollary_rate(model, args.gamma, extra_n=n_list, n_max=max(n_list + [10]))
    rep = verify_witness(model, witness, n_list, args.mc_samples, args.seed)
    table = [{"n": c.n, "bound": c.bound_value, "R_n_estimate": c.R_n_estimate,
              "conditions_hold": c.conditions_hold} for c in rep.checks]
    out = {"witness": witness.to_json(), "table": table, "details": rep.to_json()}
    return CommandResult(OK if rep.passed else VERIFICATION_FAILED, out,
                         f"witness {'passes' if rep.passed else 'fails'} at {len(n_list)} sample sizes")


def cmd_renyi(args):
    if args.gamma <= 0 or args.gamma == 1:
        raise InputError("--gamma must be positive and different from 1")
    posterior = PosteriorFamily("GaussianFixedVar", 1, args.sigma2)
    s = math.sqrt(args.sigma2)
    lo, hi = -args.half_width * s, args.half_width * s
    x = GridFunction(lo, hi, np.zeros(args.points)).x
    if args.target_var is not None:
        r = np.array([gaussian_renyi(args.gamma, m, args.sigma2, 0.0, args.target_var) for m in x])
        penalty = PenaltySpec("GridSampled", 1.0, 1, grid=GridFunction(lo, hi, r + args.K))
    else:
        penalty = _penalty_from_args(args, allow={"l2", "poly", "grid"})
        if penalty.kind != "GridSampled":
            penalty = PenaltySpec("GridSampled", 1.0, 1, grid=GridFunction(lo, hi, penalty.value(x)))
    log_alpha = renyi_prior_candidate_log(penalty, posterior, args.gamma, args.K, penalty.grid)
    candidate = GridDensity(log_alpha, kappa=1.0)
    probe = np.linspace(-args.probe, args.probe, 11)
    residuals = []
    for m in probe:
        d = renyi_divergence(Gaussian(m, args.sigma2), candidate, args.gamma)
        residuals.append(abs(d - (float(penalty.value(m)) - args.K)))
    tol = 1e-3 if args.tolerance is None else args.tolerance
    ok = max(residuals) <= tol
    mass = float(np.sum(np.exp(log_alpha.values)) * log_alpha.dx)
    out = {"candidate_log_density": log_alpha.to_json(), "gamma": args.gamma, "K": args.K,
           "probe_mu": probe.tolist(), "residuals": residuals, "max_residual": max(residuals),
           "candidate_mass": mass, "tolerance": tol, "passed": ok}
    return CommandResult(OK if ok else VERIFICATION_FAILED, out,
                         f"Renyi candidate residual {max(residuals):.3g}")


def _add_common(p):
    p.add_argument("--out", default=argparse.SUPPRESS, help="write the JSON report here (default: stdout)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    p.add_argument("--tolerance", type=float, default=argparse.SUPPRESS,
                   help="pass/fail tolerance (command-specific default)")


def _add_penalty(p, choices):
    p.add_argument("--penalty", required=True, choices=choices, help="penalty family")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="penalty factor (required for l2, l1 and the group penalties)")
    p.add_argument("--dim", type=int, default=1, help="dimension of the parameter block")
    p.add_argument("--coeffs", default=None, help="even-polynomial coefficients c0,c1,... of mu^(2k)")
    p.add_argument("--grid", default=None, help="JSON file with a grid-sampled penalty {lo, hi, n_points, values}")


def _add_posterior(p):
    p.add_argument("--posterior", required=True, choices=("dirac", "gaussian"), help="posterior family")
    p.add_argument("--sigma2", default=None,
                   help="posterior variance; several comma-separated values test nu-independence")
    p.add_argument("--epsilon", type=float, default=2.0 ** -52, help="width convention for a Dirac")


def build_parser():
    parser = argparse.ArgumentParser(prog="penalty-prior", description=__doc__.splitlines()[0])
    _add_common(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derive-prior", help="derive, check and normalise the prior of a penalty")
    _add_common(p)
    _add_penalty(p, sorted(set(PENALTY_NAMES) - {"sparse-group-lasso"}))
    _add_posterior(p)
    p.add_argument("--band-limit", type=float, default=None, help="frequency cut-off for grid penalties")
    p.set_defaults(func=cmd_derive_prior)

    p = sub.add_parser("verify", help="check r = KL(beta || alpha) + K over a grid of means")
    _add_common(p)
    _add_penalty(p, sorted(set(PENALTY_NAMES) - {"sparse-group-lasso"}))
    _add_posterior(p)
    p.add_argument("--prior", required=True,
                   help="gaussian:VAR, gaussian:MEAN,VAR, laplace:RATE, expnorm:RATE or a JSON file")
    p.add_argument("--mu-grid", default="-2,2,21", help="lo,hi,count of the mean grid")
    p.add_argument("--nodes", type=int, default=64, help="Gauss-Hermite nodes")
    p.add_argument("--mc-samples", type=int, default=10 ** 6, help="Monte-Carlo samples")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plan-lambda", help="per-layer penalty factors for an architecture")
    _add_common(p)
    p.add_argument("--arch", required=True, help="architecture JSON {layers: [{l, n_l, P_l}], n, B}")
    p.add_argument("--penalty", required=True,
                   choices=("l2", "l1", "group-lasso", "reversed-group-lasso", "sparse-group-lasso"))
    p.add_argument("--scheme", required=True, choices=("bayesian", "usual"))
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="global factor (required for the usual scheme; default 1/n for bayesian)")
    p.add_argument("--mixing-gamma", type=float, default=None, help="L1 share of the sparse group-Lasso")
    p.add_argument("--csv", default=None, help="also write the per-layer factors as CSV")
    p.add_argument("--annotate", action="store_true", help="attach the observed over-estimation range")
    p.set_defaults(func=cmd_plan_lambda)

    p = sub.add_parser("train-prune", help="two-phase penalised training with pruning")
    _add_common(p)
    p.add_argument("--arch", default=None, help="architecture JSON (widths and minibatch size)")
    p.add_argument("--penalty", required=True,
                   choices=("l2", "l1", "group-lasso", "reversed-group-lasso", "sparse-group-lasso"))
    p.add_argument("--scheme", default="bayesian", choices=("bayesian", "usual"))
    p.add_argument("--lambda", dest="lam", default="auto",
                   help="global factor, 'auto' (1/n), or a comma list with --sweep")
    p.add_argument("--mixing-gamma", type=float, default=None, help="L1 share of the sparse group-Lasso")
    p.add_argument("--data", default="synthetic", help="'synthetic' or a CSV file (last column = label)")
    p.add_argument("--samples", type=int, default=1000, help="synthetic sample count")
    p.add_argument("--features", type=int, default=20, help="synthetic feature count")
    p.add_argument("--classes", type=int, default=4, help="synthetic class count")
    p.add_argument("--noise", type=float, default=4.0, help="synthetic cluster noise")
    p.add_argument("--hidden", default="64,32", help="hidden widths when --arch is absent")
    p.add_argument("--batch", type=int, default=10, help="minibatch size when --arch is absent")
    p.add_argument("--lr", default="0.01", help="comma-separated learning rates")
    p.add_argument("--patience", type=int, default=50, help="stagnation window in epochs")
    p.add_argument("--epochs", type=int, default=2000, help="epoch cap per phase")
    p.add_argument("--threshold", type=float, default=1e-3, help="pruning threshold on group norms")
    p.add_argument("--sweep", action="store_true", help="run a lambda sweep instead of one training")
    p.set_defaults(func=cmd_train_prune)

    p = sub.add_parser("rate-bound", help="check the convergence-rate witness on the toy model")
    _add_common(p)
    p.add_argument("--gamma", type=float, required=True, help="rate exponent in (0, 1)")
    p.add_argument("--n-list", default="100,1000,10000", help="comma-separated sample sizes")
    p.add_argument("--w-star", default="0", help="true parameter, comma-separated")
    p.add_argument("--noise-var", type=float, default=1.0, help="observation noise variance")
    p.add_argument("--radius", type=float, default=1.0, help="Lipschitz ball radius r")
    p.add_argument("--mc-samples", type=int, default=10 ** 5, help="Monte-Carlo samples per n")
    p.set_defaults(func=cmd_rate_bound)

    p = sub.add_parser("renyi", help="candidate prior for a Renyi-divergence penalty")
    _add_common(p)
    p.add_argument("--gamma", type=float, required=True, help="Renyi order, positive and not 1")
    p.add_argument("--sigma2", type=float, default=1.0, help="posterior variance")
    p.add_argument("--K", type=float, default=0.0, help="additive constant")
    p.add_argument("--target-var", type=float, default=None,
                   help="build the penalty as D_gamma(N(mu, sigma2) || N(0, target_var))")
    p.add_argument("--penalty", default="poly", choices=("l2", "poly", "grid"), help="penalty family")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="penalty factor")
    p.add_argument("--dim", type=int, default=1, help="parameter dimension (only 1 is supported)")
    p.add_argument("--coeffs", default=None, help="even-polynomial coefficients c0,c1,...")
    p.add_argument("--grid", default=None, help="JSON file with a grid-sampled penalty")
    p.add_argument("--half-width", type=float, default=20.0, help="grid half-width in posterior sds")
    p.add_argument("--points", type=int, default=4096, help="grid points (power of two)")
    p.add_argument("--probe", type=float, default=3.0, help="verify on means in [-probe, probe]")
    p.set_defaults(func=cmd_renyi)
    return parser


def _classify(exc):
    if isinstance(exc, errors.DerivationError) and exc.__cause__ is not None:
        return _classify(exc.__cause__)
    if isinstance(exc, (InputError,) + INPUT_ERRORS):
        return INVALID_INPUT
    if isinstance(exc, errors.PenaltyPriorError):
        return NUMERICAL_FAILURE
    if isinstance(exc, (ValueError, KeyError, TypeError)):
        return INVALID_INPUT
    return NUMERICAL_FAILURE


def run(argv=None):
    """Parse ``argv`` and execute; returns a :class:`CommandResult` without exiting."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return CommandResult(int(exc.code or 0), None, "argument error" if exc.code else "help")
    for name, default in (("out", None), ("seed", 0), ("tolerance", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        result = args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        code = _classify(exc)
        result = CommandResult(code, {"error": type(exc).__name__, "message": str(exc)}, str(exc))
    if result.report is not None:
        text = json.dumps(result.report, sort_keys=True, indent=2, default=_jsonable) + "\n"
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
            result.report_path = args.out
        else:
            sys.stdout.write(text)
    print(result.summary, file=sys.stderr)
    return result


def main(argv=None):
    return run(argv).exit_code


if __name__ == "__main__":
    sys.exit(main())
