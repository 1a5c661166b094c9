"""Two-phase training: penalised SGD with pruning, then unpenalised fine-tuning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidParameterError, TrainingDivergedError
from ..lambda_planner import default_sweep, plan as make_plan
from .mlp import MLPModel, forward_backward, penalty_prox, penalty_value_and_subgradient, prune_step


@dataclass(frozen=True)
class TrainConfig:
    learning_rates: tuple = (1e-2, 1e-3, 1e-4)
    patience: int = 50
    lr_decay_factor: float = 10.0
    max_decays: int = 2
    prune_threshold: float = 1e-3
    seed: int = 0
    max_epochs: int = 2000
    batch_size: Optional[int] = None
    momentum: float = 0.0
    activation: str = "ReLU"

    def __post_init__(self):
        if self.patience < 1:
            raise InvalidParameterError("patience must be at least one epoch")
        if not self.prune_threshold > 0:
            raise InvalidParameterError("the pruning threshold must be positive")
        if not self.learning_rates or any(not lr >= 0 for lr in self.learning_rates):
            raise InvalidParameterError("learning rates must be non-negative")
        if self.lr_decay_factor <= 1 or self.max_decays < 0 or self.max_epochs < 1:
            raise InvalidParameterError("invalid decay or epoch settings")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidParameterError("momentum must lie in [0, 1)")


@dataclass
class PruneReport:
    phase_log: list
    final_test_acc: float
    final_param_count: int
    plan_used: dict
    initial_hidden: list = field(default_factory=list)
    final_hidden: list = field(default_factory=list)
    learning_rate: float = 0.0
    seed: int = 0
    final_val_acc: float = 0.0

    @property
    def hidden_pruned_fraction(self):
        start = sum(self.initial_hidden)
        return 1.0 - sum(self.final_hidden) / start if start else 0.0

    def to_json(self):
        return {
            "phase_log": self.phase_log,
            "final_test_acc": self.final_test_acc,
            "final_val_acc": self.final_val_acc,
            "final_param_count": self.final_param_count,
            "initial_hidden": self.initial_hidden,
            "final_hidden": self.final_hidden,
            "hidden_pruned_fraction": self.hidden_pruned_fraction,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "plan_used": self.plan_used,
        }


def _batch_size(plan, cfg, n_train):
    if cfg.batch_size is not None:
        return min(cfg.batch_size, n_train)
    return max(1, min(n_train, int(round(plan.per_batch_scale * plan.n))))


def _run_epoch(model, x, y, plan, lr, batch, rng, velocity, momentum, penalised):
    """One pass of minibatch SGD.

    Each step is a gradient step on the mean batch loss followed by the
    proximal step of the full objective's penalty ``global * sum_l lambda_l r_l``
    (the batch carries ``b/n`` of it, scaled back up by ``n/b``).  Returns the
    summed batch penalties and the mean data loss.
    """
    n = len(y)
    order = rng.permutation(n)
    losses, penalty_sum = 0.0, 0.0
    for start in range(0, n, batch):
        idx = order[start:start + batch]
        loss, grads = forward_backward(model, x[idx], y[idx])
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss {loss} at batch offset {start}")
        losses += loss * len(idx)
        if penalised:
            pen, _ = penalty_value_and_subgradient(model, plan, len(idx))
            penalty_sum += pen
        for l, (dw, db) in enumerate(grads):
            if momentum:
                velocity[l][0] *= momentum
                velocity[l][0] += dw
                velocity[l][1] *= momentum
                velocity[l][1] += db
                dw, db = velocity[l]
            model.weights[l] -= lr * dw
            model.biases[l] -= lr * db
        if penalised:
            penalty_prox(model, plan, lr)
        model.apply_masks()
    return penalty_sum, losses / n


def train_two_phase(model, dataset, plan, cfg, learning_rate=None):
    """Train ``model`` in place and return a :class:`PruneReport`.

    Phase 1 trains with the penalty and prunes after every epoch; it stops
    once neither the living-neuron count nor the best validation accuracy
    has improved for ``patience`` epochs (one shared window).  Phase 2 drops
    the penalty, divides the learning rate by ``lr_decay_factor`` after each
    ``patience``-epoch stagnation and stops at the stagnation following the
    last allowed decay, restoring the best-validation weights.
    """
    lr = cfg.learning_rates[0] if learning_rate is None else learning_rate
    rng = np.random.default_rng(cfg.seed)
    x_tr, y_tr = dataset.split("train")
    x_va, y_va = dataset.split("val")
    x_te, y_te = dataset.split("test")
    batch = _batch_size(plan, cfg, len(y_tr))
    velocity = [[np.zeros_like(w), np.zeros_like(b)] for w, b in zip(model.weights, model.biases)]
    log = []
    initial_hidden = model.hidden_alive_counts()

    best_acc, fewest = -1.0, sum(initial_hidden)
    last_gain = 0
    epoch = 0
    while epoch < cfg.max_epochs:
        epoch += 1
        penalty_sum, data_loss = _run_epoch(model, x_tr, y_tr, plan, lr, batch, rng, velocity,
                                            cfg.momentum, True)
        prune_step(model, plan.penalty_kind, cfg.prune_threshold)
        acc = model.accuracy(x_va, y_va)
        alive = model.hidden_alive_counts()
        log.append({"phase": 1, "epoch": epoch, "train_loss": data_loss + penalty_sum,
                    "val_acc": acc, "alive": alive, "lr": lr})
        if acc > best_acc or sum(alive) < fewest:
            last_gain = epoch
        best_acc = max(best_acc, acc)
        fewest = min(fewest, sum(alive))
        if epoch - last_gain >= cfg.patience:
            break

    best_acc, best_state = -1.0, model.copy()
    stagnant, decays = 0, 0
    phase2_epochs = 0
    while phase2_epochs < cfg.max_epochs:
        phase2_epochs += 1
        epoch += 1
        _, data_loss = _run_epoch(model, x_tr, y_tr, plan, lr, batch, rng, velocity,
                                  cfg.momentum, False)
        acc = model.accuracy(x_va, y_va)
        log.append({"phase": 2, "epoch": epoch, "train_loss": data_loss, "val_acc": acc,
                    "alive": model.hidden_alive_counts(), "lr": lr})
        if acc > best_acc:
            best_acc, best_state, stagnant = acc, model.copy(), 0
        else:
            stagnant += 1
        if stagnant >= cfg.patience:
            if decays >= cfg.max_decays:
                break
            decays += 1
            lr /= cfg.lr_decay_factor
            stagnant = 0

    model.weights, model.biases, model.alive = best_state.weights, best_state.biases, best_state.alive
    return PruneReport(
        phase_log=log,
        final_test_acc=model.accuracy(x_te, y_te),
        final_param_count=model.parameter_count(),
        plan_used=plan.to_json(),
        initial_hidden=initial_hidden,
        final_hidden=model.hidden_alive_counts(),
        learning_rate=cfg.learning_rates[0] if learning_rate is None else learning_rate,
        seed=cfg.seed,
        final_val_acc=best_acc,
    )


@dataclass
class SweepPoint:
    global_lambda: float
    learning_rate: float
    reports: list
    mean_test_acc: float
    mean_param_count: float

    def to_json(self):
        return {"global_lambda": self.global_lambda, "learning_rate": self.learning_rate,
                "mean_test_acc": self.mean_test_acc, "mean_param_count": self.mean_param_count,
                "runs": [r.to_json() for r in self.reports]}


def lambda_sweep(dataset, arch, kind, scheme, sweep=None, cfg=None, mixing_gamma=None,
                 extra_seeds=2):
    """For each global factor pick the best learning rate on validation, then average three seeds.

    The learning-rate search runs with ``cfg.seed``; the winner is rerun with
    ``extra_seeds`` further seeds.  Returns one :class:`SweepPoint` per factor.
    """
    cfg = cfg or TrainConfig()
    sweep = list(sweep) if sweep is not None else default_sweep(scheme, arch.n)
    if not sweep:
        raise InvalidParameterError("the sweep is empty")
    widths = [arch.layers[0].P_l] + [layer.n_l for layer in arch.layers]
    points = []
    for g in sweep:
        plan = make_plan(arch, kind, scheme, mixing_gamma=mixing_gamma, global_lambda=g)
        best = None
        for lr in cfg.learning_rates:
            model = MLPModel.initialize(widths, np.random.default_rng(cfg.seed), cfg.activation)
            report = train_two_phase(model, dataset, plan, cfg, learning_rate=lr)
            if best is None or report.final_val_acc > best.final_val_acc:
                best = report
        reports = [best]
        for k in range(1, extra_seeds + 1):
            seeded = TrainConfig(**{**cfg.__dict__, "seed": cfg.seed + k})
            model = MLPModel.initialize(widths, np.random.default_rng(seeded.seed), cfg.activation)
            reports.append(train_two_phase(model, dataset, plan, seeded, learning_rate=best.learning_rate))
        points.append(SweepPoint(
            g, best.learning_rate, reports,
            float(np.mean([r.final_test_acc for r in reports])),
            float(np.mean([r.final_param_count for r in reports])),
        ))
    return points
