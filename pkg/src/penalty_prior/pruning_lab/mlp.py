"""A small multilayer perceptron with hand-written backpropagation and neuron masks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidParameterError, UnsupportedPenaltyError

ACTIVATIONS = ("ReLU", "Tanh")


@dataclass
class MLPModel:
    """Dense layers ``h_l = act(W_l h_{l-1} + b_l)``; the last layer feeds a softmax.

    ``weights[l]`` has shape ``(n_l, P_l)``.  ``alive[l]`` masks the neurons of
    layer ``l``; a pruned neuron has a zero row, a zero bias and a zero column
    in the next layer, and never comes back.
    """

    weights: list
    biases: list
    activation: str = "ReLU"
    alive: list = field(default=None)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidParameterError(f"activation must be one of {ACTIVATIONS}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidParameterError("need one bias vector per weight matrix")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InvalidParameterError(f"layer {l}: bad shapes {w.shape}, {b.shape}")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise InvalidParameterError(f"layer {l} does not compose with layer {l - 1}")
        if self.alive is None:
            self.alive = [np.ones(w.shape[0], dtype=bool) for w in self.weights]

    @classmethod
    def initialize(cls, widths, rng, activation="ReLU"):
        """Weights ``N(0, 1/P_l)`` and zero biases for ``widths = (inputs, hidden..., classes)``."""
        weights = [rng.standard_normal((widths[i + 1], widths[i])) / math.sqrt(widths[i])
                   for i in range(len(widths) - 1)]
        biases = [np.zeros(widths[i + 1]) for i in range(len(widths) - 1)]
        return cls(weights, biases, activation)

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self):
        return MLPModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.activation, [m.copy() for m in self.alive])

    def hidden_alive_counts(self):
        return [int(m.sum()) for m in self.alive[:-1]]

    def parameter_count(self):
        """Weights and biases attached to living neurons."""
        inputs = self.weights[0].shape[1]
        total = 0
        for m in self.alive:
            total += int(m.sum()) * (inputs + 1)
            inputs = int(m.sum())
        return total

    def kill(self, layer, neuron):
        self.alive[layer][neuron] = False
        self.weights[layer][neuron, :] = 0.0
        self.biases[layer][neuron] = 0.0
        if layer + 1 < len(self.weights):
            self.weights[layer + 1][:, neuron] = 0.0

    def apply_masks(self):
        for l, m in enumerate(self.alive):
            dead = ~m
            self.weights[l][dead, :] = 0.0
            self.biases[l][dead] = 0.0
            if l + 1 < len(self.weights):
                self.weights[l + 1][:, dead] = 0.0

    def logits(self, x):
        h = np.asarray(x, dtype=float)
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            h = z if l == len(self.weights) - 1 else self._act(z)
        return h

    def predict(self, x):
        return np.argmax(self.logits(x), axis=1)

    def accuracy(self, x, y):
        return float(np.mean(self.predict(x) == y)) if len(y) else 0.0

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "ReLU" else np.tanh(z)

    def _act_grad(self, z, h):
        return (z > 0).astype(float) if self.activation == "ReLU" else 1.0 - h * h


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def forward_backward(model, x, y):
    """Mean cross-entropy over the batch and its exact gradients.

    Returns ``(loss, [(dW_l, db_l), ...])``; gradient entries of pruned
    neurons (rows, biases and the matching next-layer columns) are zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[1] != model.weights[0].shape[1] or len(y) != len(x):
        raise InvalidParameterError(f"batch shapes {x.shape}, {y.shape} do not match the model")
    n_out = model.weights[-1].shape[0]
    if y.size and (y.min() < 0 or y.max() >= n_out):
        raise InvalidParameterError("labels outside the model's class range")
    inputs, pre = [x], []
    h = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if l == last else model._act(z)
        inputs.append(h)
    logp = _log_softmax(h)
    m = len(y)
    loss = -float(np.mean(logp[np.arange(m), y]))

    delta = np.exp(logp)
    delta[np.arange(m), y] -= 1.0
    delta /= m
    grads = [None] * len(model.weights)
    for l in range(last, -1, -1):
        dw = delta.T @ inputs[l]
        db = delta.sum(axis=0)
        mask = model.alive[l]
        dw[~mask, :] = 0.0
        db[~mask] = 0.0
        if l > 0:
            dw[:, ~model.alive[l - 1]] = 0.0
            delta = (delta @ model.weights[l]) * model._act_grad(pre[l - 1], inputs[l])
        grads[l] = (dw, db)
    return loss, grads


def _l1(w):
    return float(np.abs(w).sum()), np.sign(w)


def _group_rows(w):
    norms = np.linalg.norm(w, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    grad = np.where(norms[:, None] > 0, w / safe[:, None], 0.0)
    return float(norms.sum()), grad


def _group_cols(w):
    value, grad = _group_rows(w.T)
    return value, grad.T


def _l2(w):
    return float(np.sum(w * w)), 2.0 * w


_BASE = {"L2": _l2, "L1": _l1, "GroupLasso": _group_rows, "ReversedGroupLasso": _group_cols}


def layer_penalty(kind, w, lam, lam_l1=None, mixing_gamma=None):
    """``lam * r(w)`` and a subgradient, with zero taken at every kink."""
    if kind == "SparseGroupLasso":
        gv, gg = _group_rows(w)
        lv, lg = _l1(w)
        return ((1.0 - mixing_gamma) * lam * gv + mixing_gamma * lam_l1 * lv,
                (1.0 - mixing_gamma) * lam * gg + mixing_gamma * lam_l1 * lg)
    if kind not in _BASE:
        raise UnsupportedPenaltyError(f"no penalty implementation for {kind!r}")
    value, grad = _BASE[kind](w)
    return lam * value, lam * grad


def penalty_value_and_subgradient(model, plan, batch_size=None):
    """Per-batch penalty ``global * scale * sum_l lambda_l r(W_l)`` and its subgradient.

    ``scale`` is ``batch_size / n`` (the plan's ``B / n`` when omitted), so one
    epoch of batches adds up to the full-dataset penalty.  Biases are not
    penalised.
    """
    scale = plan.per_batch_scale if batch_size is None else plan.batch_scale(batch_size)
    factor = plan.global_lambda * scale
    total = 0.0
    grads = []
    for l, w in enumerate(model.weights):
        idx = l + 1
        lam = plan.per_layer[idx]
        lam_l1 = plan.per_layer_l1[idx] if plan.per_layer_l1 is not None else None
        value, grad = layer_penalty(plan.penalty_kind, w, lam, lam_l1, plan.mixing_gamma)
        total += factor * value
        grads.append(factor * grad)
    return total, grads


def _shrink_rows(w, t):
    norms = np.linalg.norm(w, axis=1, keepdims=True)
    keep = np.where(norms > t, 1.0 - t / np.where(norms > 0, norms, 1.0), 0.0)
    return w * keep


def _soft(w, t):
    return np.sign(w) * np.maximum(np.abs(w) - t, 0.0)


def layer_prox(kind, w, t, t_l1=None, mixing_gamma=None):
    """Proximal map of ``t * r`` (``t = step * factor * lambda_l``)."""
    if kind == "L2":
        return w / (1.0 + 2.0 * t)
    if kind == "L1":
        return _soft(w, t)
    if kind == "GroupLasso":
        return _shrink_rows(w, t)
    if kind == "ReversedGroupLasso":
        return _shrink_rows(w.T, t).T
    if kind == "SparseGroupLasso":
        return _shrink_rows(_soft(w, mixing_gamma * t_l1), (1.0 - mixing_gamma) * t)
    raise UnsupportedPenaltyError(f"no penalty implementation for {kind!r}")


def penalty_prox(model, plan, step):
    """Apply the proximal step of the full-dataset penalty with step size ``step`` in place.

    Away from the kinks and for small steps this matches a subgradient step;
    unlike one, it lands exactly on zero instead of oscillating around it.
    """
    factor = step * plan.global_lambda
    for l, w in enumerate(model.weights):
        idx = l + 1
        lam_l1 = plan.per_layer_l1[idx] if plan.per_layer_l1 is not None else None
        t_l1 = None if lam_l1 is None else factor * lam_l1
        model.weights[l] = layer_prox(plan.penalty_kind, w, factor * plan.per_layer[idx], t_l1,
                                      plan.mixing_gamma)


def prune_step(model, kind, threshold=1e-3):
    """Prune hidden neurons whose weight group has norm ``<= threshold``.

    Incoming rows decide for every kind except the reversed group-Lasso,
    where neuron ``j`` of layer ``l-1`` goes when column ``j`` of ``W_l`` is
    small.  Output neurons and input features are never pruned.  Returns the
    number of neurons removed.
    """
    if not threshold > 0:
        raise InvalidParameterError("the pruning threshold must be positive")
    removed = 0
    for l in range(len(model.weights) - 1):
        if kind == "ReversedGroupLasso":
            norms = np.linalg.norm(model.weights[l + 1], axis=0)
        else:
            norms = np.linalg.norm(model.weights[l], axis=1)
        for i in np.flatnonzero((norms <= threshold) & model.alive[l]):
            model.kill(l, i)
            removed += 1
    return removed
