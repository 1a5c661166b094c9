"""Bayesian group-Lasso factors on a small MLP, against an unpenalised baseline."""

import numpy as np

from penalty_prior.lambda_planner import ArchitectureSpec, plan
from penalty_prior.pruning_lab import MLPModel, TrainConfig, make_synthetic_dataset, train_two_phase

data = make_synthetic_dataset(1000, 20, 4, noise=4.0, seed=42)
widths = [20, 64, 32, 4]
arch = ArchitectureSpec.from_widths(widths, len(data.train), 10)

bayes = plan(arch, "GroupLasso", "Bayesian")
print("per-layer factors:", {k: round(v, 2) for k, v in bayes.per_layer.items()})
print(f"global factor 1/n = {bayes.global_lambda:.3g}")

for name, p in (("group-Lasso", bayes), ("baseline", plan(arch, "L2", "Usual", global_lambda=0.0))):
    model = MLPModel.initialize(widths, np.random.default_rng(42))
    rep = train_two_phase(model, data, p, TrainConfig(seed=42, batch_size=10), learning_rate=0.01)
    print(f"{name:>11}: hidden {rep.initial_hidden} -> {rep.final_hidden}, "
          f"test accuracy {rep.final_test_acc:.4f}, {rep.final_param_count} parameters")
