"""Finite-difference verification of the full-model gradients.

Runs in float64 regardless of the global precision switch. Random
configurations whose ReLU pre-activations sit within a few finite-
difference steps of zero are re-drawn, since the kink makes the numeric
derivative meaningless there.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .relation import FrameTuple, MultiScaleTRN, multiscale_backward, multiscale_forward
from .sampling import enumerate_tuples


def _random_case(rng: np.random.Generator, feature_dim=3, hidden_dim=4, num_classes=2, num_frames=3):
    model = MultiScaleTRN.create(feature_dim, num_classes, num_frames, hidden_dim, rng)
    feats = rng.normal(size=(num_frames, feature_dim))
    tuples = {
        d: [FrameTuple(c, feats[list(c)]) for c in enumerate_tuples(num_frames, d)]
        for d in model.scales
    }
    upstream = rng.normal(size=num_classes)
    return model, tuples, upstream


def _min_preact_magnitude(model: MultiScaleTRN, tuples) -> float:
    smallest = np.inf
    for d in model.scales:
        rm = model.modules[d]
        x = np.stack([t.features.reshape(-1) for t in tuples[d]])
        for layer in rm.g.layers:
            z = x @ layer.weights.T + layer.bias
            smallest = min(smallest, float(np.abs(z).min()))
            x = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return smallest


def _objective(model, tuples, upstream) -> float:
    return float(upstream @ multiscale_forward(model, tuples).logits)


def max_relative_error(
    num_configs: int = 20, seed: int = 0, step: float = 1e-5
) -> float:
    """Worst relative error between analytic and central-difference
    gradients over ``num_configs`` random tiny-model configurations."""
    previous = nn.get_default_dtype()
    nn.set_default_dtype(np.float64)
    try:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(num_configs):
            model, tuples, upstream = _random_case(rng)
            while _min_preact_magnitude(model, tuples) < 10 * step:
                model, tuples, upstream = _random_case(rng)
            analytic = multiscale_backward(model, tuples, upstream).flat()
            params = model.parameters()
            for p, g in zip(params, analytic):
                flat_p = p.reshape(-1)
                flat_g = g.reshape(-1)
                for i in range(flat_p.size):
                    original = flat_p[i]
                    flat_p[i] = original + step
                    f_plus = _objective(model, tuples, upstream)
                    flat_p[i] = original - step
                    f_minus = _objective(model, tuples, upstream)
                    flat_p[i] = original
                    numeric = (f_plus - f_minus) / (2 * step)
                    denom = max(abs(numeric), abs(flat_g[i]), 1e-6)
                    worst = max(worst, abs(numeric - flat_g[i]) / denom)
        return worst
    finally:
        nn.set_default_dtype(previous)
