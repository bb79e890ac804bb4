"""Central-difference verification of analytic gradients.

The reported error is the largest elementwise deviation normalized by the
overall gradient magnitude (max of both gradients' infinity norms), which
stays well conditioned for float32 models where near-zero entries would make
a plain elementwise ratio blow up on finite-difference noise.
"""

from __future__ import annotations

import numpy as np


def finite_difference(f, x: np.ndarray, epsilon: float) -> np.ndarray:
    """Central differences of scalar f() with respect to x, perturbed in place."""
    flat = x.ravel()
    grad = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        plus = f()
        flat[i] = orig - epsilon
        minus = f()
        flat[i] = orig
        grad[i] = (plus - minus) / (2.0 * epsilon)
    return grad.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def check_layer(layer, x: np.ndarray, epsilon: float = 1e-3, seed: int = 0) -> float:
    """Max relative error of a layer's input and parameter gradients.

    Probes the output with a fixed random linear functional so the scalar
    objective exercises every output element.
    """
    rng = np.random.default_rng(seed)
    x = np.ascontiguousarray(x)
    probe = rng.standard_normal(layer.forward(x).shape).astype(x.dtype)

    def objective() -> float:
        return float(np.sum(layer.forward(x).astype(np.float64) * probe))

    layer.zero_grads()
    layer.forward(x)
    dx = layer.backward(probe.copy())
    worst = relative_error(dx, finite_difference(objective, x, epsilon))
    for name, param in layer.params.items():
        numeric = finite_difference(objective, param, epsilon)
        worst = max(worst, relative_error(layer.grads[name], numeric))
    return worst


def grad_check(model, batch, epsilon: float = 1e-3,
               lock_routing: bool = True) -> float:
    """Max relative error over all parameters of a training-protocol model.

    Intended for small models (< 10k parameters); the model's train_step
    must be deterministic for repeated calls on the same batch.

    Pooling argmax and ReLU supports are piecewise constant, so by default
    the probe locks them to the unperturbed forward pass: central differences
    then measure the smooth branch the analytic backward differentiated
    instead of straddling a routing flip.
    """
    params = model.parameters()
    total = sum(p.size for p in params.values())
    if total >= 10_000:
        raise ValueError(f"grad_check is meant for models under 10k parameters "
                         f"(got {total})")
    model.zero_grads()
    model.train_step(batch)
    analytic = {k: g.copy() for k, g in model.gradients().items()}

    loss_value = getattr(model, "loss_value", None)
    if loss_value is not None:
        objective = lambda: float(loss_value(batch))
    else:
        def objective() -> float:
            model.zero_grads()
            return float(model.train_step(batch))

    lockable = [layer for layer in getattr(model, "all_layers", list)()
                if hasattr(layer, "route_lock")] if lock_routing else []
    numeric = {}
    try:
        for layer in lockable:
            layer.route_lock = True
        for name, param in params.items():
            numeric[name] = finite_difference(objective, param, epsilon)
    finally:
        for layer in lockable:
            layer.route_lock = False
    # one scale for the whole model: float32 probe noise on a tensor whose own
    # gradients happen to be tiny must not masquerade as a gradient bug
    scale = max(max(np.abs(a).max(initial=0.0) for a in analytic.values()),
                max(np.abs(n).max(initial=0.0) for n in numeric.values()))
    if scale == 0.0:
        return 0.0
    return max(float(np.abs(analytic[name] - numeric[name]).max() / scale)
               for name in params)
