"""Small dense feed-forward networks with analytic and finite-difference gradients.

The model kit exists to supply honest loss gradients to the optimizers at
desk scale. Parameters are a name -> float64 array mapping with stable
iteration order ("layer0.weight", "layer0.bias", ...), weights are stored as
(fan_out, fan_in) so each row is one output unit, and every gradient the
analytic backward pass produces can be cross-checked against central finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, DomainError
from .numerics import SeededRng

__all__ = [
    "ACTIVATIONS",
    "LOSSES",
    "Batch",
    "MlpSpec",
    "NamedParams",
    "backward",
    "evaluate_loss",
    "finite_diff_grad",
    "forward",
    "init_params",
]

NamedParams = dict[str, np.ndarray]


class Batch(NamedTuple):
    inputs: np.ndarray
    targets: np.ndarray


def _relu(z):
    return np.maximum(z, 0.0)


def _drelu(z):
    return (z > 0).astype(np.float64)


def _tanh(z):
    return np.tanh(z)


def _dtanh(z):
    t = np.tanh(z)
    return 1.0 - t * t


def _identity(z):
    return z


def _didentity(z):
    return np.ones_like(z)


# name -> (activation, derivative w.r.t. pre-activation)
ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "relu": (_relu, _drelu),
    "tanh": (_tanh, _dtanh),
    "identity": (_identity, _didentity),
}

LOSSES = ("softmax_ce", "mse")


@dataclass(frozen=True)
class MlpSpec:
    """Architecture description: layer widths, hidden activations, loss.

    ``widths`` includes the input width, so ``len(widths) - 1`` weight
    matrices exist; ``activations`` has one entry per hidden layer (the final
    layer output feeds the loss directly).
    """

    widths: tuple[int, ...]
    activations: tuple[str, ...] = ()
    loss: str = "softmax_ce"

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigError("need at least one layer (input and output width)")
        if any(w <= 0 for w in self.widths):
            raise ConfigError(f"layer widths must be positive: {self.widths}")
        n_hidden = len(self.widths) - 2
        acts = self.activations
        if len(acts) != n_hidden:
            raise ConfigError(
                f"{n_hidden} hidden layers need {n_hidden} activations, got {len(acts)}"
            )
        unknown = [a for a in acts if a not in ACTIVATIONS]
        if unknown:
            raise ConfigError(f"unknown activations {unknown}; choose from {sorted(ACTIVATIONS)}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {LOSSES}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def layer_names(self) -> list[str]:
        names = []
        for i in range(self.n_layers):
            names.append(f"layer{i}.weight")
            names.append(f"layer{i}.bias")
        return names

    def canonical(self) -> dict:
        return {
            "widths": list(self.widths),
            "activations": list(self.activations),
            "loss": self.loss,
        }


def _activation_fns(spec: MlpSpec, layer: int) -> tuple[Callable, Callable]:
    name = spec.activations[layer]
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}") from None


def init_params(spec: MlpSpec, rng: SeededRng) -> NamedParams:
    """He-style scaled Gaussian weights, zero biases."""
    params: NamedParams = {}
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        scale = np.sqrt(2.0 / fan_in)
        params[f"layer{i}.weight"] = rng.normal((fan_out, fan_in), stddev=scale)
        params[f"layer{i}.bias"] = np.zeros(fan_out, dtype=np.float64)
    return params


def _check_params(spec: MlpSpec, params: NamedParams) -> None:
    for i in range(spec.n_layers):
        w = params.get(f"layer{i}.weight")
        b = params.get(f"layer{i}.bias")
        if w is None or b is None:
            raise DomainError(f"missing tensors for layer{i}")
        want_w = (spec.widths[i + 1], spec.widths[i])
        if tuple(w.shape) != want_w or tuple(b.shape) != (spec.widths[i + 1],):
            raise DomainError(
                f"layer{i} shapes {w.shape}/{b.shape} do not match spec widths {spec.widths}"
            )


def _forward_trace(spec: MlpSpec, params: NamedParams, inputs: np.ndarray):
    """Forward pass keeping pre-activations and activations for backprop."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise DomainError(f"inputs must be a (batch, features) matrix, got rank {x.ndim}")
    if x.shape[1] != spec.widths[0]:
        raise DomainError(
            f"input width {x.shape[1]} does not match first layer width {spec.widths[0]}"
        )
    _check_params(spec, params)
    acts = [x]
    pre = []
    h = x
    for i in range(spec.n_layers):
        w = params[f"layer{i}.weight"]
        b = params[f"layer{i}.bias"]
        z = h @ w.T + b
        pre.append(z)
        if i < spec.n_layers - 1:
            act, _ = _activation_fns(spec, i)
            h = act(z)
        else:
            h = z
        acts.append(h)
    return pre, acts


def forward(spec: MlpSpec, params: NamedParams, inputs: np.ndarray) -> np.ndarray:
    """Batch outputs (logits or regression values), shape (batch, out_width)."""
    _, acts = _forward_trace(spec, params, inputs)
    return acts[-1]


def _check_targets(spec: MlpSpec, outputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    n, k = outputs.shape
    if spec.loss == "softmax_ce":
        t = np.asarray(targets)
        if not np.issubdtype(t.dtype, np.integer):
            raise DomainError("softmax_ce expects integer class labels")
        if t.shape != (n,):
            raise DomainError(f"labels must have shape ({n},), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= k):
            raise DomainError(f"labels must lie in [0, {k}), got range [{t.min()}, {t.max()}]")
        return t.astype(np.int64)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != outputs.shape:
        raise DomainError(f"mse targets must have shape {outputs.shape}, got {t.shape}")
    return t


def _loss_and_delta(spec: MlpSpec, outputs: np.ndarray, targets: np.ndarray):
    """Mean loss over the batch and d(loss)/d(outputs)."""
    t = _check_targets(spec, outputs, targets)
    n = outputs.shape[0]
    if spec.loss == "softmax_ce":
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(logsumexp - shifted[np.arange(n), t]))
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(n), t] -= 1.0
        return loss, probs / n
    diff = outputs - t
    loss = float(np.mean((diff * diff).sum(axis=1)))
    return loss, 2.0 * diff / n


def evaluate_loss(spec: MlpSpec, params: NamedParams, batch: Batch) -> float:
    """Mean loss over the batch, forward pass only."""
    outputs = forward(spec, params, batch.inputs)
    loss, _ = _loss_and_delta(spec, outputs, batch.targets)
    return loss


def backward(spec: MlpSpec, params: NamedParams, batch: Batch) -> tuple[float, NamedParams]:
    """Mean batch loss and analytic gradients for every named tensor."""
    pre, acts = _forward_trace(spec, params, batch.inputs)
    loss, delta = _loss_and_delta(spec, acts[-1], batch.targets)
    grads: NamedParams = {name: None for name in spec.layer_names()}  # type: ignore[misc]
    for i in reversed(range(spec.n_layers)):
        grads[f"layer{i}.weight"] = delta.T @ acts[i]
        grads[f"layer{i}.bias"] = delta.sum(axis=0)
        if i > 0:
            _, dact = _activation_fns(spec, i - 1)
            delta = (delta @ params[f"layer{i}.weight"]) * dact(pre[i - 1])
    return loss, grads


def finite_diff_grad(
    spec: MlpSpec, params: NamedParams, batch: Batch, h: float = 1e-6
) -> NamedParams:
    """Central-difference gradient oracle: (L(p+h) - L(p-h)) / 2h per coordinate.

    Independent of the analytic backward pass; quadratic losses are exact up
    to rounding. Intended for small nets only (two loss evaluations per
    scalar parameter).
    """
    if not h > 0:
        raise DomainError(f"finite-difference step must be positive, got {h}")
    grads: NamedParams = {}
    work = {name: np.array(t, dtype=np.float64, copy=True) for name, t in params.items()}
    for name, tensor in work.items():
        g = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = evaluate_loss(spec, work, batch)
            flat[j] = orig - h
            down = evaluate_loss(spec, work, batch)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads
