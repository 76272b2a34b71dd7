"""Fast trainable projection: per-tensor constraint learning with reused gradients.

One optimizer step does four things for every projected tensor: (1) update the
constraint radius gamma using the current loss gradient chained through the
previous step's projection (no extra forward/backward pass), (2) anneal
positive constraint gradients by kappa, (3) apply one Adam step to gamma, and
(4) run the wrapped base optimizer and project the result onto the gamma
MARS ball around the frozen anchor weights. Tensors in the exclude set only
receive the base optimizer step, bit-identically to running it standalone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, DomainError, StateError
from .projection import EPS_DIV, ProjectionView, canonicalize, project_rows

__all__ = [
    "GAMMA_INIT",
    "FtpOptimizer",
    "GammaState",
    "ManagedParam",
    "adam_update_gamma",
    "anneal_gradient",
    "hyper_gradient",
    "make_managed",
    "rebase_anchor",
]

# Constraints start effectively closed: the first step can barely leave the anchor.
GAMMA_INIT = 1e-8


@dataclass
class ManagedParam:
    """A trainable tensor with its frozen anchor and per-step caches.

    ``value`` is the live (projected) tensor, ``anchor`` the weights toward
    which projection pulls, ``prev_unconstrained`` the cached pre-projection
    update from the previous step (absent until a step has run), and ``grad``
    the loss gradient for the upcoming step.
    """

    name: str
    value: np.ndarray
    anchor: np.ndarray
    projectable: bool = True
    prev_unconstrained: Optional[np.ndarray] = None
    grad: Optional[np.ndarray] = None

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.anchor = np.asarray(self.anchor, dtype=np.float64)
        if self.value.shape != self.anchor.shape:
            raise DomainError(
                f"{self.name}: value shape {self.value.shape} != anchor shape {self.anchor.shape}"
            )


def make_managed(
    values: dict[str, np.ndarray],
    anchors: Optional[dict[str, np.ndarray]] = None,
    projectable: Optional[Iterable[str]] = None,
) -> dict[str, ManagedParam]:
    """Wrap plain named tensors into managed params.

    Anchors default to copies of the current values; ``projectable`` limits
    which names participate in projection (default: all).
    """
    if anchors is None:
        anchors = {name: np.array(v, copy=True) for name, v in values.items()}
    proj = set(values) if projectable is None else set(projectable)
    unknown = proj - set(values)
    if unknown:
        raise ConfigError(f"projectable names not in params: {sorted(unknown)}")
    out = {}
    for name, v in values.items():
        if name not in anchors:
            raise DomainError(f"missing anchor for {name}")
        out[name] = ManagedParam(
            name=name,
            value=np.array(v, dtype=np.float64, copy=True),
            anchor=np.array(anchors[name], dtype=np.float64, copy=True),
            projectable=name in proj,
        )
    return out


@dataclass
class GammaState:
    """One learnable constraint radius with its Adam moments.

    ``kappa`` scales positive (shrinking) constraint gradients; ``mu`` is the
    fixed Adam step size for gamma.
    """

    gamma: float = GAMMA_INIT
    m: float = 0.0
    v: float = 0.0
    t: int = 0
    kappa: float = 1.0
    mu: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigError(f"annealing rate must lie in [0, 1], got {self.kappa}")
        if self.gamma < 0:
            raise ConfigError(f"constraint radius must be nonnegative, got {self.gamma}")

    def reset(self, gamma: float = GAMMA_INIT) -> None:
        self.gamma = gamma
        self.m = 0.0
        self.v = 0.0
        self.t = 0


def hyper_gradient(
    grad: np.ndarray,
    prev_unconstrained: Optional[np.ndarray],
    anchor: np.ndarray,
    gamma: float,
    eps_div: float = EPS_DIV,
) -> float:
    """Derivative of the loss w.r.t. the constraint radius, reusing ``grad``.

    Sums, over rows whose cached displacement exceeds gamma (the rows the
    projection actually rescaled), the inner product of the loss gradient row
    with the displacement direction, divided by the row's L1 displacement.
    Clamped rows and rows with negligible displacement contribute zero.
    """
    if prev_unconstrained is None:
        raise StateError("no cached unconstrained weights; run a step first")
    g = np.asarray(grad, dtype=np.float64)
    wt = np.asarray(prev_unconstrained, dtype=np.float64)
    w0 = np.asarray(anchor, dtype=np.float64)
    if not (g.shape == wt.shape == w0.shape) or g.ndim != 2:
        raise DomainError(
            f"hyper_gradient expects matching 2-D shapes, got {g.shape}/{wt.shape}/{w0.shape}"
        )
    delta = wt - w0
    dist = np.abs(delta).sum(axis=1)
    active = (dist > gamma) & (dist >= eps_div)
    if not np.any(active):
        return 0.0
    num = (g[active] * delta[active]).sum(axis=1)
    return float((num / dist[active]).sum())


def anneal_gradient(grad: float, kappa: float) -> float:
    """Scale positive (constraint-shrinking) gradients by kappa; pass the rest through."""
    if not 0.0 <= kappa <= 1.0:
        raise ConfigError(f"annealing rate must lie in [0, 1], got {kappa}")
    return kappa * grad if grad > 0 else grad


def adam_update_gamma(state: GammaState, grad: float) -> float:
    """One Adam step on the constraint radius; floors the result at zero.

    Returns the pre-clamp radius for diagnostics; ``state.gamma`` holds the
    clamped value.
    """
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    raw = state.gamma - state.mu * m_hat / (math.sqrt(v_hat) + state.eps)
    state.gamma = raw if raw > 0.0 else 0.0
    return raw


def rebase_anchor(
    params: dict[str, ManagedParam],
    gammas: dict[str, GammaState],
    gamma_init: float = GAMMA_INIT,
) -> None:
    """Adopt the current weights as the new anchor and restart constraint learning.

    Used between sequential tasks: anchors become the current values, all
    gamma states reset to their initial closed radius, and cached
    unconstrained weights are dropped.
    """
    for p in params.values():
        p.anchor = np.array(p.value, copy=True)
        p.prev_unconstrained = None
    for gs in gammas.values():
        gs.reset(gamma_init)


class FtpOptimizer:
    """Wraps a base optimizer with learned per-tensor projection constraints.

    ``base`` is any object with ``step(name, value, grad) -> new_value``
    (e.g. :class:`projtune.baselines.Sgd`). Configuration mirrors the usual
    optimizer keys plus ``k`` (positive-gradient annealing rate, in [0, 1])
    and ``exclude_set`` (parameter names never projected).
    """

    def __init__(
        self,
        params: dict[str, ManagedParam],
        base,
        k: float = 1.0,
        exclude_set: Iterable[str] = (),
        mu: float = 1e-2,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        gamma_init: float = GAMMA_INIT,
    ):
        self.params = params
        self.base = base
        self.exclude = frozenset(exclude_set)
        unknown = self.exclude - set(params)
        if unknown:
            raise ConfigError(f"exclude_set names not in params: {sorted(unknown)}")
        self.views: dict[str, ProjectionView] = {}
        self.gammas: dict[str, GammaState] = {}
        for name, p in params.items():
            if p.projectable and name not in self.exclude:
                self.views[name] = canonicalize(p.value, name=name)
                self.gammas[name] = GammaState(
                    gamma=gamma_init, kappa=k, mu=mu, beta1=betas[0], beta2=betas[1], eps=eps
                )

    def projected_names(self) -> list[str]:
        return list(self.gammas)

    def gamma_values(self) -> dict[str, float]:
        return {name: gs.gamma for name, gs in self.gammas.items()}

    def step(self) -> None:
        """One optimization step; consumes the gradients stored on the params.

        Exactly one loss/gradient evaluation feeds both the model update and
        the constraint update.
        """
        missing = [name for name, p in self.params.items() if p.grad is None]
        if missing:
            raise StateError(f"gradients missing for: {missing}")
        for name, p in self.params.items():
            g = p.grad
            gs = self.gammas.get(name)
            if gs is None:
                p.value = self.base.step(name, p.value, g)
            else:
                view = self.views[name]
                if p.prev_unconstrained is not None:
                    raw = hyper_gradient(
                        view.to_2d(g),
                        view.to_2d(p.prev_unconstrained),
                        view.to_2d(p.anchor),
                        gs.gamma,
                    )
                    adam_update_gamma(gs, anneal_gradient(raw, gs.kappa))
                w_tilde = self.base.step(name, p.value, g)
                p.prev_unconstrained = w_tilde
                p.value = view.from_2d(
                    project_rows(view.to_2d(w_tilde), view.to_2d(p.anchor), gs.gamma)
                )
            p.grad = None

    def rebase_anchor(self, gamma_init: float = GAMMA_INIT) -> None:
        rebase_anchor(self.params, self.gammas, gamma_init=gamma_init)
