"""Uncertain strict-feedback follower dynamics.

``x_q' = x_{q+1} + f_q(x_1..x_q) + g_q(x_1..x_q)^T xi`` for ``q < n`` and
``x_n' = u + f_n(x) + g_n(x)^T xi``; the output is ``z = x_1``.
All functions here are vectorized over followers: states are ``(N, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .virtual_layer import DivergenceError

DIVERGENCE_LIMIT = 1e6

DriftFn = Callable[[np.ndarray, np.ndarray], np.ndarray]  # (x, ids) -> (N, n)
GainFn = Callable[[np.ndarray, np.ndarray], np.ndarray]  # (x, ids) -> (N, n, m)


@dataclass(frozen=True)
class AgentModel:
    order: int
    m: int
    drift: DriftFn
    gain: GainFn
    name: str = "custom"

    def probe(self, n_agents: int = 4, box: float = 3.0, samples: int = 200, seed: int = 0) -> bool:
        """Check that drift and gain are finite on a bounded state box."""
        rng = np.random.default_rng(seed)
        ids = np.arange(1, n_agents + 1)
        for _ in range(samples):
            x = rng.uniform(-box, box, size=(n_agents, self.order))
            if not (np.all(np.isfinite(self.drift(x, ids))) and np.all(np.isfinite(self.gain(x, ids)))):
                return False
        return True


@dataclass
class AgentState:
    x: np.ndarray  # (N, n)
    u_last: np.ndarray  # (N,)


def _zero_drift(x, ids):
    return np.zeros_like(x)


def zero_model(order: int, m: int = 1) -> AgentModel:
    return AgentModel(
        order, m, _zero_drift, lambda x, ids: np.zeros(x.shape + (m,)), name="none"
    )


def _paper_drift(x, ids):
    x1, x2 = x[:, 0], x[:, 1]
    f = np.empty_like(x)
    f[:, 0] = 0.5 * ids * x1 * np.sin(x1) * np.cos(x1)
    f[:, 1] = 0.9 * ids * x1 * np.sin(x2) * np.cos(0.3 * x1)
    return f


def _paper_gain(x, ids):
    x1, x2 = x[:, 0], x[:, 1]
    g = np.empty(x.shape + (1,))
    base = 0.5 * x1 * np.sin(x1)
    g[:, 0, 0] = base
    g[:, 1, 0] = base * np.cos(x2)
    return g


def paper_model() -> AgentModel:
    """Second-order heterogeneous example; ``ids`` are 1-based follower labels."""
    return AgentModel(2, 1, _paper_drift, _paper_gain, name="paper_example")


MODELS = {
    "paper_example": lambda order, m: paper_model(),
    "none": zero_model,
}


def get_model(name: str, order: int, m: int = 1) -> AgentModel:
    try:
        model = MODELS[name](order, m)
    except KeyError:
        raise ValueError(f"unknown nonlinearity {name!r}; choose from {sorted(MODELS)}") from None
    if model.order != order or model.m != m:
        raise ValueError(f"model {name!r} has order {model.order}, m={model.m}")
    return model


def plant_rhs(model: AgentModel, x: np.ndarray, u: np.ndarray, xi: np.ndarray, ids: np.ndarray) -> np.ndarray:
    f = model.drift(x, ids)
    g = model.gain(x, ids)
    dx = f + np.einsum("iqm,im->iq", g, xi)
    dx[:, :-1] += x[:, 1:]
    dx[:, -1] += u
    return dx


def check_finite(x: np.ndarray, step: int | None = None, what: str = "x"):
    bad = ~np.isfinite(x) | (np.abs(x) > DIVERGENCE_LIMIT)
    if np.any(bad):
        idx = tuple(int(v) for v in np.argwhere(bad)[0])
        raise DivergenceError(f"{what}{list(idx)} diverged (value {x[idx]!r})", step)


def plant_step(
    model: AgentModel,
    state: AgentState,
    u: np.ndarray,
    xi: np.ndarray,
    dt: float,
    ids: np.ndarray | None = None,
) -> AgentState:
    """One RK4 step with ``u`` and ``xi`` held constant over the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = state.x
    ids = np.arange(1, x.shape[0] + 1) if ids is None else ids
    u = np.asarray(u, float).reshape(x.shape[0])
    xi = np.asarray(xi, float).reshape(x.shape[0], model.m)
    k1 = plant_rhs(model, x, u, xi, ids)
    k2 = plant_rhs(model, x + 0.5 * dt * k1, u, xi, ids)
    k3 = plant_rhs(model, x + 0.5 * dt * k2, u, xi, ids)
    k4 = plant_rhs(model, x + dt * k3, u, xi, ids)
    new = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    check_finite(new)
    return AgentState(new, u.copy())


def output(state: AgentState) -> np.ndarray:
    return state.x[:, 0]
