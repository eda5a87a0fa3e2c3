"""Per-agent auxiliary linear systems and the intermittent consensus signal.

Each follower carries ``eta_i' = A eta_i + B K zeta_i`` where ``zeta_i`` is
the neighbour/leader disagreement while the network is ON and zero while
it is OFF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph, pinned_laplacian
from .schedule import Mode, ModeSchedule, mode_ticks


class DivergenceError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class LeaderRef:
    """``z_r(t) = amplitude * sin(omega t + phase)`` with exact derivatives."""

    amplitude: float = 1.0
    omega: float = 0.5
    phase: float = 0.0

    def derivative(self, t, order: int):
        return (
            self.amplitude
            * self.omega**order
            * np.sin(self.omega * np.asarray(t) + self.phase + order * math.pi / 2)
        )

    def zbar(self, t: float, n: int) -> np.ndarray:
        """``[z_r, z_r', ..., z_r^(n-1)]``."""
        return np.array([self.derivative(t, l) for l in range(n)])

    def derivative_bound(self, n: int) -> float:
        return max(abs(self.amplitude) * self.omega**l for l in range(1, n + 1))

    def check_bound(self, c_z: float, n: int, horizon: float, samples: int = 10001) -> bool:
        t = np.linspace(0.0, horizon, samples)
        return all(np.max(np.abs(self.derivative(t, l))) <= c_z for l in range(1, n + 1))


@dataclass
class VirtualState:
    eta: np.ndarray  # (N, n)
    zeta: np.ndarray  # (N, n), last computed


def zeta(i: int, etas: np.ndarray, zbar: np.ndarray, g: Graph, mode: Mode) -> np.ndarray:
    """Consensus signal for follower ``i`` (0-based)."""
    if mode == Mode.OFF:
        return np.zeros(etas.shape[1])
    a = g.adjacency[i]
    return a @ (etas - etas[i]) + g.pinning[i] * (zbar - etas[i])


def zeta_all(etas: np.ndarray, zbar: np.ndarray, LB: np.ndarray, pinning: np.ndarray, on: bool) -> np.ndarray:
    """Vectorized ``zeta`` for every follower: ``-(L+B) eta + b zbar``."""
    if not on:
        return np.zeros_like(etas)
    return -LB @ etas + pinning[:, None] * zbar[None, :]


def eta_rhs(etas: np.ndarray, zetas: np.ndarray, K: np.ndarray) -> np.ndarray:
    d = np.empty_like(etas)
    d[:, :-1] = etas[:, 1:]
    d[:, -1] = zetas @ K.reshape(-1)
    return d


def virtual_step(states: VirtualState, K: np.ndarray, dt: float) -> VirtualState:
    """One RK4 step of the auxiliary systems with ``zeta`` frozen over the step."""
    eta, z = states.eta, states.zeta
    k1 = eta_rhs(eta, z, K)
    k2 = eta_rhs(eta + 0.5 * dt * k1, z, K)
    k3 = eta_rhs(eta + 0.5 * dt * k2, z, K)
    k4 = eta_rhs(eta + dt * k3, z, K)
    new = eta + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(new)):
        raise DivergenceError("auxiliary state became non-finite")
    return VirtualState(new, z)


def lyapunov_Ve(etas: np.ndarray, zbar: np.ndarray, P: np.ndarray) -> float:
    s = np.asarray(etas) - np.asarray(zbar)[None, :]
    return float(np.einsum("ij,jk,ik->", s, P, s))


def lyapunov_Ve_series(etas: np.ndarray, zbars: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``V_e`` along a trajectory: ``etas`` (T, N, n), ``zbars`` (T, n)."""
    s = etas - zbars[:, None, :]
    return np.einsum("tij,jk,tik->t", s, P, s)


@dataclass
class VirtualRun:
    t: np.ndarray
    on: np.ndarray
    eta: np.ndarray  # (T, N, n)
    zeta: np.ndarray  # (T, N, n)
    zbar: np.ndarray  # (T, n)
    Ve: np.ndarray


def simulate_virtual(
    g: Graph,
    K: np.ndarray,
    P: np.ndarray,
    schedule: ModeSchedule,
    leader: LeaderRef,
    dt: float,
    horizon: float,
    eta0: np.ndarray | None = None,
) -> VirtualRun:
    """Run the auxiliary layer alone on the grid ``0, dt, ..., horizon``."""
    n = P.shape[0]
    N = g.n_followers
    steps = int(round(horizon / dt))
    t = np.arange(steps + 1) * dt
    on = mode_ticks(schedule, dt, steps + 1)
    LB = pinned_laplacian(g)
    eta = np.zeros((steps + 1, N, n))
    zet = np.zeros((steps + 1, N, n))
    zbar = np.stack([leader.derivative(t, l) for l in range(n)], axis=1)
    eta[0] = 0.0 if eta0 is None else eta0
    for k in range(steps + 1):
        zet[k] = zeta_all(eta[k], zbar[k], LB, g.pinning, bool(on[k]))
        if k == steps:
            break
        eta[k + 1] = virtual_step(VirtualState(eta[k], zet[k]), K, dt).eta
    return VirtualRun(t, on, eta, zet, zbar, lyapunov_Ve_series(eta, zbar, P))
