"""Adaptive backstepping with Gaussian RBF approximators.

Error coordinates ``e_1 = z - eta_1``, ``e_q = x_q - alpha_{q-1}``; every
step of the recursion uses

    alpha_q = -(K_q + rho_q^2/2 ||g_q||^2) e_q - theta_q^T phi_q

(the last one is the actual input ``u``) and the leaky adaptation
``theta_q' = gamma_q (e_q phi_q - sigma_q theta_q)``.

Arrays carry followers (or followers x runs) on the first axis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .virtual_layer import DivergenceError


class ControllerError(ValueError):
    pass


class RbfNetwork:
    """Gaussian basis ``phi_k(z) = exp(-||z - c_k||^2 / (2 width^2))``.

    Centres on a regular lattice are evaluated as a product of per-axis
    factors, which is much cheaper than the generic distance form.
    """

    def __init__(self, centers: np.ndarray, width: float, axes: list[np.ndarray] | None = None):
        self.centers = np.atleast_2d(np.asarray(centers, float))
        if width <= 0:
            raise ControllerError("RBF width must be positive")
        self.width = float(width)
        self.axes = axes
        self._inv = 1.0 / (2.0 * self.width**2)

    @classmethod
    def lattice(cls, dim: int, lo: float = -3.0, hi: float = 3.0, per_dim: int = 5, width: float | None = None):
        axis = np.linspace(lo, hi, per_dim)
        if width is None:
            width = axis[1] - axis[0] if per_dim > 1 else (hi - lo) or 1.0
        centers = np.array(list(itertools.product(axis, repeat=dim)))
        return cls(centers, width, axes=[axis] * dim)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def features(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        if self.axes is None:
            d2 = np.sum((z[:, None, :] - self.centers[None, :, :]) ** 2, axis=-1)
            return np.exp(-d2 * self._inv)
        out = np.ones((z.shape[0], 1))
        for d, axis in enumerate(self.axes):
            f = np.exp(-((z[:, d : d + 1] - axis[None, :]) ** 2) * self._inv)
            out = (out[:, :, None] * f[:, None, :]).reshape(z.shape[0], -1)
        return out


@dataclass(frozen=True)
class ControllerParams:
    """Per-step gains; scalars broadcast over every backstepping step."""

    order: int
    K_gains: np.ndarray | float = 15.0
    rho: np.ndarray | float = 1.0
    sigma_mod: np.ndarray | float = 0.5
    gamma: np.ndarray | float = 10.0

    def __post_init__(self):
        for name in ("K_gains", "rho", "sigma_mod", "gamma"):
            v = np.broadcast_to(np.asarray(getattr(self, name), float), (self.order,)).copy()
            if np.any(v <= 0):
                raise ControllerError(f"{name} must be positive")
            object.__setattr__(self, name, v)

    def deltas(self) -> np.ndarray:
        d = self.K_gains - self.rho**2
        d[-1] = self.K_gains[-1] - 0.5 * self.rho[-1] ** 2
        return d

    def decay_terms(self) -> np.ndarray:
        """``Delta_1`` and ``Delta_q - 1/(2 rho_{q-1}^2)`` for q >= 2."""
        d = self.deltas()
        d[1:] -= 1.0 / (2.0 * self.rho[:-1] ** 2)
        return d

    def validate(self):
        bad = np.flatnonzero(self.decay_terms() <= 0)
        if bad.size:
            raise ControllerError(
                f"controller gains violate the Lyapunov decay condition at steps {[int(k) + 1 for k in bad]}"
            )

    @property
    def c_gamma(self) -> float:
        return float(min(np.min(2 * self.decay_terms()), np.min(self.gamma / self.sigma_mod)))

    @property
    def l_a(self) -> float:
        return float(np.sum(1.0 / (2.0 * self.rho**2)))


def nn_input_dims(order: int) -> list[int]:
    """Approximator input sizes per step (see ``nn_inputs``)."""
    first = 3 if order >= 2 else 2
    return [first] + [q + 2 for q in range(2, order + 1)]


def nn_inputs(q: int, x: np.ndarray, eta: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Inputs for step ``q`` (1-based).

    q = 1: ``(x_1, eta_1, eta_2)``; q >= 2: ``(x_1..x_q, e_{q-1}, eta_q)``.
    """
    if q == 1:
        cols = [x[:, 0], eta[:, 0]]
        if eta.shape[1] >= 2:
            cols.append(eta[:, 1])
        return np.column_stack(cols)
    return np.column_stack([x[:, :q], e[:, q - 2], eta[:, q - 1]])


def errors(x: np.ndarray, eta: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """``e_1 = x_1 - eta_1``, ``e_q = x_q - alpha_{q-1}``."""
    e = np.empty_like(x)
    e[:, 0] = x[:, 0] - eta[:, 0]
    if x.shape[1] > 1:
        e[:, 1:] = x[:, 1:] - alphas
    return e


def virtual_input(e_q, g_q, theta_q, phi_q, K_q: float, rho_q: float):
    """``-(K + rho^2/2 ||g||^2) e - theta^T phi``; ``g`` rows are noise-gain vectors."""
    g_q = np.asarray(g_q, float)
    gn2 = np.sum(g_q**2, axis=-1) if g_q.ndim > 1 else g_q**2
    nn = np.sum(theta_q * phi_q, axis=-1)
    return -(K_q + 0.5 * rho_q**2 * gn2) * e_q - nn


actual_input = virtual_input


def theta_rhs(theta_q, e_q, phi_q, gamma_q: float, sigma_q: float):
    return gamma_q * (np.asarray(e_q)[..., None] * phi_q - sigma_q * theta_q)


def adapt_step(theta_q, e_q, phi_q, dt: float, gamma_q: float, sigma_q: float):
    """Exact update of the leaky adaptation with ``e`` and ``phi`` held."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    a = np.exp(-gamma_q * sigma_q * dt)
    target = np.asarray(e_q)[..., None] * phi_q / sigma_q
    new = a * theta_q + (1.0 - a) * target
    if not np.all(np.isfinite(new)):
        raise DivergenceError("adaptive weights became non-finite")
    return new


@dataclass
class ControlOutput:
    e: np.ndarray  # (rows, n)
    alpha: np.ndarray  # (rows, n-1)
    u: np.ndarray  # (rows,)
    phi: list = field(default_factory=list)


class BacksteppingController:
    """Stateless evaluator; the weights are passed in and out explicitly."""

    def __init__(self, params: ControllerParams, rbf_range: float = 3.0, rbf_per_dim: int = 5):
        params.validate()
        self.params = params
        self.order = params.order
        self.networks = [
            RbfNetwork.lattice(d, -rbf_range, rbf_range, rbf_per_dim) for d in nn_input_dims(self.order)
        ]

    def zero_weights(self, rows: int) -> list[np.ndarray]:
        return [np.zeros((rows, net.size)) for net in self.networks]

    def compute(self, x, eta, g, thetas) -> ControlOutput:
        """``g``: noise-gain values ``(rows, n, m)`` at the current state."""
        p = self.params
        n = self.order
        rows = x.shape[0]
        e = np.empty((rows, n))
        alpha = np.empty((rows, max(n - 1, 0)))
        phis = []
        e[:, 0] = x[:, 0] - eta[:, 0]
        u = None
        for q in range(1, n + 1):
            phi = self.networks[q - 1].features(nn_inputs(q, x, eta, e))
            phis.append(phi)
            a = virtual_input(e[:, q - 1], g[:, q - 1, :], thetas[q - 1], phi, p.K_gains[q - 1], p.rho[q - 1])
            if q < n:
                alpha[:, q - 1] = a
                e[:, q] = x[:, q] - a
            else:
                u = a
        return ControlOutput(e, alpha, u, phis)

    def weight_rhs(self, out: ControlOutput, thetas) -> list[np.ndarray]:
        p = self.params
        return [
            theta_rhs(thetas[q], out.e[:, q], out.phi[q], p.gamma[q], p.sigma_mod[q])
            for q in range(self.order)
        ]
