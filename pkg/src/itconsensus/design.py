"""Gain synthesis for the auxiliary consensus layer.

Solves the two Riccati-type matrix inequalities for ``P``, builds the
consensus gain ``K = c0 B^T P`` and derives the ON/OFF decay and growth
rates that bound how long the network may stay silent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

RESIDUAL_TOL = 1e-3
MARGIN_SWEEP = (0.1, 0.5, 1.0, 2.0)


class DesignError(ValueError):
    pass


class InfeasibleDesign(DesignError):
    pass


class PinningConditionError(DesignError):
    pass


@dataclass(frozen=True)
class ChainSpec:
    """Integrator chain ``(A, B)`` of a given order."""

    order: int

    def __post_init__(self):
        if self.order < 1:
            raise DesignError("order must be positive")

    @property
    def A(self) -> np.ndarray:
        return np.eye(self.order, k=1)

    @property
    def B(self) -> np.ndarray:
        b = np.zeros((self.order, 1))
        b[-1, 0] = 1.0
        return b


@dataclass(frozen=True)
class DesignInputs:
    c0: int
    c1: float
    c2: float
    c3: float
    c_z: float
    n_followers: int

    def __post_init__(self):
        for name in ("c0", "c1", "c2", "c3", "c_z", "n_followers"):
            if not getattr(self, name) > 0:
                raise DesignError(f"{name} must be strictly positive")
        if int(self.c0) != self.c0:
            raise DesignError("c0 must be an integer")


@dataclass(frozen=True)
class DesignOutput:
    P: np.ndarray
    K: np.ndarray
    delta_alpha: float
    delta_beta: float
    c_beta: float
    c_alpha1: float
    max_off_ratio: float
    norm_P: float = field(default=float("nan"))

    def as_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "K": self.K.reshape(-1).tolist(),
            "norm_P": self.norm_P,
            "c_alpha1": self.c_alpha1,
            "delta_alpha": self.delta_alpha,
            "delta_beta": self.delta_beta,
            "c_beta": self.c_beta,
            "max_off_ratio": self.max_off_ratio,
        }


@dataclass(frozen=True)
class Residuals:
    riccati: np.ndarray
    growth: np.ndarray

    @property
    def riccati_max_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.riccati)[-1])

    @property
    def growth_max_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.growth)[-1])

    def passes(self, eps: float = RESIDUAL_TOL) -> bool:
        return self.riccati_max_eig <= eps and self.growth_max_eig <= eps

    def strictly_negative(self) -> bool:
        return self.riccati_max_eig < 0 and self.growth_max_eig < 0


def residuals(P: np.ndarray, spec: ChainSpec, c1: float, c3: float) -> Residuals:
    """Left-hand sides of both inequalities evaluated at ``P``."""
    A, B = spec.A, spec.B
    sym = A.T @ P + P @ A
    r1 = sym - 2.0 * P @ B @ B.T @ P + c1 * np.eye(spec.order)
    r2 = sym - c3 * P
    return Residuals(0.5 * (r1 + r1.T), 0.5 * (r2 + r2.T))


def _chain_pole_gain(order: int, pole: float) -> np.ndarray:
    # u = -F x places every closed-loop pole of the chain at -pole
    coeffs = np.poly(np.full(order, -pole))  # leading 1, then c_{n-1} .. c_0
    return coeffs[1:][::-1].reshape(1, order)


def newton_kleinman(
    spec: ChainSpec,
    q: float,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> np.ndarray:
    """Stabilizing solution of ``A^T P + P A - 2 P B B^T P + q I = 0``.

    Kleinman iteration with ``R = 1/2``: given a stabilizing feedback
    ``F_k`` solve ``(A - B F_k)^T P + P (A - B F_k) = -(q I + F_k^T F_k / 2)``
    and update ``F_{k+1} = 2 B^T P``.
    """
    A, B = spec.A, spec.B
    n = spec.order
    F = _chain_pole_gain(n, pole=max(1.0, q ** (1.0 / (2 * n))))
    P_prev = None
    for _ in range(max_iter):
        Acl = A - B @ F
        Q = q * np.eye(n) + 0.5 * F.T @ F
        P = solve_continuous_lyapunov(Acl.T, -Q)
        P = 0.5 * (P + P.T)
        F = 2.0 * B.T @ P
        if P_prev is not None and np.linalg.norm(P - P_prev) <= tol * max(1.0, np.linalg.norm(P)):
            return P
        P_prev = P
    raise InfeasibleDesign(f"Newton-Kleinman did not converge for q={q}")


def solve_P(
    spec: ChainSpec,
    c1: float,
    c3: float,
    margins=MARGIN_SWEEP,
    eps: float = RESIDUAL_TOL,
) -> tuple[np.ndarray, Residuals]:
    """Find ``P > 0`` satisfying both inequalities.

    For each margin ``mu`` the Riccati equation with ``c1 + mu`` is solved,
    which makes the first inequality hold with slack ``-mu``; the second
    is then checked a posteriori. The feasible candidate with the
    smallest trace wins.
    """
    if c1 <= 0 or c3 <= 0:
        raise DesignError("c1 and c3 must be positive")
    best = None
    for mu in margins:
        try:
            P = newton_kleinman(spec, c1 + mu)
        except InfeasibleDesign:
            continue
        if np.linalg.eigvalsh(P)[0] <= 0:
            continue
        res = residuals(P, spec, c1, c3)
        if not (res.riccati_max_eig <= eps and res.growth_max_eig < 0):
            continue
        if best is None or np.trace(P) < np.trace(best[0]):
            best = (P, res)
    if best is None:
        raise InfeasibleDesign(f"design infeasible for (c1={c1}, c3={c3})")
    return best


def make_gain(P: np.ndarray, spec: ChainSpec, c0: int, lambda_min: float) -> np.ndarray:
    if c0 * lambda_min < 1:
        raise PinningConditionError(
            f"pinning-gain condition violated: c0*lambda_min = {c0 * lambda_min:.4f} < 1"
        )
    return c0 * spec.B.T @ P


def spectral_norm(P: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (P + P.T))[-1])


def rates(P: np.ndarray, inputs: DesignInputs, K: np.ndarray | None = None) -> DesignOutput:
    """Fill in the ON decay rate, OFF growth rate and the OFF budget."""
    norm_P = spectral_norm(P)
    c_alpha1 = inputs.c1 - inputs.c_z * inputs.n_followers * norm_P / inputs.c2
    if c_alpha1 <= 0:
        raise DesignError(
            f"c2 too small / P too large: c_alpha1 = {c_alpha1:.4g} <= 0"
        )
    delta_alpha = c_alpha1 / norm_P
    delta_beta = inputs.c3 + inputs.c_z * inputs.n_followers / inputs.c2
    c_beta = inputs.c2 * inputs.c_z * norm_P
    if K is None:
        K = inputs.c0 * ChainSpec(P.shape[0]).B.T @ P
    return DesignOutput(
        P=P,
        K=np.asarray(K, dtype=float).reshape(1, -1),
        delta_alpha=delta_alpha,
        delta_beta=delta_beta,
        c_beta=c_beta,
        c_alpha1=c_alpha1,
        max_off_ratio=delta_alpha / delta_beta,
        norm_P=norm_P,
    )


def design(
    order: int, inputs: DesignInputs, lambda_min: float
) -> tuple[DesignOutput, Residuals]:
    """Full chain: ``P`` -> ``K`` -> rates."""
    spec = ChainSpec(order)
    P, res = solve_P(spec, inputs.c1, inputs.c3)
    K = make_gain(P, spec, inputs.c0, lambda_min)
    return rates(P, inputs, K), res


def max_off_duration(on_duration: float, out: DesignOutput) -> float:
    """Largest OFF time a period with the given ON time tolerates."""
    return on_duration * ((out.delta_alpha + out.delta_beta) / out.delta_beta - 1.0)


PAPER_P = np.array([[22.9454, 3.1623], [3.1623, 3.6280]])


def paper_inputs() -> DesignInputs:
    return DesignInputs(c0=6, c1=20.0, c2=10.0, c3=3.0, c_z=1.0, n_followers=4)

