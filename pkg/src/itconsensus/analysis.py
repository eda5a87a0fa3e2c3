"""Post-processing: Lyapunov envelope checks, probabilistic stability, tracking metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .controller import ControllerParams
from .design import DesignOutput
from .schedule import ModeSchedule, certify

ENVELOPE_TOL = 0.05
BATCH_TOL = 0.20


@dataclass
class GlobalEnvelope:
    """Constants of ``V_e(t) <= pi* exp(-Lambda t / T) + eps*``."""

    Lambda: float
    T: float
    kappa: float
    pi1: float
    pi2: float
    eps1: float
    eps2: float
    # the same two coefficients with the exponent sign as originally printed
    pi1_printed: float
    pi2_printed: float

    @property
    def pi_star(self) -> float:
        return max(self.pi1, self.pi2)

    @property
    def eps_star(self) -> float:
        return max(self.eps1, self.eps2)

    def bound(self, t):
        return self.pi_star * np.exp(-self.Lambda / self.T * np.asarray(t)) + self.eps_star


def global_envelope(V0: float, design: DesignOutput, Lambda: float, T: float) -> GlobalEnvelope:
    """Envelope constants for a schedule with minimum per-period margin ``Lambda``.

    ``kappa`` and ``eps1``/``eps2`` follow the recursion over periods.
    The transient coefficient uses ``exp(+Lambda)``: the number of
    completed periods at time ``t`` is at least ``t/T - 1``, so
    ``exp(-k Lambda) <= exp(Lambda) exp(-Lambda t / T)``.
    """
    if Lambda <= 0:
        raise ValueError("global envelope needs Lambda > 0")
    da, db, cb = design.delta_alpha, design.delta_beta, design.c_beta
    kappa = (cb / db + cb / da) * math.exp(db * T) - cb / db
    grow = math.exp(db * T)
    eps1 = -kappa / (1.0 - math.exp(Lambda)) + kappa + cb / da
    eps2 = grow * eps1 + kappa
    pi1 = V0 * math.exp(Lambda)
    pi1_printed = V0 * math.exp(-Lambda) + kappa / (1.0 - math.exp(Lambda))
    return GlobalEnvelope(Lambda, T, kappa, pi1, grow * pi1, eps1, eps2, pi1_printed, grow * pi1_printed)


@dataclass
class PeriodMargin:
    kappa: int
    on_margin: float
    off_margin: float
    on_violations: int
    off_violations: int


@dataclass
class EnvelopeReport:
    periods: list[PeriodMargin]
    envelope: GlobalEnvelope | None
    on_violations: int
    off_violations: int
    global_violations: int
    worst_margin: float
    tol: float

    @property
    def violations(self) -> int:
        return self.on_violations + self.off_violations + self.global_violations

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def summary(self) -> dict:
        out = {
            "on_violations": self.on_violations,
            "off_violations": self.off_violations,
            "global_violations": self.global_violations,
            "worst_margin": self.worst_margin,
            "tolerance": self.tol,
        }
        if self.envelope is not None:
            e = self.envelope
            out.update(Lambda=e.Lambda, T=e.T, kappa=e.kappa, pi1=e.pi1, pi2=e.pi2, eps1=e.eps1,
                       eps2=e.eps2, pi_star=e.pi_star, eps_star=e.eps_star)
        return out


def _check(V, bound, tol):
    allowed = bound * (1.0 + tol) + 1e-12
    return int(np.sum(V > allowed)), float(np.min(allowed - V)) if V.size else math.inf


def on_bound(V_start, s, design: DesignOutput):
    da, cb = design.delta_alpha, design.c_beta
    decay = np.exp(-da * s)
    return V_start * decay + cb / da * (1.0 - decay)


def off_bound(V_start, s, design: DesignOutput):
    db, cb = design.delta_beta, design.c_beta
    grow = np.exp(db * s)
    return V_start * grow + cb / db * (grow - 1.0)


def check_envelopes(
    t: np.ndarray,
    Ve: np.ndarray,
    design: DesignOutput,
    schedule: ModeSchedule,
    tol: float = ENVELOPE_TOL,
) -> EnvelopeReport:
    """Test every sample against its ON/OFF envelope and the global one.

    Each ON (OFF) envelope is anchored at the sampled ``V_e`` at the start
    of its interval and checked on the closed interval up to the next
    switch. ``t`` must be a uniform grid containing the switch instants.
    """
    t = np.asarray(t, float)
    Ve = np.asarray(Ve, float)
    if t.size == 0:
        return EnvelopeReport([], None, 0, 0, 0, math.inf, tol)
    dt = t[1] - t[0] if t.size > 1 else 1.0
    last = t.size - 1

    def idx(tau):
        return min(int(round((tau - t[0]) / dt)), last)

    periods = []
    on_v = off_v = 0
    worst = math.inf
    for k, p in enumerate(schedule.periods):
        a, b, c = idx(p.tau_on), idx(p.tau_off), idx(p.tau_next)
        if p.tau_on > t[-1]:
            break
        seg = slice(a, b + 1)
        nv_on, m_on = _check(Ve[seg], on_bound(Ve[a], t[seg] - t[a], design), tol)
        nv_off, m_off = 0, math.inf
        if c > b and p.tau_off <= t[-1]:
            seg = slice(b, c + 1)
            nv_off, m_off = _check(Ve[seg], off_bound(Ve[b], t[seg] - t[b], design), tol)
        on_v += nv_on
        off_v += nv_off
        worst = min(worst, m_on, m_off)
        periods.append(PeriodMargin(k, m_on, m_off, nv_on, nv_off))

    env = None
    glob_v = 0
    _, lam, _ = certify(schedule, design)
    if lam > 0:
        env = global_envelope(float(Ve[0]), design, lam, schedule.T_max)
        glob_v, m_g = _check(Ve, env.bound(t - t[0]), tol)
        worst = min(worst, m_g)
    return EnvelopeReport(periods, env, on_v, off_v, glob_v, worst, tol)


# --------------------------------------------------------------------------- probabilistic stability


@dataclass
class StabilityReport:
    t: np.ndarray
    fraction_inside: np.ndarray  # per grid time
    l0: float
    passed: bool
    xi_star: np.ndarray | None = None  # per follower
    l_a: float | None = None
    c_gamma: float | None = None
    varpi_noise: np.ndarray | None = None  # l_a * xi_star, the noise part of varpi_i
    terminal_mean_err: np.ndarray | None = None  # per follower, E|z_i - z_r| over final window

    @property
    def min_fraction(self) -> float:
        return float(np.min(self.fraction_inside)) if self.fraction_inside.size else 1.0


def inside_band(abs_err: np.ndarray, t: np.ndarray, band_fn: Callable, diverged_at=None) -> np.ndarray:
    """``(R, T)`` mask: every follower of run ``r`` within ``band_fn(t)``."""
    band = np.broadcast_to(np.asarray(band_fn(t), float), t.shape)
    inside = np.all(abs_err <= band[None, :, None], axis=2)
    if diverged_at is not None:
        for r, k in enumerate(diverged_at):
            if k is not None:
                inside[r, k:] = False
    return inside


def certify_nsps(
    abs_err: np.ndarray,
    t: np.ndarray,
    l0: float,
    band_fn: Callable,
    diverged_at=None,
    min_runs: int = 20,
) -> StabilityReport:
    """Empirical check of ``P(|e(t)| <= band(t)) >= 1 - l0`` at every grid time.

    ``abs_err`` is ``(R, T, N)`` tracking error magnitude.
    """
    abs_err = np.abs(np.asarray(abs_err, float))
    if abs_err.shape[0] < min_runs:
        raise ValueError(f"need at least {min_runs} runs, got {abs_err.shape[0]}")
    frac = inside_band(abs_err, t, band_fn, diverged_at).mean(axis=0)
    return StabilityReport(np.asarray(t), frac, l0, bool(np.min(frac) >= 1.0 - l0 - 1e-12))


def noise_diagnostics(report: StabilityReport, xi_paths: np.ndarray, params: ControllerParams) -> StabilityReport:
    """Attach ``xi*`` (sup over time of the ensemble mean of ``||xi_i||^2``) and derived terms."""
    m2 = np.mean(np.sum(xi_paths**2, axis=-1), axis=0)  # (T, N)
    report.xi_star = m2.max(axis=0)
    report.l_a = params.l_a
    report.c_gamma = params.c_gamma
    report.varpi_noise = params.l_a * report.xi_star
    return report


def consensus_metrics(track_err: np.ndarray, t: np.ndarray, fraction: float = 0.25) -> dict:
    """Per-follower ``|z_i - z_r|`` statistics over the final ``fraction`` of the horizon.

    ``track_err`` is ``(R, T, N)``. ``mean`` is the ensemble average of the
    per-run window means (the estimate of the terminal expected error);
    ``max`` is the largest value seen in the window over all runs.
    """
    err = np.abs(np.asarray(track_err, float))
    t = np.asarray(t, float)
    if t.size == 0:
        raise ValueError("empty trace")
    start = t[0] + (1.0 - fraction) * (t[-1] - t[0])
    sl = t >= start - 1e-12
    w = err[:, sl, :]
    per_run_mean = w.mean(axis=1)  # (R, N)
    return {
        "window_start": float(start),
        "per_run_mean": per_run_mean,
        "mean": per_run_mean.mean(axis=0),
        "max": w.max(axis=(0, 1)),
        "eps_v_estimate": per_run_mean.mean(axis=0),
    }


def run_statistic(track_err: np.ndarray, t: np.ndarray, fraction: float = 0.25) -> np.ndarray:
    """Per-run worst-follower window mean of ``|z_i - z_r|``; shape ``(R,)``."""
    return consensus_metrics(track_err, t, fraction)["per_run_mean"].max(axis=1)


def run_sup_statistic(track_err: np.ndarray, t: np.ndarray, fraction: float = 0.25) -> np.ndarray:
    """Per-run ``sup`` over the final window and over followers of ``|z_i - z_r|``."""
    t = np.asarray(t, float)
    start = t[0] + (1.0 - fraction) * (t[-1] - t[0])
    sl = t >= start - 1e-12
    return np.abs(track_err[:, sl, :]).max(axis=(1, 2))


def batch_stable(a: np.ndarray, b: np.ndarray, tol: float = BATCH_TOL) -> bool:
    """Two estimates agree within ``tol`` relative to their mean, elementwise."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    ref = 0.5 * (np.abs(a) + np.abs(b))
    return bool(np.all(np.abs(a - b) <= tol * ref))


@dataclass
class WeightBound:
    observed: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.observed <= self.bound


def weight_bound(theta_norm: np.ndarray, e_sup: float, phi_sup: float, sigma: float, theta0: float = 0.0) -> WeightBound:
    """Compare ``sup ||theta||`` with ``sup|e| sup||phi|| / sigma + ||theta(0)||``."""
    return WeightBound(float(np.max(theta_norm)), e_sup * phi_sup / sigma + theta0)


@dataclass
class BandFunction:
    """``band(t) = floor + transient * exp(-t / time_scale)``."""

    floor: float
    transient: float = 0.0
    time_scale: float = 1.0
    extra: dict = field(default_factory=dict)

    def __call__(self, t):
        return self.floor + self.transient * np.exp(-np.asarray(t, float) / self.time_scale)
