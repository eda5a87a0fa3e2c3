"""Intermittent ON/OFF communication timeline and its dwell-time certificate."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .design import DesignOutput


class Mode(enum.IntEnum):
    OFF = 0
    ON = 1


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class Period:
    tau_on: float
    tau_off: float
    tau_next: float

    @property
    def on_duration(self) -> float:
        return self.tau_off - self.tau_on

    @property
    def off_duration(self) -> float:
        return self.tau_next - self.tau_off

    @property
    def length(self) -> float:
        return self.tau_next - self.tau_on


@dataclass(frozen=True)
class ModeSchedule:
    """Periods ``[tau_on, tau_off)`` ON followed by ``[tau_off, tau_next)`` OFF."""

    periods: tuple[Period, ...]
    horizon: float

    def __post_init__(self):
        if not self.periods:
            raise ScheduleError("empty schedule")
        if self.periods[0].tau_on != 0.0:
            raise ScheduleError("first ON instant must be 0")
        for k, p in enumerate(self.periods):
            if not (p.tau_on < p.tau_off <= p.tau_next):
                raise ScheduleError(f"period {k} is not ordered: {p}")
            if k + 1 < len(self.periods) and self.periods[k + 1].tau_on != p.tau_next:
                raise ScheduleError(f"gap after period {k}")
        if self.periods[-1].tau_next < self.horizon:
            raise ScheduleError("schedule does not cover the horizon")

    @property
    def T_max(self) -> float:
        return max(p.length for p in self.periods)

    @property
    def boundaries(self) -> np.ndarray:
        """Switch instants in order of occurrence (ON, OFF, ON, ...)."""
        out = []
        for p in self.periods:
            out.extend((p.tau_on, p.tau_off))
        out.append(self.periods[-1].tau_next)
        return np.array(out)

    def snapped(self, grid: float) -> "ModeSchedule":
        """Round every switch instant to the nearest multiple of ``grid``.

        ON intervals shorter than one grid cell are kept one cell long.
        """
        periods = []
        t0 = 0.0
        for p in self.periods:
            on_ticks = max(1, int(round(p.tau_off / grid)) - int(round(t0 / grid)))
            tau_off = (int(round(t0 / grid)) + on_ticks) * grid
            next_ticks = max(int(round(p.tau_next / grid)), int(round(tau_off / grid)))
            tau_next = next_ticks * grid
            periods.append(Period(t0, tau_off, tau_next))
            t0 = tau_next
        horizon = self.horizon
        if periods[-1].tau_next < horizon:
            last = periods[-1]
            periods[-1] = Period(last.tau_on, last.tau_off, horizon)
        return ModeSchedule(tuple(periods), horizon)


def generate(
    on_range: tuple[float, float],
    off_fraction: float,
    design: DesignOutput,
    horizon: float,
    seed: int | np.random.SeedSequence,
) -> ModeSchedule:
    """Random ON durations with OFF time a fixed fraction of the OFF budget."""
    g_lo, g_hi = on_range
    if not (0 < g_lo <= g_hi):
        raise ScheduleError("need 0 < g_lo <= g_hi")
    if not (0 <= off_fraction <= 1):
        raise ScheduleError(f"off_fraction must lie in [0, 1], got {off_fraction}")
    if horizon < 0:
        raise ScheduleError("negative horizon")
    rng = np.random.default_rng(seed)
    periods = []
    t = 0.0
    while True:
        on = float(rng.uniform(g_lo, g_hi))
        off = off_fraction * on * design.max_off_ratio
        periods.append(Period(t, t + on, t + on + off))
        t = t + on + off
        if t >= horizon:
            break
    return ModeSchedule(tuple(periods), float(horizon))


@dataclass(frozen=True)
class PeriodCertificate:
    kappa: int
    lambda_k: float
    feasible: bool


def certify(
    s: ModeSchedule, design: DesignOutput
) -> tuple[list[PeriodCertificate], float, bool]:
    """Per-period ``Lambda_k = da*G_k - db*C_k`` and the global minimum.

    A period is feasible only for strictly positive ``Lambda_k``. Values
    within a few ulps of zero are reported as exactly zero so that an OFF
    time equal to the budget lands on the boundary rather than on
    round-off noise.
    """
    certs = []
    da, db = design.delta_alpha, design.delta_beta
    for k, p in enumerate(s.periods):
        gain = da * p.on_duration
        loss = db * p.off_duration
        lam = gain - loss
        if abs(lam) <= 1e-12 * max(gain, loss, 1e-300):
            lam = 0.0
        certs.append(PeriodCertificate(k, lam, lam > 0))
    global_lambda = min(c.lambda_k for c in certs)
    return certs, global_lambda, all(c.feasible for c in certs)


def mode_at(s: ModeSchedule, t: float) -> Mode:
    if not (0 <= t < s.horizon):
        raise ScheduleError(f"t={t} outside [0, {s.horizon})")
    starts = np.fromiter((p.tau_on for p in s.periods), float)
    k = int(np.searchsorted(starts, t, side="right")) - 1
    return Mode.ON if t < s.periods[k].tau_off else Mode.OFF


def mode_ticks(s: ModeSchedule, dt: float, n_steps: int) -> np.ndarray:
    """Boolean ON mask for the grid instants ``k*dt``, ``k < n_steps``.

    Switch instants must already lie on the grid (see ``snapped``).
    """
    on = np.zeros(n_steps, dtype=bool)
    for p in s.periods:
        a = int(round(p.tau_on / dt))
        b = int(round(p.tau_off / dt))
        if a >= n_steps:
            break
        on[a:min(b, n_steps)] = True
    return on


def schedule_rows(s: ModeSchedule, certs: list[PeriodCertificate]) -> list[dict]:
    return [
        {
            "kappa": c.kappa,
            "tau_on": p.tau_on,
            "tau_off": p.tau_off,
            "tau_next": p.tau_next,
            "lambda_k": c.lambda_k,
            "feasible": int(c.feasible),
        }
        for p, c in zip(s.periods, certs)
    ]
