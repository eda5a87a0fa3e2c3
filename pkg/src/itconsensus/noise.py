"""Colored disturbance generator.

White noise is modelled as a held-sample Gaussian sequence: a fresh
zero-mean sample with variance ``power / t_c`` every ``t_c`` seconds, held
constant in between. It drives a first-order low-pass filter
``xi' = (w - xi) / time_constant`` that is integrated exactly (the input is
piecewise constant), so the output does not depend on the step size.

Every process owns a ``numpy.random.Generator`` on a PCG64 bit generator
seeded from its own seed (an int or a ``SeedSequence``).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import lfilter

# seeds the original experiment used for followers 1..4; kept as defaults
PAPER_SEEDS = (23341, 34243, 23343, 34241)


class NoiseError(ValueError):
    pass


def _generator(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class NoiseProcess:
    def __init__(
        self,
        dim: int = 1,
        time_constant: float = 0.1,
        power: float = 1.0,
        correlation_time: float = 0.1,
        seed=0,
        initial=None,
    ):
        if time_constant <= 0 or correlation_time <= 0 or power < 0:
            raise NoiseError("time_constant, correlation_time must be > 0 and power >= 0")
        self.dim = int(dim)
        self.time_constant = float(time_constant)
        self.power = float(power)
        self.correlation_time = float(correlation_time)
        self.seed = seed
        self._rng = _generator(seed)
        self.state = np.zeros(self.dim) if initial is None else np.array(initial, float)
        self.time = 0.0
        self._w = np.zeros(self.dim)
        self._next_draw = 0.0

    @property
    def sample_std(self) -> float:
        return math.sqrt(self.power / self.correlation_time)

    def _draw(self):
        self._w = self._rng.standard_normal(self.dim) * self.sample_std

    def step(self, dt: float) -> np.ndarray:
        """Advance by ``dt`` and return the new disturbance value."""
        if dt <= 0:
            raise NoiseError("dt must be positive")
        if dt > self.correlation_time * (1 + 1e-12):
            raise NoiseError("step larger than correlation time")
        t_end = self.time + dt
        while True:
            if self.time >= self._next_draw - 1e-12 * self.correlation_time:
                self._draw()
                self._next_draw += self.correlation_time
            seg_end = min(t_end, self._next_draw)
            h = seg_end - self.time
            if h > 0:
                a = math.exp(-h / self.time_constant)
                self.state = a * self.state + (1.0 - a) * self._w
            self.time = seg_end
            if t_end - self.time <= 1e-12 * dt:
                self.time = t_end
                break
        return self.state.copy()

    def path(self, dt: float, n_steps: int) -> np.ndarray:
        """Values at ``0, dt, ..., n_steps*dt``; shape ``(n_steps + 1, dim)``.

        Uses a vectorized filter when ``dt`` divides the correlation time
        and the process sits on a draw boundary; otherwise steps one by one.
        """
        out = np.empty((n_steps + 1, self.dim))
        out[0] = self.state
        ratio = self.correlation_time / dt
        hold = int(round(ratio))
        aligned = (
            abs(ratio - hold) < 1e-9 * ratio
            and abs(self.time - self._next_draw) < 1e-12 * self.correlation_time
        )
        if not aligned or n_steps == 0:
            for k in range(n_steps):
                out[k + 1] = self.step(dt)
            return out
        n_draws = -(-n_steps // hold)
        w = self._rng.standard_normal((n_draws, self.dim)) * self.sample_std
        u = np.repeat(w, hold, axis=0)[:n_steps]
        a = math.exp(-dt / self.time_constant)
        zi = (a * self.state)[None, :]
        out[1:] = lfilter([1.0 - a], [1.0, -a], u, axis=0, zi=zi)[0]
        self.state = out[-1].copy()
        self._w = w[-1]
        self.time += n_steps * dt
        self._next_draw += n_draws * self.correlation_time
        return out


def stationary_variance(time_constant: float, power: float, correlation_time: float, dt: float) -> float:
    """Phase-averaged stationary variance of the discretized held-sample filter.

    Per component. ``dt`` must divide ``correlation_time``.
    """
    hold = int(round(correlation_time / dt))
    s2 = power / correlation_time
    a = math.exp(-dt / time_constant)
    aM = a**hold
    # variance at draw instants: v0 = aM^2 v0 + (1 - aM)^2 s2
    v0 = s2 * (1 - aM) / (1 + aM)
    j = np.arange(hold)
    return float(np.mean(a ** (2 * j) * v0 + (1 - a**j) ** 2 * s2))


def second_moment_bound(
    p: NoiseProcess, horizon: float, ensemble: int, dt: float | None = None
) -> float:
    """Empirical ``sup_t E||xi(t)||^2`` from an ensemble of fresh copies of ``p``."""
    if ensemble < 10:
        raise NoiseError("ensemble must contain at least 10 runs")
    if p.power == 0:
        return 0.0
    dt = dt or p.correlation_time / 10
    n = int(round(horizon / dt))
    seeds = np.random.SeedSequence(_entropy(p.seed)).spawn(ensemble)
    acc = np.zeros(n + 1)
    for ss in seeds:
        q = NoiseProcess(p.dim, p.time_constant, p.power, p.correlation_time, seed=ss)
        acc += np.sum(q.path(dt, n) ** 2, axis=1)
    return float(np.max(acc / ensemble))


def _entropy(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed.entropy if seed.spawn_key == () else [seed.entropy, *seed.spawn_key]
    return seed
