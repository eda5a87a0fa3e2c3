"""Closed-loop simulation on a fixed grid.

The follower states, auxiliary states and adaptive weights form a single
ODE that is advanced with classical RK4. The communication mode and the
disturbance are held constant over each step (mode switches sit on the
grid); the controller and the consensus signal are evaluated at every RK
stage.

Several independent runs can be stacked into one batch: every array then
carries runs x followers on its leading axes and all runs advance
together. Per-row arithmetic does not depend on the batch size, so a run
is bit-identical whether it is simulated alone or inside an ensemble.

Seeding: ``split_seed(master, *keys)`` returns ``SeedSequence([master,
*keys])``. Initial states use key ``(IC,)``, the schedule ``(SCHEDULE,)``.
Disturbances of follower ``i`` in ensemble run ``r`` use
``SeedSequence([noise_seed_i, master, r])`` when per-follower noise seeds
are configured, otherwise ``split_seed(master, NOISE, r, i)``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import design as dsg
from .config import ConfigError, SimConfig
from .controller import BacksteppingController, ControllerParams
from .graph import Graph, min_eig_LB, pinned_laplacian
from .noise import NoiseProcess
from .plant import DIVERGENCE_LIMIT, AgentModel, get_model, plant_rhs
from .schedule import ModeSchedule, PeriodCertificate, ScheduleError, certify, generate, mode_ticks
from .virtual_layer import LeaderRef, lyapunov_Ve_series

log = logging.getLogger(__name__)

IC, SCHEDULE, NOISE = 1, 2, 3


def split_seed(master: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), *(int(k) for k in keys)])


@dataclass
class Setup:
    """Everything derived from a config before stepping starts."""

    cfg: SimConfig
    graph: Graph
    lambda_min: float
    design: dsg.DesignOutput
    residuals: dsg.Residuals
    schedule: ModeSchedule
    certificates: list[PeriodCertificate]
    global_lambda: float
    controller: BacksteppingController
    model: AgentModel
    leader: LeaderRef
    x0: np.ndarray
    eta0: np.ndarray

    @property
    def n_steps(self) -> int:
        return int(round(self.cfg.sim.horizon / self.cfg.sim.dt))


def build_graph(cfg: SimConfig) -> Graph:
    gc = cfg.graph
    edges = [(int(e[0]) - 1, int(e[1]) - 1, *(e[2:] if len(e) > 2 else [1.0])) for e in gc.edges]
    return Graph.from_edges(gc.n_followers, edges, gc.pinning)


def design_inputs(cfg: SimConfig) -> dsg.DesignInputs:
    d = cfg.design
    return dsg.DesignInputs(d.c0, d.c1, d.c2, d.c3, d.c_z, cfg.graph.n_followers)


def run_design(cfg: SimConfig, graph: Graph | None = None):
    """Gain synthesis for a config: returns ``(lambda_min, DesignOutput, Residuals)``.

    A configured ``P`` is used as-is after the residual check; otherwise the
    Riccati solver picks one.
    """
    graph = graph or build_graph(cfg)
    lam = min_eig_LB(graph)
    inputs = design_inputs(cfg)
    spec = dsg.ChainSpec(cfg.plant.order)
    if cfg.design.P is not None:
        P = np.asarray(cfg.design.P, float)
        if P.shape != (spec.order, spec.order):
            raise ConfigError(f"design.P must be {spec.order}x{spec.order}")
        res = dsg.residuals(P, spec, inputs.c1, inputs.c3)
        if not res.passes() or np.linalg.eigvalsh(P)[0] <= 0:
            raise dsg.InfeasibleDesign("configured P fails the matrix inequalities")
    else:
        P, res = dsg.solve_P(spec, inputs.c1, inputs.c3)
    K = dsg.make_gain(P, spec, inputs.c0, lam)
    return lam, dsg.rates(P, inputs, K), res


def make_schedule(cfg: SimConfig, design: dsg.DesignOutput) -> ModeSchedule:
    sc = cfg.schedule
    raw = generate(tuple(sc.on_range), sc.off_fraction, design, cfg.sim.horizon, split_seed(cfg.sim.seed, SCHEDULE))
    return raw.snapped(sc.grid)


def prepare(cfg: SimConfig) -> Setup:
    cfg.validate()
    graph = build_graph(cfg)
    lam, out, res = run_design(cfg, graph)
    sched = make_schedule(cfg, out)
    certs, glam, ok = certify(sched, out)
    if not ok:
        raise ScheduleError(f"schedule violates the dwell-time condition (min Lambda = {glam:.4g})")
    n, N = cfg.plant.order, graph.n_followers
    cc = cfg.controller
    params = ControllerParams(n, cc.K_gain, cc.rho, cc.sigma_mod, cc.gamma)
    controller = BacksteppingController(params, cc.rbf_range, cc.rbf_per_dim)
    model = get_model(cfg.plant.nonlinearity, n, cfg.noise.dim)
    if cfg.plant.x0 is not None:
        x0 = np.asarray(cfg.plant.x0, float).reshape(N, n)
    else:
        rng = np.random.default_rng(split_seed(cfg.sim.seed, IC))
        x0 = np.zeros((N, n))
        x0[:, 0] = rng.uniform(-cfg.plant.x0_box, cfg.plant.x0_box, N)
    eta0 = np.zeros((N, n)) if cfg.sim.eta0 is None else np.asarray(cfg.sim.eta0, float).reshape(N, n)
    lc = cfg.leader
    return Setup(cfg, graph, lam, out, res, sched, certs, glam, controller, model,
                 LeaderRef(lc.amplitude, lc.omega, lc.phase), x0, eta0)


def noise_seed(cfg: SimConfig, run: int, agent: int) -> np.random.SeedSequence:
    seeds = cfg.noise.seeds
    if seeds is not None:
        return np.random.SeedSequence([int(seeds[agent]), int(cfg.sim.seed), int(run)])
    return split_seed(cfg.sim.seed, NOISE, run, agent)


def noise_paths(setup: Setup, runs: list[int]) -> np.ndarray:
    """Disturbance samples on the grid: ``(R, steps + 1, N, m)``."""
    cfg = setup.cfg
    nz = cfg.noise
    N, steps = setup.graph.n_followers, setup.n_steps
    out = np.zeros((len(runs), steps + 1, N, nz.dim))
    if nz.power == 0:
        return out
    for r_i, r in enumerate(runs):
        for i in range(N):
            p = NoiseProcess(nz.dim, nz.time_constant, nz.power, nz.correlation_time, seed=noise_seed(cfg, r, i))
            out[r_i, :, i, :] = p.path(cfg.sim.dt, steps)
    return out


# --------------------------------------------------------------------------- batch core


@dataclass
class BatchResult:
    t: np.ndarray
    runs: list[int]
    on: np.ndarray  # (T,) shared schedule
    zr: np.ndarray  # (T,)
    track_err: np.ndarray  # (R, T, N) z_i - z_r
    Ve: np.ndarray  # (R, T)
    theta_norm: np.ndarray  # (R, T, N)
    diverged_at: list  # per run: None or step index
    messages: list
    # full logs (None unless kept)
    x: np.ndarray | None = None  # (R, T, N, n)
    eta: np.ndarray | None = None
    zeta: np.ndarray | None = None
    e: np.ndarray | None = None
    alpha: np.ndarray | None = None  # (R, T, N, n-1)
    u: np.ndarray | None = None  # (R, T, N)
    xi: np.ndarray | None = None  # (R, T, N, m)


class _Dynamics:
    def __init__(self, setup: Setup, R: int):
        self.setup = setup
        self.R = R
        self.N = setup.graph.n_followers
        self.n = setup.cfg.plant.order
        self.LB = pinned_laplacian(setup.graph)
        self.b = setup.graph.pinning.copy()
        self.K = setup.design.K.reshape(-1)
        self.ids = np.tile(np.arange(1, self.N + 1, dtype=float), R)
        self.ctrl = setup.controller
        self.model = setup.model
        self.leader = setup.leader

    def zbar(self, t: float) -> np.ndarray:
        return self.leader.zbar(t, self.n)

    def __call__(self, t, x, eta, thetas, on, xi):
        R, N, n = self.R, self.N, self.n
        zb = self.zbar(t)
        coupling = -np.einsum("ij,rjk->rik", self.LB, eta) + self.b[None, :, None] * zb[None, None, :]
        zeta = coupling * on[:, None, None]
        deta = np.empty_like(eta)
        deta[..., :-1] = eta[..., 1:]
        deta[..., -1] = np.einsum("rik,k->ri", zeta, self.K)
        eta_rows = eta.reshape(R * N, n)
        g = self.model.gain(x, self.ids)
        out = self.ctrl.compute(x, eta_rows, g, thetas)
        dx = plant_rhs(self.model, x, out.u, xi, self.ids)
        dth = self.ctrl.weight_rhs(out, thetas)
        return dx, deta, dth, (zeta, out)


def _axpy(base, k, h):
    x, eta, th = base
    dx, de, dth = k
    return x + h * dx, eta + h * de, [a + h * b for a, b in zip(th, dth)]


def simulate_batch(setup: Setup, runs: list[int], keep_full: bool = True, xi: np.ndarray | None = None) -> BatchResult:
    cfg = setup.cfg
    dt = cfg.sim.dt
    steps = setup.n_steps
    R, N, n = len(runs), setup.graph.n_followers, cfg.plant.order
    T = steps + 1
    t_grid = np.arange(T) * dt
    on_grid = mode_ticks(setup.schedule, dt, T)
    if xi is None:
        xi = noise_paths(setup, runs)
    dyn = _Dynamics(setup, R)

    x = np.tile(setup.x0, (R, 1))
    eta = np.tile(setup.eta0[None], (R, 1, 1))
    thetas = setup.controller.zero_weights(R * N)

    zr = setup.leader.derivative(t_grid, 0)
    zbars = np.stack([setup.leader.derivative(t_grid, l) for l in range(n)], axis=1)
    track = np.zeros((R, T, N))
    th_norm = np.zeros((R, T, N))
    eta_log = np.zeros((R, T, N, n))
    full = {}
    if keep_full:
        full = dict(
            x=np.zeros((R, T, N, n)),
            zeta=np.zeros((R, T, N, n)),
            e=np.zeros((R, T, N, n)),
            alpha=np.zeros((R, T, N, max(n - 1, 0))),
            u=np.zeros((R, T, N)),
            xi=xi,
        )
    diverged = [None] * R
    messages = [""] * R
    alive = np.ones(R, dtype=bool)

    def record(k, xk, etak, thk, aux):
        zeta, out = aux
        track[:, k] = xk[:, 0].reshape(R, N) - zr[k]
        eta_log[:, k] = etak
        th_norm[:, k] = np.sqrt(sum(np.sum(t_**2, axis=1) for t_ in thk)).reshape(R, N)
        if keep_full:
            full["x"][:, k] = xk.reshape(R, N, n)
            full["zeta"][:, k] = zeta
            full["e"][:, k] = out.e.reshape(R, N, n)
            full["alpha"][:, k] = out.alpha.reshape(R, N, -1)
            full["u"][:, k] = out.u.reshape(R, N)

    for k in range(T):
        t = k * dt
        on = np.full(R, on_grid[k], dtype=float)
        xik = xi[:, k].reshape(R * N, -1)
        d1 = dyn(t, x, eta, thetas, on, xik)
        record(k, x, eta, thetas, d1[3])
        if k == steps:
            break
        state = (x, eta, thetas)
        k1 = d1[:3]
        k2 = dyn(t + 0.5 * dt, *_axpy(state, k1, 0.5 * dt), on, xik)[:3]
        k3 = dyn(t + 0.5 * dt, *_axpy(state, k2, 0.5 * dt), on, xik)[:3]
        k4 = dyn(t + dt, *_axpy(state, k3, dt), on, xik)[:3]
        h6 = dt / 6.0
        nx = x + h6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        neta = eta + h6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        nth = [th + h6 * (a + 2 * b + 2 * c + d) for th, a, b, c, d in zip(thetas, k1[2], k2[2], k3[2], k4[2])]

        bad = _bad_runs(nx, neta, nth, R, N)
        if np.any(bad & alive):
            for r in np.flatnonzero(bad & alive):
                diverged[r] = k + 1
                messages[r] = f"run {runs[r]} diverged at t={(k + 1) * dt:.4f}s"
                log.warning(messages[r])
            alive &= ~bad
        # frozen runs keep their last finite state
        keep = np.repeat(~alive, N)
        nx[keep] = x[keep]
        neta[~alive] = eta[~alive]
        for a, b in zip(nth, thetas):
            a[keep] = b[keep]
        x, eta, thetas = nx, neta, nth

    P = setup.design.P
    Ve = np.stack([lyapunov_Ve_series(eta_log[r], zbars, P) for r in range(R)])
    return BatchResult(t_grid, list(runs), on_grid, zr, track, Ve, th_norm, diverged, messages,
                       eta=eta_log, **full)


def _bad_runs(x, eta, thetas, R, N):
    def per_run(a):
        a = a.reshape(R, -1)
        return ~np.all(np.isfinite(a), axis=1) | np.any(np.abs(a) > DIVERGENCE_LIMIT, axis=1)

    bad = per_run(x) | per_run(eta)
    for th in thetas:
        bad |= ~np.all(np.isfinite(th.reshape(R, -1)), axis=1)
    return bad


# --------------------------------------------------------------------------- traces


@dataclass
class SimTrace:
    """One run on the uniform grid; truncated at divergence."""

    t: np.ndarray
    mode: np.ndarray
    z_r: np.ndarray
    x: np.ndarray  # (T, N, n)
    eta: np.ndarray
    zeta: np.ndarray
    e: np.ndarray
    alpha: np.ndarray
    u: np.ndarray  # (T, N)
    xi: np.ndarray  # (T, N, m)
    Ve: np.ndarray
    theta_norm: np.ndarray  # (T, N)
    run: int = 0
    diverged_at: int | None = None
    message: str = ""
    setup: Setup | None = field(default=None, repr=False)

    @property
    def V_i(self) -> np.ndarray:
        """Error-energy part of each follower's Lyapunov function, ``sum e^2 / 2``."""
        return 0.5 * np.sum(self.e**2, axis=-1)

    @property
    def tracking_error(self) -> np.ndarray:
        return self.x[:, :, 0] - self.z_r[:, None]

    def header(self, log_noise: bool = True) -> list[str]:
        N, n = self.x.shape[1], self.x.shape[2]
        m = self.xi.shape[2]
        cols = ["t", "mode", "z_r"]
        for i in range(1, N + 1):
            cols += [f"x{i}_{q}" for q in range(1, n + 1)]
            cols += [f"eta{i}_{q}" for q in range(1, n + 1)]
            cols += [f"zeta{i}_{q}" for q in range(1, n + 1)]
            cols += [f"e{i}_{q}" for q in range(1, n + 1)]
            cols += [f"alpha{i}_{q}" for q in range(1, n)]
            cols += [f"u{i}"]
            if log_noise:
                cols += [f"xi{i}_{k}" for k in range(1, m + 1)]
            cols += [f"V{i}", f"theta_norm{i}"]
        cols.append("V_e")
        return cols

    def table(self, log_noise: bool = True) -> np.ndarray:
        T = self.t.shape[0]
        N = self.x.shape[1]
        parts = [self.t[:, None], self.mode[:, None].astype(float), self.z_r[:, None]]
        Vi = self.V_i
        for i in range(N):
            parts += [self.x[:, i], self.eta[:, i], self.zeta[:, i], self.e[:, i], self.alpha[:, i], self.u[:, i, None]]
            if log_noise:
                parts.append(self.xi[:, i])
            parts += [Vi[:, i, None], self.theta_norm[:, i, None]]
        parts.append(self.Ve[:, None])
        return np.hstack(parts) if T else np.zeros((0, len(self.header(log_noise))))

    def to_csv(self, path: str | Path, log_noise: bool = True):
        header = ",".join(self.header(log_noise))
        with open(path, "w") as fh:
            fh.write(header + "\n")
            tab = self.table(log_noise)
            if tab.shape[0]:
                np.savetxt(fh, tab, delimiter=",", fmt="%.12g")


def _trace_from_batch(b: BatchResult, r: int, setup: Setup) -> SimTrace:
    end = b.t.shape[0] if b.diverged_at[r] is None else b.diverged_at[r]
    sl = slice(0, end)
    return SimTrace(
        t=b.t[sl], mode=b.on[sl].astype(int), z_r=b.zr[sl],
        x=b.x[r, sl], eta=b.eta[r, sl], zeta=b.zeta[r, sl], e=b.e[r, sl], alpha=b.alpha[r, sl],
        u=b.u[r, sl], xi=b.xi[r, sl], Ve=b.Ve[r, sl], theta_norm=b.theta_norm[r, sl],
        run=b.runs[r], diverged_at=b.diverged_at[r], message=b.messages[r], setup=setup,
    )


def run(cfg: SimConfig, run_index: int = 0, setup: Setup | None = None) -> SimTrace:
    setup = setup or prepare(cfg)
    b = simulate_batch(setup, [run_index], keep_full=True)
    return _trace_from_batch(b, 0, setup)


def empty_trace(setup: Setup) -> SimTrace:
    """Header-only trace for a zero-length horizon."""
    N, n, m = setup.graph.n_followers, setup.cfg.plant.order, setup.cfg.noise.dim
    z = np.zeros
    return SimTrace(z(0), z(0, int), z(0), z((0, N, n)), z((0, N, n)), z((0, N, n)), z((0, N, n)),
                    z((0, N, max(n - 1, 0))), z((0, N)), z((0, N, m)), z(0), z((0, N)), setup=setup)


# --------------------------------------------------------------------------- ensembles


@dataclass
class EnsembleResult:
    setup: Setup
    runs: list[int]
    t: np.ndarray
    on: np.ndarray
    track_err: np.ndarray  # (R, T, N)
    Ve: np.ndarray
    theta_norm: np.ndarray
    diverged_at: list
    messages: list
    traces: list[SimTrace] = field(default_factory=list)

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    def final_window(self, seconds: float) -> slice:
        start = int(np.searchsorted(self.t, self.t[-1] - seconds - 1e-12))
        return slice(start, None)

    def summary(self, window: float = 5.0) -> dict:
        sl = self.final_window(window)
        err = np.abs(self.track_err[:, sl])
        return {
            "runs": self.n_runs,
            "diverged": sum(d is not None for d in self.diverged_at),
            "mean_abs_err_final": err.mean(axis=(1,)).tolist(),
            "sup_abs_err_final": err.max(axis=1).tolist(),
            "theta_norm_max": self.theta_norm.max(axis=1).tolist(),
        }


def _chunk_worker(args):
    cfg, runs, keep_full = args
    setup = prepare(cfg)
    return simulate_batch(setup, runs, keep_full=keep_full)


def run_ensemble(
    cfg: SimConfig,
    runs: int,
    run_offset: int = 0,
    keep_traces: bool = True,
    chunk: int = 20,
    workers: int = 1,
) -> EnsembleResult:
    """Independent disturbance realizations on a shared schedule and initial state.

    Run ``r`` (``run_offset <= r < run_offset + runs``) draws its own noise
    streams; a run that diverges is truncated and the rest carry on.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    setup = prepare(cfg)
    idx = list(range(run_offset, run_offset + runs))
    chunks = [idx[i : i + chunk] for i in range(0, runs, chunk)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_chunk_worker, [(cfg, c, keep_traces) for c in chunks]))
    else:
        results = [simulate_batch(setup, c, keep_full=keep_traces) for c in chunks]

    traces = []
    if keep_traces:
        for b in results:
            traces += [_trace_from_batch(b, r, setup) for r in range(len(b.runs))]
    first = results[0]
    return EnsembleResult(
        setup=setup,
        runs=idx,
        t=first.t,
        on=first.on,
        track_err=np.concatenate([b.track_err for b in results]),
        Ve=np.concatenate([b.Ve for b in results]),
        theta_norm=np.concatenate([b.theta_norm for b in results]),
        diverged_at=sum((b.diverged_at for b in results), []),
        messages=sum((b.messages for b in results), []),
        traces=traces,
    )


def grid_check(setup: Setup) -> bool:
    """Every switch instant of the schedule lies on the simulation grid."""
    dt = setup.cfg.sim.dt
    b = setup.schedule.boundaries
    return bool(np.all(np.abs(b / dt - np.round(b / dt)) < 1e-6))

