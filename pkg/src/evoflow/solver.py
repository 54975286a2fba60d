"""Numerical integration of the coupled occupancy and response dynamics.

Two engines produce identical trajectories up to floating-point ordering:

* a compiled fixed-step RK4 kernel (:mod:`evoflow._kernels`) used for matrix
  games with the standard environment models, where speed matters;
* a reference engine in plain numpy that additionally supports general
  reward families and the adaptive RK45 method.

Both apply the same per-step projection: stray negative entries (finite-step
artifacts near the boundary) are clamped to zero, and whenever the total
mass drifts from 1 by more than ``renormalize_threshold`` the whole
occupancy matrix is rescaled, which preserves all proportions. Response
matrices governed by their own dynamics are kept inside their invariant box
[0, m] the same way. Renormalizations and, for hard best-response
environments, changes of any argmax target set are logged as events.

Everything here is deterministic: identical scenarios produce bit-identical
trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dynamics import _replicator
from .environment import (
    BestResponseEnvironment,
    ConstantEnvironment,
    OutMigrationEnvironment,
    SinusoidalCapacity,
    StaticCapacity,
    best_response_phi,
    softmax_response_phi,
)
from .errors import (
    ConfigurationError,
    IntegrationError,
    UsageError,
    ValidationFailure,
)
from .model import DRIFT_ATOL, ExtendedState, MatrixGame, SystemState

try:
    from . import _kernels
    HAVE_FAST_ENGINE = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    _kernels = None
    HAVE_FAST_ENGINE = False


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration settings.

    ``dt`` is the fixed step for ``rk4`` and the initial step for ``rk45``.
    ``record_every`` thins the output to every n-th accepted step (the final
    state is always recorded). ``smooth_argmax_beta`` replaces the hard
    best-response argmax with a softmax of that temperature, which restores
    a smooth field at the cost of approximating the flow.
    """

    method: str = "rk4"
    dt: float = 1e-3
    t_end: float = 10.0
    abs_tol: float = 1e-9
    rel_tol: float = 1e-7
    renormalize_threshold: float = 1e-9
    record_every: int = 1
    smooth_argmax_beta: float | None = None
    engine: str = "auto"

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.dt <= 0.0:
            raise ConfigurationError("dt must be > 0")
        if self.t_end <= 0.0:
            raise ConfigurationError("t_end must be > 0")
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0:
            raise ConfigurationError("tolerances must be > 0")
        if self.renormalize_threshold <= 0.0:
            raise ConfigurationError("renormalize_threshold must be > 0")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be >= 1")
        if self.smooth_argmax_beta is not None and self.smooth_argmax_beta <= 0.0:
            raise ConfigurationError("smooth_argmax_beta must be > 0")
        if self.engine not in ("auto", "fast", "reference"):
            raise ConfigurationError(f"unknown engine {self.engine!r}")


class Event(NamedTuple):
    time: float
    kind: str


_EVENT_KINDS = {0: "renormalize", 1: "argmax_change"}


@dataclass
class Diagnostics:
    """Per-sample health indicators recorded alongside the trajectory."""

    mass_drift: np.ndarray       # |total mass - 1| before renormalization
    min_entry: np.ndarray        # smallest occupancy entry before clamping
    phi_row_sums: np.ndarray     # row sums of the active response matrix


@dataclass
class Trajectory:
    """Recorded solution samples plus diagnostics and events.

    ``xs`` has shape (samples, actions, communities); ``phis`` is only
    present for environments whose response matrix is part of the state.
    """

    times: np.ndarray
    xs: np.ndarray
    phis: np.ndarray | None
    diagnostics: Diagnostics
    events: list[Event]

    @property
    def n_samples(self) -> int:
        return self.times.shape[0]

    @property
    def y(self) -> np.ndarray:
        """Population states over time, shape (samples, actions)."""
        return self.xs.sum(axis=2)

    @property
    def eta(self) -> np.ndarray:
        """Community densities over time, shape (samples, communities)."""
        return self.xs.sum(axis=1)

    def state(self, i: int) -> ExtendedState:
        phi = self.phis[i] if self.phis is not None else None
        return ExtendedState(
            system=SystemState(self.xs[i], atol=DRIFT_ATOL),
            env_state=phi,
            t=float(self.times[i]),
        )

    @property
    def states(self) -> list[ExtendedState]:
        return [self.state(i) for i in range(self.n_samples)]

    def terminal_state(self) -> ExtendedState:
        return self.state(self.n_samples - 1)

    def event_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for ev in self.events:
            counts[ev.kind] = counts.get(ev.kind, 0) + 1
        return counts


def step_rk4(state, field, dt: float, t: float = 0.0):
    """One classical 4th-order Runge-Kutta step of size ``dt``.

    ``field(t, state)`` must return the derivative; ``state`` can be a
    scalar or any ndarray. Local error is O(dt**5) on smooth fields.
    """
    k1 = field(t, state)
    k2 = field(t + 0.5 * dt, state + (0.5 * dt) * k1)
    k3 = field(t + 0.5 * dt, state + (0.5 * dt) * k2)
    k4 = field(t + dt, state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ---------------------------------------------------------------------------
# Engine selection
# ---------------------------------------------------------------------------

def _fast_path_obstacle(scenario) -> str | None:
    """Why the compiled kernel cannot run this scenario (None when it can)."""
    cfg = scenario.integrator
    if not HAVE_FAST_ENGINE:
        return "compiled kernel unavailable (numba failed to import)"
    if cfg.method != "rk4":
        return f"method {cfg.method!r} is only implemented by the reference engine"
    if not isinstance(scenario.game, MatrixGame):
        return "general reward families need the reference engine"
    env = scenario.environment
    nh = scenario.network.n_communities
    if isinstance(env, BestResponseEnvironment):
        if cfg.smooth_argmax_beta is None and nh * nh > 62:
            return "argmax-change tracking supports at most 62 response entries"
        return None
    if isinstance(env, (ConstantEnvironment, OutMigrationEnvironment)):
        return None
    return f"environment {type(env).__name__} is not supported by the kernel"


def _n_steps(cfg: IntegratorConfig) -> int:
    n = int(round(cfg.t_end / cfg.dt))
    if n < 1:
        raise ConfigurationError(
            f"t_end={cfg.t_end:g} is shorter than one step dt={cfg.dt:g}"
        )
    return n


def integrate(scenario) -> Trajectory:
    """Solve a scenario from t=0 to t_end and record the trajectory.

    The scenario is validated first; assumption violations raise
    :class:`ValidationFailure` with the full report. Non-finite states and
    adaptive step-size underflow raise :class:`IntegrationError` carrying
    the last usable state.
    """
    report = scenario.validate()
    if not report.passed:
        raise ValidationFailure(report)
    cfg = scenario.integrator
    obstacle = _fast_path_obstacle(scenario)
    if cfg.engine == "fast" and obstacle is not None:
        raise ConfigurationError(f"fast engine requested but {obstacle}")
    use_fast = cfg.engine in ("auto", "fast") and obstacle is None and cfg.method == "rk4"
    if use_fast:
        return _integrate_fast(scenario)
    return _integrate_reference(scenario)


# ---------------------------------------------------------------------------
# Fast engine wrapper
# ---------------------------------------------------------------------------

def _env_kernel_params(scenario):
    env = scenario.environment
    cfg = scenario.integrator
    nh = scenario.network.n_communities
    empty = np.zeros(nh)
    if isinstance(env, ConstantEnvironment):
        return dict(kind=0, phi0=env.phi.copy(), alpha=empty, kappa=np.ones(nh),
                    tie_tol=0.0, beta=0.0, m=0.0, gamma=0.0, rho=0.0,
                    phase=empty, dyn=False, phi_hi=math.inf, track=False)
    if isinstance(env, BestResponseEnvironment):
        beta = cfg.smooth_argmax_beta or 0.0
        return dict(kind=1, phi0=np.zeros((nh, nh)), alpha=env.alpha.copy(),
                    kappa=env.kappa.copy(), tie_tol=env.tie_tolerance,
                    beta=beta, m=0.0, gamma=0.0, rho=0.0, phase=empty,
                    dyn=False, phi_hi=math.inf, track=beta == 0.0)
    phi0 = scenario.initial_state.env_state.copy()
    phi_hi = env.m if phi0.max() <= env.m else math.inf
    if isinstance(env.capacity, StaticCapacity):
        return dict(kind=2, phi0=phi0, alpha=empty, kappa=env.capacity.kappa.copy(),
                    tie_tol=0.0, beta=0.0, m=env.m, gamma=0.0, rho=0.0,
                    phase=empty, dyn=True, phi_hi=phi_hi, track=False)
    cap: SinusoidalCapacity = env.capacity
    return dict(kind=3, phi0=phi0, alpha=empty, kappa=np.ones(nh), tie_tol=0.0,
                beta=0.0, m=env.m, gamma=cap.gamma, rho=cap.rho,
                phase=cap.phase.copy(), dyn=True, phi_hi=phi_hi, track=False)


def _integrate_fast(scenario) -> Trajectory:
    cfg = scenario.integrator
    n_steps = _n_steps(cfg)
    x0 = scenario.initial_state.system.x.copy()
    na, nh = x0.shape
    p = _env_kernel_params(scenario)

    n_rec = n_steps // cfg.record_every + 1
    if n_steps % cfg.record_every:
        n_rec += 1
    times = np.empty(n_rec)
    xs = np.empty((n_rec, na, nh))
    phis = np.empty((n_rec, nh, nh)) if p["dyn"] else np.empty((1, 1, 1))
    drift = np.empty(n_rec)
    minent = np.empty(n_rec)
    rowsums = np.empty((n_rec, nh))
    ev_cap = 2 * n_steps + 2
    ev_time = np.empty(ev_cap)
    ev_kind = np.empty(ev_cap, np.int8)
    x_last = np.empty((na, nh))
    phi_last = np.empty((nh, nh))

    status, got, n_ev, fail_step = _kernels.rk4_fixed(
        x0, p["phi0"], scenario.game.payoff, scenario.network.W,
        scenario.network.Lambda, p["kind"], p["alpha"], p["kappa"],
        p["tie_tol"], p["beta"], p["m"], p["gamma"], p["rho"], p["phase"],
        cfg.dt, n_steps, cfg.record_every, cfg.renormalize_threshold,
        p["phi_hi"], p["track"], times, xs, phis, drift, minent, rowsums,
        ev_time, ev_kind, x_last, phi_last)

    events = [Event(float(ev_time[i]), _EVENT_KINDS[int(ev_kind[i])])
              for i in range(n_ev)]
    if status != 0:
        raise IntegrationError(
            f"state became non-finite at t={fail_step * cfg.dt:g}",
            last_time=(fail_step - 1) * cfg.dt,
            last_state=_last_state(x_last, phi_last if p["dyn"] else None,
                                   (fail_step - 1) * cfg.dt),
        )
    return Trajectory(
        times=times[:got], xs=xs[:got],
        phis=phis[:got] if p["dyn"] else None,
        diagnostics=Diagnostics(drift[:got], minent[:got], rowsums[:got]),
        events=events,
    )


def _last_state(x, phi, t):
    try:
        return ExtendedState(SystemState(x, atol=DRIFT_ATOL), env_state=phi, t=t)
    except Exception:
        return (x, phi, t)


# ---------------------------------------------------------------------------
# Reference engine
# ---------------------------------------------------------------------------

class _Recorder:
    """Accumulates samples, diagnostics, and events for the reference engine."""

    def __init__(self, dyn_phi: bool):
        self.dyn_phi = dyn_phi
        self.times: list[float] = []
        self.xs: list[np.ndarray] = []
        self.phis: list[np.ndarray] = []
        self.drift: list[float] = []
        self.minent: list[float] = []
        self.rowsums: list[np.ndarray] = []
        self.events: list[Event] = []

    def sample(self, t, x, phi_active, drift, minent):
        self.times.append(float(t))
        self.xs.append(x.copy())
        if self.dyn_phi:
            self.phis.append(phi_active.copy())
        self.drift.append(float(drift))
        self.minent.append(float(minent))
        self.rowsums.append(phi_active.sum(axis=1))

    def trajectory(self) -> Trajectory:
        return Trajectory(
            times=np.array(self.times),
            xs=np.array(self.xs),
            phis=np.array(self.phis) if self.dyn_phi else None,
            diagnostics=Diagnostics(
                np.array(self.drift), np.array(self.minent),
                np.array(self.rowsums)),
            events=self.events,
        )


def _integrate_reference(scenario) -> Trajectory:
    cfg = scenario.integrator
    game = scenario.game
    net = scenario.network
    env = scenario.environment
    Lam = net.Lambda
    W = net.W
    beta = cfg.smooth_argmax_beta
    dyn = isinstance(env, OutMigrationEnvironment)
    track = isinstance(env, BestResponseEnvironment) and beta is None

    x = scenario.initial_state.system.x.copy()
    na, nh = x.shape
    phi = scenario.initial_state.env_state.copy() if dyn else np.zeros((nh, nh))
    phi_hi = math.inf
    if dyn:
        phi_hi = env.m if phi.max() <= env.m else math.inf

    def active_phi(t, x_arr, phi_arr):
        if isinstance(env, ConstantEnvironment):
            return env.phi
        if isinstance(env, BestResponseEnvironment):
            eta = x_arr.sum(axis=0)
            if beta is not None:
                return softmax_response_phi(eta, env, Lam, beta)
            return best_response_phi(eta, env, Lam)
        return phi_arr

    def field(t, v):
        x_arr = v[:na * nh].reshape(na, nh)
        phi_arr = v[na * nh:].reshape(nh, nh) if dyn else None
        ph = active_phi(t, x_arr, phi_arr)
        r = game.rewards(x_arr.sum(axis=1))
        M = Lam * ph
        dx = x_arr @ M - x_arr * M.sum(axis=1)[None, :] + _replicator(x_arr, W, r)
        if not dyn:
            return dx.ravel()
        eta = x_arr.sum(axis=0)
        kappa = env.capacity.at(t)
        dphi = (phi_arr - env.m) * (1.0 - eta / kappa)[:, None] * phi_arr
        return np.concatenate((dx.ravel(), dphi.ravel()))

    def pack(x_arr, phi_arr):
        if dyn:
            return np.concatenate((x_arr.ravel(), phi_arr.ravel()))
        return x_arr.ravel().copy()

    rec = _Recorder(dyn)
    rec.sample(0.0, x, active_phi(0.0, x, phi), abs(x.sum() - 1.0), x.min())
    prev_fp = (best_response_phi(x.sum(axis=0), env, Lam) > 0).tobytes() if track else None
    last_good = (x.copy(), phi.copy() if dyn else None, 0.0)

    def postprocess(t1, v, accepted, n_total):
        nonlocal prev_fp, last_good
        x_new = v[:na * nh].reshape(na, nh).copy()
        phi_new = v[na * nh:].reshape(nh, nh).copy() if dyn else phi
        mn = float(x_new.min())
        np.clip(x_new, 0.0, None, out=x_new)
        if dyn:
            np.clip(phi_new, 0.0, phi_hi, out=phi_new)
        mass = float(x_new.sum())
        drift = abs(mass - 1.0)
        if drift > cfg.renormalize_threshold:
            x_new /= mass
            rec.events.append(Event(t1, "renormalize"))
        if not (np.all(np.isfinite(x_new)) and (not dyn or np.all(np.isfinite(phi_new)))):
            raise IntegrationError(
                f"state became non-finite at t={t1:g}",
                last_time=last_good[2],
                last_state=_last_state(*last_good[:2], last_good[2]),
            )
        last_good = (x_new.copy(), phi_new.copy() if dyn else None, t1)
        if track:
            fp = (best_response_phi(x_new.sum(axis=0), env, Lam) > 0).tobytes()
            if fp != prev_fp:
                rec.events.append(Event(t1, "argmax_change"))
                prev_fp = fp
        if accepted % cfg.record_every == 0 or accepted == n_total:
            rec.sample(t1, x_new, active_phi(t1, x_new, phi_new), drift, mn)
        return x_new, phi_new

    if cfg.method == "rk4":
        n_steps = _n_steps(cfg)
        v = pack(x, phi)
        for step in range(n_steps):
            v = step_rk4(v, field, cfg.dt, t=step * cfg.dt)
            x, phi = postprocess((step + 1) * cfg.dt, v, step + 1, n_steps)
            v = pack(x, phi)
        return rec.trajectory()

    _integrate_rk45(cfg, field, pack(x, phi), postprocess, pack)
    return rec.trajectory()


# Dormand-Prince 5(4) tableau; the 5th-order solution is propagated.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])


def _integrate_rk45(cfg, field, v0, postprocess, pack):
    t = 0.0
    v = v0
    h = cfg.dt
    accepted = 0
    k = [None] * 7
    while t < cfg.t_end - 1e-14 * max(1.0, cfg.t_end):
        h = min(h, cfg.t_end - t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise IntegrationError(f"step size underflow at t={t:g}", last_time=t)
        for i in range(7):
            vi = v if i == 0 else v + h * sum(
                a * ki for a, ki in zip(_DP_A[i], k[:i]))
            k[i] = field(t + _DP_C[i] * h, vi)
        v5 = v + h * sum(b * ki for b, ki in zip(_DP_B5, k) if b != 0.0)
        v4 = v + h * sum(b * ki for b, ki in zip(_DP_B4, k) if b != 0.0)
        err = v5 - v4
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(v), np.abs(v5))
        err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
        if not math.isfinite(err_norm):
            raise IntegrationError(f"non-finite error estimate at t={t:g}", last_time=t)
        if err_norm <= 1.0:
            t = t + h
            accepted += 1
            # treat the final accepted step as the recording terminator
            is_last = t >= cfg.t_end - 1e-14 * max(1.0, cfg.t_end)
            x_new, phi_new = postprocess(t, v5, accepted,
                                         accepted if is_last else -1)
            v = pack(x_new, phi_new)
        factor = 5.0 if err_norm == 0.0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
        h = h * factor


# ---------------------------------------------------------------------------
# Convergence detection
# ---------------------------------------------------------------------------

@dataclass
class SignalVerdict:
    """Outcome of convergence analysis for one signal.

    ``status`` is "converged", "oscillating", or "undecided"; ``period`` is
    only set for oscillating signals.
    """

    status: str
    terminal: np.ndarray
    max_variation: float
    period: float | None = None


@dataclass
class ConvergenceReport:
    y: SignalVerdict
    eta: SignalVerdict
    x: SignalVerdict


def _signal_verdict(times: np.ndarray, samples: np.ndarray, eps: float,
                    terminal_shape) -> SignalVerdict:
    flat = samples.reshape(samples.shape[0], -1)
    variation = flat.max(axis=0) - flat.min(axis=0)
    max_var = float(variation.max())
    terminal = samples[-1].reshape(terminal_shape)
    if max_var < eps:
        return SignalVerdict("converged", terminal, max_var)
    s = flat[:, int(np.argmax(variation))]
    s = s - s.mean()
    crossings = []
    for j in range(len(s) - 1):
        if s[j] == 0.0 or s[j] * s[j + 1] >= 0.0:
            continue
        frac = s[j] / (s[j] - s[j + 1])
        crossings.append(times[j] + frac * (times[j + 1] - times[j]))
    if len(crossings) >= 3:
        # crossings two apart are in the same direction, one period apart
        periods = np.array(crossings[2:]) - np.array(crossings[:-2])
        mean_p = float(periods.mean())
        if len(periods) == 1 or float(periods.std()) <= 0.2 * mean_p:
            return SignalVerdict("oscillating", terminal, max_var, mean_p)
    return SignalVerdict("undecided", terminal, max_var)


def detect_convergence(traj: Trajectory, window: float, eps: float) -> ConvergenceReport:
    """Classify the tail behavior of y(t), eta(t) and x(t).

    A signal whose components all vary by less than ``eps`` over the
    trailing ``window`` time units has converged. Otherwise the dominant
    period is estimated from the zero crossings of the mean-removed
    largest-swing component; regular crossings mean the signal oscillates,
    anything else is undecided.
    """
    span = float(traj.times[-1] - traj.times[0])
    if window > span:
        raise UsageError(
            f"window {window:g} exceeds the trajectory span {span:g}")
    tail = traj.times >= traj.times[-1] - window - 1e-12
    times = traj.times[tail]
    xs = traj.xs[tail]
    na, nh = xs.shape[1], xs.shape[2]
    return ConvergenceReport(
        y=_signal_verdict(times, xs.sum(axis=2), eps, (na,)),
        eta=_signal_verdict(times, xs.sum(axis=1), eps, (nh,)),
        x=_signal_verdict(times, xs, eps, (na, nh)),
    )


# ---------------------------------------------------------------------------
# Trajectory invariant checks
# ---------------------------------------------------------------------------

def check_trajectory_invariants(traj: Trajectory, scenario) -> list[str]:
    """Violations of the invariants every recorded trajectory must satisfy.

    Returns an empty list when the trajectory is healthy.
    """
    problems: list[str] = []
    if not np.all(np.diff(traj.times) > 0.0):
        problems.append("recorded times are not strictly increasing")
    if traj.xs.min() < -1e-12:
        problems.append(
            f"recorded occupancy entry below -1e-12: {traj.xs.min():g}")
    mass_err = np.abs(traj.xs.sum(axis=(1, 2)) - 1.0).max()
    if mass_err > DRIFT_ATOL:
        problems.append(f"recorded mass drifts by {mass_err:g} (> {DRIFT_ATOL:g})")
    if traj.diagnostics.mass_drift.max() > DRIFT_ATOL:
        problems.append(
            f"pre-renormalization drift {traj.diagnostics.mass_drift.max():g} "
            f"exceeds {DRIFT_ATOL:g}")
    if traj.diagnostics.min_entry.min() < -DRIFT_ATOL:
        problems.append(
            f"pre-clamp entry {traj.diagnostics.min_entry.min():g} below "
            f"-{DRIFT_ATOL:g}")
    env = scenario.environment
    rows = traj.diagnostics.phi_row_sums
    if isinstance(env, BestResponseEnvironment):
        ok = np.isclose(rows, 1.0, atol=1e-9) | np.isclose(rows, 0.0, atol=1e-9)
        if not ok.all():
            problems.append("best-response rows do not sum to 1 (or 0 when isolated)")
    if isinstance(env, OutMigrationEnvironment) and traj.phis is not None:
        if traj.phis.min() < -1e-12:
            problems.append(f"response entry below 0: {traj.phis.min():g}")
        phi0 = traj.phis[0]
        if phi0.max() <= env.m and traj.phis.max() > env.m + 1e-9:
            problems.append(
                f"response left its invariant box [0, {env.m:g}]: "
                f"max {traj.phis.max():g}")
    return problems
