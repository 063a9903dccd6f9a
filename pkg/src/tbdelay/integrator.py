"""Fixed-step integration of the delayed TB dynamics.

Two entry points share one grid convention (the step must divide every
positive delay, so derivative discontinuities land on nodes):

* :func:`integrate` -- classic fourth-order method of steps for the full
  five-compartment system, with cubic-Hermite dense output.  Piecewise
  constant control sources are honored exactly by splitting steps at the
  delayed images of their jump times.
* :func:`propagate_reduced` -- implicit-trapezoid propagation of the
  four-state reduction driven by node controls.  This is the state
  elimination used by the optimal control transcription; its discrete
  adjoint lives next to it in the kernels.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BlowupError, GridError, ParameterDomainError, RangeError
from .model import ModelParams, StateVec

__all__ = [
    "DelayConfig",
    "HistorySpec",
    "Grid",
    "Trajectory",
    "PiecewiseConstantControl",
    "integrate",
    "propagate_reduced",
]

TRAJECTORY_CSV_HEADER = "t,S,L1,I,L2,R,u1,u2"


@dataclass(frozen=True)
class DelayConfig:
    """Constant lags: d_i on the infectious state, d_u1/d_u2 on the controls."""

    d_i: float = 0.0
    d_u1: float = 0.0
    d_u2: float = 0.0

    def __post_init__(self):
        for name in ("d_i", "d_u1", "d_u2"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ParameterDomainError(f"{name} must be finite and >= 0, got {v!r}")

    @classmethod
    def paper_scenario(cls, d_u1: float = 0.2, d_u2: float = 0.2) -> "DelayConfig":
        """State delay 0.1 with control delays in the studied band [0.05, 0.2]."""
        for name, v in (("d_u1", d_u1), ("d_u2", d_u2)):
            if not (0.05 <= v <= 0.2):
                raise ParameterDomainError(
                    f"{name} must lie in [0.05, 0.2] for this scenario, got {v!r}")
        return cls(d_i=0.1, d_u1=d_u1, d_u2=d_u2)

    @property
    def max_delay(self) -> float:
        return max(self.d_i, self.d_u1, self.d_u2)


@dataclass(frozen=True)
class HistorySpec:
    """Initial state at t = 0 plus the constant pre-initial history.

    ``i_history`` is the constant value of I on [-d_i, 0]; the controls are
    held at ``control_history`` before t = 0.
    """

    initial_state: StateVec
    i_history: float
    control_history: tuple = (0.0, 0.0)

    def __post_init__(self):
        x = self.initial_state.as_array()
        if np.any(x < 0) or not np.all(np.isfinite(x)):
            raise ParameterDomainError("initial state must be finite and non-negative")
        if not math.isfinite(self.i_history) or self.i_history < 0:
            raise ParameterDomainError("i_history must be finite and >= 0")
        if abs(self.i_history - self.initial_state.i) > 1e-9 * max(1.0, self.initial_state.total):
            raise ParameterDomainError(
                "constant I history must match the initial I (history covers t = 0)")

    @classmethod
    def paper_scenario(cls, p: ModelParams) -> "HistorySpec":
        """The (76, 36, 5, 2, 1)/120 split of the population with zero control history."""
        n = p.n_pop
        state = StateVec(76 / 120 * n, 36 / 120 * n, 5 / 120 * n, 2 / 120 * n, 1 / 120 * n)
        return cls(initial_state=state, i_history=5 / 120 * n)

    def check_population(self, p: ModelParams):
        if abs(self.initial_state.total - p.n_pop) > 1e-9 * p.n_pop:
            raise ParameterDomainError(
                f"initial state sums to {self.initial_state.total!r}, expected {p.n_pop!r}")


@dataclass(frozen=True)
class Grid:
    """Uniform time grid on [0, t_f] with n_steps steps."""

    t_f: float
    n_steps: int

    def __post_init__(self):
        if self.t_f < 0 or not math.isfinite(self.t_f):
            raise ParameterDomainError(f"t_f must be finite and >= 0, got {self.t_f!r}")
        if self.n_steps < 0 or (self.t_f > 0 and self.n_steps < 1):
            raise ParameterDomainError("n_steps must be >= 1 for a positive horizon")

    @property
    def h(self) -> float:
        return self.t_f / self.n_steps if self.n_steps else 0.0

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_f, self.n_steps + 1)

    def validate_delays(self, delays: DelayConfig):
        """Every positive delay must be an integer number of steps."""
        if self.n_steps == 0:
            if delays.max_delay > 0:
                raise GridError("zero-horizon grid cannot carry positive delays")
            return
        for name in ("d_i", "d_u1", "d_u2"):
            d = getattr(delays, name)
            if d == 0:
                continue
            ratio = d / self.h
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise GridError(
                    f"step {self.h!r} does not divide delay {name} = {d!r}")

    def lag_steps(self, d: float) -> int:
        return int(round(d / self.h)) if d > 0 else 0


@dataclass(frozen=True)
class PiecewiseConstantControl:
    """Bang-style control source: per-control initial level and switch times.

    Levels toggle between 0 and 1 at each switch; this covers every control
    shape used by the bang-bang machinery.  ``value(t)`` evaluates exactly at
    the query time (no grid quantization).
    """

    initial: tuple = (0.0, 0.0)
    switches: tuple = ((), ())

    def __post_init__(self):
        for k in range(2):
            sw = self.switches[k]
            if any(b <= a for a, b in zip(sw, sw[1:])):
                raise ParameterDomainError("switch times must be strictly increasing")
            if any(s < 0 for s in sw):
                raise ParameterDomainError("switch times must be >= 0")

    def value(self, t: float) -> tuple:
        out = []
        for k in range(2):
            lvl = self.initial[k]
            for s in self.switches[k]:
                if t > s:
                    lvl = 1.0 - lvl
                else:
                    break
            out.append(lvl)
        return tuple(out)

    def jump_times(self) -> list:
        return sorted(set(self.switches[0]) | set(self.switches[1]))


ZERO_CONTROL = PiecewiseConstantControl()


@dataclass
class Trajectory:
    """Node samples of a simulated path plus dense-output support.

    ``times``/``states`` hold the uniform grid nodes (states are the five
    compartments); ``controls`` holds the *undelayed* control values at the
    nodes when a control source was supplied.  Dense evaluation interpolates
    on the refined internal partition, which also carries any split points
    introduced at control discontinuities.
    """

    grid: Grid
    delays: DelayConfig
    history: HistorySpec
    params: ModelParams
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray | None = None
    _seg_t: np.ndarray = field(default=None, repr=False)
    _seg_x: np.ndarray = field(default=None, repr=False)
    _seg_fl: np.ndarray = field(default=None, repr=False)
    _seg_fr: np.ndarray = field(default=None, repr=False)

    @property
    def n_pop(self) -> float:
        return self.params.n_pop

    def state_at_node(self, j: int) -> StateVec:
        return StateVec.from_array(self.states[j])

    def dense_eval(self, t: float) -> StateVec:
        """State at any time in [-max_delay, t_f]; history values before zero."""
        if not (-self.delays.max_delay - 1e-12 <= t <= self.grid.t_f + 1e-12):
            raise RangeError(
                f"t = {t!r} outside [{-self.delays.max_delay}, {self.grid.t_f}]")
        if t <= 0.0:
            init = self.history.initial_state
            if t == 0.0:
                return init
            return StateVec(init.s, init.l1, self.history.i_history, init.l2, init.r)
        ts = self._seg_t
        lo = bisect.bisect_right(ts, t) - 1
        lo = min(max(lo, 0), len(ts) - 2)
        if ts[lo] == t:
            return StateVec.from_array(self._seg_x[lo])
        tl, tr = ts[lo], ts[lo + 1]
        hh = tr - tl
        u = (t - tl) / hh
        h00 = (1 + 2 * u) * (1 - u) ** 2
        h10 = u * (1 - u) ** 2
        h01 = u * u * (3 - 2 * u)
        h11 = u * u * (u - 1)
        x = (h00 * self._seg_x[lo] + h10 * hh * self._seg_fl[lo]
             + h01 * self._seg_x[lo + 1] + h11 * hh * self._seg_fr[lo])
        return StateVec.from_array(x)

    def conservation_defect(self) -> float:
        """Largest deviation of the node population sums from N."""
        return float(np.max(np.abs(self.states.sum(axis=1) - self.n_pop)))

    def to_csv(self, path):
        """Write the node samples with full double precision."""
        n = len(self.times)
        u = self.controls if self.controls is not None else np.zeros((n, 2))
        with open(path, "w") as fh:
            fh.write(TRAJECTORY_CSV_HEADER + "\n")
            for j in range(n):
                row = [self.times[j], *self.states[j], u[j, 0], u[j, 1]]
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _delayed_control_segments(control, delays: DelayConfig, ts: np.ndarray,
                              history: HistorySpec):
    """Per-segment delayed control values (evaluated at segment midpoints)."""
    nseg = len(ts) - 1
    v1 = np.empty(nseg)
    v2 = np.empty(nseg)
    h1, h2 = history.control_history
    for j in range(nseg):
        tm = 0.5 * (ts[j] + ts[j + 1])
        q1 = tm - delays.d_u1
        q2 = tm - delays.d_u2
        if q1 < 0:
            v1[j] = h1
        else:
            v1[j] = control.value(q1)[0] if control is not None else 0.0
        if q2 < 0:
            v2[j] = h2
        else:
            v2[j] = control.value(q2)[1] if control is not None else 0.0
    return v1, v2


def _refined_partition(grid: Grid, delays: DelayConfig, control) -> np.ndarray:
    """Uniform nodes plus split points at delayed control discontinuities."""
    base = grid.times()
    extra = []
    if control is not None and hasattr(control, "jump_times"):
        jumps = control.jump_times()
        tol = 1e-10 * max(1.0, grid.t_f)
        for du in (delays.d_u1, delays.d_u2):
            for s in list(jumps) + ([0.0] if du > 0 else []):
                img = s + du
                if not (0.0 < img < grid.t_f):
                    continue
                # a jump already sitting on a node needs no split
                k = round(img / grid.h)
                if 0 <= k <= grid.n_steps and abs(img - base[int(k)]) <= tol:
                    continue
                extra.append(img)
    if not extra:
        return base
    return np.unique(np.concatenate([base, np.asarray(extra, dtype=float)]))


def integrate(p: ModelParams, delays: DelayConfig, hist: HistorySpec, grid: Grid,
              control=None) -> Trajectory:
    """Advance the controlled five-compartment system by the method of steps.

    ``control`` is None (zero controls), a :class:`PiecewiseConstantControl`
    (honored exactly through step splitting) or any object with a
    ``value(t) -> (u1, u2)`` method (sampled per sub-step).
    """
    grid.validate_delays(delays)
    hist.check_population(p)
    if grid.n_steps == 0:
        x0 = hist.initial_state.as_array()
        traj = Trajectory(grid=grid, delays=delays, history=hist, params=p,
                          times=np.array([0.0]), states=x0[None, :],
                          controls=np.zeros((1, 2)))
        traj._seg_t = np.array([0.0, 0.0])
        traj._seg_x = np.vstack([x0, x0])
        traj._seg_fl = np.zeros((1, 5))
        traj._seg_fr = np.zeros((1, 5))
        return traj

    ts = _refined_partition(grid, delays, control)
    v1seg, v2seg = _delayed_control_segments(control, delays, ts, hist)
    x0 = hist.initial_state.as_array()
    xs, fl, fr, bad = _kernels.rk4_sweep(x0, p.as_array(), delays.d_i, ts,
                                         v1seg, v2seg, hist.i_history)
    if bad >= 0:
        raise BlowupError(f"state became non-finite at t = {ts[bad]!r}", time=ts[bad])

    node_times = grid.times()
    idx = np.searchsorted(ts, node_times)
    idx = np.clip(idx, 0, len(ts) - 1)
    states = xs[idx]
    if control is None:
        controls = np.zeros((len(node_times), 2))
    else:
        controls = np.array([control.value(t) for t in node_times], dtype=float)
    traj = Trajectory(grid=grid, delays=delays, history=hist, params=p,
                      times=node_times, states=states, controls=controls)
    traj._seg_t = ts
    traj._seg_x = xs
    traj._seg_fl = fl
    traj._seg_fr = fr
    return traj


def propagate_reduced(p: ModelParams, delays: DelayConfig, hist: HistorySpec,
                      grid: Grid, u_nodes: np.ndarray) -> np.ndarray:
    """Implicit-trapezoid propagation of the four-state reduction.

    ``u_nodes`` holds the control values at the grid nodes, shape
    (n_steps + 1, 2).  Returns the node states, shape (n_steps + 1, 4).
    Used by the optimal control transcription; delays are index shifts.
    """
    grid.validate_delays(delays)
    hist.check_population(p)
    if hist.control_history != (0.0, 0.0):
        raise ParameterDomainError(
            "the reduced propagation assumes zero control history")
    x0 = hist.initial_state.as_array()[:4]
    mi = grid.lag_steps(delays.d_i)
    mu1 = grid.lag_steps(delays.d_u1)
    mu2 = grid.lag_steps(delays.d_u2)
    xs, bad = _kernels.trap_forward(
        x0, np.ascontiguousarray(u_nodes, dtype=float), hist.i_history,
        mi, mu1, mu2, grid.h, p.as_array(), 1e-13 * p.n_pop)
    if bad >= 0:
        raise BlowupError(f"state became non-finite at step {bad}", time=bad * grid.h)
    return xs
