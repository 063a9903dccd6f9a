"""Delayed optimal control of the TB model by reduced transcription.

The control values at the grid nodes are the decision variables; states are
eliminated through the implicit-trapezoid propagation of the four-state
reduction (same grid, delays as index shifts).  The objective gradient is the
exact discrete adjoint of that scheme, and minimization is a projected
limited-memory quasi-Newton iteration on the box [0, 1]^2.

For the linear-cost objective the optimal controls are bang-bang; converged
iterates are sharpened by thresholding at 1/2 and the switch times are then
refined on the zero crossings of the switching functions

    phi_k(t) = -W_k + eps_k * lam_{Lk}(t + d_uk) * Lk(t + d_uk),

which vanish where the control flips and equal -W_k on the terminal interval
[T - d_uk, T].  Adjoints follow the minimum-principle sign convention in
which the multipliers of a minimization problem are non-negative here; only
the infectious adjoint carries an advanced-time term.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ParameterDomainError
from .integrator import DelayConfig, Grid, HistorySpec, Trajectory
from .model import ModelParams, StateVec

__all__ = [
    "ObjectiveKind",
    "ObjectiveSpec",
    "OcpProblem",
    "OcpSolution",
    "BangBangReport",
    "running_cost",
    "solve",
    "objective_of_controls",
    "gradient_of_controls",
    "adjoint_backward",
    "switching_trace",
    "verify_bang_bang",
]


class ObjectiveKind(enum.Enum):
    L1 = "L1"
    L2 = "L2"


@dataclass(frozen=True)
class ObjectiveSpec:
    """Running-cost shape: infected burden plus linear or quadratic control cost."""

    kind: ObjectiveKind = ObjectiveKind.L1
    w1: float = 50.0
    w2: float = 50.0

    def __post_init__(self):
        if self.w1 <= 0 or self.w2 <= 0:
            raise ParameterDomainError("control weights must be positive")


@dataclass(frozen=True)
class OcpProblem:
    params: ModelParams
    delays: DelayConfig
    history: HistorySpec
    grid: Grid
    objective: ObjectiveSpec
    u_min: float = 0.0
    u_max: float = 1.0

    def __post_init__(self):
        self.grid.validate_delays(self.delays)
        self.history.check_population(self.params)
        if not (0.0 <= self.u_min <= self.u_max <= 1.0):
            raise ParameterDomainError("control bounds must satisfy 0 <= lo <= hi <= 1")

    @classmethod
    def paper_scenario(cls, beta=100.0, delays=None, objective=None,
                       n_steps=2500, t_f=5.0) -> "OcpProblem":
        p = ModelParams.baseline(beta=beta)
        return cls(
            params=p,
            delays=delays or DelayConfig(),
            history=HistorySpec.paper_scenario(p),
            grid=Grid(t_f=t_f, n_steps=n_steps),
            objective=objective or ObjectiveSpec(),
        )

    def lag_nodes(self):
        g = self.grid
        return (g.lag_steps(self.delays.d_i), g.lag_steps(self.delays.d_u1),
                g.lag_steps(self.delays.d_u2))


@dataclass
class BangBangReport:
    """Control-law verification on a converged solution."""

    switch_times: list                  # per control
    initial_levels: list                # per control (0 or 1)
    law_violations: list                # per control: node count violating the sign law
    checked_nodes: list                 # per control: nodes with |phi| above the tolerance band
    crossing_slopes: list               # per control: d(phi)/dt at each switch
    strict: bool                        # all crossings have negative slope, no violations
    notes: list = field(default_factory=list)


@dataclass
class OcpSolution:
    trajectory: Trajectory
    adjoints: np.ndarray                # (n+1, 4) continuous adjoint samples
    switching: np.ndarray               # (n+1, 2) switching-function samples
    objective_value: float
    controls: np.ndarray                # (n+1, 2) node controls
    switch_times: list                  # per control, from switching-function crossings
    initial_levels: list
    diagnostics: dict
    converged: bool

    @property
    def problem(self) -> "OcpProblem":
        return self.diagnostics["problem"]


def running_cost(state: StateVec, u, spec: ObjectiveSpec) -> float:
    """Instantaneous cost I + L2 plus the weighted control cost."""
    u1, u2 = (u.u1, u.u2) if hasattr(u, "u1") else (u[0], u[1])
    if spec.kind is ObjectiveKind.L2:
        return state.i + state.l2 + spec.w1 * u1 * u1 + spec.w2 * u2 * u2
    return state.i + state.l2 + spec.w1 * u1 + spec.w2 * u2


def _propagate(prob: OcpProblem, u: np.ndarray) -> np.ndarray:
    mi, mu1, mu2 = prob.lag_nodes()
    x0 = prob.history.initial_state.as_array()[:4]
    xs, bad = _kernels.trap_forward(
        x0, u, prob.history.i_history, mi, mu1, mu2, prob.grid.h,
        prob.params.as_array(), 1e-13 * prob.params.n_pop)
    if bad >= 0:
        from .errors import BlowupError
        raise BlowupError(f"state became non-finite at step {bad}",
                          time=bad * prob.grid.h)
    return xs


def objective_of_controls(prob: OcpProblem, u: np.ndarray) -> float:
    """Trapezoid objective of the node controls (states eliminated)."""
    xs = _propagate(prob, u)
    quad = prob.objective.kind is ObjectiveKind.L2
    return float(_kernels.trapezoid_objective(
        xs, u, prob.grid.h, prob.objective.w1, prob.objective.w2, quad))


def gradient_of_controls(prob: OcpProblem, u: np.ndarray):
    """Objective and its exact discrete-adjoint gradient."""
    xs = _propagate(prob, u)
    quad = prob.objective.kind is ObjectiveKind.L2
    h = prob.grid.h
    j = float(_kernels.trapezoid_objective(
        xs, u, h, prob.objective.w1, prob.objective.w2, quad))
    mi, mu1, mu2 = prob.lag_nodes()
    lam, grad = _kernels.trap_adjoint_gradient(
        xs, u, mi, mu1, mu2, h, prob.params.as_array(),
        prob.objective.w1, prob.objective.w2, quad)
    return j, grad, xs, lam


def _project(u, lo, hi):
    return np.clip(u, lo, hi)


def solve(prob: OcpProblem, init: np.ndarray | None = None, *,
          max_iter: int = 2000, memory: int = 10, tol_factor: float = 1e-6,
          sharpen: bool | None = None) -> OcpSolution:
    """Minimize the transcribed objective by projected L-BFGS with Armijo search.

    ``init`` is an (n+1, 2) node-control guess (default: 1/2 everywhere).
    Terminates when the projected-gradient max-norm drops below
    ``tol_factor * max(1, |J|)`` or at the iteration cap (the best iterate is
    then returned flagged as not converged).  Linear-cost solutions are
    sharpened to exact bang-bang structure afterwards unless disabled.
    """
    n = prob.grid.n_steps
    lo, hi = prob.u_min, prob.u_max
    if init is None:
        u = np.full((n + 1, 2), 0.5 if lo < hi else lo)
        u = _project(u, lo, hi)
    else:
        init = np.asarray(init, dtype=float)
        if init.shape != (n + 1, 2):
            raise ParameterDomainError(f"init must have shape {(n + 1, 2)}")
        if init.min() < lo - 1e-12 or init.max() > hi + 1e-12:
            raise ParameterDomainError("init violates the control bounds")
        u = _project(init, lo, hi)

    j, g, xs, _ = gradient_of_controls(prob, u)
    s_hist: list = []
    y_hist: list = []
    n_obj = 1
    objective_trace = [j]
    converged = False
    pg_norm = np.inf
    it = 0
    for it in range(max_iter):
        pg = u - _project(u - g, lo, hi)
        pg_norm = float(np.abs(pg).max())
        if pg_norm < tol_factor * max(1.0, abs(j)):
            converged = True
            break
        # two-loop recursion
        q = g.ravel().copy()
        alphas = []
        for s, y in reversed(list(zip(s_hist, y_hist))):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if s_hist:
            s, y = s_hist[-1], y_hist[-1]
            q *= (s @ y) / (y @ y)
        else:
            q *= 0.5 / max(1.0, float(np.abs(g).max()))
        for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            rho = 1.0 / (y @ s)
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q.reshape(n + 1, 2)

        # Armijo backtracking along the projection arc
        t = 1.0
        accepted = False
        u_new, j_new = u, j
        for _ in range(30):
            cand = _project(u + t * d, lo, hi)
            j_cand = objective_of_controls(prob, cand)
            n_obj += 1
            if j_cand <= j and j_cand <= j + 1e-4 * float(np.sum(g * (cand - u))):
                u_new, j_new, accepted = cand, j_cand, True
                break
            t *= 0.5
        if not accepted:
            t = 1.0
            for _ in range(40):
                cand = _project(u - t * g, lo, hi)
                j_cand = objective_of_controls(prob, cand)
                n_obj += 1
                if j_cand < j:
                    u_new, j_new, accepted = cand, j_cand, True
                    break
                t *= 0.5
            if not accepted:
                break  # no descent left at this precision
        j2, g_new, xs, _ = gradient_of_controls(prob, u_new)
        n_obj += 1
        s = (u_new - u).ravel()
        y = (g_new - g).ravel()
        sy = float(s @ y)
        if sy > 1e-12 * (np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        u, j, g = u_new, j2, g_new
        objective_trace.append(j)

    diagnostics = {
        "iterations": it + 1,
        "objective_evaluations": n_obj,
        "projected_gradient_norm": pg_norm,
        "objective_trace": objective_trace,
        "problem": prob,
    }

    if sharpen is None:
        sharpen = prob.objective.kind is ObjectiveKind.L1 and lo == 0.0 and hi == 1.0
    diagnostics["sharpened"] = bool(sharpen)
    if sharpen:
        u, j, n_sharp = _sharpen_and_refine(prob, u)
        diagnostics["objective_evaluations"] += n_sharp

    xs = _propagate(prob, u)
    lam = _continuous_adjoint(prob, xs, u)
    phi = _switching_from_arrays(prob, xs, lam)
    switch_times, init_levels = _switch_times_from_phi(prob, u, phi)
    traj = _solution_trajectory(prob, xs, u)
    return OcpSolution(
        trajectory=traj,
        adjoints=lam,
        switching=phi,
        objective_value=j,
        controls=u,
        switch_times=switch_times,
        initial_levels=init_levels,
        diagnostics=diagnostics,
        converged=converged,
    )


def _sharpen_controls(u: np.ndarray) -> np.ndarray:
    """Threshold node controls at 1/2, yielding exact bang-bang node values."""
    return (u > 0.5).astype(float)


def _flip_nodes(col: np.ndarray) -> list:
    """Indices of the first node of each new level run (jump positions)."""
    return [int(k) + 1 for k in np.nonzero(np.diff(col))[0]]


def _build_bang(n: int, first_level: float, flips: list) -> np.ndarray:
    col = np.empty(n + 1)
    lvl = first_level
    prev = 0
    for k in list(flips) + [n + 1]:
        col[prev:k] = lvl
        prev = k
        lvl = 1.0 - lvl
    return col


def _sharpen_and_refine(prob: OcpProblem, u: np.ndarray):
    """Threshold at 1/2, then refine each jump node by objective descent.

    The control-law fixed point (move each jump to its switching-function
    crossing) can oscillate between adjacent node assignments, so the jump
    positions are polished by coordinate descent on the node lattice instead;
    the lattice optimum is law-consistent up to the straddling nodes.
    """
    n = prob.grid.n_steps
    u = _sharpen_controls(u)
    flips = [_flip_nodes(u[:, c]) for c in range(2)]
    levels = [u[0, 0], u[0, 1]]
    j = objective_of_controls(prob, u)
    n_eval = 1

    def assemble():
        out = np.empty((n + 1, 2))
        for c in range(2):
            out[:, c] = _build_bang(n, levels[c], flips[c])
        return out

    for step in (32, 16, 8, 4, 2, 1):
        improved = True
        while improved:
            improved = False
            for c in range(2):
                for idx in range(len(flips[c])):
                    for delta in (step, -step):
                        cand = flips[c][idx] + delta
                        lo = flips[c][idx - 1] + 1 if idx > 0 else 1
                        hi = flips[c][idx + 1] - 1 if idx + 1 < len(flips[c]) else n
                        if not (lo <= cand <= hi):
                            continue
                        old = flips[c][idx]
                        flips[c][idx] = cand
                        j_cand = objective_of_controls(prob, assemble())
                        n_eval += 1
                        if j_cand < j:
                            j = j_cand
                            improved = True
                            break
                        flips[c][idx] = old
    return assemble(), j, n_eval


def _switch_times_from_phi(prob: OcpProblem, u: np.ndarray, phi: np.ndarray):
    """Switch times from sign changes of the switching functions.

    The crossing node is bracketed by the sign change and the time refined by
    bisection on the linear interpolant of phi between the two nodes.
    """
    n = prob.grid.n_steps
    h = prob.grid.h
    times = []
    levels = []
    for c in range(2):
        crossings = []
        for k in range(n):
            a, b = phi[k, c], phi[k + 1, c]
            if a == 0.0 or a * b >= 0:
                continue
            lo_t, hi_t = k * h, (k + 1) * h
            f_lo = a
            for _ in range(60):
                mid = 0.5 * (lo_t + hi_t)
                f_mid = a + (b - a) * (mid - k * h) / h
                if f_lo * f_mid <= 0:
                    hi_t = mid
                else:
                    lo_t, f_lo = mid, f_mid
            crossings.append(0.5 * (lo_t + hi_t))
        times.append(crossings)
        levels.append(1 if u[0, c] > 0.5 else 0)
    return times, levels


def _continuous_adjoint(prob: OcpProblem, xs: np.ndarray, u: np.ndarray) -> np.ndarray:
    mi, mu1, mu2 = prob.lag_nodes()
    return _kernels.adjoint_ode_backward(xs, u, mi, mu1, mu2, prob.grid.h,
                                         prob.params.as_array())


def adjoint_backward(prob: OcpProblem, traj_or_states, controls=None) -> np.ndarray:
    """Backward integration of the maximum-principle adjoint system.

    Accepts either an :class:`OcpSolution` trajectory on the problem grid or
    a raw (n+1, 4)/(n+1, 5) state array plus node controls.  The terminal
    condition is zero (free terminal state); the advanced term in the
    infectious adjoint is read from future nodes with the horizon cutoff.
    """
    xs, u = _as_state_controls(prob, traj_or_states, controls)
    return _continuous_adjoint(prob, xs, u)


def _as_state_controls(prob: OcpProblem, traj_or_states, controls):
    n = prob.grid.n_steps
    if isinstance(traj_or_states, Trajectory):
        traj = traj_or_states
        if len(traj.times) != n + 1 or abs(traj.grid.t_f - prob.grid.t_f) > 1e-12:
            raise ParameterDomainError("trajectory grid does not match the problem grid")
        xs = traj.states[:, :4]
        u = traj.controls if controls is None else np.asarray(controls, dtype=float)
        if u is None:
            raise ParameterDomainError("node controls are required")
    else:
        xs = np.asarray(traj_or_states, dtype=float)[:, :4]
        if controls is None:
            raise ParameterDomainError("node controls are required with raw states")
        u = np.asarray(controls, dtype=float)
    if xs.shape[0] != n + 1 or u.shape != (n + 1, 2):
        raise ParameterDomainError("state/control arrays do not match the problem grid")
    return np.ascontiguousarray(xs), np.ascontiguousarray(u)


def _switching_from_arrays(prob: OcpProblem, xs: np.ndarray, lam: np.ndarray) -> np.ndarray:
    n = prob.grid.n_steps
    _, mu1, mu2 = prob.lag_nodes()
    e1, e2 = prob.params.eps1, prob.params.eps2
    w1, w2 = prob.objective.w1, prob.objective.w2
    phi = np.empty((n + 1, 2))
    for k in range(n + 1):
        j1 = k + mu1
        phi[k, 0] = -w1 + (e1 * lam[j1, 1] * xs[j1, 1] if j1 <= n else 0.0)
        j2 = k + mu2
        phi[k, 1] = -w2 + (e2 * lam[j2, 3] * xs[j2, 3] if j2 <= n else 0.0)
    return phi


def switching_trace(prob: OcpProblem, traj_or_states, adjoints: np.ndarray,
                    controls=None) -> np.ndarray:
    """Switching functions phi_1, phi_2 at the grid nodes.

    phi_k(t) = -W_k + eps_k lam_{Lk}(t + d_uk) Lk(t + d_uk) while the advanced
    time stays inside the horizon, and exactly -W_k on [T - d_uk, T].
    """
    xs, _ = _as_state_controls(prob, traj_or_states, controls)
    lam = np.asarray(adjoints, dtype=float)
    if lam.shape != (prob.grid.n_steps + 1, 4):
        raise ParameterDomainError("adjoint array does not match the problem grid")
    return _switching_from_arrays(prob, xs, lam)


def verify_bang_bang(sol: OcpSolution, tol_phi_factor: float = 1e-3,
                     law_tol: float = 0.02) -> BangBangReport:
    """Check the bang-bang control law against the switching functions.

    At every node where |phi_k| exceeds ``tol_phi_factor * W_k`` the control
    must match the sign law within ``law_tol``; each zero crossing must have
    a negative finite-difference slope (strict bang-bang property).
    """
    prob = sol.problem
    n = prob.grid.n_steps
    h = prob.grid.h
    w = (prob.objective.w1, prob.objective.w2)
    u = sol.controls
    phi = sol.switching
    violations = [0, 0]
    checked = [0, 0]
    slopes = [[], []]
    slopes_ok = True
    notes = []
    quad = prob.objective.kind is ObjectiveKind.L2
    if quad:
        notes.append("quadratic-cost objective: controls are continuous, "
                     "sign-law check applies only where |phi| is above the tolerance band")
    for c in range(2):
        tol_phi = tol_phi_factor * w[c]
        for k in range(n + 1):
            if abs(phi[k, c]) <= tol_phi:
                continue
            checked[c] += 1
            want = 1.0 if phi[k, c] > 0 else 0.0
            if abs(u[k, c] - want) > law_tol:
                violations[c] += 1
        # slope sign must match the jump direction: negative where the control
        # shuts off (the strict property), positive at an up-crossing
        lvl = sol.initial_levels[c]
        for t in sol.switch_times[c]:
            k = min(max(int(t / h), 1), n - 1)
            slope = (phi[k + 1, c] - phi[k - 1, c]) / (2 * h)
            slopes[c].append(float(slope))
            if lvl == 1 and slope >= 0:
                slopes_ok = False
            if lvl == 0 and slope <= 0:
                slopes_ok = False
            lvl = 1 - lvl
    strict = slopes_ok and all(v == 0 for v in violations)
    return BangBangReport(
        switch_times=[list(t) for t in sol.switch_times],
        initial_levels=list(sol.initial_levels),
        law_violations=violations,
        checked_nodes=checked,
        crossing_slopes=slopes,
        strict=strict,
        notes=notes,
    )


def _solution_trajectory(prob: OcpProblem, xs: np.ndarray, u: np.ndarray) -> Trajectory:
    """Wrap the reduced node states as a five-compartment trajectory."""
    n = prob.grid.n_steps
    states = np.empty((n + 1, 5))
    states[:, :4] = xs
    states[:, 4] = prob.params.n_pop - xs.sum(axis=1)
    times = prob.grid.times()
    traj = Trajectory(grid=prob.grid, delays=prob.delays, history=prob.history,
                      params=prob.params, times=times, states=states,
                      controls=u.copy())
    # dense support: piecewise-linear in the stored nodes is enough for
    # reporting; reuse node values with zero end-slopes per segment
    traj._seg_t = times
    traj._seg_x = states
    diffs = np.diff(states, axis=0) / prob.grid.h if n else np.zeros((0, 5))
    traj._seg_fl = diffs
    traj._seg_fr = diffs
    return traj
