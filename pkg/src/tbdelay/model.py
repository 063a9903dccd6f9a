"""Tuberculosis compartmental model with a diagnosis delay on active infection.

The population is split into susceptible (S), early latent (L1), active
infectious (I), persistent latent (L2) and recovered (R) compartments with
constant total population N.  Treatment of active TB acts on the delayed
infectious count I(t - d_I); two treatment controls act on L1 and L2 through
delayed control values.  This module defines the parameter set, the vector
field of the controlled system, the basic reproduction number and both
equilibria of the uncontrolled dynamics.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConvergenceFailure, NoEndemicEquilibrium, ParameterDomainError

__all__ = [
    "ModelParams",
    "StateVec",
    "ControlVec",
    "EquilibriumKind",
    "EquilibriumPoint",
    "R0Breakdown",
    "rhs_controlled",
    "rhs_uncontrolled",
    "sum_derivative_check",
    "basic_reproduction_number",
    "disease_free_equilibrium",
    "endemic_equilibrium",
]


@dataclass(frozen=True)
class ModelParams:
    """Epidemiological rates, population size and treatment efficacies.

    All rates are per year; ``phi``, ``sigma``, ``sigma_r``, ``eps1`` and
    ``eps2`` are dimensionless.
    """

    beta: float        # transmission coefficient
    mu: float          # birth/death rate
    delta: float       # rate of leaving L1
    phi: float         # proportion of L1 leavers progressing to I
    omega: float       # endogenous reactivation rate of L2
    omega_r: float     # endogenous reactivation rate of R
    sigma: float       # reinfection factor for L2
    sigma_r: float     # reinfection factor for R
    tau0: float        # treatment recovery rate for I
    tau1: float        # treatment recovery rate for L1
    tau2: float        # treatment recovery rate for L2
    n_pop: float       # total population
    eps1: float        # efficacy of the L1 treatment control
    eps2: float        # efficacy of the L2 treatment control

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ParameterDomainError(f"{f.name} must be finite, got {v!r}")
            if v < 0:
                raise ParameterDomainError(f"{f.name} must be >= 0, got {v!r}")
        for name in ("phi", "eps1", "eps2"):
            v = getattr(self, name)
            if v > 1:
                raise ParameterDomainError(f"{name} must lie in [0, 1], got {v!r}")
        if self.n_pop <= 0:
            raise ParameterDomainError(f"n_pop must be > 0, got {self.n_pop!r}")

    @classmethod
    def baseline(cls, beta: float = 100.0, n_pop: float = 30_000.0) -> "ModelParams":
        """Baseline TB parameter set (transmission coefficient selectable)."""
        return cls(
            beta=beta,
            mu=1.0 / 70.0,
            delta=12.0,
            phi=0.05,
            omega=0.0002,
            omega_r=0.00002,
            sigma=0.25,
            sigma_r=0.25,
            tau0=2.0,
            tau1=2.0,
            tau2=1.0,
            n_pop=n_pop,
            eps1=0.5,
            eps2=0.5,
        )

    def with_beta(self, beta: float) -> "ModelParams":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["beta"] = beta
        return ModelParams(**d)

    def as_array(self) -> np.ndarray:
        """Pack into the flat layout used by the numeric kernels."""
        return np.array([
            self.beta, self.mu, self.delta, self.phi, self.omega, self.omega_r,
            self.sigma, self.sigma_r, self.tau0, self.tau1, self.tau2,
            self.n_pop, self.eps1, self.eps2,
        ])


@dataclass(frozen=True)
class StateVec:
    """Compartment populations (real-valued counts)."""

    s: float
    l1: float
    i: float
    l2: float
    r: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.l1, self.i, self.l2, self.r])

    @classmethod
    def from_array(cls, x) -> "StateVec":
        return cls(*(float(v) for v in x))

    @property
    def total(self) -> float:
        return self.s + self.l1 + self.i + self.l2 + self.r


@dataclass(frozen=True)
class ControlVec:
    """Treatment effort fractions, each in [0, 1]."""

    u1: float
    u2: float

    def __post_init__(self):
        for name, v in (("u1", self.u1), ("u2", self.u2)):
            if not (0.0 <= v <= 1.0):
                raise ParameterDomainError(f"{name} must lie in [0, 1], got {v!r}")


class EquilibriumKind(enum.Enum):
    DISEASE_FREE = "disease_free"
    ENDEMIC = "endemic"


@dataclass(frozen=True)
class EquilibriumPoint:
    state: StateVec
    kind: EquilibriumKind
    residual_norm: float


@dataclass(frozen=True)
class R0Breakdown:
    """Basic reproduction number as a numerator/denominator pair."""

    numerator: float
    denominator: float
    value: float


def _check_finite_state(x: np.ndarray):
    if not np.all(np.isfinite(x)):
        raise ParameterDomainError(f"state contains non-finite entries: {x}")


def rhs_controlled(state: StateVec, i_delayed: float, v1: float, v2: float,
                   p: ModelParams) -> StateVec:
    """Time derivative of the controlled five-compartment system.

    ``i_delayed`` is I(t - d_I); ``v1``, ``v2`` are the delayed control
    values u_k(t - d_{u_k}).  The instantaneous controls do not enter the
    dynamics.  With ``v1 = v2 = 0`` this is the uncontrolled system.
    """
    x = state.as_array()
    _check_finite_state(x)
    if not math.isfinite(i_delayed) or i_delayed < 0:
        raise ParameterDomainError(f"i_delayed must be finite and >= 0, got {i_delayed!r}")
    ControlVec(v1, v2)  # bounds check
    s, l1, i, l2, r = x
    n = p.n_pop
    force = p.beta / n * i
    ds = p.mu * n - force * s - p.mu * s
    dl1 = force * (s + p.sigma * l2 + p.sigma_r * r) - (p.delta + p.tau1 + p.eps1 * v1 + p.mu) * l1
    di = p.phi * p.delta * l1 + p.omega * l2 + p.omega_r * r - p.tau0 * i_delayed - p.mu * i
    dl2 = (1 - p.phi) * p.delta * l1 - p.sigma * force * l2 - (p.omega + p.eps2 * v2 + p.tau2 + p.mu) * l2
    dr = (p.tau0 * i_delayed + (p.tau1 + p.eps1 * v1) * l1 + (p.tau2 + p.eps2 * v2) * l2
          - p.sigma_r * force * r - (p.omega_r + p.mu) * r)
    return StateVec(ds, dl1, di, dl2, dr)


def rhs_uncontrolled(state: StateVec, i_delayed: float, p: ModelParams) -> StateVec:
    """Uncontrolled system: the controlled vector field with v1 = v2 = 0."""
    return rhs_controlled(state, i_delayed, 0.0, 0.0, p)


def sum_derivative_check(state: StateVec, i_delayed: float, v1: float, v2: float,
                         p: ModelParams) -> float:
    """Component sum of the derivative; identically zero in exact arithmetic."""
    d = rhs_controlled(state, i_delayed, v1, v2, p)
    return d.s + d.l1 + d.i + d.l2 + d.r


def basic_reproduction_number(p: ModelParams) -> R0Breakdown:
    """Basic reproduction number R0 as the ratio of its numerator and denominator."""
    num = p.beta * (
        p.omega_r * (p.omega + p.tau2 + p.mu) * p.tau1
        + p.delta * ((p.omega_r + p.mu) * (p.phi * p.mu + p.omega)
                     + (p.omega_r + p.phi * p.mu) * p.tau2)
    )
    den = (p.mu * (p.tau0 + p.mu + p.omega_r) * (p.omega + p.tau2 + p.mu)
           * (p.delta + p.tau1 + p.mu))
    if den <= 0:
        raise ParameterDomainError(f"R0 denominator must be positive, got {den!r}")
    return R0Breakdown(numerator=num, denominator=den, value=num / den)


def disease_free_equilibrium(p: ModelParams) -> EquilibriumPoint:
    """The infection-free steady state (N, 0, 0, 0, 0)."""
    return EquilibriumPoint(
        state=StateVec(p.n_pop, 0.0, 0.0, 0.0, 0.0),
        kind=EquilibriumKind.DISEASE_FREE,
        residual_norm=0.0,
    )


def reduced_rhs(x: np.ndarray, y: float, v1: float, v2: float, p: ModelParams) -> np.ndarray:
    """Vector field of the four-state reduction (R eliminated by complement).

    ``x`` is (S, L1, I, L2); ``y`` is the delayed infectious count.
    """
    s, l1, i, l2 = x
    n = p.n_pop
    r = n - s - l1 - i - l2
    force = p.beta / n * i
    return np.array([
        p.mu * n - force * s - p.mu * s,
        force * (s + p.sigma * l2 + p.sigma_r * r) - (p.delta + p.tau1 + p.eps1 * v1 + p.mu) * l1,
        p.phi * p.delta * l1 + p.omega * l2 + p.omega_r * r - p.tau0 * y - p.mu * i,
        (1 - p.phi) * p.delta * l1 - p.sigma * force * l2 - (p.omega + p.eps2 * v2 + p.tau2 + p.mu) * l2,
    ])


def reduced_jacobian(x: np.ndarray, v1: float, v2: float, p: ModelParams) -> np.ndarray:
    """Jacobian of :func:`reduced_rhs` in the instantaneous state (delay slot separate)."""
    s, l1, i, l2 = x
    n = p.n_pop
    r = n - s - l1 - i - l2
    bn = p.beta / n
    j = np.zeros((4, 4))
    j[0, 0] = -bn * i - p.mu
    j[0, 2] = -bn * s
    j[1, 0] = bn * i * (1 - p.sigma_r)
    j[1, 1] = -bn * i * p.sigma_r - (p.delta + p.tau1 + p.eps1 * v1 + p.mu)
    j[1, 2] = bn * (s + p.sigma * l2 + p.sigma_r * r) - bn * i * p.sigma_r
    j[1, 3] = bn * i * (p.sigma - p.sigma_r)
    j[2, 0] = -p.omega_r
    j[2, 1] = p.phi * p.delta - p.omega_r
    j[2, 2] = -p.omega_r - p.mu
    j[2, 3] = p.omega - p.omega_r
    j[3, 1] = (1 - p.phi) * p.delta
    j[3, 2] = -p.sigma * bn * l2
    j[3, 3] = -p.sigma * bn * i - (p.omega + p.eps2 * v2 + p.tau2 + p.mu)
    return j


def _steady_residual(x: np.ndarray, p: ModelParams) -> np.ndarray:
    # constant solutions make the delayed I equal the instantaneous one
    return reduced_rhs(x, x[2], 0.0, 0.0, p)


def _steady_jacobian(x: np.ndarray, p: ModelParams) -> np.ndarray:
    j = reduced_jacobian(x, 0.0, 0.0, p)
    j[2, 2] -= p.tau0
    return j


def _infection_profile(i_level: float, p: ModelParams):
    """Solve the steady state exactly for a prescribed infectious count.

    Given I, the S equation and the L2/I linear relations determine the other
    compartments; the return value is (residual of the L1 balance, state).
    The endemic equilibrium is a positive root of the residual in I.
    """
    n = p.n_pop
    c1 = p.delta + p.tau1 + p.mu
    c2 = p.omega + p.tau2 + p.mu
    s = p.mu * n * n / (p.mu * n + p.beta * i_level)
    k2 = (1 - p.phi) * p.delta / (p.sigma * p.beta / n * i_level + c2)  # L2 = k2 L1
    a = p.phi * p.delta + p.omega * k2 - p.omega_r * (1 + k2)
    b = p.omega_r * (n - s - i_level) - (p.tau0 + p.mu) * i_level
    l1 = -b / a
    l2 = k2 * l1
    r = n - s - l1 - i_level - l2
    res = p.beta / n * i_level * (s + p.sigma * l2 + p.sigma_r * r) - c1 * l1
    return res, np.array([s, l1, i_level, l2])


def endemic_equilibrium(p: ModelParams, max_iter: int = 100) -> EquilibriumPoint:
    """Endemic steady state of the uncontrolled system, for R0 > 1.

    The infectious level is bracketed through a one-dimensional reduction of
    the steady-state system and the full four-state solution is then polished
    by a damped Newton iteration with the analytic Jacobian.
    """
    r0 = basic_reproduction_number(p)
    if r0.value <= 1.0:
        raise NoEndemicEquilibrium(
            f"no endemic equilibrium for R0 = {r0.value:.6f} <= 1")
    n = p.n_pop
    # bracket the positive root of the infection profile
    grid = np.linspace(1e-9 * n, 0.8 * n, 4096)
    vals = np.array([_infection_profile(i, p)[0] for i in grid])
    sign_changes = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    if len(sign_changes) == 0:
        raise ConvergenceFailure("no sign change found for the endemic infection level")
    lo, hi = grid[sign_changes[0]], grid[sign_changes[0] + 1]
    flo = _infection_profile(lo, p)[0]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = _infection_profile(mid, p)[0]
        if fm == 0.0 or hi - lo < 1e-15 * max(1.0, mid):
            lo = hi = mid
            break
        if flo * fm < 0:
            hi = mid
        else:
            lo, flo = mid, fm
    x = _infection_profile(0.5 * (lo + hi), p)[1]

    # damped Newton polish on the full steady-state system
    for it in range(max_iter):
        f = _steady_residual(x, p)
        nrm = np.max(np.abs(f))
        if nrm < 1e-9 * n:
            step = np.linalg.solve(_steady_jacobian(x, p), -f)
            x = x + step
            f = _steady_residual(x, p)
            nrm = np.max(np.abs(f))
            break
        step = np.linalg.solve(_steady_jacobian(x, p), -f)
        t = 1.0
        for _ in range(40):
            xt = x + t * step
            if np.max(np.abs(_steady_residual(xt, p))) < (1 - 0.5 * t) * nrm:
                break
            t *= 0.5
        x = x + t * step
    else:
        raise ConvergenceFailure(
            f"endemic equilibrium Newton did not converge (residual {nrm:.3e})",
            last_iterate=x)
    if np.max(np.abs(_steady_residual(x, p))) > 1e-8 * n:
        raise ConvergenceFailure(
            "endemic equilibrium residual above tolerance", last_iterate=x)
    if x[2] <= 0:
        raise NoEndemicEquilibrium("Newton iteration collapsed to a non-positive I")
    s, l1, i, l2 = x
    state = StateVec(s, l1, i, l2, n - s - l1 - i - l2)
    return EquilibriumPoint(
        state=state,
        kind=EquilibriumKind.ENDEMIC,
        residual_norm=float(np.max(np.abs(_steady_residual(x, p)))),
    )
