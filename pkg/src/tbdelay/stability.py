"""Stability analysis of the delayed TB model around its equilibria.

The uncontrolled four-state reduction is linearized at an equilibrium, which
yields a transcendental characteristic function

    Delta(lam) = det(lam I - A1 - e^{-lam d} A2),

a quartic polynomial plus a cubic-times-exponential term (A2 has the single
entry -tau0 on the infectious diagonal).  The module provides

* the closed-form quartic coefficients at the disease-free equilibrium and
  the Routh-Hurwitz conditions for the zero-delay case,
* the quartic in z = b^2 whose positive roots flag purely imaginary
  characteristic roots ib (delay-induced instability candidates),
* real-root isolation of Delta on the real axis by the derivative-chain
  bracketing argument, and a winding-number scan for complex roots in a
  right-half rectangle,
* a verdict cascade combining these tests.
"""
from __future__ import annotations

import cmath
import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterDomainError
from .model import (EquilibriumKind, EquilibriumPoint, ModelParams,
                    basic_reproduction_number, reduced_jacobian)

__all__ = [
    "LinearizedDDE",
    "CharCoefficients",
    "CrossingQuartic",
    "RouthHurwitzReport",
    "VerdictKind",
    "StabilityVerdict",
    "linearize",
    "quasi_polynomial",
    "char_eval",
    "dfe_char_coefficients",
    "routh_hurwitz_quartic",
    "crossing_quartic",
    "crossing_quartic_from_linearization",
    "quartic_real_roots",
    "real_root_isolation",
    "count_roots_rectangle",
    "rightmost_root_scan",
    "classify",
]


@dataclass(frozen=True)
class LinearizedDDE:
    """Linearization x' = A1 x(t) + A2 x(t - delay) of the four-state reduction."""

    a1: np.ndarray
    a2: np.ndarray
    delay: float

    def __post_init__(self):
        if self.a1.shape != (4, 4) or self.a2.shape != (4, 4):
            raise ParameterDomainError("linearization matrices must be 4x4")


@dataclass(frozen=True)
class CharCoefficients:
    """Quartic coefficients of the polynomial part at the disease-free point.

    ``a0..a3`` are the coefficients of P(lam) = lam^4 + a3 lam^3 + a2 lam^2
    + a1 lam + a0; the c-values are the recurring rate abbreviations
    c1 = delta + tau1 + mu, c2 = omega + tau2 + mu, c3 = omega_r + tau0 + mu,
    c4 = tau0 + omega_r, c5 = tau2 + omega, c6 = delta + tau1.
    """

    a0: float
    a1: float
    a2: float
    a3: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float

    def quartic(self) -> np.ndarray:
        return np.array([1.0, self.a3, self.a2, self.a1, self.a0])


@dataclass(frozen=True)
class CrossingQuartic:
    """Coefficients of z^4 + alpha3 z^3 + alpha2 z^2 + alpha1 z + alpha0.

    Positive real roots z* correspond to candidate imaginary-axis crossings
    at frequency b = sqrt(z*).
    """

    alpha0: float
    alpha1: float
    alpha2: float
    alpha3: float

    def coefficients(self) -> np.ndarray:
        return np.array([1.0, self.alpha3, self.alpha2, self.alpha1, self.alpha0])


@dataclass(frozen=True)
class RouthHurwitzReport:
    """Per-condition booleans of the quartic Routh-Hurwitz test."""

    a_positive: tuple            # (a0 > 0, a1 > 0, a2 > 0, a3 > 0)
    cond_iv: bool                # a3 a2 > a1
    cond_v: bool                 # a3 a2 a1 > a1^2 + a3^2 a0
    stable: bool


class VerdictKind(enum.Enum):
    STABLE_ZERO_DELAY = "stable_zero_delay"
    UNSTABLE_ANY_DELAY = "unstable_any_delay"
    CROSSING_EXISTS = "crossing_exists"
    STABLE_AT_GIVEN_DELAY = "stable_at_given_delay"
    INCONCLUSIVE = "inconclusive"


@dataclass
class StabilityVerdict:
    kind: VerdictKind
    details: dict = field(default_factory=dict)


def linearize(p: ModelParams, eq: EquilibriumPoint, d: float = 0.0) -> LinearizedDDE:
    """Linearize the uncontrolled reduction at an accepted equilibrium."""
    if eq.residual_norm > 1e-6 * p.n_pop:
        raise ParameterDomainError(
            f"equilibrium residual {eq.residual_norm!r} too large to linearize")
    x = eq.state.as_array()[:4]
    a1 = reduced_jacobian(x, 0.0, 0.0, p)
    a2 = np.diag([0.0, 0.0, -p.tau0, 0.0])
    return LinearizedDDE(a1=a1, a2=a2, delay=d)


def quasi_polynomial(lin: LinearizedDDE):
    """Coefficient arrays (pc, qc) with Delta(lam) = pc(lam) + qc(lam) e^{-lam d}.

    pc is the degree-4 characteristic polynomial of A1 and qc the degree-3
    cofactor polynomial carrying the tau0 delay entry.
    """
    pc = np.poly(lin.a1)
    minor = np.delete(np.delete(lin.a1, 2, axis=0), 2, axis=1)
    tau0 = -lin.a2[2, 2]
    qc = tau0 * np.poly(minor)
    return pc, qc


def char_eval(lin: LinearizedDDE, lam: complex, d: float) -> complex:
    """Characteristic determinant det(lam I - A1 - e^{-lam d} A2)."""
    m = lam * np.eye(4, dtype=complex) - lin.a1 - cmath.exp(-lam * d) * lin.a2
    return complex(np.linalg.det(m))


def dfe_char_coefficients(p: ModelParams) -> CharCoefficients:
    """Closed-form quartic coefficients at the disease-free equilibrium."""
    c1 = p.delta + p.tau1 + p.mu
    c2 = p.omega + p.tau2 + p.mu
    c3 = p.omega_r + p.tau0 + p.mu
    c4 = p.tau0 + p.omega_r
    c5 = p.tau2 + p.omega
    c6 = p.delta + p.tau1
    r0 = basic_reproduction_number(p)
    a0 = r0.denominator - r0.numerator
    a1 = (2.0 / p.mu * r0.denominator + p.mu ** 2 * (c1 + c2 + c4) - c4 * c5 * c6
          - p.beta * (p.tau1 * p.omega_r + p.omega * p.delta
                      + p.delta * p.phi * (p.omega_r + p.tau2 + 2 * p.mu)))
    a2 = (c4 * c5 + 3 * p.mu * (c1 + c2 + c4) + c6 * (c4 + c5)
          - p.beta * p.phi * p.delta)
    a3 = c1 + c2 + c3 + p.mu
    return CharCoefficients(a0=a0, a1=a1, a2=a2, a3=a3,
                            c1=c1, c2=c2, c3=c3, c4=c4, c5=c5, c6=c6)


def routh_hurwitz_quartic(cc) -> RouthHurwitzReport:
    """Routh-Hurwitz conditions for lam^4 + a3 lam^3 + a2 lam^2 + a1 lam + a0.

    Accepts a :class:`CharCoefficients` or any (a0, a1, a2, a3) sequence.
    """
    if hasattr(cc, "a0"):
        a0, a1, a2, a3 = cc.a0, cc.a1, cc.a2, cc.a3
    else:
        a0, a1, a2, a3 = cc
    a_positive = (a0 > 0, a1 > 0, a2 > 0, a3 > 0)
    cond_iv = a3 * a2 > a1
    cond_v = a3 * a2 * a1 > a1 * a1 + a3 * a3 * a0
    return RouthHurwitzReport(
        a_positive=a_positive,
        cond_iv=cond_iv,
        cond_v=cond_v,
        stable=all(a_positive) and cond_iv and cond_v,
    )


def crossing_quartic(cc: CharCoefficients, p: ModelParams) -> CrossingQuartic:
    """Closed-form z-quartic detecting imaginary roots of the DFE quasi-polynomial."""
    a0, a1, a2, a3 = cc.a0, cc.a1, cc.a2, cc.a3
    c1, c2 = cc.c1, cc.c2
    mu, tau0 = p.mu, p.tau0
    al0 = a0 * (a0 - 2 * mu * tau0 * c1 * c2)
    al1 = (2 * tau0 * (mu * (a0 + a2 * c1 * c2 - a1 * (c1 + c2))
                       + a0 * (c1 + c2) - a1 * c1 * c2)
           - 2 * a2 * a0 + a1 ** 2)
    al2 = (2 * tau0 * (mu * (a3 * (c1 + c2) - a2 - c1 * c2)
                       - a2 * (c1 + c2) + a3 * c1 * c2 + a1)
           + 2 * a0 + a2 ** 2 - 2 * a3 * a1)
    al3 = 2 * tau0 * (mu + c1 + c2) + a3 ** 2 - 2 * (a3 * tau0 + a2)
    return CrossingQuartic(alpha0=al0, alpha1=al1, alpha2=al2, alpha3=al3)


def _modulus_z_quartic(pc: np.ndarray, qc: np.ndarray) -> np.ndarray:
    """|pc(ib)|^2 - |qc(ib)|^2 as a polynomial in z = b^2 (degree 4)."""
    def parts(c):
        n = len(c) - 1
        re = np.zeros(n + 1)
        im = np.zeros(n + 1)
        for k, ck in enumerate(c):
            w = 1j ** (n - k)
            re[k] = ck * w.real
            im[k] = ck * w.imag
        return re, im

    pr, pi = parts(pc)
    qr, qi = parts(qc)
    m = np.convolve(pr, pr) + np.convolve(pi, pi)
    mq = np.convolve(qr, qr) + np.convolve(qi, qi)
    m[-len(mq):] -= mq
    return m[::2]


def crossing_quartic_from_linearization(lin: LinearizedDDE) -> CrossingQuartic:
    """Determinant-based z-quartic for a general equilibrium.

    Writing Delta = p + q e^{-lam d}, a purely imaginary root ib requires
    |p(ib)| = |q(ib)|; the even polynomial |p|^2 - |q|^2 in b becomes a
    quartic in z = b^2.
    """
    pc, qc = quasi_polynomial(lin)
    z = _modulus_z_quartic(pc, qc)
    z = z / z[0]
    return CrossingQuartic(alpha0=z[4], alpha1=z[3], alpha2=z[2], alpha3=z[1])


def quartic_real_roots(q: CrossingQuartic) -> list:
    """All real roots, via companion-matrix eigenvalues and one Newton polish each."""
    coef = q.coefficients()
    roots = np.roots(coef)
    scale = np.max(np.abs(coef))
    out = []
    dcoef = np.polyder(coef)
    for r in roots:
        if abs(r.imag) > 1e-7 * max(1.0, abs(r)):
            continue
        x = r.real
        dp = np.polyval(dcoef, x)
        if dp != 0:
            x = x - np.polyval(coef, x) / dp
        if abs(np.polyval(coef, x)) > 1e-9 * scale * max(1.0, abs(x)) ** 4:
            continue
        out.append(float(x))
    return sorted(out)


def _qp_eval(pc, qc, d, x):
    return np.polyval(pc, x) + np.polyval(qc, x) * np.exp(-x * d)


def _qp_derivative(pc, qc, d):
    """(p, q) coefficients of the derivative of p + q e^{-lam d}."""
    pd = np.polyder(pc) if len(pc) > 1 else np.zeros(1)
    qd = -d * qc.copy()
    if len(qc) > 1:
        qd[-(len(qc) - 1):] += np.polyder(qc)
    return pd, qd


def _real_roots_recursive(pc, qc, d, lo, hi, depth, max_depth):
    """Roots of p + q e^{-lam d} on [lo, hi] between zeros of the derivative."""
    if depth >= max_depth:
        return []
    poly_gone = np.max(np.abs(pc)) < 1e-12 * max(1.0, np.max(np.abs(qc)))
    if poly_gone:
        # pure q e^{-lam d}: zeros are the real roots of q
        rts = np.roots(qc) if len(qc) > 1 else []
        return sorted(float(r.real) for r in rts
                      if abs(r.imag) < 1e-9 and lo <= r.real <= hi)
    pd, qd = _qp_derivative(pc, qc, d)
    crit = _real_roots_recursive(pd, qd, d, lo, hi, depth + 1, max_depth)
    pts = [lo] + [c for c in crit if lo < c < hi] + [hi]
    roots = []
    for a, b in zip(pts[:-1], pts[1:]):
        fa = _qp_eval(pc, qc, d, a)
        fb = _qp_eval(pc, qc, d, b)
        if fa == 0.0:
            roots.append(a)
            continue
        if fa * fb >= 0:
            continue
        x0, x1, f0 = a, b, fa
        for _ in range(200):
            xm = 0.5 * (x0 + x1)
            fm = _qp_eval(pc, qc, d, xm)
            if fm == 0.0 or x1 - x0 < 1e-13 * max(1.0, abs(xm)):
                break
            if f0 * fm < 0:
                x1 = xm
            else:
                x0, f0 = xm, fm
        roots.append(0.5 * (x0 + x1))
    if _qp_eval(pc, qc, d, hi) == 0.0:
        roots.append(hi)
    return sorted(set(roots))


def real_root_isolation(lin: LinearizedDDE, d: float, bracket=(-50.0, 10.0),
                        max_depth: int = 8) -> list:
    """All real zeros of the characteristic function inside a finite bracket.

    The derivative chain of the quasi-polynomial terminates in a pure
    polynomial-times-exponential after four differentiations; bracketing
    between successive derivative zeros then isolates every real root on
    monotone pieces (bisection to ~1e-13 relative).
    """
    lo, hi = bracket
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ParameterDomainError(f"bracket must be finite with lo < hi, got {bracket!r}")
    pc, qc = quasi_polynomial(lin)
    if d == 0.0:
        comb = pc.copy()
        comb[-len(qc):] += qc
        rts = np.roots(comb)
        return sorted(float(r.real) for r in rts
                      if abs(r.imag) < 1e-9 and lo <= r.real <= hi)
    return _real_roots_recursive(pc, qc, d, lo, hi, 0, max_depth)


def _edge_phase_change(f, a: complex, b: complex, max_refine: int = 40):
    """Total phase change of f along the segment a -> b by adaptive sampling."""
    ts = np.linspace(0.0, 1.0, 33)
    for _ in range(max_refine):
        zs = a + (b - a) * ts
        vals = f(zs)
        if np.any(vals == 0):
            raise ArithmeticError("zero on contour")
        ph = np.unwrap(np.angle(vals))
        dph = np.diff(ph)
        bad = np.abs(dph) > 0.5
        if not bad.any():
            return ph[-1] - ph[0]
        mids = 0.5 * (ts[np.where(bad)[0]] + ts[np.where(bad)[0] + 1])
        ts = np.sort(np.concatenate([ts, mids]))
    raise ArithmeticError("phase tracking did not resolve (root on or near contour)")


def count_roots_rectangle(lin: LinearizedDDE, d: float, re_range, im_range) -> int:
    """Number of characteristic roots inside a rectangle, by the argument principle."""
    pc, qc = quasi_polynomial(lin)

    def f(z):
        return np.polyval(pc, z) + np.polyval(qc, z) * np.exp(-z * d)

    re0, re1 = re_range
    im0, im1 = im_range
    corners = [complex(re0, im0), complex(re1, im0), complex(re1, im1),
               complex(re0, im1), complex(re0, im0)]
    total = 0.0
    for a, b in zip(corners[:-1], corners[1:]):
        total += _edge_phase_change(f, a, b)
    w = total / (2 * np.pi)
    n = int(round(w))
    if abs(w - n) > 0.1:
        raise ArithmeticError(f"unreliable winding number {w!r}")
    return n


def rightmost_root_scan(lin: LinearizedDDE, d: float,
                        re_range=(-0.5, 2.0), im_range=(0.0, 50.0),
                        resolution: float = 1e-3) -> list:
    """Locate all roots in a right-half rectangle by adaptive subdivision.

    Scans the upper half only (roots come in conjugate pairs); the real axis
    is covered separately by :func:`real_root_isolation`.  Returns root
    locations as complex numbers (upper-half representatives plus real roots).
    """
    pc, qc = quasi_polynomial(lin)

    def f(z):
        return np.polyval(pc, z) + np.polyval(qc, z) * np.exp(-z * d)

    def newton_polish(z):
        pd, qd = _qp_derivative(pc, qc, d)
        for _ in range(100):
            fz = np.polyval(pc, z) + np.polyval(qc, z) * np.exp(-z * d)
            dfz = np.polyval(pd, z) + np.polyval(qd, z) * np.exp(-z * d)
            step = fz / dfz
            z = z - step
            if abs(step) < 1e-13 * max(1.0, abs(z)):
                break
        return z

    eps = 1e-9  # nudge the band off the real axis; the axis has its own scan
    re0, re1 = re_range
    im0, im1 = im_range
    found = []
    stack = [(re0, re1, max(im0, eps), im1)]
    while stack:
        r0, r1, i0, i1 = stack.pop()
        try:
            n = count_roots_rectangle(lin, d, (r0, r1), (i0, i1))
        except ArithmeticError:
            # contour passes too close to a root: nudge the box and retry
            n = count_roots_rectangle(lin, d, (r0 - 3e-7, r1 + 2.1e-7),
                                      (i0 - 1.3e-7, i1 + 1.7e-7))
        if n == 0:
            continue
        if max(r1 - r0, i1 - i0) < resolution:
            z = newton_polish(complex(0.5 * (r0 + r1), 0.5 * (i0 + i1)))
            found.extend([z] * n)
            continue
        if r1 - r0 >= i1 - i0:
            rm = 0.5 * (r0 + r1)
            stack.append((r0, rm, i0, i1))
            stack.append((rm, r1, i0, i1))
        else:
            im = 0.5 * (i0 + i1)
            stack.append((r0, r1, i0, im))
            stack.append((r0, r1, im, i1))
    for x in real_root_isolation(lin, d, (re0, re1)):
        found.append(complex(x, 0.0))
    return sorted(found, key=lambda z: (-z.real, abs(z.imag)))


def classify(p: ModelParams, eq: EquilibriumPoint, d: float) -> StabilityVerdict:
    """Stability verdict cascade for an equilibrium at a given delay.

    Disease-free point with R0 > 1: unstable for every delay (the
    characteristic function is negative at zero and grows to infinity).
    Zero delay: Routh-Hurwitz on the quartic.  Positive delay: the crossing
    quartic flags possible imaginary-axis roots; the fixed-delay verdict
    comes from the real-axis isolation plus the right-half rectangle scan.
    """
    lin = linearize(p, eq)
    details: dict = {}
    r0 = basic_reproduction_number(p)
    details["r0"] = r0.value
    if eq.kind is EquilibriumKind.DISEASE_FREE:
        cc = dfe_char_coefficients(p)
        details["char_coefficients"] = cc
        if r0.value > 1.0:
            details["delta_at_zero"] = cc.a0
            return StabilityVerdict(VerdictKind.UNSTABLE_ANY_DELAY, details)
    if d == 0.0:
        if eq.kind is EquilibriumKind.DISEASE_FREE:
            quartic = dfe_char_coefficients(p).quartic()
        else:
            pc, qc = quasi_polynomial(lin)
            quartic = pc.copy()
            quartic[-len(qc):] += qc
        rh = routh_hurwitz_quartic((quartic[4], quartic[3], quartic[2], quartic[1]))
        details["routh_hurwitz"] = rh
        if rh.stable:
            return StabilityVerdict(VerdictKind.STABLE_ZERO_DELAY, details)
        roots = np.roots(quartic)
        details["roots"] = roots
        if np.all(roots.real < 0):
            return StabilityVerdict(VerdictKind.STABLE_ZERO_DELAY, details)
        return StabilityVerdict(VerdictKind.INCONCLUSIVE, details)

    if eq.kind is EquilibriumKind.DISEASE_FREE:
        zq = crossing_quartic(dfe_char_coefficients(p), p)
    else:
        zq = crossing_quartic_from_linearization(lin)
    details["crossing_quartic"] = zq
    zroots = quartic_real_roots(zq)
    details["crossing_z_roots"] = zroots
    # roots within 1e-9 of zero are treated as non-positive (conservative)
    crossing_b = [float(np.sqrt(z)) for z in zroots if z > 1e-9]
    details["crossing_frequencies"] = crossing_b

    real_roots = real_root_isolation(lin, d, (-60.0, 50.0))
    details["real_roots"] = real_roots
    try:
        complex_found = rightmost_root_scan(lin, d)
    except ArithmeticError as exc:
        details["scan_error"] = str(exc)
        return StabilityVerdict(VerdictKind.INCONCLUSIVE, details)
    details["scan_roots"] = complex_found
    rightmost = max((z.real for z in complex_found), default=-np.inf)
    rightmost = max(rightmost, max((x for x in real_roots), default=-np.inf))
    details["rightmost_real_part"] = rightmost
    if rightmost < 0.0:
        return StabilityVerdict(VerdictKind.STABLE_AT_GIVEN_DELAY, details)
    if crossing_b:
        return StabilityVerdict(VerdictKind.CROSSING_EXISTS, details)
    return StabilityVerdict(VerdictKind.INCONCLUSIVE, details)
