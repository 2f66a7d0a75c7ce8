"""Backward terminal-value integration of matrix ODEs.

Provides the generic RK4 march, linear (Lyapunov-type) equations with an optional
sandwich term, and the symmetric Riccati equation with cross term, together with
its a-priori bound constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BlowUpError, IllPosedError, ValidationError
from .types import MatrixFn, min_eig, symmetrize, tau_psd


@dataclass(frozen=True)
class MatrixODEProblem:
    """Terminal-value problem dM/ds = rhs(s, M), M(terminal_time) given, on [a, terminal_time]."""

    rhs: Callable[[float, np.ndarray], np.ndarray]
    terminal_time: float
    terminal_value: np.ndarray
    a: float
    h: float
    symmetric: bool = False


def rk4_backward(rhs, a: float, b: float, terminal_value: np.ndarray, h: float,
                 symmetric: bool = False):
    """Classic RK4 march from b down to a with uniform steps of size <= h.

    Returns (times ascending, values aligned with times). The step count is the
    smallest integer that brings the uniform step at or below h, so requested
    endpoints are always grid nodes.
    """
    if h <= 0:
        raise ValidationError("step size must be positive")
    span = b - a
    if span <= 0:
        raise ValidationError("empty integration interval")
    n = max(1, math.ceil(span / h - 1e-12))
    times = np.linspace(a, b, n + 1)
    M = np.array(terminal_value, dtype=float, copy=True)
    vals = np.empty((n + 1,) + M.shape)
    vals[-1] = M
    for i in range(n, 0, -1):
        s = times[i]
        dt = times[i] - times[i - 1]
        k1 = rhs(s, M)
        k2 = rhs(s - 0.5 * dt, M - 0.5 * dt * k1)
        k3 = rhs(s - 0.5 * dt, M - 0.5 * dt * k2)
        k4 = rhs(s - dt, M - dt * k3)
        M = M - (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if symmetric:
            M = symmetrize(M)
        if not np.all(np.isfinite(M)):
            raise BlowUpError(f"backward integration blew up at s={times[i - 1]:g}",
                              time=float(times[i - 1]))
        vals[i - 1] = M
    return times, vals


def integrate_backward(problem: MatrixODEProblem):
    """Integrate a MatrixODEProblem; see rk4_backward."""
    return rk4_backward(problem.rhs, problem.a, problem.terminal_time,
                        problem.terminal_value, problem.h, problem.symmetric)


def solve_lyapunov(A: MatrixFn, C: Optional[MatrixFn], forcing: MatrixFn,
                   G: np.ndarray, interval: tuple[float, float], h: float,
                   sandwich: Optional[Callable[[float], np.ndarray]] = None):
    """Solve P' + P A + A' P + C' S C + forcing = 0 backward from P(b) = G.

    The sandwiched matrix S is P itself by default; passing `sandwich` substitutes
    an externally supplied path s -> S(s) (needed when a previously computed field
    enters the quadratic term). With C absent the sandwich term is dropped.
    Returns (times, path) with every stored matrix symmetric.
    """
    a, b = interval
    Gm = np.atleast_2d(np.asarray(G, dtype=float))

    def rhs(s, P):
        As = A(s)
        out = P @ As + As.T @ P + forcing(s)
        if C is not None:
            Cs = C(s)
            mid = sandwich(s) if sandwich is not None else P
            out = out + Cs.T @ mid @ Cs
        return -out

    return rk4_backward(rhs, a, b, Gm, h, symmetric=True)


@dataclass(frozen=True)
class RiccatiCoefficients:
    """Coefficients of the symmetric Riccati equation with cross term S."""

    A: MatrixFn
    B: MatrixFn
    C: MatrixFn
    D: MatrixFn
    S: MatrixFn
    Q: MatrixFn
    R: MatrixFn
    G: np.ndarray
    delta: float = 1e-8

    def check_definiteness(self, interval, samples: int = 9):
        """Sampled check of R >= delta I, Q - S' R^{-1} S >= 0, G >= 0."""
        a, b = interval
        for s in np.linspace(a, b, samples):
            Rs = self.R(s)
            if min_eig(Rs) < self.delta - tau_psd(Rs):
                raise ValidationError(f"R(s) not >= delta I at s={s:g}")
            Ss = self.S(s)
            M = self.Q(s) - Ss.T @ np.linalg.solve(Rs, Ss)
            if min_eig(M) < -tau_psd(M):
                raise ValidationError(f"Q - S'R^-1 S not PSD at s={s:g}")
        Gm = np.atleast_2d(np.asarray(self.G, float))
        if min_eig(Gm) < -tau_psd(Gm):
            raise ValidationError("terminal matrix G not PSD")


@dataclass(frozen=True)
class RiccatiSolution:
    times: np.ndarray
    P: np.ndarray      # (len(times), n, n)
    Theta: np.ndarray  # (len(times), m, n)


def _riccati_rhs(coeffs: RiccatiCoefficients):
    def rhs(s, P):
        As, Bs, Cs, Ds = coeffs.A(s), coeffs.B(s), coeffs.C(s), coeffs.D(s)
        Ss, Qs, Rs = coeffs.S(s), coeffs.Q(s), coeffs.R(s)
        K = Rs + Ds.T @ P @ Ds
        if min_eig(K) < 0.5 * coeffs.delta:
            raise IllPosedError(f"R + D'PD lost definiteness at s={s:g}")
        L = Bs.T @ P + Ss + Ds.T @ P @ Cs
        Theta = np.linalg.solve(K, L)
        return -(P @ As + As.T @ P + Cs.T @ P @ Cs + Qs - L.T @ Theta)
    return rhs


def solve_riccati(coeffs: RiccatiCoefficients, interval: tuple[float, float],
                  h: float) -> RiccatiSolution:
    """Backward RK4 solve of the Riccati equation; returns P and the gain path.

    Asserts positive semidefiniteness of P at every node and a small midpoint
    residual of the integrated equation.
    """
    coeffs.check_definiteness(interval)
    times, P = rk4_backward(_riccati_rhs(coeffs), interval[0], interval[1],
                            np.atleast_2d(np.asarray(coeffs.G, float)), h,
                            symmetric=True)
    Theta = np.empty((len(times), coeffs.B.shape[1], coeffs.A.shape[0]))
    for i, s in enumerate(times):
        Bs, Cs, Ds = coeffs.B(s), coeffs.C(s), coeffs.D(s)
        K = coeffs.R(s) + Ds.T @ P[i] @ Ds
        if min_eig(K) < 0.5 * coeffs.delta:
            raise IllPosedError(f"R + D'PD lost definiteness at s={s:g}")
        Theta[i] = np.linalg.solve(K, Bs.T @ P[i] + coeffs.S(s) + Ds.T @ P[i] @ Cs)
        floor = -tau_psd(P[i])
        if min_eig(P[i]) < floor:
            raise IllPosedError(f"Riccati solution lost PSD at s={s:g}")

    _check_midpoint_residual(coeffs, times, P)
    return RiccatiSolution(times=times, P=P, Theta=Theta)


def _check_midpoint_residual(coeffs, times, P):
    rhs = _riccati_rhs(coeffs)
    scale = 1.0 + float(np.abs(P).max())
    # the midpoint-rule residual of the exact solution is itself O(h^2)
    h_max = float(np.diff(times).max())
    tau_res = max(1e-6, 0.5 * h_max ** 2) * scale
    worst = 0.0
    for i in range(len(times) - 1):
        dt = times[i + 1] - times[i]
        mid = 0.5 * (times[i] + times[i + 1])
        dP = (P[i + 1] - P[i]) / dt
        res = dP - rhs(mid, 0.5 * (P[i] + P[i + 1]))
        worst = max(worst, float(np.abs(res).max()))
    if worst > tau_res:
        raise IllPosedError(
            f"Riccati midpoint residual {worst:.3g} exceeds tolerance {tau_res:.3g}")


def k0_bound(coeffs: RiccatiCoefficients, interval: tuple[float, float],
             samples: int = 101) -> float:
    """A-priori uniform bound (|G| + T sup|Q|) * exp(T sup|A + A' + C'C|).

    Operator 2-norms, sampled on a uniform grid; callers use it as a blow-up sentinel.
    """
    a, b = interval
    T = b - a
    ss = np.linspace(a, b, samples)
    qn = max(float(np.linalg.norm(coeffs.Q(s), 2)) for s in ss)
    an = max(float(np.linalg.norm(coeffs.A(s) + coeffs.A(s).T + coeffs.C(s).T @ coeffs.C(s), 2))
             for s in ss)
    gn = float(np.linalg.norm(np.atleast_2d(np.asarray(coeffs.G, float)), 2))
    return (gn + T * qn) * math.exp(T * an)
