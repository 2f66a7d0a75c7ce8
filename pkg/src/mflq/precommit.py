"""Pre-commitment solution at a fixed initial time, its Lyapunov upper bounds,
and the quadratic-cost representation by a triple of Lyapunov equations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IllPosedError
from .integrators import rk4_backward, solve_lyapunov
from .types import MatrixFn, ProblemData, hat, min_eig


def default_step(problem: ProblemData) -> float:
    return problem.T / 2000.0


@dataclass(frozen=True)
class PrecommitSolution:
    """Riccati pair and feedback gains for the problem frozen at initial time t."""

    t: float
    times: np.ndarray
    P: np.ndarray        # (len(times), n, n) symmetric
    Phat: np.ndarray     # (len(times), n, n) symmetric
    Theta: np.ndarray    # (len(times), m, n)
    Theta_hat: np.ndarray

    def value_at(self, x) -> float:
        x = np.asarray(x, float).reshape(-1)
        return float(x @ self.Phat[0] @ x)

    def theta_at(self, s) -> np.ndarray:
        return _interp_path(self.times, self.Theta, s)

    def theta_hat_at(self, s) -> np.ndarray:
        return _interp_path(self.times, self.Theta_hat, s)


def _interp_path(times, arr, s):
    s = min(max(s, times[0]), times[-1])
    i = min(int(np.searchsorted(times, s, side="right")) - 1, len(times) - 2)
    i = max(i, 0)
    w = (s - times[i]) / (times[i + 1] - times[i])
    return (1.0 - w) * arr[i] + w * arr[i + 1]


def solve_precommitment(problem: ProblemData, t: float, h: float | None = None
                        ) -> PrecommitSolution:
    """Solve the decoupled Riccati pair (P first, then the hat equation reading P).

    Weights are frozen at the initial time t; the value of the optimally
    controlled problem at (t, x) is <Phat(t) x, x>.
    """
    if h is None:
        h = default_step(problem)
    a, b = t, problem.T
    hp = hat(problem)
    n_coarse = max(1, math.ceil((b - a) / h - 1e-12))
    fine = np.linspace(a, b, 2 * n_coarse + 1)
    dt_fine = (b - a) / (2 * n_coarse)

    def base_rhs(s, P):
        As, Bs, Cs, Ds = problem.A(s), problem.B(s), problem.C(s), problem.D(s)
        K = problem.R(s, t) + Ds.T @ P @ Ds
        if min_eig(K) < 0.5 * problem.delta:
            raise IllPosedError(f"R(t)+D'PD lost definiteness at s={s:g}")
        L = Bs.T @ P + Ds.T @ P @ Cs
        return -(P @ As + As.T @ P + Cs.T @ P @ Cs + problem.Q(s, t)
                 - L.T @ np.linalg.solve(K, L))

    _, P_fine = rk4_backward(base_rhs, a, b, problem.G(t), dt_fine, symmetric=True)

    def P_at(s):
        return P_fine[int(round((s - a) / dt_fine))]

    def hat_rhs(s, Ph):
        P = P_at(s)
        Ah, Bh, Ch, Dh = hp.A(s), hp.B(s), hp.C(s), hp.D(s)
        K = hp.R(s, t) + Dh.T @ P @ Dh
        if min_eig(K) < 0.5 * problem.delta:
            raise IllPosedError(f"Rhat(t)+Dhat'PDhat lost definiteness at s={s:g}")
        L = Bh.T @ Ph + Dh.T @ P @ Ch
        return -(Ph @ Ah + Ah.T @ Ph + Ch.T @ P @ Ch + hp.Q(s, t)
                 - L.T @ np.linalg.solve(K, L))

    times, Phat = rk4_backward(hat_rhs, a, b, hp.G(t), (b - a) / n_coarse,
                               symmetric=True)
    P = P_fine[::2]

    Theta = np.empty((len(times), problem.m, problem.n))
    Theta_hat = np.empty_like(Theta)
    for i, s in enumerate(times):
        Bs, Cs, Ds = problem.B(s), problem.C(s), problem.D(s)
        K = problem.R(s, t) + Ds.T @ P[i] @ Ds
        Theta[i] = np.linalg.solve(K, Bs.T @ P[i] + Ds.T @ P[i] @ Cs)
        Bh, Ch, Dh = hp.B(s), hp.C(s), hp.D(s)
        Kh = hp.R(s, t) + Dh.T @ P[i] @ Dh
        Theta_hat[i] = np.linalg.solve(Kh, Bh.T @ Phat[i] + Dh.T @ P[i] @ Ch)

    return PrecommitSolution(t=t, times=times, P=P, Phat=Phat,
                             Theta=Theta, Theta_hat=Theta_hat)


@dataclass(frozen=True)
class BoundReport:
    times: np.ndarray
    Pi: np.ndarray
    Pi_hat: np.ndarray
    min_gap_P: float       # min eigenvalue of Pi - P over all nodes
    min_gap_Phat: float
    min_eig_P: float
    min_eig_Phat: float

    @property
    def bounds_hold(self) -> bool:
        tol = 1e-8
        return (self.min_gap_P >= -tol and self.min_gap_Phat >= -tol
                and self.min_eig_P >= -tol and self.min_eig_Phat >= -tol)


def precommit_bounds(problem: ProblemData, t: float, h: float | None = None
                     ) -> BoundReport:
    """Lyapunov upper bounds: drop the quadratic gain term from each equation.

    Returns the bound paths together with the sampled eigenvalue margins of
    0 <= P <= Pi and 0 <= Phat <= Pi_hat (reported, never thrown).
    """
    if h is None:
        h = default_step(problem)
    a, b = t, problem.T
    hp = hat(problem)
    n_coarse = max(1, math.ceil((b - a) / h - 1e-12))
    dt_fine = (b - a) / (2 * n_coarse)

    Qt = MatrixFn(lambda s: problem.Q(s, t), (problem.n, problem.n), problem.T)
    _, Pi_fine = solve_lyapunov(problem.A, problem.C, Qt, problem.G(t),
                                (a, b), dt_fine)

    def Pi_at(s):
        return Pi_fine[int(round((s - a) / dt_fine))]

    Qht = MatrixFn(lambda s: hp.Q(s, t), (problem.n, problem.n), problem.T)
    times, Pi_hat = solve_lyapunov(hp.A, hp.C, Qht, hp.G(t), (a, b),
                                   (b - a) / n_coarse, sandwich=Pi_at)
    Pi = Pi_fine[::2]

    sol = solve_precommitment(problem, t, h)
    gap_p = min(min_eig(Pi[i] - sol.P[i]) for i in range(len(times)))
    gap_ph = min(min_eig(Pi_hat[i] - sol.Phat[i]) for i in range(len(times)))
    me_p = min(min_eig(sol.P[i]) for i in range(len(times)))
    me_ph = min(min_eig(sol.Phat[i]) for i in range(len(times)))
    return BoundReport(times=times, Pi=Pi, Pi_hat=Pi_hat,
                       min_gap_P=gap_p, min_gap_Phat=gap_ph,
                       min_eig_P=me_p, min_eig_Phat=me_ph)


@dataclass(frozen=True)
class MeanFieldGenerator:
    """Homogeneous mean-field dynamics dX = (A X + Abar E[X]) ds + (C X + Cbar E[X]) dW."""

    A: MatrixFn
    Abar: MatrixFn
    C: MatrixFn
    Cbar: MatrixFn


@dataclass(frozen=True)
class QuadraticWeights:
    """Three running-cost layers (plain, E_t-squared, E_tau-squared) plus terminals."""

    Q: MatrixFn
    Qtilde: MatrixFn
    Qbar: MatrixFn
    G: np.ndarray
    Gbar: np.ndarray


@dataclass(frozen=True)
class LyapunovTriple:
    times: np.ndarray
    Gamma_tilde: np.ndarray
    Gamma: np.ndarray
    Gamma_bar: np.ndarray

    @property
    def Gamma_hat(self) -> np.ndarray:
        return self.Gamma + self.Gamma_bar


@dataclass(frozen=True)
class CostRepresentation:
    """Exact quadratic representation of a conditional-expectation cost functional."""

    Gamma0: np.ndarray
    Gammabar0: np.ndarray
    triple: LyapunovTriple

    def evaluate(self, x, ex) -> float:
        """Cost given the state x at the interval start and its E_tau mean ex."""
        x = np.asarray(x, float).reshape(-1)
        ex = np.asarray(ex, float).reshape(-1)
        return float(x @ self.Gamma0 @ x + ex @ self.Gammabar0 @ ex)


def cost_via_lyapunov(generator: MeanFieldGenerator, weights: QuadraticWeights,
                      interval: tuple[float, float], h: float) -> CostRepresentation:
    """Represent the quadratic cost over [t, T] by three coupled Lyapunov equations.

    The middle equation consumes the first one inside its sandwich term, so the
    three are marched jointly in one RK4 system.
    """
    a, b = interval
    n = generator.A.shape[0]

    def rhs(s, Z):
        Gt, Gm, Gb = Z[0], Z[1], Z[2]
        As, Abs_, Cs, Cbs = generator.A(s), generator.Abar(s), generator.C(s), generator.Cbar(s)
        Ah, Ch = As + Abs_, Cs + Cbs
        out = np.empty_like(Z)
        out[0] = -(Gt @ As + As.T @ Gt + Cs.T @ Gt @ Cs + weights.Q(s))
        out[1] = -(Gm @ Ah + Ah.T @ Gm + Ch.T @ Gt @ Ch + weights.Q(s) + weights.Qtilde(s))
        out[2] = -(Gb @ Ah + Ah.T @ Gb + weights.Qbar(s))
        return out

    terminal = np.stack([
        np.atleast_2d(np.asarray(weights.G, float)),
        np.atleast_2d(np.asarray(weights.G, float)),
        np.atleast_2d(np.asarray(weights.Gbar, float)),
    ])
    times, Z = rk4_backward(rhs, a, b, terminal, h, symmetric=True)
    triple = LyapunovTriple(times=times, Gamma_tilde=Z[:, 0], Gamma=Z[:, 1],
                            Gamma_bar=Z[:, 2])
    return CostRepresentation(Gamma0=Z[0, 1], Gammabar0=Z[0, 2], triple=triple)
