"""Closed-loop equilibrium: the limit of the finite-player game.

Two independent routes produce the two-parameter pair (Gamma, Gamma_hat):
refinement of the interval game under partition doubling, and a direct backward
march of the limit system in which every t-slice is driven by the shared
diagonal gain.  Cross-validating the two is the main consistency check for the
equilibrium field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, ConfigurationError, ConvergenceError, IllPosedError
from .game import DeltaEquilibrium, build_delta_equilibrium
from .types import ProblemData, TimeGrid, hat, min_eig


@dataclass(frozen=True)
class ClosedLoopSolution:
    """Equilibrium field pair on a node grid, lower triangle s >= t populated.

    Gamma[i, j] approximates Gamma(t_i, t_j) (entries above the diagonal are
    NaN); Theta_hat holds the equilibrium feedback on the diagonal and Theta
    the auxiliary diagonal gain entering the Gamma-equation residual.
    """

    problem: ProblemData
    grid: TimeGrid
    Gamma: np.ndarray        # (J, J, n, n)
    Gamma_hat: np.ndarray    # (J, J, n, n)
    Theta: np.ndarray        # (J, m, n)
    Theta_hat: np.ndarray    # (J, m, n)
    trace: tuple
    game: DeltaEquilibrium | None = None

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def node_index(self, t: float) -> int:
        return int(np.argmin(np.abs(self.nodes - t)))

    def value(self, t: float, x) -> float:
        """Equilibrium value <Gamma_hat(t,t) x, x> at the nearest node."""
        j = self.node_index(t)
        x = np.asarray(x, float).reshape(-1)
        return float(x @ self.Gamma_hat[j, j] @ x)

    def theta_hat_at(self, s: float) -> np.ndarray:
        nodes = self.nodes
        s = min(max(s, nodes[0]), nodes[-1])
        i = min(int(np.searchsorted(nodes, s, side="right")) - 1, len(nodes) - 2)
        i = max(i, 0)
        w = (s - nodes[i]) / (nodes[i + 1] - nodes[i])
        return (1.0 - w) * self.Theta_hat[i] + w * self.Theta_hat[i + 1]


def equilibrium_value(sol: ClosedLoopSolution, t: float, x) -> float:
    return sol.value(t, x)


def _assemble(eq: DeltaEquilibrium) -> tuple[np.ndarray, ...]:
    """Node-grid field pair from a finite-player solve.

    Every anchor column t_j is served by player j's own cost triple so the
    anchors line up exactly across refinements; the terminal row is the
    terminal weight itself.
    """
    N = eq.N
    if N < 2:
        raise ConfigurationError("field assembly needs at least two intervals")
    problem = eq.problem
    hp = hat(problem)
    n = problem.n
    J = N + 1
    nodes = eq.partition.nodes
    Gm = np.full((J, J, n, n), np.nan)
    Gh = np.full((J, J, n, n), np.nan)
    for j in range(J):
        tj = float(nodes[j])
        Gm[N, j] = problem.G(tj)
        Gh[N, j] = hp.G(tj)
        for i in range(j, N):
            Gm[i, j] = eq.node_triples[i, j, 1]
            Gh[i, j] = eq.node_triples[i, j, 1] + eq.node_triples[i, j, 2]
    Th = np.empty((J, problem.m, n))
    Thh = np.empty_like(Th)
    for j in range(J):
        s = float(nodes[j])
        d, dh = Gm[j, j], Gh[j, j]
        Bs, Cs, Ds = problem.B(s), problem.C(s), problem.D(s)
        K = problem.R(s, s) + Ds.T @ d @ Ds
        Th[j] = np.linalg.solve(K, Bs.T @ d + Ds.T @ d @ Cs)
        Bh, Ch, Dh = hp.B(s), hp.C(s), hp.D(s)
        Kh = hp.R(s, s) + Dh.T @ d @ Dh
        Thh[j] = np.linalg.solve(Kh, Bh.T @ dh + Dh.T @ d @ Ch)
    return Gm, Gh, Th, Thh


def _tri_diff(A: np.ndarray, B: np.ndarray) -> float:
    """Sup-norm over the populated (lower-triangular) entries."""
    d = np.abs(A - B)
    return float(np.nanmax(d)) if d.size else 0.0


def solve_closed_loop(problem: ProblemData, N0: int = 4, tol: float = 1e-4,
                      max_doublings: int = 6, h: float | None = None
                      ) -> ClosedLoopSolution:
    """Partition-doubling refinement of the interval game until Cauchy in sup-norm.

    Successive field pairs (and the feedback gains) are compared on the coarser
    partition's nodes, which are an exact subset of the finer ones; stops when
    the difference drops below `tol`, raises ConvergenceError (with the full
    refinement trace) otherwise.
    """
    if N0 < 2:
        raise ConfigurationError("N0 must be at least 2")
    N = N0
    prev = None
    trace: list[dict] = []
    for _ in range(max_doublings + 1):
        eq = build_delta_equilibrium(problem, TimeGrid.uniform(problem.T, N), h)
        Gm, Gh, Th, Thh = _assemble(eq)
        if prev is not None:
            pGm, pGh, pTh, pThh = prev
            d_gamma = max(_tri_diff(Gm[::2, ::2], pGm),
                          _tri_diff(Gh[::2, ::2], pGh))
            d_theta = max(float(np.abs(Th[::2] - pTh).max()),
                          float(np.abs(Thh[::2] - pThh).max()))
            delta = max(d_gamma, d_theta)
            trace.append({"N": N, "delta": delta,
                          "sup_delta_Gamma": d_gamma, "sup_delta_Theta": d_theta})
            if delta < tol:
                return ClosedLoopSolution(problem=problem, grid=eq.partition,
                                          Gamma=Gm, Gamma_hat=Gh, Theta=Th,
                                          Theta_hat=Thh, trace=tuple(trace),
                                          game=eq)
        else:
            trace.append({"N": N, "delta": None})
        prev = (Gm, Gh, Th, Thh)
        N *= 2
    raise ConvergenceError(
        f"game refinement not Cauchy below {tol:g} after {max_doublings} doublings",
        trace=tuple(trace))


def direct_diagonal_solve(problem: ProblemData, h: float | None = None,
                          t_nodes: int = 128) -> ClosedLoopSolution:
    """Backward march of the limit system, all t-slices stacked.

    Every slice pair (Gamma(., t), Gamma_hat(., t)) shares the diagonal feedback
    Theta_hat(s) = [Rhat(s,s) + Dhat' Gamma(s,s) Dhat]^{-1}
    [Bhat' Gamma_hat(s,s) + Dhat' Gamma(s,s) Chat]; diagonal values at stage
    times are interpolated from the bracketing slices.  The Gamma-equation
    carries the quadratic Theta_hat' R(s,t) Theta_hat and the Gamma_hat one
    Theta_hat' Rhat(s,t) Theta_hat, both sandwiching Gamma.
    """
    if h is None:
        h = problem.T / 2000.0
    hp = hat(problem)
    n = problem.n
    tg = np.linspace(0.0, problem.T, t_nodes + 1)
    J = t_nodes + 1
    sub = max(1, math.ceil((problem.T / t_nodes) / h - 1e-12))

    Z = np.empty((2, J, n, n))
    for j in range(J):
        Z[0, j] = problem.G(tg[j])
        Z[1, j] = hp.G(tg[j])

    G_levels = np.full((J, J, n, n), np.nan)
    Gh_levels = np.full((J, J, n, n), np.nan)
    G_levels[-1] = Z[0]
    Gh_levels[-1] = Z[1]

    def diag_pair(s, Zs):
        j = min(int(np.searchsorted(tg, s, side="right")) - 1, J - 2)
        j = max(j, 0)
        w = (s - tg[j]) / (tg[j + 1] - tg[j])
        d = (1.0 - w) * Zs[0, j] + w * Zs[0, j + 1]
        dh = (1.0 - w) * Zs[1, j] + w * Zs[1, j + 1]
        return d, dh

    def rhs(s, Zs):
        Ah, Bh, Ch, Dh = hp.A(s), hp.B(s), hp.C(s), hp.D(s)
        d, dh = diag_pair(s, Zs)
        K = hp.R(s, s) + Dh.T @ d @ Dh
        if min_eig(K) < 0.5 * problem.delta:
            raise IllPosedError(f"diagonal factor lost definiteness at s={s:g}")
        Thh = np.linalg.solve(K, Bh.T @ dh + Dh.T @ d @ Ch)
        M = Ah - Bh @ Thh
        Nc = Ch - Dh @ Thh
        Q = problem.Q.at_many(s, tg)
        Qh = hp.Q.at_many(s, tg)
        Rl = problem.R.at_many(s, tg)
        Rhl = hp.R.at_many(s, tg)
        G, Gh = Zs[0], Zs[1]
        sand = np.einsum("ai,lab,bj->lij", Nc, G, Nc)
        quad = np.einsum("ai,lab,bj->lij", Thh, Rl, Thh)
        quadh = np.einsum("ai,lab,bj->lij", Thh, Rhl, Thh)
        out = np.empty_like(Zs)
        out[0] = -(G @ M + np.swapaxes(G @ M, -1, -2) + sand + Q + quad)
        out[1] = -(Gh @ M + np.swapaxes(Gh @ M, -1, -2) + sand + Qh + quadh)
        return out

    for lev in range(J - 1, 0, -1):
        a, b = tg[lev - 1], tg[lev]
        dt = (b - a) / sub
        for q in range(sub):
            s = b - q * dt
            k1 = rhs(s, Z)
            k2 = rhs(s - 0.5 * dt, Z - 0.5 * dt * k1)
            k3 = rhs(s - 0.5 * dt, Z - 0.5 * dt * k2)
            k4 = rhs(s - dt, Z - dt * k3)
            Z = Z - dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            Z = 0.5 * (Z + np.swapaxes(Z, -1, -2))
            if not np.all(np.isfinite(Z)):
                raise BlowUpError(f"limit-system march blew up near s={s - dt:g}",
                                  time=float(s - dt))
        G_levels[lev - 1, :lev] = Z[0, :lev]
        Gh_levels[lev - 1, :lev] = Z[1, :lev]

    Theta = np.empty((J, problem.m, n))
    Theta_hat = np.empty_like(Theta)
    for j in range(J):
        s = float(tg[j])
        d = G_levels[j, j]
        dh = Gh_levels[j, j]
        Bs, Cs, Ds = problem.B(s), problem.C(s), problem.D(s)
        K = problem.R(s, s) + Ds.T @ d @ Ds
        Theta[j] = np.linalg.solve(K, Bs.T @ d + Ds.T @ d @ Cs)
        Bh, Ch, Dh = hp.B(s), hp.C(s), hp.D(s)
        Kh = hp.R(s, s) + Dh.T @ d @ Dh
        Theta_hat[j] = np.linalg.solve(Kh, Bh.T @ dh + Dh.T @ d @ Ch)

    return ClosedLoopSolution(problem=problem, grid=TimeGrid(tg),
                              Gamma=G_levels, Gamma_hat=Gh_levels,
                              Theta=Theta, Theta_hat=Theta_hat, trace=())


def residual(sol: ClosedLoopSolution, problem: ProblemData | None = None) -> dict:
    """Finite-difference residual of the limit system over the stored field.

    Uses a five-point fourth-order stencil for the s-derivative along each
    t-column; the Gamma-equation is evaluated in its displayed form with the
    auxiliary diagonal gain Theta, the Gamma_hat one with Theta_hat.  Returns
    the max and per-equation residuals over all interior stencil points.
    """
    if problem is None:
        problem = sol.problem
    hp = hat(problem)
    tg = sol.nodes
    J = len(tg)
    if J < 5:
        raise ConfigurationError("residual needs at least five grid nodes")
    dt = float(tg[1] - tg[0])
    w = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * dt)
    worst_g = 0.0
    worst_gh = 0.0
    for j in range(J):
        for i in range(max(j + 2, 2), J - 2):
            s = float(tg[i])
            t = float(tg[j])
            dG = np.tensordot(w, sol.Gamma[i - 2:i + 3, j], axes=(0, 0))
            dGh = np.tensordot(w, sol.Gamma_hat[i - 2:i + 3, j], axes=(0, 0))
            Ah, Bh, Ch, Dh = hp.A(s), hp.B(s), hp.C(s), hp.D(s)
            Thh = sol.theta_hat_at(s)
            Th = _interp_nodes(tg, sol.Theta, s)
            M = Ah - Bh @ Thh
            Nc = Ch - Dh @ Thh
            G = sol.Gamma[i, j]
            Gh = sol.Gamma_hat[i, j]
            sand = Nc.T @ G @ Nc
            res_g = dG + G @ M + M.T @ G + sand \
                + Th.T @ problem.R(s, t) @ Th + problem.Q(s, t)
            res_gh = dGh + Gh @ M + M.T @ Gh + sand \
                + Thh.T @ hp.R(s, t) @ Thh + hp.Q(s, t)
            worst_g = max(worst_g, float(np.abs(res_g).max()))
            worst_gh = max(worst_gh, float(np.abs(res_gh).max()))
    scale = 1.0 + float(np.nanmax(np.abs(sol.Gamma_hat)))
    return {"max_residual": max(worst_g, worst_gh),
            "gamma_residual": worst_g,
            "gamma_hat_residual": worst_gh,
            "scale": scale}


def _interp_nodes(nodes, arr, s):
    s = min(max(s, nodes[0]), nodes[-1])
    i = min(int(np.searchsorted(nodes, s, side="right")) - 1, len(nodes) - 2)
    i = max(i, 0)
    w = (s - nodes[i]) / (nodes[i + 1] - nodes[i])
    return (1.0 - w) * arr[i] + w * arr[i + 1]
