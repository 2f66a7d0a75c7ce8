"""Finite-player sequential game over a time partition.

Each player k controls one interval [t_k, t_{k+1}) with all cost weights frozen
at t_k, best-responding to the gains already fixed by the later players.  The
solve runs backward over the intervals, marching the player's Riccati pair
jointly with the Lyapunov triples that track every earlier player's cost under
the composite feedback.  Terminal data for player k-1 are stitched from player
(k-1)'s own triple at t_k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, IllPosedError
from .precommit import default_step
from .simulate import MCConfig, aligned_time_grid, brownian_increments, simulate_closed_loop
from .types import (GainSegment, PiecewiseGain, ProblemData, TimeGrid, hat,
                    min_eig, symmetrize, tau_psd)


@dataclass(frozen=True)
class IntervalSolution:
    """One player's Riccati pair and gains on their own interval."""

    times: np.ndarray
    P: np.ndarray          # (len(times), n, n)
    Phat: np.ndarray
    Theta: np.ndarray      # (len(times), m, n)
    Theta_hat: np.ndarray


@dataclass(frozen=True)
class DeltaEquilibrium:
    """Backward-recursion solution of the N-player game on a partition.

    node_triples[j, l] holds player l's Lyapunov triple (tilde, plain, bar)
    evaluated at node t_j, approached from within the interval directly above
    t_j; it is populated for l <= j and for the terminal row j = N.  Each
    triple is carried through its own player's interval as well, where it
    coincides with that player's Riccati pair.
    values[k] is the hat-Riccati matrix of player k at t_k, so player k's
    equilibrium cost from state x at t_k is <values[k] x, x>.
    """

    problem: ProblemData
    partition: TimeGrid
    intervals: list[IntervalSolution]
    gains: PiecewiseGain
    node_triples: np.ndarray   # (N+1, N-1, 3, n, n), NaN where undefined
    values: np.ndarray         # (N, n, n)

    @property
    def N(self) -> int:
        return self.partition.num_intervals

    def gamma_at_node(self, player: int, j: int) -> np.ndarray:
        """Gamma_player(t_j) for j >= player."""
        if j < player:
            raise ConfigurationError(
                f"player {player}'s triple is undefined below t_{player}")
        return self.node_triples[j, player, 1]

    def gamma_hat_at_node(self, player: int, j: int) -> np.ndarray:
        if j < player:
            raise ConfigurationError(
                f"player {player}'s triple is undefined below t_{player}")
        return self.node_triples[j, player, 1] + self.node_triples[j, player, 2]


def build_delta_equilibrium(problem: ProblemData, partition: TimeGrid,
                            h: float | None = None) -> DeltaEquilibrium:
    """Backward interval recursion producing the piecewise equilibrium gains.

    Inside interval k the state marched by one joint RK4 system is the pair
    (P_k, Phat_k) together with the triples of all players l < k under the
    composite feedback; the triples restart their first component from the
    second at every interval boundary.
    """
    if h is None:
        h = default_step(problem)
    nodes = partition.nodes
    N = partition.num_intervals
    if N < 1:
        raise ConfigurationError("partition must contain at least one interval")
    hp = hat(problem)
    n, m = problem.n, problem.m

    # Active triples, player-indexed; initialized at t_N where the first two
    # components coincide with that player's terminal weight.
    Tri = np.empty((N, 3, n, n))
    for l in range(N):
        Gl = problem.G(nodes[l])
        Tri[l, 0] = Gl
        Tri[l, 1] = Gl
        Tri[l, 2] = problem.Gbar(nodes[l])
    node_triples = np.full((N + 1, N, 3, n, n), np.nan)
    node_triples[N] = Tri

    P_term = np.atleast_2d(problem.G(nodes[N - 1]))
    Ph_term = np.atleast_2d(hp.G(nodes[N - 1]))
    intervals: list[IntervalSolution | None] = [None] * N
    segments: list[GainSegment] = []
    values = np.empty((N, n, n))

    for k in range(N - 1, -1, -1):
        a, b = float(nodes[k]), float(nodes[k + 1])
        tk = a
        steps = max(50, math.ceil((b - a) / h - 1e-12))
        times_k = np.linspace(a, b, steps + 1)
        dt = (b - a) / steps

        # Entering this interval the tilde components restart from the plain
        # ones (both players' views agree at the boundary).  Triples of players
        # 0..k ride through this interval, player k's alongside their own
        # Riccati pair, with which it coincides.
        Tri[:k + 1, 0] = Tri[:k + 1, 1]

        # Frozen-weight evaluators for the tracked players, batched over l.
        t_anchor = nodes[:k + 1]

        def rhs(s, state, _tk=tk, _k=k, _ta=t_anchor):
            P, Ph = state[0], state[1]
            As, Bs = problem.A(s), problem.B(s)
            Cs, Ds = problem.C(s), problem.D(s)
            Ah, Bh, Ch, Dh = hp.A(s), hp.B(s), hp.C(s), hp.D(s)
            K = problem.R(s, _tk) + Ds.T @ P @ Ds
            if min_eig(K) < 0.5 * problem.delta:
                raise IllPosedError(
                    f"R + D'PD lost definiteness at s={s:g} (interval {_k})")
            Lm = Bs.T @ P + Ds.T @ P @ Cs
            Th = np.linalg.solve(K, Lm)
            Kh = hp.R(s, _tk) + Dh.T @ P @ Dh
            if min_eig(Kh) < 0.5 * problem.delta:
                raise IllPosedError(
                    f"Rhat + Dhat'P Dhat lost definiteness at s={s:g} (interval {_k})")
            Lh = Bh.T @ Ph + Dh.T @ P @ Ch
            Thh = np.linalg.solve(Kh, Lh)

            out = np.empty_like(state)
            out[0] = -(P @ As + As.T @ P + Cs.T @ P @ Cs
                       + problem.Q(s, _tk) - Lm.T @ Th)
            out[1] = -(Ph @ Ah + Ah.T @ Ph + Ch.T @ P @ Ch
                       + hp.Q(s, _tk) - Lh.T @ Thh)
            Gt = state[2::3]
            Gm = state[3::3]
            Gb = state[4::3]
            Ql = problem.Q.at_many(s, _ta)
            Rl = problem.R.at_many(s, _ta)
            Qbl = problem.Qbar.at_many(s, _ta)
            Rbl = problem.Rbar.at_many(s, _ta)
            M1 = As - Bs @ Th
            N1 = Cs - Ds @ Th
            M2 = Ah - Bh @ Thh
            N2 = Ch - Dh @ Thh
            qTh = np.einsum("ai,lab,bj->lij", Th, Rl, Th)
            qThh = np.einsum("ai,lab,bj->lij", Thh, Rl, Thh)
            qThhb = np.einsum("ai,lab,bj->lij", Thh, Rbl, Thh)
            out[2::3] = -(Gt @ M1 + np.swapaxes(Gt @ M1, -1, -2)
                          + np.einsum("ai,lab,bj->lij", N1, Gt, N1)
                          + Ql + qTh)
            out[3::3] = -(Gm @ M2 + np.swapaxes(Gm @ M2, -1, -2)
                          + np.einsum("ai,lab,bj->lij", N2, Gt, N2)
                          + Ql + qThh)
            out[4::3] = -(Gb @ M2 + np.swapaxes(Gb @ M2, -1, -2)
                          + Qbl + qThhb)
            return out

        state = np.empty((2 + 3 * (k + 1), n, n))
        state[0] = P_term
        state[1] = Ph_term
        state[2::3] = Tri[:k + 1, 0]
        state[3::3] = Tri[:k + 1, 1]
        state[4::3] = Tri[:k + 1, 2]

        P_path = np.empty((steps + 1, n, n))
        Ph_path = np.empty((steps + 1, n, n))
        P_path[-1] = state[0]
        Ph_path[-1] = state[1]
        for i in range(steps, 0, -1):
            s = times_k[i]
            k1 = rhs(s, state)
            k2 = rhs(s - 0.5 * dt, state - 0.5 * dt * k1)
            k3 = rhs(s - 0.5 * dt, state - 0.5 * dt * k2)
            k4 = rhs(s - dt, state - dt * k3)
            state = state - (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            state = 0.5 * (state + np.swapaxes(state, -1, -2))
            if not np.all(np.isfinite(state)):
                raise IllPosedError(
                    f"game recursion blew up at s={times_k[i - 1]:g} (interval {k})")
            P_path[i - 1] = state[0]
            Ph_path[i - 1] = state[1]

        Tri[:k + 1, 0] = state[2::3]
        Tri[:k + 1, 1] = state[3::3]
        Tri[:k + 1, 2] = state[4::3]
        node_triples[k, :k + 1] = Tri[:k + 1]

        Theta = np.empty((steps + 1, m, n))
        Theta_hat = np.empty_like(Theta)
        for i, s in enumerate(times_k):
            Bs, Cs, Ds = problem.B(s), problem.C(s), problem.D(s)
            K = problem.R(s, tk) + Ds.T @ P_path[i] @ Ds
            Theta[i] = np.linalg.solve(K, Bs.T @ P_path[i] + Ds.T @ P_path[i] @ Cs)
            Bh, Ch, Dh = hp.B(s), hp.C(s), hp.D(s)
            Kh = hp.R(s, tk) + Dh.T @ P_path[i] @ Dh
            Theta_hat[i] = np.linalg.solve(
                Kh, Bh.T @ Ph_path[i] + Dh.T @ P_path[i] @ Ch)

        intervals[k] = IntervalSolution(times=times_k, P=P_path, Phat=Ph_path,
                                        Theta=Theta, Theta_hat=Theta_hat)
        values[k] = Ph_path[0]

        if k:
            Gk = Tri[k - 1, 1]
            Gkh = Tri[k - 1, 1] + Tri[k - 1, 2]
            for name, M in (("next terminal", Gk), ("next hat terminal", Gkh)):
                if min_eig(M) < -max(tau_psd(M), 1e-8):
                    raise IllPosedError(
                        f"{name} at t_{k} lost positive semidefiniteness")
            P_term = symmetrize(Gk)
            Ph_term = symmetrize(Gkh)

    segments = [GainSegment(times=iv.times, theta=iv.Theta, theta_hat=iv.Theta_hat)
                for iv in intervals]
    gains = PiecewiseGain(partition=partition, segments=tuple(segments))
    return DeltaEquilibrium(problem=problem, partition=partition,
                            intervals=intervals, gains=gains,
                            node_triples=node_triples, values=values)


def ordering_report(eq: DeltaEquilibrium, h: float | None = None) -> dict:
    """Eigenvalue margins for the comparison chain at every partition node.

    On interval k the chain is 0 <= Gamma_tilde_l <= P_k <= Pi_k and
    0 <= Gamma_hat_l <= Phat_k <= Pi_hat_k for every earlier player l < k,
    checked at both interval endpoints.  Pi_k / Pi_hat_k are the Lyapunov
    majorants obtained by dropping each equation's quadratic gain term.
    Returns {"min_margin", "passed", "per_interval"}.
    """
    problem = eq.problem
    hp = hat(problem)
    nodes = eq.partition.nodes
    if h is None:
        h = default_step(problem)
    margins = []
    per_interval = []
    for k in range(eq.N):
        iv = eq.intervals[k]
        a, b = float(nodes[k]), float(nodes[k + 1])
        tk = a
        steps = len(iv.times) - 1
        dt = (b - a) / steps

        def lyap_rhs(s, Z, _tk=tk):
            Pi, Pih = Z[0], Z[1]
            As, Cs = problem.A(s), problem.C(s)
            Ah, Ch = hp.A(s), hp.C(s)
            out = np.empty_like(Z)
            out[0] = -(Pi @ As + As.T @ Pi + Cs.T @ Pi @ Cs + problem.Q(s, _tk))
            out[1] = -(Pih @ Ah + Ah.T @ Pih + Ch.T @ Pi @ Ch + hp.Q(s, _tk))
            return out

        Z = np.stack([iv.P[-1], iv.Phat[-1]])
        Pi_path = np.empty_like(iv.P)
        Pih_path = np.empty_like(iv.Phat)
        Pi_path[-1] = Z[0]
        Pih_path[-1] = Z[1]
        for i in range(steps, 0, -1):
            s = iv.times[i]
            k1 = lyap_rhs(s, Z)
            k2 = lyap_rhs(s - 0.5 * dt, Z - 0.5 * dt * k1)
            k3 = lyap_rhs(s - 0.5 * dt, Z - 0.5 * dt * k2)
            k4 = lyap_rhs(s - dt, Z - dt * k3)
            Z = Z - (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            Z = 0.5 * (Z + np.swapaxes(Z, -1, -2))
            Pi_path[i - 1] = Z[0]
            Pih_path[i - 1] = Z[1]

        rec = {"interval": k, "checks": []}
        for end, idx, j in ((0, 0, k), (1, steps, k + 1)):
            P_end, Ph_end = iv.P[idx], iv.Phat[idx]
            pairs = [
                ("P >= 0", min_eig(P_end)),
                ("Phat >= 0", min_eig(Ph_end)),
                ("Pi - P", min_eig(Pi_path[idx] - P_end)),
                ("Pihat - Phat", min_eig(Pih_path[idx] - Ph_end)),
            ]
            for l in range(k):
                if end == 0:
                    Gt = eq.node_triples[k, l, 0]
                    Gm = eq.node_triples[k, l, 1]
                    Gb = eq.node_triples[k, l, 2]
                else:
                    # At the top endpoint the tilde component has just been
                    # restarted from the plain one.
                    Gm = eq.node_triples[k + 1, l, 1]
                    Gb = eq.node_triples[k + 1, l, 2]
                    Gt = Gm
                pairs += [
                    (f"Gtilde_{l} >= 0", min_eig(Gt)),
                    (f"Ghat_{l} >= 0", min_eig(Gm + Gb)),
                    (f"P - Gtilde_{l}", min_eig(P_end - Gt)),
                    (f"Phat - Ghat_{l}", min_eig(Ph_end - (Gm + Gb))),
                ]
            for name, val in pairs:
                rec["checks"].append({"node": j, "name": name, "margin": float(val)})
                margins.append(float(val))
        per_interval.append(rec)

    min_margin = min(margins) if margins else 0.0
    return {"min_margin": min_margin,
            "passed": bool(min_margin >= -1e-8),
            "per_interval": per_interval}


def jump_magnitudes(eq: DeltaEquilibrium) -> dict:
    """Sup-norm gaps between consecutive players' triples at shared nodes.

    For each k, compares player k against player k-1 at every node of the common
    domain [t_{k+1}, T] and reports the data-variation majorant
    |G_k - G_{k-1}| + integral of |Q_k - Q_{k-1}| + |R_k - R_{k-1}|, with a
    fixed safety factor of 10 on the comparison.
    """
    problem = eq.problem
    nodes = eq.partition.nodes
    N = eq.N
    records = []
    worst_ratio = 0.0
    for k in range(1, N - 1):
        jump = 0.0
        for j in range(k + 1, N + 1):
            for comp in range(3):
                d = eq.node_triples[j, k, comp] - eq.node_triples[j, k - 1, comp]
                jump = max(jump, float(np.abs(d).max()))
        tk, tk1 = float(nodes[k]), float(nodes[k - 1])
        dG = float(np.abs(np.atleast_2d(problem.G(tk) - problem.G(tk1))).max())
        ss = np.linspace(nodes[k + 1], nodes[N], 33)
        dq = np.array([np.abs(problem.Q(s, tk) - problem.Q(s, tk1)).max()
                       + np.abs(problem.R(s, tk) - problem.R(s, tk1)).max()
                       for s in ss])
        majorant = dG + float(np.trapezoid(dq, ss))
        bound = 10.0 * majorant + 1e-9
        worst_ratio = max(worst_ratio, jump / bound)
        records.append({"player": k, "jump": jump, "majorant": majorant,
                        "within_bound": bool(jump <= bound)})
    return {"records": records,
            "max_ratio": worst_ratio,
            "passed": all(r["within_bound"] for r in records)}


def delta_local_optimality_check(problem: ProblemData, eq: DeltaEquilibrium,
                                 k: int, x0, mc: MCConfig | None = None,
                                 n_probes: int = 10) -> dict:
    """Monte-Carlo check that player k cannot profit from a one-interval deviation.

    Simulates the equilibrium to t_k, then compares the frozen-at-t_k cost of
    the equilibrium continuation against `n_probes` alternative controls on
    [t_k, t_{k+1}) (constants, shifted feedbacks, random constants), all under
    common random numbers.  Passes when every probe's cost exceeds the
    equilibrium cost within three standard errors.
    """
    if mc is None:
        mc = MCConfig(paths=20000, steps=400, seed=13)
    nodes = eq.partition.nodes
    if not 0 <= k < eq.N:
        raise ConfigurationError(f"player index {k} outside 0..{eq.N - 1}")
    tk, tk1 = float(nodes[k]), float(nodes[k + 1])
    T = problem.T
    x0 = np.asarray(x0, float).reshape(-1)

    if k == 0:
        Xk = np.broadcast_to(x0, (mc.paths, problem.n)).copy()
    else:
        head = simulate_closed_loop(problem, eq.gains, 0.0, x0,
                                    MCConfig(paths=mc.paths, steps=mc.steps,
                                             seed=mc.seed + 1,
                                             antithetic=mc.antithetic))
        idx = int(np.argmin(np.abs(head.times - tk)))
        Xk = head.states[:, idx].copy()

    tail_steps = max(eq.N - k, int(round(mc.steps * (T - tk) / T)))
    grid = aligned_time_grid(tk, T, tail_steps, nodes[(nodes > tk + 1e-12)
                                                      & (nodes < T - 1e-12)])
    dts = np.diff(grid)
    dW = brownian_increments(mc, dts)

    base = _tail_cost(problem, eq, k, grid, dts, dW, Xk, None)
    probes = _deviation_probes(problem, eq, k, n_probes)
    records = []
    min_margin = np.inf
    half = mc.paths // 2 if mc.antithetic else mc.paths
    for label, probe in probes:
        dev = _tail_cost(problem, eq, k, grid, dts, dW, Xk, probe)
        diff = dev - base
        if mc.antithetic:
            diff = 0.5 * (diff[:half] + diff[half:])
        mean = float(diff.mean())
        stderr = float(diff.std(ddof=1) / math.sqrt(len(diff)))
        margin = mean + 3.0 * stderr
        min_margin = min(min_margin, margin)
        records.append({"probe": label, "excess_cost": mean, "stderr": stderr,
                        "margin": margin})
    scale = 1.0 + abs(float(base.mean()))
    return {"player": k,
            "equilibrium_cost": float(base.mean()),
            "records": records,
            "min_margin": float(min_margin),
            "passed": bool(min_margin >= -1e-8 * scale)}


def _deviation_probes(problem, eq, k, n_probes):
    """Constant and feedback-shift controls used as one-interval deviations."""
    m, n = problem.m, problem.n
    tk = float(eq.partition.nodes[k])
    K0 = eq.gains.theta(tk)
    probes = [
        ("const +0.5", ("const", 0.5 * np.ones(m))),
        ("const -0.5", ("const", -0.5 * np.ones(m))),
        ("feedback +0.25", ("feedback", K0 + 0.25 * np.ones((m, n)))),
        ("feedback -0.25", ("feedback", K0 - 0.25 * np.ones((m, n)))),
    ]
    rng = np.random.default_rng(2024 + k)
    while len(probes) < n_probes:
        c = rng.normal(scale=0.75, size=m)
        probes.append((f"const rand{len(probes)}", ("const", c)))
    return probes[:n_probes]


def _tail_cost(problem, eq, k, grid, dts, dW, Xk, probe):
    """Per-path frozen-at-t_k cost of the tail, Euler scheme with exact
    conditional means (the mean recursions mirror the state recursion)."""
    hp = hat(problem)
    nodes = eq.partition.nodes
    tk = float(nodes[k])
    tk1 = float(nodes[k + 1])
    reset_set = {round(float(v), 12) for v in nodes[k + 1:-1]}
    P = Xk.shape[0]

    X = Xk.copy()
    m_k = Xk.copy()        # E_{t_k}[X]
    m_rho = Xk.copy()      # E_{rho(s)}[X]
    m_rhok = Xk.copy()     # E_{t_k}[m_rho]

    w = np.empty(len(grid))
    w[0] = 0.5 * dts[0]
    w[-1] = 0.5 * dts[-1]
    if len(grid) > 2:
        w[1:-1] = 0.5 * (dts[:-1] + dts[1:])
    J = np.zeros(P)

    for j, s in enumerate(grid):
        s = float(s)
        in_probe = probe is not None and s < tk1 - 1e-12
        if in_probe:
            kind, data = probe
            if kind == "const":
                u = np.broadcast_to(data, (P, problem.m)).copy()
                eu = u
                erho_u = u
                etk_erho_u = u
            else:
                Kfb = data
                u = -X @ Kfb.T
                eu = -m_k @ Kfb.T
                erho_u = -m_rho @ Kfb.T
                etk_erho_u = -m_rhok @ Kfb.T
        else:
            th = eq.gains.theta(s)
            thh = eq.gains.theta_hat(s)
            u = -X @ th.T + m_rho @ (th - thh).T
            eu = -m_k @ th.T + m_rhok @ (th - thh).T
            erho_u = -m_rho @ thh.T
            etk_erho_u = -m_rhok @ thh.T

        Qk = problem.Q(s, tk)
        Qbk = problem.Qbar(s, tk)
        Rk = problem.R(s, tk)
        Rbk = problem.Rbar(s, tk)
        J += w[j] * (np.einsum("pi,ij,pj->p", X, Qk, X)
                     + np.einsum("pi,ij,pj->p", m_k, Qbk, m_k)
                     + np.einsum("pi,ij,pj->p", u, Rk, u)
                     + np.einsum("pi,ij,pj->p", eu, Rbk, eu))
        if j == len(grid) - 1:
            break

        dt = dts[j]
        As, Abs_ = problem.A(s), problem.Abar(s)
        Bs, Bbs = problem.B(s), problem.Bbar(s)
        Cs, Cbs = problem.C(s), problem.Cbar(s)
        Ds, Dbs = problem.D(s), problem.Dbar(s)
        Ah, Bh = hp.A(s), hp.B(s)

        drift = X @ As.T + m_rho @ Abs_.T + u @ Bs.T + erho_u @ Bbs.T
        diff = X @ Cs.T + m_rho @ Cbs.T + u @ Ds.T + erho_u @ Dbs.T
        X = X + dt * drift + diff * dW[:, j][:, None]
        m_k = m_k + dt * (m_k @ As.T + m_rhok @ Abs_.T
                          + eu @ Bs.T + etk_erho_u @ Bbs.T)
        m_rho = m_rho + dt * (m_rho @ Ah.T + erho_u @ Bh.T)
        m_rhok = m_rhok + dt * (m_rhok @ Ah.T + etk_erho_u @ Bh.T)

        if round(float(grid[j + 1]), 12) in reset_set:
            m_rho = X.copy()
            m_rhok = m_k.copy()

    Gk = np.atleast_2d(problem.G(tk))
    Gbk = np.atleast_2d(problem.Gbar(tk))
    J += (np.einsum("pi,ij,pj->p", X, Gk, X)
          + np.einsum("pi,ij,pj->p", m_k, Gbk, m_k))
    return J
