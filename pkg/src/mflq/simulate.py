"""Monte Carlo simulation of controlled mean-field SDEs.

The conditional expectation appearing in dynamics and costs is computed from its
deterministic ODE (re-anchored at partition nodes), never from the cross-path
empirical mean, so the drift carries no sampling bias.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .types import PiecewiseGain, ProblemData, hat


@dataclass(frozen=True)
class MCConfig:
    paths: int
    steps: int = 2000
    seed: int = 0
    antithetic: bool = True

    def __post_init__(self):
        if self.paths < 2:
            raise ConfigurationError("MCConfig.paths must be >= 2")
        if self.steps < 1:
            raise ConfigurationError("MCConfig.steps must be >= 1")
        if self.antithetic and self.paths % 2 != 0:
            raise ConfigurationError("antithetic sampling needs an even path count")


def brownian_increments(mc: MCConfig, dts: np.ndarray) -> np.ndarray:
    """(paths, len(dts)) Brownian increments; second half mirrors the first when antithetic."""
    rng = np.random.Generator(np.random.Philox(key=mc.seed))
    half = mc.paths // 2 if mc.antithetic else mc.paths
    Z = rng.standard_normal((half, len(dts)))
    if mc.antithetic:
        Z = np.concatenate([Z, -Z], axis=0)
    return Z * np.sqrt(dts)[None, :]


def aligned_time_grid(t: float, T: float, steps: int, nodes=()) -> np.ndarray:
    """Euler grid from t to T whose nodes include every partition node in (t, T).

    Steps are distributed across the sub-intervals proportionally to length, at
    least one per sub-interval.
    """
    anchors = [t] + [float(v) for v in nodes if t < v < T] + [T]
    if steps < len(anchors) - 1:
        raise ConfigurationError(
            f"{steps} steps cannot align with {len(anchors) - 1} gain intervals")
    out = [np.array([t])]
    total = T - t
    for a, b in zip(anchors[:-1], anchors[1:]):
        k = max(1, int(round(steps * (b - a) / total)))
        out.append(np.linspace(a, b, k + 1)[1:])
    return np.concatenate(out)


@dataclass(frozen=True)
class PathEnsemble:
    times: np.ndarray          # (L,)
    states: np.ndarray         # (paths, L, n)
    controls: np.ndarray       # (paths, L, m)
    cond_mean: np.ndarray      # (L, n), E_t[X(s)] (deterministic)
    cond_mean_u: np.ndarray    # (L, m), E_t[u(s)]
    brownian_increments: np.ndarray  # (paths, L-1)
    t: float
    antithetic: bool

    def fold_antithetic(self, per_path: np.ndarray) -> np.ndarray:
        """Average antithetic partners so stderr reflects the paired estimator."""
        if not self.antithetic:
            return per_path
        half = per_path.shape[0] // 2
        return 0.5 * (per_path[:half] + per_path[half:])


class _ConstantGain:
    def __init__(self, theta, theta_hat, t0):
        self._th = np.atleast_2d(np.asarray(theta, float))
        self._thh = np.atleast_2d(np.asarray(theta_hat, float))
        self._t0 = t0

    def theta(self, s):
        return self._th

    def theta_hat(self, s):
        return self._thh

    def anchor(self, s):
        return self._t0

    partition = None


def as_gains(gains, t: float):
    """Accept a PiecewiseGain, a (theta, theta_hat) pair of constants, or any object
    exposing theta/theta_hat/anchor."""
    if isinstance(gains, tuple) and len(gains) == 2:
        return _ConstantGain(gains[0], gains[1], t)
    return gains


def simulate_closed_loop(problem: ProblemData, gains, t: float, x0,
                         mc: MCConfig) -> PathEnsemble:
    """Euler-Maruyama under the feedback u = -Theta X + (Theta - Theta_hat) E_rho[X].

    The per-path conditional mean E_rho[X] follows its linear ODE and is re-anchored
    to the path state at every partition node; the ensemble-level E_t trajectory is
    the corresponding deterministic pair.
    """
    gains = as_gains(gains, t)
    hp = hat(problem)
    nodes = () if getattr(gains, "partition", None) is None else gains.partition.nodes
    times = aligned_time_grid(t, problem.T, mc.steps, nodes)
    node_set = {round(float(v), 12) for v in nodes if t < v < problem.T}
    L = len(times)
    dts = np.diff(times)
    dW = brownian_increments(mc, dts)

    x0 = np.asarray(x0, float).reshape(-1)
    X = np.tile(x0, (mc.paths, 1))
    m_rho = X.copy()
    m = x0.copy()
    m2 = x0.copy()

    states = np.empty((mc.paths, L, problem.n))
    controls = np.empty((mc.paths, L, problem.m))
    cond_mean = np.empty((L, problem.n))
    cond_mean_u = np.empty((L, problem.m))

    def drift_mats(s):
        th, thh = gains.theta(s), gains.theta_hat(s)
        F = problem.A(s) - problem.B(s) @ th
        Fbar = problem.Abar(s) + problem.B(s) @ (th - thh) - problem.Bbar(s) @ thh
        S = problem.C(s) - problem.D(s) @ th
        Sbar = problem.Cbar(s) + problem.D(s) @ (th - thh) - problem.Dbar(s) @ thh
        return th, thh, F, Fbar, S, Sbar

    for j in range(L):
        s = times[j]
        th, thh, F, Fbar, S, Sbar = drift_mats(s)
        u = -X @ th.T + m_rho @ (th - thh).T
        states[:, j] = X
        controls[:, j] = u
        cond_mean[j] = m
        cond_mean_u[j] = -th @ m + (th - thh) @ m2
        if j == L - 1:
            break
        dt = dts[j]
        X = X + (X @ F.T + m_rho @ Fbar.T) * dt + (X @ S.T + m_rho @ Sbar.T) * dW[:, j:j + 1]
        m_rho = _rk4_mean_step(gains, hp, s, dt, m_rho)
        m, m2 = _advance_det_mean(problem, hp, gains, s, dt, m, m2)
        nxt = round(float(times[j + 1]), 12)
        if nxt in node_set:
            m_rho = X.copy()
            m2 = m.copy()

    return PathEnsemble(times=times, states=states, controls=controls,
                        cond_mean=cond_mean, cond_mean_u=cond_mean_u,
                        brownian_increments=dW, t=t, antithetic=mc.antithetic)


def _rk4_mean_step(gains, hp, s, dt, m_rho):
    """RK4 step of the anchored-mean ODE dm = (Ahat - Bhat Theta_hat) m ds."""
    def rate(ss):
        return hp.A(ss) - hp.B(ss) @ gains.theta_hat(ss)

    F1, F2, F3 = rate(s), rate(s + 0.5 * dt), rate(s + dt)
    k1 = m_rho @ F1.T
    k2 = (m_rho + 0.5 * dt * k1) @ F2.T
    k3 = (m_rho + 0.5 * dt * k2) @ F2.T
    k4 = (m_rho + dt * k3) @ F3.T
    return m_rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _advance_det_mean(problem, hp, gains, s, dt, m, m2):
    """RK4 step of the deterministic pair (E_t[X], E_t[E_rho[X]])."""
    def rhs(ss, y):
        mm, mm2 = y
        th, thh = gains.theta(ss), gains.theta_hat(ss)
        F = problem.A(ss) - problem.B(ss) @ th
        Fbar = problem.Abar(ss) + problem.B(ss) @ (th - thh) - problem.Bbar(ss) @ thh
        Fhat = hp.A(ss) - hp.B(ss) @ thh
        return np.stack([F @ mm + Fbar @ mm2, Fhat @ mm2])

    y = np.stack([m, m2])
    k1 = rhs(s, y)
    k2 = rhs(s + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = rhs(s + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = rhs(s + dt, y + dt * k3)
    y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y[0], y[1]


def estimate_cost(problem: ProblemData, ens: PathEnsemble, t: float
                  ) -> tuple[float, float]:
    """Trapezoidal cost estimate (mean, stderr) with E_t factors from cond_mean."""
    times = ens.times
    P, L, _ = ens.states.shape
    rand_integrand = np.zeros((P, L))
    det_integrand = np.zeros(L)
    for j, s in enumerate(times):
        Qs = problem.Q(s, t)
        Rs = problem.R(s, t)
        X = ens.states[:, j]
        U = ens.controls[:, j]
        rand_integrand[:, j] = np.einsum("pi,ij,pj->p", X, Qs, X) \
            + np.einsum("pi,ij,pj->p", U, Rs, U)
        mj = ens.cond_mean[j]
        uj = ens.cond_mean_u[j]
        det_integrand[j] = mj @ problem.Qbar(s, t) @ mj + uj @ problem.Rbar(s, t) @ uj

    rand_total = np.trapezoid(rand_integrand, times, axis=1)
    XT = ens.states[:, -1]
    Gt = problem.G(t)
    rand_total = rand_total + np.einsum("pi,ij,pj->p", XT, Gt, XT)
    det_total = float(np.trapezoid(det_integrand, times)) \
        + float(ens.cond_mean[-1] @ problem.Gbar(t) @ ens.cond_mean[-1])

    folded = ens.fold_antithetic(rand_total)
    mean = float(folded.mean()) + det_total
    stderr = float(folded.std(ddof=1) / math.sqrt(len(folded)))
    return mean, stderr


def semigroup_failure_demo(s: float, tau: float, t: float, x: float,
                           mc: MCConfig) -> dict:
    """Restart-vs-no-restart gap for dX = E[X] ds + E[X] dW under conditioning freezes.

    Returns the simulated mean-square gap at time s, its stderr, and the closed
    form [(e^{s-tau}-1)^2 + int_tau^s e^{2(r-tau)} dr] * Var(X(tau)) with
    Var(X(tau)) = x^2 int_t^tau e^{2(r-t)} dr: the gap is driven by the random
    re-anchoring offset X(tau) - E_t[X(tau)], amplified through drift and noise.
    """
    assert t <= tau <= s
    steps = mc.steps
    grid = aligned_time_grid(t, s, steps, (tau,)) if t < tau < s else \
        np.linspace(t, s, steps + 1)
    dts = np.diff(grid)
    dW = brownian_increments(mc, dts)
    P = mc.paths

    XA = np.full(P, float(x))
    XB = np.full(P, float(x))
    mA = float(x)                    # E_t anchor, scalar (deterministic)
    mB = np.full(P, float(x))        # re-anchored at tau, per path
    restarted = tau == t
    if restarted:
        mB = XB.copy()
    for j in range(len(dts)):
        dt = dts[j]
        XA = XA + mA * dt + mA * dW[:, j]
        XB = XB + mB * dt + mB * dW[:, j]
        mA = mA * math.exp(dt)
        mB = mB * math.exp(dt)
        if not restarted and round(float(grid[j + 1]), 12) >= round(tau, 12):
            mB = XB.copy()
            restarted = True

    gap = (XB - XA) ** 2
    # fold antithetic pairs for the stderr of the paired estimator
    if mc.antithetic:
        half = P // 2
        gap = 0.5 * (gap[:half] + gap[half:])
    closed = ((math.exp(s - tau) - 1.0) ** 2
              + 0.5 * (math.exp(2 * (s - tau)) - 1.0)) \
        * (0.5 * (math.exp(2 * (tau - t)) - 1.0)) * x * x
    return {
        "simulated": float(gap.mean()),
        "stderr": float(gap.std(ddof=1) / math.sqrt(len(gap))),
        "closed_form": closed,
    }


@dataclass(frozen=True)
class ExampleOracles:
    """Closed-form fixtures for the two scalar motivating examples."""

    T: float = 1.0

    def phat(self, s: float) -> float:
        return 1.0 / (self.T - s + 1.0)

    def control(self, t: float, x: float) -> float:
        return -x / (self.T - t + 1.0)

    def mean(self, s: float, t: float, x: float) -> float:
        return (self.T - s + 1.0) / (self.T - t + 1.0) * x

    def value(self, t: float, x: float) -> float:
        return x * x / (self.T - t + 1.0)

    def discount_riccati(self, rho: Callable[[float, float], float],
                         g: Callable[[float], float], t: float,
                         h: float = 5e-4) -> tuple[np.ndarray, np.ndarray]:
        """Backward solve of p_s + p - p^2 / rho(s,t) = 0, p(T,t) = g(t)."""
        n = max(1, math.ceil((self.T - t) / h))
        times = np.linspace(t, self.T, n + 1)
        p = np.empty(n + 1)
        p[-1] = g(t)

        def f(s, v):
            return -(v - v * v / rho(s, t))

        v = p[-1]
        for i in range(n, 0, -1):
            s = times[i]
            dt = times[i] - times[i - 1]
            k1 = f(s, v)
            k2 = f(s - dt / 2, v - dt / 2 * k1)
            k3 = f(s - dt / 2, v - dt / 2 * k2)
            k4 = f(s - dt, v - dt * k3)
            v = v - dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            p[i - 1] = v
        return times, p

    def consistency_witness(self, rho, g, samples: int = 21) -> bool:
        """True when t -> g(t)/rho(T,t) is constant (time-consistent memory)."""
        ts = np.linspace(0.0, self.T, samples)
        vals = np.array([g(t) / rho(self.T, t) for t in ts])
        return float(vals.max() - vals.min()) <= 1e-10 * (1.0 + float(np.abs(vals).max()))


def example_oracles(T: float = 1.0) -> ExampleOracles:
    return ExampleOracles(T=T)


_MAGIC = b"MFLQ"
_VERSION = 1


def dump_states(ens: PathEnsemble, path: str) -> None:
    """Flat binary dump of the state array with a 16-byte header (magic, version, dims)."""
    P, L, n = ens.states.shape
    header = struct.pack("<4sHIIH", _MAGIC, _VERSION, P, L, n)
    assert len(header) == 16
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ens.states, dtype="<f8").tobytes())


def load_states(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        magic, version, P, L, n = struct.unpack("<4sHIIH", header)
        if magic != _MAGIC or version != _VERSION:
            raise ConfigurationError(f"unrecognized dump header in {path}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(P, L, n)
