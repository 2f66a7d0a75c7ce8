"""Core value types: time grids, matrix-valued functions, problem data, sampled fields.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, ValidationError

#: relative symmetry tolerance enforced after every solver write
TAU_SYM = 1e-9


def tau_psd(M: np.ndarray) -> float:
    """Scale-aware eigenvalue floor for positive-semidefiniteness checks."""
    scale = float(np.abs(M).max()) if M.size else 0.0
    return 1e-10 * (1.0 + scale)


def symmetrize(M: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto symmetric matrices, applied along the last two axes."""
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(symmetrize(M)).min())


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing nodes from 0 to the horizon T."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValidationError("TimeGrid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValidationError("TimeGrid must start at 0")
        if not np.all(np.diff(nodes) > 0):
            raise ValidationError("TimeGrid nodes must be strictly increasing")

    @classmethod
    def uniform(cls, T: float, N: int) -> "TimeGrid":
        return cls(np.linspace(0.0, T, N + 1))

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def mesh(self) -> float:
        return float(np.diff(self.nodes).max())

    @property
    def num_intervals(self) -> int:
        return len(self.nodes) - 1

    def index_of(self, t: float, atol: float = 1e-9) -> int:
        """Index of the node nearest to t; the snap distance must be below atol*(1+T)."""
        i = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[i] - t) > atol * (1.0 + self.T):
            raise ValidationError(f"time {t} is not a grid node (nearest {self.nodes[i]})")
        return i

    def interval_index(self, s: float) -> int:
        """k with nodes[k] <= s < nodes[k+1], right-continuous; s=T maps to the last interval."""
        k = int(np.searchsorted(self.nodes, s, side="right")) - 1
        return min(max(k, 0), self.num_intervals - 1)


@dataclass(frozen=True)
class MatrixFn:
    """A continuous matrix-valued function of one time variable on [0, T]."""

    fn: Callable[[float], np.ndarray]
    shape: tuple[int, int]
    T: float
    name: str = ""

    def __call__(self, s: float) -> np.ndarray:
        M = np.asarray(self.fn(s), dtype=float)
        if M.shape != self.shape:
            raise DimensionError(
                f"{self.name or 'MatrixFn'}({s}) has shape {M.shape}, expected {self.shape}"
            )
        return M

    @classmethod
    def constant(cls, M, T: float, name: str = "") -> "MatrixFn":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls(lambda s, _M=M: _M, M.shape, T, name)

    @classmethod
    def polynomial(cls, coeffs: Sequence, T: float, name: str = "") -> "MatrixFn":
        """sum_i coeffs[i] * s**i with matrix coefficients."""
        cs = [np.atleast_2d(np.asarray(c, dtype=float)) for c in coeffs]
        shape = cs[0].shape

        def ev(s, _cs=cs):
            out = np.zeros(shape)
            p = 1.0
            for c in _cs:
                out = out + p * c
                p *= s
            return out

        return cls(ev, shape, T, name)

    @classmethod
    def from_samples(cls, times, values, T: float, name: str = "") -> "MatrixFn":
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None, None]
        shape = values.shape[1:]

        def ev(s, _t=times, _v=values):
            s = min(max(s, _t[0]), _t[-1])
            i = min(int(np.searchsorted(_t, s, side="right")) - 1, len(_t) - 2)
            i = max(i, 0)
            w = (s - _t[i]) / (_t[i + 1] - _t[i])
            return (1.0 - w) * _v[i] + w * _v[i + 1]

        return cls(ev, shape, T, name)

    @classmethod
    def terminal_discount(cls, lam: float, base, T: float, name: str = "") -> "MatrixFn":
        """t -> exp(-lam*(T-t)) * base; used for discounted terminal weights."""
        base = np.atleast_2d(np.asarray(base, dtype=float))
        return cls(lambda t, _b=base: np.exp(-lam * (T - t)) * _b, base.shape, T, name)

    def __add__(self, other: "MatrixFn") -> "MatrixFn":
        if self.shape != other.shape:
            raise DimensionError(f"cannot add MatrixFn shapes {self.shape} and {other.shape}")
        return MatrixFn(lambda s, a=self, b=other: a(s) + b(s), self.shape, self.T,
                        f"{self.name}+{other.name}")


@dataclass(frozen=True)
class TwoTimeMatrixFn:
    """A continuous matrix function of (s, t) on the triangle 0 <= t <= s <= T.

    `many`, when present, evaluates one s against a vector of t values in a single
    vectorized call; solvers fall back to a scalar loop otherwise.
    """

    fn: Callable[[float, float], np.ndarray]
    shape: tuple[int, int]
    T: float
    name: str = ""
    many: Callable[[float, np.ndarray], np.ndarray] | None = None

    def __call__(self, s: float, t: float) -> np.ndarray:
        M = np.asarray(self.fn(s, t), dtype=float)
        if M.shape != self.shape:
            raise DimensionError(
                f"{self.name or 'TwoTimeMatrixFn'}({s},{t}) has shape {M.shape}, "
                f"expected {self.shape}"
            )
        return M

    def at_many(self, s: float, ts: np.ndarray) -> np.ndarray:
        """(len(ts), r, c) values of (s, t_j) for a vector of second arguments."""
        if self.many is not None:
            return self.many(s, np.asarray(ts, float))
        return np.stack([self(s, t) for t in ts]) if len(ts) else \
            np.empty((0,) + self.shape)

    @classmethod
    def constant(cls, M, T: float, name: str = "") -> "TwoTimeMatrixFn":
        M = np.atleast_2d(np.asarray(M, dtype=float))

        def many(s, ts, _M=M):
            return np.broadcast_to(_M, (len(ts),) + _M.shape)

        return cls(lambda s, t, _M=M: _M, M.shape, T, name, many)

    @classmethod
    def exp_discount(cls, lam: float, base, T: float, name: str = "") -> "TwoTimeMatrixFn":
        """(s, t) -> exp(-lam*(s-t)) * base."""
        base = np.atleast_2d(np.asarray(base, dtype=float))

        def many(s, ts, _b=base):
            return np.exp(-lam * (s - ts))[:, None, None] * _b

        return cls(lambda s, t, _b=base: np.exp(-lam * (s - t)) * _b,
                   base.shape, T, name, many)

    @classmethod
    def from_lag_samples(cls, lags, values, T: float, name: str = "") -> "TwoTimeMatrixFn":
        """Linear interpolation in the lag u = s - t; covers non-exponential discounts."""
        lags = np.asarray(lags, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None, None]
        shape = values.shape[1:]

        def interp(u, _u=lags, _v=values):
            u = np.clip(u, _u[0], _u[-1])
            i = np.clip(np.searchsorted(_u, u, side="right") - 1, 0, len(_u) - 2)
            w = (u - _u[i]) / (_u[i + 1] - _u[i])
            return (1.0 - w)[..., None, None] * _v[i] + w[..., None, None] * _v[i + 1]

        def ev(s, t):
            return interp(np.asarray(s - t))

        def many(s, ts):
            return interp(s - ts)

        return cls(ev, shape, T, name, many)

    def __add__(self, other: "TwoTimeMatrixFn") -> "TwoTimeMatrixFn":
        if self.shape != other.shape:
            raise DimensionError(
                f"cannot add TwoTimeMatrixFn shapes {self.shape} and {other.shape}"
            )
        many = None
        if self.many is not None and other.many is not None:
            many = lambda s, ts, a=self.many, b=other.many: a(s, ts) + b(s, ts)
        return TwoTimeMatrixFn(lambda s, t, a=self, b=other: a(s, t) + b(s, t),
                               self.shape, self.T, f"{self.name}+{other.name}", many)


@dataclass(frozen=True)
class HatCoefficients:
    """Pointwise sums base + bar of every coefficient and weight."""

    A: MatrixFn
    B: MatrixFn
    C: MatrixFn
    D: MatrixFn
    Q: TwoTimeMatrixFn
    R: TwoTimeMatrixFn
    G: MatrixFn


@dataclass(frozen=True)
class ProblemData:
    """Mean-field LQ problem: state dynamics coefficients, two-time weights, horizon."""

    n: int
    m: int
    T: float
    A: MatrixFn
    Abar: MatrixFn
    B: MatrixFn
    Bbar: MatrixFn
    C: MatrixFn
    Cbar: MatrixFn
    D: MatrixFn
    Dbar: MatrixFn
    Q: TwoTimeMatrixFn
    Qbar: TwoTimeMatrixFn
    R: TwoTimeMatrixFn
    Rbar: TwoTimeMatrixFn
    G: MatrixFn
    Gbar: MatrixFn
    delta: float
    monotone: bool = False

    def __post_init__(self):
        expected = {
            "A": (self.n, self.n), "Abar": (self.n, self.n),
            "B": (self.n, self.m), "Bbar": (self.n, self.m),
            "C": (self.n, self.n), "Cbar": (self.n, self.n),
            "D": (self.n, self.m), "Dbar": (self.n, self.m),
            "Q": (self.n, self.n), "Qbar": (self.n, self.n),
            "R": (self.m, self.m), "Rbar": (self.m, self.m),
            "G": (self.n, self.n), "Gbar": (self.n, self.n),
        }
        for fname, shape in expected.items():
            f = getattr(self, fname)
            if f.shape != shape:
                raise DimensionError(f"{fname} has shape {f.shape}, expected {shape}")
        if self.delta <= 0:
            raise ValidationError("delta must be positive")

    @property
    def has_mean_field_dynamics(self) -> bool:
        """True if any bar coefficient of the dynamics is nonzero on a sample grid."""
        ss = np.linspace(0.0, self.T, 7)
        for f in (self.Abar, self.Bbar, self.Cbar, self.Dbar):
            if any(np.abs(f(s)).max() > 0 for s in ss):
                return True
        return False


def hat(problem: ProblemData) -> HatCoefficients:
    """Pointwise sums A+Abar, ..., G+Gbar."""
    return HatCoefficients(
        A=problem.A + problem.Abar,
        B=problem.B + problem.Bbar,
        C=problem.C + problem.Cbar,
        D=problem.D + problem.Dbar,
        Q=problem.Q + problem.Qbar,
        R=problem.R + problem.Rbar,
        G=problem.G + problem.Gbar,
    )


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    violations: tuple[str, ...]
    continuity_modulus: float

    def __str__(self):
        lines = [f"H2: {'pass' if self.passed else 'FAIL'}"]
        lines += [f"  {v}" for v in self.violations]
        lines.append(f"continuity modulus estimate: {self.continuity_modulus:.3g}")
        return "\n".join(lines)


def validate(problem: ProblemData, sample_density: int = 13) -> ValidationReport:
    """Sample the positivity hypotheses on a triangular (s,t) grid.

    Reports every violation found; continuity is a heuristic modulus estimate
    recorded in the report, not asserted.
    """
    viol: list[str] = []
    d = problem.delta
    times = np.linspace(0.0, problem.T, sample_density)

    def check_psd(M, label, floor=0.0):
        lo = min_eig(M)
        if lo < floor - tau_psd(M):
            viol.append(label)

    for t in times:
        check_psd(problem.G(t), f"G not PSD at t={t:g}")
        check_psd(problem.G(t) + problem.Gbar(t), f"G+Gbar not PSD at t={t:g}")
        for s in times[times >= t]:
            check_psd(problem.Q(s, t), f"Q not PSD at (s,t)=({s:g},{t:g})")
            check_psd(problem.Q(s, t) + problem.Qbar(s, t),
                      f"Q+Qbar not PSD at (s,t)=({s:g},{t:g})")
            check_psd(problem.R(s, t), f"R not ⪰ δI at (s,t)=({s:g},{t:g})", floor=d)
            check_psd(problem.R(s, t) + problem.Rbar(s, t),
                      f"R+Rbar not ⪰ δI at (s,t)=({s:g},{t:g})", floor=d)

    if problem.monotone:
        hp = hat(problem)
        for i, t in enumerate(times[:-1]):
            tau = times[i + 1]
            check_psd(problem.G(tau) - problem.G(t), f"G not monotone at t={t:g}")
            check_psd(hp.G(tau) - hp.G(t), f"G+Gbar not monotone at t={t:g}")
            for s in times[times >= tau]:
                for w, lbl in ((problem.Q, "Q"), (hp.Q, "Q+Qbar"),
                               (problem.R, "R"), (hp.R, "R+Rbar")):
                    check_psd(w(s, tau) - w(s, t),
                              f"{lbl} not monotone at (s,t,tau)=({s:g},{t:g},{tau:g})")

    # continuity heuristic: largest normalized increment over a refined diagonal sample
    fine = np.linspace(0.0, problem.T, 4 * sample_density)
    mod = 0.0
    for f in (problem.A, problem.B, problem.C, problem.D, problem.G):
        vals = np.array([np.abs(f(s)).max() for s in fine])
        if len(vals) > 1:
            mod = max(mod, float(np.abs(np.diff(vals)).max() / (fine[1] - fine[0] + 1e-300)))

    return ValidationReport(passed=not viol, violations=tuple(viol), continuity_modulus=mod)


@dataclass(frozen=True)
class TwoParamMatrixField:
    """Grid-sampled field (s_i, t_j) -> n x n matrix on the triangle t <= s.

    Entries below the diagonal (s < t) store the diagonal value at t, realizing the
    constant extension used when the field is read at arguments out of order.
    """

    grid: TimeGrid
    values: np.ndarray  # (S, S, n, n); [i, j] = value(s_i, t_j)
    symmetric: bool = True

    @classmethod
    def from_triangle(cls, grid: TimeGrid, values: np.ndarray,
                      symmetric: bool = True) -> "TwoParamMatrixField":
        """Build a field from entries valid on s >= t, overwriting s < t by extension."""
        vals = np.array(values, dtype=float, copy=True)
        S = len(grid.nodes)
        for j in range(S):
            for i in range(j):
                vals[i, j] = vals[j, j]
        if symmetric:
            vals = symmetrize(vals)
        return cls(grid, vals, symmetric)

    def value(self, s: float, t: float) -> np.ndarray:
        i = self.grid.index_of(s)
        j = self.grid.index_of(t)
        if i < j:
            return self.values[j, j]
        return self.values[i, j]

    def diagonal(self) -> np.ndarray:
        S = len(self.grid.nodes)
        return self.values[np.arange(S), np.arange(S)]

    def restrict(self, stride: int) -> "TwoParamMatrixField":
        """Exact restriction to every stride-th node (for cross-mesh comparison)."""
        return TwoParamMatrixField(TimeGrid(self.grid.nodes[::stride]),
                                   self.values[::stride, ::stride], self.symmetric)

    def max_asymmetry(self) -> float:
        d = self.values - np.swapaxes(self.values, -1, -2)
        scale = 1.0 + float(np.abs(self.values).max())
        return float(np.abs(d).max()) / scale


@dataclass(frozen=True)
class GainSegment:
    """Continuous gain pair on one partition interval, sampled on its own fine grid."""

    times: np.ndarray        # ascending, covering [t_k, t_{k+1}]
    theta: np.ndarray        # (len(times), m, n)
    theta_hat: np.ndarray    # (len(times), m, n)

    def _interp(self, arr, s):
        t = self.times
        s = min(max(s, t[0]), t[-1])
        i = min(int(np.searchsorted(t, s, side="right")) - 1, len(t) - 2)
        i = max(i, 0)
        w = (s - t[i]) / (t[i + 1] - t[i])
        return (1.0 - w) * arr[i] + w * arr[i + 1]

    def theta_at(self, s):
        return self._interp(self.theta, s)

    def theta_hat_at(self, s):
        return self._interp(self.theta_hat, s)


@dataclass(frozen=True)
class PiecewiseGain:
    """Feedback pair (Theta, Theta_hat), piecewise continuous over a partition.

    Evaluation is right-continuous at interval starts; the horizon T evaluates on
    the last interval.
    """

    partition: TimeGrid
    segments: tuple[GainSegment, ...]

    def __post_init__(self):
        if len(self.segments) != self.partition.num_intervals:
            raise DimensionError(
                f"PiecewiseGain has {len(self.segments)} segments for "
                f"{self.partition.num_intervals} intervals"
            )

    def interval_index(self, s: float) -> int:
        return self.partition.interval_index(s)

    def theta(self, s: float) -> np.ndarray:
        return self.segments[self.interval_index(s)].theta_at(s)

    def theta_hat(self, s: float) -> np.ndarray:
        return self.segments[self.interval_index(s)].theta_hat_at(s)

    def anchor(self, s: float) -> float:
        """rho(s): the partition node defining the conditional-expectation freeze."""
        return float(self.partition.nodes[self.interval_index(s)])

    @classmethod
    def single(cls, t0: float, T: float, times, theta, theta_hat) -> "PiecewiseGain":
        """One-interval gain on [t0, T] (pre-commitment style feedback)."""
        if t0 != 0.0:
            part = TimeGrid(np.array([0.0, t0, T]))
            # leading interval never evaluated; reuse first sample
            lead = GainSegment(np.array([0.0, t0]),
                               np.repeat(theta[:1], 2, axis=0),
                               np.repeat(theta_hat[:1], 2, axis=0))
            seg = GainSegment(np.asarray(times, float), np.asarray(theta, float),
                              np.asarray(theta_hat, float))
            return cls(part, (lead, seg))
        part = TimeGrid(np.array([0.0, T]))
        seg = GainSegment(np.asarray(times, float), np.asarray(theta, float),
                          np.asarray(theta_hat, float))
        return cls(part, (seg,))


def sample_fn(f, times) -> np.ndarray:
    """Evaluate a MatrixFn on a vector of times, returning (len(times), r, c)."""
    return np.stack([f(s) for s in np.asarray(times, float)])


def sample_two_time(f, times, t: float) -> np.ndarray:
    """Evaluate a TwoTimeMatrixFn at fixed second argument t."""
    return np.stack([f(s, t) for s in np.asarray(times, float)])
