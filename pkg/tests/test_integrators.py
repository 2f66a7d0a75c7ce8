import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mflq import (BlowUpError, MatrixFn, RiccatiCoefficients,
                  ValidationError, k0_bound, rk4_backward, solve_lyapunov,
                  solve_riccati)


class TestRK4Backward:
    def test_exact_on_scalar_tanh(self):
        # p' = -(1 - p^2), p(T) = 0  =>  p(s) = tanh(T - s)
        times, vals = rk4_backward(lambda s, p: -(1.0 - p * p), 0.0, 1.0,
                                   np.array([[0.0]]), 1e-3)
        assert vals[0, 0, 0] == pytest.approx(np.tanh(1.0), abs=1e-10)

    def test_fourth_order(self):
        def err(h):
            _, vals = rk4_backward(lambda s, p: -(1.0 - p * p), 0.0, 1.0,
                                   np.array([[0.0]]), h)
            return abs(vals[0, 0, 0] - np.tanh(1.0))

        ratio = err(0.05) / err(0.025)
        assert 10.0 < ratio < 22.0

    def test_endpoints_are_nodes(self):
        times, _ = rk4_backward(lambda s, p: p * 0, 0.2, 0.9,
                                np.zeros((1, 1)), 0.13)
        assert times[0] == pytest.approx(0.2)
        assert times[-1] == pytest.approx(0.9)

    def test_bad_inputs(self):
        with pytest.raises(ValidationError):
            rk4_backward(lambda s, p: p, 0.0, 1.0, np.zeros((1, 1)), -1.0)
        with pytest.raises(ValidationError):
            rk4_backward(lambda s, p: p, 1.0, 1.0, np.zeros((1, 1)), 0.1)

    def test_blow_up_detected(self):
        # p' = -p^2 with p(1) = 10 has a pole at s = 0.9
        with np.errstate(over="ignore", invalid="ignore"), \
                pytest.raises(BlowUpError) as exc:
            rk4_backward(lambda s, p: -(p @ p), 0.0, 1.0,
                         np.array([[10.0]]), 1e-4)
        assert exc.value.time is not None

    def test_symmetric_projection(self):
        rng = np.random.default_rng(1)
        M = rng.normal(size=(3, 3))

        def rhs(s, P):
            return -(P @ M + M.T @ P + np.eye(3))

        _, vals = rk4_backward(rhs, 0.0, 1.0, np.eye(3), 1e-2, symmetric=True)
        assert np.abs(vals - np.swapaxes(vals, -1, -2)).max() < 1e-14


class TestLyapunov:
    def test_scalar_closed_form(self):
        # p' + 2 a p + q = 0, p(T) = g  =>  p(s) = g e^{2a(T-s)} + q (e^{2a(T-s)} - 1)/(2a)
        a, q, g, T = 0.4, 0.7, 1.3, 1.0
        A = MatrixFn.constant([[a]], T)
        forcing = MatrixFn.constant([[q]], T)
        times, vals = solve_lyapunov(A, None, forcing, np.array([[g]]),
                                     (0.0, T), 1e-3)
        exact = g * np.exp(2 * a * T) + q * (np.exp(2 * a * T) - 1) / (2 * a)
        assert vals[0, 0, 0] == pytest.approx(exact, abs=1e-9)

    def test_external_sandwich(self):
        # with C = I and sandwich S(s) = I the equation gains a constant forcing I
        A = MatrixFn.constant(np.zeros((2, 2)), 1.0)
        C = MatrixFn.constant(np.eye(2), 1.0)
        Z = MatrixFn.constant(np.zeros((2, 2)), 1.0)
        _, vals = solve_lyapunov(A, C, Z, np.zeros((2, 2)), (0.0, 1.0), 1e-3,
                                 sandwich=lambda s: np.eye(2))
        np.testing.assert_allclose(vals[0], np.eye(2), atol=1e-10)


@given(arrays(np.float64, (3, 2), elements=st.floats(-3, 3)))
@settings(max_examples=60, deadline=None)
def test_inverse_identity(L):
    # I - L (I + L'L)^{-1} L' = (I + L L')^{-1}
    n = L.shape[0]
    lhs = np.eye(n) - L @ np.linalg.solve(np.eye(2) + L.T @ L, L.T)
    rhs = np.linalg.inv(np.eye(n) + L @ L.T)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def _classical_coeffs(classical, t=0.0):
    T = classical.T
    return RiccatiCoefficients(
        A=classical.A, B=classical.B, C=classical.C, D=classical.D,
        S=MatrixFn.constant(np.zeros((1, 2)), T),
        Q=MatrixFn(lambda s: classical.Q(s, t), (2, 2), T),
        R=MatrixFn(lambda s: classical.R(s, t), (1, 1), T),
        G=classical.G(t), delta=classical.delta)


class TestRiccati:
    def test_matches_scipy_reference(self, classical):
        from scipy.integrate import solve_ivp
        coeffs = _classical_coeffs(classical)
        sol = solve_riccati(coeffs, (0.0, 1.0), 5e-4)

        def rhs(s, y):
            P = y.reshape(2, 2)
            A, B = classical.A(s), classical.B(s)
            C, D = classical.C(s), classical.D(s)
            K = classical.R(s, 0.0) + D.T @ P @ D
            L = B.T @ P + D.T @ P @ C
            dP = -(P @ A + A.T @ P + C.T @ P @ C + classical.Q(s, 0.0)
                   - L.T @ np.linalg.solve(K, L))
            return dP.reshape(-1)

        ref = solve_ivp(rhs, (1.0, 0.0), classical.G(0.0).reshape(-1),
                        rtol=1e-11, atol=1e-12)
        P0 = ref.y[:, -1].reshape(2, 2)
        np.testing.assert_allclose(sol.P[0], P0, atol=1e-8)

    def test_gain_consistent_with_P(self, classical):
        coeffs = _classical_coeffs(classical)
        sol = solve_riccati(coeffs, (0.0, 1.0), 1e-3)
        i = len(sol.times) // 2
        s = sol.times[i]
        D = classical.D(s)
        K = classical.R(s, 0.0) + D.T @ sol.P[i] @ D
        L = classical.B(s).T @ sol.P[i] + D.T @ sol.P[i] @ classical.C(s)
        np.testing.assert_allclose(sol.Theta[i], np.linalg.solve(K, L),
                                   atol=1e-12)

    def test_psd_along_path(self, classical):
        coeffs = _classical_coeffs(classical)
        sol = solve_riccati(coeffs, (0.0, 1.0), 1e-3)
        assert min(np.linalg.eigvalsh(P).min() for P in sol.P) >= -1e-10

    def test_definiteness_precheck(self, classical):
        bad = RiccatiCoefficients(
            A=classical.A, B=classical.B, C=classical.C, D=classical.D,
            S=MatrixFn.constant(np.zeros((1, 2)), 1.0),
            Q=MatrixFn.constant(np.eye(2), 1.0),
            R=MatrixFn.constant([[-1.0]], 1.0),
            G=np.eye(2), delta=0.5)
        with pytest.raises(ValidationError):
            solve_riccati(bad, (0.0, 1.0), 1e-3)

    def test_k0_bound_dominates_solution(self, classical):
        coeffs = _classical_coeffs(classical)
        sol = solve_riccati(coeffs, (0.0, 1.0), 1e-3)
        bound = k0_bound(coeffs, (0.0, 1.0))
        assert bound >= max(np.linalg.norm(P, 2) for P in sol.P)
