import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from koopman_dmhe.qp import QPInfeasible, QuadraticProgram, kkt_residuals, solve


def enumerate_optimum(qp):
    """Best feasible stationary point over every choice of active bounds."""
    d, c = qp.g.size, qp.E.shape[0]
    best, best_val = None, np.inf
    for sides in itertools.product((0, -1, 1), repeat=c):
        rows = [r for r in range(c) if sides[r]]
        vals = [qp.lb[r] if sides[r] < 0 else qp.ub[r] for r in rows]
        if not np.all(np.isfinite(vals)):
            continue
        Ea = qp.E[rows]
        K = np.block([[qp.H, Ea.T], [Ea, np.zeros((len(rows), len(rows)))]])
        rhs = np.concatenate([-qp.g, np.array(vals) - qp.f[rows]])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            continue
        x = sol[:d]
        Ex = qp.E @ x + qp.f
        if np.all(Ex >= qp.lb - 1e-9) and np.all(Ex <= qp.ub + 1e-9):
            v = qp.objective(x)
            if v < best_val:
                best, best_val = x, v
    return best, best_val


def random_qp(rng, d, c):
    M = rng.normal(size=(d, d))
    H = M @ M.T + 0.1 * np.eye(d)
    E = rng.normal(size=(c, d))
    f = rng.normal(size=c) * 0.1
    lo = -rng.uniform(0.1, 1.5, size=c)
    hi = rng.uniform(0.1, 1.5, size=c)
    lo[rng.uniform(size=c) < 0.2] = -np.inf
    hi[rng.uniform(size=c) < 0.2] = np.inf
    return QuadraticProgram(H, rng.normal(size=d) * 3, E, f, lo, hi)


def test_random_qps_match_exhaustive_enumeration():
    rng = np.random.default_rng(7)
    for trial in range(120):
        d, c = rng.integers(1, 5), rng.integers(1, 6)
        qp = random_qp(rng, d, c)
        res = solve(qp)
        ref, ref_val = enumerate_optimum(qp)
        assert ref is not None
        np.testing.assert_allclose(res.x, ref, atol=1e-8, err_msg=f"trial {trial}")
        assert qp.objective(res.x) == pytest.approx(ref_val, abs=1e-8)
        assert max(res.kkt.values()) <= 1e-8


def test_unconstrained_and_equality_rows():
    H = np.diag([2.0, 4.0]); g = np.array([-2.0, -4.0])
    assert np.allclose(solve(QuadraticProgram(H, g)).x, [1, 1])
    qp = QuadraticProgram(H, g, E=[[1.0, 1.0]], lb=[0.5], ub=[0.5])
    res = solve(qp)
    # min (x-1)^2 + 2(y-1)^2 on x + y = 0.5
    np.testing.assert_allclose(res.x, [0.0, 0.5], atol=1e-12)
    assert res.active and res.multipliers[0] < 0


def test_warm_start_reaches_same_point_faster():
    rng = np.random.default_rng(3)
    qp = random_qp(rng, 6, 10)
    cold = solve(qp)
    warm = solve(qp, warm_start=cold.active)
    np.testing.assert_allclose(warm.x, cold.x, atol=1e-10)
    assert warm.iterations <= cold.iterations
    bogus = solve(qp, warm_start=[(0, 1), (1, -1), (99, 1)])
    np.testing.assert_allclose(bogus.x, cold.x, atol=1e-8)


def test_infeasible_and_invalid_problems():
    with pytest.raises(QPInfeasible):
        solve(QuadraticProgram(np.eye(1), [0.0], E=[[1.0], [1.0]], lb=[1.0, -np.inf], ub=[np.inf, 0.0]))
    with pytest.raises(ValueError):
        QuadraticProgram(np.eye(2), [0.0], None)
    with pytest.raises(ValueError):
        QuadraticProgram(np.eye(1), [0.0], [[1.0]], lb=[1.0], ub=[0.0])
    with pytest.raises(ValueError):
        QuadraticProgram(np.array([[1.0, 1.0], [0.0, 1.0]]), [0.0, 0.0])


def test_kkt_residuals_detect_wrong_point():
    qp = QuadraticProgram(np.eye(1), [-2.0], [[1.0]], lb=[-1.0], ub=[1.0])
    res = solve(qp)
    assert res.x[0] == pytest.approx(1.0)
    bad = kkt_residuals(qp, np.array([0.5]), np.zeros(1))
    assert bad["stationarity"] == pytest.approx(1.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 6), st.integers(0, 8))
def test_solution_is_feasible_and_not_beaten_by_feasible_perturbations(seed, d, c):
    rng = np.random.default_rng(seed)
    qp = random_qp(rng, d, c)
    res = solve(qp)
    Ex = qp.E @ res.x + qp.f
    assert np.all(Ex >= qp.lb - 1e-8) and np.all(Ex <= qp.ub + 1e-8)
    for _ in range(20):
        trial = res.x + rng.normal(size=d) * 0.05
        Et = qp.E @ trial + qp.f
        if np.all(Et >= qp.lb) and np.all(Et <= qp.ub):
            assert qp.objective(trial) >= qp.objective(res.x) - 1e-10
