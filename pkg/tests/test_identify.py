import warnings

import numpy as np
import pytest

from koopman_dmhe.identify import (RankDeficiencyWarning, Scaler, ScalingError, build_snapshots, fit_scaler,
                                   identify_all, identify_output_matrix, identify_subsystem, load_models, pinv_svd,
                                   save_models)
from koopman_dmhe.lifting import LiftingDictionary, state_dictionary
from koopman_dmhe.simulate.linear import chain_topology, random_system, simulate_linear
from koopman_dmhe.simulate.process import cstr_topology
from koopman_dmhe.simulate.signals import NoiseSpec


def linear_data(seed=0, m=2, nx=3, T=500):
    topo = chain_topology((nx,) * m)
    s = random_system(topo, seed)
    tr = simulate_linear(s, NoiseSpec([0.0] * (m * nx), [0.0] * m), T, seed + 100)
    return topo, s, tr


def scaled_truth(s, topo, scaler, i, j):
    sx = scaler.x_max - scaler.x_min
    ri, rj = topo.x_slice(i), topo.x_slice(j)
    return s.block(i, j) * sx[rj][None, :] / sx[ri][:, None]


def test_snapshot_matrices_shift_by_one():
    topo, _, tr = linear_data(T=40)
    sc = fit_scaler(tr.x, tr.u)
    snap = build_snapshots(tr.x, tr.u, tr.y, topo, sc)
    assert snap.n_samples == 39
    np.testing.assert_array_equal(snap.X[0][:, 1:], snap.X_next[0][:, :-1])
    np.testing.assert_allclose(snap.X[1][:, 0], sc.scale_x(tr.x[0])[3:6])
    assert snap.X[0].min() >= 0 and snap.X[0].max() <= 1


def test_scaler_rejects_constant_variable():
    x = np.ones((10, 2)); x[:, 0] = np.arange(10)
    with pytest.raises(ScalingError, match="x1|state\\[1\\]"):
        fit_scaler(x, np.arange(10.0), x_names=["a", "x1"])
    with pytest.raises(ScalingError):
        Scaler([0.0], [-1.0], [0.0], [1.0])


def test_exact_linear_recovery_in_scaled_coordinates():
    topo, s, tr = linear_data()
    sc = fit_scaler(tr.x, tr.u)
    sd = [state_dictionary(("identity",), 3)] * 2
    ud = [LiftingDictionary(("identity", "one"), 1)] * 2
    models = identify_all(build_snapshots(tr.x, tr.u, tr.y, topo, sc), topo, sd, ud)
    for i, mdl in enumerate(models):
        assert np.linalg.norm(mdl.A_ii - scaled_truth(s, topo, sc, i, i)) < 1e-8
        for j in topo.neighbors[i]:
            assert np.linalg.norm(mdl.A_ij[j] - scaled_truth(s, topo, sc, i, j)) < 1e-8
        ri = topo.x_slice(i)
        sx, su = sc.x_max - sc.x_min, sc.u_max - sc.u_min
        b_true = s.input_block(i) * su[i] / sx[ri][:, None]
        np.testing.assert_allclose(mdl.B[:, :1], b_true, atol=1e-8)
        assert mdl.diagnostics["rank"] == mdl.diagnostics["n_regressors"] == 8


def test_nonlinear_dictionary_matches_lstsq():
    rng = np.random.default_rng(2)
    topo = cstr_topology()
    x = rng.uniform(size=(300, 8)); u = rng.uniform(size=(300, 4)); y = x[:, 0::2]
    sc = fit_scaler(x, u)
    sd = [state_dictionary(("identity", "cube_root", "exp"), 2)] * 4
    ud = [LiftingDictionary(("identity", "cube_root"), 1)] * 4
    snap = build_snapshots(x, u, y, topo, sc)
    A_ii, A_ij, B, diag = identify_subsystem(snap, topo, sd, ud, 0)
    psi = np.vstack([sd[0](snap.X[0]), sd[1](snap.X[1]), sd[3](snap.X[3]), ud[0](snap.U[0])])
    K, *_ = np.linalg.lstsq(psi.T, sd[0](snap.X_next[0]).T, rcond=None)
    np.testing.assert_allclose(np.hstack([A_ii, A_ij[1], A_ij[3], B]), K.T, atol=1e-8)
    assert A_ii.shape == (6, 6) and B.shape == (6, 2)
    assert diag["normal_residual"] < 1e-8 * diag["normal_scale"]


def test_output_matrix_analytic_equals_regression():
    topo, _, tr = linear_data(T=200)
    sc = fit_scaler(tr.x, tr.u)
    sd = [state_dictionary(("identity", "square"), 3)] * 2
    snap = build_snapshots(tr.x, tr.u, tr.y, topo, sc)
    Ca = identify_output_matrix(snap, topo, sd, 1, analytic=True)
    Cr = identify_output_matrix(snap, topo, sd, 1, analytic=False)
    np.testing.assert_allclose(Ca, [[1, 0, 0, 0, 0, 0]])
    np.testing.assert_allclose(Cr, Ca, atol=1e-8)


def test_pinv_truncation_and_rank_warning():
    M = np.diag([1.0, 1e-3, 1e-12])
    P, r = pinv_svd(M, 1e-10)
    assert r == 2 and P[2, 2] == 0 and P[1, 1] == pytest.approx(1e3)
    topo, _, tr = linear_data(T=100)
    x = tr.x.copy(); x[:, 1] = x[:, 0]          # duplicated coordinate
    sc = fit_scaler(x, tr.u)
    sd = [state_dictionary(("identity",), 3)] * 2
    ud = [LiftingDictionary(("identity",), 1)] * 2
    with pytest.warns(RankDeficiencyWarning):
        identify_all(build_snapshots(x, tr.u, tr.y, topo, sc), topo, sd, ud)


def test_threaded_identification_identical(tmp_path):
    topo, _, tr = linear_data(m=3)
    sc = fit_scaler(tr.x, tr.u)
    sd = [state_dictionary(("identity", "square"), 3)] * 3
    ud = [LiftingDictionary(("identity",), 1)] * 3
    snap = build_snapshots(tr.x, tr.u, tr.y, topo, sc)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        a = identify_all(snap, topo, sd, ud, threads=1)
        b = identify_all(snap, topo, sd, ud, threads=3)
    for ma, mb in zip(a, b):
        assert np.array_equal(ma.A_ii, mb.A_ii) and np.array_equal(ma.B, mb.B)
    path = tmp_path / "m.npz"
    save_models(path, a, topo, sc, {"seed": 1})
    models, t2, sc2, meta = load_models(path)
    assert t2 == topo and meta["seed"] == 1
    np.testing.assert_array_equal(sc2.x_max, sc.x_max)
    for ma, mc in zip(a, models):
        assert np.array_equal(ma.A_ii, mc.A_ii)
        assert ma.A_ij.keys() == mc.A_ij.keys()
        assert ma.state_functions == mc.state_functions
