import numpy as np
import pytest

from koopman_dmhe.baseline import jacobians, linearized_baseline, zoh
from koopman_dmhe.config import load_config
from koopman_dmhe.identify import fit_scaler
from koopman_dmhe.pipeline import build_process
from koopman_dmhe.predict import LiftedNetwork
from koopman_dmhe.simulate.cstr import step_cstr


def test_central_differences_on_quadratic_are_exact():
    f = lambda x, u: np.array([x[0] ** 2 + 3 * x[1] * u[0], np.sin(0) + 2 * x[0] - u[0] ** 2])
    f0, Jx, Ju = jacobians(f, [1.0, 2.0], [0.5], [1e-3, 1e-3], [1e-3])
    np.testing.assert_allclose(Jx, [[2.0, 1.5], [2.0, 0.0]], atol=1e-9)
    np.testing.assert_allclose(Ju, [[6.0], [-1.0]], atol=1e-9)


def test_zoh_scalar_closed_form():
    a, b, c, h = -2.0, 3.0, 0.5, 0.1
    Ad, Bd, cd = zoh(np.array([[a]]), np.array([[b]]), np.array([c]), h)
    g = (np.exp(a * h) - 1) / a
    np.testing.assert_allclose([Ad[0, 0], Bd[0, 0], cd[0]], [np.exp(a * h), b * g, c * g], rtol=1e-12)


@pytest.fixture(scope="module")
def cstr():
    cfg = load_config("cstr")
    proc = build_process(cfg)
    st = cfg.params["steady_state"]
    x_s, Q_s = np.array(st["x_s"], float), np.array(st["Q_s"], float)
    rng = np.random.default_rng(0)
    x = x_s * (1 + 0.2 * rng.uniform(-1, 1, size=(50, 8)))
    u = Q_s * (1 + 0.2 * rng.uniform(-1, 1, size=(50, 4)))
    return proc, x_s, Q_s, fit_scaler(x, u)


@pytest.mark.parametrize("fill_in", ["drop", "keep"])
def test_steady_state_is_a_fixed_point(cstr, fill_in):
    proc, x_s, Q_s, sc = cstr
    models, topo = linearized_baseline(proc.model, x_s, Q_s, sc, proc.topology, fill_in=fill_in)
    net = LiftedNetwork(models, topo, sc)
    z = sc.scale_x(x_s)
    z_next = net.A @ z + net.B @ net.lift_u(Q_s[None])[0]
    np.testing.assert_allclose(z_next, z, atol=1e-9)
    assert models[0].diagnostics["steady_residual"] < 1e-6 * np.abs(x_s).max()


def test_full_linearization_predicts_small_state_perturbations(cstr):
    proc, x_s, Q_s, sc = cstr
    models, topo = linearized_baseline(proc.model, x_s, Q_s, sc, proc.topology, fill_in="keep")
    net = LiftedNetwork(models, topo, sc)
    u = net.lift_u(Q_s[None])[0]
    errs = []
    for eps in (1e-3, 1e-4):
        x0 = x_s * (1 + eps * np.linspace(-1, 1, 8))
        true = sc.scale_x(step_cstr(x0, Q_s, proc.model))
        errs.append(np.abs(true - (net.A @ sc.scale_x(x0) + net.B @ u)).max())
    # Second-order remainder: ten times smaller perturbation, about 100 times smaller error.
    assert errs[1] < errs[0] / 30


def test_local_input_blocks_match_sampled_map_jacobian(cstr):
    proc, x_s, Q_s, sc = cstr
    models, topo = linearized_baseline(proc.model, x_s, Q_s, sc, proc.topology, fill_in="keep")
    _, _, Ju = jacobians(lambda x, u: step_cstr(x, u, proc.model), x_s, Q_s, 1e-6 * x_s, 1e-6 * Q_s)
    Sx, Su = sc.x_max - sc.x_min, sc.u_max - sc.u_min
    for i, mdl in enumerate(models):
        r, c = topo.x_slice(i), topo.u_slice(i)
        ref = Ju[r, c] * Su[c][None, :] / Sx[r][:, None]
        np.testing.assert_allclose(mdl.B[:, :1], ref, rtol=1e-5, atol=1e-9)


def test_drop_keeps_topology_and_reports_discarded_mass(cstr):
    proc, x_s, Q_s, sc = cstr
    drop, t_drop = linearized_baseline(proc.model, x_s, Q_s, sc, proc.topology, fill_in="drop")
    keep, t_keep = linearized_baseline(proc.model, x_s, Q_s, sc, proc.topology, fill_in="keep")
    assert t_drop == proc.topology
    assert all(set(t_drop.neighbors[i]) <= set(t_keep.neighbors[i]) for i in range(4))
    assert max(m.diagnostics["dropped_norm"] for m in drop) > 0
    with pytest.raises(ValueError):
        linearized_baseline(proc.model, x_s, Q_s, sc, proc.topology, fill_in="zero")
