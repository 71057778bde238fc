import numpy as np
import pytest

from koopman_dmhe.identify import KoopmanSubsystemModel, Scaler, build_snapshots, fit_scaler, identify_all
from koopman_dmhe.lifting import LiftingDictionary, state_dictionary
from koopman_dmhe.predict import PredictionError, assemble_global, build_stacked, open_loop_predict
from koopman_dmhe.simulate.process import cstr_topology
from koopman_dmhe.topology import SubsystemTopology

from conftest import linear_network, rollout


def test_assemble_chain_block_placement():
    t = SubsystemTopology((1, 1), (1, 1), (1, 1), ((), (0,)), ((0,), (0,)))
    m0 = KoopmanSubsystemModel(0, np.array([[1.0]]), {}, np.array([[2.0]]), np.eye(1), np.eye(1), ("identity",), ("identity",))
    m1 = KoopmanSubsystemModel(1, np.array([[3.0]]), {0: np.array([[4.0]])}, np.array([[5.0]]), np.eye(1), np.eye(1),
                               ("identity",), ("identity",))
    A, B, C = assemble_global([m0, m1], t)
    np.testing.assert_array_equal(A, [[1, 0], [4, 3]])
    np.testing.assert_array_equal(B, [[2, 0], [0, 5]])
    bad = KoopmanSubsystemModel(0, np.eye(1), {1: np.eye(1)}, np.eye(1), np.eye(1), np.eye(1), ("identity",), ("identity",))
    with pytest.raises(ValueError):
        assemble_global([bad, m1], t)


def test_stacked_n1_matches_definition():
    rng = np.random.default_rng(0)
    A, B, C = rng.normal(size=(3, 3)), rng.normal(size=(3, 2)), rng.normal(size=(1, 3))
    s = build_stacked(A, B, C, 1)
    np.testing.assert_allclose(s.O, np.vstack([C, C @ A]))
    np.testing.assert_allclose(s.Gam, np.vstack([np.zeros((1, 3)), C]))
    np.testing.assert_allclose(s.J, np.vstack([np.zeros((3, 3)), np.eye(3)]))
    with pytest.raises(ValueError):
        build_stacked(A, B, C, 0)


def test_identity_model_constant_prediction():
    net, _ = linear_network(1, 2, 0)
    m = net.models[0]
    const = KoopmanSubsystemModel(0, np.eye(2), {}, np.zeros((2, 1)), m.C, np.eye(2), ("identity",), ("identity",))
    sc = Scaler(np.zeros(2), np.ones(2), np.zeros(1), np.ones(1))
    x_hat, _ = open_loop_predict([const], net.topology, sc, net.state_dicts, net.input_dicts,
                                 np.array([0.3, 0.7]), np.random.default_rng(0).uniform(size=(20, 1)))
    np.testing.assert_allclose(x_hat, np.tile([0.3, 0.7], (20, 1)))


def test_rollout_matches_direct_recursion_and_reports_blowup():
    net, _ = linear_network(3, 2, 4)
    u = np.random.default_rng(1).uniform(size=(50, 3))
    x0 = np.full(6, 0.5)
    x_hat, _ = open_loop_predict(net.models, net.topology, net.scaler, net.state_dicts, net.input_dicts, x0, u)
    np.testing.assert_allclose(x_hat, rollout(net, x0, u), atol=1e-12)
    unstable = [KoopmanSubsystemModel(0, np.array([[1e200]]), {}, np.zeros((1, 1)), np.eye(1), np.eye(1),
                                      ("identity",), ("identity",))]
    t = SubsystemTopology((1,), (1,), (1,), ((),), ((0,),))
    sc = Scaler(np.zeros(1), np.ones(1), np.zeros(1), np.ones(1))
    sd, ud = [state_dictionary(("identity",), 1)], [LiftingDictionary(("identity",), 1)]
    with pytest.raises(PredictionError, match="step 2"):
        open_loop_predict(unstable, t, sc, sd, ud, np.ones(1), np.zeros((5, 1)))


def test_one_step_rollout_equals_regression_fit():
    rng = np.random.default_rng(5)
    topo = cstr_topology()
    x = rng.uniform(size=(200, 8)); u = rng.uniform(size=(200, 4))
    sc = fit_scaler(x, u)
    sd = [state_dictionary(("identity", "cube_root", "exp"), 2)] * 4
    ud = [LiftingDictionary(("identity", "cube_root"), 1)] * 4
    models = identify_all(build_snapshots(x, u, x[:, 0::2], topo, sc), topo, sd, ud)
    k = 17
    _, z = open_loop_predict(models, topo, sc, sd, ud, x[k], u[k:k + 2])
    # Regression prediction for subsystem 2 (neighbor 1) from the same sample.
    s = sc.scale_x(x[k]); su = sc.scale_u(u[k])
    m2 = models[2]
    direct = m2.A_ii @ sd[2](s[4:6]) + m2.A_ij[1] @ sd[1](s[2:4]) + m2.B @ ud[2](su[2:3])
    np.testing.assert_allclose(z[1, 12:18], direct, atol=1e-12)
