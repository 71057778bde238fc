import numpy as np
import pytest

from koopman_dmhe.identify import KoopmanSubsystemModel, Scaler
from koopman_dmhe.predict import LiftedNetwork
from koopman_dmhe.simulate.linear import chain_topology, random_system


def linear_network(m: int, nx: int, seed: int, radius: float = 0.9, sensors=None):
    """Exact lifted network (identity dictionaries, unit scaling) of a random chain system."""
    topo = chain_topology((nx,) * m, (1,) * m, sensors or ((0,),) * m)
    sys_ = random_system(topo, seed, radius)
    models = []
    for i in range(m):
        C = topo.sensor_matrix(i)
        models.append(KoopmanSubsystemModel(
            i, sys_.block(i, i).copy(), {j: sys_.block(i, j).copy() for j in topo.neighbors[i]},
            sys_.input_block(i).copy(), C, np.eye(nx), ("identity",), ("identity",)))
    n = m * nx
    scaler = Scaler(np.zeros(n), np.ones(n), np.zeros(m), np.ones(m))
    return LiftedNetwork(models, topo, scaler), sys_


def rollout(net, x0, u, w=None):
    x = np.empty((len(u), net.topology.total_x))
    x[0] = x0
    for k in range(len(u) - 1):
        x[k + 1] = net.A @ x[k] + net.B @ u[k] + (0 if w is None else w[k])
    return x


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
