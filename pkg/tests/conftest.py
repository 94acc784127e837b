import numpy as np
import pytest

from dsffs.sparse_net import SparseLayer, SparseNetwork, forward, softmax_cross_entropy


def build_net(weight_mats, masks=None, biases=None, targets=None) -> SparseNetwork:
    """SparseNetwork from explicit per-layer arrays (mask defaults to w != 0)."""
    layers = []
    for k, w in enumerate(weight_mats):
        w = np.array(w, dtype=float)
        m = np.array(masks[k], dtype=bool) if masks is not None else (w != 0.0)
        b = np.array(biases[k], dtype=float) if biases is not None else np.zeros(w.shape[1])
        w = w * m
        layers.append(SparseLayer(w, m, b))
    nnz = [layer.nnz() for layer in layers]
    total = sum(layer.rows * layer.cols for layer in layers)
    sparsity = 1.0 - sum(nnz) / total
    densities = [layer.nnz() / (layer.rows * layer.cols) for layer in layers]
    return SparseNetwork(layers, sparsity, densities, targets if targets is not None else nnz)


def loss_of(net, X, y) -> float:
    logits, _ = forward(net, X)
    loss, _ = softmax_cross_entropy(logits, y)
    return loss


def fd_weight_gradients(net, X, y, h=1e-5):
    """Central-difference gradients at every live weight and every bias."""
    w_grads, b_grads = [], []
    for layer in net.layers:
        gw = np.zeros_like(layer.weights)
        for i, j in zip(*np.nonzero(layer.mask)):
            orig = layer.weights[i, j]
            layer.weights[i, j] = orig + h
            up = loss_of(net, X, y)
            layer.weights[i, j] = orig - h
            dn = loss_of(net, X, y)
            layer.weights[i, j] = orig
            gw[i, j] = (up - dn) / (2 * h)
        gb = np.zeros_like(layer.bias)
        for j in range(layer.cols):
            orig = layer.bias[j]
            layer.bias[j] = orig + h
            up = loss_of(net, X, y)
            layer.bias[j] = orig - h
            dn = loss_of(net, X, y)
            layer.bias[j] = orig
            gb[j] = (up - dn) / (2 * h)
        w_grads.append(gw)
        b_grads.append(gb)
    return w_grads, b_grads


def max_rel_err(a, b, floor=1e-5) -> float:
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
