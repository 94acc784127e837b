"""Hidden-layer topology dynamics: magnitude pruning + gradient regrowth.

Each update is a paired prune/regrow that swaps the weakest live
connections for the inactive positions with the largest gradient
magnitude, keeping every layer at its fixed connection count.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .sparse_net import SparseNetwork, Gradients


@dataclass
class TopologyDelta:
    """Record of one prune/regrow update as (layer, row, col) triples."""

    pruned: list[tuple[int, int, int]] = field(default_factory=list)
    regrown: list[tuple[int, int, int]] = field(default_factory=list)

    def pruned_in(self, layer: int) -> list[tuple[int, int]]:
        return [(i, j) for (l, i, j) in self.pruned if l == layer]

    def regrown_in(self, layer: int) -> list[tuple[int, int]]:
        return [(i, j) for (l, i, j) in self.regrown if l == layer]


def prune_layer_by_magnitude(net: SparseNetwork, l: int, count: int,
                             delta: TopologyDelta,
                             protect_columns: bool = True) -> None:
    """Mask off the `count` weakest live connections of layer `l`.

    Candidates are taken in ascending |weight| with ties broken toward the
    lowest (row, col). With `protect_columns`, a connection that is the
    last one feeding its output unit is spared unless the quota cannot be
    met otherwise.
    """
    layer = net.layers[l]
    if count <= 0:
        return
    rows_i, cols_j = np.nonzero(layer.mask)
    mags = np.abs(layer.weights[rows_i, cols_j])
    order = np.lexsort((cols_j, rows_i, mags))

    chosen: list[int] = []
    if protect_columns:
        col_live = layer.mask.sum(axis=0)
        deferred: list[int] = []
        for idx in order:
            if len(chosen) == count:
                break
            j = cols_j[idx]
            if col_live[j] <= 1:
                deferred.append(idx)
                continue
            chosen.append(idx)
            col_live[j] -= 1
        for idx in deferred:
            if len(chosen) == count:
                break
            chosen.append(idx)
    else:
        chosen = list(order[:count])

    for idx in chosen:
        i, j = int(rows_i[idx]), int(cols_j[idx])
        layer.mask[i, j] = False
        layer.weights[i, j] = 0.0
        delta.pruned.append((l, i, j))


def regrow_layer_by_gradient(net: SparseNetwork, l: int, dense_grad: np.ndarray,
                             delta: TopologyDelta) -> None:
    """Activate inactive positions of layer `l` with the largest |gradient|.

    Enough positions are regrown to bring the layer back to its connection
    target (normally exactly the number just pruned). Positions pruned in
    this same update are ineligible; new connections start at weight zero.
    """
    layer = net.layers[l]
    need = net.nnz_targets[l] - layer.nnz()
    if need <= 0:
        return
    eligible = ~layer.mask
    for (i, j) in delta.pruned_in(l):
        eligible[i, j] = False
    cand_i, cand_j = np.nonzero(eligible)
    if len(cand_i) < need:
        warnings.warn(
            f"layer {l}: only {len(cand_i)} positions available to regrow "
            f"{need}; connection count will recover on a later update",
            RuntimeWarning,
        )
        need = len(cand_i)
    scores = np.abs(dense_grad[cand_i, cand_j])
    order = np.lexsort((cand_j, cand_i, -scores))
    for idx in order[:need]:
        i, j = int(cand_i[idx]), int(cand_j[idx])
        layer.mask[i, j] = True
        layer.weights[i, j] = 0.0
        delta.regrown.append((l, i, j))


def churn_count(net: SparseNetwork, l: int, fraction: float) -> int:
    """Connections layer `l` can prune and still regrow back to target.

    floor(fraction * nnz), capped by the inactive headroom against the
    layer target so the paired regrowth always has enough candidate
    positions (zero for a dense layer, which has nowhere to grow).
    """
    layer = net.layers[l]
    headroom = layer.rows * layer.cols - net.nnz_targets[l]
    return max(0, min(int(fraction * layer.nnz()), headroom))


def magnitude_prune_hidden(net: SparseNetwork, fraction: float, rng=None) -> TopologyDelta:
    """Prune floor(fraction * nnz) weakest connections of every non-input layer.

    `rng` is accepted for interface symmetry; the selection itself is
    deterministic (lexicographic tie-breaking).
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"prune fraction must be in (0, 1), got {fraction}")
    delta = TopologyDelta()
    for l in range(1, len(net.layers)):
        if net.layers[l].nnz() == 0:
            warnings.warn(f"layer {l} has no connections; skipping prune", RuntimeWarning)
            continue
        prune_layer_by_magnitude(net, l, churn_count(net, l, fraction), delta)
    net.touch()
    return delta


def gradient_regrow_hidden(net: SparseNetwork, dense_grads: Gradients | list,
                           delta: TopologyDelta) -> TopologyDelta:
    """Regrow every non-input layer back to its connection target."""
    grads = dense_grads.dense if isinstance(dense_grads, Gradients) else dense_grads
    for l in range(1, len(net.layers)):
        regrow_layer_by_gradient(net, l, grads[l], delta)
    net.touch()
    return delta
