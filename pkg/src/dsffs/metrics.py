"""Accuracy, sparsity-aware FLOPs, and communication-cost accounting.

Conventions, fixed for reproducibility: one multiply-accumulate costs 2
FLOPs, a training pass costs 3x an inference pass (forward plus roughly
twice that for the backward), and a transmitted sparse model costs
(32 * (1 - S) + 1) * n bits: 32-bit values for the live weights plus one
mask bit per maskable position. Topology-update overhead (strength sums,
sorting, the extra gradient evaluation) is excluded from FLOPs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .sparse_net import SparseNetwork, forward


@dataclass
class RoundMetrics:
    round: int
    test_accuracy: float
    cumulative_flops: int
    cumulative_upload_bits: int
    connected_input_neurons: int
    global_nnz: int

    CSV_HEADER = (
        "round,accuracy,cumulative_flops,cumulative_upload_bits,"
        "connected_input_neurons,global_nnz"
    )

    def csv_row(self) -> str:
        return (
            f"{self.round},{self.test_accuracy:.10g},{self.cumulative_flops},"
            f"{self.cumulative_upload_bits},{self.connected_input_neurons},"
            f"{self.global_nnz}"
        )


def accuracy(net: SparseNetwork, test, batch_size: int = 4096) -> float:
    """Fraction of argmax-correct predictions (ties go to the lowest class)."""
    if isinstance(test, Dataset):
        X, y = test.X, test.y
    else:
        X, y = test
    if len(y) == 0:
        raise ValueError("test set is empty")
    correct = 0
    for start in range(0, len(y), batch_size):
        logits, _ = forward(net, X[start:start + batch_size])
        correct += int((np.argmax(logits, axis=1) == y[start:start + batch_size]).sum())
    return correct / len(y)


def inference_flops(nnz_per_layer, bias_units_per_layer=None) -> int:
    """FLOPs for one example: 2 per live weight plus one add per bias unit."""
    total = sum(2 * int(n) for n in nnz_per_layer)
    if bias_units_per_layer is not None:
        total += sum(int(b) for b in bias_units_per_layer)
    return total


def flops_per_example(net: SparseNetwork, phase: str = "inference") -> int:
    """Per-example cost of the sparse network; training costs 3x inference."""
    base = inference_flops(net.layer_nnz(), [layer.cols for layer in net.layers])
    if phase == "inference":
        return base
    if phase == "training":
        return 3 * base
    raise ValueError(f"unknown phase {phase!r}")


def upload_cost_bits(n_params: int, sparsity: float) -> int:
    """Bits to transmit a sparse model of n maskable positions at sparsity S."""
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    exact = (32.0 * (1.0 - sparsity) + 1.0) * n_params
    # sub-microbit float fuzz must not push an exact integer up a whole bit
    return int(math.ceil(round(exact, 6)))


class MetricsRecorder:
    """Accumulates per-round metrics and the cumulative cost counters.

    Upload is charged per participating client per round; download (the
    broadcast) is tracked with the same formula but kept out of the CSV
    columns.
    """

    def __init__(self, test_xy, batch_size: int, local_epochs: int):
        self.test_xy = test_xy
        self.batch_size = batch_size
        self.local_epochs = local_epochs
        self.cumulative_flops = 0
        self.cumulative_upload_bits = 0
        self.cumulative_download_bits = 0

    def record_round(self, server, participant_sizes) -> RoundMetrics:
        """Metrics after one completed round.

        `participant_sizes` holds the local sample count of every client
        that trained this round. FLOPs charge Q * ceil(N_m / B) * B
        training examples per client; the connection count is conserved
        across the round, so the per-example cost is well defined.
        """
        net = server.global_model
        train_cost = flops_per_example(net, "training")
        per_model_bits = upload_cost_bits(net.dense_param_count(), net.sparsity)
        for n_m in participant_sizes:
            batches = math.ceil(n_m / self.batch_size) if n_m > 0 else 0
            self.cumulative_flops += self.local_epochs * batches * self.batch_size * train_cost
            self.cumulative_upload_bits += per_model_bits
            self.cumulative_download_bits += per_model_bits
        acc = accuracy(net, self.test_xy)
        connected = int(net.layers[0].mask.any(axis=1).sum())
        return RoundMetrics(
            round=server.round,
            test_accuracy=acc,
            cumulative_flops=self.cumulative_flops,
            cumulative_upload_bits=self.cumulative_upload_bits,
            connected_input_neurons=connected,
            global_nnz=net.nnz(),
        )
