"""Reconstruction quality: SRNR in decibels and average support cardinality error."""
from dataclasses import dataclass
from typing import FrozenSet, Sequence, Tuple

import numpy as np

# reported when the reconstruction error is exactly zero
SRNR_CAP_DB = 300.0


@dataclass(frozen=True)
class EvalSummary:
    srnr_db: float
    asce: float
    trials: int

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be at least 1, got {self.trials}")
        if not 0.0 <= self.asce <= 1.0:
            raise ValueError(f"asce must lie in [0, 1], got {self.asce}")


def srnr(pairs: Sequence[Tuple[np.ndarray, np.ndarray]]) -> float:
    """10·log10(E‖x‖² / E‖x − x̂‖²), clamped to ±300 dB."""
    if len(pairs) == 0:
        raise ValueError("srnr needs at least one (x, x_hat) pair")
    signal = 0.0
    error = 0.0
    for x, x_hat in pairs:
        x = np.asarray(x, dtype=np.float64)
        x_hat = np.asarray(x_hat, dtype=np.float64)
        if x.shape != x_hat.shape:
            raise ValueError(f"x {x.shape} and x_hat {x_hat.shape} differ in shape")
        d = x - x_hat
        signal += float(x @ x)
        error += float(d @ d)
    # sample means share the 1/len(pairs) factor, so it cancels
    if error == 0.0:
        return SRNR_CAP_DB
    if signal == 0.0:
        return -SRNR_CAP_DB
    return float(np.clip(10.0 * np.log10(signal / error), -SRNR_CAP_DB, SRNR_CAP_DB))


def topk_support(z: np.ndarray, K: int) -> FrozenSet[int]:
    """Indices of the K largest-magnitude entries; ties go to the lower index."""
    z = np.asarray(z, dtype=np.float64)
    if not 1 <= K <= z.size:
        raise ValueError(f"K={K} must lie in [1, {z.size}]")
    order = np.argsort(-np.abs(z), kind="stable")
    return frozenset(int(i) for i in order[:K])


def asce(pairs: Sequence[Tuple[np.ndarray, np.ndarray]], K: int) -> float:
    """1 − (1/K)·E|S_z ∩ S_ẑ| over the K-size supports."""
    if len(pairs) == 0:
        raise ValueError("asce needs at least one (z, z_hat) pair")
    overlaps = [len(topk_support(z, K) & topk_support(z_hat, K)) for z, z_hat in pairs]
    return 1.0 - float(np.mean(overlaps)) / K


def evaluate(x_pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
             z_pairs: Sequence[Tuple[np.ndarray, np.ndarray]], K: int) -> EvalSummary:
    """SRNR and ASCE over matching signal and latent pairs."""
    if len(x_pairs) != len(z_pairs):
        raise ValueError("signal and latent pair lists differ in length")
    return EvalSummary(srnr(x_pairs), asce(z_pairs, K), len(x_pairs))
