"""Sparse latents, sensing matrices, noisy measurements and synthetic datasets."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from generative import GenerativeMap, MixingMatrix
from numerics import RngStream, as_matrix, as_vector, gaussian_matrix

logger = logging.getLogger(__name__)

DENSE_GAUSSIAN = "dense-gaussian"


@dataclass(frozen=True, eq=False)
class SparseLatent:
    z: np.ndarray
    support: Tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.support)


@dataclass(frozen=True, eq=False)
class MeasurementSetup:
    """Sensing matrix, noise level and observation ``y = Ax + n``.

    ``snr_db`` is ``None`` for noise-free measurements (``sigma == 0``).
    """

    A: np.ndarray
    snr_db: Optional[float]
    sigma: float
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def alpha(self) -> float:
        return self.A.shape[0] / self.A.shape[1]


@dataclass(frozen=True, eq=False)
class Datum:
    z: np.ndarray
    x: np.ndarray


def sample_sparse_latent(M: int, K: int, rng: RngStream) -> SparseLatent:
    """Random K-sparse latent: uniform support, standard-normal nonzeros."""
    if M < 1:
        raise ValueError(f"latent dimension must be positive, got M={M}")
    if not 0 <= K <= M:
        raise ValueError(f"sparsity K={K} must lie in [0, M={M}]")
    gen = rng.generator()
    support = np.sort(gen.choice(M, size=K, replace=False))
    z = np.zeros(M)
    z[support] = gen.standard_normal(K)
    return SparseLatent(z, tuple(int(i) for i in support))


def build_sensing_matrix(n: int, m: int, rng: RngStream) -> np.ndarray:
    """Gaussian sensing matrix with i.i.d. N(0, 1/n) entries."""
    if n < 1 or m < 1:
        raise ValueError(f"sensing matrix dimensions must be positive, got {n}x{m}")
    return gaussian_matrix(n, m, 1.0 / np.sqrt(n), rng)


def measurement_count(alpha: float, m: int) -> int:
    """Number of measurements for a sub-sampling ratio ``alpha = n / m``."""
    return max(1, int(round(alpha * m)))


def measure(A: np.ndarray, x: np.ndarray, snr_db: Optional[float], rng: RngStream) -> MeasurementSetup:
    """Noisy linear measurements at a per-realization SNR.

    sigma² = ‖Ax‖² / (n · 10^(snr_db/10)); ``snr_db=None`` (or +inf) gives y = Ax.
    """
    A = as_matrix(A, "A")
    x = as_vector(x, "x")
    n, m = A.shape
    if x.shape[0] != m:
        raise ValueError(f"x has length {x.shape[0]}, A has {m} columns")
    if n >= m:
        logger.warning("n=%d measurements for m=%d unknowns: not a compressed-sensing regime", n, m)

    clean = A @ x
    if snr_db is None or snr_db == float("inf"):
        return MeasurementSetup(A, None, 0.0, clean)
    if not np.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite or None, got {snr_db}")

    power = float(clean @ clean)
    if power == 0.0:
        raise ValueError("Ax is zero: the signal-to-noise ratio is undefined")
    sigma = float(np.sqrt(power / (n * 10.0 ** (snr_db / 10.0))))
    noise = rng.generator().normal(0.0, sigma, size=n)
    return MeasurementSetup(A, float(snr_db), sigma, clean + noise)


def generate_dataset(model: GenerativeMap,
                     B: MixingMatrix,
                     J: int,
                     rng: RngStream,
                     sparsity: Optional[int] = None) -> List[Datum]:
    """J pairs (z_j, f_θ(Bz_j)); dense N(0, I) latents unless ``sparsity`` is given."""
    if J < 1:
        raise ValueError(f"dataset size must be positive, got J={J}")
    M = B.shape[1]
    if sparsity is None:
        Z = rng.generator().standard_normal((J, M))
        latents = [Z[j] for j in range(J)]
    else:
        latents = [sample_sparse_latent(M, sparsity, rng.child("latent", j)).z for j in range(J)]
    return [Datum(z, model.forward(B, z)) for z in latents]


def dataset_arrays(data: Sequence[Datum]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack a dataset into (Z, X) arrays with one row per datum."""
    if not data:
        raise ValueError("dataset is empty")
    return np.vstack([d.z for d in data]), np.vstack([d.x for d in data])


def dataset_kind(Z: np.ndarray) -> str:
    """``sparse-k<K>`` when every latent has the same K < M nonzeros, else ``dense-gaussian``."""
    counts = np.count_nonzero(Z, axis=1)
    if counts.size and np.all(counts == counts[0]) and counts[0] < Z.shape[1]:
        return f"sparse-k{int(counts[0])}"
    return DENSE_GAUSSIAN


def export_dataset_csv(data: Sequence[Datum], path: Union[str, Path], kind: Optional[str] = None) -> Path:
    """Write the dataset as ``j,kind,z_0..z_{M-1},x_0..x_{m-1}``.

    ``kind`` defaults to the label ``dataset_kind`` derives from the latents.
    """
    Z, X = dataset_arrays(data)
    kind = kind or dataset_kind(Z)
    frame = pd.DataFrame({"j": np.arange(len(data)), "kind": kind})
    z_cols = pd.DataFrame(Z, columns=[f"z_{i}" for i in range(Z.shape[1])])
    x_cols = pd.DataFrame(X, columns=[f"x_{i}" for i in range(X.shape[1])])
    frame = pd.concat([frame, z_cols, x_cols], axis=1)
    path = Path(path)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path
