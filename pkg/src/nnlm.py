"""Normalized non-linearity measure (NNLM) of a generative map.

A ridge-regularized LMMSE estimator x̂ = C_xz (C_zz + λI)⁻¹ (z − μ_z) + μ_x is fitted
on pairs (z, f_θ(Bz)); NNLM is the residual energy of that linear fit relative to
the signal energy, E‖x − x̂‖² / E‖x‖². Zero for affine maps, larger when less of
the map is explained linearly.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from generative import GenerativeMap, MixingMatrix
from numerics import RngStream, solve_spd
from sensing import Datum, dataset_arrays, generate_dataset

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID: Tuple[float, ...] = tuple(float(v) for v in np.logspace(-8, 0, 9))
DEFAULT_FOLDS = 5


@dataclass(frozen=True, eq=False)
class LmmseEstimator:
    gain: np.ndarray
    mu_z: np.ndarray
    mu_x: np.ndarray
    lam: float


class NnlmScore(NamedTuple):
    train: float
    test: float
    lam: float


@dataclass(eq=False)
class NnlmReport:
    model_label: str
    J_values: List[int]
    train_nnlm: List[float]
    test_nnlm: List[float]
    lambdas: List[float]

    @property
    def chosen_lambda(self) -> float:
        return self.lambdas[-1]

    def to_frame(self) -> pd.DataFrame:
        """Long format: ``model,J,split,nnlm,lambda``."""
        rows = []
        for J, train, test, lam in zip(self.J_values, self.train_nnlm, self.test_nnlm, self.lambdas):
            rows.append({"model": self.model_label, "J": J, "split": "train", "nnlm": train, "lambda": lam})
            rows.append({"model": self.model_label, "J": J, "split": "test", "nnlm": test, "lambda": lam})
        return pd.DataFrame(rows, columns=["model", "J", "split", "nnlm", "lambda"])


def _moments(Z: np.ndarray, X: np.ndarray):
    J = Z.shape[0]
    if J < 2:
        raise ValueError(f"LMMSE fit needs at least 2 data points, got {J}")
    mu_z = Z.mean(axis=0)
    mu_x = X.mean(axis=0)
    Zc = Z - mu_z
    Xc = X - mu_x
    Czz = (Zc.T @ Zc) / J
    Czz = 0.5 * (Czz + Czz.T)
    Cxz = (Xc.T @ Zc) / J
    return mu_z, mu_x, Czz, Cxz


def _estimator(moments, lam: float) -> LmmseEstimator:
    if not lam > 0:
        raise ValueError(f"LMMSE regularization must be positive, got {lam}")
    mu_z, mu_x, Czz, Cxz = moments
    regularized = Czz + lam * np.eye(Czz.shape[0])
    # gain = Cxz (Czz + λI)⁻¹, solved for all rows of Cxz at once
    gain = solve_spd(regularized, Cxz.T).T
    return LmmseEstimator(gain, mu_z, mu_x, float(lam))


def fit_arrays(Z: np.ndarray, X: np.ndarray, lam: float) -> LmmseEstimator:
    """Fit the LMMSE estimator on stacked latents ``Z`` and signals ``X``."""
    if not lam > 0:
        raise ValueError(f"LMMSE regularization must be positive, got {lam}")
    Z = np.asarray(Z, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if Z.ndim != 2 or X.ndim != 2 or Z.shape[0] != X.shape[0]:
        raise ValueError(f"Z {Z.shape} and X {X.shape} must be 2-D with matching rows")
    return _estimator(_moments(Z, X), lam)


def fit_lmmse(data: Sequence[Datum], lam: float) -> LmmseEstimator:
    """Empirical (1/J) means and covariances, ridge-regularized gain."""
    if not lam > 0:
        raise ValueError(f"LMMSE regularization must be positive, got {lam}")
    if len(data) < 2:
        raise ValueError(f"LMMSE fit needs at least 2 data points, got {len(data)}")
    Z, X = dataset_arrays(data)
    return fit_arrays(Z, X, lam)


def lmmse_predict(est: LmmseEstimator, z: np.ndarray) -> np.ndarray:
    """Return ``gain (z − μ_z) + μ_x`` (row-wise for batches)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != est.mu_z.shape[0]:
        raise ValueError(f"z has dimension {z.shape[-1]}, estimator expects {est.mu_z.shape[0]}")
    return (z - est.mu_z) @ est.gain.T + est.mu_x


def nnlm_value(est: LmmseEstimator, Z: np.ndarray, X: np.ndarray) -> float:
    """Sample-mean estimate of E‖x − x̂_L‖² / E‖x‖²."""
    err = X - lmmse_predict(est, Z)
    energy = float(np.mean(np.sum(X * X, axis=1)))
    if energy == 0.0:
        raise ValueError("signals have zero energy: NNLM is undefined")
    return float(np.mean(np.sum(err * err, axis=1))) / energy


def select_lambda(Z: np.ndarray, X: np.ndarray, lambda_grid: Sequence[float],
                  folds: int = DEFAULT_FOLDS) -> float:
    """Pick λ from the grid by k-fold cross-validated NNLM (first minimum wins)."""
    grid = [float(v) for v in lambda_grid]
    if not grid or any(not v > 0 for v in grid):
        raise ValueError("lambda grid must be non-empty with positive entries")
    J = Z.shape[0]
    k = min(folds, J // 2)
    if k < 2:
        logger.warning("J=%d is too small for cross-validation; choosing lambda on training data", J)
        moments = _moments(Z, X)
        scores = [nnlm_value(_estimator(moments, lam), Z, X) for lam in grid]
        return grid[int(np.argmin(scores))]

    scores = np.zeros(len(grid))
    for held in np.array_split(np.arange(J), k):
        keep = np.ones(J, dtype=bool)
        keep[held] = False
        moments = _moments(Z[keep], X[keep])
        for i, lam in enumerate(grid):
            scores[i] += nnlm_value(_estimator(moments, lam), Z[held], X[held])
    return grid[int(np.argmin(scores))]


def _score(Z_train, X_train, Z_test, X_test, lambda_grid, folds) -> NnlmScore:
    lam = select_lambda(Z_train, X_train, lambda_grid, folds)
    est = fit_arrays(Z_train, X_train, lam)
    return NnlmScore(nnlm_value(est, Z_train, X_train), nnlm_value(est, Z_test, X_test), lam)


def nnlm_score(model: GenerativeMap, B: MixingMatrix, J_train: int, J_test: int,
               lambda_grid: Sequence[float], rng: RngStream,
               folds: int = DEFAULT_FOLDS) -> NnlmScore:
    """Train/test NNLM of ``model`` on dense Gaussian latents with a CV-chosen λ."""
    if J_train < 2:
        raise ValueError(f"J_train must be at least 2, got {J_train}")
    Z_train, X_train = dataset_arrays(generate_dataset(model, B, J_train, rng.child("train")))
    Z_test, X_test = dataset_arrays(generate_dataset(model, B, J_test, rng.child("test")))
    return _score(Z_train, X_train, Z_test, X_test, lambda_grid, folds)


def nnlm_curve(model: GenerativeMap, B: MixingMatrix, J_values: Sequence[int], J_test: int,
               lambda_grid: Sequence[float], rng: RngStream,
               label: Optional[str] = None, folds: int = DEFAULT_FOLDS,
               workers: int = 1) -> NnlmReport:
    """NNLM versus training-set size.

    Training sets are nested prefixes of one draw; the held-out set is a
    separate draw shared by every J.
    """
    J_values = [int(J) for J in J_values]
    if not J_values:
        raise ValueError("J_values must not be empty")
    if any(b <= a for a, b in zip(J_values, J_values[1:])):
        raise ValueError(f"J_values must be strictly increasing, got {J_values}")
    if J_values[0] < 2:
        raise ValueError(f"every J must be at least 2, got {J_values[0]}")

    Z_all, X_all = dataset_arrays(generate_dataset(model, B, J_values[-1], rng.child("train")))
    Z_test, X_test = dataset_arrays(generate_dataset(model, B, J_test, rng.child("test")))

    def score_at(J: int) -> NnlmScore:
        return _score(Z_all[:J], X_all[:J], Z_test, X_test, lambda_grid, folds)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score_at, J_values))
    else:
        scores = [score_at(J) for J in J_values]

    return NnlmReport(
        model_label=label or model.name,
        J_values=J_values,
        train_nnlm=[s.train for s in scores],
        test_nnlm=[s.test for s in scores],
        lambdas=[s.lam for s in scores],
    )
