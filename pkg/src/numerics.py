"""Dense linear-algebra kernel and seeded random streams shared by every module.

Matrices and vectors are plain float64 ``numpy.ndarray`` values. Random draws
come from :class:`RngStream`, a (seed, stream-id) pair keyed into numpy's
counter-based Philox4x64 generator, so the same pair always reproduces the
same sequence and distinct stream ids give independent sequences.
"""
import hashlib
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf

# Bumped whenever the mapping (seed, stream_id) -> draws changes.
RNG_ALGORITHM = "philox4x64-numpy/v1"

_UINT64_MASK = (1 << 64) - 1
SYMMETRY_RTOL = 1e-10


class NotPositiveDefiniteError(ValueError):
    """Raised when a symmetric factorization meets a non-positive pivot."""

    def __init__(self, pivot: int, value: float = float("nan")):
        self.pivot = pivot
        self.value = value
        super().__init__(
            f"Matrix is not positive definite: pivot {pivot} is not positive"
        )


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _UINT64_MASK:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not 0 <= int(self.stream_id) <= _UINT64_MASK:
            raise ValueError(f"stream_id must be a 64-bit unsigned integer, got {self.stream_id}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *labels: Union[str, int]) -> "RngStream":
        """Derive an independent stream from this one and a tuple of labels."""
        h = hashlib.blake2b(digest_size=8)
        h.update(int(self.stream_id).to_bytes(8, "little"))
        for label in labels:
            h.update(b"\x1f")
            h.update(str(label).encode("utf-8"))
        return RngStream(int(self.seed), int.from_bytes(h.digest(), "little"))


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Validate and copy ``values`` into a finite float64 vector."""
    v = np.array(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Validate and copy ``values`` into a finite float64 matrix."""
    a = np.array(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def solve_spd(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``M v = b`` for symmetric positive definite ``M`` by Cholesky.

    ``b`` may be a vector or a matrix of right-hand sides (one per column).
    """
    M = as_matrix(M, "M")
    b = np.asarray(b, dtype=np.float64)
    n = M.shape[0]
    if M.shape[1] != n:
        raise ValueError(f"M must be square, got shape {M.shape}")
    if b.ndim not in (1, 2) or b.shape[0] != n:
        raise ValueError(f"right-hand side of shape {b.shape} does not match M of shape {M.shape}")

    scale = float(np.max(np.abs(M), initial=0.0))
    if scale > 0 and np.max(np.abs(M - M.T)) > SYMMETRY_RTOL * scale:
        raise ValueError("M is not symmetric within tolerance")

    factor, info = dpotrf(M, lower=True, clean=True, overwrite_a=False)
    if info > 0:
        # LAPACK reports the order of the failing leading minor (1-based)
        pivot = info - 1
        raise NotPositiveDefiniteError(pivot, float(M[pivot, pivot]))
    if info < 0:
        raise ValueError(f"dpotrf rejected argument {-info}")

    return cho_solve((factor, True), b, check_finite=False)


def gaussian_matrix(rows: int, cols: int, std: float, rng: RngStream) -> np.ndarray:
    """I.i.d. zero-mean Gaussian matrix with standard deviation ``std``."""
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    return rng.generator().normal(0.0, std, size=(rows, cols))
