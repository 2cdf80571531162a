"""Sparse-latent reconstruction by ADAM-driven gradient search.

Objectives (λ ∈ [0, 1]):

- ``l1-latent``      λ‖y − A f(Bz)‖² + (1 − λ)‖z‖₁
- ``l2-latent``      λ‖y − A f(Bz)‖² + (1 − λ)‖z‖²
- ``reweighted-l1``  λ‖y − A f(Bz)‖² + (1 − λ)‖Wz‖₁,  W = diag(weights)

The ℓ1 subgradient at zero is taken as 0.
"""
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from generative import GenerativeMap, MixingMatrix
from numerics import NotPositiveDefiniteError, RngStream, as_matrix, as_vector, solve_spd

PENALTY_KINDS = ("l1-latent", "l2-latent", "reweighted-l1")
REWEIGHT_EPS = 0.1
RESTART_VARIANCE = 0.1


class NonFiniteLossError(FloatingPointError):
    """Raised when the objective stops being finite during the search."""

    def __init__(self, iteration: int, value: float):
        self.iteration = iteration
        self.value = value
        super().__init__(f"Non-finite loss {value} at iteration {iteration}")


@dataclass(frozen=True, eq=False)
class LossSpec:
    penalty: str = "l1-latent"
    lam: float = 0.9
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.penalty not in PENALTY_KINDS:
            raise ValueError(f"Unknown penalty kind: {self.penalty}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.penalty == "reweighted-l1":
            if self.weights is None:
                raise ValueError("reweighted-l1 needs a weight vector")
            w = as_vector(self.weights, "weights")
            if np.any(w < 0):
                raise ValueError("reweighting weights must be nonnegative")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        elif self.weights is not None:
            raise ValueError(f"weights are only used by reweighted-l1, not {self.penalty}")


@dataclass(frozen=True, eq=False)
class AdamState:
    t: int
    m: np.ndarray
    v: np.ndarray
    eta: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, dim: int, eta: float = 1e-2, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"ADAM betas must lie in [0, 1), got ({beta1}, {beta2})")
        return cls(0, np.zeros(dim), np.zeros(dim), eta, beta1, beta2, epsilon)


@dataclass
class SolverOptions:
    eta: float = 1e-2
    max_iters: int = 5000
    tol: float = 1e-7
    window: int = 50
    z0: Optional[np.ndarray] = None
    restarts: int = 0
    restart_seed: int = 0


@dataclass(eq=False)
class ReconstructionResult:
    z_hat: np.ndarray
    x_hat: np.ndarray
    loss_trace: np.ndarray
    residual_trace: np.ndarray
    penalty_trace: np.ndarray
    iterations: int
    converged: bool
    wall_time_ms: float
    best_iteration: int = 0

    @property
    def initial_loss(self) -> float:
        return float(self.loss_trace[0])

    @property
    def final_loss(self) -> float:
        return float(self.loss_trace[-1])


def _check_problem(model: GenerativeMap, B: MixingMatrix, A: np.ndarray, y: np.ndarray, z: np.ndarray,
                   spec: Optional[LossSpec] = None):
    if A.ndim != 2 or A.shape[1] != model.output_dim:
        raise ValueError(f"A of shape {A.shape} does not match model output dimension {model.output_dim}")
    if y.shape != (A.shape[0],):
        raise ValueError(f"y of shape {y.shape} does not match A with {A.shape[0]} rows")
    if z.shape != (B.shape[1],):
        raise ValueError(f"z of shape {z.shape} does not match B with {B.shape[1]} columns")
    if spec is not None and spec.weights is not None and spec.weights.shape != z.shape:
        raise ValueError(f"weights of shape {spec.weights.shape} do not match z of shape {z.shape}")


def _penalty(spec: LossSpec, z: np.ndarray) -> float:
    if spec.penalty == "l1-latent":
        return float(np.sum(np.abs(z)))
    if spec.penalty == "l2-latent":
        return float(z @ z)
    return float(np.sum(np.abs(spec.weights * z)))


def _penalty_grad(spec: LossSpec, z: np.ndarray) -> np.ndarray:
    if spec.penalty == "l1-latent":
        return np.sign(z)
    if spec.penalty == "l2-latent":
        return 2.0 * z
    return spec.weights * np.sign(z)


def _terms(spec, model, B, A, y, z) -> Tuple[float, float]:
    r = A @ model.forward(B, z) - y
    return float(r @ r), _penalty(spec, z)


def loss_eval(spec: LossSpec, model: GenerativeMap, B: MixingMatrix,
              A: np.ndarray, y: np.ndarray, z: np.ndarray) -> float:
    """Scalar objective at ``z``."""
    A, y, z = np.asarray(A, float), np.asarray(y, float), np.asarray(z, float)
    _check_problem(model, B, A, y, z, spec)
    residual, penalty = _terms(spec, model, B, A, y, z)
    return spec.lam * residual + (1.0 - spec.lam) * penalty


def _value_and_grad(spec, model, B, A, y, z):
    cache = {}

    def cotangent(x):
        r = A @ x - y
        cache["residual"] = float(r @ r)
        return 2.0 * spec.lam * (A.T @ r)

    _, smooth_grad = model.value_and_vjp(B, z, cotangent)
    penalty = _penalty(spec, z)
    loss = spec.lam * cache["residual"] + (1.0 - spec.lam) * penalty
    grad = smooth_grad + (1.0 - spec.lam) * _penalty_grad(spec, z)
    return loss, cache["residual"], penalty, grad


def loss_grad(spec: LossSpec, model: GenerativeMap, B: MixingMatrix,
              A: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """(Sub)gradient of the objective: 2λ·Bᵀ J_fᵀ Aᵀ(Af(Bz) − y) + (1 − λ)·g_pen."""
    A, y, z = np.asarray(A, float), np.asarray(y, float), np.asarray(z, float)
    _check_problem(model, B, A, y, z, spec)
    return _value_and_grad(spec, model, B, A, y, z)[3]


def adam_step(state: AdamState, grad: np.ndarray, z: np.ndarray) -> Tuple[AdamState, np.ndarray]:
    """One bias-corrected ADAM update; returns the new state and ``z_{k+1}``."""
    grad = np.asarray(grad, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if grad.shape != z.shape or state.m.shape != z.shape:
        raise ValueError(f"gradient {grad.shape}, iterate {z.shape} and state {state.m.shape} disagree")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    z_next = z - state.eta * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, t=t, m=m, v=v), z_next


def _search(spec, model, B, A, y, z0, opts: SolverOptions) -> ReconstructionResult:
    started = time.perf_counter()
    z = np.array(z0, dtype=np.float64)
    state = AdamState.fresh(z.size, eta=opts.eta)
    losses: List[float] = []
    residuals: List[float] = []
    penalties: List[float] = []
    best_loss, best_z, best_k = np.inf, z, 0
    converged = False
    k = 0

    while True:
        loss, residual, penalty, grad = _value_and_grad(spec, model, B, A, y, z)
        if not np.isfinite(loss):
            raise NonFiniteLossError(k, loss)
        losses.append(loss)
        residuals.append(residual)
        penalties.append(penalty)
        if loss < best_loss:
            best_loss, best_z, best_k = loss, z, k

        if k >= opts.window:
            previous = losses[k - opts.window]
            if abs(previous - loss) / max(abs(previous), np.finfo(float).tiny) < opts.tol:
                converged = True
                break
        if k >= opts.max_iters:
            break
        state, z = adam_step(state, grad, z)
        k += 1

    # close the trace with the returned estimate
    best_residual, best_penalty = residuals[best_k], penalties[best_k]
    losses.append(best_loss)
    residuals.append(best_residual)
    penalties.append(best_penalty)

    return ReconstructionResult(
        z_hat=best_z,
        x_hat=model.forward(B, best_z),
        loss_trace=np.array(losses),
        residual_trace=np.array(residuals),
        penalty_trace=np.array(penalties),
        iterations=k,
        converged=converged,
        wall_time_ms=(time.perf_counter() - started) * 1e3,
        best_iteration=best_k,
    )


def reconstruct(y: np.ndarray, A: np.ndarray, model: GenerativeMap, B: MixingMatrix,
                spec: LossSpec, opts: Optional[SolverOptions] = None) -> ReconstructionResult:
    """Minimize the objective from ``opts.z0`` (origin by default); best iterate wins."""
    opts = opts or SolverOptions()
    if opts.max_iters < 1:
        raise ValueError(f"max_iters must be at least 1, got {opts.max_iters}")
    y = as_vector(y, "y")
    A = as_matrix(A, "A")
    M = B.shape[1]
    z0 = np.zeros(M) if opts.z0 is None else as_vector(opts.z0, "z0")
    _check_problem(model, B, A, y, z0, spec)

    result = _search(spec, model, B, A, y, z0, opts)
    if opts.restarts > 0:
        gen = RngStream(opts.restart_seed).child("restart").generator()
        elapsed = result.wall_time_ms
        for _ in range(opts.restarts):
            start = gen.normal(0.0, np.sqrt(RESTART_VARIANCE), size=M)
            candidate = _search(spec, model, B, A, y, start, opts)
            elapsed += candidate.wall_time_ms
            if candidate.final_loss < result.final_loss:
                result = candidate
        result.wall_time_ms = elapsed
    return result


def reweighting(z_hat: np.ndarray, eps: float = REWEIGHT_EPS) -> np.ndarray:
    """Next weight diagonal: W_ii = 1 / (|ẑ_i| + eps)."""
    return 1.0 / (np.abs(np.asarray(z_hat, dtype=np.float64)) + eps)


def reweighted_l1_reconstruct(y: np.ndarray, A: np.ndarray, model: GenerativeMap, B: MixingMatrix,
                              beta: float, opts: Optional[SolverOptions] = None,
                              outer_iters: int = 3, eps: float = REWEIGHT_EPS) -> ReconstructionResult:
    """Reweighted-ℓ1 outer loop; each pass warm-starts from the previous estimate.

    Weights are rescaled to unit mean between passes so the penalty keeps the
    overall β trade-off of the first, unweighted pass.
    """
    if outer_iters < 1:
        raise ValueError(f"outer_iters must be at least 1, got {outer_iters}")
    opts = opts or SolverOptions()
    weights = np.ones(B.shape[1])
    result = None
    elapsed = 0.0
    for it in range(outer_iters):
        spec = LossSpec("reweighted-l1", beta, weights)
        pass_opts = opts if it == 0 else replace(opts, z0=result.z_hat, restarts=0)
        result = reconstruct(y, A, model, B, spec, pass_opts)
        elapsed += result.wall_time_ms
        weights = reweighting(result.z_hat, eps)
        weights = weights / weights.mean()
    result.wall_time_ms = elapsed
    return result


def ridge_baseline(y: np.ndarray, A: np.ndarray, kappa: float) -> np.ndarray:
    """Regularized least squares: x̂ = (κAᵀA + (1 − κ)I)⁻¹ κAᵀy."""
    if not 0.0 <= kappa <= 1.0:
        raise ValueError(f"kappa must lie in [0, 1], got {kappa}")
    y = as_vector(y, "y")
    A = as_matrix(A, "A")
    if y.shape[0] != A.shape[0]:
        raise ValueError(f"y has length {y.shape[0]}, A has {A.shape[0]} rows")
    m = A.shape[1]
    if kappa == 1.0 and np.linalg.matrix_rank(A) < m:
        raise ValueError("singular system: kappa=1 needs A with full column rank")
    gram = kappa * (A.T @ A) + (1.0 - kappa) * np.eye(m)
    try:
        return solve_spd(gram, kappa * (A.T @ y))
    except NotPositiveDefiniteError as e:
        raise ValueError(f"singular system at pivot {e.pivot}") from e


def write_trace_csv(result: ReconstructionResult, path: Union[str, Path]) -> Path:
    """Dump ``iter,loss,residual_term,penalty_term`` for every recorded iterate."""
    frame = pd.DataFrame({
        "iter": np.arange(result.loss_trace.size),
        "loss": [repr(float(v)) for v in result.loss_trace],
        "residual_term": [repr(float(v)) for v in result.residual_trace],
        "penalty_term": [repr(float(v)) for v in result.penalty_trace],
    })
    path = Path(path)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path
