# src/evaluate.py
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from generative import ModelSpec, build_model, random_mixing_matrix
from numerics import RngStream
from reconstruct import PENALTY_KINDS, LossSpec, loss_eval, loss_grad
from sensing import build_sensing_matrix

DEFAULT_STEP = 1e-4
DEFAULT_RTOL = 1e-5
# sample points keep non-linearity inputs inside this bound and SELU inputs
# this many steps away from the kink
PRE_ACTIVATION_BOUND = 5.0
KINK_MARGIN_STEPS = 10
MAX_POINT_DRAWS = 200


def default_model_specs(dim: int) -> List[ModelSpec]:
    return [
        ModelSpec("identity", dim),
        ModelSpec("one-layer", dim, activation="sigmoid"),
        ModelSpec("one-layer", dim, activation="exp"),
        ModelSpec("rnvp", dim, n_c=4),
        ModelSpec("rnvp", dim, n_c=8),
        ModelSpec("gauss-cdf", dim),
    ]


def finite_difference_grad(spec: LossSpec, model, B, A, y, z, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of the objective along each coordinate of ``z``."""
    grad = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = step
        grad[i] = (loss_eval(spec, model, B, A, y, z + e) - loss_eval(spec, model, B, A, y, z - e)) / (2 * step)
    return grad


def is_smooth_point(model, B, z: np.ndarray, step: float = DEFAULT_STEP) -> bool:
    """True when the central-difference stencil around ``z`` avoids kinks and saturation.

    Every coordinate stays at least 10 steps from the l1 kink, every
    non-linearity input stays below ``PRE_ACTIVATION_BOUND`` in magnitude, and
    no SELU input changes sign or sits within ``KINK_MARGIN_STEPS`` steps of 0.
    """
    if np.any(np.abs(z) <= KINK_MARGIN_STEPS * step):
        return False
    center = model.pre_activations(B, z)
    for activation, a in center:
        if activation == "identity":
            continue
        if np.any(np.abs(a) >= PRE_ACTIVATION_BOUND):
            return False
        if activation == "selu" and np.any(np.abs(a) < KINK_MARGIN_STEPS * step):
            return False

    for i in range(z.size):
        for sign in (1.0, -1.0):
            shifted = z.copy()
            shifted[i] += sign * step
            for (activation, a), (_, b) in zip(center, model.pre_activations(B, shifted)):
                if activation == "identity":
                    continue
                if np.any(np.abs(b) >= PRE_ACTIVATION_BOUND):
                    return False
                if activation == "selu" and np.any(np.signbit(a) != np.signbit(b)):
                    return False
    return True


def _draw_point(model, B, gen: np.random.Generator, dim: int, step: float) -> np.ndarray:
    for _ in range(MAX_POINT_DRAWS):
        z = gen.standard_normal(dim)
        # keep coordinates away from the l1 kink
        z = np.sign(z) * np.maximum(np.abs(z), 0.1)
        if is_smooth_point(model, B, z, step):
            return z
    raise RuntimeError(f"no smooth sample point found in {MAX_POINT_DRAWS} draws")


def evaluate_gradients(dim: int = 8, n: int = 5, lam: float = 0.7, seed: int = 0,
                       specs: Optional[Sequence[ModelSpec]] = None,
                       step: float = DEFAULT_STEP, rtol: float = DEFAULT_RTOL) -> List[Dict[str, Any]]:
    """Compare analytic loss gradients with finite differences for every model and penalty."""
    root = RngStream(seed)
    specs = list(specs) if specs is not None else default_model_specs(dim)

    results = []
    for mi, model_spec in enumerate(specs):
        rng = root.child("gradcheck", mi)
        model = build_model(model_spec, rng.child("model"))
        B = random_mixing_matrix(dim, dim, rng.child("mixing"))
        A = build_sensing_matrix(n, dim, rng.child("sensing"))
        gen = rng.child("point").generator()
        y = gen.standard_normal(n)
        z = _draw_point(model, B, gen, dim, step)

        for penalty in PENALTY_KINDS:
            weights = gen.uniform(0.5, 2.0, size=dim) if penalty == "reweighted-l1" else None
            loss_spec = LossSpec(penalty, lam, weights)
            analytic = loss_grad(loss_spec, model, B, A, y, z)
            numeric = finite_difference_grad(loss_spec, model, B, A, y, z, step)
            abs_err = float(np.max(np.abs(analytic - numeric)))
            scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), np.finfo(float).tiny)
            rel_err = float(np.linalg.norm(analytic - numeric)) / scale
            results.append({
                "model": model_spec.name,
                "penalty": penalty,
                "max_abs_error": abs_err,
                "rel_error": rel_err,
                "passed": rel_err < rtol,
            })
    return results
