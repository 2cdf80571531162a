import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from generative import ACTIVATIONS, MODEL_KINDS, ModelSpec
from nnlm import DEFAULT_FOLDS, DEFAULT_LAMBDA_GRID
from reconstruct import PENALTY_KINDS, REWEIGHT_EPS, SolverOptions

STUDIES = ("nnlm", "lambda-sweep", "comparison", "showcase")
GRID_STUDIES = ("lambda-sweep", "comparison")
SOLVER_KEYS = ("eta", "max_iters", "tol", "window", "restarts")
MODEL_KEYS = ("kind", "n_c", "activation", "output_scale", "label")


class ConfigValidationError(ValueError):
    """Raised with every problem found in an experiment configuration."""

    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


def _default_models() -> List[Dict[str, Any]]:
    return [{"kind": "rnvp", "n_c": 4}]


def _default_alphas() -> List[float]:
    return [round(0.1 * i, 1) for i in range(1, 10)]


@dataclass
class ExperimentConfig:
    study: str = "lambda-sweep"
    models: List[Dict[str, Any]] = field(default_factory=_default_models)
    m: int = 100
    M: int = 100
    K: int = 10
    snr_db: Optional[float] = 30.0
    alpha_grid: List[float] = field(default_factory=_default_alphas)
    lambda_grid: List[float] = field(default_factory=lambda: [0.1, 0.5, 0.9, 0.99, 1.0])
    penalties: List[str] = field(default_factory=lambda: ["l1-latent"])
    trials: int = 50
    seed: int = 0
    solver: SolverOptions = field(default_factory=SolverOptions)
    output_dir: str = "./results"
    workers: int = 1
    reweight_outer_iters: int = 3
    reweight_eps: float = REWEIGHT_EPS
    J_values: List[int] = field(default_factory=lambda: [256, 512, 1024, 2048, 4096])
    J_test: int = 1024
    nnlm_lambda_grid: List[float] = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    cv_folds: int = DEFAULT_FOLDS
    showcase_alpha: float = 0.5
    showcase_lambda: float = 0.9

    def model_specs(self) -> List[ModelSpec]:
        """Model entries as square ``ModelSpec`` values of dimension ``m``."""
        return [
            ModelSpec(
                kind=entry["kind"],
                dim=self.m,
                n_c=int(entry.get("n_c", 4)),
                activation=entry.get("activation", "sigmoid"),
                output_scale=float(entry.get("output_scale", 1.0)),
                label=entry.get("label"),
            )
            for entry in self.models
        ]

    def problems(self) -> List[str]:
        """Every violated constraint, one message per problem."""
        problems = []
        if self.study not in STUDIES:
            problems.append(f"study: must be one of {', '.join(STUDIES)}, got {self.study!r}")

        if not self.models:
            problems.append("models: at least one model is required")
        for i, entry in enumerate(self.models):
            kind = entry.get("kind")
            if kind not in MODEL_KINDS:
                problems.append(f"models[{i}].kind: must be one of {', '.join(MODEL_KINDS)}, got {kind!r}")
            unknown = sorted(set(entry) - set(MODEL_KEYS))
            if unknown:
                problems.append(f"models[{i}]: unknown keys {unknown}")
            if kind == "rnvp":
                if int(entry.get("n_c", 4)) < 1:
                    problems.append(f"models[{i}].n_c: must be at least 1")
                if self.m % 2:
                    problems.append(f"models[{i}]: rnvp needs an even dimension, m={self.m}")
                if self.m != self.M:
                    problems.append(f"models[{i}]: rnvp needs m == M, got m={self.m}, M={self.M}")
            if kind == "one-layer" and entry.get("activation", "sigmoid") not in ACTIVATIONS:
                problems.append(f"models[{i}].activation: must be one of {', '.join(ACTIVATIONS)}")
            if not math.isfinite(float(entry.get("output_scale", 1.0))):
                problems.append(f"models[{i}].output_scale: must be finite")

        if self.m < 1:
            problems.append(f"m: must be at least 1, got {self.m}")
        if self.M < 1:
            problems.append(f"M: must be at least 1, got {self.M}")
        if not 1 <= self.K <= self.M:
            problems.append(f"K: must lie in [1, M={self.M}], got {self.K}")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            problems.append("snr_db: must be finite or null (noise-free)")

        if not self.alpha_grid:
            problems.append("alpha_grid: must not be empty")
        elif any(not 0.0 < a <= 1.0 for a in self.alpha_grid):
            problems.append(f"alpha_grid: every entry must lie in (0, 1], got {self.alpha_grid}")
        if not self.lambda_grid:
            problems.append("lambda_grid: must not be empty")
        elif any(not 0.0 <= v <= 1.0 for v in self.lambda_grid):
            problems.append(f"lambda_grid: every entry must lie in [0, 1], got {self.lambda_grid}")
        if not self.penalties:
            problems.append("penalties: must not be empty")
        for p in self.penalties:
            if p not in PENALTY_KINDS:
                problems.append(f"penalties: unknown penalty {p!r}, expected one of {', '.join(PENALTY_KINDS)}")
        if len(set(self.penalties)) != len(self.penalties):
            problems.append("penalties: duplicate entries")

        if self.trials < 1:
            problems.append(f"trials: must be at least 1, got {self.trials}")
        if not 0 <= self.seed < 2 ** 64:
            problems.append(f"seed: must be a 64-bit unsigned integer, got {self.seed}")
        if self.workers < 1:
            problems.append(f"workers: must be at least 1, got {self.workers}")

        s = self.solver
        if not s.eta > 0:
            problems.append(f"solver.eta: must be positive, got {s.eta}")
        if s.max_iters < 1:
            problems.append(f"solver.max_iters: must be at least 1, got {s.max_iters}")
        if s.tol < 0:
            problems.append(f"solver.tol: must be nonnegative, got {s.tol}")
        if s.window < 1:
            problems.append(f"solver.window: must be at least 1, got {s.window}")
        if s.restarts < 0:
            problems.append(f"solver.restarts: must be nonnegative, got {s.restarts}")

        if self.reweight_outer_iters < 1:
            problems.append(f"reweight_outer_iters: must be at least 1, got {self.reweight_outer_iters}")
        if not self.reweight_eps > 0:
            problems.append(f"reweight_eps: must be positive, got {self.reweight_eps}")

        if not self.J_values:
            problems.append("J_values: must not be empty")
        elif any(b <= a for a, b in zip(self.J_values, self.J_values[1:])) or self.J_values[0] < 2:
            problems.append(f"J_values: must be strictly increasing and at least 2, got {self.J_values}")
        if self.J_test < 1:
            problems.append(f"J_test: must be at least 1, got {self.J_test}")
        if not self.nnlm_lambda_grid or any(not v > 0 for v in self.nnlm_lambda_grid):
            problems.append("nnlm_lambda_grid: must be non-empty with positive entries")
        if self.cv_folds < 2:
            problems.append(f"cv_folds: must be at least 2, got {self.cv_folds}")

        if not 0.0 < self.showcase_alpha <= 1.0:
            problems.append(f"showcase_alpha: must lie in (0, 1], got {self.showcase_alpha}")
        if not 0.0 <= self.showcase_lambda <= 1.0:
            problems.append(f"showcase_lambda: must lie in [0, 1], got {self.showcase_lambda}")
        return problems

    def validate(self) -> "ExperimentConfig":
        problems = self.problems()
        if problems:
            raise ConfigValidationError(problems)
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "solver"}
        data["solver"] = {key: getattr(self.solver, key) for key in SOLVER_KEYS}
        return data


_INT_FIELDS = ("m", "M", "K", "trials", "seed", "workers", "reweight_outer_iters", "J_test", "cv_folds")
_FLOAT_FIELDS = ("reweight_eps", "showcase_alpha", "showcase_lambda")
_FLOAT_LIST_FIELDS = ("alpha_grid", "lambda_grid", "nnlm_lambda_grid")


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Build and validate a config; all problems are reported together."""
    problems = []
    known = {f.name for f in fields(ExperimentConfig)}
    for key in sorted(set(data) - known):
        problems.append(f"{key}: unknown configuration key")

    kwargs: Dict[str, Any] = {}
    for key in _INT_FIELDS:
        if key in data:
            try:
                kwargs[key] = int(data[key])
            except (TypeError, ValueError):
                problems.append(f"{key}: expected an integer, got {data[key]!r}")
    for key in _FLOAT_FIELDS:
        if key in data:
            try:
                kwargs[key] = float(data[key])
            except (TypeError, ValueError):
                problems.append(f"{key}: expected a number, got {data[key]!r}")
    for key in _FLOAT_LIST_FIELDS:
        if key in data:
            try:
                kwargs[key] = [float(v) for v in data[key]]
            except (TypeError, ValueError):
                problems.append(f"{key}: expected a list of numbers, got {data[key]!r}")
    if "J_values" in data:
        try:
            kwargs["J_values"] = [int(v) for v in data["J_values"]]
        except (TypeError, ValueError):
            problems.append(f"J_values: expected a list of integers, got {data['J_values']!r}")
    if "snr_db" in data:
        try:
            kwargs["snr_db"] = None if data["snr_db"] is None else float(data["snr_db"])
        except (TypeError, ValueError):
            problems.append(f"snr_db: expected a number or null, got {data['snr_db']!r}")
    for key in ("study", "output_dir"):
        if key in data:
            kwargs[key] = str(data[key])
    if "penalties" in data:
        kwargs["penalties"] = [str(p) for p in data["penalties"]]
    if "models" in data:
        if isinstance(data["models"], list) and all(isinstance(e, dict) for e in data["models"]):
            kwargs["models"] = [dict(e) for e in data["models"]]
        else:
            problems.append("models: expected a list of objects")
    if "solver" in data:
        solver = data["solver"]
        if not isinstance(solver, dict):
            problems.append("solver: expected an object")
        else:
            for key in sorted(set(solver) - set(SOLVER_KEYS)):
                problems.append(f"solver.{key}: unknown solver option")
            try:
                kwargs["solver"] = SolverOptions(
                    eta=float(solver.get("eta", 1e-2)),
                    max_iters=int(solver.get("max_iters", 5000)),
                    tol=float(solver.get("tol", 1e-7)),
                    window=int(solver.get("window", 50)),
                    restarts=int(solver.get("restarts", 0)),
                )
            except (TypeError, ValueError):
                problems.append(f"solver: malformed options {solver!r}")

    config = ExperimentConfig(**kwargs)
    try:
        problems.extend(config.problems())
    except (TypeError, ValueError) as e:
        problems.append(f"models: malformed entry ({e})")
    if problems:
        raise ConfigValidationError(problems)
    return config


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read a JSON experiment manifest."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file {path} does not exist")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigValidationError([f"{path.name}: not valid JSON ({e})"]) from e
    if not isinstance(data, dict):
        raise ConfigValidationError([f"{path.name}: top level must be an object"])
    return config_from_dict(data)
