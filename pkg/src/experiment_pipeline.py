import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from experiment_config import GRID_STUDIES, ConfigValidationError, ExperimentConfig
from generative import GenerativeMap, MixingMatrix, build_model, random_mixing_matrix
from metrics import asce, srnr
from nnlm import NnlmReport, nnlm_curve
from numerics import RngStream
from reconstruct import (LossSpec, ReconstructionResult, SolverOptions, reconstruct,
                         reweighted_l1_reconstruct, ridge_baseline)
from results_store import ResultRow, ResultsStore, emit_outputs
from sensing import (MeasurementSetup, SparseLatent, build_sensing_matrix, measure,
                     measurement_count, sample_sparse_latent)

# Load environment variables
load_dotenv()

# per-process model table, filled by _init_worker
_WORKER_STATE: Dict[str, Any] = {}


@dataclass(eq=False)
class ShowcaseResult:
    model_label: str
    alpha: float
    lam: float
    latent: SparseLatent
    x: np.ndarray
    setup: MeasurementSetup
    result: ReconstructionResult
    srnr_db: float
    asce: float
    ridge_kappa: Optional[float]
    ridge_srnr_db: Optional[float]

    @property
    def z(self) -> np.ndarray:
        return self.latent.z

    @property
    def y_hat(self) -> np.ndarray:
        return self.setup.A @ self.result.x_hat


def build_models(config: ExperimentConfig) -> List[Tuple[str, GenerativeMap, MixingMatrix]]:
    """Build every configured model together with its mixing matrix."""
    root = RngStream(config.seed)
    built = []
    for i, spec in enumerate(config.model_specs()):
        model = build_model(spec, root.child("model", i))
        B = random_mixing_matrix(config.m, config.M, root.child("mixing", i))
        built.append((spec.name, model, B))
    return built


def solver_options(config: ExperimentConfig, rng: RngStream) -> SolverOptions:
    return replace(config.solver, z0=None, restart_seed=rng.child("restart").stream_id)


def draw_instance(config: ExperimentConfig, model: GenerativeMap, B: MixingMatrix,
                  alpha: float, rng: RngStream) -> Tuple[SparseLatent, np.ndarray, MeasurementSetup]:
    """Sparse latent, its signal and noisy measurements at ratio ``alpha``."""
    latent = sample_sparse_latent(config.M, config.K, rng.child("latent"))
    x = model.forward(B, latent.z)
    A = build_sensing_matrix(measurement_count(alpha, config.m), config.m, rng.child("sensing"))
    return latent, x, measure(A, x, config.snr_db, rng.child("noise"))


def _solve(config: ExperimentConfig, model: GenerativeMap, B: MixingMatrix, setup: MeasurementSetup,
           penalty: str, lam: float, rng: RngStream) -> ReconstructionResult:
    opts = solver_options(config, rng)
    if penalty == "reweighted-l1":
        return reweighted_l1_reconstruct(setup.y, setup.A, model, B, lam, opts,
                                         outer_iters=config.reweight_outer_iters, eps=config.reweight_eps)
    return reconstruct(setup.y, setup.A, model, B, LossSpec(penalty, lam), opts)


def _init_worker(config: ExperimentConfig, models) -> None:
    _WORKER_STATE["config"] = config
    _WORKER_STATE["models"] = models


def _run_trial(task: Tuple[int, int, int, str, int]) -> ResultRow:
    mi, ai, li, penalty, trial = task
    config: ExperimentConfig = _WORKER_STATE["config"]
    label, model, B = _WORKER_STATE["models"][mi]
    alpha = config.alpha_grid[ai]
    lam = config.lambda_grid[li]

    # penalties at one grid point share the instance
    rng = RngStream(config.seed).child(config.study, mi, ai, li, trial)
    latent, x, setup = draw_instance(config, model, B, alpha, rng)
    result = _solve(config, model, B, setup, penalty, lam, rng)

    return ResultRow(
        study=config.study,
        model=label,
        alpha=alpha,
        lam=lam,
        penalty=penalty,
        trial=trial,
        seed=config.seed,
        srnr_db=srnr([(x, result.x_hat)]),
        asce=asce([(latent.z, result.z_hat)], config.K),
        iterations=result.iterations,
        final_loss=result.final_loss,
        runtime_ms=result.wall_time_ms,
    )


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> List[ResultRow]:
    """Run every (model, alpha, lambda, penalty, trial) point of a grid study."""
    config.validate()
    if config.study not in GRID_STUDIES:
        raise ValueError(f"run_experiment handles {', '.join(GRID_STUDIES)} studies, not {config.study!r}")
    workers = workers or config.workers
    models = build_models(config)
    tasks = [
        (mi, ai, li, penalty, trial)
        for mi in range(len(models))
        for ai in range(len(config.alpha_grid))
        for li in range(len(config.lambda_grid))
        for penalty in config.penalties
        for trial in range(config.trials)
    ]

    if workers > 1:
        chunk = max(1, len(tasks) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(config, models)) as pool:
            rows = list(pool.map(_run_trial, tasks, chunksize=chunk))
    else:
        _init_worker(config, models)
        rows = [_run_trial(task) for task in tasks]

    penalty_order = {p: i for i, p in enumerate(config.penalties)}
    keyed = sorted(zip(tasks, rows), key=lambda kv: (kv[0][:3], penalty_order[kv[0][3]], kv[0][4]))
    return [row for _, row in keyed]


def run_nnlm_study(config: ExperimentConfig, workers: Optional[int] = None) -> List[NnlmReport]:
    """NNLM-versus-J curves for every configured model."""
    config.validate()
    root = RngStream(config.seed)
    reports = []
    for i, (label, model, B) in enumerate(build_models(config)):
        reports.append(nnlm_curve(model, B, config.J_values, config.J_test, config.nnlm_lambda_grid,
                                  root.child("nnlm", i), label=label, folds=config.cv_folds,
                                  workers=workers or config.workers))
    return reports


def run_showcase(config: ExperimentConfig, alpha: Optional[float] = None, lam: Optional[float] = None,
                 model_index: int = 0) -> ShowcaseResult:
    """One ℓ1 reconstruction, plus the best ridge baseline over the lambda grid."""
    config.validate()
    alpha = config.showcase_alpha if alpha is None else float(alpha)
    lam = config.showcase_lambda if lam is None else float(lam)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    models = build_models(config)
    if not 0 <= model_index < len(models):
        raise ValueError(f"model_index {model_index} out of range for {len(models)} models")
    label, model, B = models[model_index]

    rng = RngStream(config.seed).child("showcase", model_index)
    latent, x, setup = draw_instance(config, model, B, alpha, rng)
    result = reconstruct(setup.y, setup.A, model, B, LossSpec("l1-latent", lam), solver_options(config, rng))

    ridge_kappa, ridge_srnr = None, None
    for kappa in config.lambda_grid:
        try:
            x_ridge = ridge_baseline(setup.y, setup.A, kappa)
        except ValueError:
            continue
        value = srnr([(x, x_ridge)])
        if ridge_srnr is None or value > ridge_srnr:
            ridge_kappa, ridge_srnr = kappa, value

    return ShowcaseResult(
        model_label=label, alpha=alpha, lam=lam, latent=latent, x=x, setup=setup, result=result,
        srnr_db=srnr([(x, result.x_hat)]), asce=asce([(latent.z, result.z_hat)], config.K),
        ridge_kappa=ridge_kappa, ridge_srnr_db=ridge_srnr,
    )


class ExperimentPipeline:
    def __init__(self,
                 config: ExperimentConfig,
                 output_dir: Optional[str] = None,
                 workers: Optional[int] = None,
                 verbose: bool = True):
        # Environment overrides first, explicit arguments win
        env_dir = os.getenv('GSL_OUTPUT_DIR')
        env_workers = os.getenv('GSL_WORKERS')
        if env_dir:
            config = replace(config, output_dir=env_dir)
        if env_workers:
            try:
                config = replace(config, workers=int(env_workers))
            except ValueError:
                raise ConfigValidationError([f"GSL_WORKERS: expected an integer, got {env_workers!r}"])
        if output_dir:
            config = replace(config, output_dir=output_dir)
        if workers is not None:
            config = replace(config, workers=workers)

        self.config = config.validate()
        self.store = ResultsStore(self.config.output_dir)
        self.verbose = verbose

    def _log(self, message: str) -> None:
        if self.verbose:
            print(message)

    def run(self) -> Dict[str, Path]:
        """Run whatever study the configuration names and write its outputs."""
        study = self.config.study
        if study == "nnlm":
            return self.run_nnlm()[1]
        if study == "showcase":
            return self.run_showcase()[1]
        return self.run_grid()[1]

    def run_grid(self) -> Tuple[List[ResultRow], Dict[str, Path]]:
        config = self.config
        if config.study not in GRID_STUDIES:
            raise ConfigValidationError(
                [f"study: run_grid needs one of {', '.join(GRID_STUDIES)}, got {config.study!r}"])
        total = (len(config.models) * len(config.alpha_grid) * len(config.lambda_grid)
                 * len(config.penalties) * config.trials)
        self._log(f"Running {config.study} study: {total} reconstructions on {config.workers} worker(s)...")

        rows = run_experiment(config)
        self._log(f"✓ Completed {len(rows)} reconstructions")
        for (model, penalty), mean_srnr in _mean_srnr_by(rows).items():
            self._log(f"  {model} / {penalty}: mean SRNR {mean_srnr:.2f} dB")

        paths = emit_outputs(rows, config, self.store)
        for name, path in paths.items():
            self._log(f"✓ Wrote {name}: {path}")
        return rows, paths

    def run_nnlm(self) -> Tuple[List[NnlmReport], Dict[str, Path]]:
        config = self.config
        self._log(f"Measuring NNLM for {len(config.models)} model(s) over J = {config.J_values}...")
        reports = run_nnlm_study(config)
        for report in reports:
            self._log(f"  {report.model_label}: test NNLM {report.test_nnlm[-1]:.4g} at J={report.J_values[-1]} "
                      f"(λ={report.chosen_lambda:g})")
        paths = self.store.write_nnlm(reports)
        for name, path in paths.items():
            self._log(f"✓ Wrote {name}: {path}")
        return reports, paths

    def run_showcase(self, alpha: Optional[float] = None,
                     lam: Optional[float] = None) -> Tuple[ShowcaseResult, Dict[str, Path]]:
        showcase = run_showcase(self.config, alpha, lam)
        result = showcase.result
        self._log(f"Showcase on {showcase.model_label}: α={showcase.alpha:g}, λ1={showcase.lam:g}")
        self._log(f"  loss {result.initial_loss:.4g} -> {result.final_loss:.4g} "
                  f"after {result.iterations} iterations (converged: {result.converged})")
        self._log(f"  SRNR {showcase.srnr_db:.2f} dB, ASCE {showcase.asce:.3f}")
        if showcase.ridge_srnr_db is not None:
            self._log(f"  ridge baseline (κ={showcase.ridge_kappa:g}): SRNR {showcase.ridge_srnr_db:.2f} dB")
        paths = self.store.write_showcase(showcase)
        for name, path in paths.items():
            self._log(f"✓ Wrote {name}: {path}")
        return showcase, paths

    def get_stats(self) -> Dict[str, Any]:
        """Get pipeline statistics."""
        config = self.config
        return {
            'study': config.study,
            'models': [spec.name for spec in config.model_specs()],
            'dimensions': {'m': config.m, 'M': config.M, 'K': config.K},
            'snr_db': config.snr_db,
            'grid_points': len(config.alpha_grid) * len(config.lambda_grid) * len(config.penalties),
            'trials': config.trials,
            'workers': config.workers,
            'store': self.store.get_store_info(),
        }


def _mean_srnr_by(rows: List[ResultRow]) -> Dict[Tuple[str, str], float]:
    groups: Dict[Tuple[str, str], List[float]] = {}
    for row in rows:
        groups.setdefault((row.model, row.penalty), []).append(row.srnr_db)
    return {key: float(np.mean(values)) for key, values in groups.items()}
