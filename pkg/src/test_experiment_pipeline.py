#!/usr/bin/env python3
"""
End-to-end tests: grid studies, NNLM and showcase runs, stored outputs and the CLI.
"""
import json
import sys

import numpy as np
import pandas as pd
import pytest

import cli
from experiment_config import ConfigValidationError, ExperimentConfig, config_from_dict
from experiment_pipeline import ExperimentPipeline, build_models, run_experiment, run_nnlm_study, run_showcase
from reconstruct import SolverOptions
from results_store import RESULT_COLUMNS, ResultsStore, aggregate_rows, emit_outputs


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("GSL_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("GSL_WORKERS", raising=False)


def _small_config(output_dir, **overrides) -> ExperimentConfig:
    settings = dict(
        study="lambda-sweep",
        models=[{"kind": "rnvp", "n_c": 2}, {"kind": "one-layer", "activation": "sigmoid"}],
        m=8, M=8, K=2,
        alpha_grid=[0.5, 0.75],
        lambda_grid=[0.9, 1.0],
        penalties=["l1-latent", "l2-latent", "reweighted-l1"],
        trials=2,
        seed=3,
        solver=SolverOptions(max_iters=40),
        output_dir=str(output_dir),
        reweight_outer_iters=2,
        J_values=[8, 16],
        J_test=8,
    )
    settings.update(overrides)
    return ExperimentConfig(**settings).validate()


def test_run_experiment_covers_the_grid_in_order(tmp_path):
    """One row per grid point and trial, sorted by model, alpha, lambda, penalty, trial."""
    config = _small_config(tmp_path)
    rows = run_experiment(config)
    assert len(rows) == 2 * 2 * 2 * 3 * 2
    assert [r.model for r in rows[:24]] == ["rnvp-nc2"] * 24
    assert [(r.penalty, r.trial) for r in rows[:6]] == [
        ("l1-latent", 0), ("l1-latent", 1), ("l2-latent", 0), ("l2-latent", 1),
        ("reweighted-l1", 0), ("reweighted-l1", 1)]
    assert all(r.seed == 3 and r.study == "lambda-sweep" for r in rows)
    assert all(0.0 <= r.asce <= 1.0 and np.isfinite(r.srnr_db) for r in rows)


def test_penalties_share_the_trial_instance(tmp_path):
    """At λ = 1 the penalty vanishes, so paired ℓ1 and ℓ2 runs coincide."""
    rows = run_experiment(_small_config(tmp_path))
    by_key = {(r.model, r.alpha, r.lam, r.penalty, r.trial): r for r in rows}
    for (model, alpha, lam, penalty, trial), row in by_key.items():
        if lam == 1.0 and penalty == "l1-latent":
            twin = by_key[(model, alpha, lam, "l2-latent", trial)]
            assert row.srnr_db == twin.srnr_db
            assert row.final_loss == twin.final_loss


def test_results_are_byte_identical_across_worker_counts(tmp_path):
    """1 and 8 workers write the same results.csv and aggregate.csv bytes."""
    for workers in (1, 8):
        config = _small_config(tmp_path / f"w{workers}", workers=workers)
        emit_outputs(run_experiment(config), config)
    for name in ("results.csv", "aggregate.csv"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w8" / name).read_bytes()


def test_written_outputs_and_aggregate_means(tmp_path):
    """results.csv has the fixed columns; aggregate means match the raw rows."""
    config = _small_config(tmp_path)
    paths = emit_outputs(run_experiment(config), config)
    assert set(paths) == {"results", "timings", "aggregate", "plot"}
    results = pd.read_csv(paths["results"], float_precision="round_trip")
    assert list(results.columns) == RESULT_COLUMNS
    timings = pd.read_csv(paths["timings"])
    assert "runtime_ms" in timings.columns and len(timings) == len(results)

    aggregate = pd.read_csv(paths["aggregate"], float_precision="round_trip")
    expected = results.groupby(["model", "alpha", "lambda", "penalty"])["srnr_db"].mean()
    for _, row in aggregate.iterrows():
        key = (row["model"], row["alpha"], row["lambda"], row["penalty"])
        assert row["srnr_db"] == pytest.approx(expected[key], rel=1e-12)
        assert row["trials"] == 2
    assert paths["plot"].name == "srnr_vs_alpha.svg"
    assert paths["plot"].read_text().lstrip().startswith("<?xml")


def test_comparison_aggregate_keeps_best_lambda(tmp_path):
    """Comparison keeps, per model/alpha/penalty, the λ with the best mean SRNR."""
    config = _small_config(tmp_path, study="comparison")
    rows = run_experiment(config)
    aggregate = aggregate_rows(rows, "comparison")
    assert len(aggregate) == 2 * 2 * 3
    full = aggregate_rows(rows, "lambda-sweep")
    for _, row in aggregate.iterrows():
        options = full[(full["model"] == row["model"]) & (full["alpha"] == row["alpha"])
                       & (full["penalty"] == row["penalty"])]
        assert row["srnr_db"] == options["srnr_db"].max()
    paths = ResultsStore(config.output_dir).write_rows(rows, config)
    assert paths["plot"].name == "comparison.svg"


def test_emit_outputs_errors(tmp_path):
    """Empty rows and an unwritable output directory are errors."""
    config = _small_config(tmp_path / "out")
    with pytest.raises(ValueError, match="No result rows"):
        emit_outputs([], config)
    assert not (tmp_path / "out").exists()

    rows = run_experiment(_small_config(tmp_path, trials=1, penalties=["l1-latent"]))
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    with pytest.raises(OSError, match="not writable"):
        emit_outputs(rows, config, ResultsStore(str(blocker)))
    with pytest.raises(OSError, match="not writable"):
        emit_outputs(rows, config, ResultsStore(str(blocker / "nested")))


def test_run_experiment_rejects_non_grid_studies(tmp_path):
    """NNLM and showcase studies are not grids."""
    with pytest.raises(ValueError):
        run_experiment(_small_config(tmp_path, study="nnlm"))


def test_models_are_shared_across_studies(tmp_path):
    """Models and mixing matrices depend only on the seed and model index."""
    a = build_models(_small_config(tmp_path))
    b = build_models(_small_config(tmp_path, study="comparison", trials=5))
    for (label_a, model_a, B_a), (label_b, model_b, B_b) in zip(a, b):
        assert label_a == label_b
        np.testing.assert_array_equal(model_a.parameters(), model_b.parameters())
        np.testing.assert_array_equal(B_a.matrix, B_b.matrix)


def test_nnlm_study_writes_curves(tmp_path):
    """Every model gets a curve; the store writes nnlm.csv and its plot."""
    config = _small_config(tmp_path, study="nnlm", models=[{"kind": "gauss-cdf"}, {"kind": "rnvp", "n_c": 2}])
    reports = run_nnlm_study(config)
    assert [r.model_label for r in reports] == ["gauss-cdf", "rnvp-nc2"]
    paths = ResultsStore(config.output_dir).write_nnlm(reports)
    frame = pd.read_csv(paths["nnlm"])
    assert list(frame.columns) == ["model", "J", "split", "nnlm", "lambda"]
    assert len(frame) == 2 * 2 * 2
    assert (frame["nnlm"] >= 0).all()
    assert paths["plot"].exists()


def test_showcase_reports_estimate_and_ridge_baseline(tmp_path):
    """The showcase reconstructs once, tunes the ridge κ and writes its artifacts."""
    config = _small_config(tmp_path, lambda_grid=[0.1, 0.5, 0.9, 1.0])
    showcase = run_showcase(config, alpha=0.5, lam=0.9)
    assert showcase.setup.n == 4
    np.testing.assert_allclose(showcase.y_hat, showcase.setup.A @ showcase.result.x_hat)
    assert showcase.ridge_kappa in (0.1, 0.5, 0.9)
    assert np.isfinite(showcase.ridge_srnr_db)
    assert showcase.result.final_loss <= showcase.result.initial_loss

    paths = ResultsStore(config.output_dir).write_showcase(showcase)
    trace = pd.read_csv(paths["trace"])
    assert len(trace) == showcase.result.loss_trace.size
    assert paths["plot"].name == "showcase.svg"
    with pytest.raises(ValueError):
        run_showcase(config, alpha=1.5)


def test_pipeline_environment_overrides(tmp_path, monkeypatch):
    """GSL_* variables override the config; explicit arguments override both."""
    monkeypatch.setenv("GSL_OUTPUT_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("GSL_WORKERS", "3")
    config = _small_config(tmp_path / "config")
    pipeline = ExperimentPipeline(config, verbose=False)
    assert pipeline.config.output_dir == str(tmp_path / "env")
    assert pipeline.config.workers == 3
    pipeline = ExperimentPipeline(config, output_dir=str(tmp_path / "arg"), workers=1, verbose=False)
    assert pipeline.config.output_dir == str(tmp_path / "arg")
    assert pipeline.config.workers == 1

    monkeypatch.setenv("GSL_WORKERS", "many")
    with pytest.raises(ConfigValidationError):
        ExperimentPipeline(config, verbose=False)


def test_pipeline_runs_and_reports(tmp_path, capsys):
    """run() dispatches on the study and prints ✓ lines for written files."""
    config = _small_config(tmp_path, trials=1, penalties=["l1-latent"])
    pipeline = ExperimentPipeline(config)
    paths = pipeline.run()
    assert paths["results"].exists()
    assert "✓ Wrote results" in capsys.readouterr().out

    stats = pipeline.get_stats()
    assert stats["models"] == ["rnvp-nc2", "one-layer-sigmoid"]
    assert stats["grid_points"] == 4
    assert "results.csv" in stats["store"]["files"]

    removed = pipeline.store.clear()
    assert "results.csv" in removed and "srnr_vs_alpha.svg" in removed
    assert pipeline.store.get_store_info()["count"] == 0


def _write_config(path, **entries):
    data = {
        "models": [{"kind": "gauss-cdf"}], "m": 6, "M": 6, "K": 2,
        "alpha_grid": [0.5], "lambda_grid": [0.9], "trials": 1,
        "solver": {"max_iters": 20}, "J_values": [8, 16], "J_test": 8,
    }
    data.update(entries)
    path.write_text(json.dumps(data))
    return path


def test_cli_run_and_stats(tmp_path, monkeypatch, capsys):
    """`run` writes the study outputs; `stats` summarizes them."""
    config = _write_config(tmp_path / "c.json", output_dir=str(tmp_path / "out"))
    monkeypatch.setattr(sys, "argv", ["cli.py", "run", "--config", str(config)])
    cli.main()
    assert (tmp_path / "out" / "results.csv").exists()

    monkeypatch.setattr(sys, "argv", ["cli.py", "stats", "--config", str(config)])
    cli.main()
    out = capsys.readouterr().out
    assert "EXPERIMENT STATISTICS" in out
    assert "Models: gauss-cdf" in out


def test_cli_nnlm_and_showcase(tmp_path, monkeypatch):
    """`nnlm` and `showcase` honour --out."""
    config = _write_config(tmp_path / "c.json")
    monkeypatch.setattr(sys, "argv", ["cli.py", "nnlm", "--config", str(config), "--out", str(tmp_path / "n")])
    cli.main()
    assert (tmp_path / "n" / "nnlm.csv").exists()
    monkeypatch.setattr(sys, "argv", ["cli.py", "showcase", "--config", str(config), "--alpha", "0.5",
                                      "--lambda", "0.9", "--out", str(tmp_path / "s")])
    cli.main()
    assert (tmp_path / "s" / "showcase_trace.csv").exists()


def test_cli_run_follows_the_config_study(tmp_path, monkeypatch):
    """`run` executes the study the manifest names instead of a grid."""
    config = _write_config(tmp_path / "n.json", study="nnlm", output_dir=str(tmp_path / "out"))
    monkeypatch.setattr(sys, "argv", ["cli.py", "run", "--config", str(config)])
    cli.main()
    assert (tmp_path / "out" / "nnlm.csv").exists()
    assert not (tmp_path / "out" / "results.csv").exists()

    config = _write_config(tmp_path / "s.json", study="showcase", showcase_alpha=0.5,
                           output_dir=str(tmp_path / "show"))
    monkeypatch.setattr(sys, "argv", ["cli.py", "run", "--config", str(config)])
    cli.main()
    assert (tmp_path / "show" / "showcase_trace.csv").exists()
    assert not (tmp_path / "show" / "results.csv").exists()


def test_run_grid_rejects_non_grid_studies(tmp_path):
    """A grid run on an nnlm manifest fails with a message naming the study."""
    pipeline = ExperimentPipeline(_small_config(tmp_path, study="nnlm"), verbose=False)
    with pytest.raises(ConfigValidationError, match="study"):
        pipeline.run_grid()
    assert not (tmp_path / "results.csv").exists()


def test_cli_reports_errors_with_exit_status(tmp_path, monkeypatch, capsys):
    """Invalid configs print an error and exit with status 1."""
    config = _write_config(tmp_path / "bad.json", K=50)
    monkeypatch.setattr(sys, "argv", ["cli.py", "run", "--config", str(config)])
    with pytest.raises(SystemExit) as excinfo:
        cli.main()
    assert excinfo.value.code == 1
    assert "Error:" in capsys.readouterr().out

    monkeypatch.setattr(sys, "argv", ["cli.py", "run", "--config", str(tmp_path / "missing.json")])
    with pytest.raises(SystemExit):
        cli.main()


@pytest.mark.slow
def test_lambda_sweep_penalty_helps():
    """Best λ in {0.5, 0.9} beats λ = 1 by at least 3 dB at α = 0.5."""
    config = config_from_dict({
        "models": [{"kind": "rnvp", "n_c": 4}], "alpha_grid": [0.5], "lambda_grid": [0.5, 0.9, 1.0],
        "trials": 20, "seed": 0, "workers": 4,
    })
    aggregate = aggregate_rows(run_experiment(config), "lambda-sweep").set_index("lambda")
    best = max(aggregate.loc[0.5, "srnr_db"], aggregate.loc[0.9, "srnr_db"])
    assert best >= aggregate.loc[1.0, "srnr_db"] + 3.0


@pytest.mark.slow
def test_l1_latent_beats_l2_latent():
    """With tuned λ, the ℓ1 penalty matches or beats ℓ2 in SRNR and ASCE."""
    config = config_from_dict({
        "study": "comparison", "models": [{"kind": "rnvp", "n_c": 4}], "alpha_grid": [0.3, 0.5],
        "penalties": ["l1-latent", "l2-latent"], "trials": 20, "seed": 0, "workers": 4,
    })
    aggregate = aggregate_rows(run_experiment(config), "comparison")
    for alpha in (0.3, 0.5):
        part = aggregate[aggregate["alpha"] == alpha].set_index("penalty")
        assert part.loc["l1-latent", "srnr_db"] >= part.loc["l2-latent", "srnr_db"]
        assert part.loc["l1-latent", "asce"] <= part.loc["l2-latent", "asce"]
