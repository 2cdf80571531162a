#!/usr/bin/env python3
"""
Tests for experiment configuration loading and validation.
"""
import json

import pytest

from experiment_config import ConfigValidationError, ExperimentConfig, config_from_dict, load_config


def test_defaults_follow_the_reference_protocol():
    """Defaults: m = M = 100, K = 10, 30 dB, α 0.1..0.9, the λ grid and 50 trials."""
    config = ExperimentConfig().validate()
    assert (config.m, config.M, config.K, config.snr_db) == (100, 100, 10, 30.0)
    assert config.alpha_grid == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    assert config.lambda_grid == [0.1, 0.5, 0.9, 0.99, 1.0]
    assert config.trials == 50
    assert [s.name for s in config.model_specs()] == ["rnvp-nc4"]


def test_config_from_dict_builds_models_and_solver():
    """Nested model and solver entries become typed values."""
    config = config_from_dict({
        "study": "comparison",
        "models": [{"kind": "one-layer", "activation": "exp"}, {"kind": "rnvp", "n_c": 8, "label": "deep"}],
        "m": 20, "M": 20, "K": 2,
        "snr_db": None,
        "penalties": ["l1-latent", "l2-latent"],
        "solver": {"eta": 0.05, "max_iters": 10, "restarts": 2},
    })
    assert [s.name for s in config.model_specs()] == ["one-layer-exp", "deep"]
    assert all(s.dim == 20 for s in config.model_specs())
    assert config.snr_db is None
    assert (config.solver.eta, config.solver.max_iters, config.solver.restarts) == (0.05, 10, 2)
    assert config.solver.tol == 1e-7
    assert config.to_dict()["solver"]["window"] == 50


def test_all_problems_are_reported_together():
    """Every violation appears in one error."""
    with pytest.raises(ConfigValidationError) as excinfo:
        config_from_dict({
            "study": "unknown",
            "K": 500,
            "alpha_grid": [],
            "lambda_grid": [1.5],
            "penalties": ["l0"],
            "trials": 0,
            "colour": "blue",
        })
    problems = "\n".join(excinfo.value.problems)
    for key in ("study", "K", "alpha_grid", "lambda_grid", "penalties", "trials", "colour"):
        assert key in problems
    assert isinstance(excinfo.value, ValueError)


def test_rnvp_needs_square_even_dimensions():
    """rnvp models require m == M and an even dimension."""
    with pytest.raises(ConfigValidationError, match="m == M"):
        config_from_dict({"m": 10, "M": 12, "K": 2})
    with pytest.raises(ConfigValidationError, match="even"):
        config_from_dict({"m": 11, "M": 11, "K": 2})
    config_from_dict({"models": [{"kind": "gauss-cdf"}], "m": 11, "M": 11, "K": 2})


def test_type_errors_are_collected():
    """Malformed values are reported instead of raising TypeError."""
    with pytest.raises(ConfigValidationError) as excinfo:
        config_from_dict({"m": "many", "solver": {"eta": "fast", "momentum": 0.9}, "models": "rnvp"})
    problems = "\n".join(excinfo.value.problems)
    assert "m: expected an integer" in problems
    assert "solver.momentum" in problems
    assert "models: expected a list" in problems


def test_load_config(tmp_path):
    """JSON files load; missing files and bad JSON are errors."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"study": "nnlm", "J_values": [8, 16], "J_test": 8}))
    config = load_config(path)
    assert config.study == "nnlm" and config.J_values == [8, 16]

    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigValidationError, match="not valid JSON"):
        load_config(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigValidationError, match="object"):
        load_config(bad)
