from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from experiment_config import ExperimentConfig
from nnlm import NnlmReport
from reconstruct import write_trace_csv

# fixed ids and no timestamp so identical data gives identical SVG bytes
plt.rcParams["svg.hashsalt"] = "gsl-cs"
_SVG_METADATA = {"Date": None}

RESULTS_FILE = "results.csv"
TIMINGS_FILE = "timings.csv"
AGGREGATE_FILE = "aggregate.csv"
NNLM_FILE = "nnlm.csv"
TRACE_FILE = "showcase_trace.csv"
KEY_COLUMNS = ["study", "model", "alpha", "lambda", "penalty", "trial"]
RESULT_COLUMNS = KEY_COLUMNS + ["seed", "srnr_db", "asce", "iterations", "final_loss"]


@dataclass(frozen=True)
class ResultRow:
    study: str
    model: str
    alpha: float
    lam: float
    penalty: str
    trial: int
    seed: int
    srnr_db: float
    asce: float
    iterations: int
    final_loss: float
    runtime_ms: float

    def record(self) -> Dict[str, Any]:
        data = asdict(self)
        data["lambda"] = data.pop("lam")
        return data


def format_float(value: float) -> str:
    """Shortest string that round-trips to the same double."""
    return repr(float(value))


def _formatted(frame: pd.DataFrame) -> pd.DataFrame:
    out = frame.copy()
    for column in out.columns:
        if pd.api.types.is_float_dtype(out[column]):
            out[column] = [format_float(v) for v in out[column]]
    return out


def aggregate_rows(rows: Sequence[ResultRow], study: str) -> pd.DataFrame:
    """Mean SRNR/ASCE per grid point; comparison keeps the best-SRNR lambda per penalty."""
    frame = pd.DataFrame([r.record() for r in rows])
    grouped = (
        frame.groupby(["model", "alpha", "lambda", "penalty"], sort=False)
        .agg(srnr_db=("srnr_db", "mean"), asce=("asce", "mean"),
             iterations=("iterations", "mean"), final_loss=("final_loss", "mean"),
             trials=("trial", "count"))
        .reset_index()
    )
    if study != "comparison":
        return grouped
    best = grouped.loc[grouped.groupby(["model", "alpha", "penalty"], sort=False)["srnr_db"].idxmax()]
    columns = ["model", "alpha", "penalty", "lambda", "srnr_db", "asce", "iterations", "final_loss", "trials"]
    return best[columns].reset_index(drop=True)


class ResultsStore:
    def __init__(self, output_dir: str = "./results"):
        self.output_dir = Path(output_dir)

    def _ensure_dir(self) -> Path:
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OSError(f"Output directory {self.output_dir} is not writable: {e}") from e
        if not self.output_dir.is_dir():
            raise OSError(f"Output path {self.output_dir} is not a directory")
        return self.output_dir

    def _write_csv(self, frame: pd.DataFrame, name: str) -> Path:
        path = self._ensure_dir() / name
        try:
            _formatted(frame).to_csv(path, index=False, lineterminator="\n")
        except OSError as e:
            raise OSError(f"Could not write {path}: {e}") from e
        return path

    def _save_figure(self, fig, name: str) -> Path:
        path = self._ensure_dir() / name
        fig.savefig(path, format="svg", metadata=_SVG_METADATA)
        plt.close(fig)
        return path

    def write_rows(self, rows: Sequence[ResultRow], config: ExperimentConfig) -> Dict[str, Path]:
        """Persist raw rows, timings, the per-study aggregate and its plots."""
        if not rows:
            raise ValueError("No result rows to write")
        frame = pd.DataFrame([r.record() for r in rows])
        paths = {
            "results": self._write_csv(frame[RESULT_COLUMNS], RESULTS_FILE),
            "timings": self._write_csv(frame[KEY_COLUMNS + ["runtime_ms"]], TIMINGS_FILE),
        }
        aggregate = aggregate_rows(rows, config.study)
        paths["aggregate"] = self._write_csv(aggregate, AGGREGATE_FILE)
        if config.study == "comparison":
            paths["plot"] = self._plot_comparison(aggregate)
        else:
            paths["plot"] = self._plot_lambda_sweep(aggregate)
        return paths

    def _plot_lambda_sweep(self, aggregate: pd.DataFrame) -> Path:
        panels = list(aggregate.groupby(["model", "penalty"], sort=False))
        fig, axes = plt.subplots(1, len(panels), figsize=(5 * len(panels), 4), squeeze=False)
        for ax, ((model, penalty), part) in zip(axes[0], panels):
            for lam, line in part.groupby("lambda", sort=False):
                ax.plot(line["alpha"], line["srnr_db"], marker="o", label=f"λ={lam:g}")
            ax.set_title(f"{model} ({penalty})")
            ax.set_xlabel("α = n/m")
            ax.set_ylabel("SRNR [dB]")
            ax.grid(True, alpha=0.3)
            ax.legend()
        fig.tight_layout()
        return self._save_figure(fig, "srnr_vs_alpha.svg")

    def _plot_comparison(self, aggregate: pd.DataFrame) -> Path:
        fig, (ax_srnr, ax_asce) = plt.subplots(1, 2, figsize=(10, 4))
        for (model, penalty), line in aggregate.groupby(["model", "penalty"], sort=False):
            label = f"{model}, {penalty}"
            ax_srnr.plot(line["alpha"], line["srnr_db"], marker="o", label=label)
            ax_asce.plot(line["alpha"], line["asce"], marker="o", label=label)
        ax_srnr.set_ylabel("SRNR [dB]")
        ax_asce.set_ylabel("ASCE")
        for ax in (ax_srnr, ax_asce):
            ax.set_xlabel("α = n/m")
            ax.grid(True, alpha=0.3)
        ax_srnr.legend()
        fig.tight_layout()
        return self._save_figure(fig, "comparison.svg")

    def write_nnlm(self, reports: Sequence[NnlmReport]) -> Dict[str, Path]:
        """Persist NNLM curves as ``model,J,split,nnlm,lambda`` and a log-J plot."""
        if not reports:
            raise ValueError("No NNLM reports to write")
        frame = pd.concat([r.to_frame() for r in reports], ignore_index=True)
        paths = {"nnlm": self._write_csv(frame, NNLM_FILE)}

        fig, ax = plt.subplots(figsize=(6, 4))
        for report in reports:
            line, = ax.plot(report.J_values, report.test_nnlm, marker="o", label=f"{report.model_label} (test)")
            ax.plot(report.J_values, report.train_nnlm, marker="x", linestyle="--",
                    color=line.get_color(), label=f"{report.model_label} (train)")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("J (training data points)")
        ax.set_ylabel("NNLM")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        paths["plot"] = self._save_figure(fig, "nnlm_vs_J.svg")
        return paths

    def write_showcase(self, showcase) -> Dict[str, Path]:
        """Loss trace CSV and a four-panel figure of one reconstruction."""
        result = showcase.result
        paths = {"trace": write_trace_csv(result, self._ensure_dir() / TRACE_FILE)}

        fig, axes = plt.subplots(2, 2, figsize=(11, 7))
        ax = axes[0][0]
        ax.semilogy(np.maximum(result.loss_trace, np.finfo(float).tiny))
        ax.set_title("loss")
        ax.set_xlabel("iteration")
        ax = axes[0][1]
        ax.plot(showcase.setup.y, label="y")
        ax.plot(showcase.y_hat, "--", label="ŷ = Ax̂")
        ax.set_title("measurements")
        ax.legend()
        ax = axes[1][0]
        ax.plot(showcase.x, label="x")
        ax.plot(result.x_hat, "--", label="x̂")
        ax.set_title(f"signal (SRNR {showcase.srnr_db:.1f} dB)")
        ax.legend()
        ax = axes[1][1]
        ax.stem(showcase.z, linefmt="C0-", markerfmt="C0o", basefmt=" ", label="z")
        ax.stem(result.z_hat, linefmt="C1--", markerfmt="C1x", basefmt=" ", label="ẑ")
        ax.set_title(f"latent (ASCE {showcase.asce:.2f})")
        ax.legend()
        fig.tight_layout()
        paths["plot"] = self._save_figure(fig, "showcase.svg")
        return paths

    def get_store_info(self) -> Dict[str, Any]:
        """Get information about the output directory."""
        files = sorted(p.name for p in self.output_dir.glob("*") if p.is_file()) if self.output_dir.is_dir() else []
        return {"output_dir": str(self.output_dir), "files": files, "count": len(files)}

    def clear(self) -> List[str]:
        """Remove generated CSV and SVG artifacts from the output directory."""
        removed = []
        if not self.output_dir.is_dir():
            return removed
        for path in sorted(self.output_dir.glob("*")):
            if path.is_file() and path.suffix in (".csv", ".svg"):
                path.unlink()
                removed.append(path.name)
        return removed


def emit_outputs(rows: Sequence[ResultRow], config: ExperimentConfig,
                 store: Optional[ResultsStore] = None) -> Dict[str, Path]:
    """Write results.csv, timings.csv, aggregate.csv and plots for a grid study."""
    store = store or ResultsStore(config.output_dir)
    return store.write_rows(rows, config)
