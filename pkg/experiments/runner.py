"""
Seeded Monte Carlo runner.

For every Eb/N0 grid point, frames_per_point independent (channel, payload,
noise) triples are drawn and every configured estimator runs on the same
frame. Frame k of point p always uses the stream default_rng([seed, p, k]),
so results do not depend on the worker count or scheduling order; reduction
happens in grid/frame order.

Outputs (in cfg.output_path):
    metrics.csv        one row per estimator x Eb/N0 point
    diagnostics.csv    per-iteration means for the EM estimators
    run_metadata.json  resolved config, sigma2 per point, package versions
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import pydantic
import pywt
import scipy

from config.schemas import WAVELET_ESTIMATORS, ExperimentConfig, MetricRow
from config.settings import RuntimeSettings, get_settings
from experiments.metrics import compute_mse, count_bit_errors
from models.receivers import (
    EmFreqReceiver,
    EmMapReceiver,
    EmWavReceiver,
    PerfectCsiReceiver,
    PilotReceiver,
)
from tools.channels import ChannelRealization, draw_channel, load_cir_file, sample_channel_covariance
from tools.phy import apply_channel, build_frame, noise_variance
from tools.transforms import build_operator

logger = logging.getLogger(__name__)

# Substream key reserved for the MMSE covariance draws
COVARIANCE_STREAM = 0x4D4D5345

METRIC_COLUMNS = list(MetricRow.model_fields)
DIAGNOSTIC_COLUMNS = ["estimator", "ebn0_db", "iteration", "mean_active", "lambda", "tau2", "mse_iter"]

SIGMA2_CONVENTION = "sigma2 = (1/M) / (bits_per_symbol * code_rate * 10^(EbN0_dB/10))"


class ExperimentResult:
    """Aggregated tables of one run."""

    def __init__(self, metrics: pd.DataFrame, diagnostics: pd.DataFrame, metadata: Dict[str, Any]):
        self.metrics = metrics
        self.diagnostics = diagnostics
        self.metadata = metadata

    def write(self, out_dir: Path) -> Dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "metrics": out_dir / "metrics.csv",
            "diagnostics": out_dir / "diagnostics.csv",
            "metadata": out_dir / "run_metadata.json",
        }
        self.metrics.to_csv(paths["metrics"], index=False, float_format="%.10g")
        self.diagnostics.to_csv(paths["diagnostics"], index=False, float_format="%.10g")
        paths["metadata"].write_text(json.dumps(self.metadata, indent=2) + "\n")
        for path in paths.values():
            logger.info(f"💾 Wrote {path}")
        return paths


class ExperimentRunner:
    """Builds the shared operator and receivers once, then sweeps the grid."""

    def __init__(self, cfg: ExperimentConfig, settings: Optional[RuntimeSettings] = None):
        self.cfg = cfg
        self.settings = settings or get_settings()
        self.frame_cfg = cfg.frame
        self.code = cfg.code
        self.channel_cfg = cfg.channel
        self.est_cfg = cfg.estimator
        self.workers = cfg.workers or self.settings.workers

        self.operator = build_operator(self.frame_cfg.M, cfg.basis)
        self.file_channel: Optional[ChannelRealization] = None
        if self.channel_cfg.model == "file":
            self.file_channel = load_cir_file(self.channel_cfg.cir_path, self.operator)

        self.receivers = self._build_receivers()

    def _build_receivers(self) -> Dict[str, Any]:
        seed = self.frame_cfg.interleaver_seed
        receivers: Dict[str, Any] = {}
        for name in self.cfg.estimators:
            if name == "perfect-csi":
                receivers[name] = PerfectCsiReceiver(self.code, seed)
            elif name == "pilot-ml":
                receivers[name] = PilotReceiver(self.code, seed)
            elif name == "pilot-mmse":
                receivers[name] = PilotReceiver(self.code, seed, covariance=self._covariance())
            elif name == "em-map":
                receivers[name] = EmMapReceiver(self.code, self.est_cfg, self.operator, seed)
            elif name == "em-wav":
                receivers[name] = EmWavReceiver(self.code, self.est_cfg, self.operator, seed)
            elif name == "em-freq":
                receivers[name] = EmFreqReceiver(self.code, self.est_cfg, None, seed)
        return receivers

    def _covariance(self) -> np.ndarray:
        draws = self.cfg.mmse_draws or self.settings.mmse_draws
        logger.info(f"🎲 Estimating channel covariance from {draws} draws")
        rng = np.random.default_rng([self.cfg.rng_seed, COVARIANCE_STREAM])
        return sample_channel_covariance(
            self.channel_cfg, self.operator, draws, rng, self.file_channel
        )

    def sigma2(self, ebn0_db: float) -> float:
        return noise_variance(
            ebn0_db,
            rate=self.code.rate,
            bits_per_symbol=self.frame_cfg.bits_per_symbol,
            channel_gain=1.0 / self.frame_cfg.M,
        )

    def simulate_frame(self, task: Tuple[int, int]) -> List[Dict[str, Any]]:
        """Run every estimator on frame `frame_idx` of grid point `point_idx`."""
        point_idx, frame_idx = task
        ebn0_db = self.cfg.ebn0_grid_db[point_idx]
        rng = np.random.default_rng([self.cfg.rng_seed, point_idx, frame_idx])

        truth = draw_channel(self.channel_cfg, self.operator, rng, self.file_channel)
        payload = rng.integers(0, 2, size=self.frame_cfg.payload_bits, dtype=np.uint8)
        template, record = build_frame(payload, self.frame_cfg, self.code)
        frame = apply_channel(template, truth.H_freq, self.sigma2(ebn0_db), rng)

        outcomes = []
        for name, receiver in self.receivers.items():
            run = receiver.run(frame, truth)
            if name == "perfect-csi":
                mse = 0.0
            elif name in WAVELET_ESTIMATORS:
                mse = compute_mse(run.g_hat, truth.g_true)
            else:
                mse = compute_mse(run.H_hat, truth.H_freq)
            outcomes.append({
                "estimator": name,
                "point": point_idx,
                "frame": frame_idx,
                "mse": mse,
                "bit_errors": count_bit_errors(run.decoded, record.payload),
                "final_active": run.final_active,
                "trajectory": run.trajectory,
            })
        return outcomes

    def run(self) -> ExperimentResult:
        cfg = self.cfg
        tasks = [
            (p, k) for p in range(len(cfg.ebn0_grid_db)) for k in range(cfg.frames_per_point)
        ]
        logger.info(
            f"🚀 {len(cfg.estimators)} estimators x {len(cfg.ebn0_grid_db)} points x "
            f"{cfg.frames_per_point} frames on {self.workers} worker(s)"
        )
        start = time.time()

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                per_frame = list(pool.map(self.simulate_frame, tasks))
        else:
            per_frame = [self.simulate_frame(task) for task in tasks]

        outcomes = [o for frame_outcomes in per_frame for o in frame_outcomes]
        metrics = self._reduce_metrics(outcomes)
        diagnostics = self._reduce_diagnostics(outcomes)

        logger.info(f"✅ Finished {len(tasks)} frames in {time.time() - start:.1f}s")
        return ExperimentResult(metrics, diagnostics, self.metadata())

    def _reduce_metrics(self, outcomes: List[Dict[str, Any]]) -> pd.DataFrame:
        cfg = self.cfg
        df = pd.DataFrame(outcomes)
        bits_per_frame = self.frame_cfg.payload_bits

        rows = []
        for p, ebn0_db in enumerate(cfg.ebn0_grid_db):
            for name in cfg.estimators:
                sub = df[(df["point"] == p) & (df["estimator"] == name)]
                n = len(sub)
                errors = int(sub["bit_errors"].sum())
                bits = n * bits_per_frame
                row = MetricRow(
                    estimator=name,
                    ebn0_db=ebn0_db,
                    mse=float(sub["mse"].mean()),
                    ber=errors / bits if bits else 0.0,
                    frames=n,
                    seed=cfg.rng_seed,
                    mse_stderr=float(sub["mse"].std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
                    bit_errors=errors,
                    bits=bits,
                    mean_active=(
                        float(pd.to_numeric(sub["final_active"]).mean()) if name == "em-map" else None
                    ),
                )
                rows.append(row.model_dump())
                logger.info(
                    f"📊 {ebn0_db:5.1f} dB {name:<12} mse={row.mse:.4e} ber={row.ber:.3e}"
                )
        return pd.DataFrame(rows, columns=METRIC_COLUMNS)

    def _reduce_diagnostics(self, outcomes: List[Dict[str, Any]]) -> pd.DataFrame:
        cfg = self.cfg
        n_iter = self.est_cfg.t_max + 1
        records = []
        for o in outcomes:
            if not o["estimator"].startswith("em-"):
                continue
            trajectory = o["trajectory"]
            # A run that stopped early keeps its last estimate for the remaining iterations
            for it in range(n_iter):
                rec = trajectory[min(it, len(trajectory) - 1)]
                records.append({
                    "estimator": o["estimator"],
                    "point": o["point"],
                    "iteration": it,
                    "mean_active": rec.active,
                    "lambda": rec.lam,
                    "tau2": rec.tau2,
                    "mse_iter": rec.mse,
                })

        if not records:
            return pd.DataFrame(columns=DIAGNOSTIC_COLUMNS)

        df = pd.DataFrame(records)
        df[["lambda", "tau2", "mse_iter"]] = df[["lambda", "tau2", "mse_iter"]].astype(float)
        order = {name: i for i, name in enumerate(cfg.estimators)}
        grouped = (
            df.groupby(["point", "estimator", "iteration"], sort=False)
            .mean()
            .reset_index()
        )
        grouped["order"] = grouped["estimator"].map(order)
        grouped = grouped.sort_values(["point", "order", "iteration"], kind="mergesort")
        grouped["ebn0_db"] = grouped["point"].map(lambda p: cfg.ebn0_grid_db[p])
        return grouped[DIAGNOSTIC_COLUMNS].reset_index(drop=True)

    def metadata(self) -> Dict[str, Any]:
        return {
            "config": self.cfg.model_dump(mode="json"),
            "sigma2_convention": SIGMA2_CONVENTION,
            "sigma2": {str(e): self.sigma2(e) for e in self.cfg.ebn0_grid_db},
            "M": self.frame_cfg.M,
            "L": self.operator.n_cols,
            "wavelet": self.cfg.basis.pywt_name,
            "versions": {
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pywt": pywt.__version__,
                "pandas": pd.__version__,
                "pydantic": pydantic.VERSION,
            },
        }


def run_experiment(
    cfg: ExperimentConfig,
    settings: Optional[RuntimeSettings] = None,
    write: bool = True
) -> ExperimentResult:
    """Run the sweep described by cfg and (optionally) write its outputs."""
    result = ExperimentRunner(cfg, settings).run()
    if write:
        result.write(Path(cfg.output_path))
    return result
