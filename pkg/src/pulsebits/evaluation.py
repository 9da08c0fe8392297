"""Evaluation mathematics: HR metrics, HRV metrics, statistical tests,
fidelity sweeps and the supervision-setting comparison harness."""
from __future__ import annotations

import csv
import itertools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import interpolate, signal as sps, stats

from .codebook import Assignment, label_fidelity_mae, utilization
from .signals import EVAL_BAND, bandpass, psd_welch, zscore
from .types import BandConfig, PulseTrace

LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.40)
TACHOGRAM_FS = 4.0
MIN_BEAT_SEPARATION_S = 60.0 / 180.0
WILCOXON_EXACT_LIMIT = 20


@dataclass
class MetricReport:
    per_video: list[dict]
    mae: float
    rmse: float
    mape: float
    rho: float
    se: dict[str, float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_video": self.per_video, "mae": self.mae, "rmse": self.rmse,
            "mape": self.mape, "rho": self.rho, "se": self.se, "meta": self.meta,
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        with open(path.with_suffix(".csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "hr_pred", "hr_true", "abs_error"])
            for row in self.per_video:
                writer.writerow([row["id"], row["hrPred"], row["hrTrue"],
                                 abs(row["hrPred"] - row["hrTrue"])])


def hr_metrics(pairs: Sequence[tuple[float, float]], ids: Sequence[str] | None = None,
               meta: dict | None = None) -> MetricReport:
    """MAE/RMSE/MAPE and Pearson correlation over (predicted, true) HR pairs."""
    pairs = [(float(p), float(t)) for p, t in pairs]
    if len(pairs) < 2:
        raise ValueError("need at least 2 pairs for HR metrics")
    pred = np.array([p for p, _ in pairs])
    true = np.array([t for _, t in pairs])
    if np.any(true <= 0):
        raise ValueError("true HR must be positive for MAPE")
    err = pred - true
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    mape = float(np.mean(np.abs(err) / true) * 100.0)
    if true.std() == 0 or pred.std() == 0:
        rho = 1.0 if mae == 0 else 0.0
    else:
        rho = float(np.corrcoef(pred, true)[0, 1])
    if ids is None:
        ids = [f"v{i:04d}" for i in range(len(pairs))]
    per_video = [{"id": i, "hrPred": p, "hrTrue": t}
                 for i, (p, t) in zip(ids, pairs)]
    report = MetricReport(per_video=per_video, mae=mae, rmse=rmse, mape=mape,
                          rho=rho, meta=meta or {})
    if len(pairs) >= 3:
        report.se = standard_errors(pairs)
    return report


def standard_errors(pairs: Sequence[tuple[float, float]]) -> dict[str, float]:
    """Standard errors of MAE (direct), RMSE (delta method) and rho (Fisher-free).

    seRmse uses std(err^2) / (2 * RMSE * sqrt(N)), the first-order propagation
    of the mean-squared-error uncertainty through the square root.
    """
    pred = np.array([p for p, _ in pairs], dtype=np.float64)
    true = np.array([t for _, t in pairs], dtype=np.float64)
    n = pred.size
    if n < 3:
        raise ValueError("need at least 3 pairs for standard errors")
    abs_err = np.abs(pred - true)
    se_mae = float(abs_err.std() / np.sqrt(n))
    rmse = float(np.sqrt(np.mean(abs_err**2)))
    se_rmse = float((abs_err**2).std() / (2.0 * rmse * np.sqrt(n))) if rmse > 0 else 0.0
    if pred.std() == 0 or true.std() == 0:
        rho = 0.0
    else:
        rho = float(np.corrcoef(pred, true)[0, 1])
    se_rho = float(np.sqrt(max(0.0, 1.0 - rho**2) / (n - 2)))
    return {"seMae": se_mae, "seRmse": se_rmse, "seRho": se_rho}


def wilcoxon_signed_rank(deltas: Sequence[float]) -> dict:
    """Paired two-sided Wilcoxon signed-rank test.

    Zero deltas are dropped from ranking but reported as ties; tied
    magnitudes receive mean ranks. The p-value is exact (full sign-pattern
    enumeration) for up to 20 non-zero deltas, and a tie-corrected normal
    approximation above that.
    """
    deltas = np.asarray(list(deltas), dtype=np.float64)
    if deltas.size == 0:
        raise ValueError("empty delta sequence")
    win = int(np.sum(deltas > 0))
    tie = int(np.sum(deltas == 0))
    loss = int(np.sum(deltas < 0))
    nonzero = deltas[deltas != 0]
    m = nonzero.size
    if m == 0:
        raise ValueError("all deltas are zero; p-value undefined")
    ranks = stats.rankdata(np.abs(nonzero))
    w_plus = float(ranks[nonzero > 0].sum())

    if m <= WILCOXON_EXACT_LIMIT:
        # all 2^m sign patterns share the same tie-adjusted rank vector
        totals = np.zeros(1)
        for r in ranks:
            totals = np.concatenate([totals, totals + r])
        p_low = np.mean(totals <= w_plus + 1e-12)
        p_high = np.mean(totals >= w_plus - 1e-12)
        p = min(1.0, 2.0 * min(p_low, p_high))
        method = "exact"
    else:
        mean_w = m * (m + 1) / 4.0
        var_w = m * (m + 1) * (2 * m + 1) / 24.0
        _, counts = np.unique(ranks, return_counts=True)
        var_w -= np.sum(counts**3 - counts) / 48.0
        z = (w_plus - mean_w) / np.sqrt(var_w)
        p = float(min(1.0, 2.0 * stats.norm.sf(abs(z))))
        method = "normal"

    return {
        "N": int(deltas.size), "win": win, "tie": tie, "loss": loss,
        "medianDelta": float(np.median(deltas)), "W": w_plus, "p": float(p),
        "method": method,
    }


def _refine_peak_times(x: np.ndarray, peaks: np.ndarray, fs: float) -> np.ndarray:
    """Parabolic sub-sample refinement of peak positions."""
    times = peaks.astype(np.float64)
    for i, p in enumerate(peaks):
        if 0 < p < x.size - 1:
            denom = x[p - 1] - 2 * x[p] + x[p + 1]
            if denom < 0:
                times[i] = p + 0.5 * (x[p - 1] - x[p + 1]) / denom
    return times / fs


def hrv_metrics(trace: PulseTrace) -> dict[str, float]:
    """Normalized LF/HF powers and their ratio from the beat-interval tachogram.

    Beats are local maxima with a minimum separation of 60/180 s and a
    prominence of at least 0.3 signal std; intervals are cubically
    interpolated to a uniform 4 Hz grid before the Welch estimate.
    """
    if trace.duration < 60.0:
        raise ValueError(f"need >= 60 s of signal, got {trace.duration:.1f} s")
    x = trace.samples
    min_dist = max(1, int(round(MIN_BEAT_SEPARATION_S * trace.fs)))
    peaks, _ = sps.find_peaks(x, distance=min_dist, prominence=0.3 * x.std())
    if peaks.size < 10:
        raise ValueError(f"only {peaks.size} beats detected; need at least 10")

    beat_times = _refine_peak_times(x, peaks, trace.fs)
    ibis = np.diff(beat_times)
    ibi_times = beat_times[1:]

    grid = np.arange(ibi_times[0], ibi_times[-1], 1.0 / TACHOGRAM_FS)
    tachogram = interpolate.interp1d(ibi_times, ibis, kind="cubic")(grid)
    tachogram = tachogram - tachogram.mean()
    if tachogram.std() < 1e-3:  # sub-millisecond beat variability: metronomic
        warnings.warn("no beat-interval variability; HRV powers defined as zero",
                      RuntimeWarning)
        return {"lfNu": 0.0, "hfNu": 0.0, "lfHf": 0.0}

    nperseg = min(tachogram.size, 256)
    freqs, power = sps.welch(tachogram, fs=TACHOGRAM_FS, window="hann",
                             nperseg=nperseg, noverlap=nperseg // 2)
    lf_mask = (freqs >= LF_BAND[0]) & (freqs <= LF_BAND[1])
    hf_mask = (freqs > HF_BAND[0]) & (freqs <= HF_BAND[1])
    lf = float(np.trapezoid(power[lf_mask], freqs[lf_mask]))
    hf = float(np.trapezoid(power[hf_mask], freqs[hf_mask]))
    if lf + hf <= 0 or not np.isfinite(lf + hf):
        warnings.warn("no beat-interval variability; HRV powers defined as zero",
                      RuntimeWarning)
        return {"lfNu": 0.0, "hfNu": 0.0, "lfHf": 0.0}
    lf_nu = lf / (lf + hf)
    hf_nu = hf / (lf + hf)
    lf_hf = lf / hf if hf > 0 else float("inf")
    return {"lfNu": lf_nu, "hfNu": hf_nu, "lfHf": lf_hf}


def hrv_report(pairs: Sequence[tuple[PulseTrace, PulseTrace]]) -> dict:
    """Aggregate HRV agreement (STD/RMSE/rho of per-video errors) per metric."""
    rows = []
    for est, ref in pairs:
        rows.append((hrv_metrics(est), hrv_metrics(ref)))
    out: dict[str, dict] = {"perVideo": [
        {"est": e, "ref": r} for e, r in rows
    ]}
    for key in ("lfNu", "hfNu", "lfHf"):
        est = np.array([e[key] for e, _ in rows])
        ref = np.array([r[key] for _, r in rows])
        err = est - ref
        agg = {"std": float(err.std()), "rmse": float(np.sqrt(np.mean(err**2)))}
        if est.size >= 2 and est.std() > 0 and ref.std() > 0:
            agg["rho"] = float(np.corrcoef(est, ref)[0, 1])
        else:
            agg["rho"] = float("nan")
        out[key] = agg
    return out


def fidelity_sweep(quantizer, X: np.ndarray, bits: Sequence[int] = (1, 2, 3, 4, 5, 6),
                   band: BandConfig = EVAL_BAND) -> list[dict]:
    """Per-bit pseudo-label HR fidelity plus codebook utilization."""
    rows = []
    for n in bits:
        if n not in quantizer.encoders_:
            raise KeyError(f"quantizer has no bit level {n}")
        mae = quantizer.fidelity_mae(X, n, band)
        _, idx = quantizer.quantize(X, n)
        util = utilization([Assignment(indices=idx, quantized=np.zeros_like(idx, dtype=float))],
                           quantizer.codebooks_[n])
        rows.append({"bits": n, "mae": mae, "utilization": util.tolist(),
                     "activeCodes": int(np.sum(util > 0))})
    return rows


def supervision_comparison(train_fn, variants: Sequence[str],
                           seeds: Sequence[int] = (100, 200, 300)) -> list[dict]:
    """Mean +/- std of test MAE per supervision variant across seeds.

    ``train_fn(variant, seed)`` must run one training and return the test MAE.
    """
    rows = []
    for variant in variants:
        maes = [float(train_fn(variant, seed)) for seed in seeds]
        rows.append({"variant": variant, "mae_mean": float(np.mean(maes)),
                     "mae_std": float(np.std(maes)), "maes": maes,
                     "seeds": list(seeds)})
    return rows


def format_table(rows: list[dict], columns: list[str], floatfmt: str = "{:.4f}") -> str:
    """Aligned text table for console reports."""
    def fmt(v):
        if isinstance(v, float):
            return floatfmt.format(v)
        return str(v)

    rendered = [[fmt(row.get(c, "")) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in rendered)) if rendered else len(c)
              for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rendered:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)


def save_table(rows: list[dict], columns: list[str], path: str | Path) -> None:
    """Write rows as both JSON and CSV next to each other."""
    path = Path(path)
    path.with_suffix(".json").write_text(json.dumps(rows, indent=2))
    with open(path.with_suffix(".csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# -- plotting (matplotlib, Agg backend) ------------------------------------

def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_loss_curves(histories: dict[str, list[dict]], path: str | Path,
                     key: str = "lossTotal") -> Path:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, hist in histories.items():
        ax.plot([h["epoch"] for h in hist], [h[key] for h in hist], label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel(key)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_fidelity_curve(rows: list[dict], path: str | Path) -> Path:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["bits"] for r in rows], [r["mae"] for r in rows], marker="o")
    ax.set_xlabel("bit depth")
    ax.set_ylabel("label fidelity MAE (bpm)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_utilization(rows: list[dict], path: str | Path) -> Path:
    plt = _plt()
    fig, axes = plt.subplots(1, len(rows), figsize=(2.2 * len(rows), 2.8))
    if len(rows) == 1:
        axes = [axes]
    for ax, row in zip(axes, rows):
        util = row["utilization"]
        ax.bar(range(len(util)), util)
        ax.set_title(f"{row['bits']}-bit")
        ax.set_xticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_hr_scatter(report: MetricReport, path: str | Path) -> Path:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4.2, 4))
    true = [r["hrTrue"] for r in report.per_video]
    pred = [r["hrPred"] for r in report.per_video]
    ax.scatter(true, pred, s=14, alpha=0.7)
    lims = [min(true + pred) - 2, max(true + pred) + 2]
    ax.plot(lims, lims, "k--", lw=0.8)
    ax.set_xlabel("true HR (bpm)")
    ax.set_ylabel("predicted HR (bpm)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
