"""Stage 2: coarse-to-fine video-to-pulse estimation under multi-bit supervision.

A frame stem collapses each clip to a per-frame feature sequence; N-1
refinement steps (sequence mixer + classification head + soft codebook
reconstruction + projection, cumulatively accumulated) progressively
sharpen it, and a convolutional estimator head emits the final pulse.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator

from .blocks import (BiMamba, PositionalEncoding, load_params, param_count,
                     save_params, soft_reconstruct)
from .losses import distance_ce, neg_pearson, spectral_ce
from .signals import EVAL_BAND, bandpass, zscore
from .stage1 import LabelQuantizer, PseudoLabelBank
from .types import BandConfig, ESTIMATE, PulseTrace, RAW
from .validation import (DataError, NumericalError, check_clip_batch,
                         check_trace_matrix, derive_seed)

SUPERVISION_VARIANTS = (
    "raw", "bpf", "quant", "quantCls", "bpfQuant", "bpfQuantCls",
    "huber", "movingAvg", "gaussianNll",
)


class _StemBranch(nn.Module):
    def __init__(self, mid: int = 32, out: int = 64):
        super().__init__()
        self.conv1 = nn.Conv2d(3, mid, 5, stride=2, padding=2)
        self.norm1 = nn.BatchNorm2d(mid)
        self.conv2 = nn.Conv2d(mid, out, 3, stride=2, padding=1)
        self.norm2 = nn.BatchNorm2d(out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.gelu(self.norm1(self.conv1(x)))
        return F.gelu(self.norm2(self.conv2(x)))


class FrameStem(nn.Module):
    """Collapse (B, 3, T, H, W) clips to (B, T, C') feature sequences.

    Two branches (raw frames and adjacent-frame differences) are summed,
    passed through one more strided convolution and spatially averaged.
    """

    def __init__(self, channels: int = 64, mid: int = 32):
        super().__init__()
        self.channels = channels
        self.raw_branch = _StemBranch(mid, channels)
        self.diff_branch = _StemBranch(mid, channels)
        self.fuse = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        if clip.dim() != 5 or clip.shape[1] != 3:
            raise ValueError(f"expected (B, 3, T, H, W), got {tuple(clip.shape)}")
        b, c, t, h, w = clip.shape
        x = clip / 255.0
        # adjacent-frame differences; the last frame repeats, so its diff is zero
        diff = torch.cat([x[:, :, 1:] - x[:, :, :-1],
                          torch.zeros_like(x[:, :, :1])], dim=2)
        frames = x.permute(0, 2, 1, 3, 4).reshape(b * t, c, h, w)
        dframes = diff.permute(0, 2, 1, 3, 4).reshape(b * t, c, h, w)
        fused = self.fuse(self.raw_branch(frames) + self.diff_branch(dframes))
        return fused.mean(dim=(2, 3)).reshape(b, t, self.channels)


class _RefineStep(nn.Module):
    def __init__(self, channels: int, state: int, kernel: int, expand: int):
        super().__init__()
        self.mamba = BiMamba(channels, state=state, kernel=kernel, expand=expand)
        self.cls = nn.Linear(channels, 1)
        self.proj = nn.Linear(1, channels)


class C2fNet(nn.Module):
    """Frame stem + N-1 refinement steps + convolutional pulse estimator."""

    def __init__(self, max_bits: int = 5, channels: int = 64, clip_len: int = 160,
                 state: int = 16, kernel: int = 5, expand: int = 2,
                 stem_mid: int = 32, softmax_temperature: float = 1.0,
                 with_uncertainty_head: bool = False):
        super().__init__()
        if max_bits < 2:
            raise ValueError("max_bits must be >= 2 (need at least one refinement step)")
        self.max_bits = max_bits
        self.channels = channels
        self.temperature = softmax_temperature
        self.stem = FrameStem(channels, stem_mid)
        self.pe = PositionalEncoding(clip_len, channels)
        self.steps = nn.ModuleList(
            _RefineStep(channels, state, kernel, expand) for _ in range(max_bits - 1)
        )
        self.estimator = nn.Sequential(
            nn.Conv1d(channels, channels, 3, padding=1), nn.GELU(),
            nn.Conv1d(channels, channels, 3, padding=1), nn.GELU(),
            nn.Conv1d(channels, channels, 3, padding=1),
            nn.Conv1d(channels, 1, 3, padding=1),
        )
        self.log_std_head = nn.Linear(channels, 1) if with_uncertainty_head else None

    def refine(self, feats: torch.Tensor, codes: dict[int, torch.Tensor],
               mask: frozenset[int]) -> tuple[torch.Tensor, dict[int, dict]]:
        """Run the N-1 refinement steps on stem features (+ positional encoding).

        Steps outside ``mask`` keep their sequence mixer but skip the
        classification/reconstruction/projection branch entirely.
        """
        t = feats.shape[1]
        f = feats + self.pe(t)
        acc = None
        per_bit: dict[int, dict] = {}
        for i, step in enumerate(self.steps):
            n = i + 1
            f_prime = step.mamba(f)
            if n in mask:
                if n not in codes:
                    raise KeyError(f"missing codebook for bit depth {n}")
                logits = step.cls(f_prime).squeeze(-1)
                recon = soft_reconstruct(logits, codes[n], self.temperature)
                per_bit[n] = {"logits": logits, "recon": recon}
                contrib = step.proj(recon.unsqueeze(-1))
                acc = contrib if acc is None else acc + contrib
            f = f_prime if acc is None else f_prime + acc
        return f, per_bit

    def estimate(self, feats: torch.Tensor, code_n: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        logits = self.estimator(feats.transpose(1, 2)).squeeze(1)
        return logits, soft_reconstruct(logits, code_n, self.temperature)

    def forward(self, clip: torch.Tensor, codes: dict[int, torch.Tensor],
                mask: frozenset[int] | None = None) -> dict:
        mask = frozenset(range(1, self.max_bits + 1)) if mask is None else frozenset(mask)
        feats = self.stem(clip)
        refined, per_bit = self.refine(feats, codes, mask)
        final_logits, estimate = self.estimate(refined, codes[self.max_bits])
        out = {"per_bit": per_bit, "final_logits": final_logits,
               "estimate": estimate, "features": refined}
        if self.log_std_head is not None:
            out["log_std"] = self.log_std_head(refined).squeeze(-1)
        return out


def check_mask(mask, max_bits: int) -> frozenset[int]:
    mask = frozenset(range(1, max_bits + 1)) if mask is None else frozenset(int(m) for m in mask)
    if not mask:
        raise ValueError("supervision mask must be non-empty")
    if not mask <= set(range(1, max_bits + 1)):
        raise ValueError(f"mask {sorted(mask)} outside bit range 1..{max_bits}")
    if max_bits not in mask:
        raise ValueError(f"the final bit level {max_bits} must always be supervised")
    return mask


def c2f_cls_loss(outputs: dict, indices: dict[int, torch.Tensor],
                 codes: dict[int, torch.Tensor], mask: frozenset[int],
                 max_bits: int, lambda_ce: float = 1.0) -> torch.Tensor:
    """Distance-based cross-entropy summed over supervised levels, scaled by
    lambda_ce / N (N = the model's max bit depth, not the mask size)."""
    terms = []
    for n in sorted(mask):
        logits = outputs["final_logits"] if n == max_bits else outputs["per_bit"][n]["logits"]
        if n not in indices:
            raise KeyError(f"missing pseudo-label index array for bit {n}")
        terms.append(distance_ce(logits, codes[n], indices[n]))
    return (lambda_ce / max_bits) * sum(terms)


def c2f_rec_loss(outputs: dict, labels: dict[int, torch.Tensor], fs: float,
                 mask: frozenset[int], max_bits: int,
                 band: BandConfig = EVAL_BAND, lambda_time: float = 0.2,
                 lambda_freq: float = 1.0) -> torch.Tensor:
    """Temporal + spectral consistency over supervised bit levels."""
    total = None
    for n in sorted(mask):
        recon = outputs["estimate"] if n == max_bits else outputs["per_bit"][n]["recon"]
        term = (lambda_time * neg_pearson(recon, labels[n])
                + lambda_freq * spectral_ce(recon, labels[n], fs, band))
        total = term if total is None else total + term
    return total


def moving_average(x: np.ndarray, window: int = 5) -> np.ndarray:
    """Centered moving average; edge windows shrink to the available samples."""
    x = np.asarray(x, dtype=np.float64)
    half = window // 2
    out = np.empty_like(x)
    for i in range(x.size):
        lo, hi = max(0, i - half), min(x.size, i + half + 1)
        out[i] = x[lo:hi].mean()
    return out


def alt_supervision_loss(variant: str, pred: torch.Tensor, label: torch.Tensor,
                         fs: float, band: BandConfig = EVAL_BAND,
                         lambda_time: float = 0.2, lambda_freq: float = 1.0,
                         lambda_ce: float = 1.0, max_bits: int = 5,
                         codes: torch.Tensor | None = None,
                         target_indices: torch.Tensor | None = None,
                         log_std: torch.Tensor | None = None) -> torch.Tensor:
    """Final-output-only objectives for the supervision-setting comparison.

    ``label`` must already carry the variant's preprocessing (band-pass,
    moving average, quantization); this function only assembles the loss.
    """
    if variant not in SUPERVISION_VARIANTS:
        raise ValueError(f"unknown supervision variant {variant!r}")
    base = (lambda_time * neg_pearson(pred, label)
            + lambda_freq * spectral_ce(pred, label, fs, band))
    if variant in ("raw", "bpf", "quant", "bpfQuant", "movingAvg"):
        return base
    if variant in ("quantCls", "bpfQuantCls"):
        if codes is None or target_indices is None:
            raise ValueError(f"{variant} requires codebook codes and target indices")
        return base + (lambda_ce / max_bits) * distance_ce(pred, codes, target_indices)
    if variant == "huber":
        return base + F.smooth_l1_loss(pred, label.to(pred.dtype))
    if variant == "gaussianNll":
        if log_std is None:
            raise ValueError("gaussianNll requires the per-timestep log-std head output")
        resid = (pred - label.to(pred.dtype)) ** 2
        nll = 0.5 * (resid * torch.exp(-2.0 * log_std) + 2.0 * log_std)
        return base + nll.mean()
    raise AssertionError("unreachable")


class CoarseToFineEstimator(BaseEstimator):
    """Video-to-pulse estimator trained under multi-bit hierarchical supervision.

    ``fit(X, y, bank=...)`` expects clips ``X`` of shape (n, 3, T, H, W) and
    ``y`` a sequence of trace ids pairing each clip with a record of the
    frozen pseudo-label bank. ``predict`` returns (n, T) pulse estimates.
    """

    def __init__(self, max_bits: int = 5, channels: int = 64, clip_len: int = 160,
                 epochs: int = 50, batch_size: int = 16, lr: float = 3e-4,
                 weight_decay: float = 1e-5, lambda_ce: float = 1.0,
                 lambda_time: float = 0.2, lambda_freq: float = 1.0,
                 band: tuple[float, float] = (0.75, 2.5),
                 supervision_mask: tuple[int, ...] | None = None,
                 stem_mid: int = 32, softmax_temperature: float = 1.0,
                 fs: float = 30.0, seed: int = 0, num_threads: int | None = None):
        self.max_bits = max_bits
        self.channels = channels
        self.clip_len = clip_len
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.lambda_ce = lambda_ce
        self.lambda_time = lambda_time
        self.lambda_freq = lambda_freq
        self.band = band
        self.supervision_mask = supervision_mask
        self.stem_mid = stem_mid
        self.softmax_temperature = softmax_temperature
        self.fs = fs
        self.seed = seed
        self.num_threads = num_threads

    def _band(self) -> BandConfig:
        return BandConfig(*self.band)

    def _build_net(self) -> C2fNet:
        return C2fNet(max_bits=self.max_bits, channels=self.channels,
                      clip_len=self.clip_len, stem_mid=self.stem_mid,
                      softmax_temperature=self.softmax_temperature)

    def _codes_tensors(self, codebooks) -> dict[int, torch.Tensor]:
        return {n: torch.from_numpy(cb.codes.astype(np.float32))
                for n, cb in codebooks.items()}

    def fit(self, X, y: Sequence[str], bank: PseudoLabelBank,
            checkpoint_dir: str | Path | None = None, resume: bool = False):
        X = check_clip_batch(X)
        ids = list(y)
        if len(ids) != X.shape[0]:
            raise DataError(f"{X.shape[0]} clips but {len(ids)} trace ids")
        missing = [tid for tid in ids if tid not in bank.records]
        if missing:
            raise DataError(f"bank/dataset pairing mismatch: missing ids {missing[:4]}")
        if bank.split != "train":
            raise DataError(
                f"refusing to train against a {bank.split!r} bank (leakage guard)")
        if bank.max_bits < self.max_bits:
            raise DataError(
                f"bank holds {bank.max_bits} bit levels but the model needs {self.max_bits}")
        if X.shape[2] != self.clip_len:
            raise DataError(f"clips of length {X.shape[2]} != configured {self.clip_len}")
        if self.num_threads is not None:
            torch.set_num_threads(self.num_threads)
        mask = check_mask(self.supervision_mask, self.max_bits)

        labels = {
            n: torch.from_numpy(np.stack([bank.records[t].labels[n] for t in ids])).float()
            for n in range(1, self.max_bits + 1)
        }
        indices = {
            n: torch.from_numpy(np.stack([bank.records[t].indices[n] for t in ids])).long()
            for n in range(1, self.max_bits + 1)
        }
        codes = self._codes_tensors({n: bank.codebooks[n]
                                     for n in range(1, self.max_bits + 1)})

        state = self._load_checkpoint(checkpoint_dir) if resume else None
        if state is None:
            torch.manual_seed(derive_seed(self.seed, "stage2"))
            net = self._build_net()
            start_epoch = 0
            self.loss_log_ = []
        else:
            net = state["net"]
            start_epoch = state["epoch"]
            self.loss_log_ = state["loss_log"]

        n_clips = X.shape[0]
        batches = max(1, int(np.ceil(n_clips / self.batch_size)))
        optim = torch.optim.AdamW(net.parameters(), lr=self.lr,
                                  weight_decay=self.weight_decay)
        sched = torch.optim.lr_scheduler.OneCycleLR(
            optim, max_lr=self.lr, total_steps=self.epochs * batches,
            pct_start=0.25, anneal_strategy="cos", cycle_momentum=False)
        if state is not None:
            optim.load_state_dict(state["optim"])
            sched.load_state_dict(state["sched"])
            torch.set_rng_state(state["torch_rng"])

        clips_t = torch.from_numpy(X)
        band = self._band()
        for epoch in range(start_epoch, self.epochs):
            net.train()
            perm = torch.randperm(n_clips).numpy()
            sums = {"total": 0.0, "cls": 0.0, "rec": 0.0}
            for b in range(batches):
                sel = perm[b * self.batch_size : (b + 1) * self.batch_size]
                out = net(clips_t[sel], codes, mask)
                l_cls = c2f_cls_loss(out, {n: v[sel] for n, v in indices.items()},
                                     codes, mask, self.max_bits, self.lambda_ce)
                l_rec = c2f_rec_loss(out, {n: v[sel] for n, v in labels.items()},
                                     self.fs, mask, self.max_bits, band,
                                     self.lambda_time, self.lambda_freq)
                loss = l_cls + l_rec
                if not torch.isfinite(loss):
                    if checkpoint_dir is not None:
                        self._save_checkpoint(checkpoint_dir, epoch, net, optim, sched)
                    raise NumericalError(f"loss diverged at epoch {epoch}")
                optim.zero_grad()
                loss.backward()
                optim.step()
                sched.step()
                sums["total"] += float(loss.detach())
                sums["cls"] += float(l_cls.detach())
                sums["rec"] += float(l_rec.detach())
            self.loss_log_.append({
                "epoch": epoch,
                "lossTotal": sums["total"] / batches,
                "lossCls": sums["cls"] / batches,
                "lossRec": sums["rec"] / batches,
                "lr": sched.get_last_lr()[0],
            })
            if checkpoint_dir is not None:
                self._save_checkpoint(checkpoint_dir, epoch + 1, net, optim, sched)

        self.net_ = net.eval()
        self.codes_ = codes
        self.mask_ = mask
        self.final_loss_ = self.loss_log_[-1]["lossTotal"] if self.loss_log_ else None
        return self

    def _save_checkpoint(self, directory, epoch, net, optim, sched):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save({
            "epoch": epoch,
            "net": net.state_dict(),
            "optim": optim.state_dict(),
            "sched": sched.state_dict(),
            "torch_rng": torch.get_rng_state(),
            "loss_log": self.loss_log_,
            "params": self.get_params(),
        }, directory / "resume.pt")

    def _load_checkpoint(self, directory):
        if directory is None:
            return None
        path = Path(directory) / "resume.pt"
        if not path.exists():
            return None
        bundle = torch.load(path, weights_only=False)
        net = self._build_net()
        net.load_state_dict(bundle["net"])
        return {"net": net, "epoch": bundle["epoch"], "optim": bundle["optim"],
                "sched": bundle["sched"], "torch_rng": bundle["torch_rng"],
                "loss_log": bundle["loss_log"]}

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise RuntimeError("CoarseToFineEstimator is not fitted")

    def predict(self, X, batch_size: int | None = None) -> np.ndarray:
        """Pulse estimates, shape (n_clips, T)."""
        self._check_fitted()
        X = check_clip_batch(X)
        bs = batch_size or self.batch_size
        variant = getattr(self, "_variant", None)
        regression_head = variant is not None and variant not in ("quantCls", "bpfQuantCls")
        outs = []
        self.net_.eval()
        with torch.no_grad():
            for i in range(0, X.shape[0], bs):
                batch = torch.from_numpy(X[i:i + bs])
                if variant is None:
                    out = self.net_(batch, self.codes_, self.mask_)
                    outs.append(out["estimate"].double().numpy())
                else:
                    feats = self.net_.stem(batch)
                    refined, _ = self.net_.refine(feats, {}, frozenset())
                    logits = self.net_.estimator(refined.transpose(1, 2)).squeeze(1)
                    if regression_head:
                        outs.append(logits.double().numpy())
                    else:
                        rec = soft_reconstruct(logits, self.codes_[self.max_bits],
                                               self.net_.temperature)
                        outs.append(rec.double().numpy())
        return np.concatenate(outs, axis=0)

    def predict_traces(self, X) -> list[PulseTrace]:
        return [PulseTrace(row, self.fs, ESTIMATE) for row in self.predict(X)]

    def save(self, directory: str | Path) -> Path:
        self._check_fitted()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_params(self.net_, directory / "c2f",
                    manifest={"stage": 2, "seed": self.seed,
                              "config": _jsonable(self.get_params()),
                              "bitDepths": sorted(self.mask_),
                              "param_count": param_count(self.net_)})
        np.savez(directory / "codes.npz",
                 **{str(n): c.numpy() for n, c in self.codes_.items()})
        (directory / "model.json").write_text(json.dumps({
            "params": _jsonable(self.get_params()),
            "mask": sorted(self.mask_),
        }, indent=2))
        return directory

    @classmethod
    def from_directory(cls, directory: str | Path) -> "CoarseToFineEstimator":
        directory = Path(directory)
        meta = json.loads((directory / "model.json").read_text())
        params = meta["params"]
        if params.get("supervision_mask") is not None:
            params["supervision_mask"] = tuple(params["supervision_mask"])
        est = cls(**params)
        net = est._build_net()
        load_params(net, directory / "c2f")
        est.net_ = net.eval()
        with np.load(directory / "codes.npz") as data:
            est.codes_ = {int(k): torch.from_numpy(np.asarray(data[k])) for k in data.files}
        est.mask_ = frozenset(meta["mask"])
        est.loss_log_ = []
        est.final_loss_ = None
        return est


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def train_end_to_end(X, labels, ids: Sequence[str], lq: LabelQuantizer,
                     c2f: CoarseToFineEstimator,
                     epochs: int = 50,
                     checkpoint_dir: str | Path | None = None,
                     ) -> tuple[LabelQuantizer, CoarseToFineEstimator, list[dict]]:
    """Joint training: pseudo labels are generated on the fly while both the
    quantization encoders (plus EMA codebooks) and the estimator update each
    step under the combined objective.

    Optimizer hyperparameters follow each stage's own settings (two parameter
    groups). Returns the fitted modules and the per-epoch loss history.
    """
    from .codebook import Codebook, assign_codes, ema_update
    from .stage1 import LqEncoder, lq_loss

    X = check_clip_batch(X)
    labels = check_trace_matrix(labels, min_len=64)
    if X.shape[0] != labels.shape[0] or X.shape[0] != len(ids):
        raise DataError("clips, labels and ids must align")
    if c2f.num_threads is not None:
        torch.set_num_threads(c2f.num_threads)

    max_bits = c2f.max_bits
    band = c2f._band()
    fs = c2f.fs
    y_filt_np = lq.prepare(labels)
    y_filt = torch.from_numpy(y_filt_np).float()

    torch.manual_seed(derive_seed(c2f.seed, "end_to_end"))
    encoders = {n: LqEncoder() for n in range(1, max_bits + 1)}
    codebooks: dict[int, Codebook] = {}
    first = y_filt[: lq.batch_size]
    for n in range(1, max_bits + 1):
        with torch.no_grad():
            z0 = encoders[n](first).double().numpy()
        codebooks[n] = Codebook.from_quantiles(z0, n, decay=lq.decay, eps=lq.eps)
    net = c2f._build_net()

    lq_params = [p for enc in encoders.values() for p in enc.parameters()]
    optim = torch.optim.AdamW([
        {"params": lq_params, "lr": lq.lr, "weight_decay": lq.weight_decay},
        {"params": net.parameters(), "lr": c2f.lr, "weight_decay": c2f.weight_decay},
    ])
    n_clips = X.shape[0]
    batches = max(1, int(np.ceil(n_clips / c2f.batch_size)))
    sched = torch.optim.lr_scheduler.OneCycleLR(
        optim, max_lr=[lq.lr, c2f.lr], total_steps=epochs * batches,
        pct_start=0.25, anneal_strategy="cos", cycle_momentum=False)

    clips_t = torch.from_numpy(X)
    mask = check_mask(c2f.supervision_mask, max_bits)
    history: list[dict] = []
    for epoch in range(epochs):
        net.train()
        perm = torch.randperm(n_clips).numpy()
        sums = {"lq": 0.0, "c2f": 0.0, "total": 0.0}
        for b in range(batches):
            sel = perm[b * c2f.batch_size : (b + 1) * c2f.batch_size]
            batch_filt = y_filt[sel]

            loss_lq = None
            bit_labels, bit_indices = {}, {}
            for n in range(1, max_bits + 1):
                z = encoders[n](batch_filt)
                assign = assign_codes(z.detach().double().numpy(), codebooks[n])
                term, _ = lq_loss(batch_filt, z, assign, fs, band,
                                  lq.lambda_time, lq.lambda_freq, lq.lambda_feat)
                loss_lq = term if loss_lq is None else loss_lq + term
                ema_update(codebooks[n], z.detach().double().numpy(), assign)
                bit_labels[n] = torch.from_numpy(assign.quantized).float()
                bit_indices[n] = torch.from_numpy(assign.indices).long()

            codes = {n: torch.from_numpy(cb.codes.astype(np.float32))
                     for n, cb in codebooks.items()}
            out = net(clips_t[sel], codes, mask)
            l_cls = c2f_cls_loss(out, bit_indices, codes, mask, max_bits, c2f.lambda_ce)
            l_rec = c2f_rec_loss(out, bit_labels, fs, mask, max_bits, band,
                                 c2f.lambda_time, c2f.lambda_freq)
            loss = loss_lq + l_cls + l_rec
            if not torch.isfinite(loss):
                if checkpoint_dir is not None:
                    path = Path(checkpoint_dir)
                    path.mkdir(parents=True, exist_ok=True)
                    torch.save({"net": net.state_dict(),
                                "encoders": {n: e.state_dict() for n, e in encoders.items()},
                                "epoch": epoch}, path / "diverged.pt")
                raise NumericalError(f"joint loss diverged at epoch {epoch}")
            optim.zero_grad()
            loss.backward()
            optim.step()
            sched.step()
            sums["lq"] += float(loss_lq.detach())
            sums["c2f"] += float((l_cls + l_rec).detach())
            sums["total"] += float(loss.detach())
        history.append({"epoch": epoch,
                        **{k: v / batches for k, v in sums.items()},
                        "lr": sched.get_last_lr()[1]})

    lq.encoders_ = {n: enc.eval() for n, enc in encoders.items()}
    lq.codebooks_ = codebooks
    lq.loss_log_ = [h | {"bit": None} for h in history]
    lq.fs_ = fs
    lq.n_features_in_ = labels.shape[1]

    c2f.net_ = net.eval()
    c2f.codes_ = {n: torch.from_numpy(cb.codes.astype(np.float32))
                  for n, cb in codebooks.items()}
    c2f.mask_ = mask
    c2f.loss_log_ = [{"epoch": h["epoch"], "lossTotal": h["total"],
                      "lossCls": 0.0, "lossRec": h["c2f"], "lr": h["lr"]}
                     for h in history]
    c2f.final_loss_ = history[-1]["total"] if history else None
    return lq, c2f, history


def prepare_variant_target(variant: str, label: np.ndarray, fs: float,
                           band: BandConfig = EVAL_BAND) -> np.ndarray:
    """Label preprocessing for the final-output supervision settings."""
    if variant not in SUPERVISION_VARIANTS:
        raise ValueError(f"unknown supervision variant {variant!r}")
    trace = PulseTrace(label, fs, RAW)
    if variant in ("bpf", "bpfQuant", "bpfQuantCls"):
        trace = bandpass(trace, band)
    if variant == "movingAvg":
        trace = PulseTrace(moving_average(trace.samples, 5), fs, RAW)
    return zscore(trace).samples


def train_supervision_variant(X, labels, variant: str,
                              c2f: CoarseToFineEstimator,
                              quantizer: LabelQuantizer | None = None,
                              epochs: int | None = None) -> CoarseToFineEstimator:
    """Train the backbone under one final-output supervision setting.

    Quantized variants need a fitted 5-bit quantizer (band-pass-free for the
    plain "quant"/"quantCls" settings). The classification variants reduce to
    the full model with supervision mask {N}; the rest regress the estimator
    logits directly against the prepared target.
    """
    if variant not in SUPERVISION_VARIANTS:
        raise ValueError(f"unknown supervision variant {variant!r}")
    X = check_clip_batch(X)
    labels = check_trace_matrix(labels, min_len=64)
    epochs = c2f.epochs if epochs is None else epochs
    if c2f.num_threads is not None:
        torch.set_num_threads(c2f.num_threads)
    fs, band = c2f.fs, c2f._band()

    needs_quant = variant in ("quant", "quantCls", "bpfQuant", "bpfQuantCls")
    codes_t = None
    if needs_quant:
        if quantizer is None:
            raise ValueError(f"{variant} requires a fitted LabelQuantizer")
        pseudo, idx = quantizer.quantize(labels, quantizer.max_bits)
        target = torch.from_numpy(pseudo).float()
        target_idx = torch.from_numpy(idx).long()
        codes_t = torch.from_numpy(
            quantizer.codebooks_[quantizer.max_bits].codes.astype(np.float32))
    else:
        target = torch.from_numpy(np.stack([
            prepare_variant_target(variant, row, fs, band) for row in labels
        ])).float()
        target_idx = None

    torch.manual_seed(derive_seed(c2f.seed, f"variant/{variant}"))
    net = C2fNet(max_bits=c2f.max_bits, channels=c2f.channels, clip_len=c2f.clip_len,
                 stem_mid=c2f.stem_mid, softmax_temperature=c2f.softmax_temperature,
                 with_uncertainty_head=(variant == "gaussianNll"))
    n_clips = X.shape[0]
    batches = max(1, int(np.ceil(n_clips / c2f.batch_size)))
    optim = torch.optim.AdamW(net.parameters(), lr=c2f.lr, weight_decay=c2f.weight_decay)
    sched = torch.optim.lr_scheduler.OneCycleLR(
        optim, max_lr=c2f.lr, total_steps=epochs * batches,
        pct_start=0.25, anneal_strategy="cos", cycle_momentum=False)

    cls_variant = variant in ("quantCls", "bpfQuantCls")
    empty_mask = frozenset()
    clips_t = torch.from_numpy(X)
    loss_log = []
    for epoch in range(epochs):
        net.train()
        perm = torch.randperm(n_clips).numpy()
        total = 0.0
        for b in range(batches):
            sel = perm[b * c2f.batch_size : (b + 1) * c2f.batch_size]
            feats = net.stem(clips_t[sel])
            refined, _ = net.refine(feats, {}, empty_mask)
            logits = net.estimator(refined.transpose(1, 2)).squeeze(1)
            pred = (soft_reconstruct(logits, codes_t, net.temperature)
                    if cls_variant else logits)
            log_std = (net.log_std_head(refined).squeeze(-1)
                       if net.log_std_head is not None else None)
            loss = alt_supervision_loss(
                variant, pred, target[sel], fs, band,
                c2f.lambda_time, c2f.lambda_freq, c2f.lambda_ce, c2f.max_bits,
                codes=codes_t,
                target_indices=target_idx[sel] if target_idx is not None else None,
                log_std=log_std)
            if not torch.isfinite(loss):
                raise NumericalError(f"{variant} training diverged at epoch {epoch}")
            optim.zero_grad()
            loss.backward()
            optim.step()
            sched.step()
            total += float(loss.detach())
        loss_log.append({"epoch": epoch, "lossTotal": total / batches,
                         "lossCls": 0.0, "lossRec": 0.0,
                         "lr": sched.get_last_lr()[0]})

    fitted = CoarseToFineEstimator(**c2f.get_params())
    fitted.net_ = net.eval()
    fitted.codes_ = ({c2f.max_bits: codes_t} if codes_t is not None else {})
    fitted.mask_ = empty_mask
    fitted.loss_log_ = loss_log
    fitted.final_loss_ = loss_log[-1]["lossTotal"] if loss_log else None
    fitted._variant = variant
    return fitted
