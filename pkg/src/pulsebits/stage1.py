"""Stage 1: learnable multi-bit quantization of pulse labels.

Per bit depth an independent encoder (dilated convolutions + bidirectional
selective-scan block at model dim 1) feeds a scalar codebook updated by EMA.
The trained module exports frozen multi-bit pseudo labels for Stage 2.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin

from . import codebook as cbk
from .blocks import BiMamba, DilatedConvBlock, load_params, save_params, param_count
from .codebook import Assignment, Codebook, assign_codes, ema_update
from .losses import commitment, neg_pearson, spectral_ce
from .signals import EVAL_BAND, bandpass, resample_trace, zscore
from .types import BandConfig, FILTERED, PSEUDO, PulseTrace, RAW
from .validation import check_trace_matrix, derive_seed

BANK_VERSION = 1


class LqEncoder(torch.nn.Module):
    """Per-bit encoder: dilated convolution block followed by a d=1 Bi-Mamba."""

    def __init__(self, kernel: int = 5, dilations: tuple[int, ...] = (1, 2, 4, 8, 16),
                 state: int = 16, mamba_kernel: int = 5, expand: int = 2):
        super().__init__()
        self.dilated = DilatedConvBlock(kernel=kernel, dilations=dilations)
        self.mamba = BiMamba(1, state=state, kernel=mamba_kernel, expand=expand)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if y.dim() != 2:
            raise ValueError(f"expected (B, T), got {tuple(y.shape)}")
        h = self.dilated(y.unsqueeze(-1))
        h = self.mamba(h)
        return h.squeeze(-1)


def lq_loss(y_filt: torch.Tensor, z: torch.Tensor, assign: Assignment,
            fs: float, band: BandConfig = EVAL_BAND,
            lambda_time: float = 0.2, lambda_freq: float = 1.0,
            lambda_feat: float = 0.5) -> tuple[torch.Tensor, dict]:
    """Stage-1 objective on one batch.

    The quantized label enters the reconstruction terms through a
    straight-through pass so the encoder receives gradient; the codebook
    itself is EMA-only and gets none.
    """
    y_q = torch.as_tensor(assign.quantized, dtype=z.dtype)
    y_st = z + (y_q - z).detach()
    t_time = neg_pearson(y_filt, y_st)
    t_freq = spectral_ce(y_st, y_filt, fs, band)
    t_feat = commitment(z, y_q)
    total = lambda_time * t_time + lambda_freq * t_freq + lambda_feat * t_feat
    parts = {
        "time": float(t_time.detach()),
        "freq": float(t_freq.detach()),
        "feat": float(t_feat.detach()),
    }
    return total, parts


@dataclass
class BankRecord:
    """Frozen multi-bit pseudo labels for one trace."""

    trace_id: str
    y: np.ndarray
    y_filt: np.ndarray
    labels: dict[int, np.ndarray]
    indices: dict[int, np.ndarray]


@dataclass
class PseudoLabelBank:
    """Read-only store of exported pseudo labels, keyed by trace id."""

    fs: float
    max_bits: int
    split: str
    records: dict[str, BankRecord] = field(default_factory=dict)
    codebooks: dict[int, Codebook] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory) / self.split
        directory.mkdir(parents=True, exist_ok=True)
        manifest_records = []
        for rec in self.records.values():
            base = str(directory / rec.trace_id)
            Path(base + ".y.f32").write_bytes(rec.y.astype("<f4").tobytes())
            Path(base + ".yf.f32").write_bytes(rec.y_filt.astype("<f4").tobytes())
            for n, arr in rec.labels.items():
                Path(base + f".y{n}.f32").write_bytes(arr.astype("<f4").tobytes())
            for n, arr in rec.indices.items():
                Path(base + f".i{n}.i16").write_bytes(arr.astype("<i2").tobytes())
            manifest_records.append({"id": rec.trace_id, "length": int(rec.y.size)})
        for n, cb in self.codebooks.items():
            cbk.save_codebook(cb, directory / f"codebook_{n}.f64")
        manifest = {
            "version": BANK_VERSION,
            "fs": self.fs,
            "max_bits": self.max_bits,
            "split": self.split,
            "codebook_hashes": {n: cb.content_hash() for n, cb in self.codebooks.items()},
            "source_module": self.meta.get("source_module"),
            "records": manifest_records,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory: str | Path, split: str = "train") -> "PseudoLabelBank":
        directory = Path(directory) / split
        manifest = json.loads((directory / "manifest.json").read_text())
        if manifest.get("version") != BANK_VERSION:
            raise ValueError(f"unsupported bank version {manifest.get('version')}")
        max_bits = int(manifest["max_bits"])
        bank = cls(
            fs=float(manifest["fs"]), max_bits=max_bits, split=manifest["split"],
            meta={"source_module": manifest.get("source_module")},
        )
        for n in range(1, max_bits + 1):
            bank.codebooks[n] = cbk.load_codebook(directory / f"codebook_{n}.f64")
        for meta in manifest["records"]:
            tid = meta["id"]
            base = str(directory / tid)
            y = np.frombuffer(Path(base + ".y.f32").read_bytes(), dtype="<f4")
            yf = np.frombuffer(Path(base + ".yf.f32").read_bytes(), dtype="<f4")
            labels, indices = {}, {}
            for n in range(1, max_bits + 1):
                labels[n] = np.frombuffer(
                    Path(base + f".y{n}.f32").read_bytes(), dtype="<f4"
                ).astype(np.float64)
                indices[n] = np.frombuffer(
                    Path(base + f".i{n}.i16").read_bytes(), dtype="<i2"
                ).astype(np.int64)
            bank.records[tid] = BankRecord(
                trace_id=tid, y=y.astype(np.float64), y_filt=yf.astype(np.float64),
                labels=labels, indices=indices,
            )
        return bank


class LabelQuantizer(TransformerMixin, BaseEstimator):
    """Trainable multi-bit scalar quantizer of pulse labels.

    ``fit`` trains one encoder+codebook per bit depth on the training-split
    labels; ``transform`` returns the finest-bit pseudo labels. Pseudo labels
    live on the z-scored band-passed scale of the inputs.
    """

    def __init__(self, max_bits: int = 5, band: tuple[float, float] = (0.75, 2.5),
                 prefilter: bool = True, epochs: int = 30, batch_size: int = 16,
                 lr: float = 1e-3, weight_decay: float = 0.0, decay: float = 0.99,
                 eps: float = 1e-5, lambda_time: float = 0.2, lambda_freq: float = 1.0,
                 lambda_feat: float = 0.5, fs: float = 30.0, seed: int = 0,
                 num_threads: int | None = None):
        self.max_bits = max_bits
        self.band = band
        self.prefilter = prefilter
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.decay = decay
        self.eps = eps
        self.lambda_time = lambda_time
        self.lambda_freq = lambda_freq
        self.lambda_feat = lambda_feat
        self.fs = fs
        self.seed = seed
        self.num_threads = num_threads

    # -- preprocessing ----------------------------------------------------

    def _band(self) -> BandConfig:
        return BandConfig(*self.band)

    def prepare(self, X: np.ndarray) -> np.ndarray:
        """Band-pass (optional) and z-score each row; the encoder input scale."""
        X = check_trace_matrix(X, min_len=64)
        out = np.empty_like(X)
        for i, row in enumerate(X):
            trace = PulseTrace(row, self.fs, RAW)
            if self.prefilter:
                trace = bandpass(trace, self._band())
            out[i] = zscore(trace).samples
        return out

    # -- training ---------------------------------------------------------

    def fit(self, X, y=None, checkpoint_dir: str | Path | None = None,
            resume: bool = False):
        X = check_trace_matrix(X, min_len=64)
        if X.shape[0] == 0:
            raise ValueError("empty dataset")
        if self.num_threads is not None:
            torch.set_num_threads(self.num_threads)
        y_filt = self.prepare(X)
        if np.any(y_filt.std(axis=1) == 0):
            raise ValueError("degenerate (constant) trace after filtering")

        state = self._load_checkpoint(checkpoint_dir) if resume else None
        self.encoders_: dict[int, LqEncoder] = {} if state is None else state["encoders"]
        self.codebooks_: dict[int, Codebook] = {} if state is None else state["codebooks"]
        self.loss_log_: list[dict] = [] if state is None else state["loss_log"]
        start_bit = 1 if state is None else state["bit"]

        for n in range(start_bit, self.max_bits + 1):
            resume_state = state if (state is not None and state["bit"] == n) else None
            self._fit_bit(n, y_filt, checkpoint_dir, resume_state)
        self.n_features_in_ = X.shape[1]
        self.fs_ = self.fs
        return self

    def _fit_bit(self, n: int, y_filt: np.ndarray,
                 checkpoint_dir: str | Path | None, resume_state: dict | None) -> None:
        n_traces, T = y_filt.shape
        batches_per_epoch = max(1, int(np.ceil(n_traces / self.batch_size)))
        total_steps = self.epochs * batches_per_epoch
        band = self._band()

        if resume_state is None:
            torch.manual_seed(derive_seed(self.seed, f"stage1/bit{n}"))
            encoder = LqEncoder()
            first = torch.from_numpy(y_filt[: self.batch_size]).float()
            with torch.no_grad():
                z0 = encoder(first).double().numpy()
            cb = Codebook.from_quantiles(z0, n, decay=self.decay, eps=self.eps)
            start_epoch = 0
        else:
            encoder = resume_state["encoder"]
            cb = resume_state["cb"]
            start_epoch = resume_state["epoch"]

        optim = torch.optim.AdamW(encoder.parameters(), lr=self.lr,
                                  weight_decay=self.weight_decay)
        sched = torch.optim.lr_scheduler.OneCycleLR(
            optim, max_lr=self.lr, total_steps=total_steps,
            pct_start=0.25, anneal_strategy="cos", cycle_momentum=False)
        if resume_state is not None:
            optim.load_state_dict(resume_state["optim"])
            sched.load_state_dict(resume_state["sched"])
            torch.set_rng_state(resume_state["torch_rng"])

        for epoch in range(start_epoch, self.epochs):
            perm = torch.randperm(n_traces).numpy()
            sums = {"total": 0.0, "time": 0.0, "freq": 0.0, "feat": 0.0}
            for b in range(batches_per_epoch):
                idx = perm[b * self.batch_size : (b + 1) * self.batch_size]
                batch = torch.from_numpy(y_filt[idx]).float()
                z = encoder(batch)
                assign = assign_codes(z.detach().double().numpy(), cb)
                loss, parts = lq_loss(
                    batch, z, assign, self.fs, band,
                    self.lambda_time, self.lambda_freq, self.lambda_feat)
                optim.zero_grad()
                loss.backward()
                optim.step()
                sched.step()
                ema_update(cb, z.detach().double().numpy(), assign)
                sums["total"] += float(loss.detach())
                for key in ("time", "freq", "feat"):
                    sums[key] += parts[key]
            self.loss_log_.append({
                "bit": n, "epoch": epoch,
                **{k: v / batches_per_epoch for k, v in sums.items()},
                "lr": sched.get_last_lr()[0],
            })
            if checkpoint_dir is not None:
                self._save_checkpoint(checkpoint_dir, n, epoch + 1, encoder, cb,
                                      optim, sched)
        self.encoders_[n] = encoder.eval()
        self.codebooks_[n] = cb

    # -- checkpoint/resume (internal resume bundle, torch serialized) -------

    def _save_checkpoint(self, directory, bit, epoch, encoder, cb, optim, sched):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        bundle = {
            "bit": bit,
            "epoch": epoch,
            "encoder": encoder.state_dict(),
            "cb": {"bits": cb.bits, "codes": cb.codes, "ema_count": cb.ema_count,
                   "ema_sum": cb.ema_sum, "decay": cb.decay, "eps": cb.eps},
            "optim": optim.state_dict(),
            "sched": sched.state_dict(),
            "torch_rng": torch.get_rng_state(),
            "done_bits": sorted(self.encoders_.keys()),
            "done_encoders": {k: v.state_dict() for k, v in self.encoders_.items()},
            "done_codebooks": {
                k: {"bits": v.bits, "codes": v.codes, "ema_count": v.ema_count,
                    "ema_sum": v.ema_sum, "decay": v.decay, "eps": v.eps}
                for k, v in self.codebooks_.items()},
            "loss_log": self.loss_log_,
            "params": self.get_params(),
        }
        torch.save(bundle, directory / "resume.pt")

    def _load_checkpoint(self, directory) -> dict | None:
        if directory is None:
            return None
        path = Path(directory) / "resume.pt"
        if not path.exists():
            return None
        bundle = torch.load(path, weights_only=False)
        encoders = {}
        for k, sd in bundle["done_encoders"].items():
            enc = LqEncoder()
            enc.load_state_dict(sd)
            encoders[k] = enc.eval()
        codebooks = {k: Codebook(**v) for k, v in bundle["done_codebooks"].items()}
        encoder = LqEncoder()
        encoder.load_state_dict(bundle["encoder"])
        epoch = bundle["epoch"]
        bit = bundle["bit"]
        if epoch >= self.epochs:  # bit finished; resume at the next one
            encoders[bit] = encoder.eval()
            codebooks[bit] = Codebook(**bundle["cb"])
            return {"encoders": encoders, "codebooks": codebooks,
                    "loss_log": bundle["loss_log"], "bit": bit + 1}
        return {"encoders": encoders, "codebooks": codebooks,
                "loss_log": bundle["loss_log"], "bit": bit, "epoch": epoch,
                "encoder": encoder, "cb": Codebook(**bundle["cb"]),
                "optim": bundle["optim"], "sched": bundle["sched"],
                "torch_rng": bundle["torch_rng"]}

    # -- inference ----------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "encoders_"):
            raise RuntimeError("LabelQuantizer is not fitted")

    def encode(self, X, bits: int) -> np.ndarray:
        """Latent sequences z for one bit depth, shape (n_traces, T)."""
        self._check_fitted()
        if bits not in self.encoders_:
            raise KeyError(f"no encoder trained for bit depth {bits}")
        y_filt = self.prepare(X)
        with torch.no_grad():
            z = self.encoders_[bits](torch.from_numpy(y_filt).float())
        return z.double().numpy()

    def quantize(self, X, bits: int) -> tuple[np.ndarray, np.ndarray]:
        """(pseudo labels, code indices) for one bit depth."""
        z = self.encode(X, bits)
        assign = assign_codes(z, self.codebooks_[bits])
        return assign.quantized, assign.indices

    def transform(self, X) -> np.ndarray:
        """Finest-bit pseudo labels, shape (n_traces, T)."""
        pseudo, _ = self.quantize(X, self.max_bits)
        return pseudo

    def pseudo_traces(self, X, bits: int) -> list[PulseTrace]:
        pseudo, _ = self.quantize(X, bits)
        return [PulseTrace(row, self.fs, PSEUDO, bits) for row in pseudo]

    def fidelity_mae(self, X, bits: int, band: BandConfig | None = None) -> float:
        """HR MAE (bpm) between pseudo labels and the supplied label traces."""
        X = check_trace_matrix(X, min_len=160)
        pseudo = self.pseudo_traces(X, bits)
        truth = [PulseTrace(row, self.fs, RAW) for row in X]
        return cbk.label_fidelity_mae(pseudo, truth, band or self._band())

    def module_id(self) -> str:
        self._check_fitted()
        h = hashlib.sha256()
        for n in sorted(self.codebooks_):
            h.update(self.codebooks_[n].content_hash().encode())
        return h.hexdigest()[:16]

    def export_bank(self, X, ids: Sequence[str] | None = None, split: str = "train",
                    fs: float | None = None, resample: bool = False) -> PseudoLabelBank:
        """Freeze multi-bit pseudo labels for a set of traces.

        A module trained at one sampling rate can be applied to traces at
        another only with ``resample=True`` (linear interpolation to the
        module's rate).
        """
        self._check_fitted()
        X = check_trace_matrix(X, min_len=64)
        fs = self.fs_ if fs is None else float(fs)
        if abs(fs - self.fs_) > 1e-9:
            if not resample:
                raise ValueError(
                    f"trace rate {fs} Hz differs from module rate {self.fs_} Hz; "
                    "pass resample=True to interpolate")
            X = np.stack([
                resample_trace(PulseTrace(row, fs, RAW), self.fs_).samples for row in X
            ])
        if ids is None:
            ids = [f"trace{i:05d}" for i in range(X.shape[0])]
        if len(ids) != X.shape[0]:
            raise ValueError("ids must match the number of traces")

        y_filt = self.prepare(X)
        bank = PseudoLabelBank(
            fs=self.fs_, max_bits=self.max_bits, split=split,
            codebooks={n: self.codebooks_[n] for n in self.codebooks_},
            meta={"source_module": self.module_id()},
        )
        per_bit = {n: self.quantize(X, n) for n in range(1, self.max_bits + 1)}
        for i, tid in enumerate(ids):
            bank.records[tid] = BankRecord(
                trace_id=tid,
                y=X[i].copy(),
                y_filt=y_filt[i].copy(),
                labels={n: per_bit[n][0][i] for n in per_bit},
                indices={n: per_bit[n][1][i] for n in per_bit},
            )
        return bank

    # -- portable persistence ------------------------------------------------

    def save(self, directory: str | Path) -> Path:
        self._check_fitted()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for n, enc in self.encoders_.items():
            save_params(enc, directory / f"encoder_{n}",
                        manifest={"stage": 1, "bit": n, "seed": self.seed,
                                  "config": self.get_params(),
                                  "param_count": param_count(enc)})
            cbk.save_codebook(self.codebooks_[n], directory / f"codebook_{n}.f64")
        (directory / "module.json").write_text(json.dumps({
            "max_bits": self.max_bits, "fs": self.fs_, "params": self.get_params(),
            "module_id": self.module_id(),
        }, indent=2))
        return directory

    @classmethod
    def from_directory(cls, directory: str | Path) -> "LabelQuantizer":
        directory = Path(directory)
        meta = json.loads((directory / "module.json").read_text())
        est = cls(**meta["params"])
        est.encoders_ = {}
        est.codebooks_ = {}
        est.loss_log_ = []
        for n in range(1, est.max_bits + 1):
            enc = LqEncoder()
            load_params(enc, directory / f"encoder_{n}")
            est.encoders_[n] = enc.eval()
            est.codebooks_[n] = cbk.load_codebook(directory / f"codebook_{n}.f64")
        est.fs_ = float(meta["fs"])
        est.n_features_in_ = None
        return est
