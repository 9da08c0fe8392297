"""Synthetic corpus generation: pulse traces paired with pulse-modulated clips.

The clip pixels always encode the *clean* pulse; injected noise and artifact
bursts afflict only the stored label. That separation is what lets the
label-robustness experiments run on generated data.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .types import ClipTensor, PulseTrace, RAW

CORPUS_VERSION = 1

SKIN_BASE = (180.0, 130.0, 110.0)


@dataclass
class GenConfig:
    n_videos: int = 100
    clip_len: int = 160
    clips_per_video: int = 2
    fs: float = 30.0
    height: int = 32
    width: int = 32
    hr_range: tuple[float, float] = (55.0, 135.0)
    harmonic_amp: float = 0.35
    label_noise_std: float = 0.0
    artifact_burst_prob: float = 0.0
    amp_drift_std: float = 0.0
    pixel_noise_std: float = 0.0
    illum_drift_std: float = 0.0
    pulse_weights: tuple[float, float, float] = (0.3, 1.0, 0.5)
    pulse_gain: float = 1.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.hr_range
        if not (48.0 <= lo < hi <= 138.0):
            raise ValueError(
                f"hr_range {self.hr_range} must lie within [48, 138] bpm "
                "(the 0.75-2.5 Hz evaluation band)"
            )
        for name in ("label_noise_std", "artifact_burst_prob", "amp_drift_std",
                     "pixel_noise_std", "illum_drift_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ClipRecord:
    """One 160-frame training example: clip, noisy label, clean pulse, HR curve."""

    record_id: str
    video_id: str
    split: str
    clip_index: int
    clip: ClipTensor
    label: PulseTrace
    clean: PulseTrace
    hr_bpm: np.ndarray  # per-frame ground-truth HR curve

    @property
    def true_hr(self) -> float:
        return float(self.hr_bpm.mean())


def _video_rng(seed: int, video_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, video_index)))


def make_hr_profile(cfg: GenConfig, n_frames: int, rng: np.random.Generator) -> np.ndarray:
    """A slowly varying per-frame HR curve (bpm) inside the configured range."""
    lo, hi = cfg.hr_range
    base = rng.uniform(lo + 1.5, hi - 1.5)
    amp = rng.uniform(0.3, 1.5)
    period = rng.uniform(20.0, 40.0)  # seconds
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(n_frames) / cfg.fs
    hr = base + amp * np.sin(2 * np.pi * t / period + phase)
    return np.clip(hr, lo, hi)


def gen_pulse(cfg: GenConfig, hr_profile: np.ndarray,
              rng: np.random.Generator) -> tuple[PulseTrace, PulseTrace, np.ndarray]:
    """Generate (noisy label, clean pulse, hr curve) for one video.

    The clean pulse is an amplitude-drifting two-harmonic tone whose phase
    integrates the HR curve; the label adds Gaussian noise and artifact
    bursts on top of it.
    """
    hr_profile = np.asarray(hr_profile, dtype=np.float64)
    lo, hi = cfg.hr_range
    if hr_profile.min() < lo - 1e-9 or hr_profile.max() > hi + 1e-9:
        raise ValueError(
            f"hr profile [{hr_profile.min():.2f}, {hr_profile.max():.2f}] outside "
            f"configured range {cfg.hr_range}"
        )
    n = hr_profile.size
    freq_hz = hr_profile / 60.0
    phase = 2 * np.pi * np.cumsum(freq_hz) / cfg.fs
    phase2 = rng.uniform(0, 2 * np.pi)

    amp = np.ones(n)
    if cfg.amp_drift_std > 0:
        walk = np.cumsum(rng.normal(0, cfg.amp_drift_std / np.sqrt(cfg.fs), n))
        amp = np.clip(1.0 + walk, 0.5, 1.5)

    clean = amp * (np.sin(phase) + cfg.harmonic_amp * np.sin(2 * phase + phase2))

    label = clean.copy()
    if cfg.label_noise_std > 0:
        label = label + rng.normal(0, cfg.label_noise_std, n)
    if cfg.artifact_burst_prob > 0:
        n_windows = max(1, int(n / cfg.fs))
        for w in range(n_windows):
            if rng.uniform() < cfg.artifact_burst_prob:
                dur = int(rng.uniform(0.15, 0.5) * cfg.fs)
                start = rng.integers(w * int(cfg.fs), min(n - 1, (w + 1) * int(cfg.fs)))
                stop = min(n, start + dur)
                spike = rng.uniform(2.0, 5.0) * rng.choice([-1.0, 1.0])
                label[start:stop] += spike * np.hanning(stop - start)

    return (
        PulseTrace(label, cfg.fs, RAW),
        PulseTrace(clean, cfg.fs, RAW),
        hr_profile,
    )


def gen_clip(pulse: PulseTrace, cfg: GenConfig, rng: np.random.Generator) -> ClipTensor:
    """Render a clip whose pixels carry the given (clean) pulse.

    pixel(c,t,h,w) = skin base + bump(h,w) * weight_c * gain * pulse(t)
                     + shared illumination drift + per-pixel Gaussian noise,
    clipped to [0, 255].
    """
    n = len(pulse)
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    sigma = max(h, w) / 4.0
    bump = np.exp(-(((yy - cy) ** 2) + ((xx - cx) ** 2)) / (2 * sigma**2))

    illum = np.zeros(n)
    if cfg.illum_drift_std > 0:
        walk = np.cumsum(rng.normal(0, cfg.illum_drift_std / np.sqrt(cfg.fs), n))
        illum = walk

    pixels = np.empty((3, n, h, w), dtype=np.float32)
    for c in range(3):
        signal = cfg.pulse_weights[c] * cfg.pulse_gain * pulse.samples + illum
        pixels[c] = SKIN_BASE[c] + signal[:, None, None] * bump[None, :, :]
    if cfg.pixel_noise_std > 0:
        pixels += rng.normal(0, cfg.pixel_noise_std, pixels.shape).astype(np.float32)
    np.clip(pixels, 0.0, 255.0, out=pixels)
    return ClipTensor(pixels, cfg.fs)


def preprocess_clip(video: np.ndarray, label: np.ndarray, fs: float,
                    clip_len: int = 160, target_size: int | None = None,
                    ) -> list[tuple[ClipTensor, PulseTrace]]:
    """Cut a video into non-overlapping fixed-length clips with z-scored labels.

    The trailing partial segment is dropped; frames are bilinearly resized to
    ``target_size`` when given. Label and video lengths may differ by at most
    one frame (the excess is trimmed).
    """
    video = np.asarray(video, dtype=np.float32)
    label = np.asarray(label, dtype=np.float64)
    if video.ndim != 4 or video.shape[0] != 3:
        raise ValueError(f"expected video shaped (3, T, H, W), got {video.shape}")
    n_frames = video.shape[1]
    if abs(n_frames - label.size) > 1:
        raise ValueError(
            f"label/video length mismatch: {label.size} labels vs {n_frames} frames"
        )
    n = min(n_frames, label.size)
    video, label = video[:, :n], label[:n]

    if target_size is not None and video.shape[2:] != (target_size, target_size):
        t = torch.from_numpy(video).permute(1, 0, 2, 3)  # (T, C, H, W)
        t = F.interpolate(t, size=(target_size, target_size), mode="bilinear",
                          align_corners=False, antialias=True)
        video = t.permute(1, 0, 2, 3).numpy()

    out = []
    for k in range(n // clip_len):
        seg = slice(k * clip_len, (k + 1) * clip_len)
        lab = label[seg]
        mu, sd = lab.mean(), lab.std()
        lab = (lab - mu) / sd if sd > 0 else np.zeros_like(lab)
        out.append((ClipTensor(video[:, seg], fs), PulseTrace(lab, fs, RAW)))
    return out


def generate_corpus(cfg: GenConfig, splits: dict[str, int] | None = None) -> list[ClipRecord]:
    """Generate per-video records, assigning videos to disjoint named splits.

    ``splits`` maps split name to video count and must sum to cfg.n_videos;
    the default is a 64/16/20-proportioned train/val/test partition.
    """
    if splits is None:
        n_test = max(1, round(cfg.n_videos * 0.2))
        n_val = max(1, round(cfg.n_videos * 0.16))
        splits = {"train": cfg.n_videos - n_val - n_test, "val": n_val, "test": n_test}
    if sum(splits.values()) != cfg.n_videos:
        raise ValueError(f"splits {splits} do not sum to n_videos={cfg.n_videos}")

    assignments: list[str] = []
    for name, count in splits.items():
        assignments.extend([name] * count)

    frames_per_video = cfg.clip_len * cfg.clips_per_video
    records: list[ClipRecord] = []
    for v in range(cfg.n_videos):
        rng = _video_rng(cfg.seed, v)
        hr = make_hr_profile(cfg, frames_per_video, rng)
        label, clean, hr = gen_pulse(cfg, hr, rng)
        clip_full = gen_clip(clean, cfg, rng)
        video_id = f"vid{v:05d}"
        for k in range(cfg.clips_per_video):
            seg = slice(k * cfg.clip_len, (k + 1) * cfg.clip_len)
            records.append(ClipRecord(
                record_id=f"{video_id}_c{k}",
                video_id=video_id,
                split=assignments[v],
                clip_index=k,
                clip=ClipTensor(clip_full.pixels[:, seg], cfg.fs),
                label=PulseTrace(label.samples[seg], cfg.fs, RAW),
                clean=PulseTrace(clean.samples[seg], cfg.fs, RAW),
                hr_bpm=hr[seg],
            ))
    return records


def _record_files(record_id: str) -> dict[str, str]:
    return {
        "pixels": f"clips/{record_id}.pixels.f32",
        "label": f"clips/{record_id}.label.f32",
        "clean": f"clips/{record_id}.clean.f32",
        "hr": f"clips/{record_id}.hr.f32",
    }


def write_corpus(records: list[ClipRecord], directory: str | Path,
                 cfg: GenConfig | None = None) -> Path:
    """Write records as raw little-endian float32 arrays plus a JSON manifest."""
    directory = Path(directory)
    (directory / "clips").mkdir(parents=True, exist_ok=True)
    manifest_records = []
    splits: dict[str, list[str]] = {}
    for rec in records:
        files = _record_files(rec.record_id)
        (directory / files["pixels"]).write_bytes(
            rec.clip.pixels.astype("<f4").tobytes())
        (directory / files["label"]).write_bytes(
            rec.label.samples.astype("<f4").tobytes())
        (directory / files["clean"]).write_bytes(
            rec.clean.samples.astype("<f4").tobytes())
        (directory / files["hr"]).write_bytes(rec.hr_bpm.astype("<f4").tobytes())
        manifest_records.append({
            "id": rec.record_id,
            "video": rec.video_id,
            "split": rec.split,
            "clip_index": rec.clip_index,
            "shape": list(rec.clip.pixels.shape),
            "files": files,
        })
        splits.setdefault(rec.split, [])
        if rec.video_id not in splits[rec.split]:
            splits[rec.split].append(rec.video_id)

    manifest = {
        "version": CORPUS_VERSION,
        "fs": records[0].clip.fs if records else None,
        "splits": splits,
        "generator": cfg.to_dict() if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "records": manifest_records,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def read_corpus(directory: str | Path, split: str | None = None) -> list[ClipRecord]:
    """Read a corpus directory back; bitwise-faithful for float32 payloads."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no corpus manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt corpus manifest at {manifest_path}: {exc}") from exc
    if manifest.get("version") != CORPUS_VERSION:
        raise ValueError(f"unsupported corpus version {manifest.get('version')}")

    fs = float(manifest["fs"])
    records = []
    for meta in manifest["records"]:
        if split is not None and meta["split"] != split:
            continue
        shape = tuple(meta["shape"])
        n = shape[1]
        arrays = {}
        for key, rel in meta["files"].items():
            path = directory / rel
            if not path.exists():
                raise FileNotFoundError(f"corpus file missing: {path}")
            raw = np.frombuffer(path.read_bytes(), dtype="<f4")
            expected = int(np.prod(shape)) if key == "pixels" else n
            if raw.size != expected:
                raise ValueError(
                    f"corrupt corpus file {path}: {raw.size} values, expected {expected}"
                )
            arrays[key] = raw
        records.append(ClipRecord(
            record_id=meta["id"],
            video_id=meta["video"],
            split=meta["split"],
            clip_index=meta["clip_index"],
            clip=ClipTensor(arrays["pixels"].reshape(shape), fs),
            label=PulseTrace(arrays["label"].astype(np.float64), fs, RAW),
            clean=PulseTrace(arrays["clean"].astype(np.float64), fs, RAW),
            hr_bpm=arrays["hr"].astype(np.float64),
        ))
    return records


def split_videos(records: list[ClipRecord]) -> dict[str, set[str]]:
    """Video ids per split; raises if any video leaks across splits."""
    by_split: dict[str, set[str]] = {}
    owner: dict[str, str] = {}
    for rec in records:
        if rec.video_id in owner and owner[rec.video_id] != rec.split:
            raise ValueError(
                f"video {rec.video_id} appears in splits "
                f"{owner[rec.video_id]!r} and {rec.split!r}"
            )
        owner[rec.video_id] = rec.split
        by_split.setdefault(rec.split, set()).add(rec.video_id)
    return by_split


def corpus_content_hash(directory: str | Path) -> str:
    """SHA-256 over the manifest and every data file, for run provenance."""
    directory = Path(directory)
    h = hashlib.sha256()
    h.update((directory / "manifest.json").read_bytes())
    for path in sorted((directory / "clips").glob("*")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()
