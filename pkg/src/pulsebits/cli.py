"""Command-line entry point: corpus generation, training, evaluation, sweeps.

Every command resolves its settings from an optional TOML config plus flag
overrides, then records the resolved config, input hashes and seed in the
run directory so a run can be reproduced byte-for-byte.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import datagen, evaluation
from .baselines import chrom_method, extract_rgb, green_method, pos_method
from .signals import hr_from_trace
from .stage1 import LabelQuantizer, PseudoLabelBank
from .stage2 import (SUPERVISION_VARIANTS, CoarseToFineEstimator,
                     train_end_to_end, train_supervision_variant)
from .types import ClipTensor, PulseTrace, RAW
from .validation import ConfigError, DataError, NumericalError

LAMBDA_CE_SWEEP = (0.1, 0.5, 1.0, 1.5, 2.0)
SWEEP_KINDS = ("bits", "leave-one-bit", "max-bits", "lambda-ce", "supervision")

_CONFIG_SECTIONS = {
    "data": {"videos", "clips_per_video", "size", "clip_len", "fs", "hr_range",
             "label_noise", "artifact_prob", "pixel_noise", "amp_drift",
             "illum_drift", "pulse_gain", "seed"},
    "stage1": {"epochs", "max_bits", "batch_size", "lr", "weight_decay", "seed",
               "decay", "eps", "lambda_time", "lambda_freq", "lambda_feat",
               "prefilter", "threads"},
    "stage2": {"epochs", "max_bits", "batch_size", "lr", "weight_decay", "seed",
               "lambda_ce", "lambda_time", "lambda_freq", "supervision_mask",
               "threads"},
    "eval": {"split", "allow_train_eval", "baseline"},
    "sweep": {"kind", "epochs", "stage1_epochs", "seeds", "variants"},
}


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {p}: {exc}") from exc
    for section, keys in cfg.items():
        if section not in _CONFIG_SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(keys) - _CONFIG_SECTIONS[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return cfg


def _setting(args, cfg: dict, section: str, key: str, default=None):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    return cfg.get(section, {}).get(key, default)


def _prepare_run_dir(out: Path, resolved: dict, inputs: list[Path],
                     force: bool = False) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    h = hashlib.sha256()
    for path in inputs:
        path = Path(path)
        if path.is_dir():
            h.update(datagen.corpus_content_hash(path).encode())
        elif path.exists():
            h.update(path.read_bytes())
    (out / "run.json").write_text(json.dumps({
        "resolved_config": resolved,
        "input_hash": h.hexdigest(),
        "seed": resolved.get("seed"),
    }, indent=2, sort_keys=True, default=str))


def _write_log(out: Path, name: str, rows: list[dict]) -> None:
    with open(out / name, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _parse_hr_range(value) -> tuple[float, float]:
    if isinstance(value, (list, tuple)):
        lo, hi = value
    else:
        try:
            lo, hi = (float(v) for v in str(value).replace("-", ",").split(","))
        except Exception as exc:
            raise ConfigError(f"cannot parse hr range {value!r}") from exc
    if not (48.0 <= lo < hi <= 138.0):
        raise ConfigError(
            f"hr range ({lo}, {hi}) must lie within [48, 138] bpm")
    return (lo, hi)


def _gen_config(args, cfg) -> datagen.GenConfig:
    hr_range = _setting(args, cfg, "data", "hr_range", (55.0, 135.0))
    return datagen.GenConfig(
        n_videos=int(_setting(args, cfg, "data", "videos", 100)),
        clip_len=int(_setting(args, cfg, "data", "clip_len", 160)),
        clips_per_video=int(_setting(args, cfg, "data", "clips_per_video", 2)),
        fs=float(_setting(args, cfg, "data", "fs", 30.0)),
        height=int(_setting(args, cfg, "data", "size", 32)),
        width=int(_setting(args, cfg, "data", "size", 32)),
        hr_range=_parse_hr_range(hr_range),
        label_noise_std=float(_setting(args, cfg, "data", "label_noise", 0.0)),
        artifact_burst_prob=float(_setting(args, cfg, "data", "artifact_prob", 0.0)),
        pixel_noise_std=float(_setting(args, cfg, "data", "pixel_noise", 0.0)),
        amp_drift_std=float(_setting(args, cfg, "data", "amp_drift", 0.0)),
        illum_drift_std=float(_setting(args, cfg, "data", "illum_drift", 0.0)),
        pulse_gain=float(_setting(args, cfg, "data", "pulse_gain", 1.0)),
        seed=int(_setting(args, cfg, "data", "seed", 0)),
    )


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    gen_cfg = _gen_config(args, cfg)
    out = Path(args.out)
    try:
        gen_cfg.__post_init__()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _prepare_run_dir(out, gen_cfg.to_dict(), [], force=args.force)
    records = datagen.generate_corpus(gen_cfg)
    datagen.write_corpus(records, out, gen_cfg)
    snrs = []
    from .signals import snr_db
    for rec in records[: min(32, len(records))]:
        snrs.append(snr_db(rec.label))
    splits = datagen.split_videos(records)
    print(f"wrote {len(records)} clips from {gen_cfg.n_videos} videos to {out}")
    print("splits: " + ", ".join(f"{k}={len(v)} videos" for k, v in splits.items()))
    print(f"label SNR over first {len(snrs)} clips: "
          f"median {np.median(snrs):.2f} dB, min {min(snrs):.2f} dB")
    return 0


def _load_split(corpus: str, split: str) -> list[datagen.ClipRecord]:
    records = datagen.read_corpus(corpus, split=split)
    if not records:
        raise DataError(f"no records in split {split!r} of corpus {corpus}")
    return records


def _labels_matrix(records) -> np.ndarray:
    return np.stack([r.label.samples for r in records])


def _clips_array(records) -> np.ndarray:
    return np.stack([r.clip.pixels for r in records])


def cmd_train_lq(args) -> int:
    cfg = load_config(args.config)
    records = _load_split(args.corpus, "train")
    labels = _labels_matrix(records)
    fs = records[0].label.fs
    quantizer = LabelQuantizer(
        max_bits=int(_setting(args, cfg, "stage1", "max_bits", 5)),
        epochs=int(_setting(args, cfg, "stage1", "epochs", 30)),
        batch_size=int(_setting(args, cfg, "stage1", "batch_size", 16)),
        lr=float(_setting(args, cfg, "stage1", "lr", 1e-3)),
        weight_decay=float(_setting(args, cfg, "stage1", "weight_decay", 0.0)),
        seed=int(_setting(args, cfg, "stage1", "seed", 0)),
        fs=fs,
        num_threads=_setting(args, cfg, "stage1", "threads"),
    )
    out = Path(args.out)
    resolved = quantizer.get_params()
    _prepare_run_dir(out, resolved, [Path(args.corpus)], force=args.force or args.resume)
    quantizer.fit(labels, checkpoint_dir=out / "checkpoint", resume=args.resume)
    quantizer.save(out / "lq")
    bank = quantizer.export_bank(labels, ids=[r.record_id for r in records],
                                 split="train")
    bank.save(out / "bank")
    _write_log(out, "train_log.jsonl", quantizer.loss_log_)
    final = quantizer.loss_log_[-1]
    print(f"stage-1 done: {quantizer.max_bits} bit levels, "
          f"final loss {final['total']:.4f}; module + bank in {out}")
    return 0


def _mask_from_string(value) -> tuple[int, ...] | None:
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).split(","))


def cmd_train_c2f(args) -> int:
    cfg = load_config(args.config)
    records = _load_split(args.corpus, "train")
    fs = records[0].clip.fs
    clips = _clips_array(records)
    ids = [r.record_id for r in records]

    if args.bank:
        bank = PseudoLabelBank.load(args.bank, "train")
    elif args.lq_ckpt:
        quantizer = LabelQuantizer.from_directory(Path(args.lq_ckpt) / "lq")
        bank = quantizer.export_bank(_labels_matrix(records), ids=ids, split="train")
    else:
        raise ConfigError("provide --bank or --lq-ckpt")

    estimator = CoarseToFineEstimator(
        max_bits=int(_setting(args, cfg, "stage2", "max_bits", 5)),
        clip_len=clips.shape[2],
        epochs=int(_setting(args, cfg, "stage2", "epochs", 50)),
        batch_size=int(_setting(args, cfg, "stage2", "batch_size", 16)),
        lr=float(_setting(args, cfg, "stage2", "lr", 3e-4)),
        weight_decay=float(_setting(args, cfg, "stage2", "weight_decay", 1e-5)),
        lambda_ce=float(_setting(args, cfg, "stage2", "lambda_ce", 1.0)),
        supervision_mask=_mask_from_string(
            _setting(args, cfg, "stage2", "supervision_mask")),
        seed=int(_setting(args, cfg, "stage2", "seed", 0)),
        fs=fs,
        num_threads=_setting(args, cfg, "stage2", "threads"),
    )
    out = Path(args.out)
    _prepare_run_dir(out, evaluation_safe_params(estimator), [Path(args.corpus)],
                     force=args.force or args.resume)
    try:
        estimator.fit(clips, ids, bank, checkpoint_dir=out / "checkpoint",
                      resume=args.resume)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    estimator.save(out / "c2f")
    _write_log(out, "train_log.jsonl", estimator.loss_log_)
    evaluation.plot_loss_curves({"train": estimator.loss_log_}, out / "loss_curve.png")
    print(f"stage-2 done: {estimator.epochs} epochs, "
          f"final loss {estimator.final_loss_:.4f}; model in {out}")
    return 0


def evaluation_safe_params(est) -> dict:
    params = est.get_params()
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}


def cmd_train_e2e(args) -> int:
    cfg = load_config(args.config)
    records = _load_split(args.corpus, "train")
    fs = records[0].clip.fs
    clips = _clips_array(records)
    labels = _labels_matrix(records)
    ids = [r.record_id for r in records]
    epochs = int(_setting(args, cfg, "stage2", "epochs", 50))
    seed = int(_setting(args, cfg, "stage2", "seed", 0))
    threads = _setting(args, cfg, "stage2", "threads")

    quantizer = LabelQuantizer(fs=fs, seed=seed, num_threads=threads)
    estimator = CoarseToFineEstimator(clip_len=clips.shape[2], fs=fs, seed=seed,
                                      num_threads=threads)
    out = Path(args.out)
    _prepare_run_dir(out, {"epochs": epochs, "seed": seed}, [Path(args.corpus)],
                     force=args.force)
    quantizer, estimator, history = train_end_to_end(
        clips, labels, ids, quantizer, estimator, epochs=epochs,
        checkpoint_dir=out / "checkpoint")
    estimator.save(out / "c2f")
    quantizer.save(out / "lq")
    _write_log(out, "train_log.jsonl", history)
    evaluation.plot_loss_curves({"end_to_end": estimator.loss_log_},
                                out / "loss_curve.png")
    print(f"end-to-end done: {epochs} epochs, final loss {history[-1]['total']:.4f}")
    return 0


def _baseline_hr(records, which: str) -> list[float]:
    methods = {"green": green_method, "chrom": chrom_method, "pos": pos_method}
    if which not in methods:
        raise ConfigError(f"unknown baseline {which!r}; choose from {sorted(methods)}")
    out = []
    for rec in records:
        trace = methods[which](extract_rgb(rec.clip))
        out.append(hr_from_trace(trace))
    return out


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    split = _setting(args, cfg, "eval", "split", "test")
    allow_train = bool(_setting(args, cfg, "eval", "allow_train_eval", False)) or \
        args.allow_train_eval
    if split == "train" and not allow_train:
        raise ConfigError("evaluating on the train split requires --allow-train-eval")
    records = _load_split(args.corpus, split)

    all_records = datagen.read_corpus(args.corpus)
    by_split = datagen.split_videos(all_records)
    train_ids = by_split.get("train", set())
    eval_ids = {r.video_id for r in records}
    if split != "train" and train_ids & eval_ids:
        raise DataError(f"split leakage: videos {sorted(train_ids & eval_ids)[:4]} "
                        f"appear in both train and {split}")

    estimator = CoarseToFineEstimator.from_directory(Path(args.model) / "c2f")
    clips = _clips_array(records)
    preds = estimator.predict(clips)
    fs = records[0].clip.fs
    pairs, ids = [], []
    for rec, pred in zip(records, preds):
        hr_pred = hr_from_trace(PulseTrace(pred, fs, RAW))
        hr_true = hr_from_trace(rec.label)
        pairs.append((hr_pred, hr_true))
        ids.append(rec.record_id)
    report = evaluation.hr_metrics(pairs, ids, meta={"split": split,
                                                     "model": str(args.model)})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "metrics.json")
    evaluation.plot_hr_scatter(report, out / "hr_scatter.png")
    print(f"{split}: MAE {report.mae:.3f} bpm, RMSE {report.rmse:.3f} bpm, "
          f"MAPE {report.mape:.3f}%, rho {report.rho:.3f}")

    if args.baseline:
        base_hr = _baseline_hr(records, args.baseline)
        base_pairs = [(b, t) for b, (_, t) in zip(base_hr, pairs)]
        base_report = evaluation.hr_metrics(base_pairs, ids,
                                            meta={"baseline": args.baseline})
        base_report.save(out / f"baseline_{args.baseline}.json")
        print(f"baseline {args.baseline}: MAE {base_report.mae:.3f} bpm, "
              f"rho {base_report.rho:.3f}")

    if args.compare:
        other = json.loads(Path(args.compare).read_text())
        other_ae = {r["id"]: abs(r["hrPred"] - r["hrTrue"]) for r in other["per_video"]}
        deltas = []
        for row in report.per_video:
            if row["id"] in other_ae:
                deltas.append(other_ae[row["id"]] - abs(row["hrPred"] - row["hrTrue"]))
        if not deltas:
            raise DataError("no overlapping video ids with --compare report")
        try:
            test = evaluation.wilcoxon_signed_rank(deltas)
        except ValueError:
            test = {"N": len(deltas), "win": 0, "tie": len(deltas), "loss": 0,
                    "medianDelta": 0.0, "p": None,
                    "note": "all ties; p-value undefined"}
        (out / "wilcoxon.json").write_text(json.dumps(test, indent=2))
        p_str = "undefined" if test["p"] is None else f"{test['p']:.3g}"
        print(f"wilcoxon vs {args.compare}: win/tie/loss "
              f"{test['win']}/{test['tie']}/{test['loss']}, p {p_str}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    kind = args.kind
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"unknown sweep kind {kind!r}; choose from {SWEEP_KINDS}")
    out = Path(args.out)
    _prepare_run_dir(out, {"kind": kind}, [Path(args.corpus)], force=args.force)

    train_records = _load_split(args.corpus, "train")
    labels = _labels_matrix(train_records)
    fs = train_records[0].clip.fs
    s1_epochs = int(_setting(args, cfg, "sweep", "stage1_epochs", 30))
    s2_epochs = int(_setting(args, cfg, "sweep", "epochs", 50))
    seed = int(getattr(args, "seed", None) or 0)
    threads = _setting(args, cfg, "stage1", "threads")

    if kind == "bits":
        quantizer = LabelQuantizer(max_bits=6, epochs=s1_epochs, fs=fs, seed=seed,
                                   num_threads=threads)
        quantizer.fit(labels)
        rows = evaluation.fidelity_sweep(quantizer, labels, bits=range(1, 7))
        evaluation.save_table(rows, ["bits", "mae", "activeCodes"], out / "fidelity")
        evaluation.plot_fidelity_curve(rows, out / "fidelity.png")
        evaluation.plot_utilization(rows, out / "utilization.png")
        print(evaluation.format_table(rows, ["bits", "mae", "activeCodes"]))
        return 0

    test_records = _load_split(args.corpus, "test")
    clips = _clips_array(train_records)
    ids = [r.record_id for r in train_records]
    test_clips = _clips_array(test_records)
    test_hr = [hr_from_trace(r.label) for r in test_records]

    def eval_estimator(est) -> float:
        preds = est.predict(test_clips)
        pairs = [(hr_from_trace(PulseTrace(p, fs, RAW)), t)
                 for p, t in zip(preds, test_hr)]
        return evaluation.hr_metrics(pairs).mae

    def fit_stage2(bank, **overrides) -> CoarseToFineEstimator:
        base = dict(clip_len=clips.shape[2], epochs=s2_epochs, fs=fs, seed=seed,
                    num_threads=threads)
        base.update(overrides)
        est = CoarseToFineEstimator(**base)
        est.fit(clips, ids, bank)
        return est

    rows: list[dict] = []
    if kind in ("leave-one-bit", "lambda-ce"):
        quantizer = LabelQuantizer(epochs=s1_epochs, fs=fs, seed=seed,
                                   num_threads=threads)
        quantizer.fit(labels)
        bank = quantizer.export_bank(labels, ids=ids, split="train")
        if kind == "leave-one-bit":
            masks = [None] + [tuple(n for n in range(1, 6) if n != drop)
                              for drop in (1, 2, 3, 4)]
            for mask in masks:
                est = fit_stage2(bank, supervision_mask=mask)
                rows.append({"mask": "full" if mask is None else ",".join(map(str, mask)),
                             "mae": eval_estimator(est)})
            columns = ["mask", "mae"]
        else:
            for lam in LAMBDA_CE_SWEEP:
                est = fit_stage2(bank, lambda_ce=lam)
                rows.append({"lambda_ce": lam, "mae": eval_estimator(est)})
            columns = ["lambda_ce", "mae"]
    elif kind == "max-bits":
        for n in range(2, 7):
            quantizer = LabelQuantizer(max_bits=n, epochs=s1_epochs, fs=fs,
                                       seed=seed, num_threads=threads)
            quantizer.fit(labels)
            bank = quantizer.export_bank(labels, ids=ids, split="train")
            est = fit_stage2(bank, max_bits=n)
            rows.append({"max_bits": n, "mae": eval_estimator(est)})
        columns = ["max_bits", "mae"]
    else:  # supervision
        variants = _setting(args, cfg, "sweep", "variants",
                            ["raw", "bpf", "bpfQuantCls"])
        seeds = _setting(args, cfg, "sweep", "seeds", [100, 200, 300])
        bpf_quant = LabelQuantizer(epochs=s1_epochs, fs=fs, seed=seed,
                                   num_threads=threads).fit(labels)
        raw_quant = LabelQuantizer(epochs=s1_epochs, fs=fs, seed=seed,
                                   prefilter=False, num_threads=threads).fit(labels)

        def train_fn(variant: str, run_seed: int) -> float:
            base = CoarseToFineEstimator(clip_len=clips.shape[2], epochs=s2_epochs,
                                         fs=fs, seed=run_seed, num_threads=threads)
            if variant in ("bpfQuantCls",):
                bank = bpf_quant.export_bank(labels, ids=ids, split="train")
                est = CoarseToFineEstimator(clip_len=clips.shape[2], epochs=s2_epochs,
                                            fs=fs, seed=run_seed,
                                            supervision_mask=(5,),
                                            num_threads=threads)
                est.fit(clips, ids, bank)
            else:
                q = raw_quant if variant in ("quant", "quantCls") else bpf_quant
                est = train_supervision_variant(clips, labels, variant, base,
                                                quantizer=q)
            return eval_estimator(est)

        rows = evaluation.supervision_comparison(train_fn, variants, seeds)
        columns = ["variant", "mae_mean", "mae_std"]

    evaluation.save_table(rows, columns, out / "sweep")
    print(evaluation.format_table(rows, columns))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulsebits",
        description="Quantized pulse supervision and coarse-to-fine remote pulse "
                    "estimation on synthetic corpora.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--force", action="store_true",
                       help="allow writing into a non-empty directory")

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    add_common(p)
    p.add_argument("--videos", type=int)
    p.add_argument("--clips-per-video", type=int, dest="clips_per_video")
    p.add_argument("--size", type=int, help="frame height/width")
    p.add_argument("--seed", type=int)
    p.add_argument("--label-noise", type=float, dest="label_noise")
    p.add_argument("--artifact-prob", type=float, dest="artifact_prob")
    p.add_argument("--pixel-noise", type=float, dest="pixel_noise")
    p.add_argument("--pulse-gain", type=float, dest="pulse_gain")
    p.add_argument("--hr-range", dest="hr_range", help="lo,hi in bpm")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-lq", help="train the stage-1 label quantizer")
    add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-bits", type=int, dest="max_bits")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train_lq)

    p = sub.add_parser("train-c2f", help="train the stage-2 estimator")
    add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--bank", help="pseudo-label bank directory")
    p.add_argument("--lq-ckpt", dest="lq_ckpt",
                   help="stage-1 run directory (exports a bank first)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-bits", type=int, dest="max_bits")
    p.add_argument("--lambda-ce", type=float, dest="lambda_ce")
    p.add_argument("--supervision-mask", dest="supervision_mask",
                   help="comma-separated bit levels, e.g. 2,3,4,5")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train_c2f)

    p = sub.add_parser("train-e2e", help="joint end-to-end training")
    add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_e2e)

    p = sub.add_parser("eval", help="evaluate a model on a corpus split")
    add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="stage-2 run directory")
    p.add_argument("--split")
    p.add_argument("--allow-train-eval", action="store_true",
                   dest="allow_train_eval")
    p.add_argument("--baseline", help="also evaluate green/chrom/pos")
    p.add_argument("--compare", help="metrics.json of another run for Wilcoxon")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run an ablation sweep")
    add_common(p)
    p.add_argument("--kind", required=True, choices=SWEEP_KINDS)
    p.add_argument("--corpus", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--stage1-epochs", type=int, dest="stage1_epochs")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
