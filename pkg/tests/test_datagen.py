import json

import numpy as np
import pytest

from pulsebits import hr_from_trace, psd_welch, snr_db
from pulsebits.datagen import (ClipRecord, GenConfig, gen_clip, gen_pulse,
                               generate_corpus, preprocess_clip, read_corpus,
                               split_videos, write_corpus)
from pulsebits.signals import EVAL_BAND
from pulsebits.types import PulseTrace


def clean_cfg(**kw):
    base = dict(n_videos=2, clips_per_video=1, height=16, width=16, seed=0)
    base.update(kw)
    return GenConfig(**base)


class TestGenPulse:
    def test_constant_hr_recovered(self):
        cfg = clean_cfg()
        label, clean, _ = gen_pulse(cfg, np.full(480, 90.0), np.random.default_rng(1))
        assert abs(hr_from_trace(clean) - 90.0) <= 60.0 * 30.0 / 1024 + 1e-9

    def test_clean_pulse_high_snr(self):
        cfg = clean_cfg()
        label, _, _ = gen_pulse(cfg, np.full(480, 72.0), np.random.default_rng(2))
        assert snr_db(label) >= 15.0

    def test_seed_determinism(self):
        cfg = clean_cfg(label_noise_std=0.2)
        hr = np.full(320, 80.0)
        a, _, _ = gen_pulse(cfg, hr, np.random.default_rng(5))
        b, _, _ = gen_pulse(cfg, hr, np.random.default_rng(5))
        c, _, _ = gen_pulse(cfg, hr, np.random.default_rng(6))
        np.testing.assert_array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)

    def test_out_of_range_profile_rejected(self):
        cfg = clean_cfg()
        with pytest.raises(ValueError, match="outside"):
            gen_pulse(cfg, np.full(320, 140.0), np.random.default_rng(0))

    def test_hr_range_schema_guard(self):
        with pytest.raises(ValueError, match=r"\[48, 138\]"):
            GenConfig(hr_range=(30.0, 300.0))


class TestGenClip:
    def test_zero_gain_leaves_no_inband_peak(self):
        from pulsebits.baselines import extract_rgb
        cfg = clean_cfg(pulse_gain=0.0, pixel_noise_std=2.0)
        _, clean, _ = gen_pulse(cfg, np.full(320, 75.0), np.random.default_rng(3))
        clip = gen_clip(clean, cfg, np.random.default_rng(3))
        g = extract_rgb(clip).g
        assert snr_db(PulseTrace(g, cfg.fs)) <= 3.0

    def test_gain_two_recovers_hr(self):
        from pulsebits.baselines import extract_rgb, green_method
        cfg = clean_cfg(pulse_gain=2.0)
        _, clean, _ = gen_pulse(cfg, np.full(320, 75.0), np.random.default_rng(4))
        clip = gen_clip(clean, cfg, np.random.default_rng(4))
        hr = hr_from_trace(green_method(extract_rgb(clip)))
        assert abs(hr - 75.0) <= 1.0

    def test_pixel_range_clipped(self):
        cfg = clean_cfg(pulse_gain=100.0, pixel_noise_std=50.0)
        _, clean, _ = gen_pulse(cfg, np.full(320, 70.0), np.random.default_rng(5))
        clip = gen_clip(clean, cfg, np.random.default_rng(5))
        assert clip.pixels.min() >= 0.0
        assert clip.pixels.max() <= 255.0

    def test_deterministic(self):
        cfg = clean_cfg(pixel_noise_std=1.0)
        _, clean, _ = gen_pulse(cfg, np.full(320, 70.0), np.random.default_rng(6))
        a = gen_clip(clean, cfg, np.random.default_rng(9))
        b = gen_clip(clean, cfg, np.random.default_rng(9))
        np.testing.assert_array_equal(a.pixels, b.pixels)


class TestPreprocessClip:
    def _video(self, n_frames, size=16):
        rng = np.random.default_rng(0)
        return rng.uniform(0, 255, (3, n_frames, size, size)).astype(np.float32)

    def test_floor_division_480(self):
        video = self._video(480)
        label = np.random.default_rng(1).normal(size=480)
        assert len(preprocess_clip(video, label, 30.0)) == 3

    def test_trailing_partial_dropped(self):
        video = self._video(479)
        label = np.random.default_rng(1).normal(size=479)
        assert len(preprocess_clip(video, label, 30.0)) == 2

    def test_labels_zscored_per_clip(self):
        video = self._video(320)
        label = np.random.default_rng(2).normal(5.0, 3.0, 320)
        clips = preprocess_clip(video, label, 30.0)
        for _, trace in clips:
            assert abs(trace.samples.mean()) < 1e-9
            assert abs(trace.samples.std() - 1.0) < 1e-9

    def test_resize_preserves_spatial_mean(self):
        video = self._video(160, size=64)
        label = np.zeros(160)
        (clip, _), = preprocess_clip(video, label, 30.0, target_size=128)
        assert clip.pixels.shape == (3, 160, 128, 128)
        orig_mean = video.mean(axis=(2, 3))
        new_mean = clip.pixels.mean(axis=(2, 3))
        assert np.max(np.abs(new_mean - orig_mean) / np.abs(orig_mean)) < 0.01

    def test_length_mismatch_rejected(self):
        video = self._video(320)
        with pytest.raises(ValueError, match="mismatch"):
            preprocess_clip(video, np.zeros(310), 30.0)

    def test_one_frame_mismatch_trimmed(self):
        video = self._video(321)
        clips = preprocess_clip(video, np.random.default_rng(0).normal(size=320), 30.0)
        assert len(clips) == 2


class TestCorpusIO:
    def test_round_trip_bitwise(self, tmp_path):
        cfg = clean_cfg(n_videos=3, label_noise_std=0.1, pixel_noise_std=1.0)
        records = generate_corpus(cfg, splits={"train": 2, "test": 1})
        write_corpus(records, tmp_path, cfg)
        back = read_corpus(tmp_path)
        assert len(back) == len(records)
        for a, b in zip(records, back):
            assert a.record_id == b.record_id
            np.testing.assert_array_equal(
                a.clip.pixels.astype(np.float32), b.clip.pixels)
            np.testing.assert_array_equal(
                a.label.samples.astype(np.float32),
                b.label.samples.astype(np.float32))

    def test_manifest_lists_disjoint_splits(self, tmp_path):
        cfg = GenConfig(n_videos=10, clips_per_video=1, height=8, width=8, seed=1)
        records = generate_corpus(cfg)
        write_corpus(records, tmp_path, cfg)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert set(manifest["splits"]) == {"train", "val", "test"}
        all_ids = [v for vids in manifest["splits"].values() for v in vids]
        assert len(all_ids) == len(set(all_ids)) == 10

    def test_truncated_file_is_corruption_error(self, tmp_path):
        cfg = clean_cfg(n_videos=1)
        write_corpus(generate_corpus(cfg, splits={"train": 1}), tmp_path, cfg)
        victim = next((tmp_path / "clips").glob("*.pixels.f32"))
        victim.write_bytes(victim.read_bytes()[:-100])
        with pytest.raises(ValueError, match="corrupt"):
            read_corpus(tmp_path)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="manifest"):
            read_corpus(tmp_path)

    def test_split_filter(self, tmp_path):
        cfg = clean_cfg(n_videos=3)
        write_corpus(generate_corpus(cfg, splits={"train": 2, "test": 1}), tmp_path, cfg)
        assert len(read_corpus(tmp_path, split="test")) == 1


class TestCorpusInvariants:
    def test_split_leakage_detected(self):
        cfg = clean_cfg(n_videos=2)
        records = generate_corpus(cfg, splits={"train": 1, "test": 1})
        records[1].split = "test"
        records[1].video_id = records[0].video_id
        with pytest.raises(ValueError, match="splits"):
            split_videos(records)

    def test_generator_hr_matches_welch_peak(self):
        cfg = GenConfig(n_videos=6, clips_per_video=2, height=8, width=8,
                        label_noise_std=0.1, seed=2)
        records = generate_corpus(cfg)
        spec = psd_welch(records[0].clean)
        bin_bpm = 60.0 * (spec.freqs[1] - spec.freqs[0])
        for rec in records:
            hr = hr_from_trace(rec.clean, EVAL_BAND)
            assert abs(hr - rec.true_hr) <= bin_bpm

    def test_corpus_deterministic_across_calls(self):
        cfg = clean_cfg(n_videos=2, label_noise_std=0.2, pixel_noise_std=1.0)
        a = generate_corpus(cfg, splits={"train": 2})
        b = generate_corpus(cfg, splits={"train": 2})
        for ra, rb in zip(a, b):
            np.testing.assert_array_equal(ra.clip.pixels, rb.clip.pixels)
            np.testing.assert_array_equal(ra.label.samples, rb.label.samples)
