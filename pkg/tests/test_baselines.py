import numpy as np
import pytest

from pulsebits import ClipTensor, hr_from_trace
from pulsebits.baselines import (chrom_alpha, chrom_method, extract_rgb,
                                 green_method, pos_method)
from pulsebits.datagen import GenConfig, gen_clip, gen_pulse
from pulsebits.types import PulseTrace, RgbTrace


def make_clip(pulse_gain=2.0, pixel_noise=0.0, hr=75.0, n=480, seed=0):
    cfg = GenConfig(n_videos=1, clips_per_video=1, height=16, width=16,
                    pulse_gain=pulse_gain, pixel_noise_std=pixel_noise, seed=seed)
    rng = np.random.default_rng(seed)
    _, clean, _ = gen_pulse(cfg, np.full(n, hr), rng)
    return gen_clip(clean, cfg, rng), clean


class TestExtractRgb:
    def test_constant_clip(self):
        clip = ClipTensor(np.full((3, 200, 8, 8), 42.0, dtype=np.float32), 30.0)
        rgb = extract_rgb(clip)
        np.testing.assert_allclose(rgb.r, 42.0)
        np.testing.assert_allclose(rgb.g, 42.0)

    def test_green_carries_pulse(self):
        clip, clean = make_clip(pulse_gain=2.0)
        rgb = extract_rgb(clip)
        rho = np.corrcoef(rgb.g, clean.samples)[0, 1]
        assert rho >= 0.9

    def test_two_channel_clip_rejected(self):
        with pytest.raises(ValueError, match="4-D|channels"):
            extract_rgb(ClipTensor(np.zeros((2, 10, 4, 4), dtype=np.float32), 30.0))


class TestGreenMethod:
    def test_noiseless_hr(self):
        clip, _ = make_clip()
        hr = hr_from_trace(green_method(extract_rgb(clip)))
        assert abs(hr - 75.0) <= 1.0

    def test_constant_clip_has_no_peak(self):
        clip = ClipTensor(np.full((3, 480, 8, 8), 100.0, dtype=np.float32), 30.0)
        trace = green_method(extract_rgb(clip))
        with pytest.raises(ValueError, match="no dominant peak"):
            hr_from_trace(trace)

    def test_tone_on_drift(self):
        t = np.arange(480) / 30.0
        g = np.sin(2 * np.pi * 1.5 * t) + 3.0 * np.sin(2 * np.pi * 0.05 * t) + 100.0
        rgb = RgbTrace(np.full_like(g, 90.0), g, np.full_like(g, 80.0), 30.0)
        assert abs(hr_from_trace(green_method(rgb)) - 90.0) <= 2.0


class TestChromMethod:
    def test_alpha_ratio(self):
        rng = np.random.default_rng(0)
        xf = rng.normal(0, 2.0, 4000)
        yf = rng.normal(0, 4.0, 4000)
        assert chrom_alpha(xf, yf) == pytest.approx(0.5, abs=0.05)

    def test_identical_channels_cancel(self):
        t = np.arange(480) / 30.0
        p = 100.0 + np.sin(2 * np.pi * 1.2 * t)
        rgb = RgbTrace(p, p, p, 30.0)
        trace = chrom_method(rgb)
        with pytest.raises(ValueError, match="no dominant peak"):
            hr_from_trace(trace)

    def test_mild_noise_hr(self):
        clip, _ = make_clip(pixel_noise=1.0, seed=3)
        hr = hr_from_trace(chrom_method(extract_rgb(clip)))
        assert abs(hr - 75.0) <= 2.0

    def test_zero_mean_channel_rejected(self):
        rgb = RgbTrace(np.zeros(480), np.ones(480), np.ones(480), 30.0)
        with pytest.raises(ValueError, match="zero mean"):
            chrom_method(rgb)


class TestPosMethod:
    def test_window_arithmetic(self):
        assert int(round(1.6 * 30.0)) == 48

    def test_noiseless_hr(self):
        clip, _ = make_clip(seed=4)
        hr = hr_from_trace(pos_method(extract_rgb(clip)))
        assert abs(hr - 75.0) <= 1.0

    def test_constant_clip_zero_output(self):
        clip = ClipTensor(np.full((3, 480, 8, 8), 77.0, dtype=np.float32), 30.0)
        trace = pos_method(extract_rgb(clip))
        np.testing.assert_allclose(trace.samples, 0.0)

    def test_short_trace_rejected(self):
        rgb = RgbTrace(np.ones(30), np.ones(30), np.ones(30), 30.0)
        with pytest.raises(ValueError, match="window"):
            pos_method(rgb)


class TestScaleInvariance:
    @pytest.mark.parametrize("method", [green_method, chrom_method, pos_method])
    def test_global_gain_does_not_change_hr(self, method):
        clip, _ = make_clip(pixel_noise=0.5, seed=5)
        scaled = ClipTensor(np.clip(clip.pixels * 0.5, 0, 255), clip.fs)
        hr_a = hr_from_trace(method(extract_rgb(clip)))
        hr_b = hr_from_trace(method(extract_rgb(scaled)))
        assert hr_a == pytest.approx(hr_b, abs=1e-9)

    def test_outputs_finite(self):
        clip, _ = make_clip(pixel_noise=3.0, seed=6)
        rgb = extract_rgb(clip)
        for method in (green_method, chrom_method, pos_method):
            assert np.all(np.isfinite(method(rgb).samples))
