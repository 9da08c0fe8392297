import numpy as np
import pytest
import torch

from pulsebits import BandConfig, EVAL_BAND
from pulsebits.losses import (band_bin_range, commitment, distance_ce,
                              neg_pearson, spectral_ce, spectral_target_bin)


def fd_gradient(fn, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    g = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = g.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = fn(x).item()
        flat[i] = orig - eps
        lo = fn(x).item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def assert_grad_close(fn, x: torch.Tensor, rtol: float = 1e-3):
    x = x.detach().double().requires_grad_(True)
    fn(x).backward()
    analytic = x.grad.detach().clone()
    numeric = fd_gradient(fn, x.detach().clone())
    scale = max(analytic.abs().max().item(), numeric.abs().max().item(), 1e-8)
    assert (analytic - numeric).abs().max().item() / scale <= rtol


class TestNegPearson:
    def test_identical_is_zero(self):
        a = torch.tensor([1.0, 3.0, 2.0, 5.0])
        assert float(neg_pearson(a, a)) == pytest.approx(0.0, abs=1e-12)

    def test_anti_correlated_is_two(self):
        a = torch.tensor([1.0, 3.0, 2.0, 5.0])
        assert float(neg_pearson(a, -a)) == pytest.approx(2.0, abs=1e-12)

    def test_affine_invariance(self):
        b = torch.tensor([0.3, -1.2, 0.7, 2.0])
        assert float(neg_pearson(2 * b + 3, b)) == pytest.approx(0.0, abs=1e-10)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=50), rng.normal(size=50)
        assert float(neg_pearson(a, b)) == pytest.approx(float(neg_pearson(b, a)))

    def test_constant_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            neg_pearson(torch.ones(8), torch.arange(8.0))

    def test_gradient_both_args(self):
        rng = np.random.default_rng(3)
        a = torch.tensor(rng.normal(size=12))
        b = torch.tensor(rng.normal(size=12))
        assert_grad_close(lambda x: neg_pearson(x, b), a)
        assert_grad_close(lambda x: neg_pearson(a, x), b)


def tone_np(freq, fs=30.0, n=160, phase=0.0):
    t = np.arange(n) / fs
    return np.sin(2 * np.pi * freq * t + phase)


class TestSpectralCe:
    def test_matching_tone_ordering(self):
        target = torch.tensor(tone_np(1.5))
        match = spectral_ce(torch.tensor(tone_np(1.5, phase=0.3)), target, 30.0)
        mismatch = spectral_ce(torch.tensor(tone_np(1.0)), target, 30.0)
        assert float(match) < float(mismatch)

    def test_target_bin_arithmetic(self):
        # 1.2 Hz at fs=30, T=160: 1.2 * 160 / 30 = 6.4 -> nearest rfft bin 6
        assert spectral_target_bin(tone_np(1.2), 30.0) == 6

    def test_monotone_in_frequency_distance(self):
        # tones approach the target through half-bin offsets (integer offsets
        # sit on the rectangular-window leakage nulls)
        fs, n = 30.0, 160
        bin_w = fs / n
        target = torch.tensor(tone_np(1.5, n=n))
        tgt_bin = spectral_target_bin(target, fs)
        losses = []
        for offset in (3.5, 2.5, 1.5, 0.0):
            f = (tgt_bin - offset) * bin_w
            losses.append(float(spectral_ce(torch.tensor(tone_np(f, n=n)), target, fs)))
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_too_few_inband_bins_rejected(self):
        x = tone_np(1.5, fs=60.0, n=64)
        with pytest.raises(ValueError, match="bins"):
            spectral_ce(torch.tensor(x), torch.tensor(x), 60.0)

    def test_band_bin_range_counts(self):
        lo, hi = band_bin_range(160, 30.0, EVAL_BAND)
        assert (lo, hi) == (4, 13)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        target = torch.tensor(tone_np(1.4) + 0.1 * rng.normal(size=160))
        pred = torch.tensor(tone_np(1.1) + 0.1 * rng.normal(size=160))
        assert_grad_close(lambda x: spectral_ce(x, target, 30.0), pred)


class TestCommitment:
    def test_arithmetic_example(self):
        z = torch.tensor([1.0, 2.0])
        assert float(commitment(z, torch.zeros(2))) == pytest.approx(5.0)

    def test_no_gradient_to_target(self):
        z = torch.zeros(4, requires_grad=True)
        q = torch.ones(4, requires_grad=True)
        commitment(z, q).backward()
        assert q.grad is None

    def test_gradient(self):
        rng = np.random.default_rng(5)
        z = torch.tensor(rng.normal(size=10))
        q = torch.tensor(rng.normal(size=10))
        assert_grad_close(lambda x: commitment(x, q), z)


class TestDistanceCe:
    def test_exact_hit_near_zero(self):
        codes = torch.tensor([0.0, 10.0, 20.0, 30.0])
        logits = torch.full((1, 6), 0.0)
        idx = torch.zeros(1, 6, dtype=torch.long)
        assert float(distance_ce(logits, codes, idx)) <= 1e-3

    def test_equidistant_binary_is_ln2(self):
        codes = torch.tensor([-1.0, 1.0])
        logits = torch.zeros(1, 4)
        idx = torch.zeros(1, 4, dtype=torch.long)
        assert float(distance_ce(logits, codes, idx)) == pytest.approx(np.log(2.0))

    def test_uniform_distances_hit_entropy_bound(self):
        for bits in (1, 2, 3):
            k = 2**bits
            codes = torch.zeros(k)  # all codes identical -> uniform distances
            logits = torch.randn(2, 8, dtype=torch.float64)
            idx = torch.randint(0, k, (2, 8))
            assert float(distance_ce(logits, codes, idx)) == pytest.approx(np.log(k))

    def test_gradient(self):
        rng = np.random.default_rng(6)
        codes = torch.tensor(np.sort(rng.normal(size=8)))
        logits = torch.tensor(rng.normal(size=(2, 12)))
        idx = torch.tensor(rng.integers(0, 8, size=(2, 12)))
        assert_grad_close(lambda x: distance_ce(x, codes, idx), logits)
