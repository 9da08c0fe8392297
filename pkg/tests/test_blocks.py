import numpy as np
import pytest
import torch

from pulsebits.blocks import (BiMamba, DilatedConvBlock, PositionalEncoding,
                              SequenceNorm, load_params, param_count, save_params,
                              soft_reconstruct)
from gradcheck import check_gradients, fd_gradient, module_param_tensors


def zero_module(module: torch.nn.Module) -> torch.nn.Module:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


class TestDilatedConvBlock:
    def test_receptive_field_is_125(self):
        assert DilatedConvBlock().receptive_field == 125

    def test_zero_weights_zero_output(self):
        block = zero_module(DilatedConvBlock())
        x = torch.randn(2, 40, 1)
        assert torch.all(block(x) == 0)

    def test_delta_kernel_is_identity(self):
        # single layer, no activation after the last layer
        block = DilatedConvBlock(kernel=5, dilations=(1,))
        with torch.no_grad():
            block.convs[0].weight.zero_()
            block.convs[0].weight[0, 0, 2] = 1.0
            block.convs[0].bias.zero_()
        x = torch.randn(1, 16, 1)
        torch.testing.assert_close(block(x), x)

    def test_length_preserved_with_gelu_stack(self):
        block = DilatedConvBlock()
        out = block(torch.randn(3, 160, 1))
        assert out.shape == (3, 160, 1)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(0)
        block = DilatedConvBlock(kernel=3, dilations=(1, 2)).double()
        x = torch.randn(1, 8, 1, dtype=torch.float64, requires_grad=True)
        tensors = [x] + module_param_tensors(block)
        check_gradients(lambda: block(x).pow(2).sum(), tensors, n_directions=6)

    def test_full_coordinate_fd_on_input(self):
        torch.manual_seed(1)
        block = DilatedConvBlock(kernel=3, dilations=(1,)).double()
        x = torch.randn(1, 6, 1, dtype=torch.float64, requires_grad=True)
        loss = block(x).pow(2).sum()
        loss.backward()
        xp = x.detach().clone()
        numeric = fd_gradient(lambda: block(xp).pow(2).sum(), xp)
        torch.testing.assert_close(x.grad, numeric, rtol=1e-3, atol=1e-6)


class TestSequenceNorm:
    def test_zero_input_zero_output(self):
        norm = SequenceNorm(4)
        assert torch.all(norm(torch.zeros(2, 10, 4)) == 0)

    def test_normalizes_over_time(self):
        norm = SequenceNorm(3)
        x = torch.randn(2, 50, 3) * 4 + 7
        out = norm(x)
        torch.testing.assert_close(out.mean(dim=1), torch.zeros(2, 3), atol=1e-5, rtol=0)
        torch.testing.assert_close(out.var(dim=1, unbiased=False),
                                   torch.ones(2, 3), atol=1e-3, rtol=0)


class TestBiMamba:
    def test_zero_weights_residual_identity(self):
        block = BiMamba(d=2)
        zero_module(block.fwd)
        zero_module(block.bwd)
        x = torch.randn(2, 12, 2)
        torch.testing.assert_close(block(x), x)

    def test_time_reversal_equivariance_tied(self):
        torch.manual_seed(3)
        block = BiMamba(d=2, tie_directions=True).double()
        x = torch.randn(1, 10, 2, dtype=torch.float64)
        fwd = block.mix(x)
        rev = block.mix(torch.flip(x, dims=[1]))
        torch.testing.assert_close(rev, torch.flip(fwd, dims=[1]), atol=1e-6, rtol=1e-6)

    def test_shape_preserved(self):
        block = BiMamba(d=1)
        assert block(torch.randn(4, 37, 1)).shape == (4, 37, 1)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(4)
        block = BiMamba(d=2).double()
        x = torch.randn(1, 6, 2, dtype=torch.float64, requires_grad=True)
        tensors = [x] + module_param_tensors(block)
        check_gradients(lambda: block(x).pow(2).sum(), tensors, n_directions=6)

    def test_nonfinite_input_reported(self):
        block = BiMamba(d=1)
        x = torch.full((1, 8, 1), torch.nan)
        with pytest.raises(FloatingPointError, match="selective scan"):
            block(x)


class TestSoftReconstruct:
    def test_near_one_hot(self):
        codes = torch.tensor([0.5, 11.0, 22.0])
        out = soft_reconstruct(torch.tensor([0.5]), codes)
        assert abs(float(out[0]) - 0.5) < 1e-3

    def test_symmetric_average(self):
        codes = torch.tensor([-1.0, 1.0])
        out = soft_reconstruct(torch.tensor([0.0]), codes)
        assert float(out[0]) == pytest.approx(0.0, abs=1e-12)

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(6)
        codes = torch.tensor(np.sort(rng.normal(size=16)))
        logits = torch.tensor(rng.normal(scale=5.0, size=(3, 40)))
        out = soft_reconstruct(logits, codes)
        assert torch.all(out >= codes.min())
        assert torch.all(out <= codes.max())

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        codes = torch.tensor(np.sort(rng.normal(size=4)))
        logits = torch.tensor(rng.normal(size=12), requires_grad=True)
        loss = soft_reconstruct(logits, codes).pow(2).sum()
        loss.backward()
        lp = logits.detach().clone()
        numeric = fd_gradient(lambda: soft_reconstruct(lp, codes).pow(2).sum(), lp)
        torch.testing.assert_close(logits.grad, numeric, rtol=1e-3, atol=1e-6)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError, match="temperature"):
            soft_reconstruct(torch.zeros(3), torch.tensor([0.0, 1.0]), temperature=0.0)


class TestPositionalEncoding:
    def test_shape(self):
        pe = PositionalEncoding(160, 64)
        assert pe(160).shape == (160, 64)

    def test_fresh_init_norm_bound(self):
        for seed in range(20):
            torch.manual_seed(seed)
            pe = PositionalEncoding(160, 64)
            norm = torch.linalg.norm(pe.table)
            assert norm <= 0.05 * np.sqrt(160 * 64)

    def test_length_mismatch_rejected(self):
        pe = PositionalEncoding(160, 64)
        with pytest.raises(ValueError, match="160"):
            pe(128)

    def test_unchanged_without_gradients(self):
        pe = PositionalEncoding(32, 8)
        before = pe.table.detach().clone()
        opt = torch.optim.AdamW(pe.parameters(), lr=1e-2)
        opt.step()  # no gradients accumulated
        torch.testing.assert_close(pe.table.detach(), before)


class TestParamCount:
    def test_linear_with_bias(self):
        assert param_count(torch.nn.Linear(64, 1)) == 65

    def test_empty_module(self):
        assert param_count(torch.nn.Sequential()) == 0

    def test_frozen_params_excluded(self):
        lin = torch.nn.Linear(8, 8)
        lin.bias.requires_grad_(False)
        assert param_count(lin) == 64


class TestParamCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        torch.manual_seed(8)
        block = BiMamba(d=2)
        save_params(block, tmp_path / "ckpt", manifest={"stage": 1, "seed": 8})
        clone = BiMamba(d=2)
        meta = load_params(clone, tmp_path / "ckpt")
        assert meta["stage"] == 1
        for (name, a), (_, b) in zip(block.state_dict().items(),
                                     clone.state_dict().items()):
            torch.testing.assert_close(a, b, atol=0, rtol=0, msg=name)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="manifest"):
            load_params(BiMamba(d=1), tmp_path / "nothing")
