import numpy as np
import pytest
import torch
from torch.autograd import gradcheck

from irrflow.blocks import KernelHead, ResBlockStack, zero_head
from irrflow.model import ModelConfig, build_model, parameter_registry
from irrflow.ops import nearest_upsample_x2
from irrflow.refine import BilateralRefiner, OcclusionUpsampler, apply_bilateral
from oracles import conv_param_count, local_filter_oracle


def normalized_kernels(b, win, h, w, seed=0):
    g = torch.Generator().manual_seed(seed)
    raw = torch.rand(b, win * win, h, w, generator=g, dtype=torch.float64)
    return raw / raw.sum(dim=1, keepdim=True)


class TestKernelHeads:
    def test_uniform_logits_give_uniform_kernels(self):
        head = KernelHead(4, window=3).double()
        zero_head(head)
        x = torch.randn(1, 4, 5, 5, dtype=torch.float64)
        kernels = head(x)
        assert torch.allclose(kernels, torch.full_like(kernels, 1.0 / 9.0), atol=1e-12)

    def test_kernels_normalized_and_nonnegative(self):
        head = KernelHead(6, window=5).double()
        x = torch.randn(2, 6, 6, 6, dtype=torch.float64)
        kernels = head(x)
        sums = kernels.sum(dim=1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)
        assert kernels.min().item() >= 0.0

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            KernelHead(4, window=4)

    def test_parameter_count_closed_form(self):
        in_ch = 34
        head = KernelHead(in_ch, window=5, width=32, depth=2)
        expected = (conv_param_count(3, in_ch, 32)
                    + conv_param_count(3, 32, 32)
                    + conv_param_count(3, 32, 25))
        assert sum(p.numel() for p in head.parameters()) == expected

    def test_occlusion_head_is_one_extra_parameter_set(self):
        flow_only = BilateralRefiner(8, occlusion=False)
        both = BilateralRefiner(8, occlusion=True)
        reg_flow = parameter_registry(flow_only)
        reg_both = parameter_registry(both)
        assert set(reg_both) - set(reg_flow) == {"occ_kernels"}
        assert reg_both["flow_kernels"] == reg_flow["flow_kernels"]


class TestApplyBilateral:
    def test_constant_field_preserved_in_interior(self):
        field = torch.full((1, 1, 6, 6), 3.25, dtype=torch.float64)
        kernels = normalized_kernels(1, 3, 6, 6, seed=1)
        out = apply_bilateral(field, kernels)
        assert torch.allclose(out[0, 0, 1:-1, 1:-1],
                              torch.full((4, 4), 3.25, dtype=torch.float64), atol=1e-12)

    def test_one_hot_center_is_identity(self):
        field = torch.randn(1, 1, 5, 5, dtype=torch.float64)
        kernels = torch.zeros(1, 9, 5, 5, dtype=torch.float64)
        kernels[:, 4] = 1.0  # center of a 3x3 window
        assert torch.allclose(apply_bilateral(field, kernels), field, atol=1e-12)

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            field = rng.normal(size=(6, 6))
            kernels = rng.uniform(size=(9, 6, 6))
            kernels /= kernels.sum(axis=0, keepdims=True)
            got = apply_bilateral(
                torch.as_tensor(field[None, None]), torch.as_tensor(kernels[None]))
            expected = local_filter_oracle(field, kernels, 3)
            np.testing.assert_allclose(got[0, 0].numpy(), expected, atol=1e-12)

    def test_misaligned_shapes(self):
        with pytest.raises(ValueError):
            apply_bilateral(torch.zeros(1, 1, 4, 4), torch.zeros(1, 9, 5, 4))
        with pytest.raises(ValueError):
            apply_bilateral(torch.zeros(1, 2, 4, 4), torch.zeros(1, 9, 4, 4))

    def test_gradcheck(self):
        field = torch.randn(1, 1, 4, 4, dtype=torch.float64, requires_grad=True)
        kernels = normalized_kernels(1, 3, 4, 4, seed=3).requires_grad_(True)
        assert gradcheck(apply_bilateral, (field, kernels), rtol=1e-3)


class TestBilateralRefiner:
    def test_flow_refinement_keeps_constant_flow_interior(self):
        refiner = BilateralRefiner(4, window=3, occlusion=False).double()
        feature = torch.randn(1, 4, 6, 6, dtype=torch.float64)
        flow = torch.ones(1, 2, 6, 6, dtype=torch.float64) * 2.5
        refined = refiner.refine_flow(feature, flow)
        assert torch.allclose(refined[:, :, 1:-1, 1:-1], flow[:, :, 1:-1, 1:-1], atol=1e-10)

    def test_occ_refinement_requires_occlusion_head(self):
        refiner = BilateralRefiner(4, occlusion=False)
        with pytest.raises(RuntimeError):
            refiner.refine_occ(torch.zeros(1, 1, 4, 4), torch.zeros(1, 4, 4, 4),
                               torch.zeros(1, 4, 4, 4))

    def test_shared_vs_per_level_parameter_ordering(self):
        # one refiner reused across levels always beats per-level copies
        for levels in (2, 3, 4, 5):
            shared = build_model(ModelConfig(
                variant="pwc", levels=levels, base_scale_exp=1,
                bilateral_refinement=True, occlusion=True, bidirectional=True))
            per_level = build_model(ModelConfig(
                variant="pwc", levels=levels, base_scale_exp=1,
                bilateral_refinement=True, occlusion=True, bidirectional=True,
                weight_sharing="per_stage"))
            shared_ref = parameter_registry(shared)["refiners"]
            per_level_ref = parameter_registry(per_level)["refiners"]
            assert per_level_ref == levels * shared_ref
            assert shared_ref < per_level_ref


class TestResBlockStack:
    def test_zero_head_gives_zero_residual(self):
        stack = ResBlockStack(5, width=8).double()
        zero_head(stack)
        x = torch.randn(2, 5, 6, 6, dtype=torch.float64)
        assert stack(x).abs().max().item() == 0.0

    def test_blocks_share_one_parameter_set(self):
        stack = ResBlockStack(5, width=8)
        reg = parameter_registry(stack)
        assert set(reg) == {"entry", "block", "mid", "head"}
        expected_block = 2 * conv_param_count(3, 8, 8)
        assert reg["block"] == expected_block


class TestOcclusionUpsampler:
    def make(self, channels=3, width=8):
        return OcclusionUpsampler(channels, width=width).double()

    def rand_inputs(self, channels=3, h=4, w=4, seed=0):
        g = torch.Generator().manual_seed(seed)
        occ = torch.randn(1, 1, h, w, generator=g, dtype=torch.float64)
        f_own = torch.rand(1, 2, h, w, generator=g, dtype=torch.float64) * 0.3 + 0.1
        f_other = -torch.rand(1, 2, h, w, generator=g, dtype=torch.float64) * 0.3 - 0.1
        feat_own = torch.randn(1, channels, h, w, generator=g, dtype=torch.float64)
        feat_other = torch.randn(1, channels, h, w, generator=g, dtype=torch.float64)
        return occ, f_own, f_other, feat_own, feat_other

    def test_zero_head_reduces_to_nearest_upsampling(self):
        ups = self.make()
        zero_head(ups.stack)
        occ, f_own, f_other, feat_own, feat_other = self.rand_inputs()
        out = ups(occ, f_own, f_other, feat_own, feat_other)
        assert torch.equal(out, nearest_upsample_x2(occ))

    def test_double_application_reaches_full_resolution(self):
        ups = self.make()
        inputs_q = self.rand_inputs(h=4, w=6, seed=1)
        half = ups(*inputs_q)
        assert half.shape == (1, 1, 8, 12)
        occ, f_own, f_other, feat_own, feat_other = self.rand_inputs(h=8, w=12, seed=2)
        full = ups(half, f_own, f_other, feat_own, feat_other)
        assert full.shape == (1, 1, 16, 24)
        # same module, same parameters, both applications
        assert len(parameter_registry(ups)) == 1

    def test_resolution_mismatch_rejected(self):
        ups = self.make()
        occ, f_own, f_other, feat_own, feat_other = self.rand_inputs()
        with pytest.raises(ValueError):
            ups(occ, f_own, f_other, feat_own[:, :, :2], feat_other)

    def test_gradcheck(self):
        ups = self.make(channels=2, width=4)
        inputs = tuple(x.requires_grad_(True) for x in self.rand_inputs(channels=2))
        assert gradcheck(ups, inputs, rtol=1e-3)

    def test_overhead_below_five_percent_of_backbone(self):
        model = build_model(ModelConfig(
            variant="pwc", levels=3, base_scale_exp=2,
            bidirectional=True, occlusion=True,
            bilateral_refinement=True, occlusion_upsampling=True))
        reg = parameter_registry(model)
        upsampler = reg["occ_upsampler"] + reg["upsampler_feature_adapters"]
        backbone = sum(v for k, v in reg.items()
                       if k not in ("occ_upsampler", "upsampler_feature_adapters"))
        assert upsampler < 0.05 * backbone
