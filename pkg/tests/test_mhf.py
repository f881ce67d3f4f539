import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsscrowd.config import MhfConfig
from vsscrowd.errors import ConfigurationError, DimensionError
from vsscrowd.gradcheck import check_gradients
from vsscrowd.mhf import MHFAttention, SharedStack, cem, hcem, mhf_enhance, msem, split_heads
from vsscrowd.ops import channel_max, channel_mean
from vsscrowd.nn import Conv2d
from vsscrowd.tensor import Tensor

from .conftest import SEEDS
from .oracles import cem_oracle, hcem_oracle, msem_oracle


def make_attn(rng, C=8, low=4, **kw):
    return MHFAttention(C, low, MhfConfig(**kw), rng)


class TestCem:
    def test_zero_stack_gives_half(self, rng):
        stack = SharedStack(8, 2, rng)
        for p in stack.parameters():
            p.data[...] = 0.0
        x = rng.normal(size=(8, 3, 3))
        W, out = cem(Tensor(x), stack)
        np.testing.assert_array_equal(W.data, 0.5)
        np.testing.assert_array_equal(out.data, 0.5 * x)

    def test_constant_channels_double_branch(self, rng):
        stack = SharedStack(4, 2, rng)
        x = np.broadcast_to(rng.normal(size=(4, 1, 1)), (4, 5, 5)).copy()
        W, _ = cem(Tensor(x), stack)
        np.testing.assert_allclose(W.data, 1 / (1 + np.exp(-2 * stack(Tensor(x[:, :1, :1])).data)), atol=1e-14)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_matches_equation_oracle(self, seed):
        r = np.random.default_rng(seed)
        stack = SharedStack(8, 2, r)
        x = r.normal(size=(8, 4, 6))
        W, out = cem(Tensor(x), stack)
        W_o, out_o = cem_oracle(x, stack.reduce.weight.data, stack.expand.weight.data)
        assert np.abs(W.data.ravel() - W_o).max() < 1e-12
        assert np.abs(out.data - out_o).max() < 1e-12

    def test_ratio_is_channel_weight(self, rng):
        stack = SharedStack(4, 1, rng)
        x = rng.normal(size=(4, 3, 3)) + 5.0
        W, out = cem(Tensor(x), stack)
        np.testing.assert_allclose(out.data / x, np.broadcast_to(W.data, x.shape), rtol=1e-13)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradcheck(self, seed):
        r = np.random.default_rng(seed)
        stack = SharedStack(8, 2, r)
        rep = check_gradients(lambda t: cem(t, stack)[1], Tensor(r.normal(size=(8, 4, 4))), 1e-4,
                              params=stack.parameters(), weights=r.normal(size=(8, 4, 4)), name="cem")
        assert rep.passed, rep


class TestMsem:
    def test_shape(self, rng):
        convs = [Conv2d(2, 1, 3, rng, padding=1, bias=False) for _ in range(4)]
        assert msem(Tensor(rng.normal(size=(8, 5, 5))), convs).shape == (4, 5, 5)

    def test_identical_channels_max_equals_mean(self, rng):
        x = np.broadcast_to(rng.normal(size=(1, 4, 4)), (8, 4, 4)).copy()
        for g in split_heads(Tensor(x), 4):
            assert g.shape == (2, 4, 4)
            np.testing.assert_array_equal(channel_max(g).data, channel_mean(g).data)

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("heads", [1, 2, 4])
    def test_matches_group_oracle(self, seed, heads):
        r = np.random.default_rng(seed)
        convs = [Conv2d(2, 1, 7, r, padding=3, bias=False) for _ in range(heads)]
        x = r.normal(size=(8, 5, 6))
        out = msem(Tensor(x), convs).data
        assert np.abs(out - msem_oracle(x, [c.weight.data for c in convs])).max() < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), perm_seed=st.integers(0, 2**31))
    def test_invariant_to_permutation_within_group(self, seed, perm_seed):
        r = np.random.default_rng(seed)
        convs = [Conv2d(2, 1, 3, r, padding=1, bias=False) for _ in range(4)]
        x = r.normal(size=(8, 4, 4))
        perm = np.concatenate([g * 2 + np.random.default_rng(perm_seed + g).permutation(2) for g in range(4)])
        np.testing.assert_allclose(msem(Tensor(x[perm]), convs).data, msem(Tensor(x), convs).data, atol=1e-14)

    def test_single_head_is_global_spatial_attention(self, rng):
        conv = Conv2d(2, 1, 3, rng, padding=1, bias=False)
        x = rng.normal(size=(8, 4, 4))
        stats = np.stack([x.max(axis=0), x.mean(axis=0)])
        np.testing.assert_allclose(msem(Tensor(x), [conv]).data, conv(Tensor(stats)).data, atol=1e-14)

    def test_indivisible_heads(self, rng):
        with pytest.raises(ConfigurationError):
            make_attn(rng, C=6, num_heads=4, reduction=2)


class TestHcem:
    def test_zero_weights_give_half(self, rng):
        stack, fuse = SharedStack(4, 1, rng), Conv2d(4, 1, 1, rng)
        for p in stack.parameters() + fuse.parameters():
            p.data[...] = 0.0
        out = hcem(Tensor(rng.normal(size=(4, 3, 3))), stack, fuse, 2)
        assert out.shape == (1, 6, 6)
        np.testing.assert_allclose(out.data, 0.5, atol=1e-15)

    def test_factor_one_preserves_layout(self, rng):
        stack, fuse = SharedStack(4, 1, rng), Conv2d(4, 1, 1, rng)
        for p in stack.parameters():
            p.data[...] = 0.0
        fuse.weight.data[...] = 0.0
        fuse.weight.data[0, 0] = 2.0  # picks head 0, doubled to undo the 0.5 channel weight
        fuse.bias.data[...] = 0.0
        x = rng.normal(size=(4, 3, 5))
        np.testing.assert_allclose(hcem(Tensor(x), stack, fuse, 1).data[0], 1 / (1 + np.exp(-x[0])), atol=1e-14)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_matches_equation_oracle(self, seed):
        r = np.random.default_rng(seed)
        stack, fuse = SharedStack(4, 1, r), Conv2d(4, 1, 1, r)
        x = r.normal(size=(4, 3, 4))
        out = hcem(Tensor(x), stack, fuse, 2).data
        ref = hcem_oracle(x, stack.reduce.weight.data, stack.expand.weight.data,
                          fuse.weight.data, fuse.bias.data, 2)
        assert np.abs(out - ref).max() < 1e-12

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradcheck(self, seed):
        r = np.random.default_rng(seed)
        stack, fuse = SharedStack(4, 1, r), Conv2d(4, 1, 1, r)
        rep = check_gradients(lambda t: hcem(t, stack, fuse, 2), Tensor(r.normal(size=(4, 4, 4))), 1e-4,
                              params=stack.parameters() + fuse.parameters(),
                              weights=r.normal(size=(1, 8, 8)), name="hcem")
        assert rep.passed, rep


class TestEnhance:
    def test_all_ones_gate_is_identity(self, rng, monkeypatch):
        attn = make_attn(rng)
        monkeypatch.setattr(attn, "gate", lambda F_h, f: Tensor(np.ones((1, 8, 8))))
        x = rng.normal(size=(4, 8, 8))
        np.testing.assert_array_equal(mhf_enhance(Tensor(x), Tensor(rng.normal(size=(8, 4, 4))), attn).data, x)

    def test_zero_low_level(self, rng):
        out = mhf_enhance(Tensor(np.zeros((4, 8, 8))), Tensor(rng.normal(size=(8, 4, 4))), make_attn(rng))
        assert not out.data.any()

    @pytest.mark.parametrize("seed", SEEDS)
    def test_matches_composed_oracle(self, seed):
        r = np.random.default_rng(seed)
        attn = make_attn(r)
        F_l, F_h = r.normal(size=(4, 8, 8)), r.normal(size=(8, 4, 4))
        _, o1 = cem_oracle(F_h, attn.cem_stack.reduce.weight.data, attn.cem_stack.expand.weight.data)
        o2 = msem_oracle(o1, [c.weight.data for c in attn.head_convs])
        o3 = hcem_oracle(o2, attn.hcem_stack.reduce.weight.data, attn.hcem_stack.expand.weight.data,
                         attn.fuse.weight.data, attn.fuse.bias.data, 2)
        out = mhf_enhance(Tensor(F_l), Tensor(F_h), attn).data
        assert np.abs(out - F_l * o3).max() < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), scale=st.floats(0.01, 100))
    def test_attenuates_never_amplifies(self, seed, scale):
        r = np.random.default_rng(seed)
        attn = make_attn(r)
        F_l = r.normal(size=(4, 8, 8))
        inter = attn.intermediates(Tensor(scale * r.normal(size=(8, 4, 4))), 2)
        assert ((inter.W.data > 0) & (inter.W.data < 1)).all()
        assert ((inter.F_out3.data > 0) & (inter.F_out3.data < 1)).all()
        assert (np.abs(F_l * inter.F_out3.data) <= np.abs(F_l)).all()

    def test_intermediate_shapes(self, rng):
        inter = make_attn(rng).intermediates(Tensor(rng.normal(size=(8, 4, 4))), 2)
        assert inter.F_out1.shape == (8, 4, 4)
        assert inter.F_out2.shape == (4, 4, 4)
        assert inter.F_out3.shape == (1, 8, 8)
        assert len(inter.groups) == len(inter.G) == 4

    def test_non_integer_ratio(self, rng):
        with pytest.raises(DimensionError):
            mhf_enhance(Tensor(np.zeros((4, 6, 6))), Tensor(np.zeros((8, 4, 4))), make_attn(rng))

    @pytest.mark.parametrize("stages", ["cem", "cem+msem"])
    def test_reduced_stage_variants_run(self, rng, stages):
        out = mhf_enhance(Tensor(rng.normal(size=(4, 8, 8))), Tensor(rng.normal(size=(8, 4, 4))),
                          make_attn(rng, stages=stages))
        assert out.shape == (4, 8, 8)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradcheck(self, seed):
        r = np.random.default_rng(seed)
        attn = make_attn(r, spatial_kernel=3)
        F_l, F_h = Tensor(r.normal(size=(4, 8, 8))), Tensor(r.normal(size=(8, 4, 4)))
        rep = check_gradients(lambda a, b: mhf_enhance(a, b, attn), [F_l, F_h], 1e-4,
                              params=attn.parameters(), weights=r.normal(size=(4, 8, 8)), name="mhf_enhance")
        assert rep.passed, rep
