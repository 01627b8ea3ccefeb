import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import oracle_conv4d, oracle_topk
from qclnet import tensor_ops
from qclnet.aggregation import (AggLayerParams, SeparableKernel4d, aggregate,
                                outer_product_kernel, plan_support_strides,
                                separable_conv4d, t_aggregate, t_group_norm,
                                topk_aggregate)
from qclnet.autograd import Variable
from qclnet.errors import ConfigError, ShapeError, ValidationError


def delta_kernel(ch, size=3):
    k = np.zeros((ch, ch, size, size))
    for i in range(ch):
        k[i, i, size // 2, size // 2] = 1.0
    return k


def layer_params(rng, in_ch, out_ch, stride_s, groups=2):
    kq = rng.standard_normal((out_ch, in_ch, 3, 3)) * 0.3
    ks = rng.standard_normal((out_ch, out_ch, 3, 3)) * 0.3
    return AggLayerParams(SeparableKernel4d(kq, ks, 1, stride_s),
                          np.ones(out_ch), np.zeros(out_ch), groups=groups)


class TestSeparableKernel4d:
    def test_even_kernel_rejected(self):
        with pytest.raises(ValidationError):
            SeparableKernel4d(np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 3)))

    def test_channel_chain_rejected(self):
        with pytest.raises(ShapeError):
            SeparableKernel4d(np.ones((2, 1, 3, 3)), np.ones((3, 2, 3, 3)))

    def test_bad_stride(self):
        with pytest.raises(ValidationError):
            SeparableKernel4d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)),
                              stride_q=0)

    def test_default_pads_are_centered(self):
        k = SeparableKernel4d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 1, 1)))
        assert k.pads() == (1, 0)


class TestSeparableConv4d:
    def test_delta_identity(self):
        rng = np.random.default_rng(0)
        c = rng.standard_normal((2, 3, 3, 4, 4))
        k = SeparableKernel4d(delta_kernel(2), delta_kernel(2))
        assert np.allclose(separable_conv4d(c, k), c, atol=1e-14)

    def test_all_ones_interior_81(self):
        c = np.ones((1, 5, 5, 5, 5))
        k = SeparableKernel4d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)),
                              pad_q=0, pad_s=0)
        out = separable_conv4d(c, k)
        assert out.shape == (1, 3, 3, 3, 3)
        assert np.array_equal(out, np.full((1, 3, 3, 3, 3), 81.0))

    def test_outer_product_matches_conv4d(self):
        rng = np.random.default_rng(1)
        c = rng.standard_normal((1, 4, 4, 4, 4))
        k = SeparableKernel4d(rng.standard_normal((1, 1, 3, 3)),
                              rng.standard_normal((1, 1, 3, 3)))
        full = outer_product_kernel(k)
        want = tensor_ops.conv4d(c, full, pad_q=1, pad_s=1)
        np.testing.assert_allclose(separable_conv4d(c, k), want, atol=1e-12)

    @given(st.integers(0, 10_000), st.sampled_from([1, 2]),
           st.sampled_from([1, 2]))
    @settings(max_examples=20, deadline=None)
    def test_loop_oracle(self, seed, sq, ss):
        rng = np.random.default_rng(seed)
        c = rng.standard_normal((1, 4, 4, 4, 4))
        k = SeparableKernel4d(rng.standard_normal((1, 1, 3, 3)),
                              rng.standard_normal((1, 1, 3, 3)),
                              stride_q=sq, stride_s=ss)
        full = outer_product_kernel(k)
        want = oracle_conv4d(c, full, stride_q=sq, stride_s=ss,
                             pad_q=1, pad_s=1)
        np.testing.assert_allclose(separable_conv4d(c, k), want, atol=1e-12)

    def test_channel_mismatch(self):
        k = SeparableKernel4d(np.ones((1, 2, 3, 3)), np.ones((1, 1, 3, 3)))
        with pytest.raises(ShapeError):
            separable_conv4d(np.ones((3, 2, 2, 2, 2)), k)


class TestStridePlan:
    def test_power_of_two(self):
        assert plan_support_strides(8) == [1, 2, 2]
        assert plan_support_strides(2) == [1]

    def test_odd_extents(self):
        # 15 -> 8 -> 4 -> 2 under ceil-halving
        assert plan_support_strides(15) == [1, 2, 2, 2]
        assert plan_support_strides(3) == [1, 2]

    def test_too_small(self):
        with pytest.raises(ConfigError):
            plan_support_strides(1)


class TestAggregate:
    def test_support_8_reduces_4_then_2(self):
        rng = np.random.default_rng(2)
        c = rng.standard_normal((3, 6, 6, 8, 8))
        layers = [layer_params(rng, 3 if i == 0 else 8, 8, s)
                  for i, s in enumerate(plan_support_strides(8))]
        out = aggregate(c, layers, target_d=8)
        assert out.shape == (6, 6, 2, 2, 8)

    def test_query_extent_unchanged(self):
        rng = np.random.default_rng(3)
        c = rng.standard_normal((2, 16, 16, 4, 4))
        layers = [layer_params(rng, 2 if i == 0 else 4, 4, s)
                  for i, s in enumerate(plan_support_strides(4))]
        out = aggregate(c, layers, target_d=4)
        assert out.shape[:2] == (16, 16)

    def test_channel_projection_happens_first(self):
        rng = np.random.default_rng(4)
        c = rng.standard_normal((3, 4, 4, 2, 2))
        layers = [layer_params(rng, 3, 8, 1)]
        out = aggregate(c, layers, target_d=8)
        assert out.shape == (4, 4, 2, 2, 8)

    def test_odd_support_extent(self):
        rng = np.random.default_rng(5)
        c = rng.standard_normal((2, 3, 3, 15, 15))
        strides = plan_support_strides(15)
        layers = [layer_params(rng, 2 if i == 0 else 4, 4, s)
                  for i, s in enumerate(strides)]
        out = aggregate(c, layers, target_d=4)
        assert out.shape == (3, 3, 2, 2, 4)

    def test_wrong_endpoint_rejected(self):
        rng = np.random.default_rng(6)
        c = rng.standard_normal((2, 3, 3, 8, 8))
        layers = [layer_params(rng, 2, 4, 1), layer_params(rng, 4, 4, 2)]
        with pytest.raises(ShapeError):
            aggregate(c, layers, target_d=4)

    def test_wrong_width_rejected(self):
        rng = np.random.default_rng(7)
        c = rng.standard_normal((2, 3, 3, 2, 2))
        layers = [layer_params(rng, 2, 4, 1)]
        with pytest.raises(ShapeError):
            aggregate(c, layers, target_d=8)

    def test_channel_permutation_covariance(self):
        rng = np.random.default_rng(8)
        c = rng.standard_normal((3, 4, 4, 2, 2))
        lp = layer_params(rng, 3, 4, 1)
        perm = [2, 0, 1]
        kq_perm = lp.kernel.k_query[:, perm]
        lp_perm = AggLayerParams(
            SeparableKernel4d(kq_perm, lp.kernel.k_support, 1, 1),
            lp.gn_gamma, lp.gn_beta, groups=lp.groups)
        a = aggregate(c, [lp], target_d=4)
        b = aggregate(c[perm], [lp_perm], target_d=4)
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestTGroupNorm:
    def test_matches_tensor_ops(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 3, 3, 2, 2))
        gamma = rng.standard_normal(4)
        beta = rng.standard_normal(4)
        got = t_group_norm(None, Variable(x, requires_grad=False),
                           2, gamma, beta, 1e-5).value
        want = tensor_ops.group_norm(x, 2, gamma, beta)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_indivisible_groups(self):
        with pytest.raises(ConfigError):
            t_group_norm(None, Variable(np.ones((3, 2, 2)), requires_grad=False),
                         2, np.ones(3), np.zeros(3), 1e-5)


class TestTopkAggregate:
    def test_full_k_is_descending_sort(self):
        rng = np.random.default_rng(10)
        c = rng.standard_normal((1, 2, 2, 3, 3))
        out = topk_aggregate(c, 9)
        assert out.shape == (2, 2, 9)
        for a in range(2):
            for b in range(2):
                want = np.sort(c[0, a, b].ravel())[::-1]
                assert np.array_equal(out[a, b], want)

    def test_one_hot_support(self):
        c = np.zeros((1, 1, 1, 3, 3))
        c[0, 0, 0, 1, 2] = 1.0
        out = topk_aggregate(c, 4)
        assert np.array_equal(out[0, 0], [1.0, 0.0, 0.0, 0.0])

    def test_frozen_oracle_1x2x2x3x3(self):
        rng = np.random.default_rng(11)
        c = rng.standard_normal((1, 2, 2, 3, 3))
        assert np.array_equal(topk_aggregate(c, 2), oracle_topk(c, 2))

    def test_channel_major_blocks(self):
        rng = np.random.default_rng(12)
        c = rng.standard_normal((3, 2, 2, 2, 2))
        out = topk_aggregate(c, 2)
        assert out.shape == (2, 2, 6)
        assert np.array_equal(out, oracle_topk(c, 2))
        for i in range(3):
            single = topk_aggregate(c[i:i + 1], 2)
            assert np.array_equal(out[:, :, 2 * i:2 * i + 2], single)

    def test_ties_prefer_smaller_index(self):
        c = np.zeros((1, 1, 1, 2, 2))
        c[0, 0, 0] = [[5.0, 5.0], [5.0, 1.0]]
        out = oracle_topk(c, 3)
        assert np.array_equal(topk_aggregate(c, 3), out)
        assert np.array_equal(out[0, 0], [5.0, 5.0, 5.0])

    @given(st.integers(0, 10_000), st.integers(1, 9))
    @settings(max_examples=25, deadline=None)
    def test_sorted_non_increasing(self, seed, k):
        rng = np.random.default_rng(seed)
        c = rng.standard_normal((2, 2, 2, 3, 3))
        out = topk_aggregate(c, k)
        for i in range(2):
            block = out[:, :, i * k:(i + 1) * k]
            assert (np.diff(block, axis=-1) <= 0).all()
        assert np.array_equal(out, oracle_topk(c, k))

    def test_k_out_of_range(self):
        c = np.zeros((1, 1, 1, 2, 2))
        with pytest.raises(ValidationError):
            topk_aggregate(c, 5)
        with pytest.raises(ValidationError):
            topk_aggregate(c, 0)
