import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qclnet.errors import ShapeError, ValidationError
from qclnet.quat_layers import QuatTensor
from qclnet.readout import (DecoderParams, attention_weights, binarize,
                            decode, quat_to_real)
from qclnet.tensor_ops import Conv2dParams


def conv_p(rng, out_ch, in_ch, size, zero_bias=False):
    return Conv2dParams(rng.standard_normal((out_ch, in_ch, size, size)) * 0.3,
                        np.zeros(out_ch) if zero_bias
                        else rng.standard_normal(out_ch) * 0.3)


def decoder_for(rng, d, skip_chs, width=5, mid=6, zero_bias=False):
    projections = [conv_p(rng, width, c, 1, zero_bias) for c in skip_chs]
    refines = []
    in_ch = d
    for _ in skip_chs:
        refines.append(conv_p(rng, mid, in_ch + width, 3, zero_bias))
        in_ch = mid
    head = conv_p(rng, 2, in_ch, 1, zero_bias)
    return DecoderParams(projections, refines, head)


class TestQuatToReal:
    def test_identical_planes_pass_through(self):
        rng = np.random.default_rng(0)
        p = rng.standard_normal((3, 4, 4))
        q = QuatTensor(p, p.copy(), p.copy(), p.copy())
        w = attention_weights(q)
        np.testing.assert_allclose(w, 0.25, atol=1e-12)
        np.testing.assert_allclose(quat_to_real(q), p, atol=1e-12)

    def test_dominant_plane_wins(self):
        rng = np.random.default_rng(1)
        planes = [rng.standard_normal((2, 3, 3)) for _ in range(4)]
        planes[2] = planes[2] + 1000.0
        q = QuatTensor(*planes)
        w = attention_weights(q)
        np.testing.assert_allclose(w[2], 1.0, atol=1e-12)
        np.testing.assert_allclose(quat_to_real(q), planes[2], atol=1e-9)

    def test_ln2_gap_weights(self):
        d = 3
        q = QuatTensor(np.zeros((d, 2, 2)), np.full((d, 2, 2), np.log(2.0)),
                       np.zeros((d, 2, 2)), np.zeros((d, 2, 2)))
        w = attention_weights(q)
        want = np.tile(np.array([[0.2], [0.4], [0.2], [0.2]]), (1, d))
        np.testing.assert_allclose(w, want, atol=1e-12)
        np.testing.assert_allclose(quat_to_real(q), 0.4 * np.log(2.0),
                                   atol=1e-12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_weights_are_probability_vectors(self, seed):
        rng = np.random.default_rng(seed)
        q = QuatTensor(*(rng.standard_normal((3, 3, 3)) for _ in range(4)))
        w = attention_weights(q)
        assert (w >= 0.0).all()
        np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_convex_envelope(self, seed):
        rng = np.random.default_rng(seed)
        q = QuatTensor(*(rng.standard_normal((3, 3, 3)) for _ in range(4)))
        out = quat_to_real(q)
        stack = np.stack(q.planes)
        assert (out >= stack.min(axis=0) - 1e-12).all()
        assert (out <= stack.max(axis=0) + 1e-12).all()

    def test_weight_shift_invariance(self):
        rng = np.random.default_rng(2)
        planes = [rng.standard_normal((2, 3, 3)) for _ in range(4)]
        q = QuatTensor(*planes)
        shifted = QuatTensor(*(p + 0.7 for p in planes))
        np.testing.assert_allclose(attention_weights(shifted),
                                   attention_weights(q), atol=1e-12)
        # the output itself shifts, only the weights hold still
        np.testing.assert_allclose(quat_to_real(shifted),
                                   quat_to_real(q) + 0.7, atol=1e-12)


class TestDecode:
    def test_channel_sums_to_one(self):
        rng = np.random.default_rng(3)
        fr = rng.standard_normal((4, 2, 2))
        skips = [rng.standard_normal((3, 4, 4)), rng.standard_normal((2, 8, 8))]
        params = decoder_for(rng, 4, (3, 2))
        soft = decode(fr, skips, params)
        assert soft.shape == (2, 8, 8)
        np.testing.assert_allclose(soft.sum(axis=0), 1.0, atol=1e-12)
        assert (soft >= 0.0).all()

    def test_all_zero_inputs_give_uniform(self):
        rng = np.random.default_rng(4)
        params = decoder_for(rng, 4, (3,), zero_bias=True)
        soft = decode(np.zeros((4, 3, 3)), [np.zeros((3, 6, 6))], params)
        assert np.array_equal(soft, np.full((2, 6, 6), 0.5))

    def test_shape_chain_two_skips(self):
        rng = np.random.default_rng(5)
        h = w = 3
        fr = rng.standard_normal((4, h, w))
        skips = [rng.standard_normal((3, 2 * h, 2 * w)),
                 rng.standard_normal((3, 4 * h, 4 * w))]
        soft = decode(fr, skips, decoder_for(rng, 4, (3, 3)))
        assert soft.shape == (2, 4 * h, 4 * w)

    def test_skip_extent_mismatch_names_stage(self):
        rng = np.random.default_rng(6)
        fr = rng.standard_normal((4, 2, 2))
        skips = [rng.standard_normal((3, 4, 4)), rng.standard_normal((2, 9, 9))]
        with pytest.raises(ShapeError, match="merge stage 1"):
            decode(fr, skips, decoder_for(rng, 4, (3, 2)))

    def test_head_must_emit_two_channels(self):
        rng = np.random.default_rng(7)
        with pytest.raises(ValidationError):
            DecoderParams((conv_p(rng, 5, 3, 1),), (conv_p(rng, 6, 9, 3),),
                          conv_p(rng, 3, 6, 1))

    def test_projection_refine_count_mismatch(self):
        rng = np.random.default_rng(8)
        with pytest.raises(ValidationError):
            DecoderParams((conv_p(rng, 5, 3, 1),), (), conv_p(rng, 2, 6, 1))


class TestBinarize:
    def test_foreground_larger_gives_one(self):
        soft = np.zeros((2, 1, 1))
        soft[0, 0, 0], soft[1, 0, 0] = 0.4, 0.6
        assert binarize(soft)[0, 0] == 1.0

    def test_background_larger_gives_zero(self):
        soft = np.zeros((2, 1, 1))
        soft[0, 0, 0], soft[1, 0, 0] = 0.6, 0.4
        assert binarize(soft)[0, 0] == 0.0

    def test_exact_tie_is_background(self):
        assert binarize(np.full((2, 2, 2), 0.5)).max() == 0.0

    def test_uniform_foreground_dominant(self):
        soft = np.empty((2, 3, 3))
        soft[0], soft[1] = 0.3, 0.7
        assert np.array_equal(binarize(soft), np.ones((3, 3)))

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            binarize(np.zeros((3, 2, 2)))
        with pytest.raises(ShapeError):
            binarize(np.zeros((2, 2)))
