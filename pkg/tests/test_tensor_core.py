import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msyolo.core import ConvParams, Rng, ShapeError, Tensor, TensorFormatError, load_tensor, rng_fill, save_tensor
from msyolo.core import kernels, ops
from msyolo.core.fileio import decode_tensor, encode_tensor
from msyolo.core.tensor import check_finite, conv_out_extent

from oracles import conv2d_direct


def rand(seed, shape, precision="double"):
    return Tensor(Rng(seed).normal(shape), precision=precision)


class TestTensor:
    def test_float64_kept_other_input_cast_to_single(self):
        assert Tensor(np.zeros((2, 2))).precision == "double"
        assert Tensor(np.zeros((2, 2), dtype=np.int32)).dtype == np.float32
        assert Tensor([1.0, 2.0], precision="single").dtype == np.float32

    def test_rank_and_extent_limits(self):
        with pytest.raises(ShapeError, match="rank 5"):
            Tensor(np.zeros((1, 1, 1, 1, 1)))
        with pytest.raises(ShapeError, match="extents"):
            Tensor(np.zeros((2, 0)))

    def test_unknown_precision(self):
        with pytest.raises(ValueError, match="precision"):
            Tensor([1.0], precision="half")

    def test_item_and_to(self):
        t = Tensor(np.array([[3.5]]), name="w", requires_grad=True)
        assert t.item() == 3.5
        s = t.to("single")
        assert s.precision == "single" and s.name == "w" and s.requires_grad
        with pytest.raises(ShapeError):
            Tensor(np.ones(3)).item()

    def test_check_finite(self):
        check_finite(Tensor(np.ones(3)))
        with pytest.raises(ValueError, match="bias"):
            check_finite(Tensor(np.array([1.0, np.nan])), "bias")

    def test_operator_sugar_matches_ops(self):
        a, b = rand(0, (2, 3)), rand(1, (2, 3))
        np.testing.assert_array_equal((a + b).data, a.data + b.data)
        np.testing.assert_array_equal((a - b).data, a.data - b.data)
        np.testing.assert_array_equal((a * b).data, a.data * b.data)
        np.testing.assert_array_equal((2.0 * a).data, 2.0 * a.data)
        np.testing.assert_array_equal((-a).data, -a.data)


class TestRng:
    def test_same_seed_same_stream(self):
        assert np.array_equal(Rng(7).uniform((5, 3)), Rng(7).uniform((5, 3)))
        assert not np.array_equal(Rng(7).uniform((5,)), Rng(8).uniform((5,)))

    def test_stream_independent_of_chunking(self):
        a = Rng(3)
        whole = a.next_u64(10)
        b = Rng(3)
        parts = np.concatenate([b.next_u64(4), b.next_u64(6)])
        assert np.array_equal(whole, parts)

    def test_known_splitmix64_values(self):
        # reference outputs of splitmix64 seeded with 0
        assert [int(v) for v in Rng(0).next_u64(3)] == [
            0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]

    def test_uniform_range_and_moments(self):
        u = Rng(1).uniform((20000,), -2.0, 3.0)
        assert u.min() >= -2.0 and u.max() < 3.0
        assert abs(u.mean() - 0.5) < 0.05

    def test_normal_moments(self):
        z = Rng(2).normal((40000,))
        assert abs(z.mean()) < 0.02 and abs(z.std() - 1.0) < 0.02

    def test_integers(self):
        v = Rng(4).integers(3, 7, 1000)
        assert v.min() == 3 and v.max() == 6
        with pytest.raises(ValueError):
            Rng(0).integers(2, 2, 1)


class TestRngFill:
    def test_kaiming_bound(self):
        t = rng_fill(Rng(0), (8, 4, 3, 3))
        bound = np.sqrt(6.0 / 36)
        assert np.abs(t.data).max() <= bound
        assert np.abs(t.data).max() > 0.9 * bound

    def test_constant(self):
        t = rng_fill(Rng(0), (3,), "constant", value=2.5, precision="double")
        assert np.array_equal(t.data, np.full(3, 2.5))

    def test_unknown_scheme(self):
        with pytest.raises(ValueError, match="scheme"):
            rng_fill(Rng(0), (3,), "xavier")


class TestConvGeometry:
    def test_output_extent_formula(self):
        assert conv_out_extent(32, 3, 1, 1) == 32
        assert conv_out_extent(64, 3, 2, 1) == 32
        assert conv_out_extent(7, 3, 1, 2, dilation=2) == 7
        assert ConvParams(8, 3, 3, stride=2, padding=1).output_hw(9, 6) == (5, 3)

    def test_non_positive_extent(self):
        with pytest.raises(ShapeError, match="non-positive"):
            conv_out_extent(2, 5, 1, 0)

    def test_conv_params_validation(self):
        with pytest.raises(ShapeError):
            ConvParams(6, 3, 3, groups=4)
        with pytest.raises(ShapeError):
            ConvParams(4, 3, 3, stride=0)


class TestConv2d:
    @pytest.mark.parametrize("stride,padding,dilation,groups", [
        (1, 0, 1, 1), (2, 1, 1, 1), (1, 2, 2, 2), (2, 1, 3, 4), (1, 1, 1, 4),
    ])
    def test_matches_direct_loops(self, stride, padding, dilation, groups):
        x = rand(0, (2, 4, 8, 7))
        w = rand(1, (8, 4 // groups, 3, 3))
        b = rand(2, (8,))
        y = ops.conv2d(x, w, b, stride=stride, padding=padding, dilation=dilation, groups=groups)
        ref = conv2d_direct(x.data, w.data, b.data, stride, padding, dilation, groups)
        np.testing.assert_allclose(y.data, ref, atol=1e-12)

    def test_params_route_matches_keywords(self):
        x, w = rand(0, (1, 2, 5, 5)), rand(1, (4, 1, 3, 3))
        p = ConvParams(4, 3, 3, stride=2, padding=1, groups=2, has_bias=False)
        np.testing.assert_array_equal(ops.conv2d(x, w, params=p).data,
                                      ops.conv2d(x, w, stride=2, padding=1, groups=2).data)

    def test_rectangular_kernel(self):
        x, w = rand(0, (1, 3, 6, 6)), rand(1, (2, 3, 1, 3))
        np.testing.assert_allclose(ops.conv2d(x, w, padding=1).data,
                                   conv2d_direct(x.data, w.data, None, 1, 1, 1, 1), atol=1e-12)

    def test_shape_errors(self):
        x = rand(0, (1, 4, 5, 5))
        with pytest.raises(ShapeError):
            ops.conv2d(x, rand(1, (4, 3, 3, 3)))
        with pytest.raises(ShapeError):
            ops.conv2d(x, rand(1, (6, 1, 3, 3)), groups=4)
        with pytest.raises(ShapeError):
            ops.conv2d(x, rand(1, (4, 4, 7, 7)))

    def test_mixed_precision_rejected(self):
        with pytest.raises((TypeError, ValueError)):
            ops.conv2d(rand(0, (1, 1, 3, 3), "single"), rand(1, (1, 1, 1, 1), "double"))

    def test_col2im_is_adjoint_of_im2col(self):
        rng = Rng(5)
        x = rng.normal((2, 3, 7, 6))
        cols, ho, wo = kernels.im2col(x, 3, 2, 2, 1, 2)
        c = rng.normal(cols.shape)
        lhs = float((cols * c).sum())
        rhs = float((x * kernels.col2im(c, x.shape, 2, 1, 2)).sum())
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


class TestPoolingAndResampling:
    def test_avg_pool_counts_padding_in_divisor(self):
        x = Tensor(np.ones((1, 1, 2, 2)))
        y = ops.avg_pool2d(x, 3, 2, 1)
        assert y.data.item() == pytest.approx(4 / 9)

    def test_max_pool_and_tie_recording(self):
        from msyolo.autodiff import Tape, backward

        x = Tensor(np.array([[[[1.0, 3.0], [3.0, 2.0]]]]), requires_grad=True)
        with Tape() as tape:
            y = ops.max_pool2d(x, 2)
            loss = ops.sum(y)
        assert y.data.item() == 3.0
        assert tape.ties == 1
        g = backward(tape, loss)[x]
        assert np.array_equal(g, [[[[0.0, 1.0], [0.0, 0.0]]]])

    def test_max_pool_padding_limit(self):
        with pytest.raises(ShapeError):
            ops.max_pool2d(rand(0, (1, 1, 4, 4)), 2, 1, 2)

    def test_upsample_and_pad(self):
        x = rand(0, (1, 2, 2, 3))
        u = ops.upsample_nearest(x, 2)
        assert u.shape == (1, 2, 4, 6)
        assert np.array_equal(u.data[:, :, ::2, ::2], x.data)
        p = ops.pad2d(x, 1, 0, 0, 2)
        assert p.shape == (1, 2, 3, 5) and p.data[:, :, 0].sum() == 0

    def test_global_avg_pool(self):
        x = rand(0, (2, 3, 4, 5))
        np.testing.assert_allclose(ops.global_avg_pool(x).data, x.data.mean(axis=(2, 3), keepdims=True))


class TestElementwiseAndReductions:
    def test_broadcast_singleton_axes(self):
        a, b = rand(0, (2, 3, 4, 4)), rand(1, (1, 3, 1, 1))
        np.testing.assert_array_equal(ops.add(a, b).data, a.data + b.data)
        with pytest.raises(ShapeError):
            ops.add(a, rand(2, (3, 1, 1)))
        with pytest.raises(ShapeError):
            ops.add(a, rand(2, (1, 2, 1, 1)))

    def test_softmax_rows_sum_to_one(self):
        s = ops.softmax(rand(0, (2, 5, 3, 3)) * 50.0, axis=1)
        np.testing.assert_allclose(s.data.sum(axis=1), 1.0, atol=1e-12)

    def test_split_concat_round_trip(self):
        x = rand(0, (2, 6, 3, 3))
        parts = ops.split(x, [1, 2, 3])
        assert [p.shape[1] for p in parts] == [1, 2, 3]
        assert np.array_equal(ops.concat(parts).data, x.data)
        with pytest.raises(ShapeError):
            ops.split(x, [2, 2])

    def test_max_axis_first_index_wins(self):
        x = Tensor(np.array([[[[1.0]], [[2.0]], [[2.0]]]]))
        assert ops.max_axis(x, 1).data.item() == 2.0

    def test_mse(self):
        a, b = rand(0, (2, 2, 2, 2)), rand(1, (2, 2, 2, 2))
        assert ops.mse_loss(a, b).item() == pytest.approx(float(((a.data - b.data) ** 2).mean()))

    def test_add_zero_keeps_negative_zero(self):
        x = Tensor(np.array([-0.0, 1.0]))
        y = ops.add_scalar(x, 0.0)
        assert np.signbit(y.data[0])

    @pytest.mark.parametrize("op", [
        lambda x: ops.reshape(x, (1, 8)),
        lambda x: ops.slice_axis(x, 0, 2, axis=1),
        lambda x: ops.split(x, [2, 2], axis=1)[0],
        lambda x: ops.add_scalar(x, 0.0),
        lambda x: ops.concat([x], axis=1),
    ])
    def test_outputs_never_alias_inputs(self, op):
        x = Tensor(np.arange(8.0).reshape(1, 4, 2))
        assert not np.shares_memory(op(x).data, x.data)


class TestFlopCounter:
    def test_conv_flops_include_bias(self):
        x, w, b = rand(0, (1, 16, 32, 32)), rand(1, (16, 16, 3, 3)), rand(2, (16,))
        with ops.counting() as c:
            ops.conv2d(x, w, padding=1)
        assert c.total == 2 * 16 * 16 * 9 * 32 * 32 == 4_718_592
        with ops.counting() as c:
            ops.conv2d(x, w, b, padding=1)
        assert c.total == 4_718_592 + 16 * 32 * 32

    def test_structural_ops_are_free(self):
        x = rand(0, (1, 4, 2, 2))
        with ops.counting() as c:
            ops.concat(ops.split(x, [1, 3]))
            ops.upsample_nearest(x)
            ops.pad2d(x, 1, 1, 1, 1)
        assert c.total == 0

    def test_nested_counters(self):
        x = rand(0, (1, 2, 2, 2))
        with ops.counting() as outer:
            ops.silu(x)
            with ops.counting() as inner:
                ops.sigmoid(x)
        assert inner.total == 32 and outer.total == 64


class TestFileFormat:
    def test_single_element_file_is_32_bytes(self, tmp_path):
        path = tmp_path / "t.mst"
        save_tensor(path, Tensor(np.ones((1, 1, 1, 1)), precision="single"))
        assert path.stat().st_size == 12 + 4 * 4 + 4

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=0, max_size=4), st.sampled_from(["single", "double"]),
           st.integers(0, 2**32 - 1))
    def test_round_trip_bit_exact(self, shape, precision, seed):
        t = Tensor(Rng(seed).normal(shape) * 1e3, precision=precision)
        back = decode_tensor(encode_tensor(t))
        assert back.dtype == t.dtype and back.shape == t.shape
        assert back.data.tobytes() == t.data.tobytes()

    def test_file_round_trip_and_determinism(self, tmp_path):
        t = rand(3, (2, 3, 4, 5))
        save_tensor(tmp_path / "a.mst", t)
        save_tensor(tmp_path / "b.mst", t)
        assert (tmp_path / "a.mst").read_bytes() == (tmp_path / "b.mst").read_bytes()
        assert load_tensor(tmp_path / "a.mst").data.tobytes() == t.data.tobytes()

    @pytest.mark.parametrize("mutate,match", [
        (lambda b: b[:8], "truncated header"),
        (lambda b: b"XXXX" + b[4:], "magic"),
        (lambda b: b[:4] + struct.pack("<I", 2) + b[8:], "version"),
        (lambda b: b[:8] + b"\x07" + b[9:], "dtype code"),
        (lambda b: b[:9] + b"\x05" + b[10:], "rank"),
        (lambda b: b[:10] + b"\x01" + b[11:], "reserved"),
        (lambda b: b[:-1], "truncated payload"),
        (lambda b: b + b"\x00", "trailing"),
        (lambda b: b[:12] + struct.pack("<I", 0) + b[16:], "zero extent"),
    ])
    def test_malformed_files_rejected(self, mutate, match):
        buf = encode_tensor(rand(0, (2, 3), "single"))
        with pytest.raises(TensorFormatError, match=match):
            decode_tensor(mutate(buf))

    def test_non_finite_payload_rejected(self):
        buf = encode_tensor(Tensor(np.array([1.0, np.inf])))
        with pytest.raises(TensorFormatError, match="NaN or Inf"):
            decode_tensor(buf)

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        save_tensor(tmp_path / "x.mst", rand(0, (3,)))
        assert [p.name for p in tmp_path.iterdir()] == ["x.mst"]
