import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmolab.rng import Rng
from flowmolab.tensors import (
    TensorFormatError,
    TensorValueError,
    deserialize,
    serialize,
    tensor_read,
    tensor_write,
    validate_latent,
    variance_over_axis0,
)


def naive_variance_axis0(t):
    """Two-pass nested-loop population variance, independent oracle."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros(t.shape[1:])
    n = t.shape[0]
    for idx in np.ndindex(*t.shape[1:]):
        col = [t[(f,) + idx] for f in range(n)]
        mean = sum(col) / n
        out[idx] = sum((x - mean) ** 2 for x in col) / n
    return out


def test_round_trip_zero_tensor(tmp_path):
    t = np.zeros((2, 2, 2, 2))
    path = tmp_path / "z.fmt"
    tensor_write(t, path)
    back = tensor_read(path)
    assert back.shape == (2, 2, 2, 2)
    assert np.array_equal(back, t)


def test_round_trip_bytes_exact(tmp_path):
    # values i/1000 are not float32-exact, but serialized bytes must agree
    t = (np.arange(3 * 4 * 5 * 6, dtype=np.float64) / 1000.0).reshape(3, 4, 5, 6)
    buf = serialize(t)
    assert serialize(deserialize(buf)) == buf
    path = tmp_path / "t.fmt"
    tensor_write(t, path)
    assert serialize(tensor_read(path)) == path.read_bytes()


def test_header_layout_and_size():
    # magic(4) + rank u32(4) + 4 dims u64(32) + one float32(4)
    buf = serialize(np.zeros((1, 1, 1, 1)))
    assert len(buf) == 44
    assert buf[:4] == b"FMT1"
    assert buf[4:8] == (4).to_bytes(4, "little")
    assert buf[8:16] == (1).to_bytes(8, "little")


def test_write_deterministic(tmp_path):
    t = Rng(3).normal((2, 3, 3, 2))
    a, b = tmp_path / "a.fmt", tmp_path / "b.fmt"
    tensor_write(t, a)
    tensor_write(t, b)
    assert a.read_bytes() == b.read_bytes()


def test_bad_magic_rejected():
    buf = b"XXXX" + serialize(np.zeros((1, 1, 1, 1)))[4:]
    with pytest.raises(TensorFormatError):
        deserialize(buf)


def test_truncated_payload_rejected():
    buf = serialize(np.zeros((2, 2, 2, 2)))
    with pytest.raises(TensorFormatError):
        deserialize(buf[:-3])
    with pytest.raises(TensorFormatError):
        deserialize(buf + b"\x00")


def test_bad_rank_rejected():
    buf = bytearray(serialize(np.zeros((1, 1, 1, 1))))
    buf[4] = 3
    with pytest.raises(TensorFormatError):
        deserialize(bytes(buf))


def test_nan_rejected(tmp_path):
    t = np.zeros((1, 1, 1, 1))
    t[0, 0, 0, 0] = np.nan
    with pytest.raises(TensorValueError):
        tensor_write(t, tmp_path / "nan.fmt")


def test_validate_rank_and_dims():
    with pytest.raises(TensorValueError):
        validate_latent(np.zeros((2, 2, 2)))
    with pytest.raises(TensorValueError):
        validate_latent(np.zeros((0, 2, 2, 2)))


def test_variance_constant_vector():
    assert variance_over_axis0(np.array([5.0, 5.0, 5.0])) == 0.0


def test_variance_two_points():
    # population variance of [1, 2]: ((1-1.5)^2 + (2-1.5)^2) / 2
    assert variance_over_axis0(np.array([1.0, 2.0])) == pytest.approx(0.25, abs=0)


def test_variance_matches_nested_loop_oracle():
    t = Rng(11).normal((7, 3, 3, 2))
    got = variance_over_axis0(t)
    want = naive_variance_axis0(t)
    assert np.allclose(got, want, rtol=1e-12, atol=1e-15)


def test_variance_empty_rejected():
    with pytest.raises(TensorValueError):
        variance_over_axis0(np.array(5.0))


def test_variance_axis0_length_one_is_zero():
    t = Rng(5).normal((1, 3, 2))
    assert np.array_equal(variance_over_axis0(t), np.zeros((3, 2)))


@settings(deadline=None, max_examples=60)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-100, 100))
def test_variance_shift_invariance(seed, shift):
    t = Rng(seed).normal((5, 2, 2))
    base = variance_over_axis0(t)
    moved = variance_over_axis0(t + shift)
    assert np.allclose(moved, base, rtol=1e-12, atol=1e-12)


@settings(deadline=None, max_examples=60)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(-8, 8))
def test_variance_scale_law(seed, scale):
    t = Rng(seed).normal((5, 2, 2))
    base = variance_over_axis0(t)
    scaled = variance_over_axis0(scale * t)
    assert np.allclose(scaled, scale**2 * base, rtol=1e-12, atol=1e-12)


@settings(deadline=None, max_examples=25)
@given(
    seed=st.integers(0, 2**32 - 1),
    f=st.integers(1, 8),
    w=st.integers(1, 8),
    h=st.integers(1, 8),
    c=st.integers(1, 4),
)
def test_variance_random_dims_vs_oracle(seed, f, w, h, c):
    t = Rng(seed).normal((f, w, h, c))
    assert np.allclose(
        variance_over_axis0(t), naive_variance_axis0(t), rtol=1e-12, atol=1e-15
    )
