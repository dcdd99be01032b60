import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scatterdense.tensor import (ConfigError, DataError, cconv2, circular_shift, fft2, ifft2, load_tensor,
                                 modulus, save_tensor)

from oracles import spatial_cconv

POW2 = [1, 2, 4, 8]


def test_fft2_zeros_and_impulse():
    assert np.all(fft2(np.zeros((4, 4))) == 0)
    d = np.zeros((4, 4))
    d[0, 0] = 1
    np.testing.assert_array_equal(fft2(d), np.ones((4, 4), dtype=complex))


def test_round_trip_scaling(rng):
    x = rng.standard_normal((8, 8))
    assert np.max(np.abs(ifft2(fft2(x)) / 64 - x)) < 1e-10
    y = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
    assert np.max(np.abs(ifft2(fft2(y)) - 64 * 64 * y)) < 1e-10 * 64 * 64


def test_parseval(rng):
    x = rng.standard_normal((2, 16, 32))
    lhs = np.sum(np.abs(x) ** 2) * 16 * 32
    rhs = np.sum(np.abs(fft2(x)) ** 2)
    assert abs(lhs - rhs) / rhs < 1e-10


@pytest.mark.parametrize("shape", [(3, 4), (4, 6), (12, 8), (5,)])
def test_non_power_of_two_rejected(shape):
    with pytest.raises(ConfigError):
        fft2(np.zeros(shape))


@pytest.mark.parametrize("H", POW2)
@pytest.mark.parametrize("W", POW2)
def test_cconv2_matches_spatial_sum(H, W, rng):
    x = rng.standard_normal((H, W)) + 1j * rng.standard_normal((H, W))
    h = rng.standard_normal((H, W)) + 1j * rng.standard_normal((H, W))
    got = cconv2(x, np.fft.fft2(h))
    assert np.max(np.abs(got - spatial_cconv(x, h))) < 1e-9


def test_cconv2_identity_and_shift(rng):
    x = rng.standard_normal((16, 16))
    np.testing.assert_allclose(cconv2(x, np.ones((16, 16))).real, x, atol=1e-12)
    h_hat = np.fft.fft2(rng.standard_normal((16, 16)))
    a = cconv2(circular_shift(x, 3, 5), h_hat)
    b = circular_shift(cconv2(x, h_hat), 3, 5)
    assert np.max(np.abs(a - b)) < 1e-10


def test_cconv2_zero_mean_filter_kills_constant(rng):
    h = rng.standard_normal((8, 8))
    h -= h.mean()
    out = cconv2(np.full((8, 8), 0.7), np.fft.fft2(h))
    assert np.max(np.abs(out)) < 1e-10
    assert np.max(np.abs(spatial_cconv(np.full((8, 8), 0.7), h))) < 1e-10


def test_cconv2_shape_mismatch():
    with pytest.raises(ConfigError):
        cconv2(np.zeros((8, 8)), np.zeros((4, 8)))


def test_modulus_examples():
    assert modulus(3 + 4j) == 5.0
    assert modulus(0j) == 0.0


@given(arrays(np.complex128, 16, elements=st.complex_numbers(max_magnitude=1e6, allow_nan=False, allow_infinity=False)),
       arrays(np.complex128, 16, elements=st.complex_numbers(max_magnitude=1e6, allow_nan=False, allow_infinity=False)))
def test_modulus_lipschitz(u, v):
    assert np.all(np.abs(modulus(u) - modulus(v)) <= np.abs(u - v) * (1 + 1e-15) + 1e-300)


@given(st.integers(-20, 20), st.integers(-20, 20))
def test_circular_shift_group(dy, dx):
    x = np.arange(32.0).reshape(4, 8)
    np.testing.assert_array_equal(circular_shift(circular_shift(x, dy, dx), -dy, -dx), x)
    np.testing.assert_array_equal(circular_shift(x, 4 * dy, 8 * dx), x)
    np.testing.assert_array_equal(circular_shift(circular_shift(x, dy, 0), 0, dx), circular_shift(x, dy, dx))


@pytest.mark.parametrize("shape", [(), (3,), (2, 4), (1, 2, 4, 8)])
def test_sdtn_round_trip(tmp_path, shape, rng):
    x = rng.standard_normal(shape)
    save_tensor(tmp_path / "a.sdtn", x)
    np.testing.assert_array_equal(load_tensor(tmp_path / "a.sdtn"), x)
    z = x + 1j * rng.standard_normal(shape)
    save_tensor(tmp_path / "z.sdtn", z)
    back = load_tensor(tmp_path / "z.sdtn")
    assert np.iscomplexobj(back)
    np.testing.assert_array_equal(back, z)


def test_sdtn_layout(tmp_path):
    save_tensor(tmp_path / "a.sdtn", np.array([[1.0, 2.0, 3.0]]))
    raw = (tmp_path / "a.sdtn").read_bytes()
    assert raw[:4] == b"SDTN"
    assert raw[4:16] == bytes([2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0])
    assert np.frombuffer(raw[16:], "<f8").tolist() == [1.0, 2.0, 3.0]


def test_sdtn_errors(tmp_path):
    p = tmp_path / "bad.sdtn"
    p.write_bytes(b"NOPE")
    with pytest.raises(DataError, match="byte 0"):
        load_tensor(p)
    save_tensor(p, np.ones((2, 2)))
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(DataError, match="byte 16"):
        load_tensor(p)
