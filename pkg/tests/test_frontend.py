import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdsovnet import dtensor as dt
from pdsovnet.frontend import FrontendConfig, init_frontend, order_db_features, order_frontend, order_mixing

THETA = 2 * np.pi * np.arange(400) / 400


def _params(seed=0, zero=False):
    p = init_frontend(np.random.default_rng(seed))
    if zero:
        for t in p.values():
            t.data = np.zeros_like(t.data)
    return p


def test_zero_input_zero_weights_hits_floor():
    out = order_frontend(np.zeros((2, 400, 4)), np.zeros((2, 4)), _params(zero=True))
    np.testing.assert_allclose(out.data, -120.0, atol=1e-12)


def test_single_tone_peaks_at_its_order_with_zero_db():
    x = np.zeros((1, 400, 4))
    x[0, :, 2] = np.cos(7 * THETA)
    out = order_frontend(x, np.full((1, 4), 300.0), _params(zero=True)).data[0]
    assert np.argmax(out[:, 2]) == 6
    assert out[6, 2] == pytest.approx(0.0, abs=1e-5)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_scaling_by_ten_shifts_features_by_20_db(seed):
    rng = np.random.default_rng(seed)
    x = sum(rng.uniform(0.5, 2.0) * np.cos(k * THETA + rng.uniform(0, 6.3))[:, None] * np.ones(4)
            for k in range(1, 41))[None]
    base, scaled = order_db_features(x), order_db_features(10 * x)
    np.testing.assert_allclose(scaled - base, 20.0, atol=1e-4)


@pytest.mark.parametrize("k", range(1, 41))
def test_order_localisation_before_encoding(k):
    x = np.cos(k * THETA + 0.7)[None, :, None] * np.ones((1, 1, 4))
    assert np.all(np.argmax(order_db_features(x)[0], axis=0) == k - 1)


def test_speed_enters_as_additive_bias():
    p = _params(zero=True)
    p["speed_b"].data = np.array([1.0, 2.0, 3.0, 4.0])
    out = order_frontend(np.zeros((1, 400, 4)), np.full((1, 4), 300.0), p)
    np.testing.assert_allclose(out.data[0], -120.0 + np.array([1.0, 2.0, 3.0, 4.0]) * np.ones((40, 1)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_mixing_with_zero_scale_is_identity(seed):
    rng = np.random.default_rng(seed)
    p = _params(seed)
    x = dt.Tensor(rng.standard_normal((3, 40, 4)) * 30)
    np.testing.assert_array_equal(order_mixing(x, p).data, x.data)


def test_zero_output_projection_is_identity():
    p = _params(1)
    p["mix_scale"].data = np.array(1.0)
    p["mix_out_w"].data[:] = 0.0
    x = dt.Tensor(np.random.default_rng(2).standard_normal((2, 40, 4)))
    np.testing.assert_array_equal(order_mixing(x, p).data, x.data)


def test_constant_delta_is_added():
    p = _params(1)
    p["mix_scale"].data = np.array(1.0)
    p["mix_out_w"].data[:] = 0.0
    p["mix_out_b"].data = np.array([0.5, -1.0, 2.0, 0.0])
    x = dt.Tensor(np.random.default_rng(3).standard_normal((2, 40, 4)))
    np.testing.assert_allclose(order_mixing(x, p).data, x.data + p["mix_out_b"].data, atol=1e-12)


def test_frontend_gradients():
    rng = np.random.default_rng(4)
    p = init_frontend(rng, FrontendConfig(encoder_init_scale=0.3))
    p["mix_scale"].data = np.array(0.7)
    x = rng.standard_normal((2, 400, 4))
    v = rng.uniform(295, 305, (2, 4))
    probe = rng.standard_normal((2, 40, 4))

    def f():
        return (order_mixing(order_frontend(x, v, p), p) * probe).sum() / 100.0

    assert dt.grad_check(f, list(p.values())) < 1e-5
