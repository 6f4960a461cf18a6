import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdsovnet import dtensor as dt
from pdsovnet.adaptive import (AdaptiveConfig, coupling_head, corrected_response, encode_context, gate,
                               init_adaptive, modal_head)
from pdsovnet.physbranch import base_response, build_coupling, build_kernels, init_coupling, init_modal, modal_values

M = 12


def _setup(seed=0, n=3):
    rng = np.random.default_rng(seed)
    ada = init_adaptive(rng, M)
    modal, bank = init_modal(), init_coupling(rng)
    x = dt.Tensor(rng.normal(20, 10, (n, 40, 4)))
    return rng, ada, modal, bank, x


def _branch(x, ada, modal, bank, cfg=AdaptiveConfig(), use_dw=True):
    c, z, g = modal_values(modal)
    k_base = build_kernels(c, z, g)
    y_base, z_modes = base_response(x, k_base, build_coupling(bank))
    ctx = encode_context(x, ada)
    _, k_adp = modal_head(ctx, ada, c, z, g, cfg)
    dw = coupling_head(ctx, ada, M) if use_dw else None
    return y_base, corrected_response(x, z_modes, k_base, k_adp, dw, gate(ada, cfg), y_base)


def test_gate_starts_near_zero():
    beta = gate(init_adaptive(np.random.default_rng(0), M)).item()
    assert 0 < beta < 5e-4


@given(st.floats(-30, 30))
def test_gate_is_bounded(b):
    beta = gate({"gate": dt.Tensor(np.array(b))}).item()
    assert 0 < beta < 0.2


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_zero_heads_leave_base_response_unchanged(seed):
    _, ada, modal, bank, x = _setup(seed)
    ada["gate"].data = np.array(3.0)
    y_base, y_phys = _branch(x, ada, modal, bank)
    np.testing.assert_array_equal(y_phys.data, y_base.data)


def test_zero_heads_give_zero_offsets():
    _, ada, modal, _, x = _setup()
    c, z, g = modal_values(modal)
    (c2, z2, g2), k_adp = modal_head(encode_context(x, ada), ada, c, z, g)
    for a, b in ((c2, c), (z2, z), (g2, g)):
        np.testing.assert_array_equal(a.data, np.broadcast_to(b.data, a.shape))
    np.testing.assert_array_equal(k_adp.data - build_kernels(c, z, g).data, 0.0)
    np.testing.assert_array_equal(coupling_head(encode_context(x, ada), ada, M).data, 0.0)


def test_gain_offset_doubles_kernel_row():
    _, ada, modal, _, x = _setup()
    # head output whose saturated log-increment is exactly ln 2
    ada["modal_b"].data[2 * M + 4] = 3.0 * np.arctanh(np.log(2.0) / 3.0)
    c, z, g = modal_values(modal)
    (_, _, g2), k_adp = modal_head(encode_context(x, ada), ada, c, z, g)
    k_base = build_kernels(c, z, g).data
    assert g2.data[0, 4] == pytest.approx(2 * g.data[4])
    np.testing.assert_allclose(k_adp.data[:, 4], np.broadcast_to(2 * k_base[4], (3, 40)), rtol=1e-12)
    np.testing.assert_allclose(np.delete(k_adp.data, 4, axis=1), np.delete(np.broadcast_to(k_base, k_adp.shape), 4, axis=1))


def test_center_offset_moves_peak():
    _, ada, _, _, x = _setup()
    one_mode = {"modal_w": dt.Tensor(np.zeros((64, 3))),
                "modal_b": dt.Tensor(np.array([np.arctanh(1.0 / 3.0), 0.0, 0.0]))}  # shift = +1 order
    ctx = encode_context(x, ada)
    (c2, _, _), k_adp = modal_head(ctx, one_mode, dt.Tensor(np.array([10.0])), dt.Tensor(np.array([0.05])),
                                   dt.Tensor(np.array([1.0])))
    np.testing.assert_allclose(c2.data, 11.0, atol=1e-12)
    assert np.all(np.argmax(k_adp.data[:, 0], axis=-1) == 10)


def test_coupling_head_shape_and_finiteness():
    rng, ada, _, _, x = _setup()
    ada["coup_w"].data = rng.standard_normal(ada["coup_w"].shape)
    dw = coupling_head(encode_context(x, ada), ada, M)
    assert dw.shape == (3, M, 4, 4)
    assert np.all(np.isfinite(dw.data))


def test_closed_gate_returns_base():
    rng, ada, modal, bank, x = _setup()
    for k in ("modal_w", "coup_w"):
        ada[k].data = 0.1 * rng.standard_normal(ada[k].shape)
    ada["gate"].data = np.array(-40.0)
    y_base, y_phys = _branch(x, ada, modal, bank)
    np.testing.assert_allclose(y_phys.data, y_base.data, rtol=1e-15, atol=1e-15 * np.abs(y_base.data).max())


def test_constant_kernel_offset():
    rng = np.random.default_rng(5)
    x = dt.Tensor(rng.standard_normal((2, 40, 4)))
    k_base = dt.Tensor(rng.uniform(0.5, 2, (1, 40)))
    y_base, z_modes = base_response(x, k_base, dt.Tensor(np.eye(4)[None]))
    delta, beta = 0.3, 0.07
    k_adp = dt.Tensor(np.broadcast_to(k_base.data + delta, (2, 1, 40)))
    y = corrected_response(x, z_modes, k_base, k_adp, None, beta, y_base)
    np.testing.assert_allclose(y.data, y_base.data + beta * delta * z_modes.data[:, 0], atol=1e-12)


def test_context_of_zero_input_is_final_bias():
    _, ada, _, _, _ = _setup()
    for t in ada.values():
        t.data = np.zeros_like(t.data)
    ada["ctx_b2"].data = np.arange(64.0)
    z = encode_context(dt.Tensor(np.zeros((2, 40, 4))), ada).data
    np.testing.assert_array_equal(z, np.tile(np.arange(64.0), (2, 1)))


def test_context_is_per_sample():
    rng, ada, _, _, x = _setup(n=5)
    perm = rng.permutation(5)
    z = encode_context(x, ada).data
    np.testing.assert_allclose(encode_context(dt.Tensor(x.data[perm]), ada).data, z[perm], atol=1e-12)


def test_context_sees_one_order_change():
    _, ada, _, _, x = _setup(n=1)
    x2 = x.data.copy()
    x2[0, 17] += 5.0
    assert not np.allclose(encode_context(x, ada).data, encode_context(dt.Tensor(x2), ada).data)


def test_delta_k_consistency():
    rng, ada, modal, _, x = _setup()
    ada["modal_w"].data = 0.05 * rng.standard_normal(ada["modal_w"].shape)
    c, z, g = modal_values(modal)
    adp, k_adp = modal_head(encode_context(x, ada), ada, c, z, g)
    rebuilt = build_kernels(*(t.data for t in adp)).data
    np.testing.assert_array_equal(rebuilt, k_adp.data)


@pytest.mark.parametrize("use_dw", [True, False])
def test_corrected_branch_gradients(use_dw):
    rng = np.random.default_rng(6)
    cfg = AdaptiveConfig(hidden=8, d_context=6, conv_channels=3)
    ada = init_adaptive(rng, M, cfg)
    for k in ("modal_w", "modal_b", "coup_w", "coup_b"):
        ada[k].data = 0.1 * rng.standard_normal(ada[k].shape)
    ada["gate"].data = np.array(0.5)
    modal, bank = init_modal(), init_coupling(rng)
    x = dt.Tensor(rng.normal(10, 5, (2, 40, 4)))
    probe = rng.standard_normal((2, 40, 4))
    params = list(ada.values()) + list(modal.values()) + list(bank.values())
    if not use_dw:
        params = [p for p in params if not p.name.startswith("coup_")]

    def f():
        return (_branch(x, ada, modal, bank, cfg, use_dw)[1] * probe).sum()

    assert dt.grad_check(f, params) < 1e-5


def test_log_scale_increments_saturate():
    _, ada, modal, _, x = _setup()
    ada["modal_b"].data[M:] = 1e6
    c, z, g = modal_values(modal)
    (_, z2, g2), k_adp = modal_head(encode_context(x, ada), ada, c, z, g)
    np.testing.assert_allclose(z2.data, np.broadcast_to(z.data * np.exp(3.0), z2.shape), rtol=1e-12)
    np.testing.assert_allclose(g2.data, np.broadcast_to(g.data * np.exp(3.0), g2.shape), rtol=1e-12)
    assert np.all(np.isfinite(k_adp.data))
