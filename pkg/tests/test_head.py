import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cr_loop, scl_double_loop
from lacl.errors import LaclError
from lacl.head import (
    GclConfig,
    adjacent_correlation,
    correlation_matrix,
    cr_loss,
    gcl_forward,
    init_gcl_params,
    interleave,
    mean_adjacent_correlation,
    positive_mask,
    scl_loss,
    total_loss,
    upper_half_layers,
)
from lacl.numcore import Tensor, backward, finite_diff_gradient, normalize_rows, relative_error


def unit_rows(rng, n, d):
    Z = rng.normal(size=(n, d))
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


# -- GCL -----------------------------------------------------------------------------
def test_gcl_widths_desk_config():
    cfg = GclConfig(64, 4, 128)
    p = init_gcl_params(cfg, np.random.default_rng(0))
    C, z = gcl_forward(np.random.default_rng(1).normal(size=(3, 4, 64)), p, cfg)
    assert C.shape == (3, 4, 16)
    assert z.shape == (3, 64)
    np.testing.assert_array_equal(z.data[:, 16:32], C.data[:, 1])


def test_gcl_widths_bert_shaped_config():
    cfg = GclConfig(768, 12, 1024)
    p = init_gcl_params(cfg, np.random.default_rng(0))
    C, z = gcl_forward(np.zeros((1, 12, 768)), p, cfg)
    assert cfg.width == 64
    assert C.shape == (1, 12, 64) and z.shape == (1, 768)


def test_gcl_zero_parameters_give_degenerate_z():
    cfg = GclConfig(8, 2, 16)
    p = {k: Tensor(np.zeros_like(v.data), requires_grad=True) for k, v in init_gcl_params(cfg, np.random.default_rng(0)).items()}
    _, z = gcl_forward(np.ones((2, 2, 8)), p, cfg)
    np.testing.assert_array_equal(z.data, 0.0)
    with pytest.raises(LaclError, match="degenerate-vector"):
        normalize_rows(z)


def test_gcl_matches_per_layer_formula():
    cfg = GclConfig(8, 2, 6)
    rng = np.random.default_rng(3)
    p = init_gcl_params(cfg, rng)
    for v in p.values():
        v.data[...] = rng.normal(size=v.shape)
    h = rng.normal(size=(2, 2, 8))
    C, _ = gcl_forward(h, p, cfg)

    def gelu(x):
        return 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))

    for l in range(2):
        ref = gelu(h[:, l] @ p["gcl.1.w"].data + p["gcl.1.b"].data) @ p["gcl.2.w"].data + p["gcl.2.b"].data
        np.testing.assert_allclose(C.data[:, l], ref, atol=1e-12)


def test_gcl_per_layer_mode_has_independent_weights():
    cfg = GclConfig(8, 2, 6, shared=False)
    p = init_gcl_params(cfg, np.random.default_rng(0))
    assert p["gcl.1.w"].shape == (2, 8, 6)
    C, z = gcl_forward(np.random.default_rng(1).normal(size=(3, 2, 8)), p, cfg)
    assert C.shape == (3, 2, 4) and z.shape == (3, 8)


def test_upper_half_routing():
    assert upper_half_layers(4) == (2, 3, 4)
    assert upper_half_layers(5) == (3, 4, 5)
    cfg = GclConfig(64, 4, 128, layers=upper_half_layers(4))
    p = init_gcl_params(cfg, np.random.default_rng(0))
    C, z = gcl_forward(np.zeros((2, 4, 64)), p, cfg)
    assert C.shape == (2, 3, 16) and z.shape == (2, 48)


def test_gcl_width_mismatch():
    cfg = GclConfig(8, 2, 6)
    p = init_gcl_params(cfg, np.random.default_rng(0))
    with pytest.raises(LaclError, match="width-mismatch"):
        gcl_forward(np.zeros((2, 3, 8)), p, cfg)


def test_gcl_config_rejects_indivisible_width():
    with pytest.raises(LaclError, match="bad-config"):
        GclConfig(10, 4, 8)


# -- supervised contrastive loss --------------------------------------------------
def test_scl_two_identical_views_is_zero():
    Z = np.array([[0.6, 0.8], [0.6, 0.8]])
    for tau in (0.05, 1.0, 3.0):
        assert scl_loss(Z, [0, 0], tau).item() == pytest.approx(0.0, abs=1e-15)


def test_scl_hand_case():
    Z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    got = scl_loss(Z, [0, 0, 1, 1], 1.0).item()
    assert got == pytest.approx(math.log((math.e + 2) / math.e), abs=1e-12)
    assert got == pytest.approx(0.551444, abs=1e-6)


def test_scl_errors():
    Z = np.eye(3)
    with pytest.raises(LaclError, match="anchor-without-positive"):
        scl_loss(Z, [0, 0, 1], 0.05)
    with pytest.raises(LaclError, match="bad-temperature"):
        scl_loss(np.eye(2), [0, 0], 0.0)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 8), st.integers(2, 6), st.sampled_from([0.05, 0.5, 1.0]), st.integers(0, 10**6))
def test_scl_nonnegative_and_matches_loop(pairs, dim, tau, seed):
    rng = np.random.default_rng(seed)
    labels = np.repeat(rng.integers(0, 3, size=pairs), 2)
    Z = unit_rows(rng, 2 * pairs, dim)
    got = scl_loss(Z, labels, tau).item()
    assert got >= 0
    assert got == pytest.approx(scl_double_loop(Z, labels, tau), abs=1e-10)


def test_scl_gradient():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(6, 4))
    labels = [0, 0, 1, 1, 0, 0]
    t = Tensor(X, requires_grad=True)
    backward(scl_loss(normalize_rows(t), labels, 0.5))
    num = finite_diff_gradient(lambda v: scl_loss(normalize_rows(Tensor(v)), labels, 0.5).item(), X, 1e-5)
    assert relative_error(t.grad, num).max() < 1e-6


def test_positive_mask_excludes_self():
    m = positive_mask([0, 0, 1])
    np.testing.assert_array_equal(m, [[0, 1, 0], [1, 0, 0], [0, 0, 0]])


# -- correlation ----------------------------------------------------------------------
def _pair(a, b):
    return np.stack([np.array(a, float), np.array(b, float)], axis=1)[:, :, None]


@pytest.mark.parametrize(
    "a, b, expected",
    [([1, 2], [2, 4], 1.0), ([1, -1], [1, 1], 0.0), ([1, 0], [1, 1], 0.70710678), ([0, 0], [1, 1], 0.0)],
)
def test_adjacent_correlation_examples(a, b, expected):
    assert adjacent_correlation(_pair(a, b), 1, 0) == pytest.approx(expected, abs=1e-8)


def test_adjacent_correlation_indexing():
    C = np.random.default_rng(0).normal(size=(5, 3, 2))
    cor = correlation_matrix(C).data
    assert cor.shape == (2, 2)
    assert adjacent_correlation(C, 2, 1) == pytest.approx(cor[1, 1], abs=1e-15)
    with pytest.raises(LaclError):
        adjacent_correlation(C, 3, 0)


def test_cr_examples():
    C = np.zeros((2, 2, 3))
    C[:, 0] = [[1, 1, 1], [0, 0, 0]]
    cor_target = [0.9, 0.3, -0.8]
    for d, c in enumerate(cor_target):
        C[:, 1, d] = [c, math.sqrt(1 - c * c)]
    np.testing.assert_allclose(correlation_matrix(C).data[0], cor_target, atol=1e-12)
    assert cr_loss(C, 0.5).item() == pytest.approx(0.9, abs=1e-12)
    assert cr_loss(C, 0.95).item() == 0.0


def test_cr_identical_layers_hit_upper_bound():
    rng = np.random.default_rng(1)
    c = rng.normal(size=(6, 1, 4))
    C = np.repeat(c, 3, axis=1)
    assert cr_loss(C, 0.5).item() == pytest.approx(2 * 4, abs=1e-12)


def test_cr_bad_margin():
    with pytest.raises(LaclError, match="bad-margin"):
        cr_loss(np.ones((2, 2, 1)), 0.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(2, 4), st.integers(1, 5), st.floats(0.01, 1.0), st.integers(0, 10**6))
def test_cr_matches_loop(batch, L, W, m, seed):
    C = np.random.default_rng(seed).normal(size=(batch, L, W))
    assert cr_loss(C, m).item() == pytest.approx(cr_loop(C, m), abs=1e-12)


def test_cr_gradient_treats_selection_as_constant():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(5, 3, 4))
    cor = correlation_matrix(X).data
    assert np.abs(cor - 0.2).min() > 1e-3
    t = Tensor(X, requires_grad=True)
    backward(cr_loss(t, 0.2))
    num = finite_diff_gradient(lambda v: cr_loss(v, 0.2).item(), X, 1e-6)
    assert relative_error(t.grad, num).max() < 1e-5


# -- total loss ---------------------------------------------------------------------
def test_total_loss_examples():
    assert total_loss(0.7, 0.4, 0.0).total == 0.7
    assert total_loss(0.7, 0.4, 1.0).total == pytest.approx(1.1)
    br = total_loss(0.5, 0.2, 2.0)
    assert br.total == pytest.approx(0.9) and (br.scl, br.cr, br.lambda1) == (0.5, 0.2, 2.0)
    with pytest.raises(LaclError):
        total_loss(0.5, 0.2, -1.0)


def test_total_loss_gradient_flows_through_both_terms():
    a, b = Tensor(1.0, requires_grad=True), Tensor(2.0, requires_grad=True)
    backward(total_loss(a * a, b * b, 0.5).tensor)
    assert (a.grad, b.grad) == (2.0, 2.0)


def test_mean_adjacent_correlation():
    C = np.repeat(np.random.default_rng(0).normal(size=(4, 1, 3)), 2, axis=1)
    assert mean_adjacent_correlation(C) == pytest.approx(1.0)
    assert mean_adjacent_correlation(C[:, :1]) == 0.0


def test_interleave_pairs_views():
    a, b = Tensor(np.array([[1.0], [2.0]])), Tensor(np.array([[10.0], [20.0]]))
    np.testing.assert_array_equal(interleave(a, b).data.ravel(), [1, 10, 2, 20])
