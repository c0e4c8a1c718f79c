import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lacl.data import PAD
from lacl.encoder import EncoderConfig, LayerStates, forward, init_encoder_params, pool_layers
from lacl.errors import LaclError
from lacl.numcore import Tensor, backward, finite_diff_gradient, no_grad, relative_error


def make(seed=0, **kw):
    cfg = EncoderConfig(vocab_size=20, **kw)
    return cfg, init_encoder_params(cfg, np.random.default_rng(seed))


def ids_batch(rng, b, t, vocab=20):
    return rng.integers(3, vocab, size=(b, t))


def test_layer_shapes_default_config():
    cfg, p = make()
    st_ = forward(p, cfg, ids_batch(np.random.default_rng(0), 2, 5))
    assert len(st_) == 4
    assert all(H.shape == (2, 5, 64) for H in st_.H)
    assert pool_layers(st_).shape == (2, 4, 64)


def test_inference_is_bitwise_deterministic():
    cfg, p = make()
    ids = ids_batch(np.random.default_rng(1), 3, 6)
    a, b = forward(p, cfg, ids), forward(p, cfg, ids)
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.H, b.H))


def test_dropout_depends_on_seed_only():
    cfg, p = make()
    ids = ids_batch(np.random.default_rng(2), 3, 6)
    a = pool_layers(forward(p, cfg, ids, True, [1, 0, 0, 0])).data
    b = pool_layers(forward(p, cfg, ids, True, [1, 0, 0, 0])).data
    c = pool_layers(forward(p, cfg, ids, True, [1, 0, 0, 1])).data
    assert a.tobytes() == b.tobytes()
    assert not np.allclose(a, c)
    ref = pool_layers(forward(p, cfg, ids)).data
    assert not np.allclose(a, ref)


def test_pool_is_masked_mean():
    H = Tensor(np.array([[[1.0, 5.0], [3.0, 7.0], [100.0, 100.0]]]))
    states = LayerStates([H], np.array([[True, True, False]]))
    np.testing.assert_array_equal(pool_layers(states).data[0, 0], [2.0, 6.0])


def test_all_pad_sequence_errors():
    cfg, p = make()
    with pytest.raises(LaclError):
        pool_layers(forward(p, cfg, np.array([[5, 6], [PAD, PAD]])))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 8), st.integers(1, 6))
def test_padding_invariance(seed, length, extra):
    cfg, p = make(seed % 7, num_layers=2, hidden=16, heads=2, max_len=16)
    rng = np.random.default_rng(seed)
    ids = ids_batch(rng, 1, length)
    padded = np.concatenate([ids, np.full((1, extra), PAD)], axis=1)
    a = pool_layers(forward(p, cfg, ids)).data
    b = pool_layers(forward(p, cfg, padded)).data
    np.testing.assert_allclose(a, b, atol=1e-10, rtol=0)


def test_errors():
    cfg, p = make(max_len=4)
    with pytest.raises(LaclError, match="sequence-too-long"):
        forward(p, cfg, np.ones((1, 5), dtype=int) * 3)
    with pytest.raises(LaclError, match="unknown-token"):
        forward(p, cfg, np.array([[3, 25]]))


@pytest.mark.parametrize(
    "kw",
    [dict(num_layers=3, hidden=64), dict(hidden=64, heads=5), dict(dropout_p=1.0), dict(num_layers=0)],
)
def test_config_validation(kw):
    with pytest.raises(LaclError, match="bad-config"):
        EncoderConfig(vocab_size=20, **kw)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 4), st.integers(0, 99))
def test_pooled_shapes_for_valid_configs(L, heads_pow, mult, seed):
    heads = 2 ** (heads_pow - 1)
    D = L * heads * mult
    cfg, p = make(seed, num_layers=L, hidden=D, heads=heads, ff_mult=1, max_len=6)
    pooled = pool_layers(forward(p, cfg, ids_batch(np.random.default_rng(seed), 2, 3)))
    assert pooled.shape == (2, L, D)


def test_gradient_through_encoder_matches_finite_differences():
    cfg, p = make(3, num_layers=2, hidden=8, heads=2, ff_mult=2, max_len=8)
    rng = np.random.default_rng(4)
    ids = np.array([[4, 5, 6, 0], [7, 8, 9, 10]])
    w = rng.normal(size=(2, 2, 8))

    def loss():
        return (pool_layers(forward(p, cfg, ids, True, [9])) * w).sum()

    backward(loss())
    worst = 0.0
    for name in sorted(p):
        t = p[name]
        coords = rng.choice(t.data.size, size=min(4, t.data.size), replace=False)
        base = t.data.copy()

        def f(x, t=t):
            t.data[...] = x
            with no_grad():
                return loss().item()

        num = finite_diff_gradient(f, base, 1e-4, coords=coords)
        t.data[...] = base
        ana = t.grad if t.grad is not None else np.zeros_like(base)
        worst = max(worst, float(relative_error(ana.reshape(-1)[coords], num.reshape(-1)[coords]).max()))
    assert worst < 1e-4
