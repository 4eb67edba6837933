import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from apt.block import (
    KV_POLICIES,
    BlockConfig,
    backward,
    finite_diff_check,
    forward,
    init_params,
    param_shapes,
    params_to_vector,
    vector_to_params,
)
from apt.errors import (
    DimMismatch,
    InvalidEpsilon,
    InvalidSpec,
    NonFiniteInput,
    ShapeMismatch,
    StaleCache,
)
from apt.seeds import rng_for


def perturbed_params(config, seed=0, scale=0.05):
    """Params moved off the identity so gradients flow through every field."""
    rng = np.random.default_rng(seed)
    vec = params_to_vector(init_params(config, seed=seed))
    return vector_to_params(vec + rng.normal(scale=scale, size=vec.size), config)


# --- config validation ---

def test_heads_must_divide_dim():
    with pytest.raises(DimMismatch):
        BlockConfig(dim=8, heads=3)


def test_ff_width_defaults_to_4x():
    assert BlockConfig(dim=16, heads=8).ff_width == 64
    assert BlockConfig(dim=16, heads=8, ff_dim=10).ff_width == 10


def test_bad_kv_policy_rejected():
    with pytest.raises(InvalidSpec):
        BlockConfig(dim=8, heads=2, kv_policy="everything")


def test_bad_dropout_rejected():
    with pytest.raises(InvalidSpec):
        BlockConfig(dim=8, heads=2, dropout_rate=1.5)


# --- identity at init ---

def test_zero_init_identity_deterministic():
    cfg = BlockConfig(dim=8, heads=2, dropout_rate=0.0)
    params = init_params(cfg, seed=4)
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 8))
    out, _ = forward(params, w, rng.normal(size=(5, 8)), cfg)
    assert np.array_equal(out, w)


def test_zero_init_identity_survives_dropout():
    cfg = BlockConfig(dim=8, heads=4, dropout_rate=0.5)
    params = init_params(cfg, seed=4)
    rng = np.random.default_rng(1)
    w = rng.normal(size=(2, 8))
    out, _ = forward(params, w, rng.normal(size=(3, 8)), cfg, dropout_rng=rng_for(9))
    assert np.array_equal(out, w)


@settings(max_examples=25, deadline=None)
@given(
    k=st.integers(1, 5),
    n=st.integers(1, 6),
    heads=st.sampled_from([1, 2, 4]),
    seed=st.integers(0, 10_000),
)
def test_zero_init_identity_property(k, n, heads, seed):
    cfg = BlockConfig(dim=8, heads=heads, dropout_rate=0.2)
    params = init_params(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(k, 8))
    out, _ = forward(params, w, rng.normal(size=(n, 8)), cfg, dropout_rng=rng_for(seed))
    assert np.array_equal(out, w)


# --- forward semantics ---

def test_attention_rows_sum_to_one():
    cfg = BlockConfig(dim=8, heads=2, dropout_rate=0.0)
    params = perturbed_params(cfg, seed=1)
    rng = np.random.default_rng(2)
    _, cache = forward(params, rng.normal(size=(4, 8)), rng.normal(size=(6, 8)), cfg)
    sums = cache["attn"].sum(axis=-1)
    assert np.allclose(sums, 1.0, atol=1e-12)


def test_kv_token_permutation_invariance():
    # attention is a weighted sum over key/value rows; their order is irrelevant
    cfg = BlockConfig(dim=8, heads=2, dropout_rate=0.0)
    params = perturbed_params(cfg, seed=3)
    rng = np.random.default_rng(3)
    w, tok = rng.normal(size=(3, 8)), rng.normal(size=(7, 8))
    out1, _ = forward(params, w, tok, cfg)
    out2, _ = forward(params, w, tok[rng.permutation(7)], cfg)
    assert np.allclose(out1, out2, atol=1e-12)


def test_kv_policies_select_rows():
    cfg_all = BlockConfig(dim=8, heads=2, dropout_rate=0.0, kv_policy="all")
    cfg_cls = BlockConfig(dim=8, heads=2, dropout_rate=0.0, kv_policy="cls-only")
    cfg_patch = BlockConfig(dim=8, heads=2, dropout_rate=0.0, kv_policy="patches-only")
    params = perturbed_params(cfg_all, seed=5)
    rng = np.random.default_rng(5)
    w, tok = rng.normal(size=(2, 8)), rng.normal(size=(5, 8))

    out_cls, _ = forward(params, w, tok, cfg_cls)
    out_cls_direct, _ = forward(params, w, tok[:1], cfg_all)
    assert np.allclose(out_cls, out_cls_direct, atol=1e-14)

    out_patch, _ = forward(params, w, tok, cfg_patch)
    out_patch_direct, _ = forward(params, w, tok[1:], cfg_all)
    assert np.allclose(out_patch, out_patch_direct, atol=1e-14)

    out_all, _ = forward(params, w, tok, cfg_all)
    assert not np.allclose(out_all, out_cls, atol=1e-9)


def test_patches_only_needs_patch_rows():
    cfg = BlockConfig(dim=8, heads=2, kv_policy="patches-only")
    params = perturbed_params(cfg)
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeMismatch):
        forward(params, rng.normal(size=(2, 8)), rng.normal(size=(1, 8)), cfg)


def test_non_finite_input_rejected():
    cfg = BlockConfig(dim=4, heads=2)
    params = init_params(cfg, seed=0)
    w = np.full((2, 4), np.nan)
    with pytest.raises(NonFiniteInput):
        forward(params, w, np.ones((3, 4)), cfg)


def test_shape_mismatch_rejected():
    cfg = BlockConfig(dim=4, heads=2)
    params = init_params(cfg, seed=0)
    with pytest.raises(ShapeMismatch):
        forward(params, np.ones((2, 5)), np.ones((3, 4)), cfg)


def test_dropout_same_seed_same_output():
    cfg = BlockConfig(dim=8, heads=2, dropout_rate=0.3)
    params = perturbed_params(cfg, seed=6)
    rng = np.random.default_rng(6)
    w, tok = rng.normal(size=(3, 8)), rng.normal(size=(4, 8))
    out1, _ = forward(params, w, tok, cfg, dropout_rng=rng_for(77))
    out2, _ = forward(params, w, tok, cfg, dropout_rng=rng_for(77))
    assert np.array_equal(out1, out2)
    out3, _ = forward(params, w, tok, cfg, dropout_rng=rng_for(78))
    assert not np.array_equal(out1, out3)


# --- parameter plumbing ---

def test_param_vector_round_trip():
    cfg = BlockConfig(dim=8, heads=2)
    params = perturbed_params(cfg, seed=7)
    back = vector_to_params(params_to_vector(params), cfg)
    for name in param_shapes(cfg):
        assert np.array_equal(getattr(params, name), getattr(back, name))


def test_param_vector_wrong_size():
    cfg = BlockConfig(dim=8, heads=2)
    with pytest.raises(ShapeMismatch):
        vector_to_params(np.zeros(10), cfg)


# --- gradients ---

def test_finite_diff_small_config():
    cfg = BlockConfig(dim=6, heads=2, dropout_rate=0.0)
    params = perturbed_params(cfg, seed=8)
    rng = np.random.default_rng(8)
    err = finite_diff_check(params, cfg, rng.normal(size=(3, 6)), rng.normal(size=(4, 6)))
    assert err < 1e-4


def test_finite_diff_epsilon_validated():
    cfg = BlockConfig(dim=4, heads=2)
    params = init_params(cfg, seed=0)
    rng = np.random.default_rng(0)
    w, tok = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    with pytest.raises(InvalidEpsilon):
        finite_diff_check(params, cfg, w, tok, epsilon=0.0)
    with pytest.raises(InvalidEpsilon):
        finite_diff_check(params, cfg, w, tok, epsilon=-1e-5)


def test_stale_cache_rejected():
    cfg = BlockConfig(dim=8, heads=2, dropout_rate=0.0)
    params = perturbed_params(cfg, seed=9)
    rng = np.random.default_rng(9)
    w, tok = rng.normal(size=(3, 8)), rng.normal(size=(4, 8))
    _, cache = forward(params, w, tok, cfg)
    with pytest.raises(StaleCache):
        backward(params, cache, np.zeros((5, 8)), cfg)  # wrong row count
    cfg4 = BlockConfig(dim=8, heads=4, dropout_rate=0.0)
    with pytest.raises(StaleCache):
        backward(init_params(cfg4, seed=0), cache, np.zeros((3, 8)), cfg4)
