"""Analytic gradients against central finite differences; Adam update rules."""

import numpy as np
import pytest

from funcorr.embedding import (
    AdamState,
    EmbeddingError,
    LoadedView,
    ModelConfig,
    TrainConfig,
    adam_step,
    grad,
    init_params,
)
from funcorr.embedding.training import PairSample
from gradcheck import max_rel_error, small_fd_config


def test_gradients_match_finite_differences():
    # two seeds here; the acceptance gate runs the full ten
    for seed in (0, 1):
        params, batch, cfg = small_fd_config(seed)
        assert max_rel_error(params, batch, cfg) < 1e-4


def test_grad_deterministic():
    params, batch, cfg = small_fd_config(3)
    _, _, g1 = grad(params, batch, cfg)
    _, _, g2 = grad(params, batch, cfg)
    for k in g1:
        assert np.array_equal(g1[k], g2[k])


def test_block_logit_grads_equal_when_planes_identical():
    # identical planes make the fused feature independent of the softmax
    # weights, so the three logit gradients must coincide (at zero).
    rng = np.random.default_rng(5)
    cfg_m = ModelConfig(c_img=6, c_text=4, hidden=16, embed_dim=8, mask_head=True)
    params = init_params(cfg_m, seed=1)
    plane = rng.normal(size=(4, 4, 6))
    view = LoadedView(blocks=np.stack([plane] * 3), stride=14, view=None, part_masks={})
    pix = lambda: rng.uniform(0.0, 55.0, size=(8, 2))
    batch = [
        PairSample(
            fn_vec=rng.normal(size=4),
            view_1=view, view_2=view,
            pos_1=pix(), neg_1=pix(), pos_2=pix(), neg_2=pix(),
            spatial=[(view, pix(), view, pix())],
        )
    ]
    _, _, grads = grad(params, batch, TrainConfig(epochs=1, points_per_image=8))
    g = grads["block_logits"]
    assert np.abs(g - g[0]).max() < 1e-12


def test_doubling_lambda_doubles_gradient():
    params, batch, _ = small_fd_config(7)
    params.pop("mask_w")
    params.pop("mask_b")
    base = dict(epochs=1, points_per_image=8, use_func_loss=False, lambda_mask=0.0, tau=0.07)
    _, _, g1 = grad(params, batch, TrainConfig(lambda_spatial=10.0, **base))
    _, _, g2 = grad(params, batch, TrainConfig(lambda_spatial=20.0, **base))
    for k in g1:
        assert np.allclose(g2[k], 2.0 * g1[k], rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------------------
# adam_step


def rand_params(seed, shape=(4, 3)):
    rng = np.random.default_rng(seed)
    return {"w": rng.normal(size=shape), "b": rng.normal(size=shape[1])}


def test_adam_zero_gradient_from_fresh_state_is_identity():
    params = rand_params(0)
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    out = adam_step(params, zeros, AdamState.init(params), lr=1e-3)
    for k in params:
        assert np.array_equal(out[k], params[k])


def test_adam_zero_gradient_decays_moments():
    params = rand_params(0)
    state = AdamState.init(params)
    state.m = {k: np.ones_like(v) for k, v in params.items()}
    state.v = {k: np.full_like(v, 2.0) for k, v in params.items()}
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    adam_step(params, zeros, state, lr=1e-3)
    for k in params:
        assert np.allclose(state.m[k], 0.9, atol=1e-15)
        assert np.allclose(state.v[k], 2.0 * 0.999, atol=1e-15)


def test_adam_first_step_moves_each_coordinate_by_lr():
    rng = np.random.default_rng(1)
    params = rand_params(2)
    grads = {k: rng.uniform(0.5, 1.5, size=v.shape) * rng.choice([-1.0, 1.0], size=v.shape)
             for k, v in params.items()}
    out = adam_step(params, grads, AdamState.init(params), lr=1e-3)
    for k in params:
        step = out[k] - params[k]
        assert np.abs(np.abs(step) - 1e-3).max() < 1e-9
        assert np.array_equal(np.sign(step), -np.sign(grads[k]))


def test_adam_deterministic_trajectory():
    def run():
        params = rand_params(3)
        state = AdamState.init(params)
        rng = np.random.default_rng(4)
        for _ in range(5):
            grads = {k: rng.normal(size=v.shape) for k, v in params.items()}
            params = adam_step(params, grads, state, lr=1e-2)
        return params

    a, b = run(), run()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_adam_rejects_shape_mismatch():
    params = rand_params(5)
    bad = {"w": np.zeros((1, 3)), "b": np.zeros(3)}
    with pytest.raises(EmbeddingError):
        adam_step(params, bad, AdamState.init(params), lr=1e-3)
