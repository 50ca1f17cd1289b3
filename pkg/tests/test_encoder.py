import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spatialgrasp.dataset import RobotState
from spatialgrasp.encoder import (EncoderConfig, EncoderParams, TaskPromptEmbedding, TaskVocabulary,
                                  assemble_features, attend_window, attend_window_backward, attention_weights,
                                  condition_sequence, encode_window, encode_window_backward, project_token)
from spatialgrasp.errors import ShapeError, UsageError
from spatialgrasp.geometry import GraspPrompt, Quaternion
from spatialgrasp.gradcheck import finite_diff_check
from spatialgrasp.rng import RandomStream

SMALL = EncoderConfig(visual_dim=4, token_dim=8, task_dim=2)


def small_params(seed=0, config=SMALL):
    return EncoderParams.init(config, RandomStream(seed))


def zero_state():
    return RobotState((0.0, 0.0, 0.0), Quaternion(0.0, 0.0, 0.0, 1.0), 0.0)


def test_layout_length():
    cfg = EncoderConfig(visual_dim=64, task_dim=16)
    assert cfg.feature_dim == 64 + 8 + 10 + 16


def test_zero_inputs_absent_prompt():
    task = TaskPromptEmbedding("t", np.zeros(2))
    f = assemble_features(np.zeros(4), zero_state(), None, task, SMALL)
    want = np.zeros(SMALL.feature_dim)
    want[4 + 6] = 1.0  # qw of the identity end-effector orientation
    assert f.shape == (SMALL.feature_dim,)
    assert np.array_equal(f, want)
    assert f[4 + 8 + 9] == 0.0  # presence flag


def test_layout_order_with_prompt():
    prompt = GraspPrompt((1, 2, 3), Quaternion(0, 0, 0, 1), 0.05, 0.9)
    state = RobotState((4, 5, 6), Quaternion(0, 0, 0, 1), 0.5)
    task = TaskPromptEmbedding("t", np.array([7.0, 8.0]))
    f = assemble_features(np.arange(4.0), state, prompt, task, SMALL)
    assert f.tolist() == [0, 1, 2, 3, 4, 5, 6, 0, 0, 0, 1, 0.5, 1, 2, 3, 0, 0, 0, 1, 0.05, 0.9, 1, 7, 8]
    assert np.array_equal(f, assemble_features(np.arange(4.0), state, prompt, task, SMALL))


def test_visual_length_mismatch():
    with pytest.raises(ShapeError):
        assemble_features(np.zeros(5), zero_state(), None, TaskPromptEmbedding("t", np.zeros(2)), SMALL)


def test_vocabulary_is_seeded_and_total():
    a = TaskVocabulary(["pick_big", "pick_cup"], dim=16, seed=3)
    b = TaskVocabulary(["pick_cup", "pick_big"], dim=16, seed=3)
    assert np.array_equal(a.lookup("pick_big").vector, b.lookup("pick_big").vector)
    assert not np.array_equal(a.lookup("pick_big").vector, a.lookup("pick_cup").vector)
    with pytest.raises(UsageError):
        a.lookup("stack")


def test_projection_identity_and_affine():
    cfg = EncoderConfig(visual_dim=0, token_dim=18, task_dim=0)
    d = cfg.token_dim
    eye = EncoderParams(cfg, np.eye(d), np.zeros(d), *(np.eye(d) for _ in range(4)))
    f = np.random.default_rng(0).normal(size=18)
    assert np.array_equal(project_token(eye, f), f)
    b = np.arange(d, dtype=float)
    zero = EncoderParams(cfg, np.zeros((d, d)), b, *(np.eye(d) for _ in range(4)))
    assert np.array_equal(project_token(zero, f), b)


def test_projection_linearity():
    p = small_params()
    rng = np.random.default_rng(1)
    f1, f2 = rng.normal(size=(2, SMALL.feature_dim))
    lhs = project_token(p, f1 + f2)
    assert np.allclose(lhs, project_token(p, f1) + project_token(p, f2) - p.bias, atol=1e-12)
    with pytest.raises(ShapeError):
        project_token(p, np.zeros(3))


def test_identical_tokens_give_identical_rows():
    p = small_params()
    t = np.random.default_rng(2).normal(size=8)
    out = attend_window(p, np.stack([t, t])).reshape(2, 8)
    assert np.array_equal(out[0], out[1])


def test_attention_rows_sum_to_one():
    p = small_params()
    for seed in range(20):
        w = attention_weights(p, np.random.default_rng(seed).normal(size=(2, 8)) * 5)
        assert np.all(np.abs(w.sum(axis=1) - 1.0) <= 1e-9)


def test_attention_matches_explicit_formula():
    p = small_params(4)
    x = np.random.default_rng(3).normal(size=(2, 8))
    q, k, v = x @ p.wq.T, x @ p.wk.T, x @ p.wv.T
    out = np.empty((2, 8))
    for i in range(2):
        s = np.array([q[i] @ k[j] for j in range(2)]) / math.sqrt(8)
        a = np.exp(s) / np.exp(s).sum()
        out[i] = p.wo @ (a[0] * v[0] + a[1] * v[1])
    assert np.allclose(attend_window(p, x), out.ravel(), atol=1e-12)


def test_window_must_have_two_tokens():
    with pytest.raises(ShapeError):
        attend_window(small_params(), np.zeros((3, 8)))


@given(st.floats(-1e3, 1e3), st.integers(0, 1000))
def test_attention_output_finite(scale, seed):
    x = np.random.default_rng(seed).normal(size=(2, 8)) * scale
    assert np.all(np.isfinite(attend_window(small_params(), x)))


def test_conditioning_depends_only_on_last_two_steps():
    p = small_params()
    feats = list(np.random.default_rng(5).normal(size=(5, SMALL.feature_dim)))
    base = condition_sequence(p, feats)
    perturbed = list(feats)
    perturbed[1] = perturbed[1] + 10.0
    changed = condition_sequence(p, perturbed)
    assert np.array_equal(base[3], changed[3]) and np.array_equal(base[4], changed[4])
    assert not np.array_equal(base[2], changed[2])
    # episode start repeats the first token
    assert np.array_equal(base[0], encode_window(p, feats[0], feats[0]))


def test_attention_gradients_match_finite_differences():
    p = small_params(7)
    rng = np.random.default_rng(8)
    tokens = rng.normal(size=(2, 8))
    c = rng.normal(size=16)

    def loss(t):
        q = EncoderParams(SMALL, p.projection, p.bias, t["wq"], t["wk"], t["wv"], t["wo"])
        grads, _ = attend_window_backward(q, tokens, c)
        return float(c @ attend_window(q, tokens)), grads

    attn = {n: p.tensors()[n] for n in ("wq", "wk", "wv", "wo")}
    assert finite_diff_check(loss, attn, 1e-5) < 1e-4


def test_token_gradient_matches_finite_differences():
    p = small_params(9)
    rng = np.random.default_rng(10)
    c = rng.normal(size=16)

    def loss(t):
        _, g_x = attend_window_backward(p, t["x"], c)
        return float(c @ attend_window(p, t["x"])), {"x": g_x}

    assert finite_diff_check(loss, {"x": rng.normal(size=(2, 8))}, 1e-5) < 1e-4


def test_full_encoder_gradients():
    p = small_params(11)
    rng = np.random.default_rng(12)
    f0, f1 = rng.normal(size=(2, SMALL.feature_dim))
    c = rng.normal(size=16)

    def loss(t):
        q = EncoderParams(SMALL, **t)
        return float(c @ encode_window(q, f0, f1)), encode_window_backward(q, f0, f1, c)

    assert finite_diff_check(loss, p.tensors(), 1e-5) < 1e-4


def test_init_bounds_and_save_load(tmp_path):
    p = small_params(13)
    bound = 1 / math.sqrt(SMALL.feature_dim)
    for arr in p.tensors().values():
        assert np.all(np.abs(arr) <= bound)
    p.save(tmp_path / "enc.bin")
    q = EncoderParams.load(tmp_path / "enc.bin")
    assert q.config == SMALL and q.to_bytes() == p.to_bytes()


def test_params_shape_validation():
    with pytest.raises(ShapeError):
        EncoderParams(SMALL, np.zeros((8, 3)), np.zeros(8), *(np.zeros((8, 8)) for _ in range(4)))
