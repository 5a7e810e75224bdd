"""Network primitives, BPTT gradients, sampling, Adam and checkpoints."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from savn.nn import (
    EncoderConfig,
    NonFiniteError,
    ParameterStore,
    PolicyNet,
    adam_update,
    categorical_head,
    clip_grads,
    dense_backward,
    dense_forward,
    entropy,
    gru_step,
    gru_step_backward,
    load_store_arrays,
    log_softmax,
    parameter_count,
    read_checkpoint,
    sample,
    store_to_arrays,
    write_checkpoint,
)

HEADS = {"agent": 4}
ATTACKER_HEADS = {"pos": 3, "vol": 11, "cat": 5}


def scalar_gru(p, x, h):
    """Per-unit loop GRU written straight from the gate equations."""
    H = h.size
    out = np.empty(H)
    gi = p["W_ih"] @ x + p["b_ih"]
    gh = p["W_hh"] @ h + p["b_hh"]
    for j in range(H):
        r = 1 / (1 + math.exp(-(gi[j] + gh[j])))
        z = 1 / (1 + math.exp(-(gi[H + j] + gh[H + j])))
        n = math.tanh(gi[2 * H + j] + r * gh[2 * H + j])
        out[j] = (1 - z) * n + z * h[j]
    return out


def _gru_params(rng, d, h):
    return {"W_ih": rng.normal(size=(3 * h, d)), "W_hh": rng.normal(size=(3 * h, h)),
            "b_ih": rng.normal(size=3 * h), "b_hh": rng.normal(size=3 * h)}


def fd_grad(f, arr, eps=1e-6):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        up = f()
        arr[i] = old - eps
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


# -- primitives ------------------------------------------------------------------

def test_dense_layout_and_backward(rng):
    W, b, x = rng.normal(size=(3, 5)), rng.normal(size=3), rng.normal(size=(4, 5))
    y = dense_forward(W, b, x)
    np.testing.assert_allclose(y[1], W @ x[1] + b)
    gy = rng.normal(size=(4, 3))
    gx, gW, gb = dense_backward(W, x, gy)
    loss = lambda: float(np.sum(gy * dense_forward(W, b, x)))
    np.testing.assert_allclose(gW, fd_grad(loss, W), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gx, fd_grad(loss, x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gb, gy.sum(axis=0))
    with pytest.raises(ValueError):
        dense_forward(W, b, rng.normal(size=(2, 4)))


def test_gru_step_matches_scalar_loop(rng):
    p = _gru_params(rng, 5, 4)
    x, h = rng.normal(size=5), rng.normal(size=4)
    h_new, _ = gru_step(p, x[None], h[None])
    np.testing.assert_allclose(h_new[0], scalar_gru(p, x, h), atol=1e-12)


def test_gru_step_backward_finite_differences(rng):
    p = _gru_params(rng, 3, 4)
    x, h = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    g = rng.normal(size=(2, 4))
    _, cache = gru_step(p, x, h)
    dx, dh, grads = gru_step_backward(p, x, cache, g)
    loss = lambda: float(np.sum(g * gru_step(p, x, h)[0]))
    for name in p:
        np.testing.assert_allclose(grads[name], fd_grad(loss, p[name]), rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(dx, fd_grad(loss, x), rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(dh, fd_grad(loss, h), rtol=1e-5, atol=1e-8)


def test_log_softmax_is_stable_and_normalized():
    logits = np.array([[1000.0, 0.0, -1000.0], [1.0, 2.0, 3.0]])
    lp = log_softmax(logits)
    np.testing.assert_allclose(np.exp(lp).sum(axis=-1), 1.0)
    assert lp[0, 0] == 0.0
    lse = math.log(math.e + math.e**2 + math.e**3)
    np.testing.assert_allclose(lp[1], [1 - lse, 2 - lse, 3 - lse])
    with pytest.raises(NonFiniteError):
        log_softmax(np.array([np.nan, 0.0]))


def test_entropy_of_uniform_and_point_mass():
    assert entropy(np.log(np.full(4, 0.25))) == pytest.approx(math.log(4))
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = np.log(np.array([1.0, 0.0]))
    assert entropy(np.where(np.isfinite(lp), lp, -1e300)) == pytest.approx(0.0)


def test_categorical_head_probabilities(rng):
    W, b, s = rng.normal(size=(3, 2)), np.zeros(3), rng.normal(size=(5, 2))
    logits, probs = categorical_head(W, b, s)
    np.testing.assert_allclose(probs, np.exp(logits) / np.exp(logits).sum(axis=-1, keepdims=True))


def test_sample_frequencies_pass_chi_square():
    probs = np.array([0.1, 0.2, 0.3, 0.4])
    rng = np.random.default_rng(2024)
    n = 20000
    actions, logp = sample(np.tile(probs, (n, 1)), rng)
    counts = np.bincount(actions, minlength=4)
    assert stats.chisquare(counts, probs * n).pvalue > 1e-3
    np.testing.assert_allclose(logp, np.log(probs[actions]))


def test_sample_never_picks_zero_probability():
    rng = np.random.default_rng(0)
    actions, _ = sample(np.tile([0.0, 1.0, 0.0], (500, 1)), rng)
    assert set(actions.tolist()) == {1}


# -- optimizer -------------------------------------------------------------------

def test_adam_hand_trace():
    store = ParameterStore()
    store.add("w", np.array([1.0]))
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-5
    w, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate([0.5, -0.25, 2.0], start=1):
        adam_update(store, {"w": np.array([g])}, lr, max_grad_norm=None)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        assert store["w"][0] == pytest.approx(w, rel=1e-14)
    assert store.step == 3


def test_adam_clips_before_moments():
    store = ParameterStore()
    store.add("w", np.zeros(2))
    norm = adam_update(store, {"w": np.array([3.0, 4.0])}, 0.0, max_grad_norm=0.5)
    assert norm == pytest.approx(5.0)
    # lr 0 leaves params but the first moment sees the clipped gradient
    np.testing.assert_allclose(store.m["w"], 0.1 * np.array([3.0, 4.0]) * 0.5 / (5.0 + 1e-6))
    assert not store["w"].any()


def test_adam_rejects_bad_gradients():
    store = ParameterStore()
    store.add("w", np.zeros(2))
    with pytest.raises(NonFiniteError):
        adam_update(store, {"w": np.array([np.inf, 0.0])}, 0.1)
    with pytest.raises(ValueError):
        adam_update(store, {"w": np.zeros(3)}, 0.1)
    with pytest.raises(KeyError):
        store.add("w", np.zeros(1))


def test_clip_grads_joint_norm():
    a, b = {"x": np.array([3.0])}, {"y": np.array([4.0])}
    assert clip_grads([a, b], 1.0) == pytest.approx(5.0)
    assert math.hypot(a["x"][0], b["y"][0]) == pytest.approx(1.0, abs=1e-6)
    c = {"x": np.array([0.1])}
    clip_grads([c], 1.0)
    assert c["x"][0] == 0.1


# -- network ---------------------------------------------------------------------

@pytest.mark.parametrize("fusion", ["concatenate", "elementwise_multiply"])
@pytest.mark.parametrize("heads", [HEADS, ATTACKER_HEADS])
def test_parameter_count_matches_store(fusion, heads):
    cfg = EncoderConfig(6, 6, fusion, 5)
    net = PolicyNet(cfg, 7, (3, 4, 2), heads, seed=1)
    assert net.store.n_parameters == parameter_count(cfg, 7, 24, heads)


def test_parameter_count_by_hand():
    cfg = EncoderConfig(2, 3, "concatenate", 4)
    enc = (5 + 1) * 2 + 3 * 2 + (6 + 1) * 3 + 4 * 3
    gru = 3 * 4 * 5 + 3 * 4 * 4 + 2 * 3 * 4
    heads = (4 * 2 + 2) + (4 + 1)
    assert parameter_count(cfg, 5, 6, {"a": 2}) == enc + gru + heads


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(fusion="sum")
    with pytest.raises(ValueError):
        EncoderConfig(4, 5, "elementwise_multiply")


def test_init_is_seeded_and_actor_is_small():
    a = PolicyNet(EncoderConfig(4, 4, "concatenate", 6), 3, (2, 2, 2), HEADS, seed=5)
    b = PolicyNet(EncoderConfig(4, 4, "concatenate", 6), 3, (2, 2, 2), HEADS, seed=5)
    c = PolicyNet(EncoderConfig(4, 4, "concatenate", 6), 3, (2, 2, 2), HEADS, seed=6)
    assert a.store.digest() == b.store.digest() != c.store.digest()
    assert np.abs(a.params["actor.agent.W"]).max() < 0.01
    assert not a.params["gru.b_ih"].any()


def test_act_matches_forward(rng):
    net = PolicyNet(EncoderConfig(4, 4, "concatenate", 5), 3, (2, 3, 2), ATTACKER_HEADS, seed=2)
    T, B = 4, 2
    vis, aud = rng.normal(size=(T, B, 3)), rng.normal(size=(T, B, 2, 3, 2))
    masks = np.ones((T, B))
    masks[2, 1] = 0.0
    h0 = rng.normal(size=(B, 5))
    logits, values, _ = net.forward(vis, aud, h0, masks)
    h = h0
    for t in range(T):
        lg, vals, h = net.act(vis[t], aud[t], h, masks[t])
        for head in ATTACKER_HEADS:
            np.testing.assert_allclose(lg[head], logits[head][t], atol=1e-13)
            np.testing.assert_allclose(vals[head], values[head][t], atol=1e-13)


@pytest.mark.parametrize("fusion", ["concatenate", "elementwise_multiply"])
def test_bptt_finite_differences(fusion):
    rng = np.random.default_rng(31)
    net = PolicyNet(EncoderConfig(4, 4, fusion, 3), 3, (2, 2, 2), ATTACKER_HEADS, seed=3)
    for name, p in net.params.items():
        if name.endswith(".b"):
            p += rng.normal(scale=0.1, size=p.shape)
    T, B = 4, 2
    vis, aud = rng.normal(size=(T, B, 3)), rng.normal(size=(T, B, 2, 2, 2))
    masks = np.ones((T, B))
    masks[2, 0] = 0.0
    h0 = rng.normal(size=(B, 3))
    g_logits = {k: rng.normal(size=(T, B, n)) for k, n in ATTACKER_HEADS.items()}
    g_values = {k: rng.normal(size=(T, B)) for k in ATTACKER_HEADS}

    def loss():
        lg, vals, _ = net.forward(vis, aud, h0, masks)
        return sum(float(np.sum(g_logits[k] * lg[k]) + np.sum(g_values[k] * vals[k])) for k in ATTACKER_HEADS)

    _, _, cache = net.forward(vis, aud, h0, masks)
    grads = net.backward(cache, g_logits, g_values)
    for name, p in net.params.items():
        num = fd_grad(loss, p)
        err = np.linalg.norm(grads[name] - num) / max(np.linalg.norm(num), 1e-8)
        assert err < 1e-5, (name, err)


def test_backward_skips_missing_heads(rng):
    net = PolicyNet(EncoderConfig(3, 3, "concatenate", 3), 2, (1, 2, 2), ATTACKER_HEADS, seed=4)
    T, B = 2, 1
    _, _, cache = net.forward(rng.normal(size=(T, B, 2)), rng.normal(size=(T, B, 4)), np.zeros((B, 3)), np.ones((T, B)))
    grads = net.backward(cache, {"pos": np.ones((T, B, 3))}, {})
    assert not grads["actor.vol.W"].any() and not grads["critic.pos.W"].any()
    assert grads["actor.pos.W"].any()


def test_encode_shape_errors(rng):
    net = PolicyNet(EncoderConfig(3, 3), 2, (1, 2, 2), HEADS)
    with pytest.raises(ValueError):
        net.encode(rng.normal(size=(1, 3)), rng.normal(size=(1, 4)))
    with pytest.raises(ValueError):
        net.encode(rng.normal(size=(1, 2)), rng.normal(size=(1, 5)))


# -- checkpoints -----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    net = PolicyNet(EncoderConfig(3, 3), 2, (1, 2, 2), HEADS, seed=8)
    net.store.m["vis0.W"] += 0.5
    arrays = store_to_arrays(net.store, "agent")
    path = tmp_path / "a.ckpt"
    write_checkpoint(path, arrays, "ab" * 32, {"step": 7, "note": "x"})
    back, digest, meta = read_checkpoint(path)
    assert digest == "ab" * 32 and meta == {"step": 7, "note": "x"}
    fresh = PolicyNet(EncoderConfig(3, 3), 2, (1, 2, 2), HEADS, seed=99)
    load_store_arrays(fresh.store, back, "agent", meta["step"])
    assert fresh.store.digest() == net.store.digest() and fresh.store.step == 7
    np.testing.assert_array_equal(fresh.store.m["vis0.W"], net.store.m["vis0.W"])


def test_checkpoint_corruption_is_reported(tmp_path):
    path = tmp_path / "a.ckpt"
    with pytest.raises(ValueError):
        write_checkpoint(path, {}, "short", {})
    write_checkpoint(path, {"x": np.arange(3.0)}, "0" * 64, {})
    data = path.read_bytes()
    for bad, msg in ((data[:10], "truncated"), (b"XXXXXXXX" + data[8:], "not a checkpoint"),
                     (data + b"\0", "trailing"), (data[:-5], "corrupt")):
        path.write_bytes(bad)
        with pytest.raises(ValueError, match=msg):
            read_checkpoint(path)


def test_load_rejects_shape_mismatch(tmp_path):
    a = PolicyNet(EncoderConfig(3, 3), 2, (1, 2, 2), HEADS)
    b = PolicyNet(EncoderConfig(4, 4), 2, (1, 2, 2), HEADS)
    with pytest.raises(ValueError, match="shape"):
        load_store_arrays(b.store, store_to_arrays(a.store, "agent"), "agent", 0)
    with pytest.raises(ValueError, match="lacks"):
        load_store_arrays(b.store, {}, "agent", 0)
