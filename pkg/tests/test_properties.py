"""Property-based checks of the invariants that hold for every input."""

from __future__ import annotations

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from savn.audio.signal import convolve, mix_attack, stft
from savn.config import RunConfig
from savn.eval.metrics import EpisodeRecord, compute_metrics
from savn.rl.ppo import compute_gae
from savn.sensors import VisualConfig, render_visual
from savn.world import (
    VOLUME_LEVELS,
    AttackerAction,
    Heading,
    Pose,
    generate_scene,
    geodesic_distance,
    manhattan_distance,
    reset,
    step,
    volume_transition,
)
from test_ppo import brute_gae

FAST = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def scenes(draw):
    return generate_scene(draw(st.integers(0, 10_000)), draw(st.integers(4, 9)), draw(st.integers(4, 9)),
                          draw(st.sampled_from([0.0, 0.1, 0.2, 0.3])))


@FAST
@given(arrays(np.float64, 200, elements=finite), arrays(np.float64, 200, elements=finite), finite)
def test_stft_is_linear(a, b, c):
    lhs = stft(a + c * b, 64, 16)
    rhs = stft(a, 64, 16) + c * stft(b, 64, 16)
    scale = max(1.0, float(np.abs(rhs).max()))
    assert np.abs(lhs - rhs).max() <= 1e-9 * scale


@FAST
@given(arrays(np.float64, st.integers(1, 40), elements=finite), arrays(np.float64, st.integers(1, 30), elements=finite))
def test_convolve_matches_numpy(s, h):
    np.testing.assert_allclose(convolve(s, h), np.convolve(s, h), atol=1e-6, rtol=1e-9)


@FAST
@given(arrays(np.float64, (2, 50), elements=finite), arrays(np.float64, (2, 50), elements=finite),
       st.sampled_from(VOLUME_LEVELS))
def test_mix_is_target_plus_scaled_attacker(t, a, alpha):
    mixed = mix_attack(t, a, alpha)
    np.testing.assert_allclose(mixed, t + alpha * a)
    assert np.array_equal(mix_attack(t, a, 0.0), t)


@FAST
@given(scenes(), st.data())
def test_geodesic_is_a_metric_bounded_below_by_manhattan(scene, data):
    nodes = scene.nodes
    a, b, c = (data.draw(st.sampled_from(nodes)) for _ in range(3))
    dab = geodesic_distance(scene, a, b)
    assert dab == geodesic_distance(scene, b, a)
    assert dab <= geodesic_distance(scene, a, c) + geodesic_distance(scene, c, b)
    assert dab >= manhattan_distance(scene, a, b)
    assert (dab == 0) == (a == b)


@FAST
@given(scenes(), st.integers(0, 2**31 - 1), st.lists(st.tuples(st.integers(0, 3), st.integers(0, 2), st.integers(0, 10)), max_size=40))
def test_rewards_are_zero_sum_and_volume_stays_legal(scene, seed, moves):
    state = reset(scene, seed)
    assert state.agent.node != scene.goal
    for a, p, v in moves:
        state, rew, done = step(scene, state, a, AttackerAction(p, v, 0))
        assert rew.r_agent + rew.r_attacker == 0.0
        assert state.alpha in VOLUME_LEVELS and scene.is_free(state.agent.node)
        if done:
            break


@FAST
@given(st.integers(0, 10), st.integers(0, 10), st.sampled_from(["skipping", "sliding"]))
def test_volume_transition_range(cur, req, mode):
    nxt = volume_transition(cur, req, mode)
    assert 0 <= nxt <= 10
    if mode == "skipping":
        assert nxt == req
    else:
        assert abs(nxt - cur) <= 1 and (nxt - cur) * (req - cur) >= 0


@FAST
@given(scenes(), st.data(), st.integers(1, 9))
def test_depth_scan_is_normalized(scene, data, n_rays):
    node = data.draw(st.sampled_from(scene.nodes))
    heading = Heading(data.draw(st.integers(0, 3)))
    scan = render_visual(scene, Pose(node, heading), VisualConfig(n_rays=n_rays))
    assert scan.shape == (n_rays,) and np.all(scan > 0) and np.all(scan <= 1)


@FAST
@given(st.integers(1, 10), st.integers(1, 3), st.floats(0.5, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_gae_matches_double_sum(T, B, gamma, tau, seed):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=(T, B)), rng.normal(size=(T + 1, B))
    d = (rng.random((T, B)) < 0.3).astype(float)
    adv, _ = compute_gae(r, v, d, gamma, tau)
    np.testing.assert_allclose(adv, brute_gae(r, v, d, gamma, tau), atol=1e-10)


@st.composite
def records(draw):
    d = draw(st.integers(1, 30))
    success = draw(st.booleans())
    p = draw(st.integers(0, 100))
    da = 0 if success else draw(st.integers(0, 40))
    return EpisodeRecord(success, float(d), float(p), float(d), float(da), draw(st.floats(-50, 50)))


@FAST
@given(st.lists(records(), min_size=1, max_size=15), st.randoms())
def test_metrics_ranges_and_permutation_invariance(recs, rnd):
    m = compute_metrics(recs)
    assert 0 <= m["SPL"] <= m["SR"] <= 1 and 0 <= m["SSPL"] <= 1 and m["DTG"] >= 0
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    for k, v in compute_metrics(shuffled).items():
        assert abs(v - m[k]) <= 1e-9 * max(1.0, abs(v))


@FAST
@given(st.integers(0, 10_000), st.floats(1e-5, 1e-2), st.sampled_from(["saavn", "idl"]), st.booleans())
def test_config_round_trip_keeps_digest(seed, lr, mode, greedy):
    cfg = RunConfig().with_overrides([("run.seed", str(seed)), ("ppo.lr", repr(lr)), ("train.mode", mode),
                                      ("eval.greedy", str(greedy))])
    back = RunConfig.from_ini(cfg.to_ini())
    assert back.digest() == cfg.digest()
