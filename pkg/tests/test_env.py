import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fixtures
from holab.env import EnvConfig, HandoverEnv, build_state, reward, rsrq_norm
from holab.protocol import EventKind, Phase, ProtocolConfig
from holab.tracegen import RadioTrace, build_dataset, default_map, random_route

C = 0.9405


def test_rsrq_norm_examples():
    assert rsrq_norm(10.0) == 1.0
    assert rsrq_norm(0.0) == 0.5
    assert rsrq_norm(-12.0) == 0.0
    assert rsrq_norm(25.0) == 1.0


def test_build_state_examples():
    s = build_state(1, [1.0, 1.0, 1.0], 0, None, 1000)
    assert s.one_hot.tolist() == [0.0, 1.0, 0.0]
    np.testing.assert_allclose(s.rsrq_norm, (10 * np.log10(0.5) + 10) / 20)
    assert s.rsrq_norm[0] == pytest.approx(0.349485, abs=1e-6)
    assert s.s_add == 0
    assert build_state(0, [1.0, 1.0], 1990, 1000, 1000).s_add == 1
    assert build_state(0, [1.0, 1.0], 2000, 1000, 1000).s_add == 0
    assert build_state(0, [1.0, 1.0, 1.0], 0, None, 1000).flat().shape == (7,)


def test_reward_examples():
    assert reward(C, 0.5, strongest=True) == pytest.approx(1.4405)
    assert reward(C, 0.5) == 0.5
    assert reward(C, 0.5, pp=True, strongest=True) == pytest.approx(-0.9405)
    assert reward(C, 0.5, low_sinr=True, strongest=True) == pytest.approx(-0.9405)
    assert reward(C, rlf=True, pp=True) == pytest.approx(-1.881)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        EnvConfig(C=0.0)
    with pytest.raises(ValueError):
        EnvConfig(decision_dt=15)
    with pytest.raises(KeyError, match="cc"):
        EnvConfig.from_mapping({"cc": "1"})
    p = tmp_path / "e.ini"
    p.write_text("[protocol]\nmts = 2000\n[env]\nC = 0.7\nreset_on_pp = true\n")
    cfg = EnvConfig.from_file(p)
    assert cfg.C == 0.7 and cfg.reset_on_pp and cfg.protocol.mts == 2000


# ---------------------------------------------------------------- stepping


def test_staying_on_dominant_bs():
    env = HandoverEnv(fixtures.dominant(), EnvConfig())
    obs = env.reset()
    assert obs.one_hot.tolist() == [1.0, 0.0]
    rewards = []
    while not env.done:
        res = env.step(0)
        rewards.append(res.reward)
        assert res.info["skipped_ticks"] == 0 and not res.info["ho_started"]
    expected = float(rsrq_norm(10 * np.log10(10 ** (-7.0) / 10 ** (-9.0))))
    np.testing.assert_allclose(rewards, expected + C)
    assert len(rewards) == fixtures.dominant().n_samples - 1
    assert all(e.kind is not EventKind.HO_COMPLETE for e in env.events)


def test_handover_skips_preparation_and_execution():
    env = HandoverEnv(fixtures.crossover(at=10), EnvConfig())
    env.reset()
    for _ in range(19):
        env.step(0)
    assert env.now == 190
    res = env.step(1)
    assert res.info["ho_started"] and res.info["ho_completed"]
    assert res.info["skipped_ticks"] == 8
    assert env.now == 280
    assert res.obs.one_hot.tolist() == [0.0, 1.0]
    assert res.obs.s_add == 1
    run = env.link_run()
    assert np.flatnonzero(np.isneginf(run.connected_sinr)).tolist() == [24, 25, 26, 27]


def test_ping_pong_terminates_when_enabled():
    tr = fixtures.piecewise([(300, [-75, -76], [10, 10])])
    for reset_on_pp in (False, True):
        env = HandoverEnv(tr, EnvConfig(reset_on_pp=reset_on_pp))
        env.reset()
        env.step(1)  # to BS 1, completes at 90 ms
        res = env.step(0)  # straight back: completes at 180 ms < MTS
        assert res.info["pp"] and res.reward == pytest.approx(-C)
        assert res.terminated is reset_on_pp
        assert env.done is reset_on_pp


def test_handover_failure_terminates():
    # agent leaves the good BS for one at -9 dB: HOF right after completion
    tr = fixtures.piecewise([(300, [-70, -90], [10, -9])])
    env = HandoverEnv(tr, EnvConfig())
    env.reset()
    res = env.step(1)
    assert not res.terminated
    res = env.step(1)
    assert res.info["hof"] and res.terminated and res.reward == pytest.approx(-2 * C)
    # without the reset rule the recovery ticks are skipped and the drive goes on
    env = HandoverEnv(tr, EnvConfig(reset_on_hof=False))
    env.reset()
    env.step(1)
    res = env.step(1)
    assert res.info["hof"] and not res.terminated
    assert res.info["skipped_ticks"] == 20 and env.state.phase is Phase.IDLE
    assert res.obs.one_hot.tolist() == [1.0, 0.0]


def test_trace_end_truncates():
    env = HandoverEnv(fixtures.dominant(5), EnvConfig())
    env.reset()
    for _ in range(3):
        assert not env.step(0).truncated
    res = env.step(0)
    assert res.truncated and not res.terminated and env.done
    with pytest.raises(RuntimeError):
        env.step(0)


def test_action_range_is_checked():
    env = HandoverEnv(fixtures.dominant(), EnvConfig())
    env.reset()
    with pytest.raises(ValueError):
        env.step(2)
    with pytest.raises(ValueError):
        env.step(-1)


def test_reset_is_deterministic_and_equivariant():
    tr = build_dataset(default_map(0), [random_route(3, duration=20.0)])[0]
    env = HandoverEnv(tr)
    a = env.reset(seed=5, shuffle_mapping=True)
    perm = env.perm.copy()
    b = env.reset(seed=5, shuffle_mapping=True)
    assert np.array_equal(a.flat(), b.flat())
    ident = env.reset(permutation=np.arange(5))
    plain = env.reset()
    assert np.array_equal(ident.flat(), plain.flat())
    np.testing.assert_array_equal(a.one_hot, plain.one_hot[perm])
    np.testing.assert_array_equal(a.rsrq_norm, plain.rsrq_norm[perm])


def test_link_run_is_in_trace_labels():
    tr = fixtures.crossover(at=10)
    env = HandoverEnv(tr, EnvConfig())
    env.reset(permutation=[1, 0])
    # in agent labels BS 1 is the trace's BS 0
    assert env.observe().one_hot.tolist() == [0.0, 1.0]
    for _ in range(19):
        env.step(1)
    env.step(0)
    run = env.link_run()
    assert run.serving[0] == 0 and run.serving[-1] == 1
    done = [e for e in run.events if e.kind is EventKind.HO_COMPLETE]
    assert (done[0].from_bs, done[0].to_bs) == (0, 1)


# ---------------------------------------------------------------- properties


def _random_walk_trace(seed, n=400, b=None):
    rng = np.random.default_rng(seed)
    b = b or int(rng.integers(2, 6))
    rsrp = -80.0 + np.cumsum(rng.normal(0.0, 1.0, (n, b)), axis=0)
    p = 10 ** (rsrp / 10)
    sinr = 10 * np.log10(p / (p.sum(axis=1, keepdims=True) - p + 10 ** -10.5))
    return RadioTrace(dt=0.01, rsrp=rsrp, sinr=sinr, speed=50.0, id=f"walk{seed}")


def _check_step(env, res, cfg):
    obs = res.obs.flat()
    assert obs.shape == (2 * env.n_bs + 1,)
    assert np.all(obs >= 0.0) and np.all(obs <= 1.0)
    assert -2 * cfg.C <= res.reward <= 1 + cfg.C
    if not res.truncated:
        # decision points only ever happen on an idle, connected link
        assert env.state.phase is Phase.IDLE
        assert res.obs.one_hot.sum() == 1.0
    env.state.check(cfg.protocol)
    if res.terminated:
        assert res.info["hof"] or (res.info["pp"] and cfg.reset_on_pp)


def test_contract_over_ten_thousand_random_steps():
    steps = 0
    seed = 0
    while steps < 10_000:
        rng = np.random.default_rng(seed)
        cfg = EnvConfig(reset_on_pp=bool(seed % 2), reset_on_hof=bool(seed % 3))
        env = HandoverEnv(_random_walk_trace(seed), cfg)
        env.reset(seed=seed, shuffle_mapping=True)
        while not env.done:
            # mostly stay, sometimes jump: keeps both HOs and long idle runs
            a = int(rng.integers(env.n_bs)) if rng.random() < 0.2 else int(env.observe().one_hot.argmax())
            res = env.step(a)
            _check_step(env, res, cfg)
            steps += 1
        seed += 1
    assert steps >= 10_000


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), perm_seed=st.integers(0, 10_000),
       actions=st.lists(st.integers(0, 4), min_size=5, max_size=60))
def test_relabelling_is_equivariant(seed, perm_seed, actions):
    tr = _random_walk_trace(seed, n=300, b=5)
    sigma = np.random.default_rng(perm_seed).permutation(5)
    cfg = EnvConfig(reset_on_hof=False)
    plain = HandoverEnv(tr, cfg)
    shuffled = HandoverEnv(tr, cfg)
    o1 = plain.reset()
    o2 = shuffled.reset(permutation=sigma)
    inv = np.argsort(sigma)
    for a in actions:
        np.testing.assert_array_equal(o2.one_hot, o1.one_hot[sigma])
        np.testing.assert_array_equal(o2.rsrq_norm, o1.rsrq_norm[sigma])
        assert o1.s_add == o2.s_add
        if plain.done:
            break
        # action a in plain labels is action inv[a] for the shuffled env
        r1, r2 = plain.step(a), shuffled.step(int(inv[a]))
        assert r1.reward == r2.reward and r1.info == r2.info and r1.terminated == r2.terminated
        o1, o2 = r1.obs, r2.obs
    np.testing.assert_array_equal(plain.link_run().serving, shuffled.link_run().serving)


def test_relabelled_trace_matches_shuffled_env():
    tr = _random_walk_trace(42, b=4)
    sigma = np.array([2, 0, 3, 1])
    a, b = HandoverEnv(tr), HandoverEnv(tr.permuted(sigma))
    oa, ob = a.reset(permutation=sigma), b.reset()
    # the interference sum runs in a different order, so allow rounding
    np.testing.assert_allclose(oa.flat(), ob.flat(), atol=1e-12)
    for act in [0, 0, 3, 3, 1, 2, 2, 2, 0]:
        ra, rb = a.step(act), b.step(act)
        np.testing.assert_allclose(ra.obs.flat(), rb.obs.flat(), atol=1e-12)
        assert ra.reward == pytest.approx(rb.reward, abs=1e-12) and ra.info == rb.info
        if a.done:
            break


def test_protocol_timing_flows_through_config():
    cfg = EnvConfig(protocol=ProtocolConfig(ho_prep=100, ho_exec=60))
    env = HandoverEnv(fixtures.piecewise([(300, [-75, -76], [10, 10])]), cfg)
    env.reset()
    res = env.step(1)
    assert res.info["skipped_ticks"] == 15 and env.now == 160


def test_relabel_mid_drive_only_changes_labels():
    tr = _random_walk_trace(7, b=4)
    cfg = EnvConfig(reset_on_hof=False)
    a, b = HandoverEnv(tr, cfg), HandoverEnv(tr, cfg)
    a.reset(seed=1, shuffle_mapping=True)
    b.reset(seed=1, shuffle_mapping=True)
    for act in [0, 0, 2, 2, 2]:
        a.step(act)
        b.step(act)
    sigma = np.array([3, 1, 0, 2])
    obs = b.relabel(permutation=sigma)
    assert b.now == a.now and b.state == a.state
    # back to trace labels through a's mapping, then forward through sigma
    in_trace = a.observe().rsrq_norm[np.argsort(a.perm)]
    np.testing.assert_array_equal(obs.rsrq_norm, in_trace[sigma])
    assert obs.one_hot[np.argsort(sigma)[a.state.serving_bs]] == 1.0
    # from here on the same physical choices give the same drive
    for phys in [1, 1, 3, 3]:
        ra = a.step(int(np.argsort(a.perm)[phys]))
        rb = b.step(int(np.argsort(b.perm)[phys]))
        assert ra.reward == rb.reward and ra.info == rb.info
    np.testing.assert_array_equal(a.link_run().serving, b.link_run().serving)
    with pytest.raises(ValueError):
        b.relabel(permutation=[0, 0, 1, 2])
