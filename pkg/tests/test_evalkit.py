import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import fixtures
from holab.evalkit import (
    EvalReport,
    EvalRow,
    compare,
    comparison_csv,
    comparison_json,
    comparison_table,
    evaluate_policy,
    gamma_metric,
    run_agent,
    score_run,
)
from holab.neural import MlpParams
from holab.protocol import EventKind, run_baseline


def test_gamma_examples():
    assert gamma_metric([1.0, 3.0], [[1.0, 3.0], [3.0, 0.5]]) == pytest.approx(0.75)
    assert gamma_metric([3.0, 3.0], [[1.0, 3.0], [3.0, 0.5]]) == 1.0
    assert gamma_metric([0.0, 0.0], [[1.0, 3.0], [3.0, 0.5]]) == 0.0
    with pytest.raises(ValueError):
        gamma_metric([0.0], [[0.0, 0.0]])
    with pytest.raises(ValueError):
        gamma_metric([], np.zeros((0, 2)))


sinr_tables = hnp.arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(2, 5)),
                         elements=st.floats(1e-3, 1e4))


@settings(max_examples=100, deadline=None)
@given(tab=sinr_tables, seed=st.integers(0, 2**31))
def test_gamma_is_bounded_and_label_free(tab, seed):
    rng = np.random.default_rng(seed)
    choice = rng.integers(tab.shape[1], size=tab.shape[0])
    conn = tab[np.arange(tab.shape[0]), choice]
    conn[rng.random(tab.shape[0]) < 0.2] = 0.0  # some outage ticks
    g = gamma_metric(conn, tab)
    assert 0.0 <= g <= 1.0 + 1e-12
    # a per-tick relabelling of the BS columns changes nothing
    shuffled = np.array([row[rng.permutation(len(row))] for row in tab])
    assert gamma_metric(conn, shuffled) == pytest.approx(g, rel=1e-12)
    # the clairvoyant policy scores exactly 1
    assert gamma_metric(tab.max(axis=1), tab) == pytest.approx(1.0, rel=1e-12)


def test_baseline_on_dominant_trace_is_perfect():
    rep = evaluate_policy("baseline", [fixtures.dominant()])
    (row,) = rep.rows
    assert (row.gamma, row.hof, row.pp, row.ho, row.outage_ticks) == (1.0, 0, 0, 0, 0)


def test_counts_match_event_logs():
    for tr in (fixtures.crossover(), fixtures.t310_expiry(), fixtures.back_and_forth(),
               fixtures.failure_at_preparation_end()):
        run = run_baseline(tr)
        row = score_run(run, tr, "baseline")
        kinds = [e.kind for e in run.events]
        assert row.hof == kinds.count(EventKind.HOF)
        assert row.pp == kinds.count(EventKind.PP)
        assert row.ho == kinds.count(EventKind.HO_COMPLETE)
        assert row.outage_ticks == int(np.isneginf(run.connected_sinr).sum())


def test_crossover_gamma_by_hand():
    # 200 ticks; the handover completes four outage ticks after the crossing
    # is 24 ticks old, so 20 ticks sit on the weaker BS at 10 dB after it
    tr = fixtures.crossover()
    row = score_run(run_baseline(tr), tr, "baseline")
    r_best = np.log2(1 + 10.0)
    expected = (100 * r_best + 21 * r_best + 0 * 4 + 75 * r_best) / (200 * r_best)
    assert row.gamma == pytest.approx(expected)


def _fixed_actor(bs_bias):
    """A linear 'actor' that always prefers one agent-facing BS."""
    n = len(bs_bias)
    w = np.zeros((n, 2 * n + 1))
    return MlpParams([(w, np.asarray(bs_bias, dtype=float))])


def test_agent_run_keeps_going_after_failures():
    # always asking for BS 1 on a trace where BS 1 is unusable
    tr = fixtures.piecewise([(600, [-70, -90], [10, -9])])
    run = run_agent(tr, _fixed_actor([0.0, 1.0]))
    assert len(run.connected_sinr) == 600
    assert run.count(EventKind.HOF) >= 2
    row = score_run(run, tr, "agent")
    assert row.gamma < 1.0 and row.hof == run.count(EventKind.HOF)


def test_staying_agent_matches_quiet_baseline():
    tr = fixtures.dominant()
    a = evaluate_policy(_fixed_actor([1.0, 0.0]), [tr])
    b = evaluate_policy("baseline", [tr])
    assert a.rows[0].gamma == b.rows[0].gamma == 1.0
    assert a.rows[0].policy == "agent"


def test_speed_filter_and_missing_speed():
    a = fixtures.dominant()
    b = fixtures.piecewise([(100, [-70, -90], [10, -10])], speed=3.0)
    assert [r.speed_kmh for r in evaluate_policy("baseline", [a, b], speeds=[3.0]).rows] == [3.0]
    with pytest.raises(ValueError, match="30"):
        evaluate_policy("baseline", [a, b], speeds=[30.0])
    with pytest.raises(ValueError):
        evaluate_policy("clairvoyant", [a])


# ---------------------------------------------------------------- reports


def _row(policy, speed, tid, gamma, hof=0, pp=0):
    return EvalRow(policy, speed, tid, gamma, hof, pp, hof + pp, 0)


def test_identical_reports_give_zero_deltas():
    rep = EvalReport([_row("a", 3.0, "t0", 0.9, 1, 2), _row("a", 50.0, "t0", 0.8)])
    rows = compare(rep, rep)
    assert all(r.d_gamma == 0 and r.d_hof == 0 and r.d_pp == 0 and r.verdict == "tie" for r in rows)


def test_agent_wins_flag():
    agent = EvalReport([_row("agent", v, t, 0.99, 0, 1) for v in (3.0, 50.0) for t in ("x", "y")])
    base = EvalReport([_row("baseline", v, t, 0.97, 2, 0) for v in (3.0, 50.0) for t in ("x", "y")])
    rows = compare(agent, base)
    assert [r.verdict for r in rows] == ["agent wins", "agent wins"]
    assert rows[0].d_gamma == pytest.approx(0.02) and rows[0].d_hof == -4 and rows[0].d_pp == 2
    assert "agent wins" in comparison_table(rows)
    assert compare(base, agent)[0].verdict == "baseline wins"


def test_mismatched_reports_are_rejected():
    a = EvalReport([_row("a", 3.0, "x", 1.0), _row("a", 30.0, "x", 1.0)])
    b = EvalReport([_row("b", 3.0, "x", 1.0)])
    with pytest.raises(ValueError, match="30 km/h"):
        compare(a, b)
    c = EvalReport([_row("b", 3.0, "y", 1.0), _row("b", 30.0, "x", 1.0)])
    with pytest.raises(ValueError, match="trace sets"):
        compare(a, c)


def test_report_round_trip(tmp_path):
    rep = evaluate_policy("baseline", [fixtures.crossover(), fixtures.back_and_forth()])
    rep.save(tmp_path / "r.json")
    assert EvalReport.load(tmp_path / "r.json") == rep
    rows = json.loads((tmp_path / "r.json").read_text())
    assert {"policy", "speed_kmh", "trace_id", "gamma", "hof", "pp", "ho"} <= set(rows[0])


def test_comparison_outputs():
    rep = EvalReport([_row("a", 3.0, "x", 0.5)])
    rows = compare(rep, rep)
    assert json.loads(comparison_json(rows))[0]["speed_kmh"] == 3.0
    lines = comparison_csv(rows).splitlines()
    assert lines[0].startswith("speed_kmh,gamma_a,gamma_b,d_gamma") and len(lines) == 2
    assert float(lines[1].split(",")[1]) == 0.5
