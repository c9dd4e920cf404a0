"""Scoring of handover policies: rate ratio, failures and ping-pongs."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .env import EnvConfig, HandoverEnv
from .neural import MlpParams
from .ppo import act_greedy
from .protocol import EventKind, LinkRun, ProtocolConfig, run_baseline
from .tracegen import RadioTrace


def gamma_metric(connected_sinr, sinr_all) -> float:
    """Achieved sum of log2(1 + SINR) over the per-tick best achievable sum.

    Both arguments are linear SINRs; outage ticks carry 0 in
    ``connected_sinr``.
    """
    conn = np.asarray(connected_sinr, dtype=float)
    best = np.log2(1.0 + np.asarray(sinr_all, dtype=float)).max(axis=1)
    denom = best.sum()
    if conn.shape[0] < 1 or not denom > 0:
        raise ValueError("gamma needs at least one tick with positive achievable rate")
    return float(np.log2(1.0 + conn).sum() / denom)


def db_to_linear(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


@dataclass
class EvalRow:
    policy: str
    speed_kmh: float
    trace_id: str
    gamma: float
    hof: int
    pp: int
    ho: int
    outage_ticks: int


@dataclass
class EvalReport:
    rows: list

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.rows], indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls([EvalRow(**d) for d in json.loads(text)])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_json(Path(path).read_text())

    def speeds(self) -> list[float]:
        return sorted({r.speed_kmh for r in self.rows})

    def by_speed(self, speed: float) -> list[EvalRow]:
        return [r for r in self.rows if r.speed_kmh == speed]


def score_run(run: LinkRun, trace: RadioTrace, policy: str) -> EvalRow:
    """Metrics of one simulated drive.  Counts come straight from the event log."""
    g = gamma_metric(db_to_linear(run.connected_sinr), db_to_linear(trace.sinr[: len(run.connected_sinr)]))
    return EvalRow(policy=policy, speed_kmh=float(trace.speed), trace_id=trace.id, gamma=g,
                   hof=run.count(EventKind.HOF), pp=run.count(EventKind.PP),
                   ho=run.count(EventKind.HO_COMPLETE), outage_ticks=run.outage_ticks)


def run_agent(trace: RadioTrace, actor: MlpParams, cfg: EnvConfig | None = None) -> LinkRun:
    """Greedy agent over the whole trace; failures do not end the drive."""
    cfg = replace(cfg or EnvConfig(), reset_on_hof=False, reset_on_pp=False)
    env = HandoverEnv(trace, cfg)
    obs = env.reset()
    while not env.done:
        obs = env.step(act_greedy(actor, obs)).obs
    return env.link_run()


def evaluate_policy(policy, traces: Iterable[RadioTrace], speeds: Sequence[float] | None = None,
                    protocol: ProtocolConfig | None = None, env_cfg: EnvConfig | None = None,
                    name: str | None = None) -> EvalReport:
    """Score ``policy`` on every trace (optionally only the given speeds).

    ``policy`` is ``"baseline"`` or an actor network.
    """
    rows = []
    traces = [t for t in traces if speeds is None or t.speed in set(speeds)]
    if speeds is not None:
        missing = sorted(set(speeds) - {t.speed for t in traces})
        if missing:
            raise ValueError(f"no traces at speed(s) {missing} km/h")
    for tr in traces:
        if isinstance(policy, str):
            if policy != "baseline":
                raise ValueError(f"unknown policy {policy!r}")
            run = run_baseline(tr, protocol or (env_cfg.protocol if env_cfg else None))
            rows.append(score_run(run, tr, name or "baseline"))
        else:
            ecfg = env_cfg or EnvConfig(protocol=protocol or ProtocolConfig())
            rows.append(score_run(run_agent(tr, policy, ecfg), tr, name or "agent"))
    return EvalReport(rows)


@dataclass
class SpeedComparison:
    speed_kmh: float
    gamma_a: float
    gamma_b: float
    d_gamma: float
    hof_a: int
    hof_b: int
    d_hof: int
    pp_a: int
    pp_b: int
    d_pp: int
    verdict: str


def compare(report_a: EvalReport, report_b: EvalReport) -> list[SpeedComparison]:
    """Per-speed mean gamma and summed HOF/PP of ``a`` (agent) minus ``b`` (baseline)."""
    sa, sb = set(report_a.speeds()), set(report_b.speeds())
    if sa != sb:
        missing = sorted(sa ^ sb)
        raise ValueError(f"speed {missing[0]:g} km/h is missing from one of the reports")
    out = []
    for v in sorted(sa):
        ra, rb = report_a.by_speed(v), report_b.by_speed(v)
        ia, ib = {r.trace_id for r in ra}, {r.trace_id for r in rb}
        if ia != ib:
            raise ValueError(f"trace sets differ at speed {v:g} km/h: {sorted(ia ^ ib)}")
        ga = float(np.mean([r.gamma for r in ra]))
        gb = float(np.mean([r.gamma for r in rb]))
        ha, hb = sum(r.hof for r in ra), sum(r.hof for r in rb)
        pa, pb = sum(r.pp for r in ra), sum(r.pp for r in rb)
        d = ga - gb
        verdict = "agent wins" if d > 0 else "baseline wins" if d < 0 else "tie"
        out.append(SpeedComparison(v, ga, gb, d, ha, hb, ha - hb, pa, pb, pa - pb, verdict))
    return out


def comparison_json(rows: list[SpeedComparison]) -> str:
    return json.dumps([asdict(r) for r in rows], indent=2)


def comparison_csv(rows: list[SpeedComparison]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(SpeedComparison.__dataclass_fields__))
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
    return buf.getvalue()


def comparison_table(rows: list[SpeedComparison]) -> str:
    lines = [f"{'speed':>7} {'gamma agent':>12} {'gamma base':>11} {'dGamma':>9} "
             f"{'dHOF':>5} {'dPP':>5}  verdict"]
    for r in rows:
        lines.append(f"{r.speed_kmh:>7g} {r.gamma_a:>12.5f} {r.gamma_b:>11.5f} {r.d_gamma:>+9.5f} "
                     f"{r.d_hof:>+5d} {r.d_pp:>+5d}  {r.verdict}")
    return "\n".join(lines)
