"""3GPP baseline handover logic and the link monitor shared with the RL agent.

Time is kept in integer milliseconds.  One call to :func:`process_tick`
advances the link by one ``dt`` tick: the monitor (T310, handover failure
detection) runs first, then either the running handover/recovery phase is
advanced or, in baseline mode, the A2/A3 time-to-trigger logic is evaluated.

Tick conventions, with ``k`` the tick at which the A2 and A3 conditions first
hold together (default timings):

* ``k + 16``  TTT elapsed (160 ms), HO triggered, phase ``HO_PREP``
* ``k + 21``  preparation done (50 ms), phase ``HO_EXEC``
* ``k + 25``  execution done (40 ms), serving BS switched, ``HO_COMPLETE``

A handover failure at tick ``h`` leaves the UE unconnected for ticks
``h .. h + 19`` and reconnects it at ``h + 20`` (200 ms recovery).
"""

from __future__ import annotations

import configparser
import enum
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np


class Phase(str, enum.Enum):
    IDLE = "IDLE"
    TTT_RUNNING = "TTT_RUNNING"
    HO_PREP = "HO_PREP"
    HO_EXEC = "HO_EXEC"
    RLF_RECOVERY = "RLF_RECOVERY"


class EventKind(str, enum.Enum):
    HO_TRIGGERED = "HO_TRIGGERED"
    HO_COMPLETE = "HO_COMPLETE"
    HOF = "HOF"
    PP = "PP"
    RLF_RECOVERY_START = "RLF_RECOVERY_START"
    RLF_RECOVERY_END = "RLF_RECOVERY_END"


@dataclass(frozen=True)
class ProtocolConfig:
    """Handover protocol parameters; powers in dBm/dB, durations in ms."""

    a2_threshold: float = -80.0
    a2_hysteresis: float = 1.0
    a3_hysteresis: float = 1.0
    a3_offset: float = 2.0
    ttt: int = 160
    ho_prep: int = 50
    ho_exec: int = 40
    t310: int = 1000
    q_out: float = -8.0
    q_in: float = -6.0
    rlf_recovery: int = 200
    mts: int = 1000
    dt: int = 10

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        for name in ("ttt", "ho_prep", "ho_exec", "t310", "rlf_recovery", "mts"):
            v = getattr(self, name)
            if v <= 0 or v % self.dt:
                raise ValueError(f"{name}={v} must be a positive multiple of dt={self.dt}")
        if not self.q_in > self.q_out:
            raise ValueError("q_in must exceed q_out")

    @classmethod
    def from_mapping(cls, values: dict) -> "ProtocolConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise KeyError(f"unknown protocol parameter(s): {', '.join(unknown)}")
        conv = {}
        for k, v in values.items():
            conv[k] = int(v) if known[k] == "int" else float(v)
        return cls(**conv)

    @classmethod
    def from_file(cls, path, section: str = "protocol") -> "ProtocolConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        if not parser.has_section(section):
            return cls()
        return cls.from_mapping(dict(parser.items(section)))


@dataclass(frozen=True)
class LinkMonitorState:
    serving_bs: Optional[int]
    phase: Phase = Phase.IDLE
    phase_elapsed: int = 0
    t310_running: bool = False
    t310_elapsed: int = 0
    target_bs: Optional[int] = None
    last_ho_time: Optional[int] = None
    prev_serving_bs: Optional[int] = None
    ho_just_completed: bool = False

    def check(self, cfg: ProtocolConfig) -> None:
        """Raise ``AssertionError`` if the state violates its invariants."""
        limit = {Phase.TTT_RUNNING: cfg.ttt, Phase.HO_PREP: cfg.ho_prep,
                 Phase.HO_EXEC: cfg.ho_exec, Phase.RLF_RECOVERY: cfg.rlf_recovery}
        assert self.phase_elapsed <= limit.get(self.phase, 0), self
        assert 0 <= self.t310_elapsed <= cfg.t310, self
        assert self.t310_running or self.t310_elapsed == 0, self
        assert (self.serving_bs is None) == (self.phase is Phase.RLF_RECOVERY), self
        if self.target_bs is not None:
            assert self.target_bs != self.serving_bs, self
        assert (self.target_bs is not None) == (self.phase in (Phase.HO_PREP, Phase.HO_EXEC)), self


class EventRecord(NamedTuple):
    time: int
    kind: EventKind
    from_bs: Optional[int] = None
    to_bs: Optional[int] = None

    def to_json(self) -> str:
        return json.dumps({"t_ms": self.time, "kind": self.kind.value,
                           "from": self.from_bs, "to": self.to_bs})

    @classmethod
    def from_json(cls, line: str) -> "EventRecord":
        d = json.loads(line)
        return cls(int(d["t_ms"]), EventKind(d["kind"]), d["from"], d["to"])


def write_events(path, events: Iterable[EventRecord]) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")


def read_events(path) -> list[EventRecord]:
    return [EventRecord.from_json(line) for line in Path(path).read_text().splitlines() if line.strip()]


# ---------------------------------------------------------------- primitives


def pseudo_rsrq(rsrp_linear, b: int) -> float:
    """Serving RSRP over the summed RSRP of every other BS (linear ratio)."""
    p = np.asarray(rsrp_linear, dtype=float)
    if p.shape[0] < 2:
        raise ValueError("pseudo-RSRQ needs at least two base stations")
    return float(p[b] / (p.sum() - p[b]))


def pseudo_rsrq_db(rsrp_dbm) -> np.ndarray:
    """Pseudo-RSRQ in dB for every BS; accepts a vector or a ``(T, B)`` matrix."""
    p = 10.0 ** (np.asarray(rsrp_dbm, dtype=float) / 10.0)
    if p.shape[-1] < 2:
        raise ValueError("pseudo-RSRQ needs at least two base stations")
    return 10.0 * np.log10(p / (p.sum(axis=-1, keepdims=True) - p))


def detect_pp(last_ho_time, prev_serving_bs, new_target_bs, now, cfg: ProtocolConfig) -> bool:
    """A handover completing ``now`` is a ping-pong if it returns to the BS
    left by the previous handover less than MTS after that one completed."""
    if last_ho_time is None or prev_serving_bs is None:
        return False
    return new_target_bs == prev_serving_bs and now - last_ho_time < cfg.mts


def initial_state(rsrp_dbm: Sequence[float]) -> LinkMonitorState:
    return LinkMonitorState(serving_bs=_argmax(rsrp_dbm))


def _argmax(values: Sequence[float]) -> int:
    best, best_v = 0, values[0]
    for i in range(1, len(values)):
        if values[i] > best_v:
            best, best_v = i, values[i]
    return best


def trigger_handover(state: LinkMonitorState, target: int, now: int):
    """Start handover preparation toward ``target``."""
    if state.phase not in (Phase.IDLE, Phase.TTT_RUNNING):
        raise RuntimeError(f"cannot trigger a handover in phase {state.phase.value}")
    if target == state.serving_bs:
        raise ValueError("handover target equals the serving BS")
    new = replace(state, phase=Phase.HO_PREP, phase_elapsed=0, target_bs=target)
    return new, [EventRecord(now, EventKind.HO_TRIGGERED, state.serving_bs, target)]


def _hof(state: LinkMonitorState, now: int):
    new = replace(state, serving_bs=None, phase=Phase.RLF_RECOVERY, phase_elapsed=0,
                  t310_running=False, t310_elapsed=0, target_bs=None, ho_just_completed=False)
    return new, [EventRecord(now, EventKind.HOF, state.serving_bs, state.target_bs),
                 EventRecord(now, EventKind.RLF_RECOVERY_START, state.serving_bs, None)]


def execution_pending(state: LinkMonitorState, cfg: ProtocolConfig) -> bool:
    """Preparation finishes at this tick, or execution is under way."""
    if state.phase is Phase.HO_EXEC:
        return True
    return state.phase is Phase.HO_PREP and state.phase_elapsed + cfg.dt >= cfg.ho_prep


def step_monitor(state: LinkMonitorState, sinr_serving: float, cfg: ProtocolConfig, now: int):
    """Radio link monitoring for one tick (T310 and handover-failure rules).

    ``sinr_serving`` is the SINR (dB) of the serving BS at this tick; right
    after a completed handover that is the new BS.
    """
    if state.phase is Phase.RLF_RECOVERY:
        return state, []
    if state.t310_running:
        elapsed = state.t310_elapsed + cfg.dt
        if elapsed >= cfg.t310:
            return _hof(replace(state, t310_elapsed=cfg.t310), now)
        if execution_pending(state, cfg):
            return _hof(state, now)
        if sinr_serving > cfg.q_in:
            return replace(state, t310_running=False, t310_elapsed=0, ho_just_completed=False), []
        return replace(state, t310_elapsed=elapsed, ho_just_completed=False), []
    if state.ho_just_completed:
        if sinr_serving < cfg.q_out:
            return _hof(state, now)
        return replace(state, ho_just_completed=False), []
    if state.phase is Phase.HO_EXEC:
        # the old link is being released; only a running T310 matters here
        return state, []
    if sinr_serving < cfg.q_out:
        return replace(state, t310_running=True, t310_elapsed=0), []
    return state, []


def advance_handover(state: LinkMonitorState, cfg: ProtocolConfig, now: int,
                     rsrp_dbm: Sequence[float]):
    """Advance a running handover or RLF recovery by one tick."""
    if state.phase not in (Phase.HO_PREP, Phase.HO_EXEC, Phase.RLF_RECOVERY):
        raise RuntimeError(f"no handover or recovery in progress (phase {state.phase.value})")
    elapsed = state.phase_elapsed + cfg.dt
    if state.phase is Phase.HO_PREP:
        if elapsed >= cfg.ho_prep:
            return replace(state, phase=Phase.HO_EXEC, phase_elapsed=0), []
        return replace(state, phase_elapsed=elapsed), []
    if state.phase is Phase.HO_EXEC:
        if elapsed < cfg.ho_exec:
            return replace(state, phase_elapsed=elapsed), []
        old, new_bs = state.serving_bs, state.target_bs
        events = [EventRecord(now, EventKind.HO_COMPLETE, old, new_bs)]
        if detect_pp(state.last_ho_time, state.prev_serving_bs, new_bs, now, cfg):
            events.append(EventRecord(now, EventKind.PP, old, new_bs))
        new = replace(state, serving_bs=new_bs, phase=Phase.IDLE, phase_elapsed=0, target_bs=None,
                      last_ho_time=now, prev_serving_bs=old, ho_just_completed=True)
        return new, events
    if elapsed < cfg.rlf_recovery:
        return replace(state, phase_elapsed=elapsed), []
    bs = _argmax(rsrp_dbm)
    # re-establishment is not a handover: the ping-pong history starts afresh
    new = replace(state, serving_bs=bs, phase=Phase.IDLE, phase_elapsed=0,
                  last_ho_time=None, prev_serving_bs=None)
    return new, [EventRecord(now, EventKind.RLF_RECOVERY_END, None, bs)]


def step_a2a3(state: LinkMonitorState, rsrp_dbm: Sequence[float], cfg: ProtocolConfig, now: int):
    """Baseline decision: A2 on the serving cell and A3 on a neighbour, held
    together for TTT, trigger a handover to the strongest qualifying neighbour."""
    if state.phase not in (Phase.IDLE, Phase.TTT_RUNNING):
        raise RuntimeError(f"A2/A3 evaluation in phase {state.phase.value}")
    s = state.serving_bs
    serving = rsrp_dbm[s]
    a2 = serving < cfg.a2_threshold - cfg.a2_hysteresis
    target, target_v = None, -math.inf
    if a2:
        margin = serving + cfg.a3_offset + cfg.a3_hysteresis
        for n, v in enumerate(rsrp_dbm):
            if n != s and v > margin and v > target_v:
                target, target_v = n, v
    if target is None:
        if state.phase is Phase.TTT_RUNNING:
            return replace(state, phase=Phase.IDLE, phase_elapsed=0), []
        return state, []
    if state.phase is Phase.IDLE:
        state = replace(state, phase=Phase.TTT_RUNNING, phase_elapsed=0)
    else:
        state = replace(state, phase_elapsed=state.phase_elapsed + cfg.dt)
    if state.phase_elapsed >= cfg.ttt:
        return trigger_handover(state, target, now)
    return state, []


def process_tick(state: LinkMonitorState, rsrp_dbm: Sequence[float], sinr_db: Sequence[float],
                 cfg: ProtocolConfig, now: int, baseline: bool):
    """One tick of the link: monitor first, then phase advance or A2/A3."""
    sinr_serving = sinr_db[state.serving_bs] if state.serving_bs is not None else -math.inf
    state, events = step_monitor(state, sinr_serving, cfg, now)
    if events:  # only a handover failure emits monitor events
        return state, events
    if state.phase in (Phase.HO_PREP, Phase.HO_EXEC, Phase.RLF_RECOVERY):
        return advance_handover(state, cfg, now, rsrp_dbm)
    if baseline:
        return step_a2a3(state, rsrp_dbm, cfg, now)
    return state, []


def connected(state: LinkMonitorState) -> bool:
    """Whether user data flows at this tick (not executing a HO, not in recovery)."""
    return state.phase not in (Phase.HO_EXEC, Phase.RLF_RECOVERY)


# ---------------------------------------------------------------- baseline run


@dataclass
class LinkRun:
    """Per-tick record of one simulated drive plus its event log.

    ``serving[k]`` is -1 while unconnected; ``connected_sinr[k]`` is the SINR
    (dB) of the BS carrying data at tick ``k``, or ``-inf`` during HO
    execution and RLF recovery.
    """

    dt: int
    serving: np.ndarray
    connected_sinr: np.ndarray
    events: list

    def count(self, kind: EventKind) -> int:
        return sum(1 for e in self.events if e.kind is kind)

    @property
    def outage_ticks(self) -> int:
        return int(np.sum(np.isneginf(self.connected_sinr)))


def run_baseline(trace, cfg: ProtocolConfig | None = None) -> LinkRun:
    """Drive the 3GPP baseline over a trace sampled at ``cfg.dt``."""
    cfg = cfg or ProtocolConfig()
    if not math.isclose(trace.dt * 1000.0, cfg.dt, rel_tol=1e-9):
        raise ValueError(f"trace dt {trace.dt * 1000.0:g} ms does not match protocol dt {cfg.dt} ms")
    rsrp = trace.rsrp.tolist()
    sinr = trace.sinr.tolist()
    n = len(rsrp)
    serving = np.empty(n, dtype=int)
    conn = np.empty(n)
    events: list[EventRecord] = []
    state = initial_state(rsrp[0])
    for k in range(n):
        now = k * cfg.dt
        state, ev = process_tick(state, rsrp[k], sinr[k], cfg, now, baseline=True)
        if ev:
            events.extend(ev)
        if state.serving_bs is None:
            serving[k] = -1
            conn[k] = -math.inf
        else:
            serving[k] = state.serving_bs
            conn[k] = sinr[k][state.serving_bs] if connected(state) else -math.inf
    return LinkRun(dt=cfg.dt, serving=serving, connected_sinr=conn, events=events)


def config_dict(cfg: ProtocolConfig) -> dict:
    return asdict(cfg)
