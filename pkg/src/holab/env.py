"""Handover environment for the PPO agent.

The agent replaces the A2/A3/TTT decision of the baseline; everything else
(preparation and execution timing, T310 monitoring, handover failures, RLF
recovery, ping-pong detection) runs through the same functions from
:mod:`holab.protocol` that drive the baseline.

A decision point is any tick at which the link is idle (connected, no
handover under way).  Ticks spent in preparation, execution or recovery are
simulated inside :meth:`HandoverEnv.step` and never shown to the agent.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

import numpy as np

from .protocol import (
    EventKind,
    LinkRun,
    Phase,
    ProtocolConfig,
    connected,
    initial_state,
    process_tick,
    pseudo_rsrq,
    pseudo_rsrq_db,
    trigger_handover,
)
from .tracegen import RadioTrace

RSRQ_CLIP_DB = 10.0
TABLE_CACHE_SIZE = 32


@dataclass(frozen=True)
class EnvConfig:
    """Reward constant, termination rules and protocol timings.

    ``strongest_bonus`` selects when the +C bonus is paid: ``"always"`` while
    connected to the strongest BS, or ``"on_handover"`` only at the decision
    point that follows a completed handover to it.
    """

    C: float = 0.9405
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    reset_on_pp: bool = False
    reset_on_hof: bool = True
    decision_dt: int = 10
    strongest_bonus: str = "always"

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be > 0")
        if self.decision_dt <= 0 or self.decision_dt % self.protocol.dt:
            raise ValueError("decision_dt must be a positive multiple of the protocol dt")
        if self.strongest_bonus not in ("always", "on_handover"):
            raise ValueError("strongest_bonus must be 'always' or 'on_handover'")

    @classmethod
    def from_file(cls, path) -> "EnvConfig":
        parser = configparser.ConfigParser()
        parser.optionxform = str
        if not parser.read(path):
            raise FileNotFoundError(path)
        proto = ProtocolConfig.from_mapping(dict(parser.items("protocol"))) \
            if parser.has_section("protocol") else ProtocolConfig()
        if not parser.has_section("env"):
            return cls(protocol=proto)
        return cls.from_mapping(dict(parser.items("env")), proto)

    @classmethod
    def from_mapping(cls, values: dict, protocol: ProtocolConfig | None = None) -> "EnvConfig":
        conv = {"C": float, "reset_on_pp": _as_bool, "reset_on_hof": _as_bool,
                "decision_dt": int, "strongest_bonus": str}
        unknown = sorted(set(values) - set(conv))
        if unknown:
            raise KeyError(f"unknown env parameter(s): {', '.join(unknown)}")
        kw = {k: conv[k](v) for k, v in values.items()}
        return cls(protocol=protocol or ProtocolConfig(), **kw)


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass
class Observation:
    one_hot: np.ndarray
    rsrq_norm: np.ndarray
    s_add: int

    def flat(self) -> np.ndarray:
        return np.concatenate([self.one_hot, self.rsrq_norm, [float(self.s_add)]])


@dataclass
class StepResult:
    obs: Observation
    reward: float
    terminated: bool
    truncated: bool
    info: dict


def rsrq_norm(rsrq_db):
    """Clip RSRQ to [-10, 10] dB and map it linearly onto [0, 1]."""
    return np.clip((np.asarray(rsrq_db, dtype=float) + RSRQ_CLIP_DB) / (2 * RSRQ_CLIP_DB), 0.0, 1.0)


def build_state(serving_bs: int, rsrp_linear, t: int, last_ho_time, mts: int) -> Observation:
    p = np.asarray(rsrp_linear, dtype=float)
    one_hot = np.zeros(p.shape[0])
    one_hot[serving_bs] = 1.0
    rsrq = np.array([10.0 * math.log10(pseudo_rsrq(p, b)) for b in range(p.shape[0])])
    s_add = int(last_ho_time is not None and t - last_ho_time < mts)
    return Observation(one_hot, rsrq_norm(rsrq), s_add)


def reward(C: float, rsrq_norm_serving: float = 0.0, *, rlf: bool = False, pp: bool = False,
           low_sinr: bool = False, strongest: bool = False) -> float:
    """Per-decision reward; the first matching case wins.

    RLF recovery -2C, ping-pong -C, serving SINR below Q_out -C, connected to
    the strongest BS RSRQ_norm + C, otherwise RSRQ_norm.
    """
    if rlf:
        return -2.0 * C
    if pp:
        return -C
    if low_sinr:
        return -C
    if strongest:
        return rsrq_norm_serving + C
    return rsrq_norm_serving


class HandoverEnv:
    """Single-UE handover environment over one radio trace.

    The timeline of every processed tick (serving BS, connected SINR) and the
    event log are kept so that an episode can be scored like a baseline run
    (see :meth:`link_run`).
    """

    def __init__(self, trace: RadioTrace, cfg: EnvConfig | None = None):
        self.cfg = cfg or EnvConfig()
        self.trace = trace
        self.perm = np.arange(trace.n_bs)
        self.n_bs = trace.n_bs
        self._done = True
        self._inv = self.perm
        # per-tick lists of recently used traces, keyed by object identity
        self._tables: dict = {}

    # -- episode control -------------------------------------------------
    def reset(self, seed=None, shuffle_mapping: bool = False, permutation=None,
              trace: RadioTrace | None = None) -> Observation:
        """Start at tick 0, connected to the strongest BS.

        With ``shuffle_mapping`` a random BS relabelling (drawn from ``seed``)
        holds for the whole episode; ``permutation`` gives one explicitly.
        Agent-facing index ``j`` then refers to trace column ``perm[j]``.
        """
        if trace is not None:
            self.trace = trace
            self.n_bs = trace.n_bs
        proto = self.cfg.protocol
        if not math.isclose(self.trace.dt * 1000.0, proto.dt, rel_tol=1e-9):
            raise ValueError(f"trace dt {self.trace.dt * 1000.0:g} ms does not match protocol dt {proto.dt} ms")
        if permutation is not None:
            perm = np.asarray(permutation, dtype=int)
            if sorted(perm.tolist()) != list(range(self.n_bs)):
                raise ValueError("permutation must relabel every BS exactly once")
        elif shuffle_mapping:
            perm = np.random.default_rng(seed).permutation(self.n_bs)
        else:
            perm = np.arange(self.n_bs)
        self.perm = perm
        self._inv = np.argsort(perm)
        tables = self._tables.get(id(self.trace))
        if tables is None or tables[0] is not self.trace:
            # the simulation runs in the trace's own BS labels; the relabelling
            # only touches what the agent sees and the actions it sends
            rsrq = rsrq_norm(pseudo_rsrq_db(self.trace.rsrp))
            tables = (self.trace, self.trace.rsrp.tolist(), self.trace.sinr.tolist(), rsrq,
                      rsrq.tolist(), np.argmax(self.trace.rsrp, axis=1).tolist())
            if len(self._tables) >= TABLE_CACHE_SIZE:
                self._tables.pop(next(iter(self._tables)))
            self._tables[id(self.trace)] = tables
        _, self._rsrp, self._sinr, self._rsrq, self._rsrq_l, self._strongest = tables
        n = len(self._rsrp)
        self._n = n
        self._serving = np.full(n, -1, dtype=int)
        self._conn = np.full(n, -math.inf)
        self.events: list = []
        self.k = 0
        self.state = initial_state(self._rsrp[0])
        self._tick()
        self._done = n <= 1
        return self._observe()

    def relabel(self, seed=None, permutation=None) -> Observation:
        """Switch to a new BS relabelling without touching the simulation.

        The drive, the serving BS and every timer carry on; only the labels
        the agent sees (and sends) change.  Returns the relabelled
        observation of the current decision point.
        """
        if permutation is not None:
            perm = np.asarray(permutation, dtype=int)
            if sorted(perm.tolist()) != list(range(self.n_bs)):
                raise ValueError("permutation must relabel every BS exactly once")
        else:
            perm = np.random.default_rng(seed).permutation(self.n_bs)
        self.perm = perm
        self._inv = np.argsort(perm)
        return self._observe()

    @property
    def now(self) -> int:
        return self.k * self.cfg.protocol.dt

    def _tick(self):
        k = self.k
        self.state, ev = process_tick(self.state, self._rsrp[k], self._sinr[k], self.cfg.protocol,
                                      k * self.cfg.protocol.dt, baseline=False)
        if ev:
            self.events.extend(ev)
        st = self.state
        if st.serving_bs is not None:
            self._serving[k] = st.serving_bs
            if connected(st):
                self._conn[k] = self._sinr[k][st.serving_bs]
        return ev

    def observe(self) -> Observation:
        return self._observe()

    def _observe(self) -> Observation:
        st = self.state
        one_hot = np.zeros(self.n_bs)
        if st.serving_bs is not None:
            one_hot[self._inv[st.serving_bs]] = 1.0
        last = st.last_ho_time
        s_add = int(last is not None and self.now - last < self.cfg.protocol.mts)
        return Observation(one_hot, self._rsrq[self.k][self.perm], s_add)

    def _at_decision_point(self) -> bool:
        return self.state.phase is Phase.IDLE and self.now % self.cfg.decision_dt == 0

    # -- interaction -----------------------------------------------------
    def step(self, action: int) -> StepResult:
        if self._done:
            raise RuntimeError("episode is over; call reset()")
        action = int(action)
        if not 0 <= action < self.n_bs:
            raise ValueError(f"action {action} out of range [0, {self.n_bs})")
        ho_started = False
        target = int(self.perm[action])
        if target != self.state.serving_bs and self.state.phase is Phase.IDLE:
            self.state, ev = trigger_handover(self.state, target, self.now)
            self.events.extend(ev)
            ho_started = True
        hof = pp = rlf = ho_done = False
        ticks = 0
        while self.k < self._n - 1:
            self.k += 1
            ticks += 1
            for e in self._tick():
                if e.kind is EventKind.HOF:
                    hof = rlf = True
                elif e.kind is EventKind.PP:
                    pp = True
                elif e.kind is EventKind.HO_COMPLETE:
                    ho_done = True
            if self._at_decision_point():
                break
        truncated = self.k >= self._n - 1
        st = self.state
        if st.phase is Phase.RLF_RECOVERY:
            rlf = True
        r = self._reward(rlf, pp, ho_done)
        terminated = (hof and self.cfg.reset_on_hof) or (pp and self.cfg.reset_on_pp)
        self._done = terminated or truncated
        info = {"hof": hof, "pp": pp, "ho_started": ho_started, "ho_completed": ho_done,
                "skipped_ticks": max(ticks - 1, 0)}
        return StepResult(self._observe(), r, terminated, truncated, info)

    def _reward(self, rlf: bool, pp: bool, ho_done: bool) -> float:
        st = self.state
        C = self.cfg.C
        if rlf or st.serving_bs is None:
            return reward(C, rlf=True)
        k, s = self.k, st.serving_bs
        strongest = self._strongest[k] == s
        if self.cfg.strongest_bonus == "on_handover":
            strongest = strongest and ho_done
        return reward(C, self._rsrq_l[k][s], pp=pp,
                      low_sinr=self._sinr[k][s] < self.cfg.protocol.q_out, strongest=strongest)

    @property
    def done(self) -> bool:
        return self._done

    def link_run(self) -> LinkRun:
        """Timeline and events of the ticks processed so far, in trace labels."""
        k = self.k + 1
        return LinkRun(dt=self.cfg.protocol.dt, serving=self._serving[:k].copy(),
                       connected_sinr=self._conn[:k].copy(), events=list(self.events))
