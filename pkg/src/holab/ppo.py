"""Proximal policy optimisation for the handover agent.

Actor and critic are separate ``in-64-128-64-out`` ReLU networks from
:mod:`holab.neural`.  Each training epoch draws one training trace, shuffles
its BS labels, collects ``rollout`` decisions into memory, and runs
``epochs_per_rollout`` passes of sequential (unshuffled) mini-batches.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import neural
from .env import EnvConfig, HandoverEnv, _as_bool
from .neural import MlpParams, OptState

log = logging.getLogger(__name__)

ENT_COEF_CHOICES = (0.1, 0.01, 0.001)
C_RANGE = (0.6, 0.95)


@dataclass(frozen=True)
class Stage:
    """One training iteration: lr decays linearly from ``lr`` to 0 over ``epochs``."""

    lr: float
    epochs: int
    batch: int
    prefix_s: float | None = 60.0
    reset_on_pp: bool = False

    def lr_at(self, epoch: int) -> float:
        return self.lr * (1.0 - epoch / self.epochs)


DEFAULT_SCHEDULE = (
    Stage(5e-5, 500, 150, 60.0, False),
    Stage(1e-6, 300, 150, 60.0, False),
    Stage(1e-6, 300, 550, None, True),
)


@dataclass(frozen=True)
class PpoConfig:
    clip_eps: float = 0.2
    ent_coef: float = 0.1
    value_coef: float = 0.5
    gamma: float = 0.99
    gae_lambda: float = 0.95
    rollout: int = 1650
    epochs_per_rollout: int = 10
    max_grad_norm: float | None = 0.5
    normalize_advantage: bool = True
    C: float = 0.9405
    sample_hparams: bool = False
    hidden: tuple = neural.HIDDEN
    schedule: tuple = DEFAULT_SCHEDULE
    checkpoint_every: int = 50

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if not self.schedule:
            raise ValueError("empty training schedule")
        for i, st in enumerate(self.schedule, 1):
            if st.batch > self.rollout:
                raise ValueError(f"iteration {i}: batch {st.batch} exceeds rollout {self.rollout}")
            if self.rollout % st.batch:
                raise ValueError(f"iteration {i}: batch {st.batch} does not divide rollout {self.rollout}")
            if st.epochs < 1:
                raise ValueError(f"iteration {i}: needs at least one epoch")

    @classmethod
    def from_file(cls, path) -> "PpoConfig":
        parser = configparser.ConfigParser()
        parser.optionxform = str
        if not parser.read(path):
            raise FileNotFoundError(path)
        return cls.from_parser(parser)

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> "PpoConfig":
        kw = {}
        if parser.has_section("ppo"):
            kw.update(_convert(dict(parser.items("ppo")), _PPO_KEYS, "ppo"))
        stages = sorted(s for s in parser.sections() if s.startswith("iteration."))
        if stages:
            sched = []
            for s in stages:
                d = _convert(dict(parser.items(s)), _STAGE_KEYS, s)
                sched.append(Stage(**d))
            kw["schedule"] = tuple(sched)
        return cls(**kw)


def _opt_float(v):
    return None if str(v).strip().lower() in ("", "none", "full") else float(v)


_PPO_KEYS = {"clip_eps": float, "ent_coef": float, "value_coef": float, "gamma": float,
             "gae_lambda": float, "rollout": int, "epochs_per_rollout": int,
             "max_grad_norm": _opt_float, "normalize_advantage": _as_bool, "C": float,
             "sample_hparams": _as_bool, "checkpoint_every": int,
             "hidden": lambda v: tuple(int(x) for x in str(v).replace(",", " ").split())}
_STAGE_KEYS = {"lr": float, "epochs": int, "batch": int, "prefix_s": _opt_float,
               "reset_on_pp": _as_bool}


def _convert(values: dict, table: dict, section: str) -> dict:
    unknown = sorted(set(values) - set(table))
    if unknown:
        raise KeyError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    return {k: table[k](v) for k, v in values.items()}


def schedule_table(cfg: PpoConfig) -> list[dict]:
    return [{"iteration": i, "lr": st.lr, "epochs": st.epochs, "batch": st.batch,
             "trace_s": st.prefix_s, "reset_on_pp": st.reset_on_pp}
            for i, st in enumerate(cfg.schedule, 1)]


def sample_hyperparameters(rng: np.random.Generator) -> tuple[float, float]:
    """Random (ent_coef, C) as in the coarse search before training."""
    ent = ENT_COEF_CHOICES[int(rng.integers(len(ENT_COEF_CHOICES)))]
    return ent, float(rng.uniform(*C_RANGE))


# ---------------------------------------------------------------- memory


class RolloutMemory:
    """Transitions in trajectory order: (s, a, log pi_old(a|s), r, V_old(s), done)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.clear()

    def clear(self):
        self.obs, self.actions, self.log_probs = [], [], []
        self.rewards, self.values, self.dones = [], [], []
        self.last_value = 0.0

    def __len__(self):
        return len(self.actions)

    @property
    def full(self) -> bool:
        return len(self) >= self.capacity

    def add(self, obs, action, log_prob, reward, value, done):
        if self.full:
            raise RuntimeError("rollout memory is full")
        self.obs.append(obs)
        self.actions.append(int(action))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))

    def arrays(self) -> dict:
        return {"obs": np.array(self.obs), "actions": np.array(self.actions, dtype=int),
                "log_probs": np.array(self.log_probs), "rewards": np.array(self.rewards),
                "values": np.array(self.values), "dones": np.array(self.dones, dtype=bool)}


def sample_action(logits, rng: np.random.Generator) -> tuple[int, float]:
    lp = neural.log_probs(logits)
    cdf = np.cumsum(np.exp(lp))
    a = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), lp.shape[0] - 1)
    return a, float(lp[a])


def act_greedy(actor: MlpParams, obs) -> int:
    """Highest-logit action; ties go to the lowest BS index."""
    x = np.asarray(obs, dtype=float) if isinstance(obs, (np.ndarray, list, tuple)) else obs.flat()
    return int(np.argmax(neural.forward(actor, x)))


def collect_rollout(env: HandoverEnv, actor: MlpParams, critic: MlpParams, m: int,
                    rng: np.random.Generator, obs=None,
                    new_episode: Callable[[], object] | None = None):
    """Sample ``m`` decisions from the current policy.

    Whenever an episode ends (termination rule or end of trace) the
    environment is restarted by ``new_episode``, which returns the first
    observation; by default it replays the same relabelled trace from tick 0.
    Returns the memory, a dict of episode statistics and the observation the
    next rollout should continue from.
    """
    memory = RolloutMemory(m)
    if obs is None:
        obs = env.observe()
    x = obs.flat()
    stats = {"terminations": 0, "episodes": 0, "hof": 0, "pp": 0, "ho": 0}
    if new_episode is None:
        perm = env.perm

        def new_episode():
            return env.reset(permutation=perm)
    while not memory.full:
        logits = neural.forward(actor, x)
        a, lp = sample_action(logits, rng)
        v = float(neural.forward(critic, x)[0])
        res = env.step(a)
        done = res.terminated or res.truncated
        memory.add(x, a, lp, res.reward, v, done)
        info = res.info
        stats["hof"] += info["hof"]
        stats["pp"] += info["pp"]
        stats["ho"] += info["ho_started"]
        if done:
            stats["episodes"] += 1
            stats["terminations"] += res.terminated
            obs = new_episode()
        else:
            obs = res.obs
        x = obs.flat()
    memory.last_value = 0.0 if memory.dones[-1] else float(neural.forward(critic, x)[0])
    return memory, stats, obs


def compute_advantages(memory, gamma: float, lam: float):
    """Generalised advantage estimates and value targets (advantage + V_old).

    A ``done`` flag on step t stops bootstrapping from step t + 1.
    """
    if isinstance(memory, RolloutMemory):
        rewards, values, dones = memory.rewards, memory.values, memory.dones
        last_value = memory.last_value
    else:
        rewards, values, dones, last_value = memory
    n = len(rewards)
    if n == 0:
        raise ValueError("empty rollout memory")
    adv = np.zeros(n)
    gae = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        next_v = values[t + 1] if t + 1 < n else last_value
        delta = rewards[t] + gamma * next_v * nonterminal - values[t]
        gae = delta + gamma * lam * nonterminal * gae
        adv[t] = gae
    return adv, adv + np.asarray(values, dtype=float)


# ---------------------------------------------------------------- loss


def clipped_surrogate(ratio, advantage, eps: float):
    """Elementwise min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)


def ppo_loss(batch: dict, actor: MlpParams, critic: MlpParams, cfg: PpoConfig):
    """Clipped policy loss + value_coef * MSE - ent_coef * entropy.

    ``batch`` holds ``obs``, ``actions``, ``log_probs`` (old policy),
    ``advantages`` and ``targets``.  Returns ``(loss, actor_grads,
    critic_grads, stats)``.
    """
    obs = batch["obs"]
    acts = batch["actions"]
    n = obs.shape[0]
    adv = np.asarray(batch["advantages"], dtype=float)
    if cfg.normalize_advantage and n > 1:
        adv = (adv - adv.mean()) / max(adv.std(), 1e-8)
    logits, a_cache = neural.forward_cached(actor, obs)
    lp = neural.log_probs(logits)
    p = np.exp(lp)
    rows = np.arange(n)
    ratio = np.exp(lp[rows, acts] - batch["log_probs"])
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    entropy = -np.sum(p * lp, axis=1)

    # d policy_loss / d log pi(a|s): only where the unclipped term is the minimum
    d_lpa = np.where(surr1 <= surr2, -adv * ratio / n, 0.0)
    d_logits = -p * d_lpa[:, None]
    d_logits[rows, acts] += d_lpa
    d_logits += (cfg.ent_coef / n) * p * (lp + entropy[:, None])
    actor_grads = neural.backward(actor, a_cache, d_logits)

    v, c_cache = neural.forward_cached(critic, obs)
    v = v[:, 0]
    err = v - batch["targets"]
    value_loss = float(np.mean(err * err))
    critic_grads = neural.backward(critic, c_cache, (cfg.value_coef * 2.0 / n * err)[:, None])

    loss = policy_loss + cfg.value_coef * value_loss - cfg.ent_coef * float(entropy.mean())
    stats = {"policy_loss": float(policy_loss), "value_loss": value_loss,
             "entropy": float(entropy.mean()),
             "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)),
             "approx_kl": float(np.mean((ratio - 1.0) - np.log(ratio)))}
    return float(loss), actor_grads, critic_grads, stats


def clip_grad_norm(grad: MlpParams, max_norm: float | None) -> MlpParams:
    """Rescale ``grad`` so that its global L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return grad
    total = math.sqrt(sum(float(np.sum(a * a)) for a in grad.arrays()))
    if total <= max_norm:
        return grad
    scale = max_norm / (total + 1e-6)
    return MlpParams([(w * scale, b * scale) for w, b in grad.layers])


@dataclass
class Learner:
    """Actor/critic parameters with their optimiser states."""

    actor: MlpParams
    critic: MlpParams
    actor_opt: OptState
    critic_opt: OptState

    @classmethod
    def create(cls, n_bs: int, actor_seed, critic_seed, hidden=neural.HIDDEN) -> "Learner":
        dims = [2 * n_bs + 1, *hidden]
        actor = neural.init(dims + [n_bs], actor_seed, output_gain=0.01)
        critic = neural.init(dims + [1], critic_seed, output_gain=1.0)
        return cls(actor, critic, OptState.for_params(actor), OptState.for_params(critic))


def update(memory: RolloutMemory, learner: Learner, cfg: PpoConfig, lr: float, batch: int) -> dict:
    """PPO update over the full memory, then clear it.

    Mini-batches are the consecutive slices ``[0, n), [n, 2n), ...`` in every
    pass.  Returns averaged loss statistics.
    """
    m = len(memory)
    if batch > m:
        raise ValueError(f"batch size {batch} exceeds memory size {m}")
    if not memory.full:
        raise ValueError("memory is not full")
    adv, targets = compute_advantages(memory, cfg.gamma, cfg.gae_lambda)
    data = memory.arrays()
    data["advantages"] = adv
    data["targets"] = targets
    acc: dict = {}
    count = 0
    for _ in range(cfg.epochs_per_rollout):
        for start in range(0, m - batch + 1, batch):
            sl = slice(start, start + batch)
            mb = {k: data[k][sl] for k in ("obs", "actions", "log_probs", "advantages", "targets")}
            _, ga, gc, st = ppo_loss(mb, learner.actor, learner.critic, cfg)
            # each network is clipped on its own norm: the value error can be
            # orders of magnitude larger and would otherwise throttle the actor
            ga = clip_grad_norm(ga, cfg.max_grad_norm)
            gc = clip_grad_norm(gc, cfg.max_grad_norm)
            learner.actor, learner.actor_opt = neural.adam_step(learner.actor, ga, learner.actor_opt, lr)
            learner.critic, learner.critic_opt = neural.adam_step(learner.critic, gc, learner.critic_opt, lr)
            for k, v in st.items():
                acc[k] = acc.get(k, 0.0) + v
            count += 1
    memory.clear()
    return {k: v / count for k, v in acc.items()}


def batch_order(m: int, batch: int) -> list[range]:
    """Index ranges of the mini-batches used by :func:`update` in one pass."""
    return [range(s, s + batch) for s in range(0, m - batch + 1, batch)]


# ---------------------------------------------------------------- training


METRIC_FIELDS = ["epoch", "iteration", "stage_epoch", "lr", "trace", "mean_reward",
                 "terminations", "episodes", "hof", "pp", "ho",
                 "policy_loss", "value_loss", "entropy", "approx_kl", "clip_frac"]


@dataclass
class TrainRun:
    seed: int
    train_ids: list
    eval_ids: list
    learner: Learner
    history: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    ent_coef: float = 0.0
    C: float = 0.0

    @property
    def actor(self) -> MlpParams:
        return self.learner.actor


def _rngs(seed: int):
    ss = np.random.SeedSequence(seed)
    actor_ss, critic_ss, data_ss, policy_ss, hp_ss = ss.spawn(5)
    return actor_ss, critic_ss, np.random.default_rng(data_ss), np.random.default_rng(policy_ss), \
        np.random.default_rng(hp_ss)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_metrics(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for row in history:
            w.writerow([_fmt(row[k]) for k in METRIC_FIELDS])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ints = {"epoch", "iteration", "stage_epoch", "terminations", "episodes", "hof", "pp", "ho"}
    return [{k: (int(v) if k in ints else v if k == "trace" else float(v)) for k, v in r.items()}
            for r in rows]


def _learner_dict(lr: Learner) -> dict:
    return {"actor": neural.params_to_dict(lr.actor), "critic": neural.params_to_dict(lr.critic),
            "actor_opt": neural.opt_to_dict(lr.actor_opt), "critic_opt": neural.opt_to_dict(lr.critic_opt)}


def _learner_from(d: dict) -> Learner:
    return Learner(neural.params_from_dict(d["actor"]), neural.params_from_dict(d["critic"]),
                   neural.opt_from_dict(d["actor_opt"]), neural.opt_from_dict(d["critic_opt"]))


def save_checkpoint(path, learner: Learner, meta: dict) -> None:
    payload = {"kind": "holab-agent", "meta": meta, **_learner_dict(learner)}
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_actor(path) -> MlpParams:
    """Actor network from an agent checkpoint or a bare network file."""
    d = json.loads(Path(path).read_text())
    if d.get("kind") == "holab-agent":
        return neural.params_from_dict(d["actor"])
    return neural.params_from_dict(d)


def train(traces, cfg: PpoConfig | None = None, seed: int = 0, env_cfg: EnvConfig | None = None,
          out_dir=None, resume: bool = False, eval_traces=(),
          progress: Callable[[dict], None] | None = None) -> TrainRun:
    """Run the staged PPO schedule on the training traces.

    With ``out_dir`` set, ``metrics.csv``, one ``iteration_<i>.json``
    checkpoint per finished iteration and a resumable ``state.json`` are
    written there.  ``resume`` continues from ``state.json``.
    """
    cfg = cfg or PpoConfig()
    env_cfg = env_cfg or EnvConfig(C=cfg.C)
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one training trace")
    eval_ids = [t.id for t in eval_traces]
    if set(eval_ids) & {t.id for t in traces}:
        raise ValueError("evaluation traces overlap the training traces")
    n_bs = traces[0].n_bs
    actor_ss, critic_ss, data_rng, policy_rng, hp_rng = _rngs(seed)
    ent_coef, C = cfg.ent_coef, cfg.C
    if cfg.sample_hparams:
        ent_coef, C = sample_hyperparameters(hp_rng)
    cfg = replace(cfg, ent_coef=ent_coef, C=C)
    env_cfg = replace(env_cfg, C=C)
    learner = Learner.create(n_bs, actor_ss, critic_ss, cfg.hidden)
    run = TrainRun(seed, [t.id for t in traces], eval_ids, learner, ent_coef=ent_coef, C=C)

    out = Path(out_dir) if out_dir is not None else None
    start_stage, start_epoch = 0, 0
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if resume and (out / "state.json").exists():
            st = json.loads((out / "state.json").read_text())
            if st["seed"] != seed:
                raise ValueError(f"state.json was written with seed {st['seed']}, not {seed}")
            run.learner = learner = _learner_from(st["learner"])
            data_rng.bit_generator.state = st["data_rng"]
            policy_rng.bit_generator.state = st["policy_rng"]
            start_stage, start_epoch = st["stage"], st["stage_epoch"]
            run.history = read_metrics(out / "metrics.csv")[: st["history_len"]]
            run.checkpoints = {int(k): v for k, v in st["checkpoints"].items()}
            log.info("resuming at iteration %d epoch %d", start_stage + 1, start_epoch)

    def save_state(stage_idx, stage_epoch):
        if out is None:
            return
        write_metrics(out / "metrics.csv", run.history)
        st = {"seed": seed, "stage": stage_idx, "stage_epoch": stage_epoch,
              "history_len": len(run.history), "checkpoints": run.checkpoints,
              "data_rng": data_rng.bit_generator.state, "policy_rng": policy_rng.bit_generator.state,
              "learner": _learner_dict(learner)}
        (out / "state.json").write_text(json.dumps(st, sort_keys=True))

    epoch = len(run.history)
    for si in range(start_stage, len(cfg.schedule)):
        stage = cfg.schedule[si]
        stage_env = replace(env_cfg, reset_on_pp=stage.reset_on_pp)
        first = start_epoch if si == start_stage else 0
        stage_traces = traces if stage.prefix_s is None else [t.head(stage.prefix_s) for t in traces]
        env = HandoverEnv(stage_traces[0], stage_env)
        current = [0]

        def new_episode():
            # a fresh episode drives a uniformly drawn trace under a random BS relabelling
            ti = int(data_rng.integers(len(stage_traces)))
            perm_seed = int(data_rng.integers(2**63))
            current[0] = ti
            return env.reset(seed=perm_seed, shuffle_mapping=True, trace=stage_traces[ti])

        # a stage (or a resumed run) always starts on a fresh episode
        obs = new_episode()
        for e in range(first, stage.epochs):
            lr = stage.lr_at(e)
            ti = current[0]
            if e > first:
                # every epoch sees a fresh BS mapping, even mid-drive
                obs = env.relabel(seed=int(data_rng.integers(2**63)))
            memory, rstats, obs = collect_rollout(env, learner.actor, learner.critic, cfg.rollout,
                                                  policy_rng, obs, new_episode)
            mean_r = float(np.mean(memory.rewards))
            ustats = update(memory, learner, cfg, lr, stage.batch)
            epoch += 1
            row = {"epoch": epoch, "iteration": si + 1, "stage_epoch": e + 1, "lr": lr,
                   "trace": traces[ti].id, "mean_reward": mean_r, **rstats, **ustats}
            run.history.append(row)
            if progress is not None:
                progress(row)
            if out is not None and cfg.checkpoint_every and (e + 1) % cfg.checkpoint_every == 0 \
                    and e + 1 < stage.epochs:
                save_state(si, e + 1)
        if out is not None:
            path = out / f"iteration_{si + 1}.json"
            save_checkpoint(path, learner, {"seed": seed, "iteration": si + 1, "epochs": epoch,
                                            "ent_coef": ent_coef, "C": C, "n_bs": n_bs,
                                            "config": _cfg_dict(cfg)})
            run.checkpoints[si + 1] = path.name
            save_state(si + 1, 0)
        else:
            run.checkpoints[si + 1] = learner.actor.copy()
    return run


def _cfg_dict(cfg: PpoConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    d["schedule"] = [asdict(s) for s in cfg.schedule]
    return d
