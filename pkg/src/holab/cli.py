"""``holab`` command line: gen, baseline, train, eval and compare.

Every subcommand takes an optional ``--config`` INI file.  Recognised
sections are ``[map]``, ``[routes]``, ``[protocol]``, ``[env]``, ``[ppo]``
and ``[iteration.N]``; unknown sections or keys are configuration errors.

Exit status: 0 on success, 1 on a runtime failure (missing or unreadable
files, simulation errors), 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evalkit, ppo, protocol, tracegen
from .env import EnvConfig, _as_bool

log = logging.getLogger("holab")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

MAP_KEYS = {"seed": int, "tx_power": float, "pathloss_exponent": float, "shadow_sigma": float,
            "shadow_corr_distance": float, "noise_floor": float, "pl0": float,
            "bs_positions": str}
ROUTE_KEYS = {"count": int, "n_train": int, "speed": float, "duration": float, "block": float,
              "eval_speeds": str, "compress": _as_bool}
ROUTE_DEFAULTS = {"count": 15, "n_train": 10, "speed": 50.0, "duration": 180.0, "block": 100.0,
                  "eval_speeds": "", "compress": False}


class ConfigError(Exception):
    """Bad configuration: unknown section or key, or an invalid value."""


# ---------------------------------------------------------------- config


def _read_config(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case so that "C" stays "C"
    if path is None:
        return parser
    if not Path(path).is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for section in parser.sections():
        if section not in ("map", "routes", "protocol", "env", "ppo") \
                and not (section.startswith("iteration.") and section[10:].isdigit()):
            raise ConfigError(f"unknown config section [{section}]")
    # every command checks the whole file, so a typo never waits for the
    # one command that happens to read that section
    _section(parser, "map", MAP_KEYS)
    route_settings(parser)
    env_config(parser)
    ppo_config(parser)
    return parser


def _section(parser, name: str, table: dict) -> dict:
    if not parser.has_section(name):
        return {}
    values = dict(parser.items(name))
    unknown = sorted(set(values) - set(table))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    try:
        return {k: table[k](v) for k, v in values.items()}
    except ValueError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def _config_call(fn, *args):
    """Run a config constructor, turning its errors into ConfigError."""
    try:
        return fn(*args)
    except KeyError as exc:
        raise ConfigError(exc.args[0] if exc.args else str(exc)) from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def protocol_config(parser) -> protocol.ProtocolConfig:
    if not parser.has_section("protocol"):
        return protocol.ProtocolConfig()
    return _config_call(protocol.ProtocolConfig.from_mapping, dict(parser.items("protocol")))


def env_config(parser) -> EnvConfig:
    proto = protocol_config(parser)
    if not parser.has_section("env"):
        return EnvConfig(protocol=proto)
    return _config_call(EnvConfig.from_mapping, dict(parser.items("env")), proto)


def ppo_config(parser) -> ppo.PpoConfig:
    cfg = _config_call(ppo.PpoConfig.from_parser, parser)
    # the reward constant may be given in either section; training uses one value
    if parser.has_option("env", "C"):
        env_c = float(parser.get("env", "C"))
        if parser.has_option("ppo", "C") and float(parser.get("ppo", "C")) != env_c:
            raise ConfigError("[env] C and [ppo] C disagree")
        cfg = dataclasses.replace(cfg, C=env_c)
    return cfg


def radio_map(parser, seed: int) -> tracegen.RadioMap:
    kw = _section(parser, "map", MAP_KEYS)
    map_seed = kw.pop("seed", seed)
    if "bs_positions" in kw:
        try:
            kw["bs_positions"] = np.array([[float(c) for c in p.split()]
                                           for p in kw["bs_positions"].split(";") if p.strip()])
        except ValueError as exc:
            raise ConfigError(f"[map] bs_positions: {exc}") from exc
        kw.setdefault("tx_power", 46.0)
    return _config_call(lambda: tracegen.default_map(map_seed, **kw))


def route_settings(parser) -> dict:
    kw = dict(ROUTE_DEFAULTS)
    kw.update(_section(parser, "routes", ROUTE_KEYS))
    try:
        kw["eval_speeds"] = _speeds(kw["eval_speeds"]) if kw["eval_speeds"] else []
    except ValueError as exc:
        raise ConfigError(f"[routes] eval_speeds: {exc}") from exc
    if kw["count"] < 1 or not 0 <= kw["n_train"] <= kw["count"]:
        raise ConfigError("[routes] needs count >= 1 and 0 <= n_train <= count")
    return kw


def _speeds(text: str) -> list[float]:
    return [float(s) for s in str(text).replace(",", " ").split()]


def resolve_seed(arg) -> int:
    if arg is not None:
        return int(arg)
    env = os.environ.get("HOLAB_SEED")
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"HOLAB_SEED must be an integer, got {env!r}") from exc


# ---------------------------------------------------------------- trace sets


def _route_seed(root: int, i: int) -> int:
    return int(np.random.SeedSequence([root, i]).generate_state(1)[0])


def _gen_one(job):
    rmap, route, trace_id, split, path = job
    raw = tracegen.generate_trace(rmap, route, trace_id=trace_id)
    tr = tracegen.resample_trace(raw)
    tr.split = split
    tracegen.write_trace(path, tr)
    return path


def _pmap(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def load_manifest(traces_dir) -> list[dict]:
    """Trace entries of a generated directory, in manifest order."""
    d = Path(traces_dir)
    mpath = d / "manifest.json"
    if mpath.is_file():
        entries = json.loads(mpath.read_text())["traces"]
        for e in entries:
            e["path"] = str(d / e["file"])
        return entries
    if not d.is_dir():
        raise FileNotFoundError(f"trace directory not found: {d}")
    files = sorted(list(d.glob("*.csv")) + list(d.glob("*.csv.gz")))
    out = []
    for f in files:
        meta = json.loads(tracegen.sidecar_path(f).read_text())
        out.append({"id": meta["id"], "split": meta.get("split", ""), "speed_kmh": meta["speed_kmh"],
                    "file": f.name, "path": str(f)})
    return out


def load_traces(traces_dir, split: str | None = None, speeds=None) -> list[tracegen.RadioTrace]:
    entries = load_manifest(traces_dir)
    if split not in (None, "all"):
        entries = [e for e in entries if e["split"] == split]
    if speeds is not None:
        entries = [e for e in entries if float(e["speed_kmh"]) in set(speeds)]
    traces = []
    for e in entries:
        if not Path(e["path"]).is_file():
            raise FileNotFoundError(f"trace file listed in manifest is missing: {e['path']}")
        traces.append(tracegen.read_trace(e["path"]))
    if not traces:
        raise FileNotFoundError(f"no matching traces in {traces_dir}")
    return traces


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    parser = _read_config(args.config)
    seed = resolve_seed(args.seed)
    rmap = radio_map(parser, seed)
    rs = route_settings(parser)
    if args.eval_speeds is not None:
        rs["eval_speeds"] = _speeds(args.eval_speeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".csv.gz" if rs["compress"] else ".csv"
    jobs, entries = [], []
    for i in range(rs["count"]):
        route = tracegen.random_route(_route_seed(seed, i), speed=rs["speed"],
                                      duration=rs["duration"], block=rs["block"], bbox=rmap.bbox)
        split = "train" if i < rs["n_train"] else "test"
        speeds = [rs["speed"]] + ([v for v in rs["eval_speeds"] if v != rs["speed"]]
                                  if split == "test" else [])
        for v in speeds:
            r = route if v == rs["speed"] else route.at_speed(v)
            tid = f"route{i:02d}"
            fname = f"{tid}_v{v:g}{ext}"
            jobs.append((rmap, r, tid, split, out / fname))
            entries.append({"id": tid, "split": split, "speed_kmh": float(v), "file": fname,
                            "route_seed": r.seed, "duration_s": r.duration})
    _pmap(_gen_one, jobs, args.jobs)
    manifest = {"seed": seed, "n_bs": rmap.n_bs,
                "bs_positions": rmap.bs_positions.tolist(), "tx_power": rmap.tx_power.tolist(),
                "n_train": rs["n_train"], "n_test": rs["count"] - rs["n_train"],
                "traces": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(entries)} traces and manifest.json to {out}")
    return EXIT_OK


def _baseline_one(job):
    trace, cfg = job
    run = protocol.run_baseline(trace, cfg)
    return evalkit.score_run(run, trace, "baseline"), run.events


def cmd_baseline(args) -> int:
    parser = _read_config(args.config)
    resolve_seed(args.seed)  # the baseline is deterministic; validated for uniformity
    cfg = protocol_config(parser)
    traces = load_traces(args.traces, args.split, _speeds(args.speeds) if args.speeds else None)
    results = _pmap(_baseline_one, [(t, cfg) for t in traces], args.jobs)
    report = evalkit.EvalReport([r for r, _ in results])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    events_dir = Path(args.events) if args.events else out.parent / (out.stem + "_events")
    events_dir.mkdir(parents=True, exist_ok=True)
    for t, (_, events) in zip(traces, results):
        protocol.write_events(events_dir / f"{t.id}_v{t.speed:g}.jsonl", events)
    for row in report.rows:
        print(f"{row.trace_id} {row.speed_kmh:g} km/h: gamma={row.gamma:.5f} "
              f"HOF={row.hof} PP={row.pp} HO={row.ho}")
    return EXIT_OK


def _format_schedule(cfg: ppo.PpoConfig) -> str:
    lines = []
    for row in ppo.schedule_table(cfg):
        trace = "full" if row["trace_s"] is None else f"{row['trace_s']:g}s"
        lines.append(f"iteration {row['iteration']}: lr={row['lr']:g} epochs={row['epochs']} "
                     f"batch={row['batch']} trace={trace} reset_on_pp={row['reset_on_pp']}")
    pairs = ",".join(f"({st.lr:g},{st.epochs})" for st in cfg.schedule)
    lines.append(f"schedule: {pairs}")
    lines.append("batch sizes: " + "/".join(str(st.batch) for st in cfg.schedule))
    lines.append(f"rollout={cfg.rollout} epochs_per_rollout={cfg.epochs_per_rollout} "
                 f"clip_eps={cfg.clip_eps:g} ent_coef={cfg.ent_coef:g} C={cfg.C:g}")
    return "\n".join(lines)


def cmd_train(args) -> int:
    parser = _read_config(args.config)
    seed = resolve_seed(args.seed)
    cfg = ppo_config(parser)
    ecfg = env_config(parser)
    if args.dry_run:
        print(_format_schedule(cfg))
        return EXIT_OK
    if args.out is None:
        raise ConfigError("--out is required unless --dry-run is given")
    train_traces = load_traces(args.traces, "train")
    try:
        test_traces = load_traces(args.traces, "test")
    except FileNotFoundError:
        test_traces = []
    test_traces = [t for t in test_traces if t.id not in {tr.id for tr in train_traces}]

    def progress(row):
        if row["stage_epoch"] % 50 == 0 or row["epoch"] == 1:
            log.info("epoch %d (iteration %d): mean reward %.4f, %d terminations",
                     row["epoch"], row["iteration"], row["mean_reward"], row["terminations"])

    run = ppo.train(train_traces, cfg, seed=seed, env_cfg=ecfg, out_dir=args.out,
                    resume=args.resume, eval_traces=test_traces, progress=progress)
    print(f"trained {len(run.history)} epochs; checkpoints: "
          + ", ".join(str(v) for v in run.checkpoints.values()))
    return EXIT_OK


def _agent_one(job):
    trace, actor, ecfg = job
    return evalkit.score_run(evalkit.run_agent(trace, actor, ecfg), trace, "agent")


def cmd_eval(args) -> int:
    parser = _read_config(args.config)
    resolve_seed(args.seed)
    ecfg = env_config(parser)
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    actor = ppo.load_actor(args.checkpoint)
    speeds = _speeds(args.speeds) if args.speeds else None
    traces = load_traces(args.traces, args.split, speeds)
    if speeds is not None:
        missing = sorted(set(speeds) - {t.speed for t in traces})
        if missing:
            raise FileNotFoundError(f"no traces at speed(s) {', '.join(f'{v:g}' for v in missing)} km/h "
                                    "(generate them with `holab gen --eval-speeds`)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    agent = evalkit.EvalReport(_pmap(_agent_one, [(t, actor, ecfg) for t in traces], args.jobs))
    agent.save(out / "agent_report.json")
    if not args.no_baseline:
        base = evalkit.EvalReport([r for r, _ in _pmap(_baseline_one, [(t, ecfg.protocol) for t in traces],
                                                      args.jobs)])
        base.save(out / "baseline_report.json")
        _write_comparison(evalkit.compare(agent, base), out)
    else:
        for row in agent.rows:
            print(f"{row.trace_id} {row.speed_kmh:g} km/h: gamma={row.gamma:.5f} "
                  f"HOF={row.hof} PP={row.pp} HO={row.ho}")
    return EXIT_OK


def _write_comparison(rows, out: Path):
    (out / "comparison.json").write_text(evalkit.comparison_json(rows) + "\n")
    (out / "comparison.csv").write_text(evalkit.comparison_csv(rows))
    table = evalkit.comparison_table(rows)
    (out / "comparison.txt").write_text(table + "\n")
    print(table)


def cmd_compare(args) -> int:
    for p in (args.agent, args.baseline):
        if not Path(p).is_file():
            raise FileNotFoundError(f"report not found: {p}")
    rows = evalkit.compare(evalkit.EvalReport.load(args.agent), evalkit.EvalReport.load(args.baseline))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_comparison(rows, out)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="holab", description="Handover protocol and PPO agent laboratory.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, jobs=True):
        sp.add_argument("--config", help="INI configuration file")
        if seed:
            sp.add_argument("--seed", type=int, help="root seed (default: $HOLAB_SEED, else 0)")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")

    g = sub.add_parser("gen", help="generate synthetic radio traces")
    common(g)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--eval-speeds", help="extra speeds (km/h) for the test routes, e.g. 3,30")
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("baseline", help="run the 3GPP baseline over traces")
    common(b)
    b.add_argument("--traces", required=True, help="trace directory")
    b.add_argument("--split", default="all", choices=["train", "test", "all"])
    b.add_argument("--speeds", help="only these speeds (km/h)")
    b.add_argument("--out", required=True, help="report JSON path")
    b.add_argument("--events", help="directory for per-trace event logs")
    b.set_defaults(func=cmd_baseline)

    t = sub.add_parser("train", help="train the PPO agent")
    common(t, jobs=False)
    t.add_argument("--traces", help="trace directory (train split is used)")
    t.add_argument("--out", help="checkpoint and metrics directory")
    t.add_argument("--resume", action="store_true", help="continue from <out>/state.json")
    t.add_argument("--dry-run", action="store_true", help="print the resolved schedule and exit")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained agent (and the baseline)")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--traces", required=True)
    e.add_argument("--split", default="test", choices=["train", "test", "all"])
    e.add_argument("--speeds", help="comma-separated speeds in km/h, e.g. 3,30,50")
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--no-baseline", action="store_true", help="skip the baseline and comparison")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="compare two evaluation reports")
    c.add_argument("--agent", required=True, help="report of the policy under test")
    c.add_argument("--baseline", required=True, help="reference report")
    c.add_argument("--out", required=True, help="directory for comparison files")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("holab: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"holab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"holab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
