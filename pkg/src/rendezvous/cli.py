"""Command-line interface: gen-scene, run, suite, report, validate."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .harness import (ConfigError, EpisodeConfig, SuiteResults, emit_report, read_results_csv,
                      run_episode, run_suite, suite_configs, summary_text)
from .scene import (PROFILES, SENTINEL_KINDS, SceneError, SceneValidationError, dumps_scene,
                    generate_scene, loads_scene, scene_warnings, validate_scene)

log = logging.getLogger("rendezvous")

_RANGE = re.compile(r"^(?P<prof>[A-Za-z_]+):(?P<lo>\d+)-(?P<hi>\d+)$")


def expand_scenes(refs) -> list[str]:
    """`bench:0-49` expands to bench:0 ... bench:49; other refs pass through."""
    out = []
    for ref in refs:
        m = _RANGE.match(ref)
        if m:
            lo, hi = int(m["lo"]), int(m["hi"])
            if hi < lo:
                raise ConfigError(f"empty scene range {ref!r}")
            out.extend(f"{m['prof']}:{k}" for k in range(lo, hi + 1))
        else:
            out.append(ref)
    return out


def _policy(value: str):
    parts = tuple(p.strip() for p in value.split(",") if p.strip())
    if not parts:
        raise ConfigError("empty --policy")
    return parts[0] if len(parts) == 1 else parts


def _episode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--agents", type=int, help="use the first N agents of the scene")
    p.add_argument("--sentinels", type=int, help="use the first N sentinels of the scene")
    p.add_argument("--sentinel-kind", choices=SENTINEL_KINDS)
    p.add_argument("--horizon", type=int, default=1500)
    p.add_argument("--oracle-perception", action="store_true",
                   help="agents see sentinels exactly within view range")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rendezvous", description="Multi-agent rendezvous under sentinel watch.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-scene", help="generate a synthetic city")
    g.add_argument("--profile", choices=sorted(PROFILES), default="standard")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--agents", type=int)
    g.add_argument("--sentinels", type=int)
    g.add_argument("--sentinel-kind", choices=SENTINEL_KINDS)
    g.add_argument("--out", help="output file (default: stdout)")

    r = sub.add_parser("run", help="run one episode")
    r.add_argument("--scene", default="bench:0", help="scene file or <profile>:<seed>")
    r.add_argument("--policy", default="cosar", help="policy name, or a comma list with one per agent")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", help="directory for trace.jsonl and metrics.json")
    _episode_flags(r)

    s = sub.add_parser("suite", help="run scenes x seeds x policies")
    s.add_argument("--scene", action="append", required=True,
                   help="scene ref; repeatable; <profile>:<lo>-<hi> expands to a range")
    s.add_argument("--policy", action="append", required=True, help="repeatable")
    s.add_argument("--seed", type=int, default=0, help="first seed")
    s.add_argument("--seeds", type=int, default=1, help="number of seeds per scene")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", default="results", help="directory for results.csv and summary.txt")
    s.add_argument("--traces", action="store_true", help="also write one trace per episode")
    _episode_flags(s)

    rep = sub.add_parser("report", help="summarize a results CSV")
    rep.add_argument("results", help="results.csv from a suite run")
    rep.add_argument("--out", help="also write summary.txt here")

    v = sub.add_parser("validate", help="check a scene file")
    v.add_argument("scene")
    return ap


def _cfg(args, scene: str, seed: int, policy) -> EpisodeConfig:
    cfg = EpisodeConfig(scene=scene, policy=policy, n_agents=args.agents, n_sentinels=args.sentinels,
                        sentinel_kind=args.sentinel_kind, horizon=args.horizon, seed=seed,
                        oracle_perception=args.oracle_perception)
    cfg.validate()
    return cfg


def cmd_gen_scene(args) -> int:
    profile = PROFILES[args.profile]
    if args.agents is not None:
        profile = replace(profile, n_agents=args.agents)
    if args.sentinels is not None:
        profile = replace(profile, n_sentinels=args.sentinels)
    if args.sentinel_kind is not None:
        profile = replace(profile, sentinel_kind=args.sentinel_kind)
    text = dumps_scene(generate_scene(profile, args.seed, name=f"{args.profile}:{args.seed}"))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_run(args) -> int:
    cfg = _cfg(args, args.scene, args.seed, _policy(args.policy))
    trace = Path(args.out) / "trace.jsonl" if args.out else None
    metrics, _ = run_episode(cfg, trace)
    text = json.dumps(asdict(metrics), indent=2, sort_keys=True)
    if args.out:
        (Path(args.out) / "metrics.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_suite(args) -> int:
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    scenes = expand_scenes(args.scene)
    policies = [_policy(p) for p in args.policy]
    seeds = range(args.seed, args.seed + args.seeds)
    cells = suite_configs(scenes, seeds, policies, n_agents=args.agents, n_sentinels=args.sentinels,
                          sentinel_kind=args.sentinel_kind, horizon=args.horizon,
                          oracle_perception=args.oracle_perception)
    trace_dir = Path(args.out) / "traces" if args.traces else None
    results = run_suite(cells, jobs=args.jobs, trace_dir=trace_dir)
    csv_path, txt_path = emit_report(results, args.out)
    sys.stdout.write(txt_path.read_text())
    return 0


def cmd_report(args) -> int:
    rows = read_results_csv(args.results)
    if not rows:
        raise ConfigError(f"{args.results} has no rows")
    results = SuiteResults(rows)
    if args.out:
        emit_report(results, args.out)
    sys.stdout.write(summary_text(results))
    return 0


def cmd_validate(args) -> int:
    try:
        scene = loads_scene(Path(args.scene).read_text(), validate=False)
    except SceneError as e:
        print(f"{args.scene}: {e}")
        return 1
    problems = validate_scene(scene)
    for p in problems:
        print(f"{args.scene}: {p.entity}: {p.rule}")
    for w in scene_warnings(scene):
        print(f"{args.scene}: warning: {w}")
    if not problems:
        print(f"{args.scene}: ok")
    return 1 if problems else 0


COMMANDS = {"gen-scene": cmd_gen_scene, "run": cmd_run, "suite": cmd_suite,
            "report": cmd_report, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except (ConfigError, SceneValidationError, SceneError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
