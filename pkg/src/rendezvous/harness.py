"""Episode orchestration, metrics, suites over scenes x seeds x policies, and
the CSV / text reports."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agents import AgentContext, make_policy
from .agents.base import place_info
from .maptool import MapTool
from .scene import (MAX_AGENTS, MAX_SENTINELS, PATROLLING, PROFILES, SENTINEL_KINDS, STATIONARY,
                    SceneSpec, generate_scene, load_scene)
from .world import HORIZON, World

log = logging.getLogger(__name__)

CSV_COLUMNS = ["scene", "seed", "policy", "success", "caught_rate", "detected_rate",
               "time_cost", "distance", "failure_reason"]
FAILURE_REASONS = ("Caught", "WrongPlaceSignal", "Timeout")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scenes


def resolve_scene(ref: str | SceneSpec, sentinel_kind: str | None = None) -> SceneSpec:
    """A SceneSpec, a scene file path, or `<profile>:<seed>` for a generated city."""
    if isinstance(ref, SceneSpec):
        scene = ref
    else:
        prof, sep, seed = ref.partition(":")
        if sep and prof in PROFILES and seed.lstrip("-").isdigit():
            profile = PROFILES[prof]
            if sentinel_kind is not None:
                profile = replace(profile, sentinel_kind=sentinel_kind)
            return generate_scene(profile, int(seed), name=ref)
        scene = load_scene(ref)
    if sentinel_kind is not None:
        scene = convert_sentinels(scene, sentinel_kind)
    return scene


def convert_sentinels(scene: SceneSpec, kind: str) -> SceneSpec:
    if kind not in SENTINEL_KINDS:
        raise ConfigError(f"unknown sentinel kind {kind!r}")
    out = []
    for s in scene.sentinels:
        if s.kind == kind:
            out.append(s)
        elif kind == STATIONARY:
            out.append(replace(s, kind=STATIONARY, patrol_route=(), speed=0.0,
                               angular_rate=s.angular_rate or 0.314))
        else:
            if len(s.patrol_route) < 2:
                raise ConfigError(f"sentinel {s.id} has no patrol route to switch to patrolling")
            out.append(replace(s, kind=PATROLLING, speed=s.speed or 1.0))
    return SceneSpec(scene.name, scene.extent, scene.road_segments, scene.obstacle_grid,
                     scene.cell_size, scene.places, scene.agents, tuple(out), scene.seed)


# ---------------------------------------------------------------------------
# episodes


@dataclass(frozen=True)
class EpisodeConfig:
    scene: str = "bench:0"
    policy: str | tuple[str, ...] = "cosar"
    n_agents: int | None = None
    n_sentinels: int | None = None
    sentinel_kind: str | None = None
    horizon: int = HORIZON
    seed: int = 0
    oracle_perception: bool = False

    def validate(self) -> None:
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.n_agents is not None and not 1 <= self.n_agents <= MAX_AGENTS:
            raise ConfigError(f"n_agents must be in [1, {MAX_AGENTS}]")
        if self.n_sentinels is not None and not 0 <= self.n_sentinels <= MAX_SENTINELS:
            raise ConfigError(f"n_sentinels must be in [0, {MAX_SENTINELS}]")
        if self.sentinel_kind is not None and self.sentinel_kind not in SENTINEL_KINDS:
            raise ConfigError(f"unknown sentinel kind {self.sentinel_kind!r}")

    @property
    def policy_label(self) -> str:
        if isinstance(self.policy, str):
            return self.policy
        kinds = list(dict.fromkeys(self.policy))
        return kinds[0] if len(kinds) == 1 else "+".join(self.policy)

    def policies_for(self, roster: Sequence[str]) -> list[str]:
        if isinstance(self.policy, str):
            return [self.policy] * len(roster)
        if len(self.policy) != len(roster):
            raise ConfigError(f"{len(self.policy)} policies given for {len(roster)} agents")
        return list(self.policy)


@dataclass(frozen=True)
class EpisodeMetrics:
    success: bool
    caught_rate: float
    detected_rate: float
    time_cost: int
    distance: float
    failure_reason: str | None
    place: str | None = None
    steps: int = 0


def build_scene(cfg: EpisodeConfig) -> SceneSpec:
    scene = resolve_scene(cfg.scene, cfg.sentinel_kind)
    if cfg.n_agents is not None and cfg.n_agents > len(scene.agents):
        raise ConfigError(f"scene has only {len(scene.agents)} agents")
    if cfg.n_sentinels is not None and cfg.n_sentinels > len(scene.sentinels):
        raise ConfigError(f"scene has only {len(scene.sentinels)} sentinels")
    return scene.with_roster(cfg.n_agents, cfg.n_sentinels)


def failure_reason(world: World, gathered: str | None) -> str | None:
    if gathered is not None:
        return None
    if world.n_caught:
        return "Caught"
    signals = {a.completed_signal for a in world.agents if a.completed_signal is not None}
    if len(signals) > 1:
        return "WrongPlaceSignal"
    for a in world.agents:
        s = a.completed_signal
        if s is not None and (not world.scene.has_place(s)
                              or not world.scene.place(s).bounding_box.contains(a.pose.x, a.pose.y)):
            return "WrongPlaceSignal"
    return "Timeout"


def run_episode(cfg: EpisodeConfig, trace_path: str | Path | None = None,
                scene: SceneSpec | None = None) -> tuple[EpisodeMetrics, Path | None]:
    cfg.validate()
    scene = scene if scene is not None else build_scene(cfg)
    roster = [a.name for a in scene.agents]
    kinds = cfg.policies_for(roster)
    maptool = MapTool(scene)

    fh = None
    if trace_path is not None:
        trace_path = Path(trace_path)
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        fh = open(trace_path, "w", encoding="utf-8", newline="\n")
    try:
        world = World(scene, cfg.horizon, cfg.seed, cfg.oracle_perception, maptool, fh)
        true_starts = {a.name: a.pose for a in world.agents}
        policies = {}
        for i, (spec, kind) in enumerate(zip(scene.agents, kinds)):
            def note(k, detail, _n=spec.name):
                world.note(k, _n, detail)
            ctx = AgentContext(
                name=spec.name, roster=roster, scene=scene, graph=maptool.graph,
                rng=np.random.default_rng([cfg.seed, i]), horizon=cfg.horizon, speed=spec.speed,
                known_places={p: place_info(scene, p) for p in sorted(spec.known_places)},
                note=note,
                true_initial_poses=dict(true_starts) if kind.startswith("oracle") else None,
            )
            policies[spec.name] = make_policy(kind, ctx)

        obs = world.observe_all()
        gathered = None
        while world.clock < cfg.horizon:
            actions = {b.name: policies[b.name].act(obs[b.name]) for b in world.agents if b.alive}
            obs = world.step(actions)
            gathered = world.is_gathered()
            if gathered is not None or world.n_caught == len(world.agents):
                break
    finally:
        if fh is not None:
            fh.close()

    steps = world.clock
    success = gathered is not None
    metrics = EpisodeMetrics(
        success=success,
        caught_rate=world.n_caught / len(world.agents),
        detected_rate=world.detected_steps / steps if steps else 0.0,
        time_cost=steps if success else cfg.horizon,
        distance=sum(a.distance_traveled for a in world.agents),
        failure_reason=failure_reason(world, gathered),
        place=gathered,
        steps=steps,
    )
    return metrics, trace_path


# ---------------------------------------------------------------------------
# suites


@dataclass(frozen=True)
class ResultRow:
    scene: str
    seed: int
    policy: str
    success: bool
    caught_rate: float
    detected_rate: float
    time_cost: float
    distance: float
    failure_reason: str
    setting: str = ""
    error: str = ""


@dataclass
class SuiteResults:
    rows: list[ResultRow]
    aggregates: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.aggregates:
            self.aggregates = aggregate(self.rows)


def setting_label(cfg: EpisodeConfig) -> str:
    kind = cfg.sentinel_kind or "scene"
    parts = [f"agents={cfg.n_agents or 'scene'}", f"sentinels={cfg.n_sentinels if cfg.n_sentinels is not None else 'scene'}",
             f"kind={kind}"]
    if cfg.oracle_perception:
        parts.append("oracle_perception")
    return " ".join(parts)


def _trace_name(cfg: EpisodeConfig) -> str:
    safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in Path(cfg.scene).stem)
    return f"{safe}_seed{cfg.seed}_{cfg.policy_label}.jsonl"


def _run_cell(args) -> ResultRow:
    cfg, trace_dir = args
    label = cfg.policy_label
    try:
        tp = Path(trace_dir) / _trace_name(cfg) if trace_dir else None
        m, _ = run_episode(cfg, tp)
        return ResultRow(cfg.scene, cfg.seed, label, m.success, m.caught_rate, m.detected_rate,
                         float(m.time_cost), m.distance, m.failure_reason or "none", setting_label(cfg))
    except Exception as e:  # one bad cell must not sink the suite
        log.error("episode %s seed %s failed: %s", cfg.scene, cfg.seed, e)
        return ResultRow(cfg.scene, cfg.seed, label, False, float("nan"), float("nan"),
                         float("nan"), float("nan"), "Error", setting_label(cfg), f"{type(e).__name__}: {e}")


def suite_configs(scenes: Iterable[str], seeds: Iterable[int], policies: Iterable[str],
                  **kw) -> list[EpisodeConfig]:
    return [EpisodeConfig(scene=s, seed=k, policy=p, **kw)
            for p in policies for s in scenes for k in seeds]


def run_suite(cells: Sequence[EpisodeConfig], jobs: int = 1, trace_dir: str | Path | None = None) -> SuiteResults:
    if not cells:
        raise ConfigError("a suite needs at least one cell")
    for c in cells:
        c.validate()
    work = [(c, str(trace_dir) if trace_dir else None) for c in cells]
    if jobs <= 1:
        rows = [_run_cell(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            # map keeps submission order, so the merge is deterministic
            rows = list(ex.map(_run_cell, work, chunksize=1))
    return SuiteResults(rows)


def aggregate(rows: Sequence[ResultRow]) -> list[dict]:
    """Mean metrics per (policy, setting), in sorted key order."""
    groups: dict[tuple[str, str], list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.policy, r.setting), []).append(r)
    out = []
    for (policy, setting) in sorted(groups):
        g = [r for r in groups[(policy, setting)] if not r.error]
        n = len(g)

        def mean(attr):
            return math.fsum(float(getattr(r, attr)) for r in g) / n if n else float("nan")

        fails = Counter(r.failure_reason for r in g if not r.success)
        out.append({
            "policy": policy, "setting": setting, "episodes": n,
            "errors": len(groups[(policy, setting)]) - n,
            "success": mean("success"), "caught_rate": mean("caught_rate"),
            "detected_rate": mean("detected_rate"), "time_cost": mean("time_cost"),
            "distance": mean("distance"),
            "failures": {k: fails.get(k, 0) for k in FAILURE_REASONS},
        })
    return out


# ---------------------------------------------------------------------------
# reports


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def results_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_results_csv(path: str | Path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            rows.append(ResultRow(d["scene"], int(d["seed"]), d["policy"], d["success"] == "1",
                                  float(d["caught_rate"]), float(d["detected_rate"]),
                                  float(d["time_cost"]), float(d["distance"]), d["failure_reason"],
                                  d.get("setting", "")))
    return rows


def summary_text(results: SuiteResults) -> str:
    head = f"{'Policy':<14} {'Setting':<44} {'N':>4} {'Success%':>9} {'Caught%':>8} {'Detected%':>10} {'TimeCost':>9} {'Distance':>10}"
    lines = [head, "-" * len(head)]
    for a in results.aggregates:
        lines.append(
            f"{a['policy']:<14} {a['setting']:<44} {a['episodes']:>4} {100 * a['success']:>9.2f} "
            f"{100 * a['caught_rate']:>8.2f} {100 * a['detected_rate']:>10.2f} "
            f"{a['time_cost']:>9.2f} {a['distance']:>10.2f}")
    lines.append("")
    lines.append("Failure reasons")
    for a in results.aggregates:
        f = a["failures"]
        lines.append(f"  {a['policy']:<14} " + "  ".join(f"{k}={f[k]}" for k in FAILURE_REASONS)
                     + (f"  errors={a['errors']}" if a["errors"] else ""))
    return "\n".join(lines) + "\n"


def emit_report(results: SuiteResults, out_dir: str | Path) -> tuple[Path, Path]:
    if not results.rows:
        raise ConfigError("no results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, txt_path = out / "results.csv", out / "summary.txt"
    csv_path.write_bytes(results_csv(results.rows).encode())
    txt_path.write_bytes(summary_text(results).encode())
    return csv_path, txt_path
