"""Experiment configs, figure presets, and the sweep runners behind the CLI.

Configs are plain nested key/value data, read either from an INI-style file
with sections or from JSON with the same shape.  Presets encode the
parameter sets of the reference comparisons; where a figure caption leaves a
parameter unstated the preset documents the assumed default (p = q = 0.5,
P_f = 0.01, R_c = 10, R_t = 1, C_q = 10).
"""
from __future__ import annotations

import configparser
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bounds import revenue_boundary
from .harness import (
    DEFAULT_BATCHES,
    DEFAULT_SLOTS,
    DEFAULT_WARMUP,
    csv_header,
    csv_row,
    run_simulation,
)
from .model import SystemParams, SystemState
from .policies import ALLOCATORS, GreedyPolicy, NullPolicy, Policy, ThresholdPolicy
from .rollout import RolloutPolicy, estimate_segment_revenue

__all__ = [
    "ConfigError",
    "PolicySpec",
    "ExperimentConfig",
    "PRESETS",
    "load_config_file",
    "apply_overrides",
    "build_config",
    "run_experiment",
    "GBAR_CSV_COLUMNS",
]

GBAR_CSV_COLUMNS = [
    "config_id",
    "R_c",
    "C_q",
    "avail",
    "n_hold",
    "mean_g",
    "std_err",
    "n_runs",
    "seed",
]


class ConfigError(ValueError):
    """A config file or preset failed validation."""


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    allocator: str = "ldf"
    threshold: int | None = None

    def label(self) -> str:
        if self.kind == "threshold":
            return f"threshold-{self.allocator}"
        return self.kind


@dataclass
class ExperimentConfig:
    name: str
    kind: str
    system: SystemParams
    explicit_cap: bool = False
    policies: list[PolicySpec] = field(default_factory=list)
    thresholds: list[int] | None = None
    j_values: list[int] | None = None
    holds: list[int] | None = None
    reward_pairs: list[tuple[float, float]] | None = None
    gbar_avail: int | None = None
    gbar_runs: int = 10_000
    slots: int = DEFAULT_SLOTS
    warmup: int = DEFAULT_WARMUP
    batches: int = DEFAULT_BATCHES
    seeds: list[int] = field(default_factory=lambda: [1])
    rollout_slots: int | None = None
    rollout_warmup: int | None = None
    rollout_runs: int = 16
    rollout_horizon: int = 6
    rollout_doublings: int = 2
    rollout_guard: float = 1.0
    boundary: bool = False
    boundary_runs: int = 2_000
    solve_tol: float = 1e-9
    solve_max_iter: int = 200_000
    state_limit: int = 10_000_000
    out_csv: str | None = None
    out_summary: str | None = None


PRESETS: dict[str, dict] = {
    "tiny": {
        "experiment": {"name": "tiny", "kind": "simulate"},
        "system": {
            "J": 1, "p_stay_on": 0.5, "q_stay_off": 0.5, "D_max": 0,
            "P_f": 1.0, "R_c": 1.0, "R_t": 0.0, "C_q": 0.0, "N_cap": 1,
        },
        "policies": {"specs": "greedy"},
        "simulate": {"slots": 40000, "warmup": 10000, "batches": 10,
                     "seeds": "1"},
    },
    "fig5": {
        "experiment": {"name": "fig5", "kind": "simulate"},
        "system": {
            "J": 5, "p_stay_on": 0.5, "q_stay_off": 0.5, "D_max": 5,
            "P_f": 0.01, "R_c": 10.0, "R_t": 1.0, "C_q": 10.0,
        },
        "policies": {"specs": "threshold:ldf,threshold:sdf,threshold:random"},
        "sweep": {"thresholds": "1:30"},
        "simulate": {"seeds": "1"},
    },
    "fig6": {
        "experiment": {"name": "fig6", "kind": "simulate"},
        "system": {
            "J": 5, "p_stay_on": 0.5, "q_stay_off": 0.5, "D_max": 5,
            "P_f": 0.01, "R_c": 10.0, "R_t": 1.0, "C_q": 10.0,
        },
        "policies": {"specs": "threshold:ldf,threshold:sdf,threshold:random"},
        "sweep": {"thresholds": "1:15", "j_values": "5:10"},
        "simulate": {"seeds": "1"},
    },
    "fig7": {
        "experiment": {"name": "fig7", "kind": "gbar"},
        "system": {
            "J": 10, "p_stay_on": 0.5, "q_stay_off": 0.5, "D_max": 5,
            "P_f": 0.01, "R_c": 5.0, "R_t": 0.7, "C_q": 5.0,
        },
        "sweep": {"holds": "1:12", "reward_pairs": "5/5,10/10",
                  "gbar_avail": "5", "gbar_runs": "20000"},
        "simulate": {"seeds": "1"},
    },
    "fig8": {
        "experiment": {"name": "fig8", "kind": "simulate"},
        "system": {
            "J": 5, "p_stay_on": 0.5, "q_stay_off": 0.5, "D_max": 5,
            "P_f": 0.01, "R_c": 10.0, "R_t": 1.0, "C_q": 10.0,
        },
        "policies": {"specs": "greedy,threshold:ldf,rollout"},
        "sweep": {"thresholds": "1:12", "j_values": "5:10"},
        "simulate": {
            "seeds": "1", "rollout_slots": "16000", "rollout_warmup": "4000",
            "rollout_runs": "16", "rollout_horizon": "6",
        },
        "boundary": {"enabled": "true", "runs": "4000"},
    },
}


def _as_int(value, where: str) -> int:
    try:
        return int(str(value))
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected integer, got {value!r}") from None


def _as_float(value, where: str) -> float:
    try:
        return float(str(value))
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected number, got {value!r}") from None


def _as_bool(value, where: str) -> bool:
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{where}: expected boolean, got {value!r}")


def _as_int_list(value, where: str) -> list[int]:
    if isinstance(value, (list, tuple)):
        return [_as_int(v, where) for v in value]
    text = str(value).strip()
    if not text:
        return []
    if ":" in text and "," not in text:
        lo_s, hi_s = text.split(":", 1)
        lo, hi = _as_int(lo_s, where), _as_int(hi_s, where)
        if hi < lo:
            raise ConfigError(f"{where}: empty range {text!r}")
        return list(range(lo, hi + 1))
    return [_as_int(v, where) for v in text.split(",") if v.strip()]


def _as_pairs(value, where: str) -> list[tuple[float, float]]:
    if isinstance(value, (list, tuple)):
        return [(float(a), float(b)) for a, b in value]
    out = []
    for chunk in str(value).split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split("/")
        if len(parts) != 2:
            raise ConfigError(f"{where}: expected a/b pairs, got {chunk!r}")
        out.append((_as_float(parts[0], where), _as_float(parts[1], where)))
    return out


def load_config_file(path: str) -> dict:
    """Read a config as nested dicts, from INI sections or JSON."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return raw
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {section: dict(parser.items(section)) for section in parser.sections()}


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply repeatable ``section.key=value`` command-line overrides."""
    out = {k: dict(v) for k, v in raw.items()}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        out.setdefault(section, {})[key] = value
    return out


def build_config(raw: dict) -> ExperimentConfig:
    """Validate raw nested data into an ExperimentConfig."""
    exp = raw.get("experiment", {})
    name = str(exp.get("name", "custom"))
    kind = str(exp.get("kind", "simulate"))
    if kind not in ("simulate", "gbar"):
        raise ConfigError(f"experiment.kind: unknown kind {kind!r}")

    sys_raw = raw.get("system")
    if not sys_raw:
        raise ConfigError("system: section is required")
    explicit_cap = "N_cap" in sys_raw
    try:
        system = SystemParams(
            n_channels=_as_int(sys_raw.get("J", 1), "system.J"),
            p_stay_on=_as_float(sys_raw.get("p_stay_on", 0.5), "system.p_stay_on"),
            q_stay_off=_as_float(sys_raw.get("q_stay_off", 0.5), "system.q_stay_off"),
            max_delay=_as_int(sys_raw.get("D_max", 5), "system.D_max"),
            p_complete=_as_float(sys_raw.get("P_f", 0.01), "system.P_f"),
            reward_complete=_as_float(sys_raw.get("R_c", 10.0), "system.R_c"),
            reward_maintain=_as_float(sys_raw.get("R_t", 1.0), "system.R_t"),
            drop_penalty=_as_float(sys_raw.get("C_q", 10.0), "system.C_q"),
            max_users=_as_int(sys_raw["N_cap"], "system.N_cap")
            if explicit_cap
            else None,
        )
    except ValueError as exc:
        raise ConfigError(f"system: {exc}") from None

    config = ExperimentConfig(
        name=name, kind=kind, system=system, explicit_cap=explicit_cap
    )

    sweep = raw.get("sweep", {})
    if "thresholds" in sweep:
        config.thresholds = _as_int_list(sweep["thresholds"], "sweep.thresholds")
        if not config.thresholds:
            raise ConfigError("sweep.thresholds: sweep axis is empty")
    if "j_values" in sweep:
        config.j_values = _as_int_list(sweep["j_values"], "sweep.j_values")
        if not config.j_values:
            raise ConfigError("sweep.j_values: sweep axis is empty")
    if "holds" in sweep:
        config.holds = _as_int_list(sweep["holds"], "sweep.holds")
        if not config.holds:
            raise ConfigError("sweep.holds: sweep axis is empty")
    if "reward_pairs" in sweep:
        config.reward_pairs = _as_pairs(sweep["reward_pairs"], "sweep.reward_pairs")
    if "gbar_avail" in sweep:
        config.gbar_avail = _as_int(sweep["gbar_avail"], "sweep.gbar_avail")
    if "gbar_runs" in sweep:
        config.gbar_runs = _as_int(sweep["gbar_runs"], "sweep.gbar_runs")

    sim = raw.get("simulate", {})
    config.slots = _as_int(sim.get("slots", DEFAULT_SLOTS), "simulate.slots")
    config.warmup = _as_int(sim.get("warmup", DEFAULT_WARMUP), "simulate.warmup")
    config.batches = _as_int(sim.get("batches", DEFAULT_BATCHES), "simulate.batches")
    config.seeds = _as_int_list(sim.get("seeds", [1]), "simulate.seeds")
    if not config.seeds:
        raise ConfigError("simulate.seeds: at least one seed is required")
    if "rollout_slots" in sim:
        config.rollout_slots = _as_int(sim["rollout_slots"], "simulate.rollout_slots")
    if "rollout_warmup" in sim:
        config.rollout_warmup = _as_int(
            sim["rollout_warmup"], "simulate.rollout_warmup"
        )
    config.rollout_runs = _as_int(
        sim.get("rollout_runs", 16), "simulate.rollout_runs"
    )
    config.rollout_horizon = _as_int(
        sim.get("rollout_horizon", 6), "simulate.rollout_horizon"
    )
    config.rollout_doublings = _as_int(
        sim.get("rollout_doublings", 2), "simulate.rollout_doublings"
    )
    config.rollout_guard = _as_float(
        sim.get("rollout_guard", 1.0), "simulate.rollout_guard"
    )

    pol = raw.get("policies", {})
    specs_text = pol.get("specs", "")
    specs: list[PolicySpec] = []
    if isinstance(specs_text, (list, tuple)):
        chunks = [str(c) for c in specs_text]
    else:
        chunks = [c.strip() for c in str(specs_text).split(",") if c.strip()]
    for chunk in chunks:
        parts = chunk.split(":")
        kind_p = parts[0]
        if kind_p in ("greedy", "rollout", "null"):
            if len(parts) > 1:
                raise ConfigError(f"policies.specs: {chunk!r} takes no arguments")
            specs.append(PolicySpec(kind=kind_p))
        elif kind_p == "threshold":
            allocator = parts[1] if len(parts) > 1 else "ldf"
            if allocator not in ALLOCATORS:
                raise ConfigError(
                    f"policies.specs: unknown allocator {allocator!r} in {chunk!r}"
                )
            threshold = (
                _as_int(parts[2], "policies.specs") if len(parts) > 2 else None
            )
            specs.append(PolicySpec(kind="threshold", allocator=allocator,
                                    threshold=threshold))
        else:
            raise ConfigError(f"policies.specs: unknown policy {chunk!r}")
    config.policies = specs

    bnd = raw.get("boundary", {})
    if "enabled" in bnd:
        config.boundary = _as_bool(bnd["enabled"], "boundary.enabled")
    if "runs" in bnd:
        config.boundary_runs = _as_int(bnd["runs"], "boundary.runs")

    solve = raw.get("solve", {})
    if "tol" in solve:
        config.solve_tol = _as_float(solve["tol"], "solve.tol")
    if "max_iter" in solve:
        config.solve_max_iter = _as_int(solve["max_iter"], "solve.max_iter")
    if "state_limit" in solve:
        config.state_limit = _as_int(solve["state_limit"], "solve.state_limit")

    out = raw.get("output", {})
    config.out_csv = out.get("csv")
    config.out_summary = out.get("summary")

    if kind == "simulate":
        if not config.policies:
            raise ConfigError("policies.specs: at least one policy is required")
        needs_sweep = any(
            s.kind == "threshold" and s.threshold is None for s in config.policies
        )
        if needs_sweep and not config.thresholds:
            raise ConfigError(
                "sweep.thresholds: required by a threshold policy without a "
                "fixed threshold"
            )
    else:
        if not config.holds:
            raise ConfigError("sweep.holds: required for gbar experiments")
    return config


def build_policy(spec: PolicySpec, config: ExperimentConfig,
                 threshold: int | None = None) -> Policy:
    if spec.kind == "threshold":
        t = spec.threshold if spec.threshold is not None else threshold
        assert t is not None
        return ThresholdPolicy(t, allocator=spec.allocator)
    if spec.kind == "greedy":
        return GreedyPolicy()
    if spec.kind == "rollout":
        return RolloutPolicy(
            n_runs=config.rollout_runs,
            horizon_segments=config.rollout_horizon,
            max_doublings=config.rollout_doublings,
            guard_width=config.rollout_guard,
        )
    if spec.kind == "null":
        return NullPolicy()
    raise ConfigError(f"unknown policy kind {spec.kind!r}")


def _params_for_j(config: ExperimentConfig, j: int) -> SystemParams:
    if j == config.system.n_channels:
        return config.system
    cap = config.system.max_users if config.explicit_cap else None
    return dataclasses.replace(config.system, n_channels=j, max_users=cap)


@dataclass(frozen=True)
class _SimTask:
    config_id: str
    params: SystemParams
    spec: PolicySpec
    threshold: int | None
    seed: int
    slots: int
    warmup: int
    batches: int
    rollout_runs: int
    rollout_horizon: int
    rollout_doublings: int
    rollout_guard: float


@dataclass(frozen=True)
class _BoundaryTask:
    config_id: str
    params: SystemParams
    n_runs: int
    seed: int


@dataclass(frozen=True)
class _GbarTask:
    config_id: str
    params: SystemParams
    avail: int
    n_hold: int
    n_runs: int
    seed: int


def _run_task(task):
    if isinstance(task, _SimTask):
        config = ExperimentConfig(
            name=task.config_id, kind="simulate", system=task.params,
            rollout_runs=task.rollout_runs,
            rollout_horizon=task.rollout_horizon,
            rollout_doublings=task.rollout_doublings,
            rollout_guard=task.rollout_guard,
        )
        policy = build_policy(task.spec, config, task.threshold)
        initial = SystemState(
            task.params.n_channels, (0,) * task.params.n_delay_classes
        )
        report = run_simulation(
            policy, task.params, initial,
            slots=task.slots, warmup=task.warmup, batches=task.batches,
            seed=task.seed,
        )
        shown = task.threshold if task.spec.kind == "threshold" else ""
        line = csv_row(report, task.params, task.config_id, shown)
        point = {
            "kind": "sim",
            "J": task.params.n_channels,
            "policy": policy.name,
            "threshold": task.threshold if task.spec.kind == "threshold" else None,
            "seed": task.seed,
            "avg_revenue": report.avg_revenue,
            "ci95": report.ci_halfwidth_95,
        }
        return line, point
    if isinstance(task, _BoundaryTask):
        rng = np.random.default_rng(np.random.SeedSequence([task.seed, 0xB0]))
        result = revenue_boundary(task.params, task.n_runs, rng)
        p = task.params
        values = [
            task.config_id, "boundary", str(result.argmax_hold),
            str(p.n_channels), repr(p.p_stay_on), repr(p.q_stay_off),
            str(p.max_delay), repr(p.p_complete), repr(p.reward_complete),
            repr(p.reward_maintain), repr(p.drop_penalty), str(task.seed),
            "0", repr(result.g_bound), repr(1.96 * result.std_err), "0", "0",
        ]
        point = {
            "kind": "boundary",
            "J": p.n_channels,
            "g_bound": result.g_bound,
            "std_err": result.std_err,
            "argmax_avail": result.argmax_avail,
            "argmax_hold": result.argmax_hold,
        }
        return ",".join(values), point
    if isinstance(task, _GbarTask):
        rng = np.random.default_rng(
            np.random.SeedSequence([task.seed, task.n_hold, task.avail])
        )
        state = SystemState(task.avail, (0,) * task.params.n_delay_classes)
        est = estimate_segment_revenue(
            task.n_hold, state, task.params, task.n_runs, rng
        )
        p = task.params
        line = ",".join([
            task.config_id, repr(p.reward_complete), repr(p.drop_penalty),
            str(task.avail), str(task.n_hold), repr(est.mean),
            repr(est.std_err), str(est.n_runs), str(task.seed),
        ])
        point = {
            "kind": "gbar",
            "R_c": p.reward_complete,
            "C_q": p.drop_penalty,
            "avail": task.avail,
            "n_hold": task.n_hold,
            "mean_g": est.mean,
            "std_err": est.std_err,
        }
        return line, point
    raise TypeError(f"unknown task {task!r}")


def _build_tasks(config: ExperimentConfig) -> list:
    tasks: list = []
    if config.kind == "gbar":
        pairs = config.reward_pairs or [
            (config.system.reward_complete, config.system.drop_penalty)
        ]
        avail = (
            config.gbar_avail
            if config.gbar_avail is not None
            else config.system.n_channels // 2
        )
        for rc, cq in pairs:
            params = dataclasses.replace(
                config.system, reward_complete=rc, drop_penalty=cq
            )
            for n_hold in config.holds or []:
                tasks.append(
                    _GbarTask(
                        config_id=config.name,
                        params=params,
                        avail=avail,
                        n_hold=n_hold,
                        n_runs=config.gbar_runs,
                        seed=config.seeds[0],
                    )
                )
        return tasks

    j_values = config.j_values or [config.system.n_channels]
    for j in j_values:
        params = _params_for_j(config, j)
        for spec in config.policies:
            if spec.kind == "threshold" and spec.threshold is None:
                points = [(t,) for t in config.thresholds or []]
            else:
                points = [(spec.threshold,)]
            slots, warmup = config.slots, config.warmup
            if spec.kind == "rollout":
                slots = config.rollout_slots or config.slots
                warmup = (
                    config.rollout_warmup
                    if config.rollout_warmup is not None
                    else config.warmup
                )
            for (threshold,) in points:
                for seed in config.seeds:
                    tasks.append(
                        _SimTask(
                            config_id=config.name,
                            params=params,
                            spec=spec,
                            threshold=threshold,
                            seed=seed,
                            slots=slots,
                            warmup=warmup,
                            batches=config.batches,
                            rollout_runs=config.rollout_runs,
                            rollout_horizon=config.rollout_horizon,
                            rollout_doublings=config.rollout_doublings,
                            rollout_guard=config.rollout_guard,
                        )
                    )
    if config.boundary:
        for j in j_values:
            tasks.append(
                _BoundaryTask(
                    config_id=config.name,
                    params=_params_for_j(config, j),
                    n_runs=config.boundary_runs,
                    seed=config.seeds[0],
                )
            )
    return tasks


def _summarize(config: ExperimentConfig, points: list[dict]) -> dict:
    summary: dict = {"config_id": config.name, "kind": config.kind}
    if config.kind == "gbar":
        summary["points"] = points
        best: dict = {}
        for pt in points:
            key = f"Rc={pt['R_c']:g},Cq={pt['C_q']:g}"
            if key not in best or pt["mean_g"] > best[key]["mean_g"]:
                best[key] = {"n_hold": pt["n_hold"], "mean_g": pt["mean_g"]}
        summary["argmax"] = best
        return summary

    groups: dict[tuple, dict] = {}
    for pt in points:
        if pt["kind"] != "sim":
            continue
        key = (pt["J"], pt["policy"], pt["threshold"])
        g = groups.setdefault(
            key, {"J": key[0], "policy": key[1], "threshold": key[2],
                  "avg_revenue": 0.0, "ci95": 0.0, "n_seeds": 0}
        )
        g["n_seeds"] += 1
        g["avg_revenue"] += pt["avg_revenue"]
        g["ci95"] += pt["ci95"]
    for g in groups.values():
        g["avg_revenue"] /= g["n_seeds"]
        g["ci95"] /= g["n_seeds"]
    ordered = [
        groups[k]
        for k in sorted(groups, key=lambda k: (k[0], k[1], k[2] if k[2] is not None else -1))
    ]
    summary["points"] = ordered

    best: dict[str, dict] = {}
    for g in ordered:
        key = f"J={g['J']},policy={g['policy']}"
        if key not in best or g["avg_revenue"] > best[key]["avg_revenue"]:
            best[key] = {
                "threshold": g["threshold"],
                "avg_revenue": g["avg_revenue"],
                "ci95": g["ci95"],
            }
    summary["best"] = best
    summary["boundary"] = {
        str(pt["J"]): {
            "g_bound": pt["g_bound"],
            "std_err": pt["std_err"],
            "argmax_avail": pt["argmax_avail"],
            "argmax_hold": pt["argmax_hold"],
        }
        for pt in points
        if pt["kind"] == "boundary"
    }
    return summary


def run_experiment(
    config: ExperimentConfig, out_dir: str, jobs: int = 1
) -> dict[str, str]:
    """Execute every task of the config and write CSV plus JSON summary.

    Tasks run in a deterministic order; with ``jobs > 1`` they execute in a
    process pool but results are still written in task order, so the output
    bytes do not depend on the worker count.
    """
    tasks = _build_tasks(config)
    os.makedirs(out_dir, exist_ok=True)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]

    csv_name = config.out_csv or f"{config.name}.csv"
    summary_name = config.out_summary or f"{config.name}_summary.json"
    csv_path = os.path.join(out_dir, csv_name)
    summary_path = os.path.join(out_dir, summary_name)

    header = (
        ",".join(GBAR_CSV_COLUMNS) if config.kind == "gbar" else csv_header()
    )
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for line, _ in results:
            fh.write(line + "\n")

    summary = _summarize(config, [pt for _, pt in results])
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return {"csv": csv_path, "summary": summary_path}
