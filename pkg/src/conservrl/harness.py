# Multi-seed experiment runner: config loading, per-cell execution, CSV/JSON
# export, seed-averaged aggregates and the environment assumption checker.
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .envs import build_env, warm_start_dataset
from .mdp import ConfigurationError, TabularMdp, exact_optimal, max_expected_hitting_time, policy_gap
from .metrics import CSV_COLUMNS, MetricsLog
from .shield import AGENT_KINDS, AgentConfig, run_agent

log = logging.getLogger(__name__)

ENV_OUTPUT_DIR = "CONSERVRL_OUTPUT_DIR"
ENV_WORKERS = "CONSERVRL_WORKERS"
MAX_CURVE_POINTS = 2000


class AssumptionError(RuntimeError):
    """The environment fails the ergodicity check and ``force`` was not given."""


@dataclass(frozen=True)
class AgentSpec:
    kind: str
    config: AgentConfig = field(default_factory=AgentConfig)
    name: str | None = None

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ConfigurationError(f"unknown agent kind {self.kind!r}; expected one of {list(AGENT_KINDS)}")

    @property
    def label(self) -> str:
        return self.name or self.kind

    @classmethod
    def from_dict(cls, d: dict) -> "AgentSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        name = d.pop("name", None)
        cfg = d.pop("config", {})
        if d:
            raise ConfigurationError(f"unknown agent fields: {sorted(d)}")
        known = {f.name for f in fields(AgentConfig)}
        extra = set(cfg) - known
        if extra:
            raise ConfigurationError(f"unknown agent config fields: {sorted(extra)}")
        try:
            config = AgentConfig(**cfg)
        except ValueError as e:
            raise ConfigurationError(str(e)) from e
        return cls(kind=kind, config=config, name=name)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "config": asdict(self.config)}
        if self.name:
            d["name"] = self.name
        return d


@dataclass(frozen=True)
class ExperimentConfig:
    env_spec: dict
    agents: tuple[AgentSpec, ...]
    total_episodes: int
    seeds: tuple[int, ...]
    eta_values: tuple[float, ...] | None = None  # None: bracket the checker's eta_min
    warm_start_episodes: int = 1500
    output_dir: str = "runs"
    trace: bool = False

    def __post_init__(self):
        if self.total_episodes < 1:
            raise ConfigurationError("total_episodes must be >= 1")
        if not self.seeds:
            raise ConfigurationError("seeds must be nonempty")
        if not self.agents:
            raise ConfigurationError("agents must be nonempty")
        if self.eta_values is not None and (not self.eta_values or any(not e > 0 for e in self.eta_values)):
            raise ConfigurationError("every eta must be > 0")
        if self.warm_start_episodes < 0:
            raise ConfigurationError("warm_start_episodes must be >= 0")
        labels = [a.label for a in self.agents]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"agent labels must be distinct, got {labels}; set 'name' to disambiguate")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown experiment fields: {sorted(extra)}")
        missing = {"env_spec", "agents", "total_episodes", "seeds"} - set(d)
        if missing:
            raise ConfigurationError(f"missing experiment fields: {sorted(missing)}")
        d["agents"] = tuple(AgentSpec.from_dict(a) for a in d["agents"])
        d["seeds"] = tuple(int(s) for s in d["seeds"])
        if d.get("eta_values") is not None:
            d["eta_values"] = tuple(float(e) for e in d["eta_values"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigurationError(f"cannot read config {path}: {e}") from e
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: invalid JSON: {e}") from e

    def to_dict(self) -> dict:
        d = asdict(self)
        d["agents"] = [a.to_dict() for a in self.agents]
        d["seeds"] = list(self.seeds)
        d["eta_values"] = None if self.eta_values is None else list(self.eta_values)
        return d

    def with_env_overrides(self, environ=None) -> "ExperimentConfig":
        environ = os.environ if environ is None else environ
        if environ.get(ENV_OUTPUT_DIR):
            return replace(self, output_dir=environ[ENV_OUTPUT_DIR])
        return self


def resolve_workers(requested: int | None, environ=None) -> int:
    environ = os.environ if environ is None else environ
    if requested is None and environ.get(ENV_WORKERS):
        try:
            requested = int(environ[ENV_WORKERS])
        except ValueError as e:
            raise ConfigurationError(f"{ENV_WORKERS} must be an integer") from e
    n = 1 if requested is None else requested
    if n < 1:
        raise ConfigurationError("worker count must be >= 1")
    return n


# assumption checks


def check_env(mdp: TabularMdp, eta: float | None = None, n_random_policies: int = 20, seed: int = 0) -> dict:
    """Ergodicity and gap report for ``mdp``.

    The hitting-time bound is exact.  The gap condition can only be sampled:
    it is reported for the optimal policy and for ``n_random_policies``
    uniformly drawn deterministic policies.
    """
    hits = [max_expected_hitting_time(mdp, s) for s in range(mdp.S)]
    upsilon = max(hits)
    bounded = math.isfinite(upsilon)
    _, _, pi_star = exact_optimal(mdp)
    eta_min_opt = 2 * policy_gap(mdp, pi_star)
    rng = np.random.default_rng(seed)
    sampled = [
        2 * policy_gap(mdp, rng.integers(0, mdp.A, size=(mdp.H, mdp.S))) for _ in range(n_random_policies)
    ]
    report = {
        "S": mdp.S,
        "A": mdp.A,
        "H": mdp.H,
        "upsilon": upsilon if bounded else "unbounded",
        "hitting_times": [h if math.isfinite(h) else "unbounded" for h in hits],
        "ergodic_pass": bool(bounded and upsilon <= mdp.H / 2),
        "eta_min_optimal": eta_min_opt,
        "eta_min_random_max": max(sampled) if sampled else 0.0,
        "eta_min_random_mean": float(np.mean(sampled)) if sampled else 0.0,
        "n_random_policies": n_random_policies,
    }
    if eta is not None:
        report["eta"] = eta
        report["gap_pass_optimal"] = bool(eta_min_opt <= eta)
        report["gap_pass_random_fraction"] = float(np.mean([e <= eta for e in sampled])) if sampled else 1.0
    return report


def default_eta_values(eta_min: float) -> tuple[float, ...]:
    if eta_min <= 0:
        return (0.1,)
    return tuple(round(f * eta_min, 6) for f in (0.75, 1.1, 1.5))


# export


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def csv_text(mlog: MetricsLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in mlog.rows():
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def downsample_idx(n: int, max_points: int = MAX_CURVE_POINTS) -> np.ndarray:
    if n <= max_points:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_points).round().astype(int))


def cell_summary(mlog: MetricsLog, total_episodes: int) -> dict:
    cr = mlog.cum_regret
    n = len(mlog)
    half = n // 2
    return {
        "agent": mlog.agent,
        "seed": mlog.seed,
        "eta": mlog.eta,
        "episodes": n,
        "planned_episodes": total_episodes,
        "optimal_value": mlog.optimal_value,
        "total_violations": mlog.total_violations,
        "cum_regret": float(cr[-1]) if n else 0.0,
        "regret_first_half": float(cr[half - 1]) if half else 0.0,
        "regret_second_half": float(cr[-1] - (cr[half - 1] if half else 0.0)) if n else 0.0,
        "max_zeta": max((r.max_zeta for r in mlog.records), default=0.0),
        "meta_episodes": len(mlog.meta_lengths),
        "meta_histogram": {str(k): v for k, v in mlog.meta_histogram().items()},
    }


def export_summary(mlog: MetricsLog, csv_path, summary_path=None, total_episodes: int | None = None) -> dict:
    """Write the per-episode CSV and, optionally, the summary JSON."""
    summary = cell_summary(mlog, total_episodes if total_episodes is not None else len(mlog))
    try:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        Path(csv_path).write_text(csv_text(mlog))
        if summary_path is not None:
            Path(summary_path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise OSError(f"writing {csv_path}: {e}") from e
    return summary


# cells


@dataclass(frozen=True)
class Cell:
    env_spec: dict
    agent: AgentSpec
    eta: float
    seed: int
    total_episodes: int
    warm_start_episodes: int
    output_dir: str
    trace: bool = False
    force: bool = False

    @property
    def stem(self) -> str:
        return f"{self.agent.label}__eta{self.eta:g}__seed{self.seed}"


def _error(kind: str, message: str, cell: Cell) -> dict:
    return {
        "status": "error",
        "cell": cell.stem,
        "agent": cell.agent.label,
        "eta": cell.eta,
        "seed": cell.seed,
        "error": {"type": kind, "message": message},
    }


def run_cell(cell: Cell) -> dict:
    """Run one (agent, eta, seed) cell and write its outputs.  Never raises."""
    out = Path(cell.output_dir)
    try:
        mdp = build_env(cell.env_spec)
        if not cell.force:
            hit = max(max_expected_hitting_time(mdp, s) for s in range(mdp.S))
            if not hit <= mdp.H / 2:
                raise AssumptionError(
                    f"worst-case hitting time {hit} exceeds H/2 = {mdp.H / 2}; pass force to run anyway"
                )
        rng = np.random.default_rng(cell.seed)
        warm = warm_start_dataset(mdp, cell.warm_start_episodes, rng)
        config = replace(cell.agent.config, eta=cell.eta)
        mlog = run_agent(cell.agent.kind, mdp, config, cell.total_episodes, warm, rng, seed=cell.seed, trace=cell.trace)
        mlog.agent = cell.agent.label
        for r in mlog.records:
            r.agent = cell.agent.label
        summary = export_summary(mlog, out / f"{cell.stem}.csv", out / f"{cell.stem}.json", cell.total_episodes)
        if cell.trace:
            with open(out / f"{cell.stem}.trace.jsonl", "w") as fh:
                for row in mlog.trace:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
        idx = downsample_idx(len(mlog))
        return {
            "status": "ok",
            "cell": cell.stem,
            "agent": cell.agent.label,
            "eta": cell.eta,
            "seed": cell.seed,
            "summary": summary,
            "cum_regret": mlog.cum_regret.tolist(),
            "cum_violations": np.cumsum(mlog.violated).astype(int).tolist(),
            "curve_index": idx.tolist(),
        }
    except Exception as e:  # reported per cell; siblings keep running
        log.debug("cell %s failed:\n%s", cell.stem, traceback.format_exc())
        return _error(type(e).__name__, str(e), cell)


def aggregate(results: list[dict]) -> list[dict]:
    """Seed-averaged curves per (agent, eta) over the cells that succeeded."""
    groups: dict[tuple, list[dict]] = {}
    for r in results:
        if r["status"] == "ok":
            groups.setdefault((r["agent"], r["eta"]), []).append(r)
    out = []
    for (agent, eta), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        rs = sorted(rs, key=lambda r: r["seed"])
        n = min(len(r["cum_regret"]) for r in rs)
        reg = np.mean([r["cum_regret"][:n] for r in rs], axis=0) if n else np.zeros(0)
        vio = np.mean([r["cum_violations"][:n] for r in rs], axis=0) if n else np.zeros(0)
        idx = downsample_idx(n)
        s = [r["summary"] for r in rs]
        out.append(
            {
                "agent": agent,
                "eta": eta,
                "seeds": [r["seed"] for r in rs],
                "episodes": n,
                "mean_total_violations": float(np.mean([x["total_violations"] for x in s])),
                "mean_cum_regret": float(np.mean([x["cum_regret"] for x in s])),
                "mean_regret_first_half": float(np.mean([x["regret_first_half"] for x in s])),
                "mean_regret_second_half": float(np.mean([x["regret_second_half"] for x in s])),
                "curve": {
                    "episode": (idx + 1).tolist(),
                    "cum_regret": reg[idx].tolist(),
                    "cum_violations": vio[idx].tolist(),
                },
            }
        )
    return out


def plan_cells(config: ExperimentConfig, force: bool = False) -> list[Cell]:
    etas = config.eta_values
    if etas is None:
        etas = default_eta_values(check_env(build_env(config.env_spec), n_random_policies=0)["eta_min_optimal"])
    return [
        Cell(
            config.env_spec,
            agent,
            float(eta),
            seed,
            config.total_episodes,
            config.warm_start_episodes,
            config.output_dir,
            config.trace,
            force,
        )
        for agent in config.agents
        for eta in etas
        for seed in config.seeds
    ]


def run_experiment(config: ExperimentConfig, workers: int = 1, force: bool = False) -> dict:
    """Run every (agent, eta, seed) cell and write outputs under ``config.output_dir``.

    Returns the manifest also written to ``manifest.json``: per-cell status
    and summary, plus seed-averaged aggregates (also in ``aggregate.json``).
    """
    cells = plan_cells(config, force)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]
    agg = aggregate(results)
    (out / "aggregate.json").write_text(json.dumps(agg, indent=1, sort_keys=True) + "\n")
    manifest = {
        "config": config.to_dict(),
        "cells": [
            {k: v for k, v in r.items() if k not in ("cum_regret", "cum_violations", "curve_index")} for r in results
        ],
        "n_ok": sum(r["status"] == "ok" for r in results),
        "n_failed": sum(r["status"] != "ok" for r in results),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    manifest["aggregate"] = agg
    return manifest
