"""Subcommand bodies: each takes a loaded config and writes its outputs to a directory.

Every JSON-lines record carries ``config_hash``; ``wall_time`` (seconds) is
the only field that may differ between two runs of the same config.
"""
from __future__ import annotations

import csv
import functools
import json
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rgstat import __version__
from rgstat._hashing import derive_seed
from rgstat.basis import BasisRegistry
from rgstat.config import LoadedConfig
from rgstat.errors import ConfigError, IncompatibleMeasuresError, InvariantViolation
from rgstat.generators import Model, build_oracle, is_tree_model, model_summary
from rgstat.inference import (
    MarkovOrderRunner,
    ZeroFrequencyRunner,
    consistency_harness,
    entropy_profile,
    walk_down,
)
from rgstat.sampling import distance_curve, model_measure, random_walk, sample_region

# stream index reserved for the reference Monte Carlo draws, disjoint from run indices
MODEL_STREAM = 1 << 40


@dataclass
class Context:
    loaded: LoadedConfig
    out: Path
    workers: int | None = None

    def __post_init__(self) -> None:
        self.config = self.loaded.config
        self.config_hash = self.loaded.config_hash()
        self.out.mkdir(parents=True, exist_ok=True)

    def run_seed(self, run: int) -> int:
        return derive_seed(self.config.sampler.seed, run)

    def require_model(self) -> Model:
        if self.loaded.model is None:
            raise ConfigError("this command needs a [model] section", field="model")
        return self.loaded.model

    def write_jsonl(self, name: str, records) -> None:
        with open(self.out / name, "w") as fh:
            for rec in records:
                rec = {"config_hash": self.config_hash, **rec}
                fh.write(json.dumps(rec, sort_keys=False) + "\n")

    def write_csv(self, name: str, header, rows) -> None:
        with open(self.out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def write_summary(self, payload: dict) -> None:
        doc = {"config_hash": self.config_hash, "versions": versions(), **payload}
        (self.out / "summary.json").write_text(json.dumps(doc, indent=2) + "\n")


def versions() -> dict:
    return {"rgstat": __version__, "python": platform.python_version(), "numpy": np.__version__}


def _kraft(registry: BasisRegistry) -> dict:
    total = registry.kraft_sum()
    if total > 1:
        raise InvariantViolation(f"registered class weights sum to {total} > 1")
    return {"classes": len(registry), "kraft_sum": str(total), "kraft_ok": True}


def cmd_generate(ctx: Context) -> dict:
    model = ctx.require_model()
    s = ctx.config.sampler
    schedule = s.schedule.build()
    n = s.n_grid[0]
    records = []
    for run in range(s.runs):
        start = time.perf_counter()
        seed = ctx.run_seed(run)
        oracle = build_oracle(model, derive_seed(seed, 0))
        trace = random_walk(oracle, oracle.root, n, derive_seed(seed, 1))
        region = sample_region(oracle, trace, schedule, s.region_budget, s.max_radius)
        name = f"region_r{run}.patch"
        (ctx.out / name).write_text(region.patch.to_text())
        records.append({
            "command": "generate", "run": run, "seed": seed, "n": n,
            "radius": region.radius, "vertices": len(region.patch),
            "edges": len(region.patch.edges), "boundary": len(region.patch.boundary),
            "file": name, "wall_time": time.perf_counter() - start,
        })
    ctx.write_jsonl("generate.jsonl", records)
    summary = {"command": "generate", "model": model_summary(model), "schedule": schedule.tag}
    ctx.write_summary(summary)
    return summary


def cmd_estimate(ctx: Context) -> dict:
    model = ctx.require_model()
    reference = ctx.loaded.reference or model
    s = ctx.config.sampler
    schedule = s.schedule.build()
    cap = s.max_radius
    probe, ref_probe = build_oracle(model, 0), build_oracle(reference, 0)
    if (probe.degree_bound, probe.alphabet_size) != (ref_probe.degree_bound, ref_probe.alphabet_size):
        raise IncompatibleMeasuresError(
            f"sampled model has (M={probe.degree_bound}, |X|={probe.alphabet_size}) but the "
            f"reference has (M={ref_probe.degree_bound}, |X|={ref_probe.alphabet_size})"
        )
    registry = BasisRegistry()
    reps = ctx.config.estimate.model_replicates
    ref = model_measure(functools.partial(build_oracle, reference), cap, reps,
                        derive_seed(s.seed, MODEL_STREAM), registry, s.canon_budget)
    (ctx.out / "model_measure.txt").write_text(ref.dump())
    records, rows, decreasing = [], [], 0
    for run in range(s.runs):
        start = time.perf_counter()
        seed = ctx.run_seed(run)
        oracle = build_oracle(model, derive_seed(seed, 0))
        trace = random_walk(oracle, oracle.root, s.n_grid[-1], derive_seed(seed, 1))
        curve = distance_curve(oracle, trace, s.n_grid, ref, schedule, registry, cap, s.canon_budget)
        elapsed = (time.perf_counter() - start) / len(curve)
        for n, (measure, dist) in zip(s.n_grid, curve):
            records.append({
                "command": "estimate", "run": run, "seed": seed, "n": n, "distance": dist,
                "radius_cap": measure.radius_cap, "schedule_radius": measure.schedule_radius,
                "budget_limited": measure.budget_limited, "classes": len(measure.counts),
                "wall_time": elapsed,
            })
            rows.append((run, seed, n, repr(dist)))
        dists = [d for _, d in curve]
        decreasing += all(b <= a for a, b in zip(dists, dists[1:]))
        (ctx.out / f"empirical_r{run}.txt").write_text(curve[-1][0].dump())
    ctx.write_jsonl("estimate.jsonl", records)
    ctx.write_csv("distances.csv", ("run", "seed", "n", "distance"), rows)
    (ctx.out / "registry.txt").write_text(registry.dump())
    summary = {
        "command": "estimate", "model": model_summary(model), "reference": model_summary(reference),
        "radius_cap": cap, "model_replicates": reps, "n_grid": list(s.n_grid),
        "non_increasing_runs": decreasing, "runs": s.runs, **_kraft(registry),
    }
    ctx.write_summary(summary)
    return summary


def _runner(ctx: Context):
    t = ctx.config.test
    if t is None:
        raise ConfigError("this command needs a [test] section", field="test")
    s = ctx.config.sampler
    if t.kind == "zero-frequency":
        return ZeroFrequencyRunner(ctx.loaded.forbidden_patches, tuple(t.forbidden_builtin),
                                   s.schedule.build(), s.region_budget, s.canon_budget,
                                   s.max_radius)
    return MarkovOrderRunner(t.order, t.alpha, t.j_max, t.drop, t.null)


def _check_tree(model: Model, runner, field: str) -> None:
    if isinstance(runner, MarkovOrderRunner) and not is_tree_model(model):
        raise ConfigError("the Markov-order test needs a tree model", field=field)


def cmd_test(ctx: Context) -> dict:
    model = ctx.require_model()
    runner = _runner(ctx)
    _check_tree(model, runner, "model.family")
    s = ctx.config.sampler
    records, rows = [], []
    rejections = {n: 0 for n in s.n_grid}
    for run in range(s.runs):
        seed = ctx.run_seed(run)
        for n in s.n_grid:
            start = time.perf_counter()
            v = runner(model, n, seed)
            rejections[n] += v.rejected
            records.append({"command": "test", "run": run, **v.to_record(),
                            "wall_time": time.perf_counter() - start})
            rows.append((run, seed, n, v.decision, repr(v.statistic)))
    ctx.write_jsonl("verdicts.jsonl", records)
    ctx.write_csv("verdicts.csv", ("run", "seed", "n", "decision", "statistic"), rows)
    summary = {
        "command": "test", "test": runner.name, "model": model_summary(model), "runs": s.runs,
        "rejection_rate": {str(n): k / s.runs for n, k in rejections.items()},
    }
    ctx.write_summary(summary)
    return summary


def cmd_harness(ctx: Context) -> dict:
    h = ctx.config.harness
    if h is None:
        raise ConfigError("this command needs a [harness] section", field="harness")
    runner = _runner(ctx)
    for hyp in ("h0", "h1"):
        for i, m in enumerate(ctx.loaded.harness_models[hyp].values()):
            _check_tree(m, runner, f"harness.{hyp}[{i}].family")
    s = ctx.config.sampler
    grid = h.n_grid or s.n_grid
    runs = h.runs or s.runs
    report = consistency_harness(runner, ctx.loaded.harness_models["h0"],
                                 ctx.loaded.harness_models["h1"], grid, runs, s.seed, ctx.workers)
    records = [
        {"command": "harness", "hypothesis": hyp, "model": name, "run": run, **v.to_record(),
         "wall_time": t}
        for (hyp, name, _, run, v), t in zip(report.verdicts, report.wall_times)
    ]
    ctx.write_jsonl("harness.jsonl", records)
    cells = [c.to_record() for c in report.cells]
    header = ("hypothesis", "model", "n", "runs", "rejections", "error_kind", "error_rate", "sigma")
    ctx.write_csv("error_rates.csv", header,
                  [tuple(repr(c[k]) if isinstance(c[k], float) else c[k] for k in header) for c in cells])
    summary = {"command": "harness", "alpha": ctx.config.test.alpha, "runs": runs,
               "n_grid": list(grid), **report.summary()}
    ctx.write_summary(summary)
    return summary


def cmd_entropy(ctx: Context) -> dict:
    model = ctx.require_model()
    if not is_tree_model(model):
        raise ConfigError("entropy profiles need a tree model", field="model.family")
    e = ctx.config.entropy
    s = ctx.config.sampler
    records, rows = [], []
    for run in range(s.runs):
        seed = ctx.run_seed(run)
        for n in s.n_grid:
            start = time.perf_counter()
            oracle = build_oracle(model, derive_seed(seed, 0))
            series = walk_down(oracle, n + e.drop, derive_seed(seed, 1))
            prof = entropy_profile(series, e.max_order, drop=e.drop)
            records.append({"command": "entropy", "run": run, "seed": seed, **prof.to_record(),
                            "wall_time": time.perf_counter() - start})
            rows += [(run, seed, n, k, repr(h), prof.low_confidence)
                     for k, h in enumerate(prof.estimates)]
    ctx.write_jsonl("entropy.jsonl", records)
    ctx.write_csv("entropy.csv", ("run", "seed", "n", "k", "entropy_bits", "low_confidence"), rows)
    summary = {"command": "entropy", "model": model_summary(model), "max_order": e.max_order}
    ctx.write_summary(summary)
    return summary


COMMANDS = {
    "generate": cmd_generate,
    "estimate": cmd_estimate,
    "test": cmd_test,
    "harness": cmd_harness,
    "entropy": cmd_entropy,
}
