"""Monte Carlo sweeps of topology error against sample count.

Every trial draws a fresh feeder (unless a grid file is given), fresh
injection statistics and, for missing-data runs, a fresh hidden set, then
scores the learner on growing prefixes of one sample stream. Trial ``k``
draws from ``SeedSequence(seed, spawn_key=(k,))``, so results do not depend
on worker count or completion order.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import DomainError, InfeasibleError, ReconstructionError, SchemaError
from .grid import GridGraph, generate_random_feeder
from .hidden import learn_with_missing, place_hidden_nodes, satisfies_assumption2
from .injection import covariance_error, estimate_injection_stats
from .io import read_grid
from .learn import learn_topology, topology_error
from .lcpf import random_injection_stats, simulate

Range = tuple[float, float]


class ExperimentConfig(BaseModel):
    """Sweep configuration; also the schema of the ``sweep --config`` file."""

    model_config = ConfigDict(extra="forbid")

    num_nodes: int = Field(30, ge=2)
    extra_edges: int = Field(30, ge=0)
    impedance_range: Range = (0.01, 0.1)
    grid_file: Optional[str] = None

    var_range: Range = (1e-4, 1e-3)
    corr_range: Range = (0.1, 0.9)
    q_ratio_range: Range = (0.2, 0.6)
    mean_range: Range = (0.01, 0.05)

    sample_counts: list[int] = [10, 20, 50, 100, 200, 500]
    trials: int = Field(100, ge=1)
    hidden_count: int = Field(0, ge=0)
    hidden_nodes: Optional[list[int]] = None
    complete_graph: bool = False
    tolerance: float = Field(0.25, gt=0)
    mismatch_policy: Literal["fail", "best"] = "best"
    observable_candidates: Literal["complete", "grid"] = "grid"
    estimate_covariance: bool = False
    record_runtime: bool = False

    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    output_dir: Optional[str] = None

    @field_validator("sample_counts")
    @classmethod
    def _increasing(cls, v):
        if not v:
            raise ValueError("at least one sample count is required")
        if v[0] < 2:
            raise ValueError("sample counts must be at least 2")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sample counts must be strictly increasing")
        return v

    @field_validator("impedance_range", "var_range")
    @classmethod
    def _positive(cls, v):
        if not 0 < v[0] <= v[1]:
            raise ValueError("range must be positive and ordered")
        return v

    @field_validator("corr_range", "q_ratio_range", "mean_range")
    @classmethod
    def _ordered(cls, v):
        if not 0 <= v[0] <= v[1]:
            raise ValueError("range must be nonnegative and ordered")
        return v

    @model_validator(mode="after")
    def _hidden(self):
        if self.hidden_nodes is not None:
            if self.grid_file is None:
                raise ValueError("hidden_nodes needs a fixed grid_file; use hidden_count for random feeders")
            if len(set(self.hidden_nodes)) != len(self.hidden_nodes):
                raise ValueError("hidden_nodes has duplicates")
        if self.corr_range[1] > 1:
            raise ValueError("corr_range must lie in [0, 1]")
        return self

    @property
    def missing_data(self) -> bool:
        return bool(self.hidden_nodes) or self.hidden_count > 0

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise SchemaError("path", f"cannot read {path}: {exc.strerror}") from None
        try:
            return cls.model_validate_json(text)
        except ValidationError as exc:
            first = exc.errors()[0]
            field = ".".join(str(p) for p in first["loc"]) or "<root>"
            raise SchemaError(field, first["msg"]) from None


@dataclass(frozen=True)
class TrialRow:
    m: int
    trial: int
    topology_error: float
    failed: bool
    covariance_error: float | None = None
    runtime_ms: float | None = None


@dataclass(frozen=True)
class SweepResult:
    config: ExperimentConfig
    rows: tuple[TrialRow, ...]

    def errors_at(self, m: int) -> np.ndarray:
        return np.array([r.topology_error for r in self.rows if r.m == m])

    def summary(self) -> list[dict]:
        out = []
        for m in self.config.sample_counts:
            rows = [r for r in self.rows if r.m == m]
            err = np.array([r.topology_error for r in rows])
            entry = {"m": m, "mean_error": float(err.mean()), "stderr": _stderr(err), "n_trials": len(rows)}
            entry["n_failed"] = sum(r.failed for r in rows)
            if self.config.estimate_covariance:
                cov = np.array([r.covariance_error for r in rows])
                entry["mean_covariance_error"] = float(cov.mean())
                entry["covariance_stderr"] = _stderr(cov)
            out.append(entry)
        return out

    def write(self, directory) -> tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        cols = ["m", "trial", "topology_error", "failed"]
        if self.config.estimate_covariance:
            cols.append("covariance_error")
        if self.config.record_runtime:
            cols.append("runtime_ms")
        results = d / "results.csv"
        with open(results, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_cell(getattr(r, c)) for c in cols])
        summary = d / "summary.csv"
        entries = self.summary()
        with open(summary, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(entries[0]))
            for e in entries:
                w.writerow([_cell(v) for v in e.values()])
        return results, summary


def _stderr(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0


def _cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def _run_trial(config: ExperimentConfig, grid_file_grid: GridGraph | None, trial: int) -> list[TrialRow]:
    rng = trial_rng(config.seed, trial)
    if grid_file_grid is not None:
        grid = grid_file_grid
        tree = grid.operational_tree()
    else:
        grid, tree = generate_random_feeder(config.num_nodes, config.extra_edges, config.impedance_range, rng)
    n = grid.num_nodes
    stats = random_injection_stats(
        n - 1, config.var_range, config.corr_range, config.q_ratio_range, config.mean_range, rng
    )
    if config.hidden_nodes is not None:
        hidden = frozenset(config.hidden_nodes)
    elif config.hidden_count:
        hidden = place_hidden_nodes(tree, config.hidden_count, rng)
    else:
        hidden = frozenset()
    # placement is by construction; a violation here is a bug, not bad input
    assert satisfies_assumption2(tree, hidden)
    samples = simulate(tree, stats, config.sample_counts[-1], rng, with_angles=config.estimate_covariance)

    rows = []
    for m in config.sample_counts:
        head = samples.head(m)
        t0 = time.perf_counter()
        failed = False
        try:
            if hidden:
                est = learn_with_missing(
                    head.drop(hidden),
                    grid,
                    hidden,
                    stats,
                    tolerance=config.tolerance,
                    mismatch_policy=config.mismatch_policy,
                    candidates=config.observable_candidates,
                )
            else:
                est = learn_topology(head, grid, complete_graph=config.complete_graph)
            err = topology_error(est, tree)
        except (ReconstructionError, InfeasibleError, DomainError):
            err, failed = 1.0, True
        ms = (time.perf_counter() - t0) * 1e3
        cov_err = covariance_error(estimate_injection_stats(tree, head), stats) if config.estimate_covariance else None
        rows.append(
            TrialRow(
                m=m,
                trial=trial,
                topology_error=float(err),
                failed=failed,
                covariance_error=cov_err,
                runtime_ms=ms if config.record_runtime else None,
            )
        )
    return rows


def _load_grid(config: ExperimentConfig) -> GridGraph | None:
    if config.grid_file is None:
        return None
    grid = read_grid(config.grid_file)
    if grid.operational is None:
        raise SchemaError("grid_file", "the grid file must flag its operational edges for scoring")
    if config.hidden_nodes is not None:
        bad = [h for h in config.hidden_nodes if not 0 < h < grid.num_nodes]
        if bad:
            raise SchemaError("hidden_nodes", f"nodes {bad} are not non-root nodes of the grid")
        if not satisfies_assumption2(grid.operational_tree(), config.hidden_nodes):
            raise SchemaError("hidden_nodes", "hidden nodes must be non-adjacent to the root and more than two hops apart")
    return grid


def run_sweep(config: ExperimentConfig) -> SweepResult:
    grid = _load_grid(config)
    trials = range(config.trials)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(_run_trial, [config] * len(trials), [grid] * len(trials), trials))
    else:
        chunks = [_run_trial(config, grid, k) for k in trials]
    rows = sorted((r for chunk in chunks for r in chunk), key=lambda r: (r.m, r.trial))
    return SweepResult(config, tuple(rows))
