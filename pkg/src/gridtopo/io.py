"""File formats: grid and stats JSON, sample CSV, learned-topology JSON.

Readers validate against pydantic schemas and raise :class:`SchemaError`
with a dotted path to the offending field (``edges.3.r``). Writers emit
floats with ``repr`` so equal values always give equal bytes.
"""
from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import DomainError, SchemaError
from .grid import GridGraph, Impedance, RadialTree, edge_key
from .learn import LearnedTopology
from .lcpf import InjectionStats, SampleSet


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EdgeRecord(_Model):
    u: int = Field(ge=0)
    v: int = Field(ge=0)
    r: float = Field(gt=0)
    x: float = Field(gt=0)
    operational: bool = False


class GridFile(_Model):
    num_nodes: int = Field(ge=2)
    root: int = 0
    edges: list[EdgeRecord]


class NodeStats(_Model):
    node: int = Field(ge=1)
    mu_p: float = 0.0
    mu_q: float = 0.0
    var_p: float = Field(ge=0)
    var_q: float = Field(ge=0)
    cov_pq: float


class StatsFile(_Model):
    model_config = ConfigDict(extra="ignore")
    nodes: list[NodeStats]


class TopologyEdge(_Model):
    u: int = Field(ge=0)
    v: int = Field(ge=0)
    phi: Optional[float] = None


class TopologyFile(_Model):
    model_config = ConfigDict(extra="ignore")
    num_nodes: int = Field(ge=2)
    edges: list[TopologyEdge]


def _loc(err: ValidationError) -> tuple[str, str]:
    first = err.errors()[0]
    field = ".".join(str(p) for p in first["loc"]) or "<root>"
    return field, first["msg"]


def _load_json(path, model):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError("path", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("<json>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        raise SchemaError(*_loc(exc)) from None


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


# grid -----------------------------------------------------------------------

def grid_from_dict(data: dict) -> GridGraph:
    try:
        doc = GridFile.model_validate(data)
    except ValidationError as exc:
        raise SchemaError(*_loc(exc)) from None
    return _grid_from_doc(doc)


def _grid_from_doc(doc: GridFile) -> GridGraph:
    if doc.root != 0:
        raise SchemaError("root", "the substation must be node 0")
    for i, e in enumerate(doc.edges):
        for end in ("u", "v"):
            if getattr(e, end) >= doc.num_nodes:
                raise SchemaError(f"edges.{i}.{end}", f"node {getattr(e, end)} is outside 0..{doc.num_nodes - 1}")
    edges = tuple((e.u, e.v, Impedance(e.r, e.x)) for e in doc.edges)
    flags = [edge_key(e.u, e.v) for e in doc.edges if e.operational]
    try:
        grid = GridGraph(doc.num_nodes, edges, operational=frozenset(flags) if flags else None)
    except DomainError as exc:
        raise SchemaError("edges", str(exc)) from None
    if grid.operational is not None:
        try:
            grid.operational_tree()
        except DomainError as exc:
            raise SchemaError("edges.operational", f"flagged edges do not form a radial tree: {exc}") from None
    return grid


def read_grid(path) -> GridGraph:
    return _grid_from_doc(_load_json(path, GridFile))


def grid_to_dict(grid: GridGraph) -> dict:
    op = grid.operational or frozenset()
    return {
        "num_nodes": grid.num_nodes,
        "root": grid.root,
        "edges": [
            {"u": u, "v": v, "r": z.r, "x": z.x, "operational": (u, v) in op}
            for (u, v), z in sorted(grid.impedances.items())
        ],
    }


def write_grid(path, grid: GridGraph):
    _dump_json(path, grid_to_dict(grid))


# stats ----------------------------------------------------------------------

def stats_from_dict(data: dict, num_nodes: int | None = None, assumption1: bool = True) -> InjectionStats:
    try:
        doc = StatsFile.model_validate(data)
    except ValidationError as exc:
        raise SchemaError(*_loc(exc)) from None
    return _stats_from_doc(doc, num_nodes, assumption1)


def _stats_from_doc(doc: StatsFile, num_nodes, assumption1) -> InjectionStats:
    ids = [n.node for n in doc.nodes]
    n = len(ids) + 1 if num_nodes is None else num_nodes
    if sorted(ids) != list(range(1, n)):
        raise SchemaError("nodes", f"entries must cover nodes 1..{n - 1} exactly once")
    ordered = sorted(doc.nodes, key=lambda s: s.node)
    for i, s in enumerate(ordered):
        if assumption1 and not (s.var_p > 0 and s.var_q > 0 and s.cov_pq > 0):
            raise SchemaError(f"nodes.{i}.cov_pq", f"node {s.node}: var_p, var_q and cov_pq must be positive")
        if s.cov_pq**2 > s.var_p * s.var_q * (1 + 1e-12):
            raise SchemaError(f"nodes.{i}.cov_pq", f"node {s.node}: cov_pq^2 exceeds var_p * var_q")
    cols = {f: np.array([getattr(s, f) for s in ordered]) for f in ("mu_p", "mu_q", "var_p", "var_q", "cov_pq")}
    return InjectionStats(**cols, assumption1=assumption1)


def read_stats(path, num_nodes: int | None = None, assumption1: bool = True) -> InjectionStats:
    return _stats_from_doc(_load_json(path, StatsFile), num_nodes, assumption1)


def stats_to_dict(stats: InjectionStats) -> dict:
    return {
        "nodes": [
            {
                "node": i + 1,
                "mu_p": float(stats.mu_p[i]),
                "mu_q": float(stats.mu_q[i]),
                "var_p": float(stats.var_p[i]),
                "var_q": float(stats.var_q[i]),
                "cov_pq": float(stats.cov_pq[i]),
            }
            for i in range(stats.num_load_nodes)
        ]
    }


def write_stats(path, stats: InjectionStats, extra: dict | None = None):
    out = stats_to_dict(stats)
    if extra:
        out.update(extra)
    _dump_json(path, out)


# samples --------------------------------------------------------------------

_COLUMN = re.compile(r"^(eps|theta)_(\d+)$")


def read_samples(path) -> SampleSet:
    """Sample CSV with a mandatory header of ``eps_<node>`` and optional ``theta_<node>`` columns.

    Any subset of non-root nodes may appear; if angles are present they must
    cover the same nodes as the magnitudes.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise SchemaError("path", f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise SchemaError("header", "file is empty")
    header = [h.strip() for h in rows[0]]
    eps_nodes, theta_nodes = [], []
    for h in header:
        m = _COLUMN.match(h)
        if not m:
            raise SchemaError("header", f"unexpected column {h!r}; expected eps_<node> or theta_<node>")
        (eps_nodes if m.group(1) == "eps" else theta_nodes).append(int(m.group(2)))
    if not eps_nodes:
        raise SchemaError("header", "no eps_<node> columns")
    if len(set(header)) != len(header):
        raise SchemaError("header", "duplicate column")
    if 0 in eps_nodes or 0 in theta_nodes:
        raise SchemaError("header", "the root (node 0) carries no samples")
    if theta_nodes and sorted(theta_nodes) != sorted(eps_nodes):
        raise SchemaError("header", "theta columns must cover the same nodes as eps columns")
    data = np.empty((len(rows) - 1, len(header)))
    for k, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise SchemaError(f"row {k + 1}", f"expected {len(header)} values, got {len(row)}")
        for j, cell in enumerate(row):
            try:
                data[k, j] = float(cell)
            except ValueError:
                raise SchemaError(f"row {k + 1}.{header[j]}", f"not a number: {cell!r}") from None
    if not np.all(np.isfinite(data)):
        k, j = np.argwhere(~np.isfinite(data))[0]
        raise SchemaError(f"row {k + 1}.{header[j]}", "value is not finite")
    col = {h: j for j, h in enumerate(header)}
    eps = data[:, [col[f"eps_{n}"] for n in eps_nodes]]
    theta = data[:, [col[f"theta_{n}"] for n in eps_nodes]] if theta_nodes else None
    return SampleSet(tuple(eps_nodes), eps, theta)


def write_samples(path, samples: SampleSet):
    header = [f"eps_{n}" for n in samples.nodes]
    data = samples.eps
    if samples.theta is not None:
        header += [f"theta_{n}" for n in samples.nodes]
        data = np.hstack([samples.eps, samples.theta])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])


# learned topology -----------------------------------------------------------

def topology_to_dict(topology: LearnedTopology, error: float | None = None, extra: dict | None = None) -> dict:
    out = {
        "num_nodes": len(topology.nodes),
        "edges": [{"u": u, "v": v, "phi": _finite(topology.edge_weights.get((u, v)))} for u, v in topology.edges],
        "weight_total": topology.weight_total,
    }
    if error is not None:
        out["error"] = error
    if extra:
        out.update(extra)
    return out


def write_topology(path, topology: LearnedTopology, error: float | None = None, extra: dict | None = None):
    _dump_json(path, topology_to_dict(topology, error, extra))


def read_topology(path, grid: GridGraph) -> RadialTree:
    """Learned-topology JSON as a :class:`RadialTree` carrying ``grid``'s impedances."""
    doc = _load_json(path, TopologyFile)
    if doc.num_nodes != grid.num_nodes:
        raise SchemaError("num_nodes", f"topology has {doc.num_nodes} nodes, grid has {grid.num_nodes}")
    edges = []
    for i, e in enumerate(doc.edges):
        z = grid.impedance(e.u, e.v)
        if z is None:
            raise SchemaError(f"edges.{i}", f"({e.u}, {e.v}) is not a candidate edge of the grid")
        edges.append((e.u, e.v, z))
    try:
        return RadialTree.from_edges(grid.num_nodes, edges)
    except DomainError as exc:
        raise SchemaError("edges", str(exc)) from None
