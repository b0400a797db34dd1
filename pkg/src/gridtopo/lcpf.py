"""Linear-coupled power flow on a radial tree.

Maps net nodal injections (generation minus load, per-unit) to voltage
magnitude deviations ``eps = v - 1`` and phase angles, and gives the exact
first and second moments of ``eps`` under node-independent injections.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .grid import ROOT, RadialTree


def _vec(a, name):
    a = np.array(a, dtype=float)
    if a.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional")
    return a


@dataclass(frozen=True)
class InjectionStats:
    """Per-node injection statistics for non-root nodes 1..N-1 (entry ``a-1``).

    Cross-node covariances are zero by construction. With ``assumption1`` set
    (the default) variances and the p-q covariance must be strictly positive;
    clearing it admits degenerate but valid (PSD) per-node covariances.
    """

    mu_p: np.ndarray
    mu_q: np.ndarray
    var_p: np.ndarray
    var_q: np.ndarray
    cov_pq: np.ndarray
    assumption1: bool = True

    def __post_init__(self):
        fields = ("mu_p", "mu_q", "var_p", "var_q", "cov_pq")
        arrays = [_vec(getattr(self, f), f) for f in fields]
        n = len(arrays[0])
        if any(len(a) != n for a in arrays):
            raise DomainError("all injection statistics must have one entry per non-root node")
        for f, a in zip(fields, arrays):
            a.setflags(write=False)
            object.__setattr__(self, f, a)
        vp, vq, c = self.var_p, self.var_q, self.cov_pq
        if self.assumption1:
            bad = np.flatnonzero(~((vp > 0) & (vq > 0) & (c > 0)))
            if bad.size:
                raise DomainError(f"node {bad[0] + 1}: var_p, var_q and cov_pq must all be positive")
        elif np.any(vp < 0) or np.any(vq < 0):
            raise DomainError("variances must be nonnegative")
        bad = np.flatnonzero(c * c > vp * vq * (1 + 1e-12))
        if bad.size:
            raise DomainError(f"node {bad[0] + 1}: cov_pq^2 exceeds var_p * var_q")

    @property
    def num_load_nodes(self) -> int:
        return len(self.var_p)

    @classmethod
    def from_covariances(cls, var_p, var_q, cov_pq, mu_p=None, mu_q=None, assumption1=True):
        var_p = _vec(var_p, "var_p")
        zeros = np.zeros_like(var_p)
        return cls(
            mu_p=zeros if mu_p is None else mu_p,
            mu_q=zeros if mu_q is None else mu_q,
            var_p=var_p,
            var_q=var_q,
            cov_pq=cov_pq,
            assumption1=assumption1,
        )

    def node(self, a: int) -> tuple[float, float, float]:
        """``(var_p, var_q, cov_pq)`` of non-root node ``a``."""
        if not 1 <= a <= self.num_load_nodes:
            raise DomainError(f"node {a} has no injection statistics")
        i = a - 1
        return float(self.var_p[i]), float(self.var_q[i]), float(self.cov_pq[i])

    def scaled(self, factor: float) -> "InjectionStats":
        return InjectionStats(
            self.mu_p, self.mu_q, self.var_p * factor, self.var_q * factor, self.cov_pq * factor, self.assumption1
        )


def random_injection_stats(
    num_load_nodes: int,
    var_range=(1e-4, 1e-3),
    corr_range=(0.1, 0.9),
    q_ratio_range=(0.2, 0.6),
    mean_range=(0.01, 0.05),
    seed=None,
) -> InjectionStats:
    """Random per-node statistics satisfying node independence and positive p-q correlation.

    ``var_p`` is uniform on ``var_range``, ``var_q`` is ``var_p`` times a
    uniform ratio, and ``cov_pq = rho * sqrt(var_p * var_q)`` with ``rho``
    uniform on ``corr_range``. Means are negative (net load).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = num_load_nodes
    var_p = rng.uniform(*var_range, size=n)
    var_q = var_p * rng.uniform(*q_ratio_range, size=n)
    rho = rng.uniform(*corr_range, size=n)
    mu_p = -rng.uniform(*mean_range, size=n)
    mu_q = mu_p * rng.uniform(*q_ratio_range, size=n)
    return InjectionStats(mu_p, mu_q, var_p, var_q, rho * np.sqrt(var_p * var_q))


@dataclass(frozen=True)
class InjectionSample:
    """Active/reactive injections at nodes 1..N-1; one row per snapshot when 2-D."""

    p: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class VoltageSample:
    """Voltage magnitude deviations and phase angles at nodes 1..N-1 (root is the reference)."""

    eps: np.ndarray
    theta: np.ndarray | None = None


@dataclass(frozen=True)
class VoltageMoments:
    mu_eps: np.ndarray
    mu_theta: np.ndarray
    omega_eps: np.ndarray


def _check_dims(tree: RadialTree, *arrays):
    n = tree.num_nodes - 1
    for a in arrays:
        if a.shape[-1] != n or a.ndim not in (1, 2):
            raise DomainError(f"expected vectors of length {n} (or rows of that length), got shape {a.shape}")


def solve_lcpf(tree: RadialTree, sample: InjectionSample) -> VoltageSample:
    """Voltages produced by ``sample`` on ``tree``.

    ``eps = Hr p + Hx q`` and ``theta = Hx p - Hr q`` with ``Hr``/``Hx`` the
    inverse reduced Laplacians; batched rows are handled as one matrix product.
    """
    p = np.asarray(sample.p, dtype=float)
    q = np.asarray(sample.q, dtype=float)
    if p.shape != q.shape:
        raise DomainError(f"p and q shapes differ: {p.shape} vs {q.shape}")
    _check_dims(tree, p, q)
    a, b = tree.hinv_r, tree.hinv_x
    # both matrices are symmetric, so row-major batches multiply on the right
    return VoltageSample(eps=p @ a + q @ b, theta=p @ b - q @ a)


def exact_voltage_moments(tree: RadialTree, stats: InjectionStats) -> VoltageMoments:
    if stats.num_load_nodes != tree.num_nodes - 1:
        raise DomainError("statistics and tree disagree on the number of nodes")
    a, b = tree.hinv_r, tree.hinv_x
    mu_eps = a @ stats.mu_p + b @ stats.mu_q
    mu_theta = b @ stats.mu_p - a @ stats.mu_q
    # diagonal injection covariances: A diag(w) B == (A * w) @ B
    cross = (a * stats.cov_pq) @ b
    omega = (a * stats.var_p) @ a + (b * stats.var_q) @ b + cross + cross.T
    omega = 0.5 * (omega + omega.T)
    return VoltageMoments(mu_eps=mu_eps, mu_theta=mu_theta, omega_eps=omega)


def sample_injections(stats: InjectionStats, m: int, seed=None) -> InjectionSample:
    """``m`` independent Gaussian snapshots; ``p`` and ``q`` are arrays of shape ``(m, N-1)``."""
    if m < 1:
        raise DomainError("need at least one sample")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = stats.num_load_nodes
    z = rng.standard_normal((2, m, n))
    vp, vq, c = stats.var_p, stats.var_q, stats.cov_pq
    sp = np.sqrt(vp)
    with np.errstate(divide="ignore", invalid="ignore"):
        lq = np.where(sp > 0, c / sp, 0.0)
    resid = np.sqrt(np.clip(vq - lq * lq, 0.0, None))
    p = stats.mu_p + sp * z[0]
    q = stats.mu_q + lq * z[0] + resid * z[1]
    return InjectionSample(p=p, q=q)


def phi_exact(tree: RadialTree, stats: InjectionStats, a: int, b: int) -> float:
    """Variance of ``eps_a - eps_b`` summed node by node over injection sources.

    The root is the reference (``eps == 0``), so ``phi(root, b)`` is the
    variance of ``eps_b``.
    """
    tree._check(a)
    tree._check(b)
    if a == b:
        raise DomainError("phi is defined for distinct nodes")

    def row(h, n):
        return np.zeros(h.shape[0]) if n == ROOT else h[n - 1]

    dr = row(tree.hinv_r, a) - row(tree.hinv_r, b)
    dx = row(tree.hinv_x, a) - row(tree.hinv_x, b)
    return float(np.sum(dr * dr * stats.var_p + dx * dx * stats.var_q + 2.0 * dr * dx * stats.cov_pq))


@dataclass(frozen=True)
class SampleSet:
    """Snapshot matrix of voltage deviations for a subset of non-root nodes.

    ``eps[k, j]`` is the deviation of node ``nodes[j]`` in snapshot ``k``;
    ``theta`` has the same layout when angle measurements are available.
    """

    nodes: tuple[int, ...]
    eps: np.ndarray
    theta: np.ndarray | None = None

    def __post_init__(self):
        eps = np.atleast_2d(np.asarray(self.eps, dtype=float))
        if eps.shape[1] != len(self.nodes):
            raise DomainError(f"{len(self.nodes)} nodes but {eps.shape[1]} eps columns")
        if ROOT in self.nodes:
            raise DomainError("the root is the voltage reference and carries no samples")
        if len(set(self.nodes)) != len(self.nodes):
            raise DomainError("duplicate node in sample set")
        object.__setattr__(self, "nodes", tuple(int(n) for n in self.nodes))
        object.__setattr__(self, "eps", eps)
        if self.theta is not None:
            theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
            if theta.shape != eps.shape:
                raise DomainError("theta must have the same shape as eps")
            object.__setattr__(self, "theta", theta)

    @property
    def num_samples(self) -> int:
        return self.eps.shape[0]

    def head(self, m: int) -> "SampleSet":
        return SampleSet(self.nodes, self.eps[:m], None if self.theta is None else self.theta[:m])

    def restrict(self, nodes) -> "SampleSet":
        """Columns for ``nodes`` only, in the given order."""
        idx = {n: j for j, n in enumerate(self.nodes)}
        missing = [n for n in nodes if n not in idx]
        if missing:
            raise DomainError(f"no samples for nodes {missing}")
        cols = [idx[n] for n in nodes]
        return SampleSet(tuple(nodes), self.eps[:, cols], None if self.theta is None else self.theta[:, cols])

    def drop(self, nodes) -> "SampleSet":
        gone = set(nodes)
        return self.restrict([n for n in self.nodes if n not in gone])

    def voltage_sample(self, num_nodes: int) -> VoltageSample:
        """Full-grid batch ordered by node id; requires every non-root node."""
        full = self.restrict(range(1, num_nodes))
        return VoltageSample(eps=full.eps, theta=full.theta)


def simulate(tree: RadialTree, stats: InjectionStats, m: int, seed=None, with_angles=True) -> SampleSet:
    volts = solve_lcpf(tree, sample_injections(stats, m, seed))
    return SampleSet(tuple(range(1, tree.num_nodes)), volts.eps, volts.theta if with_angles else None)
