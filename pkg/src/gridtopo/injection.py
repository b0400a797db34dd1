"""Recover nodal injections and their statistics from voltage magnitudes and angles.

With ``A``/``B`` the inverse reduced Laplacians for resistance/reactance,
``eps - i*theta = (A - i*B)(p + i*q)``. ``A - i*B`` is the path-sum inverse of
the reduced Laplacian whose edge weights are ``1 / (r - i*x)``, so the
injections follow from one sparse complex matrix product, without a
factorization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import DomainError
from .grid import RadialTree
from .lcpf import InjectionSample, InjectionStats, SampleSet, VoltageSample


def complex_reduced_laplacian(tree: RadialTree) -> sparse.csr_matrix:
    """Reduced Laplacian with admittance-conjugate weights ``1 / (r - i x)``."""
    child = np.array(tree.order[1:])
    par = tree.parent[child]
    g = 1.0 / (tree.r_up[child] - 1j * tree.x_up[child])
    n = tree.num_nodes
    rows = np.concatenate([child, par, child, par])
    cols = np.concatenate([child, par, par, child])
    vals = np.concatenate([g, g, -g, -g])
    lap = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return lap[1:, 1:]


def invert_lcpf(tree: RadialTree, sample: VoltageSample) -> InjectionSample:
    """Injections that produce ``sample`` on ``tree``; exact inverse of :func:`~gridtopo.lcpf.solve_lcpf`."""
    if sample.theta is None:
        raise DomainError("phase angles are required to recover injections")
    eps = np.asarray(sample.eps, dtype=float)
    theta = np.asarray(sample.theta, dtype=float)
    n = tree.num_nodes - 1
    if eps.shape != theta.shape or eps.shape[-1] != n or eps.ndim not in (1, 2):
        raise DomainError(f"eps and theta must both have trailing length {n}")
    lap = complex_reduced_laplacian(tree)
    s = (lap @ (eps - 1j * theta).T).T
    return InjectionSample(p=np.ascontiguousarray(s.real), q=np.ascontiguousarray(s.imag))


@dataclass(frozen=True)
class InjectionEstimate:
    """Sample means and unbiased covariances of recovered injections.

    ``joint_cov`` is the full ``2(N-1)`` covariance of ``[p, q]``; only its
    per-node blocks enter the estimate, the rest is diagnostic.
    """

    mu_p: np.ndarray
    mu_q: np.ndarray
    var_p: np.ndarray
    var_q: np.ndarray
    cov_pq: np.ndarray
    joint_cov: np.ndarray
    num_samples: int

    @property
    def cross_node_covariance(self) -> float:
        """Largest absolute covariance between injections at different nodes.

        Near zero when the topology used for inversion is right.
        """
        n = len(self.var_p)
        mask = np.ones((2 * n, 2 * n), dtype=bool)
        idx = np.arange(n)
        for oi in (0, n):
            for oj in (0, n):
                mask[idx + oi, idx + oj] = False
        off = np.abs(self.joint_cov[mask])
        return float(off.max()) if off.size else 0.0

    @property
    def cross_node_correlation(self) -> float:
        """Largest absolute correlation between injections at different nodes."""
        sd = np.sqrt(np.diag(self.joint_cov))
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = self.joint_cov / np.outer(sd, sd)
        n = len(self.var_p)
        corr = np.nan_to_num(corr)
        idx = np.arange(n)
        for oi in (0, n):
            for oj in (0, n):
                corr[idx + oi, idx + oj] = 0.0
        return float(np.abs(corr).max()) if n > 1 else 0.0

    def to_stats(self, assumption1: bool = True) -> InjectionStats:
        return InjectionStats(self.mu_p, self.mu_q, self.var_p, self.var_q, self.cov_pq, assumption1)


def estimate_injection_stats(tree: RadialTree, samples: SampleSet) -> InjectionEstimate:
    if samples.num_samples < 2:
        raise DomainError("at least two samples are needed to estimate covariances")
    if samples.theta is None:
        raise DomainError("phase angles are required to recover injections")
    inj = invert_lcpf(tree, samples.voltage_sample(tree.num_nodes))
    pq = np.hstack([inj.p, inj.q])
    joint = np.atleast_2d(np.cov(pq, rowvar=False, ddof=1))
    n = tree.num_nodes - 1
    idx = np.arange(n)
    return InjectionEstimate(
        mu_p=inj.p.mean(axis=0),
        mu_q=inj.q.mean(axis=0),
        var_p=joint[idx, idx].copy(),
        var_q=joint[idx + n, idx + n].copy(),
        cov_pq=joint[idx, idx + n].copy(),
        joint_cov=joint,
        num_samples=samples.num_samples,
    )


def covariance_error(estimate, truth: InjectionStats) -> float:
    """Relative Frobenius error over the stacked per-node 2x2 covariance blocks."""
    dp = estimate.var_p - truth.var_p
    dq = estimate.var_q - truth.var_q
    dc = estimate.cov_pq - truth.cov_pq
    num = np.sum(dp**2 + dq**2 + 2 * dc**2)
    den = np.sum(truth.var_p**2 + truth.var_q**2 + 2 * truth.cov_pq**2)
    return float(np.sqrt(num / den))
