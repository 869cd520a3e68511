"""Gaussian Markov random fields and Gaussian belief propagation.

The joint density is ``p(s) ∝ exp(-1/2 s^T A s + b^T s)`` with ``A`` assembled
from per-node blocks ``A_ii`` and per-edge coupling blocks ``A_ij`` (and
``A_ji = A_ij^T``). Messages are kept in information form internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MRFError",
    "GaussianMRF",
    "GabpMessage",
    "Marginal",
    "GabpResult",
    "build_mrf",
    "gabp_run",
    "exact_marginals",
    "random_mrf",
]


class MRFError(ValueError):
    pass


@dataclass
class GaussianMRF:
    unary: np.ndarray  # (N, d, d)
    potential: np.ndarray  # (N, d)
    pairwise: dict[tuple[int, int], np.ndarray]  # (i, j) with i < j -> A_ij (d, d)

    @property
    def n_nodes(self) -> int:
        return self.unary.shape[0]

    @property
    def dim(self) -> int:
        return self.unary.shape[1]

    def coupling(self, i: int, j: int) -> np.ndarray:
        """Block A_ij of the joint precision (row block i, column block j)."""
        if i < j:
            return self.pairwise[(i, j)]
        return self.pairwise[(j, i)].T

    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in sorted(self.pairwise):
            nbrs[i].append(j)
            nbrs[j].append(i)
        return nbrs

    def joint(self) -> tuple[np.ndarray, np.ndarray]:
        n, d = self.n_nodes, self.dim
        A = np.zeros((n * d, n * d))
        for i in range(n):
            A[i * d:(i + 1) * d, i * d:(i + 1) * d] = self.unary[i]
        for (i, j), block in self.pairwise.items():
            A[i * d:(i + 1) * d, j * d:(j + 1) * d] = block
            A[j * d:(j + 1) * d, i * d:(i + 1) * d] = block.T
        return A, self.potential.reshape(-1)


@dataclass
class GabpMessage:
    source: int
    target: int
    precision: np.ndarray
    information: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return np.linalg.lstsq(self.precision, self.information, rcond=None)[0]


@dataclass
class Marginal:
    node: int
    mean: np.ndarray
    precision: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision)


@dataclass
class GabpResult:
    converged: bool
    diverged: bool
    iterations: int
    max_delta: float
    marginals: list[Marginal] | None
    messages: dict[tuple[int, int], GabpMessage] = field(default_factory=dict, repr=False)


def build_mrf(unaries, potentials, pairwise=None, edges=None, check: bool = True) -> GaussianMRF:
    """Assemble a Gaussian MRF and verify symmetry and positive definiteness.

    Args:
        unaries: per-node precision blocks, each (d, d).
        potentials: per-node potential vectors, each (d,).
        pairwise: coupling blocks, aligned with ``edges``.
        edges: node pairs ``(i, j)``; the block is ``A_ij`` and ``A_ji`` is its transpose.
    """
    unary = np.array(unaries, dtype=float)
    if unary.ndim == 1:
        unary = unary[:, None, None]
    pot = np.array(potentials, dtype=float).reshape(unary.shape[0], -1)
    n, d = unary.shape[0], unary.shape[1]
    if unary.shape != (n, d, d) or pot.shape != (n, d):
        raise MRFError(f"inconsistent block shapes: unary {unary.shape}, potential {pot.shape}")
    if not np.allclose(unary, np.transpose(unary, (0, 2, 1)), atol=1e-12):
        raise MRFError("unary blocks must be symmetric")
    blocks: dict[tuple[int, int], np.ndarray] = {}
    edges = list(edges or [])
    pairwise = list(pairwise or [])
    if len(edges) != len(pairwise):
        raise MRFError("edges and pairwise blocks differ in length")
    for (i, j), block in zip(edges, pairwise):
        block = np.array(block, dtype=float).reshape(d, d)
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise MRFError(f"invalid edge ({i}, {j})")
        key, value = ((i, j), block) if i < j else ((j, i), block.T)
        if key in blocks:
            raise MRFError(f"duplicate edge {key}")
        blocks[key] = value
    mrf = GaussianMRF(unary, pot, blocks)
    if check:
        A, _ = mrf.joint()
        if not np.allclose(A, A.T, atol=1e-12):
            raise MRFError("assembled precision is not symmetric")
        try:
            np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            raise MRFError("assembled precision is not positive definite") from exc
    return mrf


def gabp_run(
    mrf: GaussianMRF,
    max_iters: int = 1000,
    tol: float = 1e-10,
    damping: float = 0.0,
    divergence_bound: float = 1e12,
) -> GabpResult:
    """Synchronous Gaussian belief propagation.

    Every sweep recomputes all directed messages from the previous sweep's
    values, so the result does not depend on edge order. Messages start at
    zero precision and zero information.
    """
    n, d = mrf.n_nodes, mrf.dim
    nbrs = mrf.neighbors()
    directed = [(i, j) for i in range(n) for j in nbrs[i]]
    P = {e: np.zeros((d, d)) for e in directed}
    h = {e: np.zeros(d) for e in directed}

    iterations, delta = 0, np.inf
    converged = diverged = False
    for iterations in range(1, max_iters + 1):
        P_new, h_new = {}, {}
        for i, j in directed:
            prec = mrf.unary[i] + sum((P[(k, i)] for k in nbrs[i] if k != j), np.zeros((d, d)))
            info = mrf.potential[i] + sum((h[(k, i)] for k in nbrs[i] if k != j), np.zeros(d))
            A_ji = mrf.coupling(j, i)
            sol = np.linalg.solve(prec, np.column_stack([mrf.coupling(i, j), info]))
            P_ij = -A_ji @ sol[:, :d]
            h_ij = -A_ji @ sol[:, d]
            P_new[(i, j)] = 0.5 * (P_ij + P_ij.T)
            h_new[(i, j)] = h_ij
        if damping:
            for e in directed:
                P_new[e] = (1 - damping) * P_new[e] + damping * P[e]
                h_new[e] = (1 - damping) * h_new[e] + damping * h[e]
        delta = max(
            (max(np.abs(P_new[e] - P[e]).max(), np.abs(h_new[e] - h[e]).max()) for e in directed),
            default=0.0,
        )
        P, h = P_new, h_new
        peak = max((max(np.abs(P[e]).max(), np.abs(h[e]).max()) for e in directed), default=0.0)
        if not np.isfinite(peak) or peak > divergence_bound:
            diverged = True
            break
        if delta < tol:
            converged = True
            break

    messages = {e: GabpMessage(e[0], e[1], P[e], h[e]) for e in directed}
    if diverged:
        return GabpResult(False, True, iterations, float(delta), None, messages)
    marginals = []
    for i in range(n):
        prec = mrf.unary[i] + sum((P[(k, i)] for k in nbrs[i]), np.zeros((d, d)))
        info = mrf.potential[i] + sum((h[(k, i)] for k in nbrs[i]), np.zeros(d))
        marginals.append(Marginal(i, np.linalg.solve(prec, info), prec))
    return GabpResult(converged, False, iterations, float(delta), marginals, messages)


def exact_marginals(mrf: GaussianMRF) -> list[Marginal]:
    """Dense reference marginals from the joint covariance ``A^-1``."""
    A, b = mrf.joint()
    if A.shape[0] > 512:
        raise MRFError("model too large for dense inversion")
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise MRFError("precision matrix is not positive definite") from exc
    eye = np.eye(A.shape[0])
    cov = np.linalg.solve(L.T, np.linalg.solve(L, eye))
    mean = cov @ b
    d = mrf.dim
    out = []
    for i in range(mrf.n_nodes):
        block = cov[i * d:(i + 1) * d, i * d:(i + 1) * d]
        out.append(Marginal(i, mean[i * d:(i + 1) * d], np.linalg.inv(block)))
    return out


def random_mrf(n_nodes: int, dim: int, rng: np.random.Generator, tree: bool = False, edge_prob: float = 0.5) -> GaussianMRF:
    """Random diagonally dominant model; a random spanning tree, optionally plus extra edges."""
    edges = [(int(rng.integers(0, v)), v) for v in range(1, n_nodes)]
    if not tree:
        present = set(edges)
        for i in range(n_nodes):
            for j in range(i + 1, n_nodes):
                if (i, j) not in present and rng.random() < edge_prob:
                    edges.append((i, j))
    pairwise = [rng.normal(size=(dim, dim)) for _ in edges]
    A = np.zeros((n_nodes * dim, n_nodes * dim))
    for (i, j), block in zip(edges, pairwise):
        A[i * dim:(i + 1) * dim, j * dim:(j + 1) * dim] = block
        A[j * dim:(j + 1) * dim, i * dim:(i + 1) * dim] = block.T
    unaries = []
    for i in range(n_nodes):
        M = rng.normal(size=(dim, dim))
        block = 0.5 * (M + M.T)
        rows = slice(i * dim, (i + 1) * dim)
        off = np.abs(A[rows]).sum(axis=1) + np.abs(block).sum(axis=1) - np.abs(np.diag(block))
        np.fill_diagonal(block, off + rng.uniform(0.5, 1.5, size=dim))
        unaries.append(block)
    potentials = rng.normal(size=(n_nodes, dim))
    return build_mrf(unaries, potentials, pairwise, edges)
