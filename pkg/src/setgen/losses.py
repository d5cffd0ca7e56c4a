"""Permutation-invariant reconstruction losses and matching solvers.

W2-type losses treat the optimal assignment/plan as locally constant during
backward (envelope theorem): the matcher runs on raw values and gradients
flow only through the selected cost entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from ._kernels import solve_assignment, solve_transport
from .autodiff import Tensor
from .errors import ContractError, ShapeError

_DIAG_MASK = 1e9


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def pairwise_sqdist(x: Tensor, y: Tensor) -> Tensor:
    """Squared Euclidean distances between rows of x (n x d) and y (m x d).

    Also supports batched rank-3 inputs (b x n x d, b x m x d).
    """
    if x.shape[-1] != y.shape[-1]:
        raise ShapeError(f"point dims differ: {x.shape[-1]} vs {y.shape[-1]}")
    sx = ad.sum(ad.square(x), axis=-1, keepdims=True)
    sy = ad.sum(ad.square(y), axis=-1, keepdims=True)
    cross = ad.matmul(x, ad.transpose(y))
    d2 = ad.add(ad.add(sx, ad.transpose(sy)), ad.mul(cross, -2.0))
    return ad.relu(d2)  # clamp float negatives near zero


def self_sqdist_masked(x: Tensor) -> Tensor:
    """Within-set squared distances with the diagonal pushed to +inf-like."""
    d2 = pairwise_sqdist(x, x)
    n = x.shape[-2]
    return ad.add(d2, np.eye(n) * _DIAG_MASK)


def chamfer(x, y) -> Tensor:
    """Symmetric sum of squared nearest-neighbor distances, halved.

    Ties in the nearest neighbor split the gradient equally.
    """
    x, y = as_tensor(x), as_tensor(y)
    d2 = pairwise_sqdist(x, y)
    fwd = ad.sum(ad.min(d2, axis=-1))
    bwd = ad.sum(ad.min(d2, axis=-2))
    return ad.mul(ad.add(fwd, bwd), 0.5)


@dataclass
class Assignment:
    perm: list[int]
    cost: float


def hungarian(cost) -> Assignment:
    """Exactly optimal assignment; among optimal permutations, returns the
    lexicographically smallest (deterministic tie resolution)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ShapeError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ContractError("cost matrix must be finite")
    n = cost.shape[0]
    _, base = solve_assignment(cost)
    tol = 1e-9 * max(1.0, abs(base))

    free = list(range(n))
    perm: list[int] = []
    for i in range(n):
        vals = []
        for j in free:
            rest_cols = [c for c in free if c != j]
            if rest_cols:
                sub = cost[np.ix_(range(i + 1, n), rest_cols)]
                _, rest = solve_assignment(sub)
            else:
                rest = 0.0
            vals.append(cost[i, j] + rest)
        best = min(vals)
        pick = next(j for j, v in zip(free, vals) if v <= best + tol)
        perm.append(pick)
        free.remove(pick)
    total = float(cost[np.arange(n), perm].sum())
    return Assignment(perm=perm, cost=total)


def w2_equal(x, y) -> Tensor:
    """Squared-cost optimal transport between equal-size sets: the optimal
    coupling is a permutation, found exactly by the assignment solver."""
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 2 or y.ndim != 2:
        raise ShapeError("w2_equal expects rank-2 point sets")
    n = x.shape[0]
    if y.shape[0] != n:
        raise ShapeError(f"set sizes differ: {n} vs {y.shape[0]}")
    d2 = pairwise_sqdist(x, y)
    perm, _ = solve_assignment(d2.data)
    flat = ad.reshape(d2, (n * n, 1))
    idx = np.arange(n) * n + perm
    return ad.mul(ad.sum(ad.gather_rows(flat, idx)), 1.0 / n)


@dataclass
class TransportPlan:
    plan: np.ndarray  # n x m, rows sum to 1/n, columns to 1/m
    cost: float


def ot_uniform(x, y) -> TransportPlan:
    """Exact optimal transport with uniform marginals and squared cost.

    Solved as integral min-cost flow on scaled masses (each source carries
    m units, each sink n units), then rescaled by 1/(n*m).
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    n, m = x.shape[0], y.shape[0]
    d2 = np.maximum(
        (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * (x @ y.T), 0.0)
    flow, total = solve_transport(d2, np.full(n, m), np.full(m, n))
    scale = 1.0 / (n * m)
    return TransportPlan(plan=flow * scale, cost=float(total * scale))


def kl_diag_gauss(mu, logvar) -> Tensor:
    """KL(N(mu, diag(exp(logvar))) || N(0, I))."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ShapeError("mu and logvar must have the same shape")
    terms = ad.add(ad.add(ad.square(mu), ad.exp(logvar)),
                   ad.add(ad.neg(logvar), -1.0))
    return ad.mul(ad.sum(terms), 0.5)


def reg_min_dist(x, d0: float = 1.0) -> Tensor:
    """Hinge penalty on pairs closer than d0: sum_{i<j} max(0, d0 - |xi-xj|)."""
    if d0 <= 0:
        raise ContractError("d0 must be positive")
    x = as_tensor(x)
    dist = ad.sqrt(self_sqdist_masked(x))
    hinge = ad.relu(ad.add(ad.neg(dist), d0))
    return ad.mul(ad.sum(hinge), 0.5)  # each unordered pair counted twice


def reg_valency(x, d_nb: float, k_max: int, tau: float) -> Tensor:
    """Soft-valency penalty: each point should have between 1 and k_max
    neighbors under a sigmoid-relaxed neighbor count."""
    if d_nb <= 0 or tau <= 0:
        raise ContractError("d_nb and tau must be positive")
    x = as_tensor(x)
    dist = ad.sqrt(self_sqdist_masked(x))
    soft = ad.sigmoid(ad.mul(ad.add(ad.neg(dist), d_nb), 1.0 / tau))
    k = ad.sum(soft, axis=-1)
    under = ad.relu(ad.add(ad.neg(k), 1.0))
    over = ad.relu(ad.add(k, -float(k_max)))
    return ad.sum(ad.add(under, over))


def vae_total_loss(x, x_hat, mu, logvar,
                   lambda_kl: float = 1e-3,
                   lambda_dist: float = 0.1,
                   lambda_valency: float = 0.1,
                   d0: float = 1.0, d_nb: float = 1.1,
                   k_max: int = 4, tau: float = 0.11) -> Tensor:
    """Training loss: matched W2 reconstruction plus KL and the two
    geometric regularizers on the reconstruction."""
    x, x_hat = as_tensor(x), as_tensor(x_hat)
    if x.shape[0] != x_hat.shape[0]:
        raise ContractError(
            f"training pairs must have equal sizes: {x.shape[0]} vs {x_hat.shape[0]}")
    total = w2_equal(x, x_hat)
    if lambda_kl:
        total = ad.add(total, ad.mul(kl_diag_gauss(mu, logvar), lambda_kl))
    if lambda_dist:
        total = ad.add(total, ad.mul(reg_min_dist(x_hat, d0), lambda_dist))
    if lambda_valency:
        total = ad.add(total, ad.mul(reg_valency(x_hat, d_nb, k_max, tau),
                                     lambda_valency))
    return total
