"""Evaluation metrics: valency distribution distance, incorrect-valency
percentage, diversity score, and reconstruction error."""

from __future__ import annotations

import numpy as np

from .autodiff import Rng
from .errors import ContractError
from .losses import ot_uniform, w2_equal
from .synthdata import SetDataset, valency_of


def _pooled_valencies(sets, neighbor_distance: float) -> np.ndarray:
    vals: list[int] = []
    for s in sets:
        vals.extend(valency_of(np.asarray(s), neighbor_distance))
    return np.array(vals, dtype=np.float64)


def w2_1d(a: np.ndarray, b: np.ndarray) -> float:
    """Squared-cost 1-D Wasserstein between empirical samples via quantile
    coupling on the common grid of len(a)*len(b) quantiles."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    n, m = len(a), len(b)
    k = np.arange(n * m)
    return float(np.mean((a[k // m] - b[k // n]) ** 2))


def valency_w2(generated_sets, reference: SetDataset,
               neighbor_distance: float) -> float:
    """Distance between the pooled valency distributions of generated sets
    and the dataset."""
    if not generated_sets or not len(reference.sets):
        raise ContractError("valency_w2 needs nonempty inputs")
    gen = _pooled_valencies(generated_sets, neighbor_distance)
    ref = _pooled_valencies(reference.sets, neighbor_distance)
    return w2_1d(gen, ref)


def incorrect_valency_pct(generated_sets, k_max: int,
                          neighbor_distance: float) -> float:
    """Percentage of generated atoms with valency outside [1, k_max]."""
    if not generated_sets:
        raise ContractError("incorrect_valency_pct needs nonempty input")
    vals = _pooled_valencies(generated_sets, neighbor_distance)
    bad = np.sum((vals < 1) | (vals > k_max))
    return 100.0 * float(bad) / len(vals)


def diversity_score(generated_sets, pairs: int = 1000,
                    rng: Rng | None = None) -> float:
    """Mean OT cost over uniformly drawn distinct pairs of generated sets."""
    if len(generated_sets) < 2:
        raise ContractError("diversity_score needs at least 2 sets")
    rng = rng or Rng(0)
    count = len(generated_sets)
    total = 0.0
    for _ in range(pairs):
        i = int(rng.integers(0, count))
        j = int(rng.integers(0, count - 1))
        if j >= i:
            j += 1
        total += ot_uniform(generated_sets[i], generated_sets[j]).cost
    return total / pairs


def eval_reconstruction(model, dataset: SetDataset) -> float:
    """Mean matched-W2 reconstruction error with deterministic decoding
    (z = posterior mean)."""
    total = 0.0
    rng = Rng(0)
    for i, x in enumerate(dataset.sets):
        x_hat = model.reconstruct(x, rng.spawn(i))
        total += float(w2_equal(x, x_hat).data)
    return total / len(dataset.sets)
