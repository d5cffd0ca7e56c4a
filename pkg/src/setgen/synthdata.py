"""Rejection-sampling generator for molecule-like 3D point sets.

Points are proposed uniformly in a bounding box and accepted only when they
keep a minimum separation, stay connected to the growing cluster, and never
push any point past the neighbor cap. The derived graph (edges between
points closer than the neighbor distance) is therefore connected with all
degrees in [1, max_neighbors] by construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Rng
from .errors import ContractError, GenerationError, IoError

MAX_RESTARTS = 100


@dataclass
class SynthConfig:
    box: tuple[float, float] = (0.0, 4.0)  # per-axis range
    dim: int = 3
    min_distance: float = 0.9
    neighbor_distance: float = 1.1
    max_neighbors: int = 4
    size_mean: float = 9.0
    n_min: int = 2
    n_max: int = 35
    attempts_per_point: int = 400

    def __post_init__(self):
        self.box = tuple(float(v) for v in self.box)
        if not (0 < self.min_distance < self.neighbor_distance):
            raise ContractError("need 0 < min_distance < neighbor_distance")
        if not (2 <= self.n_min <= self.n_max):
            raise ContractError("need 2 <= n_min <= n_max")
        if self.max_neighbors < 1:
            raise ContractError("max_neighbors must be >= 1")

    def extrapolation(self, shift: int = 10) -> "SynthConfig":
        """Size law shifted to larger sets, support clipped to [n_min, 45]."""
        cfg = SynthConfig(**asdict(self))
        cfg.size_mean = self.size_mean + shift
        cfg.n_max = min(self.n_max + shift, 45)
        return cfg


@dataclass
class SetDataset:
    sets: list[np.ndarray]
    config: SynthConfig | None = None

    def __len__(self):
        return len(self.sets)

    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.sets])

    def size_histogram(self) -> dict[int, float]:
        """Empirical p(n), normalized."""
        sizes = self.sizes()
        counts: dict[int, float] = {}
        for n in sizes:
            counts[int(n)] = counts.get(int(n), 0) + 1
        return {n: c / len(sizes) for n, c in sorted(counts.items())}


def _draw_size(cfg: SynthConfig, rng: Rng) -> int:
    while True:
        n = rng.poisson(cfg.size_mean)
        if cfg.n_min <= n <= cfg.n_max:
            return n


def sample_set(cfg: SynthConfig, rng: Rng) -> np.ndarray:
    """One point set via constrained rejection sampling."""
    target = _draw_size(cfg, rng)
    lo, hi = cfg.box
    for _ in range(MAX_RESTARTS):
        pts: list[np.ndarray] = []
        degrees: list[int] = []
        attempts = cfg.attempts_per_point * target
        while len(pts) < target and attempts > 0:
            attempts -= 1
            cand = rng.uniform(lo, hi, cfg.dim)
            if not pts:
                pts.append(cand)
                degrees.append(0)
                continue
            d = np.linalg.norm(np.asarray(pts) - cand, axis=1)
            if np.any(d <= cfg.min_distance):
                continue
            nbrs = np.nonzero(d <= cfg.neighbor_distance)[0]
            if len(nbrs) == 0:
                continue
            if len(nbrs) > cfg.max_neighbors:
                continue
            if any(degrees[i] + 1 > cfg.max_neighbors for i in nbrs):
                continue
            for i in nbrs:
                degrees[i] += 1
            pts.append(cand)
            degrees.append(len(nbrs))
        if len(pts) == target:
            return np.asarray(pts)
    raise GenerationError(
        f"failed to sample a {target}-point set after {MAX_RESTARTS} restarts")


def gen_dataset(cfg: SynthConfig, count: int, seed: int) -> SetDataset:
    """count independent sets; per-set derived seeds keep the output
    independent of any parallel schedule."""
    if count < 1:
        raise ContractError("count must be >= 1")
    root = Rng(seed)
    sets = [sample_set(cfg, root.spawn(i)) for i in range(count)]
    return SetDataset(sets=sets, config=cfg)


def derive_graph(x: np.ndarray, neighbor_distance: float) -> np.ndarray:
    """Boolean adjacency: an edge iff two distinct points are within the
    neighbor distance. Symmetric with a zero diagonal."""
    x = np.asarray(x, dtype=np.float64)
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    adj = d <= neighbor_distance
    np.fill_diagonal(adj, False)
    return adj


def valency_of(x: np.ndarray, neighbor_distance: float) -> list[int]:
    return [int(v) for v in derive_graph(x, neighbor_distance).sum(axis=1)]


def is_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    if n == 0:
        return False
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(adj[i])[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


def audit_set(x: np.ndarray, cfg: SynthConfig) -> list[str]:
    """Independent constraint check; returns human-readable violations."""
    problems = []
    n = len(x)
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    off = d[~np.eye(n, dtype=bool)]
    if n >= 2 and off.min() <= cfg.min_distance:
        problems.append(f"min pairwise distance {off.min():.4f} <= min_distance")
    adj = derive_graph(x, cfg.neighbor_distance)
    deg = adj.sum(axis=1)
    if n >= 2 and deg.min() < 1:
        problems.append("isolated point")
    if deg.max() > cfg.max_neighbors:
        problems.append(f"degree {int(deg.max())} exceeds max_neighbors")
    if not is_connected(adj):
        problems.append("derived graph not connected")
    return problems


# -- persistence ----------------------------------------------------------


def save_dataset(ds: SetDataset, path: str) -> None:
    """JSON Lines, one object per line; config echoed in a sidecar header."""
    with open(path, "w") as fh:
        for s in ds.sets:
            fh.write(json.dumps({"points": [list(row) for row in s]}) + "\n")
    if ds.config is not None:
        with open(path + ".header.json", "w") as fh:
            json.dump(asdict(ds.config), fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_dataset(path: str, validate: bool = True) -> SetDataset:
    sets = []
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise IoError("empty dataset file")
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            pts = np.asarray(obj["points"], dtype=np.float64)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise IoError(f"malformed set record: {exc}", line=lineno) from None
        if pts.ndim != 2:
            raise IoError("points must be a matrix", line=lineno)
        sets.append(pts)

    cfg = None
    try:
        with open(path + ".header.json") as fh:
            cfg = SynthConfig(**json.load(fh))
    except FileNotFoundError:
        pass
    ds = SetDataset(sets=sets, config=cfg)
    if validate and cfg is not None:
        for i, s in enumerate(ds.sets):
            problems = audit_set(s, cfg)
            if problems:
                raise IoError(f"set {i} violates config: {problems[0]}")
    return ds
