"""Linear structural equation models with exact do-operation evaluation.

Nodes are stored in topological order with the outcome ``Y`` last, so the
weight matrix ``B`` (``B[j, l]`` is the weight of edge ``l -> j``) is strictly
lower triangular and ``Y`` is automatically a sink.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataset_io import Dataset
from .errors import ValidationError

NOISE_FAMILIES = ("uniform", "laplace", "gaussian")


@dataclass(frozen=True)
class NoiseSpec:
    family: str = "uniform"
    variance: float = 1.0
    mean: float = 0.0

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ValidationError(f"unknown noise family {self.family!r}")
        if not self.variance > 0:
            raise ValidationError("noise variance must be positive")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        sd = np.sqrt(self.variance)
        if self.family == "uniform":
            half = np.sqrt(3.0) * sd
            return self.mean + rng.uniform(-half, half, size=n)
        if self.family == "laplace":
            return self.mean + rng.laplace(0.0, sd / np.sqrt(2.0), size=n)
        return self.mean + sd * rng.standard_normal(n)


@dataclass(frozen=True, eq=False)
class Sem:
    weights: np.ndarray
    noise_specs: tuple[NoiseSpec, ...]
    node_names: tuple[str, ...] = ()

    def __post_init__(self):
        B = np.array(self.weights, dtype=float)
        if B.ndim != 2 or B.shape[0] != B.shape[1] or B.shape[0] < 2:
            raise ValidationError("weights must be a square matrix over >= 2 nodes")
        if np.any(np.triu(B) != 0):
            raise ValidationError("weights must be strictly lower triangular (acyclic, Y last)")
        if not np.all(np.isfinite(B)):
            raise ValidationError("weights must be finite")
        D = B.shape[0]
        noise = tuple(self.noise_specs) or tuple(NoiseSpec() for _ in range(D))
        if len(noise) != D:
            raise ValidationError(f"{len(noise)} noise specs for {D} nodes")
        names = tuple(self.node_names) or tuple(f"x{i + 1}" for i in range(D - 1)) + ("y",)
        if len(names) != D:
            raise ValidationError("one name per node required")
        B.setflags(write=False)
        object.__setattr__(self, "weights", B)
        object.__setattr__(self, "noise_specs", noise)
        object.__setattr__(self, "node_names", names)

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        """Number of covariates (every node except ``Y``)."""
        return self.n_nodes - 1

    @property
    def outcome(self) -> int:
        return self.n_nodes - 1

    @property
    def outcome_weights(self) -> np.ndarray:
        """Coefficients of ``f*(x) = E[Y | X = x]`` on the covariates."""
        return self.weights[self.outcome, : self.d]

    def _propagate(self, base: np.ndarray, fixed: dict[int, float] | None = None) -> np.ndarray:
        mu = np.zeros(self.n_nodes)
        fixed = fixed or {}
        for j in range(self.n_nodes):
            mu[j] = fixed[j] if j in fixed else self.weights[j, :j] @ mu[:j] + base[j]
        return mu

    def means(self) -> np.ndarray:
        return self._propagate(np.array([s.mean for s in self.noise_specs]))

    def covariance(self) -> np.ndarray:
        A = np.linalg.inv(np.eye(self.n_nodes) - self.weights)
        D = np.diag([s.variance for s in self.noise_specs])
        return A @ D @ A.T

    def stds(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance()))

    def parents(self, node: int) -> set[int]:
        return {int(i) for i in np.flatnonzero(self.weights[node] != 0)}

    def descendants(self, nodes: Iterable[int]) -> set[int]:
        """Nodes reachable by a directed path of length >= 1 from ``nodes``."""
        adj = self.weights != 0
        frontier = list(nodes)
        seen: set[int] = set()
        while frontier:
            u = frontier.pop()
            for child in np.flatnonzero(adj[:, u]):
                c = int(child)
                if c not in seen:
                    seen.add(c)
                    frontier.append(c)
        return seen

    def to_dict(self) -> dict:
        B = self.weights
        edges = [[self.node_names[j], self.node_names[l], float(B[j, l])]
                 for j in range(self.n_nodes) for l in range(j) if B[j, l] != 0]
        return {"nodes": list(self.node_names), "edges": edges,
                "noise": [{"family": s.family, "variance": s.variance, "mean": s.mean}
                          for s in self.noise_specs]}

    @classmethod
    def from_dict(cls, obj: dict) -> "Sem":
        try:
            names = list(obj["nodes"])
        except KeyError:
            raise ValidationError("SEM spec needs a 'nodes' list") from None
        D = len(names)
        B = np.zeros((D, D))
        for edge in obj.get("edges", []):
            if len(edge) != 3:
                raise ValidationError(f"edge must be [child, parent, weight]: {edge}")
            child, parent, w = edge
            try:
                j, l = names.index(child), names.index(parent)
            except ValueError:
                raise ValidationError(f"edge refers to unknown node: {edge}") from None
            B[j, l] = float(w)
        noise = tuple(NoiseSpec(**spec) for spec in obj.get("noise", [])) or ()
        return cls(B, noise, tuple(names))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def random_sem(d: int, density: float = 0.3, seed: int = 0,
               weight_range: tuple[float, float] = (0.3, 1.5),
               noise_family: str = "uniform",
               noise_variance_range: tuple[float, float] = (0.5, 1.5),
               require_outcome_parent: bool = True) -> Sem:
    """Random DAG over ``d`` covariates plus a sink outcome.

    Each of the lower-triangular edges is present with probability
    ``density``; weights have random sign and magnitude uniform in
    ``weight_range``.
    """
    if d < 1 or not 0.0 <= density <= 1.0:
        raise ValidationError("need d >= 1 and density in [0, 1]")
    rng = np.random.default_rng(seed)
    D = d + 1
    while True:
        mask = np.tril(rng.random((D, D)) < density, k=-1)
        if not require_outcome_parent or mask[d, :d].any():
            break
    mags = rng.uniform(*weight_range, size=(D, D))
    signs = rng.choice([-1.0, 1.0], size=(D, D))
    B = np.where(mask, mags * signs, 0.0)
    noise = tuple(NoiseSpec(noise_family, float(v))
                  for v in rng.uniform(*noise_variance_range, size=D))
    return Sem(B, noise)


def sample_sem(sem: Sem, n: int, seed: int) -> Dataset:
    """Ancestral sampling of ``n`` rows; the outcome column is ``Y``."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    V = np.zeros((n, sem.n_nodes))
    for j in range(sem.n_nodes):
        V[:, j] = V[:, :j] @ sem.weights[j, :j] + sem.noise_specs[j].sample(rng, n)
    return Dataset(V[:, : sem.d], V[:, sem.d], sem.node_names[: sem.d], sem.node_names[-1])


def _check_index(sem: Sem, i: int) -> int:
    i = int(i)
    if not 0 <= i < sem.d:
        raise ValidationError(f"covariate index {i} out of range for {sem.d} covariates")
    return i


def do_expected_outcome_change(sem: Sem, fix: dict[int, float] | None = None,
                               shift=None) -> float:
    """Exact ``E[Y | do(.)] - E[Y]``.

    ``fix`` maps covariate indices to constants, ``do(X_I = z_I)``.
    ``shift`` is a length-d vector (or an ``(index, delta)`` pair); each
    covariate with a nonzero entry gets ``do(X_s = E[X_s] + delta_s)``.
    """
    if (fix is None) == (shift is None):
        raise ValidationError("give exactly one of fix or shift")
    mu = sem.means()
    if fix is not None:
        if not fix:
            raise ValidationError("fix set must be nonempty")
        assign = {_check_index(sem, i): float(v) for i, v in fix.items()}
    else:
        if isinstance(shift, tuple) and len(shift) == 2 and np.isscalar(shift[0]):
            vec = np.zeros(sem.d)
            vec[_check_index(sem, shift[0])] = float(shift[1])
        else:
            vec = np.asarray(shift, dtype=float).reshape(-1)
            if vec.size != sem.d:
                raise ValidationError(f"shift vector must have length {sem.d}")
        assign = {int(i): mu[i] + vec[i] for i in np.flatnonzero(vec)}
        if not assign:
            return 0.0
    base = np.array([s.mean for s in sem.noise_specs])
    mutilated = sem._propagate(base, assign)
    return float(mutilated[sem.outcome] - mu[sem.outcome])


def optimal_single_shift(sem: Sem, bounds) -> tuple[int | None, float, float]:
    """Best single-covariate do-shift among ``{-b_s, 0, +b_s}``.

    Returns ``(index, delta, improvement)``; ``(None, 0.0, 0.0)`` if nothing
    beats doing nothing.  Ties go to the lowest index.
    """
    b = np.broadcast_to(np.asarray(bounds, dtype=float), (sem.d,))
    if np.any(b < 0):
        raise ValidationError("bounds must be nonnegative")
    best = (None, 0.0, 0.0)
    for s in range(sem.d):
        for delta in (-b[s], b[s]):
            if delta == 0:
                continue
            gain = do_expected_outcome_change(sem, shift=(s, delta))
            if gain > best[2]:
                best = (s, float(delta), gain)
    return best


def condition_a6(sem: Sem, fix_set: Iterable[int]) -> bool:
    """Every parent of ``Y`` is fixed or is not downstream of the fixed set."""
    I = set(int(i) for i in fix_set)
    desc = sem.descendants(I)
    return all(p in I or p not in desc for p in sem.parents(sem.outcome))


def condition_a7(sem: Sem) -> bool:
    """No parent of ``Y`` descends from another parent of ``Y``."""
    pa = sem.parents(sem.outcome)
    return all(p not in sem.descendants(pa - {p}) for p in pa)


def fixing_gains(sem: Sem, fix_set: Sequence[int], values) -> tuple[float, float]:
    """(literal-transformation gain, do-operation gain) for ``X_I = z_I``."""
    I = [_check_index(sem, i) for i in fix_set]
    z = np.asarray(values, dtype=float).reshape(-1)
    if len(I) != z.size:
        raise ValidationError("one value per fixed covariate")
    if not I:
        return 0.0, 0.0
    mu = sem.means()
    bY = sem.outcome_weights
    literal = float(sum(bY[s] * (zs - mu[s]) for s, zs in zip(I, z)))
    base = np.array([s.mean for s in sem.noise_specs])
    mutilated = sem._propagate(base, dict(zip(I, z)))
    do = float(bY @ (mutilated[: sem.d] - mu[: sem.d]))
    return literal, do


def verify_do_equality(sem: Sem, fix_set: Sequence[int], values) -> tuple[float, float, bool]:
    """Both sides of the transformation-vs-do identity, and whether its
    graph condition holds for ``fix_set``."""
    literal, do = fixing_gains(sem, fix_set, values)
    return literal, do, condition_a6(sem, fix_set)


def optimal_fixing_set(sem: Sem, k: int, grid) -> tuple[tuple[int, ...], tuple[float, ...], float]:
    """Exhaustive search for the best literal covariate-fixing gain with
    ``|I| <= k`` and constants on ``grid``; ties go to the smallest set.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1)
    best_val = 0.0
    best: tuple[tuple[int, ...], tuple[float, ...]] = ((), ())
    tol = 1e-12
    for size in range(1, k + 1):
        for I in itertools.combinations(range(sem.d), size):
            for z in itertools.product(grid, repeat=size):
                val, _ = fixing_gains(sem, I, z)
                if val > best_val + tol * max(1.0, abs(best_val)):
                    best_val, best = val, (I, tuple(float(v) for v in z))
    return best[0], best[1], best_val
