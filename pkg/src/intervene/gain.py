"""Posterior gain distributions and quantile objectives for interventions.

Two routes compute the same quantities:

* :func:`individual_gain` / :func:`population_gain` build the joint posterior
  covariance over the pre- and post-intervention points and contract it.
  They are the reference route.
* :class:`ShiftEvaluator` and :class:`FixEvaluator` give the same mean and
  variance plus analytic gradients in O(n m) per call by pre-computing the
  kernel blocks that do not depend on the intervention.  The optimizers call
  these thousands of times.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from . import kernels
from .dataset_io import Dataset
from .errors import ValidationError
from .gp import GpPosterior, _as_points, posterior_mean_cov

VARIANCE_FLOOR = 1e-12
# log-magnitude budget for the rank-one rescaling used by ShiftEvaluator
_EXP_BUDGET = 300.0


@dataclass(frozen=True)
class GainDistribution:
    mean: float
    variance: float

    def quantile(self, alpha: float) -> float:
        return gaussian_quantile(self.mean, self.variance, alpha)


@dataclass(frozen=True)
class InterventionConstraints:
    """Feasible shifts: box ``[lower, upper]``, at most ``cardinality_k``
    nonzero entries, per-unit costs, immutable covariates and quantile level."""

    lower: np.ndarray
    upper: np.ndarray
    cardinality_k: int | None = None
    costs: np.ndarray | None = None
    immutable_mask: np.ndarray | None = None
    alpha: float = 0.05

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        d = lo.size
        if hi.size != d or d == 0:
            raise ValidationError("lower and upper bounds must be non-empty and equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValidationError("bounds must be finite")
        if np.any(lo > 0) or np.any(hi < 0):
            raise ValidationError("bounds must satisfy lower <= 0 <= upper (zero shift feasible)")
        mask = (np.zeros(d, dtype=bool) if self.immutable_mask is None
                else np.array(self.immutable_mask, dtype=bool).reshape(-1))
        if mask.size != d:
            raise ValidationError("immutable mask has wrong length")
        lo[mask] = 0.0
        hi[mask] = 0.0
        costs = np.ones(d) if self.costs is None else np.array(self.costs, dtype=float).reshape(-1)
        if costs.size != d or np.any(costs <= 0) or not np.all(np.isfinite(costs)):
            raise ValidationError("costs must be finite, positive, one per covariate")
        k = d if self.cardinality_k is None else int(self.cardinality_k)
        if k < 0:
            raise ValidationError("cardinality_k must be nonnegative")
        k = min(k, d)
        if not 0.0 < self.alpha <= 0.5:
            raise ValidationError(f"alpha must lie in (0, 0.5], got {self.alpha}")
        for a in (lo, hi, mask, costs):
            a.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "immutable_mask", mask)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "cardinality_k", k)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def d(self) -> int:
        return self.lower.size

    @classmethod
    def box(cls, d: int, bound, k=None, alpha=0.05, immutable=None, costs=None):
        b = np.broadcast_to(np.asarray(bound, dtype=float), (d,))
        return cls(-b, b, k, costs, immutable, alpha)

    def replace(self, **changes) -> "InterventionConstraints":
        fields = dict(lower=self.lower, upper=self.upper, cardinality_k=self.cardinality_k,
                      costs=self.costs, immutable_mask=self.immutable_mask, alpha=self.alpha)
        fields.update(changes)
        return InterventionConstraints(**fields)

    def restricted(self, support) -> "InterventionConstraints":
        """Same constraints with every covariate outside ``support`` frozen at zero."""
        keep = np.zeros(self.d, dtype=bool)
        keep[list(support)] = True
        return self.replace(immutable_mask=self.immutable_mask | ~keep)


@dataclass(frozen=True, eq=False)
class Transformation:
    """``T(x) = x + shift`` or ``T(x)`` with covariates ``fix_indices`` set to ``fix_values``."""

    kind: str
    shift: np.ndarray | None = None
    fix_indices: tuple[int, ...] = ()
    fix_values: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind == "shift":
            s = np.array(self.shift, dtype=float).reshape(-1)
            if s.size == 0 or not np.all(np.isfinite(s)):
                raise ValidationError("shift must be a finite, non-empty vector")
            object.__setattr__(self, "shift", s)
        elif self.kind == "covariate_fixing":
            idx = tuple(int(i) for i in self.fix_indices)
            vals = np.array(self.fix_values, dtype=float).reshape(-1)
            if not idx or len(idx) != vals.size or len(set(idx)) != len(idx):
                raise ValidationError("covariate fixing needs distinct indices, one value each")
            if not np.all(np.isfinite(vals)):
                raise ValidationError("fixing values must be finite")
            object.__setattr__(self, "fix_indices", idx)
            object.__setattr__(self, "fix_values", vals)
        else:
            raise ValidationError(f"unknown transformation kind {self.kind!r}")

    @classmethod
    def shift_by(cls, delta, label: str = "") -> "Transformation":
        return cls("shift", shift=delta, label=label)

    @classmethod
    def fix(cls, indices, values, label: str = "") -> "Transformation":
        return cls("covariate_fixing", fix_indices=tuple(indices), fix_values=values, label=label)

    def apply(self, X) -> np.ndarray:
        X = np.array(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if self.kind == "shift":
            if self.shift.size != X.shape[1]:
                raise ValidationError("shift length does not match covariate dimension")
            out = X + self.shift
        else:
            if max(self.fix_indices) >= X.shape[1] or min(self.fix_indices) < 0:
                raise ValidationError("fixing index out of range")
            out = X.copy()
            out[:, list(self.fix_indices)] = self.fix_values
        return out[0] if single else out

    def is_identity(self) -> bool:
        return self.kind == "shift" and not np.any(self.shift)

    def support(self) -> tuple[int, ...]:
        if self.kind == "shift":
            return tuple(int(i) for i in np.flatnonzero(self.shift))
        return self.fix_indices

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        if self.kind == "shift":
            out = {"kind": "shift", "shift": self.shift.tolist()}
        else:
            out = {"kind": "covariate_fixing", "fix_indices": list(self.fix_indices),
                   "fix_values": self.fix_values.tolist()}
        if names is not None:
            out["support_names"] = [names[i] for i in self.support()]
        if self.label:
            out["label"] = self.label
        return out

    @classmethod
    def from_dict(cls, obj: dict, names: Sequence[str] | None = None) -> "Transformation":
        kind = obj.get("kind")
        label = obj.get("label", "")
        if kind == "shift":
            shift = obj.get("shift")
            if isinstance(shift, dict):
                if names is None:
                    raise ValidationError("named shift needs column names")
                vec = np.zeros(len(names))
                for key, val in shift.items():
                    vec[_index(key, names)] = float(val)
                shift = vec
            return cls.shift_by(shift, label)
        if kind in ("covariate_fixing", "fix"):
            if "values" in obj and isinstance(obj["values"], dict):
                if names is None:
                    raise ValidationError("named fixing needs column names")
                items = list(obj["values"].items())
                return cls.fix([_index(k, names) for k, _ in items],
                               [float(v) for _, v in items], label)
            return cls.fix(obj["fix_indices"], obj["fix_values"], label)
        raise ValidationError(f"unknown transformation kind {kind!r}")


def _index(key, names) -> int:
    if isinstance(key, int) or (isinstance(key, str) and key.isdigit() and key not in names):
        return int(key)
    try:
        return list(names).index(key)
    except ValueError:
        raise ValidationError(f"unknown covariate {key!r}") from None


def gaussian_quantile(mean: float, variance: float, alpha: float) -> float:
    """``mean + Phi^{-1}(alpha) * sqrt(variance)``."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    if variance < -1e-8:
        raise ValidationError(f"negative variance {variance}")
    if variance < VARIANCE_FLOOR:
        return float(mean)
    return float(mean + ndtri(alpha) * np.sqrt(variance))


def context_points(context, d: int) -> tuple[np.ndarray, bool]:
    """Rows of the population (Dataset or 2-d array) or a single individual (1-d)."""
    if isinstance(context, Dataset):
        X = context.covariates
        individual = False
    else:
        X = np.asarray(context, dtype=float)
        individual = X.ndim == 1
    X = _as_points(X, d)
    if X.shape[0] == 0:
        raise ValidationError("population context has no rows")
    return X, individual


def _gain_from_points(model: GpPosterior, T: np.ndarray, X: np.ndarray) -> GainDistribution:
    m = X.shape[0]
    if not np.all(np.isfinite(T)):
        raise ValidationError("transformed points are not finite")
    mean, cov = posterior_mean_cov(model, np.vstack([T, X]))
    a = np.concatenate([np.full(m, 1.0 / m), np.full(m, -1.0 / m)])
    gm = float(a @ mean)
    gv = float(a @ cov @ a)
    return GainDistribution(gm, max(gv, 0.0))


def individual_gain(model: GpPosterior, x, t) -> GainDistribution:
    """Posterior of ``f(t) - f(x)``."""
    x = _as_points(x, model.d)
    t = _as_points(t, model.d)
    if x.shape[0] != 1 or t.shape[0] != 1:
        raise ValidationError("individual_gain takes single points")
    if np.array_equal(x, t):
        return GainDistribution(0.0, 0.0)
    return _gain_from_points(model, t, x)


def population_gain(model: GpPosterior, data, t: Transformation) -> GainDistribution:
    """Posterior of the empirical average gain ``mean_i f(T(x_i)) - f(x_i)``."""
    X, _ = context_points(data, model.d)
    if t.is_identity():
        return GainDistribution(0.0, 0.0)
    return _gain_from_points(model, t.apply(X), X)


def _gain(model, context, t: Transformation) -> GainDistribution:
    X, individual = context_points(context, model.d)
    if individual:
        return individual_gain(model, X[0], t.apply(X[0]))
    return population_gain(model, X, t)


def objective(model: GpPosterior, context, t: Transformation,
              c: InterventionConstraints, lam: float = 0.0) -> float:
    """Posterior ``alpha``-quantile of the gain minus ``lam * sum_s cost_s |shift_s|``."""
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    penalty = 0.0
    if t.kind == "shift":
        if t.shift.size != c.d:
            raise ValidationError("shift length does not match constraints")
        if np.any(t.shift[c.immutable_mask]):
            raise ValidationError("shift moves an immutable covariate")
        penalty = lam * float(c.costs @ np.abs(t.shift))
    elif lam > 0:
        raise ValidationError("the cost penalty applies to shift interventions only")
    return _gain(model, context, t).quantile(c.alpha) - penalty


def _quantile_and_grad(mean, var, g_mean, g_var, alpha):
    if var < VARIANCE_FLOOR:
        return float(mean), g_mean
    z = ndtri(alpha)
    sd = np.sqrt(var)
    return float(mean + z * sd), g_mean + (0.5 * z / sd) * g_var


def _key(X: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(X).tobytes()).hexdigest()


class _Explicit:
    """Kernel block held as an explicit matrix."""

    def __init__(self, M):
        self.M = M

    def matvec(self, c):
        return self.M @ c

    def rmatvec(self, r):
        return r @ self.M


class _RankOne:
    """``scale * diag(u) K0 diag(v)`` without forming the product."""

    def __init__(self, K0, u, v, scale):
        self.K0, self.u, self.v, self.scale = K0, u, v, scale

    def matvec(self, c):
        return self.scale * self.u * (self.K0 @ (self.v * c))

    def rmatvec(self, r):
        return self.scale * self.v * ((self.u * r) @ self.K0)


class ShiftEvaluator:
    """Gain mean/variance and gradients for shifts ``T(x) = x + delta`` of a
    fixed set of rows (the population, or one individual).

    Under a shift every pairwise difference between transformed points is
    unchanged, so the transformed-transformed covariance block is constant.
    The transformed-vs-training block is the pre-computed block rescaled by
    ``exp(-(x_i - x_j) . L delta)``, which factors into row and column terms.
    """

    def __init__(self, model: GpPosterior, X: np.ndarray):
        self.model = model
        self.X = np.ascontiguousarray(X, dtype=float)
        h = model.hyperparams
        self.L = h.inv_ls2
        self.sf2 = h.signal_variance
        m = self.X.shape[0]
        self.w = 1.0 / m
        self.center = self.X.mean(0)
        self.K0 = model.cross(self.X) if model.n else np.zeros((m, 0))
        self.pop_is_train = (model.n == m and np.array_equal(self.X, model.training_inputs))
        Kpp = self.K0 if self.pop_is_train else kernels.ard_cross(self.X, self.X, self.L, self.sf2)
        self.Kpp = Kpp
        self.wKw = self.w * self.w * float(Kpp.sum())
        self.bX = self.w * self.K0.sum(0)
        self.muX = self.w * float((self.K0 @ model.weight_vector).sum()) if model.n else 0.0
        Xt = model.training_inputs
        allpts = np.vstack([self.X, Xt]) if model.n else self.X
        span2 = (np.ptp(allpts, axis=0) ** 2 * self.L).sum()
        self._rank_one_ok = 0.5 * span2 < 2.0 * _EXP_BUDGET
        self.Xc = self.X - self.center
        self.Xtc = Xt - self.center

    def _blocks(self, delta):
        """Return (transformed-vs-train, transformed-vs-population) blocks."""
        T = self.X + delta
        model = self.model
        if self._rank_one_ok:
            v = self.L * delta
            a = self.Xc @ v
            b = self.Xtc @ v
            q = 0.5 * float(delta @ v)
            if max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), q) < _EXP_BUDGET:
                u = np.exp(-a)
                scale = np.exp(-q)
                KT = _RankOne(self.K0, u, np.exp(b), scale)
                if self.pop_is_train:
                    return T, KT, KT
                return T, KT, _RankOne(self.Kpp, u, np.exp(a), scale)
        KT = _Explicit(model.cross(T) if model.n else np.zeros((T.shape[0], 0)))
        if self.pop_is_train:
            return T, KT, KT
        return T, KT, _Explicit(kernels.ard_cross(T, self.X, self.L, self.sf2))

    def gain(self, delta) -> GainDistribution:
        mean, var, _, _ = self.evaluate(delta, gradient=False)
        return GainDistribution(mean, var)

    def evaluate(self, delta, gradient: bool = True):
        """Mean, variance and (optionally) their gradients with respect to ``delta``."""
        delta = np.asarray(delta, dtype=float)
        identity = not np.any(delta)
        if identity and not gradient:
            return 0.0, 0.0, None, None
        model, w = self.model, self.w
        T, KT, KTX = self._blocks(delta)
        rho = np.full(self.X.shape[0], w)
        if model.n:
            alpha = model.weight_vector
            bT = KT.rmatvec(rho)
            mean = float(bT @ alpha) - self.muX
            r = bT - self.bX
            beta = model.inverse() @ r
            explained = float(r @ beta)
        else:
            mean, explained = 0.0, 0.0
            bT = np.zeros(0)
        sTX = bT if self.pop_is_train else KTX.rmatvec(rho)
        cross = w * float(sTX.sum())
        var = max(2.0 * self.wKw - 2.0 * cross - explained, 0.0)
        if identity:
            mean, var = 0.0, 0.0
        if not gradient:
            return mean, var, None, None
        L = self.L
        if model.n:
            Xt = model.training_inputs
            # sum_i rho_i sum_j c_j M_ij (q_j - t_i) L for weight vectors c
            def pull(M, s, c, Q):
                Mc = M.matvec(c)
                return ((s * c) @ Q - (rho * Mc) @ T) * L
            g_mean = pull(KT, bT, alpha, Xt)
            if self.pop_is_train:
                g_var = -2.0 * pull(KT, bT, w + beta, Xt)
            else:
                g_var = (-2.0 * w * pull(KTX, sTX, np.ones(self.X.shape[0]), self.X)
                         - 2.0 * pull(KT, bT, beta, Xt))
        else:
            d = T.shape[1]
            g_mean = np.zeros(d)
            Mc = KTX.matvec(np.ones(self.X.shape[0]))
            g_var = -2.0 * w * ((sTX @ self.X) - (rho * Mc) @ T) * L
        return mean, var, g_mean, g_var

    def quantile_and_grad(self, delta, alpha):
        mean, var, gm, gv = self.evaluate(delta)
        return _quantile_and_grad(mean, var, gm, gv, alpha)

    def quantile(self, delta, alpha):
        mean, var, _, _ = self.evaluate(delta, gradient=False)
        return gaussian_quantile(mean, var, alpha)


class FixEvaluator:
    """Gain mean/variance and gradients for setting covariates ``indices`` to
    constants ``z`` in every row.

    The kernel between a transformed row and any other point factors into a
    part over the untouched covariates (constant) and a part over the fixed
    covariates that depends on the other point only.
    """

    def __init__(self, model: GpPosterior, X: np.ndarray, indices: Sequence[int]):
        self.model = model
        self.X = np.ascontiguousarray(X, dtype=float)
        self.idx = np.asarray(list(indices), dtype=int)
        if self.idx.size == 0:
            raise ValidationError("FixEvaluator needs at least one fixed covariate")
        h = model.hyperparams
        m = self.X.shape[0]
        self.w = 1.0 / m
        self.L = h.inv_ls2
        self.LI = self.L[self.idx]
        L_rest = self.L.copy()
        L_rest[self.idx] = 0.0
        sf2 = h.signal_variance
        self.pop_is_train = (model.n == m and np.array_equal(self.X, model.training_inputs))
        Krest_pp = kernels.ard_cross(self.X, self.X, L_rest, sf2)
        self.wKTTw = self.w * self.w * float(Krest_pp.sum())
        self.s0p = self.w * Krest_pp.sum(0)
        Kpp = kernels.ard_cross(self.X, self.X, self.L, sf2)
        self.wKXXw = self.w * self.w * float(Kpp.sum())
        if model.n:
            Xt = model.training_inputs
            Krest = Krest_pp if self.pop_is_train else kernels.ard_cross(self.X, Xt, L_rest, sf2)
            self.s0 = self.w * Krest.sum(0)
            K0 = Kpp if self.pop_is_train else model.cross(self.X)
            self.bX = self.w * K0.sum(0)
            self.muX = float(self.bX @ model.weight_vector)
            self.XtI = Xt[:, self.idx]
        self.XpI = self.X[:, self.idx]
        self._terms = None

    @staticmethod
    def _factor(z, QI, LI):
        diff = z[None, :] - QI
        e = np.exp(-0.5 * (diff * diff) @ LI)
        return e, diff

    def evaluate(self, z, gradient: bool = True):
        z = np.ascontiguousarray(z, dtype=float).reshape(-1)
        model, w = self.model, self.w
        if model.n:
            if self._terms is None:
                self._terms = (np.ascontiguousarray(self.XtI), np.ascontiguousarray(self.LI),
                               np.ascontiguousarray(self.s0),
                               np.ascontiguousarray(self.s0p if self.pop_is_train
                                                    else np.zeros(model.n)),
                               np.ascontiguousarray(model.weight_vector),
                               np.ascontiguousarray(self.bX), model.inverse())
            m1, explained, sp, g_mean, g_expl, g_sp = kernels.fix_terms(z, *self._terms,
                                                                        gradient)
            mean = m1 - self.muX
        else:
            mean, explained, sp = 0.0, 0.0, 0.0
            g_mean = g_expl = g_sp = np.zeros(z.size)
        if not (model.n and self.pop_is_train):
            ep, dp = self._factor(z, self.XpI, self.LI)
            sp = float(self.s0p @ ep)
            if gradient:
                g_sp = -((self.s0p * ep) @ dp) * self.LI
        var = max(self.wKTTw - 2.0 * w * sp + self.wKXXw - explained, 0.0)
        if not gradient:
            return mean, var, None, None
        # d e_j / d z = -e_j (z - q_j) L_I
        return mean, var, g_mean, -2.0 * w * g_sp - g_expl

    def quantile_and_grad(self, z, alpha):
        mean, var, gm, gv = self.evaluate(z)
        return _quantile_and_grad(mean, var, gm, gv, alpha)

    def quantile(self, z, alpha):
        mean, var, _, _ = self.evaluate(z, gradient=False)
        return gaussian_quantile(mean, var, alpha)


def shift_evaluator(model: GpPosterior, X: np.ndarray) -> ShiftEvaluator:
    key = ("shift_eval", _key(X))
    ev = model._cache.get(key)
    if ev is None:
        ev = model._cache[key] = ShiftEvaluator(model, X)
    return ev


def fix_evaluator(model: GpPosterior, X: np.ndarray, indices) -> FixEvaluator:
    key = ("fix_eval", _key(X), tuple(int(i) for i in indices))
    ev = model._cache.get(key)
    if ev is None:
        ev = model._cache[key] = FixEvaluator(model, X, indices)
    return ev


def objective_gradient(model: GpPosterior, context, shift, c: InterventionConstraints) -> np.ndarray:
    """Gradient of the smooth term (the posterior quantile) with respect to the shift."""
    X, _ = context_points(context, model.d)
    shift = np.asarray(shift, dtype=float).reshape(-1)
    if shift.size != model.d:
        raise ValidationError(f"shift must have length {model.d}")
    _, grad = shift_evaluator(model, X).quantile_and_grad(shift, c.alpha)
    return grad


@dataclass(frozen=True)
class RankedCandidate:
    candidate: Transformation
    score: float
    gain: GainDistribution
    recommended: bool = field(default=False)


def rank_candidates(model: GpPosterior, data, candidates: Sequence[Transformation],
                    alpha: float) -> list[RankedCandidate]:
    """Score each candidate by its population quantile gain, best first.

    Candidates scoring <= 0 are marked as not recommended.
    """
    if not candidates:
        raise ValidationError("no candidates to rank")
    ranked = []
    for t in candidates:
        g = population_gain(model, data, t)
        score = g.quantile(alpha)
        ranked.append(RankedCandidate(t, score, g, score > 0))
    order = sorted(range(len(ranked)), key=lambda i: (-ranked[i].score, i))
    return [ranked[i] for i in order]
