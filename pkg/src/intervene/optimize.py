"""Maximization of the conservative intervention objectives.

All optimizers work in the model's (standardized) units and share one inner
routine: proximal gradient ascent with soft-thresholding, box projection and
backtracking.  Continuation runs that routine on a ladder of smoothed
posteriors, warm-starting each stage at the previous solution.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .gain import (
    InterventionConstraints,
    Transformation,
    context_points,
    fix_evaluator,
    shift_evaluator,
)
from .gp import GpPosterior, smoothed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerSettings:
    """Tunables for every optimizer; all have documented defaults."""

    schedule: tuple[float, ...] = (8.0, 4.0, 2.0, 1.0)
    restarts: int = 8
    fix_restarts: int = 8
    max_iter: int = 500
    tol: float = 1e-6
    step0: float = 1.0
    armijo: float = 1e-4
    min_step: float = 1e-12
    support_tol: float = 1e-6
    lambda_max_iter: int = 60
    lambda_ratio: float = 1.01
    merge_tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        sched = tuple(float(s) for s in self.schedule)
        if not sched or sched[-1] != 1.0 or any(s < 1.0 for s in sched):
            raise ValidationError("smoothing schedule must be factors >= 1 ending with 1")
        object.__setattr__(self, "schedule", sched)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "OptimizerSettings":
        names = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, val in mapping.items():
            if key not in names:
                continue
            if key == "schedule":
                if isinstance(val, str):
                    val = [float(v) for v in val.replace(",", " ").split()]
                kwargs[key] = tuple(float(v) for v in val)
            elif key in ("restarts", "fix_restarts", "max_iter", "lambda_max_iter", "seed"):
                kwargs[key] = int(val)
            else:
                kwargs[key] = float(val)
        return cls(**kwargs)


class _StageMemo:
    """Points reached after each continuation stage, per restart.

    A restart that lands within ``tol`` of a point another restart already
    reached at the same stage would retrace that restart's path, so it is
    dropped.
    """

    def __init__(self, tol: float):
        self.tol = tol
        self.seen: dict[tuple, list[np.ndarray]] = {}

    def duplicate(self, key, x) -> bool:
        pts = self.seen.setdefault(key, [])
        for p in pts:
            if np.max(np.abs(p - x)) <= self.tol:
                return True
        pts.append(np.array(x, copy=True))
        return False


DEFAULT_SETTINGS = OptimizerSettings()


@dataclass(frozen=True)
class SparseShiftResult:
    shift: np.ndarray
    support: tuple[int, ...]
    objective_value: float
    lambda_star: float
    iterations: int
    path: tuple[tuple[float, int], ...] = ()

    def to_dict(self, names: Sequence[str] | None = None, shift_scale=None) -> dict:
        shift = self.shift if shift_scale is None else self.shift * shift_scale
        out = {"shift": shift.tolist(), "support": list(self.support),
               "objective_value": self.objective_value, "lambda_star": self.lambda_star,
               "iterations": self.iterations,
               "lambda_path": [[lam, nnz] for lam, nnz in self.path]}
        if names is not None:
            out["support_names"] = [names[i] for i in self.support]
        return out


@dataclass(frozen=True)
class CovFixResult:
    fix_set: tuple[int, ...]
    values: np.ndarray
    objective_value: float
    trace: tuple[tuple[int, float], ...] = field(default=())

    def transformation(self) -> Transformation | None:
        if not self.fix_set:
            return None
        return Transformation.fix(self.fix_set, self.values)


def soft_threshold(v, thresholds) -> np.ndarray:
    """Elementwise ``sign(v) * max(|v| - t, 0)``."""
    v = np.asarray(v, dtype=float)
    t = np.broadcast_to(np.asarray(thresholds, dtype=float), v.shape)
    if np.any(t < 0):
        raise ValidationError("thresholds must be nonnegative")
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def project_box(v, c: InterventionConstraints) -> np.ndarray:
    """Clamp to ``[lower, upper]``; immutable covariates already have zero-width bounds."""
    v = np.asarray(v, dtype=float)
    if v.shape != c.lower.shape:
        raise ValidationError("vector length does not match constraints")
    return np.minimum(np.maximum(v, c.lower), c.upper)


def _prox_ascent(value_grad: Callable, value: Callable, x0, lower, upper, penalty,
                 settings: OptimizerSettings):
    """Maximize ``F(x) - penalty . |x|`` over a box from ``x0``.

    Returns (x, J(x), iterations).  Each iteration backtracks from
    ``settings.step0`` and accepts ``J(x+) >= J(x) + armijo / eta * |x+ - x|^2``.
    Trial points are evaluated with their gradient so an accepted step needs
    no second evaluation; ``value`` is kept for callers that want a cheap
    value-only path.
    """
    x = np.minimum(np.maximum(np.asarray(x0, dtype=float), lower), upper)
    penalized = bool(np.any(penalty))
    F, g = value_grad(x)
    J = F - penalty @ np.abs(x) if penalized else F
    it = 0
    for it in range(1, settings.max_iter + 1):
        eta = settings.step0
        accepted = False
        while eta >= settings.min_step:
            xn = x + eta * g
            if penalized:
                xn = np.sign(xn) * np.maximum(np.abs(xn) - eta * penalty, 0.0)
            xn = np.minimum(np.maximum(xn, lower), upper)
            step = xn - x
            sq = float(step @ step)
            if sq == 0.0:
                break
            Fn, gn = value_grad(xn)
            Jn = Fn - penalty @ np.abs(xn) if penalized else Fn
            if Jn >= J + settings.armijo / eta * sq:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        x, J, g = xn, Jn, gn
        if sq < settings.tol * settings.tol:
            break
    return x, float(J), it


class _ShiftProblem:
    """Shift objective for one context, across a ladder of smoothed models."""

    def __init__(self, model: GpPosterior, context, c: InterventionConstraints, lam: float,
                 settings: OptimizerSettings):
        if lam < 0:
            raise ValidationError("lambda must be nonnegative")
        if c.d != model.d:
            raise ValidationError("constraints dimension does not match the model")
        self.model = model
        self.X, self.individual = context_points(context, model.d)
        self.c = c
        self.lam = float(lam)
        self.settings = settings
        self.penalty = self.lam * c.costs

    def evaluator(self, factor: float = 1.0):
        return shift_evaluator(smoothed(self.model, factor), self.X)

    def run_stage(self, factor: float, x0):
        ev = self.evaluator(factor)
        alpha = self.c.alpha
        return _prox_ascent(lambda d: ev.quantile_and_grad(d, alpha),
                            lambda d: ev.quantile(d, alpha),
                            x0, self.c.lower, self.c.upper, self.penalty, self.settings)

    def value(self, delta) -> float:
        """Regularized objective under the unsmoothed model."""
        return self.evaluator(1.0).quantile(delta, self.c.alpha) - self.penalty @ np.abs(delta)

    def continuation(self, x0, schedule, memo: _StageMemo | None = None):
        """Stage-by-stage ascent; returns None if ``memo`` flags a duplicate path."""
        x, iters = np.asarray(x0, dtype=float), 0
        for i, factor in enumerate(schedule):
            x, _, it = self.run_stage(factor, x)
            iters += it
            if memo is not None and i < len(schedule) - 1 and memo.duplicate((tuple(schedule), i), x):
                return None
        return x, self.value(x), iters

    def starts(self, init, restarts: int, seed: int):
        c = self.c
        x0 = np.zeros(c.d) if init is None else project_box(init, c)
        out = [x0]
        rng = np.random.default_rng(seed)
        for _ in range(restarts):
            out.append(rng.uniform(c.lower, c.upper))
        return out

    def maximize(self, schedule, init=None, restarts=0, seed=0):
        best = None
        iters = 0
        memo = _StageMemo(self.settings.merge_tol)
        for x0 in self.starts(init, restarts, seed):
            found = []
            res = self.continuation(x0, schedule, memo)
            if res is not None:
                found.append(res)
            if tuple(schedule) != (1.0,):
                found.append(self.continuation(x0, (1.0,)))
            for x, J, it in found:
                iters += it
                if best is None or J > best[1]:
                    best = (x, J)
        return best[0], best[1], iters


def proximal_maximize(model: GpPosterior, context, c: InterventionConstraints, lam: float,
                      init=None, settings: OptimizerSettings = DEFAULT_SETTINGS):
    """Local maximization of ``J_lam`` from ``init`` (default: zero shift).

    Returns ``(shift, J_lam(shift))``.
    """
    prob = _ShiftProblem(model, context, c, lam, settings)
    x0 = np.zeros(c.d) if init is None else np.asarray(init, dtype=float)
    x, J, _ = prob.run_stage(1.0, x0)
    return x, J


def continuation_maximize(model: GpPosterior, context, c: InterventionConstraints, lam: float,
                          schedule: Sequence[float] | None = None, init=None,
                          restarts: int = 0, seed: int | None = None,
                          settings: OptimizerSettings = DEFAULT_SETTINGS):
    """Maximize ``J_lam`` by proximal ascent over progressively less smoothed posteriors.

    With ``restarts > 0`` the run is repeated from that many uniform draws in
    the box in addition to ``init``; the best final point is returned.  The
    result is never worse than plain proximal ascent from the same start.
    """
    schedule = tuple(settings.schedule if schedule is None else schedule)
    if not schedule or float(schedule[-1]) != 1.0:
        raise ValidationError("schedule must end with factor 1")
    prob = _ShiftProblem(model, context, c, lam, settings)
    x, J, _ = prob.maximize(schedule, init, restarts, settings.seed if seed is None else seed)
    return x, J


def _support(x, tol) -> tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(np.abs(x) > tol))


def sparse_shift(model: GpPosterior, context, c: InterventionConstraints,
                 settings: OptimizerSettings = DEFAULT_SETTINGS) -> SparseShiftResult:
    """Best shift with at most ``c.cardinality_k`` nonzero entries.

    Binary search over the l1 penalty for the smallest ``lam`` whose maximizer
    is k-sparse, then unpenalized re-optimization on that support.  ``context``
    is a Dataset / 2-d array (population) or a single covariate vector.
    """
    d = c.d
    k = min(c.cardinality_k, d)
    tol = settings.support_tol
    zero = SparseShiftResult(np.zeros(d), (), 0.0, 0.0, 0, ())
    mutable = int(np.sum(c.upper > c.lower))
    if k == 0 or mutable == 0:
        return zero
    unit = c.replace(costs=np.ones(d))
    iters = 0
    path: list[tuple[float, int]] = []

    if k >= mutable:
        prob = _ShiftProblem(model, context, unit, 0.0, settings)
        x, J, iters = prob.maximize(settings.schedule, None, settings.restarts, settings.seed)
        return _finish(prob, x, J, 0.0, iters, (), tol)

    solutions: dict[float, np.ndarray] = {}

    def solve(lam):
        nonlocal iters
        prob = _ShiftProblem(model, context, unit, lam, settings)
        x, _, it = prob.maximize(settings.schedule, None, 0, settings.seed)
        iters += it
        solutions[lam] = x
        nnz = len(_support(x, tol))
        path.append((lam, nnz))
        return nnz

    if solve(0.0) <= k:
        lam_star = 0.0
    else:
        # bracket: double from 1 until the maximizer is all-zero
        lam, count = 1.0, 0
        while solve(lam) > 0 and count < settings.lambda_max_iter:
            lam *= 2.0
            count += 1
        lo = max(l for l, nnz in path if nnz > k)
        above = [l for l, nnz in path if nnz <= k and l > lo]
        hi = min(above) if above else lam
        count = 0
        while count < settings.lambda_max_iter:
            if lo > 0 and hi / lo < settings.lambda_ratio:
                break
            mid = float(np.sqrt(lo * hi)) if lo > 0 else 0.5 * hi
            if solve(mid) <= k:
                hi = mid
            else:
                lo = mid
            count += 1
        lam_star = hi
    _check_monotone(path)

    x_star = solutions[lam_star]
    support = _support(x_star, tol)
    if not support:
        below = [lam for lam, nnz in path if nnz > k]
        if below:
            x_lo = solutions[max(below)]
            support = tuple(sorted(int(i) for i in np.argsort(-np.abs(x_lo), kind="stable")[:k]))
    if not support:
        return SparseShiftResult(np.zeros(d), (), 0.0, lam_star, iters, tuple(path))
    restricted = c.restricted(support)
    prob = _ShiftProblem(model, context, restricted, 0.0, settings)
    x, J, it = prob.maximize(settings.schedule, project_box(x_star, restricted),
                             settings.restarts, settings.seed)
    iters += it
    return _finish(prob, x, J, lam_star, iters, tuple(path), tol)


def _finish(prob: _ShiftProblem, x, J, lam_star, iters, path, tol) -> SparseShiftResult:
    d = x.size
    if J > 0:
        clean = np.where(np.abs(x) > tol, x, 0.0)
        if not np.array_equal(clean, x):
            x, J = clean, prob.value(clean)
    if not J > 0:
        return SparseShiftResult(np.zeros(d), (), 0.0, lam_star, iters, path)
    return SparseShiftResult(x, _support(x, tol), float(J), lam_star, iters, path)


def _check_monotone(path) -> bool:
    ordered = sorted(path)
    ok = True
    for (l1, n1), (l2, n2) in zip(ordered, ordered[1:]):
        if l2 > l1 and n2 > n1:
            log.info("support size increased from %d to %d between lambda=%g and %g",
                     n1, n2, l1, l2)
            ok = False
    return ok


def lambda_support_profile(model: GpPosterior, context, c: InterventionConstraints,
                           lambdas: Sequence[float],
                           settings: OptimizerSettings = DEFAULT_SETTINGS):
    """Support size of the penalized maximizer at each ``lambda``; also whether
    that size is nonincreasing along the grid."""
    unit = c.replace(costs=np.ones(c.d))
    profile = []
    for lam in lambdas:
        prob = _ShiftProblem(model, context, unit, float(lam), settings)
        x, _, _ = prob.maximize(settings.schedule, None, 0, settings.seed)
        profile.append((float(lam), len(_support(x, settings.support_tol))))
    return profile, _check_monotone(profile)


def _maximize_fix(model: GpPosterior, X, indices, lower, upper, alpha, starts,
                  settings: OptimizerSettings):
    """Maximize the covariate-fixing quantile over fixing values in a box.

    Each start runs the continuation ladder and a plain unsmoothed ascent;
    the best final value under the unsmoothed model wins.
    """
    zero = np.zeros(len(indices))
    final = fix_evaluator(model, X, indices)
    routes = [settings.schedule] if settings.schedule == (1.0,) else [settings.schedule, (1.0,)]
    memo = _StageMemo(settings.merge_tol)
    best = None
    for z0 in starts:
        for schedule in routes:
            z = np.asarray(z0, dtype=float)
            for i, factor in enumerate(schedule):
                ev = fix_evaluator(smoothed(model, factor), X, indices)
                z, _, _ = _prox_ascent(lambda v: ev.quantile_and_grad(v, alpha),
                                       lambda v: ev.quantile(v, alpha),
                                       z, lower, upper, zero, settings)
                if i < len(schedule) - 1 and memo.duplicate((schedule, i), z):
                    z = None
                    break
            if z is None:
                continue
            J = final.quantile(z, alpha)
            if best is None or J > best[0]:
                best = (J, z)
    return best


def forward_stepwise_covfix(model: GpPosterior, data, k: int, ranges, alpha: float,
                            settings: OptimizerSettings = DEFAULT_SETTINGS) -> CovFixResult:
    """Greedy selection of at most ``k`` covariates to fix at shared constants.

    ``ranges`` is a (d, 2) array of feasible intervals for each covariate's
    fixing value.  A covariate is added only if it strictly improves the best
    objective so far.
    """
    X, _ = context_points(data, model.d)
    d = model.d
    ranges = np.asarray(ranges, dtype=float)
    if ranges.shape != (d, 2) or np.any(ranges[:, 0] > ranges[:, 1]):
        raise ValidationError("ranges must be a (d, 2) array of valid intervals")
    if k < 0:
        raise ValidationError("k must be nonnegative")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    k = min(k, d)
    rng = np.random.default_rng(settings.seed)
    selected: list[int] = []
    values = np.zeros(0)
    best_J = 0.0
    trace = []

    def starts(idx, warm):
        lo, hi = ranges[idx, 0], ranges[idx, 1]
        out = [np.clip(warm, lo, hi)]
        for _ in range(settings.fix_restarts):
            out.append(rng.uniform(lo, hi))
        return out, lo, hi

    while len(selected) < k:
        round_best = None
        for s in range(d):
            if s in selected:
                continue
            idx = selected + [s]
            warm = np.concatenate([values, [ranges[s].mean()]])
            st, lo, hi = starts(idx, warm)
            J, z = _maximize_fix(model, X, idx, lo, hi, alpha, st, settings)
            if round_best is None or J > round_best[0]:
                round_best = (J, s, z)
        if round_best is None or not round_best[0] > best_J:
            break
        best_J, s_star, values = round_best
        selected.append(s_star)
        trace.append((s_star, float(best_J)))

    if selected:
        st, lo, hi = starts(selected, values)
        J, z = _maximize_fix(model, X, selected, lo, hi, alpha, st, settings)
        if J > best_J:
            best_J, values = J, z
    return CovFixResult(tuple(selected), np.asarray(values, dtype=float), float(best_J),
                        tuple(trace))


def personalized_intervention(model: GpPosterior, x, c: InterventionConstraints,
                              settings: OptimizerSettings = DEFAULT_SETTINGS):
    """Best conservative transformation for one individual.

    Returns ``(Transformation, objective)``; the transformation is the identity
    (zero shift) unless some feasible move has a positive quantile gain.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != model.d or not np.all(np.isfinite(x)):
        raise ValidationError(f"x must be a finite vector of length {model.d}")
    mutable = int(np.sum(c.upper > c.lower))
    if c.cardinality_k < mutable:
        res = sparse_shift(model, x, c, settings)
        delta, J = res.shift, res.objective_value
    else:
        prob = _ShiftProblem(model, x, c, 0.0, settings)
        delta, J, _ = prob.maximize(settings.schedule, None, settings.restarts, settings.seed)
    if not J > 0:
        return Transformation.shift_by(np.zeros(model.d)), 0.0
    delta = np.where(np.abs(delta) > settings.support_tol, delta, 0.0)
    return Transformation.shift_by(delta), float(J)
