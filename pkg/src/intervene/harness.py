"""Seeded simulation suites, the SEM misspecification study, linear-regression
baselines and report emission.

Every trial derives its own RNG from ``SeedSequence((seed, trial, n))`` so the
alpha variants and optimizer methods of one trial share a dataset and a fit.
Models are fit on standardized data; shifts and improvements are reported in
original units and true improvements come from the known generating process.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import gp
from .dataset_io import Dataset, standardize
from .errors import InterveneError, NumericalError, ValidationError
from .gain import InterventionConstraints, Transformation
from .optimize import (
    DEFAULT_SETTINGS,
    OptimizerSettings,
    forward_stepwise_covfix,
    personalized_intervention,
    sparse_shift,
)
from .sem import Sem, do_expected_outcome_change, optimal_single_shift, random_sem, sample_sem

log = logging.getLogger(__name__)

RELATIONSHIPS = ("linear_0.3_0.7", "quadratic_bowl", "product", "custom_sem")
INTERVENTIONS = ("shift", "personalized", "covfix")
METHODS = ("smoothed", "standard")
RECORD_FIELDS = ("trial", "n", "alpha", "method", "improvement", "harmful", "support",
                 "recovered", "objective", "status")


# ---------------------------------------------------------------- truths

class _Truth:
    """Known generating relationship with closed-form expected gains."""

    support: tuple[int, ...] = (0, 1)

    def f(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def population(self, t: Transformation) -> float:
        raise NotImplementedError

    def individual(self, x: np.ndarray, t: Transformation) -> float:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return float(self.f(t.apply(x))[0] - self.f(x)[0])


def _moments(t: Transformation, s: int) -> tuple[float, float]:
    """First and second moment of coordinate ``s`` of ``T(X)``, X ~ Unif[-1, 1]^d."""
    if t.kind == "shift":
        m = t.shift[s]
        return m, 1.0 / 3.0 + m * m
    if s in t.fix_indices:
        z = t.fix_values[t.fix_indices.index(s)]
        return z, z * z
    return 0.0, 1.0 / 3.0


class _Linear(_Truth):
    coef = (0.3, 0.7)

    def f(self, X):
        return 0.3 * X[:, 0] + 0.7 * X[:, 1]

    def population(self, t):
        return float(sum(a * _moments(t, s)[0] for s, a in enumerate(self.coef)))


class _Quadratic(_Truth):
    def f(self, X):
        return 1.0 - X[:, 0] ** 2 - X[:, 1] ** 2

    def population(self, t):
        return float(sum(1.0 / 3.0 - _moments(t, s)[1] for s in (0, 1)))


class _Product(_Truth):
    def f(self, X):
        return X[:, 0] * X[:, 1]

    def population(self, t):
        m0 = _moments(t, 0)[0]
        m1 = _moments(t, 1)[0]
        return float(m0 * m1)


class _SemTruth(_Truth):
    """Do-operation semantics for population moves, literal ``f*`` for individuals."""

    def __init__(self, sem: Sem):
        self.sem = sem
        self.support = tuple(sorted(sem.parents(sem.outcome)))

    def f(self, X):
        return X @ self.sem.outcome_weights

    def population(self, t):
        if t.kind == "shift":
            return do_expected_outcome_change(self.sem, shift=t.shift)
        return do_expected_outcome_change(self.sem, fix=dict(zip(t.fix_indices, t.fix_values)))


def _truth(relationship: str, sem: Sem | None = None) -> _Truth:
    if relationship == "linear_0.3_0.7":
        return _Linear()
    if relationship == "quadratic_bowl":
        return _Quadratic()
    if relationship == "product":
        return _Product()
    if relationship == "custom_sem":
        if sem is None:
            raise ValidationError("custom_sem relationship needs a SEM")
        return _SemTruth(sem)
    raise ValidationError(f"unknown relationship {relationship!r}; choose from {RELATIONSHIPS}")


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class SimConfig:
    """One simulation suite.  ``bound`` is the per-covariate box half-width in
    original units; the covariate-fixing range is the observed data range."""

    relationship: str = "linear_0.3_0.7"
    intervention: str = "shift"
    d: int = 10
    n_grid: tuple[int, ...] = (100, 400)
    trials: int = 20
    noise_sd: float = 0.2
    bound: float = 1.0
    k: int = 2
    alphas: tuple[float, ...] = (0.05, 0.5)
    methods: tuple[str, ...] = ("smoothed",)
    seed: int = 0
    fit_restarts: int = 5
    sem: Sem | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in np.atleast_1d(self.n_grid)))
        object.__setattr__(self, "alphas", tuple(float(a) for a in np.atleast_1d(self.alphas)))
        methods = (self.methods,) if isinstance(self.methods, str) else self.methods
        object.__setattr__(self, "methods", tuple(methods))
        if self.relationship not in RELATIONSHIPS:
            raise ValidationError(f"unknown relationship {self.relationship!r}")
        if self.intervention not in INTERVENTIONS:
            raise ValidationError(f"unknown intervention {self.intervention!r}")
        if any(m not in METHODS for m in self.methods) or not self.methods:
            raise ValidationError(f"methods must be drawn from {METHODS}")
        if self.trials < 1:
            raise ValidationError("trials must be >= 1")
        if not self.n_grid or min(self.n_grid) < 10:
            raise ValidationError("every n in n_grid must be >= 10")
        if self.relationship == "custom_sem":
            if self.sem is None:
                raise ValidationError("custom_sem needs a sem")
            object.__setattr__(self, "d", self.sem.d)
        elif self.d < 2:
            raise ValidationError("the built-in relationships need d >= 2")
        if self.noise_sd < 0 or self.bound < 0 or self.k < 0:
            raise ValidationError("noise_sd, bound and k must be nonnegative")
        for a in self.alphas:
            if not 0.0 < a <= 0.5:
                raise ValidationError(f"alpha must lie in (0, 0.5], got {a}")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SimConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(mapping) - known - {"sem_spec"}
        if unknown:
            raise ValidationError(f"unknown simulation keys: {sorted(unknown)}")
        kwargs = {k: v for k, v in mapping.items() if k in known and k != "sem"}
        for key in ("n_grid", "alphas", "methods"):
            if isinstance(kwargs.get(key), str):
                kwargs[key] = [v for v in kwargs[key].replace(",", " ").split()]
        if "n_grid" in kwargs:
            kwargs["n_grid"] = [int(v) for v in kwargs["n_grid"]]
        if "alphas" in kwargs:
            kwargs["alphas"] = [float(v) for v in kwargs["alphas"]]
        for key in ("d", "trials", "k", "seed", "fit_restarts"):
            if key in kwargs:
                kwargs[key] = int(kwargs[key])
        for key in ("noise_sd", "bound"):
            if key in kwargs:
                kwargs[key] = float(kwargs[key])
        spec = mapping.get("sem", mapping.get("sem_spec"))
        if spec is not None:
            kwargs["sem"] = resolve_sem(spec)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "sem"}
        out["n_grid"], out["alphas"] = list(self.n_grid), list(self.alphas)
        out["methods"] = list(self.methods)
        if self.sem is not None:
            out["sem"] = self.sem.to_dict()
        return out


def resolve_sem(spec, trial: int | None = None) -> Sem:
    """A Sem from a Sem, a serialized SEM dict, or a random-DAG spec
    ``{"d", "density", "seed"}`` (a fresh DAG per trial if ``trial`` is given)."""
    if isinstance(spec, Sem):
        return spec
    if isinstance(spec, (str, Path)):
        spec = json.loads(Path(spec).read_text())
    if not isinstance(spec, dict):
        raise ValidationError("SEM spec must be a mapping")
    if "nodes" in spec:
        return Sem.from_dict(spec)
    if "d" in spec:
        seed = int(spec.get("seed", 0))
        if trial is not None:
            seed = int(np.random.SeedSequence((seed, trial)).generate_state(1)[0])
        return random_sem(int(spec["d"]), float(spec.get("density", 0.3)), seed,
                          noise_family=spec.get("noise", "uniform"))
    raise ValidationError("SEM spec needs either 'nodes'/'edges' or a random spec with 'd'")


# ---------------------------------------------------------------- report

def _summarize(records: Sequence[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        groups.setdefault((r["n"], r["alpha"], r["method"]), []).append(r)
    out = []
    for (n, alpha, method), rows in sorted(groups.items()):
        ok = [r for r in rows if r["status"] == "ok"]
        imp = np.array([r["improvement"] for r in ok], dtype=float)
        out.append({
            "n": n, "alpha": alpha, "method": method, "trials": len(rows),
            "failures": len(rows) - len(ok),
            "mean_improvement": float(imp.mean()) if imp.size else float("nan"),
            "q05_improvement": float(np.quantile(imp, 0.05)) if imp.size else float("nan"),
            "harmful_count": int(sum(r["harmful"] for r in ok)),
            "support_recovery_rate": (float(np.mean([r["recovered"] for r in ok]))
                                      if ok else float("nan")),
            "mean_optimum": (float(np.mean([r["optimum"] for r in ok]))
                             if ok and "optimum" in ok[0] else None),
        })
    return out


@dataclass
class SimReport:
    """Per-trial records plus the summary derived from them."""

    records: list[dict]
    config: dict
    metadata: dict = field(default_factory=dict)

    @property
    def summary(self) -> list[dict]:
        return _summarize(self.records)

    def group(self, n=None, alpha=None, method=None) -> dict:
        match = [s for s in self.summary
                 if (n is None or s["n"] == n) and (alpha is None or s["alpha"] == alpha)
                 and (method is None or s["method"] == method)]
        if len(match) != 1:
            raise KeyError(f"{len(match)} summary rows match n={n} alpha={alpha} method={method}")
        return match[0]

    def rows(self, n=None, alpha=None, method=None) -> list[dict]:
        return [r for r in self.records
                if (n is None or r["n"] == n) and (alpha is None or r["alpha"] == alpha)
                and (method is None or r["method"] == method)]

    def write(self, out_dir, name: str) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out_dir / f"{name}.csv", out_dir / f"{name}_summary.json"
        fields = list(RECORD_FIELDS) + [k for k in self.records[0] if k not in RECORD_FIELDS] \
            if self.records else list(RECORD_FIELDS)
        with csv_path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for r in self.records:
                writer.writerow({k: _csv_cell(r.get(k)) for k in fields})
        json_path.write_text(json.dumps({"config": self.config, "metadata": self.metadata,
                                         "summary": self.summary}, indent=2))
        return csv_path, json_path


def _csv_cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


_PARSERS = {"trial": int, "n": int, "alpha": float, "improvement": float,
            "harmful": lambda s: bool(int(s)), "recovered": lambda s: bool(int(s)),
            "objective": float, "optimum": float}


def load_report(csv_path, json_path) -> SimReport:
    """Read a written report and check its summary against the per-trial log."""
    with Path(csv_path).open(newline="") as fh:
        records = [{k: _PARSERS.get(k, str)(v) for k, v in row.items()}
                   for row in csv.DictReader(fh)]
    meta = json.loads(Path(json_path).read_text())
    report = SimReport(records, meta.get("config", {}), meta.get("metadata", {}))
    stored = meta.get("summary", [])
    fresh = report.summary
    if len(stored) != len(fresh):
        raise ValidationError("summary row count does not match the per-trial log")
    for a, b in zip(stored, fresh):
        for key, val in b.items():
            other = a.get(key)
            if isinstance(val, float) and isinstance(other, (int, float)):
                if not (np.isnan(val) and np.isnan(other)) and not np.isclose(val, other,
                                                                               rtol=1e-12):
                    raise ValidationError(f"summary field {key} disagrees with per-trial log")
            elif val != other and not (val is None and other is None):
                raise ValidationError(f"summary field {key} disagrees with per-trial log")
    return report


# ---------------------------------------------------------------- trials

def _method_settings(method: str, base: OptimizerSettings) -> OptimizerSettings:
    if method == "standard":
        return replace(base, schedule=(1.0,), restarts=0, fix_restarts=0)
    return base


def _support_str(support) -> str:
    return ";".join(str(int(s)) for s in sorted(support))


def _fit(data: Dataset, restarts: int, seed: int):
    std, info = standardize(data)
    model = gp.fit(std, gp.FitConfig(restarts=restarts, seed=seed))
    return std, info, model


def _draw(config: SimConfig, truth: _Truth, rng: np.random.Generator, n: int,
          sem: Sem | None) -> Dataset:
    if sem is not None:
        return sample_sem(sem, n, int(rng.integers(2**32)))
    X = rng.uniform(-1.0, 1.0, size=(n, config.d))
    y = truth.f(X) + config.noise_sd * rng.standard_normal(n)
    return Dataset(X, y)


def _one_intervention(config: SimConfig, truth: _Truth, model, std: Dataset, info,
                      x0_std, x0, alpha: float, settings: OptimizerSettings):
    """Run the configured optimizer; returns (transformation in original units, objective)."""
    d = config.d
    sc, mu = info.covariate_scales, info.covariate_means
    if config.intervention == "covfix":
        lo = std.covariates.min(axis=0)
        hi = std.covariates.max(axis=0)
        res = forward_stepwise_covfix(model, std, config.k, np.column_stack([lo, hi]),
                                      alpha, settings)
        if not res.fix_set:
            return None, 0.0
        idx = list(res.fix_set)
        t = Transformation.fix(idx, np.asarray(res.values) * sc[idx] + mu[idx])
        return t, res.objective_value * info.outcome_scale
    c = InterventionConstraints.box(d, config.bound / sc, config.k, alpha)
    if config.intervention == "personalized":
        t_std, J = personalized_intervention(model, x0_std, c, settings)
        delta = t_std.shift
    else:
        res = sparse_shift(model, std, c, settings)
        delta, J = res.shift, res.objective_value
    delta = np.clip(delta * sc, -config.bound, config.bound)
    if not np.any(delta):
        return None, 0.0
    return Transformation.shift_by(delta), J * info.outcome_scale


def run_simulation(config: SimConfig,
                   settings: OptimizerSettings = DEFAULT_SETTINGS) -> SimReport:
    """Every (trial, n) pair draws data, fits one GP and runs each alpha and method on it."""
    records: list[dict] = []
    durations = []
    for n in config.n_grid:
        for trial in range(config.trials):
            t0 = time.perf_counter()
            ss = np.random.SeedSequence((config.seed, trial, n))
            rng = np.random.default_rng(ss)
            sem = config.sem
            truth = _truth(config.relationship, sem)
            data = _draw(config, truth, rng, n, sem)
            x0 = (data.covariates[int(rng.integers(n))] if sem is not None
                  else rng.uniform(-1.0, 1.0, size=config.d))
            base = {"trial": trial, "n": n}
            try:
                std, info, model = _fit(data, config.fit_restarts,
                                        int(rng.integers(2**31)))
            except InterveneError as exc:
                log.warning("trial %d, n=%d: fit failed: %s", trial, n, exc)
                for alpha in config.alphas:
                    for method in config.methods:
                        records.append(_failed(base, alpha, method))
                continue
            x0_std = (x0 - info.covariate_means) / info.covariate_scales
            for alpha in config.alphas:
                for method in config.methods:
                    try:
                        t, J = _one_intervention(config, truth, model, std, info, x0_std, x0,
                                                 alpha, _method_settings(method, settings))
                    except (NumericalError, np.linalg.LinAlgError) as exc:
                        log.warning("trial %d, n=%d: optimizer failed: %s", trial, n, exc)
                        records.append(_failed(base, alpha, method))
                        continue
                    if t is None:
                        imp = 0.0
                    elif config.intervention == "personalized":
                        imp = truth.individual(x0, t)
                    else:
                        imp = truth.population(t)
                    support = () if t is None else t.support()
                    records.append({**base, "alpha": alpha, "method": method,
                                    "improvement": float(imp),
                                    "harmful": bool(t is not None and imp < 0),
                                    "support": _support_str(support),
                                    "recovered": tuple(sorted(support)) == truth.support,
                                    "objective": float(J), "status": "ok"})
            durations.append(time.perf_counter() - t0)
    meta = {"seeds": [config.seed], "trial_seconds": durations,
            "total_seconds": float(sum(durations))}
    return SimReport(records, config.to_dict(), meta)


def _failed(base, alpha, method) -> dict:
    return {**base, "alpha": alpha, "method": method, "improvement": float("nan"),
            "harmful": False, "support": "", "recovered": False,
            "objective": float("nan"), "status": "failed"}


def run_sem_study(sem_spec, n_grid=(500,), trials: int = 20, shift_bound_sd: float = 1.0,
                  seed: int = 0, alphas: Sequence[float] = (0.05,),
                  methods: Sequence[str] = ("smoothed",), fit_restarts: int = 5,
                  settings: OptimizerSettings = DEFAULT_SETTINGS) -> SimReport:
    """1-sparse population shifts on SEM data, scored as do-operations.

    A random-DAG spec gives each trial its own SEM.  Each covariate's shift is
    bounded by ``shift_bound_sd`` times its analytic standard deviation, and
    every record carries the analytic single-shift optimum under that box.
    """
    if shift_bound_sd < 0:
        raise ValidationError("shift_bound_sd must be nonnegative")
    n_grid = tuple(int(n) for n in np.atleast_1d(n_grid))
    if trials < 1 or not n_grid or min(n_grid) < 10:
        raise ValidationError("need trials >= 1 and every n >= 10")
    per_trial = isinstance(sem_spec, dict) and "nodes" not in sem_spec
    records: list[dict] = []
    durations = []
    for n in n_grid:
        for trial in range(trials):
            t0 = time.perf_counter()
            sem = resolve_sem(sem_spec, trial if per_trial else None)
            bounds = shift_bound_sd * sem.stds()[: sem.d]
            opt_index, opt_delta, optimum = optimal_single_shift(sem, bounds)
            rng = np.random.default_rng(np.random.SeedSequence((seed, trial, n)))
            data = sample_sem(sem, n, int(rng.integers(2**32)))
            base = {"trial": trial, "n": n}
            try:
                std, info, model = _fit(data, fit_restarts, int(rng.integers(2**31)))
            except InterveneError as exc:
                log.warning("trial %d, n=%d: fit failed: %s", trial, n, exc)
                for alpha in alphas:
                    for method in methods:
                        records.append({**_failed(base, alpha, method), "optimum": optimum,
                                        "optimal_index": _support_str(
                                            () if opt_index is None else (opt_index,))})
                continue
            sc = info.covariate_scales
            for alpha in alphas:
                for method in methods:
                    c = InterventionConstraints.box(sem.d, bounds / sc, 1, alpha)
                    res = sparse_shift(model, std, c, _method_settings(method, settings))
                    delta = np.clip(res.shift * sc, -bounds, bounds)
                    imp = do_expected_outcome_change(sem, shift=delta) if np.any(delta) else 0.0
                    support = tuple(int(i) for i in np.flatnonzero(delta))
                    records.append({
                        **base, "alpha": float(alpha), "method": method,
                        "improvement": float(imp),
                        "harmful": bool(support and imp < 0),
                        "support": _support_str(support),
                        "recovered": support == (() if opt_index is None else (opt_index,)),
                        "objective": float(res.objective_value * info.outcome_scale),
                        "status": "ok", "optimum": float(optimum),
                        "optimal_index": _support_str(() if opt_index is None else (opt_index,)),
                        "shift": ";".join(repr(float(v)) for v in delta),
                    })
            durations.append(time.perf_counter() - t0)
    config = {"sem_spec": sem_spec.to_dict() if isinstance(sem_spec, Sem) else sem_spec,
              "n_grid": list(n_grid), "trials": trials, "shift_bound_sd": shift_bound_sd,
              "seed": seed, "alphas": list(alphas), "methods": list(methods)}
    meta = {"seeds": [seed], "trial_seconds": durations, "total_seconds": float(sum(durations))}
    return SimReport(records, config, meta)


# ---------------------------------------------------------------- baselines

@dataclass(frozen=True)
class BaselineProposal:
    method: str
    index: int | None
    coefficients: np.ndarray
    p_values: np.ndarray


def _ols(X: np.ndarray, y: np.ndarray):
    """Coefficients (without intercept) and two-sided t-test p-values."""
    n, p = X.shape
    A = np.column_stack([np.ones(n), X])
    if n <= p + 1:
        raise ValidationError(f"multivariate regression needs n > d + 1 (n={n}, d={p})")
    if np.linalg.matrix_rank(A) < p + 1:
        raise ValidationError("design matrix is rank deficient")
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ beta
    dof = n - p - 1
    sigma2 = resid @ resid / dof
    se = np.sqrt(sigma2 * np.diag(np.linalg.inv(A.T @ A)))
    coef, se = beta[1:], se[1:]
    pvals = np.ones(p)
    nz = se > 0
    pvals[nz] = 2.0 * stats.t.sf(np.abs(coef[nz] / se[nz]), dof)
    pvals[~nz & (np.abs(coef) > 1e-12 * max(1.0, np.abs(y).max()))] = 0.0
    return coef, pvals


def _pick(coef, pvals, significant, sds, candidates, sign) -> int | None:
    best, best_val = None, 0.0
    for s in candidates:
        effect = sign * coef[s] * sds[s]
        if significant[s] and effect > best_val:
            best, best_val = int(s), effect
    return best


def baseline_linear_pickers(data: Dataset, candidates: Sequence[int] | None = None,
                            direction: str = "up", level: float = 0.05) -> dict:
    """Linear-regression proposals of a single covariate to move.

    ``multivariate`` fits one OLS model and keeps coefficients significant by
    t-test; ``marginal`` fits each covariate alone and applies a
    Benjamini-Hochberg correction.  Among significant covariates whose sign
    helps in ``direction``, the largest effect of a one-sd move wins; None
    means no proposal.
    """
    if direction not in ("up", "down"):
        raise ValidationError("direction must be 'up' or 'down'")
    X, y = data.covariates, data.outcomes
    n, d = X.shape
    cand = list(range(d)) if candidates is None else [int(c) for c in candidates]
    if any(not 0 <= c < d for c in cand):
        raise ValidationError("candidate index out of range")
    sign = 1.0 if direction == "up" else -1.0
    sds = X.std(axis=0, ddof=1)

    coef, pv = _ols(X, y)
    multi = BaselineProposal("multivariate", _pick(coef, pv, pv < level, sds, cand, sign),
                             coef, pv)

    mcoef, mp = np.zeros(d), np.ones(d)
    for s in range(d):
        if sds[s] == 0:
            continue
        c1, p1 = _ols(X[:, [s]], y)
        mcoef[s], mp[s] = c1[0], p1[0]
    adjusted = np.ones(d)
    adjusted[cand] = stats.false_discovery_control(mp[cand], method="bh")
    marginal = BaselineProposal("marginal", _pick(mcoef, adjusted, adjusted < level, sds,
                                                  cand, sign), mcoef, adjusted)
    return {"multivariate": multi, "marginal": marginal}


def sim_config_preset(name: str) -> dict:
    """Named configurations; ``personalized_k10`` mirrors a high-dimensional
    sparse personalized setting (k = 10, box +-2)."""
    presets = {
        "linear_shift": {"relationship": "linear_0.3_0.7", "intervention": "shift"},
        "quadratic_covfix": {"relationship": "quadratic_bowl", "intervention": "covfix"},
        "product_personalized": {"relationship": "product", "intervention": "personalized"},
        "personalized_k10": {"intervention": "personalized", "k": 10, "bound": 2.0},
    }
    if name not in presets:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(presets)}")
    return dict(presets[name])
