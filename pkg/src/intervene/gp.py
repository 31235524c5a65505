"""Gaussian Process regression with an ARD squared-exponential kernel.

The prior mean is the zero function, so inputs and outcomes are expected to
be standardized (see :func:`intervene.dataset_io.standardize`).
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, lapack, solve_triangular
from scipy.optimize import minimize

from . import kernels
from .dataset_io import Dataset
from .errors import NumericalError, ValidationError

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class GpHyperparams:
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=float).reshape(-1)
        vals = np.concatenate([ls, [self.signal_variance, self.noise_variance]])
        if ls.size == 0 or not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValidationError(f"hyperparameters must be finite and positive: {vals}")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def d(self) -> int:
        return self.lengthscales.size

    @property
    def inv_ls2(self) -> np.ndarray:
        return 1.0 / self.lengthscales ** 2

    def to_dict(self) -> dict:
        return {"lengthscales": self.lengthscales.tolist(),
                "signal_variance": self.signal_variance,
                "noise_variance": self.noise_variance}

    @classmethod
    def from_dict(cls, obj: dict) -> "GpHyperparams":
        return cls(obj["lengthscales"], obj["signal_variance"], obj["noise_variance"])


@dataclass(frozen=True, eq=False)
class GpPosterior:
    """A GP conditioned on training data.

    ``factored_gram`` is the lower Cholesky factor of ``K + (noise + jitter) I``
    and ``weight_vector`` solves that system against the training outcomes.
    Instances are immutable and safe to share between threads.
    """

    hyperparams: GpHyperparams
    training_inputs: np.ndarray
    training_outputs: np.ndarray
    factored_gram: np.ndarray
    weight_vector: np.ndarray
    jitter: float = 0.0
    ard: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.training_inputs.shape[0]

    @property
    def d(self) -> int:
        return self.training_inputs.shape[1]

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``(K + noise I)^{-1} b``."""
        if self.n == 0:
            return np.zeros_like(b)
        return cho_solve((self.factored_gram, True), b, check_finite=False)

    def inverse(self) -> np.ndarray:
        """Explicit ``(K + noise I)^{-1}``, computed once; matvecs against it are
        much cheaper than repeated triangular solves inside optimizer loops."""
        inv = self._cache.get("inverse")
        if inv is None:
            inv, info = lapack.dpotri(self.factored_gram, lower=1)
            if info != 0:
                raise NumericalError(f"dpotri failed with info={info}")
            inv = np.tril(inv) + np.tril(inv, -1).T
            inv.setflags(write=False)
            self._cache["inverse"] = inv
        return inv

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """``L^{-1} b`` for the lower Cholesky factor ``L``."""
        if self.n == 0:
            return np.zeros_like(b)
        return solve_triangular(self.factored_gram, b, lower=True, check_finite=False)

    def cross(self, points: np.ndarray) -> np.ndarray:
        """Kernel matrix between ``points`` (rows) and the training inputs."""
        h = self.hyperparams
        return kernels.ard_cross(points, self.training_inputs, h.inv_ls2, h.signal_variance)

    def mean(self, points: np.ndarray) -> np.ndarray:
        points = _as_points(points, self.d)
        if self.n == 0:
            return np.zeros(points.shape[0])
        return self.cross(points) @ self.weight_vector

    def variance(self, points: np.ndarray) -> np.ndarray:
        points = _as_points(points, self.d)
        prior = np.full(points.shape[0], self.hyperparams.signal_variance)
        if self.n == 0:
            return prior
        v = self.half_solve(self.cross(points).T)
        return np.maximum(prior - (v * v).sum(0), 0.0)

    def checksum(self) -> str:
        return training_checksum(self.training_inputs, self.training_outputs)


def training_checksum(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype=float).tobytes())
    h.update(np.ascontiguousarray(y, dtype=float).tobytes())
    return h.hexdigest()


def _as_points(points, d: int) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P.reshape(1, -1)
    if P.ndim != 2 or P.shape[1] != d:
        raise ValidationError(f"expected points with {d} columns, got shape {np.shape(points)}")
    if not np.all(np.isfinite(P)):
        raise ValidationError("query points must be finite")
    return P


def ard_kernel(x, x2, h: GpHyperparams) -> float:
    """``sf2 * exp(-0.5 * sum_s ((x_s - x2_s) / l_s)**2)``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    if x.size != h.d or x2.size != h.d:
        raise ValidationError(f"kernel inputs must have length {h.d}")
    z = (x - x2) / h.lengthscales
    return h.signal_variance * float(np.exp(-0.5 * z @ z))


def gram_matrix(X: np.ndarray, h: GpHyperparams) -> np.ndarray:
    K = kernels.ard_cross(X, X, h.inv_ls2, h.signal_variance)
    return 0.5 * (K + K.T)


def _factorize(K: np.ndarray, noise: float) -> tuple[np.ndarray, float]:
    """Cholesky of ``K + noise I`` with escalating relative jitter."""
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    A = K + noise * np.eye(n)
    scale = float(np.mean(np.diag(A)))
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-9):
        jitter = rel * scale
        A.flat[:: n + 1] = np.diag(K) + noise + jitter
        try:
            return cholesky(A, lower=True, check_finite=False), jitter
        except LinAlgError:
            rel *= 10.0
    raise NumericalError("Cholesky factorization failed after jitter escalation")


def condition(X, y, h: GpHyperparams, ard: bool = True) -> GpPosterior:
    """Condition the zero-mean GP prior with hyperparameters ``h`` on (X, y)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, h.d)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[1] != h.d:
        raise ValidationError(f"training inputs have {X.shape[1]} columns, hyperparameters {h.d}")
    if X.shape[0] != y.shape[0]:
        raise ValidationError("training inputs and outputs differ in length")
    L, jitter = _factorize(gram_matrix(X, h), h.noise_variance)
    alpha = cho_solve((L, True), y, check_finite=False) if X.shape[0] else np.zeros(0)
    X = X.copy()
    y = y.copy()
    for a in (X, y, L, alpha):
        a.setflags(write=False)
    return GpPosterior(h, X, y, L, alpha, jitter, ard)


def prior(h: GpHyperparams) -> GpPosterior:
    """A posterior with no training data, i.e. the prior itself."""
    return condition(np.zeros((0, h.d)), np.zeros(0), h)


def log_marginal_likelihood(data: Dataset, h: GpHyperparams) -> float:
    """``log N(y | 0, K + noise I)`` evaluated through the Cholesky factor."""
    if data.n < 1:
        raise ValidationError("log marginal likelihood needs at least one observation")
    if data.d != h.d:
        raise ValidationError(f"data has {data.d} covariates, hyperparameters {h.d}")
    L, _ = _factorize(gram_matrix(data.covariates, h), h.noise_variance)
    y = data.outcomes
    alpha = cho_solve((L, True), y, check_finite=False)
    n = y.size
    return float(-0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi))


def _unpack(theta: np.ndarray, d: int, ard: bool) -> GpHyperparams:
    ls = np.exp(theta[:d]) if ard else np.full(d, np.exp(theta[0]))
    return GpHyperparams(ls, np.exp(theta[-2]), np.exp(theta[-1]))


def _pack(h: GpHyperparams, ard: bool) -> np.ndarray:
    ls = np.log(h.lengthscales) if ard else np.log(h.lengthscales[:1])
    return np.concatenate([ls, [np.log(h.signal_variance), np.log(h.noise_variance)]])


def lml_and_grad(X: np.ndarray, y: np.ndarray, theta: np.ndarray, ard: bool = True):
    """Log marginal likelihood and its gradient in log-hyperparameter space.

    ``theta`` holds ``log l`` (d entries, or one if ``ard`` is False), then
    ``log sf2`` and ``log noise``.
    """
    n, d = X.shape
    h = _unpack(theta, d, ard)
    Kf = gram_matrix(X, h)
    L, _ = _factorize(Kf, h.noise_variance)
    alpha = cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi)
    Kinv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NumericalError("inverse from Cholesky factor failed")
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha, alpha) - Kinv
    WK = W * Kf
    g_ls = 0.5 * h.inv_ls2 * kernels.lml_grad_terms(X, WK)
    if not ard:
        g_ls = np.array([g_ls.sum()])
    g_sf = 0.5 * WK.sum()
    g_sn = 0.5 * h.noise_variance * np.trace(W)
    return float(lml), np.concatenate([g_ls, [g_sf, g_sn]])


@dataclass(frozen=True)
class FitConfig:
    """Multi-start settings for marginal-likelihood maximization."""

    restarts: int = 5
    seed: int = 0
    ard: bool = True
    init_lengthscale_range: tuple[float, float] = (0.1, 10.0)
    init_noise_range: tuple[float, float] = (1e-3, 1.0)
    lengthscale_bounds: tuple[float, float] = (1e-2, 1e4)
    signal_variance_bounds: tuple[float, float] = (1e-4, 1e3)
    noise_variance_bounds: tuple[float, float] = (1e-6, 1e2)
    max_iter: int = 200


def initial_guesses(d: int, config: FitConfig) -> list[GpHyperparams]:
    rng = np.random.default_rng(config.seed)
    lo, hi = np.log(config.init_lengthscale_range)
    nlo, nhi = np.log(config.init_noise_range)
    out = []
    for _ in range(max(1, config.restarts)):
        ls = np.exp(rng.uniform(lo, hi, size=d if config.ard else 1))
        if not config.ard:
            ls = np.full(d, ls[0])
        out.append(GpHyperparams(ls, 1.0, float(np.exp(rng.uniform(nlo, nhi)))))
    return out


def fit(data: Dataset, config: FitConfig | None = None) -> GpPosterior:
    """Fit hyperparameters by multi-start L-BFGS-B ascent on the log marginal likelihood."""
    config = config or FitConfig()
    if data.n < 2:
        raise ValidationError("fit needs at least 2 observations")
    X, y, d = data.covariates, data.outcomes, data.d
    nl = d if config.ard else 1
    bounds = ([tuple(np.log(config.lengthscale_bounds))] * nl
              + [tuple(np.log(config.signal_variance_bounds)),
                 tuple(np.log(config.noise_variance_bounds))])

    def negative(theta):
        try:
            val, grad = lml_and_grad(X, y, theta, config.ard)
        except (NumericalError, ValidationError):
            return 1e25, np.zeros_like(theta)
        return -val, -grad

    best_theta, best_val = None, -np.inf
    for h0 in initial_guesses(d, config):
        theta0 = np.clip(_pack(h0, config.ard), [b[0] for b in bounds], [b[1] for b in bounds])
        f0, _ = negative(theta0)
        candidates = [(-f0, theta0)]
        try:
            res = minimize(negative, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": config.max_iter})
            candidates.append((-float(res.fun), np.asarray(res.x)))
        except (ValueError, FloatingPointError) as exc:
            log.warning("hyperparameter restart failed: %s", exc)
        for val, theta in candidates:
            if val > -1e25 and val > best_val:
                best_val, best_theta = val, theta
    if best_theta is None:
        raise NumericalError("every hyperparameter restart failed to factorize")
    return condition(X, y, _unpack(best_theta, d, config.ard), ard=config.ard)


def posterior_mean_cov(model: GpPosterior, points) -> tuple[np.ndarray, np.ndarray]:
    """Joint posterior mean vector and covariance matrix at ``points``."""
    P = _as_points(points, model.d)
    h = model.hyperparams
    Kss = gram_matrix(P, h)
    if model.n == 0:
        return np.zeros(P.shape[0]), Kss
    Ksn = model.cross(P)
    mean = Ksn @ model.weight_vector
    v = model.half_solve(Ksn.T)
    cov = Kss - v.T @ v
    cov = 0.5 * (cov + cov.T)
    diag = np.diag(cov).copy()
    cov.flat[:: P.shape[0] + 1] = np.maximum(diag, 0.0)
    return mean, cov


def smoothed(model: GpPosterior, factor: float) -> GpPosterior:
    """Refit the same data with every lengthscale multiplied by ``factor``."""
    if not factor >= 1.0:
        raise ValidationError(f"smoothing factor must be >= 1, got {factor}")
    if factor == 1.0:
        return model
    key = ("smoothed", float(factor))
    cached = model._cache.get(key)
    if cached is None:
        h = model.hyperparams
        h2 = GpHyperparams(h.lengthscales * factor, h.signal_variance, h.noise_variance)
        cached = condition(model.training_inputs, model.training_outputs, h2, model.ard)
        model._cache[key] = cached
    return cached


def model_to_dict(model: GpPosterior, scaling=None, data_path: str | None = None) -> dict:
    out = {
        "kernel": "ard" if model.ard else "iso",
        "hyperparams": model.hyperparams.to_dict(),
        "n": model.n,
        "d": model.d,
        "training_checksum": model.checksum(),
    }
    if scaling is not None:
        out["scaling"] = scaling.to_dict()
    if data_path is not None:
        out["data_path"] = str(data_path)
    return out


def model_from_dict(obj: dict, data: Dataset) -> GpPosterior:
    """Rebuild a fitted model from its JSON form and the (standardized) training data."""
    try:
        h = GpHyperparams.from_dict(obj["hyperparams"])
        ard = obj.get("kernel", "ard") == "ard"
        expected = obj["training_checksum"]
    except KeyError as exc:
        raise ValidationError(f"model file missing field {exc}") from None
    model = condition(data.covariates, data.outcomes, h, ard)
    if model.checksum() != expected:
        raise ValidationError("training data does not match the model's checksum")
    return model
