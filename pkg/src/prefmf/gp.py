"""Exact Gaussian-process regression: closed-form posterior and evidence fitting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .kernels import JITTER_REL, SQRT5, KernelParams, kernel_matrix, kernel_matrix_from_sq, sq_dists_per_dim

LOG2PI = np.log(2.0 * np.pi)

#: Jitter escalation ladder (relative to the mean Gram diagonal).
JITTER_LADDER = (1e-10, 1e-8, 1e-6)


class FactorizationError(RuntimeError):
    """Raised when a Gram matrix cannot be factorized even with escalated jitter."""


@dataclass(frozen=True)
class GaussianPrediction:
    """Joint Gaussian over test points."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError("covariance shape must match test-point count")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def variance(self) -> np.ndarray:
        return np.clip(np.diag(self.covariance), 0.0, None)

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True)
class NumericalDataset:
    """Inputs with noisy scalar targets."""

    inputs: np.ndarray
    targets: np.ndarray
    noise_sd: float

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_1d(np.asarray(self.targets, dtype=float))
        if X.shape[0] != y.shape[0]:
            raise ValueError("row count of inputs must equal target length")
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.targets.shape[0]


MeanFn = float | Callable[[np.ndarray], np.ndarray]


def _mean_at(mean: MeanFn, X: np.ndarray) -> np.ndarray:
    if callable(mean):
        return np.asarray(mean(X), dtype=float).reshape(X.shape[0])
    return np.full(X.shape[0], float(mean))


def chol_with_jitter(gram: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with jitter escalation before giving up."""
    scale = float(np.mean(np.diag(gram))) if gram.shape[0] else 1.0
    scale = max(scale, 1e-300)
    eye = np.eye(gram.shape[0])
    for rel in JITTER_LADDER:
        try:
            return cholesky(gram + rel * scale * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"Gram matrix not positive definite after jitter up to {JITTER_LADDER[-1]:g} x diag scale"
    )


def condition_closed_form(
    data: NumericalDataset,
    params: KernelParams,
    mean: MeanFn,
    test: np.ndarray,
) -> GaussianPrediction:
    """Posterior over test points under a Gaussian observation model.

    Implements the standard conjugate update with observation covariance
    k(X, X) + noise_sd^2 I. With an empty dataset the prior is returned.
    """
    test = np.atleast_2d(np.asarray(test, dtype=float))
    prior_mean = _mean_at(mean, test)
    prior_cov = kernel_matrix(test, test, params)
    if len(data) == 0:
        return GaussianPrediction(prior_mean, prior_cov)

    X = data.inputs
    K = kernel_matrix(X, X, params) + data.noise_sd**2 * np.eye(len(data))
    L = chol_with_jitter(K)
    Ks = kernel_matrix(X, test, params)
    resid = data.targets - _mean_at(mean, X)
    alpha = cho_solve((L, True), resid, check_finite=False)
    V = solve_triangular(L, Ks, lower=True, check_finite=False)
    mean_post = prior_mean + Ks.T @ alpha
    cov_post = prior_cov - V.T @ V
    return GaussianPrediction(mean_post, 0.5 * (cov_post + cov_post.T))


def conditional_at_test(
    train_inputs: np.ndarray,
    latent_values: np.ndarray,
    params: KernelParams,
    test: np.ndarray,
    mean: MeanFn = 0.0,
) -> GaussianPrediction:
    """Noise-free conditional of a GP given exact latent values at train inputs."""
    test = np.atleast_2d(np.asarray(test, dtype=float))
    prior_mean = _mean_at(mean, test)
    prior_cov = kernel_matrix(test, test, params)
    train_inputs = np.atleast_2d(np.asarray(train_inputs, dtype=float))
    g = np.atleast_1d(np.asarray(latent_values, dtype=float))
    if train_inputs.shape[0] == 0:
        return GaussianPrediction(prior_mean, prior_cov)
    if g.shape[0] != train_inputs.shape[0]:
        raise ValueError("latent value count must match train input count")

    K = kernel_matrix(train_inputs, train_inputs, params)
    L = chol_with_jitter(K)
    Ks = kernel_matrix(train_inputs, test, params)
    alpha = cho_solve((L, True), g - _mean_at(mean, train_inputs), check_finite=False)
    V = solve_triangular(L, Ks, lower=True, check_finite=False)
    cov = prior_cov - V.T @ V
    return GaussianPrediction(prior_mean + Ks.T @ alpha, 0.5 * (cov + cov.T))


def log_marginal_likelihood(
    data: NumericalDataset,
    params: KernelParams,
    mean: MeanFn = 0.0,
) -> float:
    """Gaussian log evidence of the targets under the GP prior plus noise."""
    if len(data) == 0:
        raise ValueError("dataset must be non-empty")
    K = kernel_matrix(data.inputs, data.inputs, params) + data.noise_sd**2 * np.eye(len(data))
    L = chol_with_jitter(K)
    resid = data.targets - _mean_at(mean, data.inputs)
    alpha = cho_solve((L, True), resid, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * resid @ alpha - 0.5 * logdet - 0.5 * len(data) * LOG2PI)


def _lml_and_grad(theta: np.ndarray, sq: np.ndarray, y: np.ndarray, kind: str) -> tuple[float, np.ndarray]:
    """Evidence and gradient in log-parameter space.

    theta = [log lengthscales (d), log signal_sd, log noise_sd]; zero prior mean.
    """
    d = sq.shape[0]
    ls = np.exp(theta[:d])
    sig_sd = np.exp(theta[d])
    noise_sd = np.exp(theta[d + 1])
    params = KernelParams(lengthscales=ls, signal_variance=sig_sd**2, kind=kind)
    n = y.shape[0]
    Kf = kernel_matrix_from_sq(sq, params)
    K = Kf + noise_sd**2 * np.eye(n)
    try:
        L = cholesky(K + JITTER_REL * max(float(np.mean(np.diag(K))), 1e-300) * np.eye(n), lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return -np.inf, np.zeros_like(theta)
    alpha = cho_solve((L, True), y, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    lml = -0.5 * y @ alpha - 0.5 * logdet - 0.5 * n * LOG2PI

    # dL/dtheta_j = 0.5 tr((alpha alpha^T - K^-1) dK/dtheta_j)
    Kinv = cho_solve((L, True), np.eye(n), check_finite=False)
    W = np.outer(alpha, alpha) - Kinv
    grad = np.empty_like(theta)
    if kind == "se":
        for j in range(d):
            dK = Kf * (sq[j] / ls[j] ** 2)
            grad[j] = 0.5 * np.sum(W * dK)
    else:
        r2 = np.tensordot(1.0 / ls**2, sq, axes=1)
        r = np.sqrt(np.maximum(r2, 0.0))
        pref = (5.0 / 3.0) * (1.0 + SQRT5 * r) * sig_sd**2 * np.exp(-SQRT5 * r)
        for j in range(d):
            grad[j] = 0.5 * np.sum(W * (pref * sq[j] / ls[j] ** 2))
    grad[d] = 0.5 * np.sum(W * (2.0 * Kf))
    grad[d + 1] = 0.5 * np.trace(W) * 2.0 * noise_sd**2
    return float(lml), grad


@dataclass(frozen=True)
class FitConfig:
    n_starts: int = 8
    seed: int = 0
    kind: str = "se"
    maxiter: int = 200
    noise_floor: float = 1e-3


def fit_point_estimate(data: NumericalDataset, config: FitConfig = FitConfig()) -> tuple[KernelParams, float]:
    """Evidence-maximizing kernel parameters and noise scale.

    Multistart L-BFGS in log-parameter space; the best optimized start wins,
    so the returned evidence dominates every initialization.
    """
    if len(data) < 2:
        raise ValueError("need at least 2 observations to fit hyperparameters")
    X, y = data.inputs, data.targets
    d = X.shape[1]
    sq = sq_dists_per_dim(X, X)
    y_scale = max(float(np.std(y)), 1e-8)
    in_scale = np.maximum(X.max(axis=0) - X.min(axis=0), 1e-8)

    rng = np.random.default_rng(config.seed)
    lo = np.concatenate([np.log(in_scale * 1e-2), [np.log(y_scale * 1e-3)], [np.log(y_scale * config.noise_floor)]])
    hi = np.concatenate([np.log(in_scale * 1e2), [np.log(y_scale * 1e2)], [np.log(y_scale * 1e1)]])
    bounds = list(zip(lo, hi))

    best_val, best_theta = -np.inf, None
    for s in range(config.n_starts):
        theta0 = np.concatenate(
            [
                np.log(in_scale * 0.3) + 0.7 * rng.standard_normal(d),
                [np.log(y_scale) + 0.5 * rng.standard_normal()],
                [np.log(y_scale * 0.1) + 0.5 * rng.standard_normal()],
            ]
        )
        theta0 = np.clip(theta0, lo, hi)
        res = minimize(
            lambda t: tuple(-v for v in _lml_and_grad(t, sq, y, config.kind)),
            theta0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": config.maxiter},
        )
        val = -res.fun
        if np.isfinite(val) and val > best_val:
            best_val, best_theta = val, res.x
    if best_theta is None:
        raise FactorizationError("all evidence-maximization starts failed to factorize")
    ls = np.exp(best_theta[:d])
    params = KernelParams(lengthscales=ls, signal_variance=float(np.exp(2 * best_theta[d])), kind=config.kind)
    return params, float(np.exp(best_theta[d + 1]))


@dataclass(frozen=True)
class FittedGP:
    """A point-estimate GP with target standardization folded in.

    Stores the standardized-space dataset; predictions can be produced in
    either standardized or raw target units.
    """

    inputs: np.ndarray
    targets_std: np.ndarray
    params: KernelParams
    noise_sd: float
    y_shift: float
    y_scale: float

    @property
    def dataset(self) -> NumericalDataset:
        return NumericalDataset(self.inputs, self.targets_std, self.noise_sd)

    def predict(self, test: np.ndarray, raw: bool = True) -> GaussianPrediction:
        pred = condition_closed_form(self.dataset, self.params, 0.0, test)
        if not raw:
            return pred
        return GaussianPrediction(
            pred.mean * self.y_scale + self.y_shift,
            pred.covariance * self.y_scale**2,
        )


def fit_gp(inputs: np.ndarray, targets: np.ndarray, config: FitConfig = FitConfig()) -> FittedGP:
    """Standardize targets, maximize evidence, return the fitted model."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.atleast_1d(np.asarray(targets, dtype=float))
    shift = float(np.mean(y))
    scale = float(np.std(y))
    if scale < 1e-12:
        scale = 1.0
    y_std = (y - shift) / scale
    # noise_sd on the dataset is a placeholder; the fitted value replaces it
    params, noise_sd = fit_point_estimate(NumericalDataset(X, y_std, 0.1), config)
    return FittedGP(X, y_std, params, noise_sd, shift, scale)
