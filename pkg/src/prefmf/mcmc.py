"""Adaptive Hamiltonian Monte Carlo and the sample-based predictive pipeline.

The sampler runs on an unconstrained space supplied by a LogDensityModel:
dual-averaging step-size adaptation, a diagonal mass matrix estimated from
warmup draws, and a fixed leapfrog trajectory length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .design import rng_for
from .gp import FactorizationError, chol_with_jitter


class MCMCDivergenceError(RuntimeError):
    """Raised when the sampling phase diverges too often to be trusted."""


@dataclass(frozen=True)
class HMCConfig:
    chains: int = 4
    warmup: int = 500
    draws: int = 500
    target_accept: float = 0.8
    leapfrog_steps: int = 32
    seed: int = 0
    max_divergence_rate: float = 0.25
    step_jitter: float = 0.1

    def __post_init__(self):
        if min(self.chains, self.warmup, self.draws, self.leapfrog_steps) < 1:
            raise ValueError("chains, warmup, draws, and leapfrog_steps must be positive")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass(frozen=True)
class LogDensityModel:
    """A differentiable log density over an unconstrained vector.

    value_and_gradient returns (logp, dlogp/dx); transform maps a point to
    (latent function values, constrained hyperparameters ordered per
    hyper_names). Models with fixed hyperparameters use hyper_names = ().
    """

    dim: int
    n_latent: int
    hyper_names: tuple[str, ...]
    value_and_gradient: Callable[[np.ndarray], tuple[float, np.ndarray]]
    transform: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    initial_point: Callable[[np.random.Generator], np.ndarray]
    name: str = "model"

    @property
    def n_hyper(self) -> int:
        return len(self.hyper_names)


@dataclass(frozen=True)
class PosteriorSampleSet:
    """Joint posterior draws of latent values and hyperparameters.

    final_states holds each chain's last unconstrained point, enabling
    warm-started refits.
    """

    latent_draws: np.ndarray
    hyper_draws: np.ndarray
    hyper_names: tuple[str, ...]
    diagnostics: dict
    final_states: np.ndarray | None = None

    def __post_init__(self):
        if self.latent_draws.shape[0] != self.hyper_draws.shape[0] or self.latent_draws.shape[0] < 1:
            raise ValueError("latent and hyper draws must share a positive sample count")

    @property
    def n_samples(self) -> int:
        return self.latent_draws.shape[0]

    def hyper(self, name: str) -> np.ndarray:
        return self.hyper_draws[:, self.hyper_names.index(name)]

    def diagnostics_json(self) -> str:
        return json.dumps(self.diagnostics, indent=2, sort_keys=True)


def check_gradient(
    model: LogDensityModel,
    n_points: int = 20,
    h: float = 1e-5,
    seed: int = 0,
    scale: float = 0.5,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_points):
        x = scale * rng.standard_normal(model.dim)
        _, grad = model.value_and_gradient(x)
        num = np.empty_like(grad)
        for i in range(model.dim):
            e = np.zeros(model.dim)
            e[i] = h
            vp, _ = model.value_and_gradient(x + e)
            vm, _ = model.value_and_gradient(x - e)
            num[i] = (vp - vm) / (2 * h)
        denom = max(float(np.linalg.norm(num)), 1e-8)
        worst = max(worst, float(np.linalg.norm(grad - num)) / denom)
    return worst


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-R-hat per coordinate for draws shaped (chains, draws, dim)."""
    c, s, d = chains.shape
    half = s // 2
    if half < 2:
        return np.full(d, np.nan)
    seqs = np.concatenate([chains[:, :half, :], chains[:, half : 2 * half, :]], axis=0)
    m, n = seqs.shape[0], seqs.shape[1]
    means = seqs.mean(axis=1)
    variances = seqs.var(axis=1, ddof=1)
    W = variances.mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(var_plus / W)


def _find_reasonable_step(value_and_grad, x0: np.ndarray, inv_mass: np.ndarray, rng: np.random.Generator) -> float:
    """Double or halve the step until the one-step accept prob crosses 0.5."""
    eps = 1.0
    logp0, grad0 = value_and_grad(x0)
    p = rng.standard_normal(x0.shape[0]) / np.sqrt(inv_mass)
    h0 = -logp0 + 0.5 * np.sum(p * p * inv_mass)

    def one_step(eps):
        p1 = p + 0.5 * eps * grad0
        x1 = x0 + eps * inv_mass * p1
        logp1, grad1 = value_and_grad(x1)
        p1 = p1 + 0.5 * eps * grad1
        h1 = -logp1 + 0.5 * np.sum(p1 * p1 * inv_mass)
        return h0 - h1

    delta = one_step(eps)
    if not np.isfinite(delta):
        delta = -np.inf
    direction = 1.0 if delta > np.log(0.5) else -1.0
    for _ in range(40):
        eps *= 2.0**direction
        delta = one_step(eps)
        if not np.isfinite(delta):
            delta = -np.inf
        if (direction == 1.0 and delta <= np.log(0.5)) or (direction == -1.0 and delta >= np.log(0.5)):
            break
    return float(np.clip(eps, 1e-8, 1e2))


@dataclass
class _DualAveraging:
    mu: float
    log_eps: float
    log_eps_bar: float = 0.0
    h_bar: float = 0.0
    count: int = 0
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75

    @classmethod
    def start(cls, eps: float) -> "_DualAveraging":
        return cls(mu=np.log(10.0 * eps), log_eps=np.log(eps), log_eps_bar=np.log(eps))

    def update(self, accept_prob: float, target: float) -> None:
        self.count += 1
        m = self.count
        eta = 1.0 / (m + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (target - accept_prob)
        self.log_eps = self.mu - np.sqrt(m) / self.gamma * self.h_bar
        w = m**-self.kappa
        self.log_eps_bar = w * self.log_eps + (1 - w) * self.log_eps_bar


_DIVERGENCE_THRESHOLD = 1000.0


def _run_chain(model: LogDensityModel, config: HMCConfig, chain_idx: int, init: np.ndarray | None = None):
    rng = rng_for(config.seed, 7001, chain_idx)
    f = model.value_and_gradient
    x = model.initial_point(rng) if init is None else np.asarray(init, dtype=float).copy()
    logp, grad = f(x)
    if init is not None and not np.isfinite(logp):
        x = model.initial_point(rng)
        logp, grad = f(x)
    if not np.isfinite(logp):
        raise ValueError(f"non-finite log density at the initial point of chain {chain_idx}")

    inv_mass = np.ones(model.dim)
    da = _DualAveraging.start(_find_reasonable_step(f, x, inv_mass, rng))

    warmup, draws = config.warmup, config.draws
    stage2_start = max(1, int(0.15 * warmup))
    stage3_start = max(stage2_start + 1, int(0.6 * warmup))
    var_acc: list[np.ndarray] = []

    samples = np.empty((draws, model.dim))
    accept_probs = np.empty(draws)
    divergences = 0

    L = config.leapfrog_steps
    for it in range(warmup + draws):
        warming = it < warmup
        if warming:
            eps = float(np.exp(da.log_eps))
        else:
            eps = float(np.exp(da.log_eps_bar))
        if config.step_jitter > 0:
            eps *= 1.0 + config.step_jitter * (2.0 * rng.uniform() - 1.0)

        p0 = rng.standard_normal(model.dim) / np.sqrt(inv_mass)
        h0 = -logp + 0.5 * np.sum(p0 * p0 * inv_mass)
        xn, pn, gn = x, p0.copy(), grad
        diverged = False
        pn = pn + 0.5 * eps * gn
        for step in range(L):
            xn = xn + eps * inv_mass * pn
            logpn, gn = f(xn)
            if not np.isfinite(logpn):
                diverged = True
                break
            pn = pn + (eps if step < L - 1 else 0.5 * eps) * gn
        if not diverged:
            hn = -logpn + 0.5 * np.sum(pn * pn * inv_mass)
            delta = h0 - hn
            if not np.isfinite(delta) or -delta > _DIVERGENCE_THRESHOLD:
                diverged = True
        if diverged:
            accept_prob = 0.0
        else:
            accept_prob = float(min(1.0, np.exp(min(delta, 0.0))))
            if np.log(rng.uniform()) < delta:
                x, logp, grad = xn, logpn, gn

        if warming:
            da.update(accept_prob, config.target_accept)
            if stage2_start <= it < stage3_start:
                var_acc.append(x.copy())
            if it == stage3_start - 1 and len(var_acc) >= 5:
                draws_arr = np.asarray(var_acc)
                var = draws_arr.var(axis=0, ddof=1)
                n = draws_arr.shape[0]
                inv_mass = (n / (n + 5.0)) * var + (5.0 / (n + 5.0)) * 1e-3
                inv_mass = np.maximum(inv_mass, 1e-10)
                da = _DualAveraging.start(_find_reasonable_step(f, x, inv_mass, rng))
        else:
            idx = it - warmup
            samples[idx] = x
            accept_probs[idx] = accept_prob
            if diverged:
                divergences += 1

    return samples, float(np.mean(accept_probs)), divergences, float(np.exp(da.log_eps_bar))


def hmc_sample(
    model: LogDensityModel,
    config: HMCConfig,
    init_points: list[np.ndarray] | None = None,
) -> PosteriorSampleSet:
    """Draw chains x draws posterior samples after warmup adaptation.

    init_points optionally seeds each chain's start (warm refits). Raises
    MCMCDivergenceError when more than max_divergence_rate of the kept
    transitions diverged.
    """
    all_samples, accept_rates, divergence_counts, step_sizes = [], [], [], []
    for c in range(config.chains):
        init = None
        if init_points is not None and c < len(init_points) and init_points[c] is not None:
            init = init_points[c]
        samples, acc, div, eps = _run_chain(model, config, c, init)
        all_samples.append(samples)
        accept_rates.append(acc)
        divergence_counts.append(div)
        step_sizes.append(eps)

    stacked = np.asarray(all_samples)  # (chains, draws, dim)
    total_div = int(np.sum(divergence_counts))
    div_rate = total_div / (config.chains * config.draws)
    if div_rate > config.max_divergence_rate:
        raise MCMCDivergenceError(
            f"{div_rate:.0%} of transitions diverged (limit {config.max_divergence_rate:.0%}); "
            "the posterior scale or model is likely mis-specified"
        )

    rhat = split_rhat(stacked)
    flat = stacked.reshape(-1, model.dim)
    latents = np.empty((flat.shape[0], model.n_latent))
    hypers = np.empty((flat.shape[0], model.n_hyper))
    for i, row in enumerate(flat):
        g, h = model.transform(row)
        latents[i] = g
        hypers[i] = h

    diagnostics = {
        "model": model.name,
        "chains": config.chains,
        "draws_per_chain": config.draws,
        "acceptance_rate": [float(a) for a in accept_rates],
        "divergences": divergence_counts,
        "step_size": step_sizes,
        "split_rhat_max": float(np.nanmax(rhat)) if rhat.size else float("nan"),
        "split_rhat": [float(r) for r in rhat],
    }
    final_states = stacked[:, -1, :].copy()
    return PosteriorSampleSet(latents, hypers, model.hyper_names, diagnostics, final_states)


def posterior_predictive(
    samples: PosteriorSampleSet,
    train_inputs: np.ndarray,
    test_inputs: np.ndarray,
    cov_builder: Callable[[np.ndarray], Callable[[np.ndarray, np.ndarray], np.ndarray]],
    seed: int = 0,
    mean_builder: Callable[[np.ndarray], Callable[[np.ndarray], np.ndarray]] | None = None,
) -> np.ndarray:
    """One conditional-Gaussian draw at the test inputs per posterior sample.

    cov_builder maps a hyperparameter row to a covariance function K(A, B);
    mean_builder optionally supplies a prior mean function per sample
    (zero otherwise). Samples whose Gram matrix cannot be factorized are
    dropped after jitter escalation; the drop count lands in the output's
    attached counter.
    """
    train_inputs = np.atleast_2d(np.asarray(train_inputs, dtype=float))
    test_inputs = np.atleast_2d(np.asarray(test_inputs, dtype=float))
    S = samples.n_samples
    n_test = test_inputs.shape[0]
    rng = np.random.default_rng(seed)
    out = np.empty((S, n_test))
    dropped = []
    for s in range(S):
        cov = cov_builder(samples.hyper_draws[s])
        mean_fn = mean_builder(samples.hyper_draws[s]) if mean_builder else None
        prior_mean_test = mean_fn(test_inputs) if mean_fn else np.zeros(n_test)
        try:
            if train_inputs.shape[0] == 0:
                mu = prior_mean_test
                cov_t = cov(test_inputs, test_inputs)
            else:
                K = cov(train_inputs, train_inputs)
                Lc = chol_with_jitter(K)
                Ks = cov(train_inputs, test_inputs)
                g = samples.latent_draws[s]
                prior_mean_train = mean_fn(train_inputs) if mean_fn else np.zeros(train_inputs.shape[0])
                alpha = solve_triangular(Lc, g - prior_mean_train, lower=True, check_finite=False)
                alpha = solve_triangular(Lc.T, alpha, lower=False, check_finite=False)
                V = solve_triangular(Lc, Ks, lower=True, check_finite=False)
                mu = prior_mean_test + Ks.T @ alpha
                cov_t = cov(test_inputs, test_inputs) - V.T @ V
            Lt = chol_with_jitter(0.5 * (cov_t + cov_t.T))
            out[s] = mu + Lt @ rng.standard_normal(n_test)
        except FactorizationError:
            dropped.append(s)
            out[s] = np.nan
    if dropped:
        keep = np.setdiff1d(np.arange(S), np.asarray(dropped))
        if keep.size == 0:
            raise FactorizationError("every posterior sample failed factorization")
        out = out[keep]
    return out
