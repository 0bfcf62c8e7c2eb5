"""Observation models: probit preferences, Gaussian targets, and their fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr
from scipy.stats import norm

LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Comparison:
    """One pairwise judgment: the decision maker preferred winner over loser."""

    winner_index: int
    loser_index: int

    def __post_init__(self):
        if self.winner_index == self.loser_index:
            raise ValueError("a comparison must involve two distinct points")
        if self.winner_index < 0 or self.loser_index < 0:
            raise ValueError("comparison indices must be nonnegative")


@dataclass(frozen=True)
class MixedDataset:
    """High-fidelity comparisons plus low-fidelity numerical observations."""

    hf_inputs: np.ndarray
    comparisons: tuple[Comparison, ...]
    lf_inputs: np.ndarray
    lf_targets: np.ndarray

    def __post_init__(self):
        hf = _matrix(self.hf_inputs)
        lf = _matrix(self.lf_inputs)
        y = np.atleast_1d(np.asarray(self.lf_targets, dtype=float)) if np.size(self.lf_targets) else np.zeros(0)
        comps = tuple(self.comparisons)
        if y.shape[0] != lf.shape[0]:
            raise ValueError("lf_targets length must match lf_inputs rows")
        for c in comps:
            if c.winner_index >= hf.shape[0] or c.loser_index >= hf.shape[0]:
                raise ValueError("comparison index out of range for hf_inputs")
        if hf.shape[0] and lf.shape[0] and hf.shape[1] != lf.shape[1]:
            raise ValueError("hf and lf inputs must share one dimension")
        object.__setattr__(self, "hf_inputs", hf)
        object.__setattr__(self, "lf_inputs", lf)
        object.__setattr__(self, "lf_targets", y)
        object.__setattr__(self, "comparisons", comps)

    @property
    def n_hf(self) -> int:
        return self.hf_inputs.shape[0]

    @property
    def n_lf(self) -> int:
        return self.lf_inputs.shape[0]

    @property
    def dim(self) -> int:
        if self.n_hf:
            return self.hf_inputs.shape[1]
        return self.lf_inputs.shape[1]

    def is_empty(self) -> bool:
        return self.n_hf == 0 and self.n_lf == 0


def _matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x.reshape(0, x.shape[1] if x.ndim == 2 else 0)
    return np.atleast_2d(x)


def probit_pref_loglik(g_winner: float, g_loser: float, noise_sd: float) -> float:
    """log P(winner beats loser) when both latent values carry N(0, noise_sd^2) noise.

    Equals log Phi((g_winner - g_loser) / sqrt(2 noise_sd^2)); evaluated via
    log_ndtr so deep tails stay finite.
    """
    if noise_sd <= 0:
        raise ValueError("noise_sd must be positive")
    z = (g_winner - g_loser) / (np.sqrt(2.0) * noise_sd)
    return float(log_ndtr(z))


def gaussian_loglik(y: float, g: float, noise_sd: float) -> float:
    """log N(y; g, noise_sd^2)."""
    if noise_sd <= 0:
        raise ValueError("noise_sd must be positive")
    return float(-0.5 * LOG2PI - np.log(noise_sd) - 0.5 * ((y - g) / noise_sd) ** 2)


def joint_multimodal_loglik(latents: np.ndarray, data: MixedDataset, noise_sd: float) -> float:
    """Factorized likelihood of comparisons and numerical targets.

    latents is ordered [g at hf inputs..., g at lf inputs...]; comparisons
    use a probit on the hf block, numerical targets a Gaussian on the lf
    block, with one shared noise scale.
    """
    latents = np.atleast_1d(np.asarray(latents, dtype=float))
    if latents.shape[0] != data.n_hf + data.n_lf:
        raise ValueError("latent vector length must be n_hf + n_lf")
    total = 0.0
    for c in data.comparisons:
        total += probit_pref_loglik(latents[c.winner_index], latents[c.loser_index], noise_sd)
    g_lf = latents[data.n_hf :]
    for y_i, g_i in zip(data.lf_targets, g_lf):
        total += gaussian_loglik(y_i, g_i, noise_sd)
    return total


def ar1_comparison_loglik(
    delta_winner: float,
    delta_loser: float,
    lf_mean_winner: float,
    lf_mean_loser: float,
    lf_var_diff: float,
    noise_sd: float,
) -> float:
    """log-probability of a comparison under the hierarchical correction model.

    The low-fidelity contribution at the two points is integrated out
    analytically, leaving log Phi of the mean difference scaled by the
    variance of the low-fidelity difference plus the decision noise of both
    experiments.
    """
    if noise_sd <= 0:
        raise ValueError("noise_sd must be positive")
    if lf_var_diff < 0:
        raise ValueError("lf_var_diff must be nonnegative")
    num = delta_winner + lf_mean_winner - delta_loser - lf_mean_loser
    denom = np.sqrt(lf_var_diff + 2.0 * noise_sd**2)
    return float(log_ndtr(num / denom))


def probit_ratio(z: np.ndarray) -> np.ndarray:
    """phi(z) / Phi(z), computed in log space for tail stability."""
    z = np.asarray(z, dtype=float)
    return np.exp(norm.logpdf(z) - log_ndtr(z))
