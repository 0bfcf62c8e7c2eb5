"""Synthetic ground truth: correlated objective pairs, a simulated decision maker,
and brute-force optimum computation for regret accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .design import Box, rng_for, unit_box
from .likelihoods import Comparison

PROBE_SIZE = 512
CORRELATION_TOL = 0.01


def _bump_function(rng: np.random.Generator, box: Box) -> Callable[[np.ndarray], np.ndarray]:
    """Sum of three smooth Gaussian bumps with random placement on the box."""
    centers = box.from_unit(rng.uniform(0.1, 0.9, size=(3, box.dim)))
    widths = rng.uniform(0.15, 0.4, size=3)[:, None] * box.widths
    heights = rng.uniform(0.5, 1.0, size=3)

    def f(X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        total = np.zeros(X.shape[0])
        for c, w, h in zip(centers, widths, heights):
            total += h * np.exp(-0.5 * np.sum(((X - c) / w) ** 2, axis=1))
        return total

    return f


def _standardized(f, probe: np.ndarray):
    vals = f(probe)
    mu, sd = float(np.mean(vals)), float(np.std(vals))
    if sd < 1e-12:
        sd = 1.0

    def g(X: np.ndarray) -> np.ndarray:
        return (f(X) - mu) / sd

    return g


@dataclass(frozen=True)
class SyntheticPair:
    """A true utility and a correlated cheap approximation on a shared box."""

    hf_utility: Callable[[np.ndarray], np.ndarray]
    lf_utility: Callable[[np.ndarray], np.ndarray]
    target_correlation: float
    achieved_correlation: float
    seed: int
    box: Box
    alpha: float


class BisectionError(RuntimeError):
    """The mixing weight could not be tuned to the requested correlation."""


def _empirical_corr(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.corrcoef(a, b)[0, 1])


def make_synthetic_pair(
    seed: int,
    target_correlation: float,
    n_dims: int,
    box: Box | None = None,
    max_seed_retries: int = 5,
) -> SyntheticPair:
    """Construct (true utility, correlated approximation) with tuned correlation.

    The approximation mixes the standardized true utility with an independent
    same-family function; the mixing weight is bisected until the empirical
    Pearson correlation on a Sobol probe set hits the target. Pathological
    seeds (no bracket) fall through to the next derived seed.
    """
    if n_dims < 1:
        raise ValueError("n_dims must be at least 1")
    if not 0.0 <= target_correlation <= 1.0:
        raise ValueError("target_correlation must lie in [0, 1]")
    box = box or unit_box(n_dims)

    last_error: Exception | None = None
    for attempt in range(max_seed_retries):
        attempt_seed = seed + 1000003 * attempt
        try:
            return _make_pair_once(attempt_seed, seed, target_correlation, box)
        except BisectionError as exc:  # pragma: no cover - needs a pathological seed
            last_error = exc
    raise BisectionError(f"no seed in {max_seed_retries} retries produced a tunable pair: {last_error}")


def _make_pair_once(attempt_seed: int, declared_seed: int, target: float, box: Box) -> SyntheticPair:
    rng = rng_for(attempt_seed, 51)
    probe = box.sobol(PROBE_SIZE, seed=attempt_seed + 17)
    hf = _standardized(_bump_function(rng, box), probe)

    if target >= 1.0:
        return SyntheticPair(hf, hf, target, 1.0, declared_seed, box, 1.0)

    raw_ind = _standardized(_bump_function(rng, box), probe)
    hf_vals = hf(probe)
    # bump sums correlate systematically; orthogonalize on the probe so the
    # mixing weight sweeps the full correlation range
    proj = _empirical_corr(hf_vals, raw_ind(probe))
    resid_sd = float(np.sqrt(max(1.0 - proj**2, 1e-12)))

    def ind(X: np.ndarray) -> np.ndarray:
        return (raw_ind(X) - proj * hf(X)) / resid_sd

    ind_vals = ind(probe)

    def lf_with(alpha: float) -> Callable[[np.ndarray], np.ndarray]:
        def g(X: np.ndarray) -> np.ndarray:
            return alpha * hf(X) + np.sqrt(1.0 - alpha**2) * ind(X)

        return g

    def corr_at(alpha: float) -> float:
        mixed = alpha * hf_vals + np.sqrt(1.0 - alpha**2) * ind_vals
        return _empirical_corr(hf_vals, mixed)

    lo, hi = 0.0, 1.0
    c_lo, c_hi = corr_at(lo), 1.0
    if target <= c_lo:
        alpha = 0.0
        achieved = c_lo
        if abs(achieved - target) > 0.1:
            raise BisectionError(
                f"independent component correlates at {c_lo:.3f}, above target {target:.3f}"
            )
    else:
        if not (c_lo <= target <= c_hi):  # pragma: no cover - c_hi is 1 by construction
            raise BisectionError("target correlation not bracketed")
        alpha = 0.5
        for _ in range(60):
            alpha = 0.5 * (lo + hi)
            c = corr_at(alpha)
            if abs(c - target) <= CORRELATION_TOL:
                break
            if c < target:
                lo = alpha
            else:
                hi = alpha
        achieved = corr_at(alpha)
        if abs(achieved - target) > 0.1:
            raise BisectionError(f"bisection stalled at correlation {achieved:.3f}")
    return SyntheticPair(hf, lf_with(alpha), target, achieved, declared_seed, box, alpha)


@dataclass
class SimulatedDM:
    """Probit decision maker: prefers the option with higher noisy utility."""

    utility: Callable[[np.ndarray], np.ndarray]
    noise_sd: float
    seed: int = 0

    def __post_init__(self):
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        self._rng = rng_for(self.seed, 77)

    def query(self, xi_a: np.ndarray, xi_b: np.ndarray) -> Comparison:
        """Compare two points; indices 0/1 refer to (xi_a, xi_b) order."""
        u = self.utility(np.vstack([np.atleast_1d(xi_a), np.atleast_1d(xi_b)]))
        noise = self._rng.normal(0.0, self.noise_sd, size=2) if self.noise_sd > 0 else np.zeros(2)
        if u[0] + noise[0] >= u[1] + noise[1]:
            return Comparison(0, 1)
        return Comparison(1, 0)


def simulated_dm_query(dm: SimulatedDM, xi_a: np.ndarray, xi_b: np.ndarray) -> Comparison:
    return dm.query(xi_a, xi_b)


def grid_optimum(
    utility: Callable[[np.ndarray], np.ndarray],
    box: Box,
    resolution: int = 101,
    sobol_fallback: int = 100_000,
) -> tuple[np.ndarray, float]:
    """Argmax of the utility over a dense grid (d <= 3) or a large Sobol set."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if box.dim <= 3:
        axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(box.lower, box.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
    else:
        pts = box.sobol(sobol_fallback, seed=424243)
    vals = utility(pts)
    best = int(np.argmax(vals))
    return pts[best].copy(), float(vals[best])
