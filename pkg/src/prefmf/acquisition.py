"""Acquisition functions and their maximization over the design box.

All acquisitions are Monte Carlo estimates over the surrogate's posterior
components with common random numbers, so fixed seeds give exact
reproducibility and exact monotonicity where the math implies it.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .design import Box, rng_for
from .kernels import Fidelity

#: Monte Carlo draws per acquisition evaluation.
DEFAULT_ACQ_DRAWS = 256

#: Local-refinement settings for maximize_single.
REFINE_COUNT = 32
REFINE_SD = 0.05


@dataclass(frozen=True)
class CandidateSet:
    """Candidate design points with a record of how they were generated."""

    points: np.ndarray
    origin: str = "sobol"

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0:
            raise ValueError("candidate set must be non-empty")
        if self.origin not in ("sobol", "uniform", "local-perturbation"):
            raise ValueError(f"unknown candidate origin {self.origin!r}")
        object.__setattr__(self, "points", pts)


def _points_of(candidates) -> np.ndarray:
    if isinstance(candidates, CandidateSet):
        return candidates.points
    return np.atleast_2d(np.asarray(candidates, dtype=float))


def _mixture_draws(means: np.ndarray, variances: np.ndarray, n_draws: int, seed: int) -> np.ndarray:
    """Marginal predictive draws (n_draws, T) cycling over posterior components."""
    M, T = means.shape
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_draws, T))
    comp = np.arange(n_draws) % M
    return means[comp] + np.sqrt(variances[comp]) * z


def expected_improvement(
    model,
    candidates,
    incumbent_value: float,
    fidelity=Fidelity.HF,
    n_draws: int = DEFAULT_ACQ_DRAWS,
    seed: int = 0,
) -> np.ndarray:
    """Monte Carlo expected improvement over the incumbent (maximization).

    Returns the per-candidate mean of max(draw - incumbent, 0) under shared
    draws, so raising the incumbent can never raise the value.
    """
    if not np.isfinite(incumbent_value):
        raise ValueError("incumbent_value must be finite")
    pts = _points_of(candidates)
    means, variances = model.marginal_components(pts, fidelity=fidelity)
    draws = _mixture_draws(means, variances, n_draws, seed)
    return np.maximum(draws - incumbent_value, 0.0).mean(axis=0)


def eubo_values(
    model,
    pairs: np.ndarray,
    n_draws: int = DEFAULT_ACQ_DRAWS,
    seed: int = 0,
) -> np.ndarray:
    """Expected utility of the best option for each pair, shape (P,).

    Uses joint 2x2 predictive draws at the pair so the correlation between
    the two options is respected.
    """
    pairs = np.asarray(pairs, dtype=float)
    means, covs = model.pair_components(pairs)
    M, P, _ = means.shape
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_draws, P, 2))
    comp = np.arange(n_draws) % M

    c11 = np.clip(covs[:, :, 0, 0], 1e-18, None)
    l11 = np.sqrt(c11)
    l21 = covs[:, :, 1, 0] / l11
    l22 = np.sqrt(np.clip(covs[:, :, 1, 1] - l21**2, 0.0, None))

    m_sel = means[comp]
    a = m_sel[:, :, 0] + l11[comp] * z[:, :, 0]
    b = m_sel[:, :, 1] + l21[comp] * z[:, :, 0] + l22[comp] * z[:, :, 1]
    return np.maximum(a, b).mean(axis=0)


def eubo(model, pair, n_draws: int = DEFAULT_ACQ_DRAWS, seed: int = 0) -> float:
    """EUBO of one candidate pair (xi, xi')."""
    pair = np.asarray(pair, dtype=float).reshape(1, 2, -1)
    return float(eubo_values(model, pair, n_draws=n_draws, seed=seed)[0])


def _fantasy_variance_profile(model, grid: np.ndarray, cands: np.ndarray, fidelity, thin):
    """Grid-averaged mixture variance now and after fantasizing each candidate."""
    mg, vg, mc, vc, cov = model.conditional_blocks(grid, cands, fidelity=fidelity, thin=thin)
    # current mixture variance over the grid
    var_now = vg.mean(axis=0) + mg.var(axis=0)
    avg_now = float(var_now.mean())

    eps = 1e-12
    denom = vc + eps  # (M, C)
    gain = cov**2 / denom[:, None, :]  # (M, G, C)
    var_after = (vg[:, :, None] - gain).mean(axis=0)  # (G, C)

    fantasy = mc.mean(axis=0)  # posterior-mean fantasy value per candidate
    shift = cov / denom[:, None, :] * (fantasy[None, None, :] - mc[:, None, :])  # (M, G, C)
    mean_after = mg[:, :, None] + shift
    var_between = mean_after.var(axis=0)  # (G, C)
    avg_after = (var_after + var_between).mean(axis=0)  # (C,)
    return avg_now, avg_after


def ipv_values(
    model,
    candidates,
    integration_grid: np.ndarray,
    fidelity=Fidelity.HF,
    thin: int | None = 64,
) -> np.ndarray:
    """Reduction in grid-averaged predictive variance per candidate.

    Fantasizes each candidate at the current posterior-mean value and scores
    the drop in the grid-averaged mixture variance; higher is better.
    """
    grid = np.atleast_2d(np.asarray(integration_grid, dtype=float))
    if grid.shape[0] == 0:
        raise ValueError("integration grid must be non-empty")
    pts = _points_of(candidates)
    avg_now, avg_after = _fantasy_variance_profile(model, grid, pts, fidelity, thin)
    return avg_now - avg_after


def integral_predictive_variance(
    model,
    candidate,
    integration_grid: np.ndarray,
    fidelity=Fidelity.HF,
    thin: int | None = 64,
) -> float:
    """IPV score of a single candidate."""
    pts = np.atleast_2d(np.asarray(candidate, dtype=float))
    return float(ipv_values(model, pts, integration_grid, fidelity=fidelity, thin=thin)[0])


def maximize_single(acq_fn, box: Box, budget: int, seed: int = 0) -> tuple[np.ndarray, float]:
    """Sobol screening plus one local-perturbation refinement round.

    acq_fn maps a (N, d) candidate matrix to N scores; the returned point
    scores at least as high as every Sobol candidate.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    sobol_pts = box.sobol(budget, seed=seed)
    vals = np.asarray(acq_fn(sobol_pts), dtype=float)
    best = int(np.argmax(vals))
    best_pt, best_val = sobol_pts[best], float(vals[best])

    rng = rng_for(seed, 101)
    local = best_pt + rng.standard_normal((REFINE_COUNT, box.dim)) * (REFINE_SD * box.widths)
    local = box.clip(local)
    lvals = np.asarray(acq_fn(local), dtype=float)
    lbest = int(np.argmax(lvals))
    if lvals[lbest] > best_val:
        return local[lbest].copy(), float(lvals[lbest])
    return best_pt.copy(), best_val


TOP_SINGLES = 16
RANDOM_PAIRS = 64


def maximize_pair(
    model,
    box: Box,
    budget: int,
    seed: int = 0,
    n_draws: int = DEFAULT_ACQ_DRAWS,
) -> tuple[np.ndarray, np.ndarray]:
    """Best EUBO pair among top-single combinations and random pairs.

    Singles are ranked by posterior mean plus SD; the candidate pool always
    contains at least two distinct points, and identical-member pairs are
    never formed.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    pts = box.sobol(budget, seed=seed)
    if pts.shape[0] < 2:
        extra = box.uniform(1, rng_for(seed, 103))
        pts = np.vstack([pts, extra])

    means, variances = model.marginal_components(pts, fidelity=Fidelity.HF)
    score = means.mean(axis=0) + np.sqrt(np.clip(variances.mean(axis=0) + means.var(axis=0), 0.0, None))
    order = np.argsort(score)[::-1]
    top = order[: min(TOP_SINGLES, pts.shape[0])]

    idx_pairs = set(combinations(sorted(int(i) for i in top), 2))
    rng = rng_for(seed, 104)
    n_pts = pts.shape[0]
    for _ in range(RANDOM_PAIRS):
        i, j = rng.choice(n_pts, size=2, replace=False)
        idx_pairs.add((min(int(i), int(j)), max(int(i), int(j))))
    idx = np.asarray(sorted(idx_pairs), dtype=int)
    pairs = np.stack([pts[idx[:, 0]], pts[idx[:, 1]]], axis=1)

    vals = eubo_values(model, pairs, n_draws=n_draws, seed=seed)
    best = int(np.argmax(vals))
    return pairs[best, 0].copy(), pairs[best, 1].copy()
