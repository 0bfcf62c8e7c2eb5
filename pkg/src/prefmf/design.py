"""Box-constrained design spaces and low-discrepancy candidate generation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc


@dataclass(frozen=True)
class Box:
    """Axis-aligned design box with affine maps to and from the unit cube.

    All surrogate internals operate on the unit cube; raw coordinates only
    appear at oracle and UI boundaries.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if not np.all(upper > lower):
            raise ValueError("box upper bounds must exceed lower bounds")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / self.widths

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.widths

    def contains(self, x: np.ndarray, atol: float = 1e-9) -> bool:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return bool(
            np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol)
        )

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def sobol(self, n: int, seed: int) -> np.ndarray:
        """n Sobol points inside the box (scrambled, reproducible by seed)."""
        if n < 1:
            raise ValueError("need at least one Sobol point")
        eng = qmc.Sobol(d=self.dim, scramble=True, seed=seed)
        with warnings.catch_warnings():
            # candidate screening does not need the power-of-two balance property
            warnings.simplefilter("ignore", UserWarning)
            u = eng.random(n)
        return self.from_unit(u)

    def uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.from_unit(rng.uniform(size=(n, self.dim)))


def unit_box(dim: int) -> Box:
    return Box(np.zeros(dim), np.ones(dim))


def seed_for(base_seed: int, *stream: int) -> np.random.SeedSequence:
    """Derive a named independent RNG stream from a run seed.

    The stream key is positional, so replaying a trace regenerates the
    identical sequence without having to replay spawn order.
    """
    return np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(s) for s in stream))


def rng_for(base_seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(seed_for(base_seed, *stream))
