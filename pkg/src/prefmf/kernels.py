"""Covariance kernels and the two-fidelity coregionalization kernel.

The base kernels are stationary with per-dimension (ARD) lengthscales.
Cross-fidelity covariance is the coregionalization form
``B[h, h'] * k(x, x')`` over inputs augmented with a fidelity index.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

SQRT5 = np.sqrt(5.0)

#: Relative jitter added to Gram diagonals before factorization.
JITTER_REL = 1e-10


class Fidelity(IntEnum):
    HF = 1
    LF = 2


@dataclass(frozen=True)
class KernelParams:
    """ARD kernel hyperparameters.

    kind is "se" (squared exponential) or "matern52".
    """

    lengthscales: np.ndarray
    signal_variance: float = 1.0
    kind: str = "se"

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ValueError("lengthscales must be positive and finite")
        if self.signal_variance <= 0 or not np.isfinite(self.signal_variance):
            raise ValueError("signal_variance must be positive and finite")
        if self.kind not in ("se", "matern52"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        object.__setattr__(self, "lengthscales", ls)

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


@dataclass(frozen=True)
class CoregMatrix:
    """Parameters of the 2x2 inter-fidelity covariance matrix."""

    sigma_hf: float
    sigma_lf: float
    rho: float

    def __post_init__(self):
        if self.sigma_hf <= 0 or self.sigma_lf <= 0:
            raise ValueError("fidelity scales must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")


@dataclass(frozen=True)
class AugmentedInput:
    """A design point tagged with the fidelity it is observed at."""

    xi: np.ndarray
    fidelity: Fidelity

    def __post_init__(self):
        object.__setattr__(self, "xi", np.atleast_1d(np.asarray(self.xi, dtype=float)))
        object.__setattr__(self, "fidelity", Fidelity(self.fidelity))


def _as_matrix(x: np.ndarray, dim: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("inputs must be (n, d) arrays")
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"input dimension {x.shape[1]} does not match lengthscale dimension {dim}")
    return x


def sq_dists_per_dim(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (d, n_a, n_b)."""
    diff = a[:, None, :] - b[None, :, :]
    return np.moveaxis(diff * diff, -1, 0)


def kernel_matrix_from_sq(sq: np.ndarray, params: KernelParams) -> np.ndarray:
    """Kernel matrix from precomputed per-dimension squared differences.

    Separated from kernel_matrix so MCMC models can reuse the distance
    tensor across density evaluations.
    """
    ls2 = params.lengthscales**2
    r2 = np.tensordot(1.0 / ls2, sq, axes=1)
    if params.kind == "se":
        return params.signal_variance * np.exp(-0.5 * r2)
    r = np.sqrt(np.maximum(r2, 0.0))
    poly = 1.0 + SQRT5 * r + (5.0 / 3.0) * r2
    return params.signal_variance * poly * np.exp(-SQRT5 * r)


def kernel_matrix(a: np.ndarray, b: np.ndarray, params: KernelParams) -> np.ndarray:
    """Covariance matrix with entries k(a_i, b_j)."""
    a = _as_matrix(a, params.dim)
    b = _as_matrix(b, params.dim)
    return kernel_matrix_from_sq(sq_dists_per_dim(a, b), params)


def kernel_eval(a: np.ndarray, b: np.ndarray, params: KernelParams) -> float:
    """Scalar kernel value k(a, b)."""
    return float(kernel_matrix(a, b, params)[0, 0])


def kernel_rowwise(a: np.ndarray, b: np.ndarray, params: KernelParams) -> np.ndarray:
    """k(a_i, b_i) for matched rows, shape (n,)."""
    a = _as_matrix(a, params.dim)
    b = _as_matrix(b, params.dim)
    r2 = np.sum(((a - b) / params.lengthscales) ** 2, axis=1)
    if params.kind == "se":
        return params.signal_variance * np.exp(-0.5 * r2)
    r = np.sqrt(np.maximum(r2, 0.0))
    return params.signal_variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-SQRT5 * r)


def coreg_B(c: CoregMatrix) -> np.ndarray:
    """The symmetric positive-definite 2x2 coregionalization matrix.

    Row/column 0 is the high-fidelity output, row/column 1 the low-fidelity
    one; positive definiteness holds for any rho in [0, 1).
    """
    off = c.rho * c.sigma_hf * c.sigma_lf
    return np.array([[c.sigma_hf**2, off], [off, c.sigma_lf**2]])


def _fid_index(f: Fidelity | int) -> int:
    return int(f) - 1


def icm_kernel(a: AugmentedInput, b: AugmentedInput, c: CoregMatrix, params: KernelParams) -> float:
    """Covariance between two fidelity-tagged inputs."""
    B = coreg_B(c)
    return B[_fid_index(a.fidelity), _fid_index(b.fidelity)] * kernel_eval(a.xi, b.xi, params)


def icm_kernel_matrix(
    a: np.ndarray,
    fid_a: np.ndarray,
    b: np.ndarray,
    fid_b: np.ndarray,
    c: CoregMatrix,
    params: KernelParams,
) -> np.ndarray:
    """Gram matrix over mixed-fidelity input sets.

    fid_a / fid_b hold Fidelity values (1 = hf, 2 = lf) per row.
    """
    B = coreg_B(c)
    ia = np.asarray(fid_a, dtype=int) - 1
    ib = np.asarray(fid_b, dtype=int) - 1
    return B[np.ix_(ia, ib)] * kernel_matrix(a, b, params)


def add_jitter(gram: np.ndarray, rel: float = JITTER_REL) -> np.ndarray:
    """Return gram + rel * mean-diagonal jitter (PD safety at coincident inputs)."""
    scale = float(np.mean(np.diag(gram))) if gram.shape[0] else 1.0
    return gram + rel * max(scale, 1e-300) * np.eye(gram.shape[0])
