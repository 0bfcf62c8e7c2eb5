"""Differentiable posterior densities for the whitened GP models.

Every model samples an unconstrained vector x = [z, u]: z are whitened
latent coordinates (g = L(u) z with L the Gram factor), u are log- or
logit-transformed hyperparameters. Gradients are analytic; the
hyperparameter path goes through the Cholesky factor via the identity
  v^T dL z = <dK, E>,  E = L^-T C L^-1,
  C = strict_lower(w z^T) + diag(w * z) / 2,  w = L^T v,
which needs only two triangular solves per evaluation regardless of the
number of hyperparameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg.lapack import dpotrf, dtrtrs
from scipy.special import betaln, expit, log_expit, log_ndtr

from .kernels import SQRT5, KernelParams, kernel_matrix_from_sq, sq_dists_per_dim
from .likelihoods import LOG2PI, MixedDataset
from .mcmc import LogDensityModel

#: Relative jitter ladder used inside density evaluations.
_JITTERS = (1e-10, 1e-8, 1e-6)

#: Unconstrained coordinates beyond this magnitude short-circuit to log
#: density -inf: 12 is 15+ prior standard deviations out for every
#: hyperparameter, and it keeps downstream products clear of float overflow.
_U_BOUND = 12.0


def _out_of_bounds(x: np.ndarray) -> bool:
    return bool(x.size) and (not np.all(np.isfinite(x)) or np.max(np.abs(x)) > _U_BOUND)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameter priors on the unconstrained (log / logit) scale.

    Lengthscales refer to the unit design box.
    """

    lengthscale_log_mean: float = float(np.log(0.3))
    lengthscale_log_sd: float = 0.7
    signal_log_mean: float = 0.0
    signal_log_sd: float = 1.0
    noise_log_mean: float = float(np.log(0.1))
    noise_log_sd: float = 0.5
    rho_alpha: float = 5.0
    rho_beta: float = 2.0


def _beta_logit_lp(v: float, alpha: float, beta: float) -> tuple[float, float, float]:
    """Beta(alpha, beta) density of rho = expit(v) including the Jacobian.

    The Jacobian folds into the exponents: alpha log rho + beta log(1 - rho).
    """
    rho = float(expit(v))
    lp = float(alpha * log_expit(v) + beta * log_expit(-v) - betaln(alpha, beta))
    grad = alpha - (alpha + beta) * rho
    return lp, grad, rho


def _probit_ratio(t: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * t * t - 0.5 * LOG2PI - log_ndtr(t))


def _chol_jittered(K: np.ndarray, diag_scale: np.ndarray | float):
    """Lower Cholesky of K + rel * diag_scale across the jitter ladder, or None."""
    n = K.shape[0]
    Kj = np.asfortranarray(K)
    diag = Kj.ravel(order="K")[:: n + 1]
    base = diag.copy()
    for rel in _JITTERS:
        diag[:] = base + rel * diag_scale
        L, info = dpotrf(Kj, lower=1, clean=1, overwrite_a=0)
        if info == 0:
            return L, rel
    return None


def _tri_solve(L: np.ndarray, B: np.ndarray, trans: int) -> np.ndarray:
    """L^-1 B (trans=0) or L^-T B (trans=1) for lower-triangular L."""
    X, info = dtrtrs(L, B, lower=1, trans=trans)
    if info != 0:
        raise np.linalg.LinAlgError("triangular solve failed")
    return X


class _KernelContext:
    """Precomputed geometry shared by every density evaluation at fixed inputs."""

    def __init__(self, X: np.ndarray, kind: str):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.n, self.d = X.shape
        sq = np.ascontiguousarray(sq_dists_per_dim(X, X))
        self.sq = sq
        self.sq_flat = sq.reshape(self.d, -1)
        self.kind = kind

    def unit_kernel(self, ls: np.ndarray):
        """(k_unit, radial gradient prefactor or None for SE)."""
        r2 = (1.0 / ls**2 @ self.sq_flat).reshape(self.n, self.n)
        if self.kind == "se":
            return np.exp(-0.5 * r2), None
        r = np.sqrt(np.maximum(r2, 0.0))
        e = np.exp(-SQRT5 * r)
        k = (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * e
        return k, (5.0 / 3.0) * (1.0 + SQRT5 * r) * e

    def lengthscale_grads(self, W: np.ndarray, ls: np.ndarray) -> np.ndarray:
        """<dK/dlog ls_j, E> for all j given W = prefactor * E elementwise."""
        return (self.sq_flat @ W.ravel()) / ls**2


def _hyper_grad_core(L: np.ndarray, v: np.ndarray, z: np.ndarray) -> np.ndarray:
    """E = L^-T C L^-1 with C the masked outer product of L^T v and z."""
    w = L.T @ v
    C = np.tril(np.outer(w, z), -1)
    np.fill_diagonal(C, 0.5 * w * z)
    F = _tri_solve(L, C, trans=1)
    return _tri_solve(L, F.T, trans=1).T


def _pref_terms(g: np.ndarray, winners: np.ndarray, losers: np.ndarray, both: np.ndarray, sigma_n: float):
    """Probit log-likelihood, gradient wrt g, and gradient wrt log sigma_n.

    both is the concatenation [winners, losers], precomputed by the caller.
    """
    t = (g[winners] - g[losers]) / (np.sqrt(2.0) * sigma_n)
    lnd = log_ndtr(t)
    ll = float(lnd.sum())
    r = np.exp(-0.5 * t * t - 0.5 * LOG2PI - lnd)
    coef = r / (np.sqrt(2.0) * sigma_n)
    v = np.bincount(both, np.concatenate([coef, -coef]), g.shape[0])
    return ll, v, float(-(r * t).sum())


def _comparison_as_arrays(comparisons) -> tuple[np.ndarray, np.ndarray]:
    winners = np.asarray([c.winner_index for c in comparisons], dtype=np.intp)
    losers = np.asarray([c.loser_index for c in comparisons], dtype=np.intp)
    return winners, losers


class _NormalPriors:
    """Vectorized independent normal priors over an unconstrained block."""

    def __init__(self, means: np.ndarray, sds: np.ndarray):
        self.means = np.asarray(means, dtype=float)
        self.sds = np.asarray(sds, dtype=float)
        self.const = float(-np.sum(np.log(self.sds)) - 0.5 * self.means.size * LOG2PI)

    def lp_and_grad(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        w = (u - self.means) / self.sds
        return self.const - 0.5 * float(w @ w), -w / self.sds


def build_gaussian_latent_model(
    train_inputs: np.ndarray,
    targets: np.ndarray,
    params: KernelParams,
    noise_sd: float,
) -> LogDensityModel:
    """Latent-only model with Gaussian likelihood and fixed hyperparameters.

    Used to cross-check sampling inference against the closed-form posterior.
    """
    X = np.atleast_2d(np.asarray(train_inputs, dtype=float))
    y = np.atleast_1d(np.asarray(targets, dtype=float))
    n = X.shape[0]
    sq = sq_dists_per_dim(X, X)
    k_unit = kernel_matrix_from_sq(sq, KernelParams(params.lengthscales, 1.0, params.kind))
    res = _chol_jittered(k_unit, 1.0)
    if res is None:
        raise np.linalg.LinAlgError("fixed-hyperparameter Gram matrix is not PD")
    L = np.sqrt(params.signal_variance) * res[0]
    sig2 = noise_sd**2
    ll_const = -0.5 * n * LOG2PI - n * np.log(noise_sd) - 0.5 * n * LOG2PI

    def value_and_gradient(x: np.ndarray):
        if _out_of_bounds(x):
            return -np.inf, np.zeros(n)
        g = L @ x
        resid = y - g
        lp = ll_const - 0.5 * float(x @ x) - 0.5 * float(resid @ resid) / sig2
        return lp, -x + L.T @ (resid / sig2)

    return LogDensityModel(
        dim=n,
        n_latent=n,
        hyper_names=(),
        value_and_gradient=value_and_gradient,
        transform=lambda x: (L @ x, np.zeros(0)),
        initial_point=lambda rng: 0.1 * rng.standard_normal(n),
        name="gaussian-latent",
    )


def build_pref_gp_model(
    hf_inputs: np.ndarray,
    comparisons,
    kind: str = "se",
    priors: PriorConfig = PriorConfig(),
) -> LogDensityModel:
    """Joint posterior over latent utilities at compared points and hyperparameters.

    Unconstrained layout: [z (n), log lengthscales (d), log signal_sd, log noise_sd].
    """
    X = np.atleast_2d(np.asarray(hf_inputs, dtype=float))
    n, d = X.shape
    if not comparisons:
        raise ValueError("need at least one comparison to fit a preference GP")
    winners, losers = _comparison_as_arrays(comparisons)
    if winners.max(initial=-1) >= n or losers.max(initial=-1) >= n:
        raise ValueError("comparison index out of range")
    both = np.concatenate([winners, losers])
    ctx = _KernelContext(X, kind)
    dim = n + d + 2
    prior = _NormalPriors(
        np.concatenate([np.full(d, priors.lengthscale_log_mean), [priors.signal_log_mean, priors.noise_log_mean]]),
        np.concatenate([np.full(d, priors.lengthscale_log_sd), [priors.signal_log_sd, priors.noise_log_sd]]),
    )

    def value_and_gradient(x: np.ndarray):
        z, u = x[:n], x[n:]
        if _out_of_bounds(x):
            return -np.inf, np.zeros(dim)
        ls = np.exp(u[:d])
        sig_sd = np.exp(u[d])
        sigma_n = np.exp(u[d + 1])

        k_unit, dpref = ctx.unit_kernel(ls)
        res = _chol_jittered(k_unit, 1.0)
        if res is None:
            return -np.inf, np.zeros(dim)
        L = sig_sd * res[0]
        g = L @ z

        ll, v, dll_dlogn = _pref_terms(g, winners, losers, both, sigma_n)
        plp, pgrad = prior.lp_and_grad(u)
        lp = -0.5 * float(z @ z) - 0.5 * n * LOG2PI + ll + plp

        grad = np.empty(dim)
        grad[:n] = -z + L.T @ v
        E = _hyper_grad_core(L, v, z)
        pref_mat = k_unit if dpref is None else dpref
        grad[n : n + d] = ctx.lengthscale_grads(sig_sd**2 * pref_mat * E, ls)
        grad[n + d] = float(v @ g)
        grad[n + d + 1] = dll_dlogn
        grad[n:] += pgrad
        return float(lp), grad

    def transform(x: np.ndarray):
        z, u = x[:n], x[n:]
        ls = np.exp(u[:d])
        sig_sd = np.exp(u[d])
        res = _chol_jittered(ctx.unit_kernel(ls)[0], 1.0)
        if res is None:
            raise np.linalg.LinAlgError("Gram factorization failed in transform")
        return sig_sd * (res[0] @ z), np.concatenate([ls, [sig_sd, np.exp(u[d + 1])]])

    def initial_point(rng: np.random.Generator) -> np.ndarray:
        return np.concatenate(
            [0.1 * rng.standard_normal(n), prior.means + 0.1 * rng.standard_normal(d + 2)]
        )

    return LogDensityModel(
        dim=dim,
        n_latent=n,
        hyper_names=tuple(f"lengthscale_{j}" for j in range(d)) + ("signal_sd", "noise_sd"),
        value_and_gradient=value_and_gradient,
        transform=transform,
        initial_point=initial_point,
        name="pref-gp",
    )


def build_icm_model_full(
    data: MixedDataset,
    kind: str = "se",
    priors: PriorConfig = PriorConfig(),
) -> LogDensityModel:
    """Joint posterior for the coregionalized mixed-modality GP, all latents kept.

    Latents live at [hf inputs..., lf inputs...]; the base kernel has unit
    variance so the 2x2 inter-fidelity matrix carries all output scales.
    Unconstrained layout: [z, log lengthscales, log sigma_hf, log sigma_lf,
    logit rho, log noise_sd]. The collapsed variant below mixes better and
    is what the surrogate uses; this form is kept as the reference density.
    """
    if data.is_empty():
        raise ValueError("mixed dataset must contain at least one observation")
    n_hf, n_lf = data.n_hf, data.n_lf
    n = n_hf + n_lf
    d = data.dim
    X = np.vstack([data.hf_inputs.reshape(n_hf, d), data.lf_inputs.reshape(n_lf, d)])
    winners, losers = _comparison_as_arrays(data.comparisons)
    both = np.concatenate([winners, losers])
    y_lf = data.lf_targets
    ctx = _KernelContext(X, kind)
    pr = priors
    dim = n + d + 4
    prior = _NormalPriors(
        np.concatenate(
            [np.full(d, pr.lengthscale_log_mean), [pr.signal_log_mean, pr.signal_log_mean, pr.noise_log_mean]]
        ),
        np.concatenate(
            [np.full(d, pr.lengthscale_log_sd), [pr.signal_log_sd, pr.signal_log_sd, pr.noise_log_sd]]
        ),
    )

    def build_bmap(sig_hf, sig_lf, rho):
        bmap = np.empty((n, n))
        cross = rho * sig_hf * sig_lf
        bmap[:n_hf, :n_hf] = sig_hf**2
        bmap[n_hf:, n_hf:] = sig_lf**2
        bmap[:n_hf, n_hf:] = cross
        bmap[n_hf:, :n_hf] = cross
        return bmap

    def build_L(ls, sig_hf, sig_lf, rho):
        k_unit, dpref = ctx.unit_kernel(ls)
        bmap = build_bmap(sig_hf, sig_lf, rho)
        bdiag = np.concatenate([np.full(n_hf, sig_hf**2), np.full(n_lf, sig_lf**2)])
        res = _chol_jittered(bmap * k_unit, bdiag)
        if res is None:
            return None
        return res[0], k_unit, bmap, dpref, res[1], bdiag

    def value_and_gradient(x: np.ndarray):
        z = x[:n]
        u = x[n:]
        if _out_of_bounds(x):
            return -np.inf, np.zeros(dim)
        ls = np.exp(u[:d])
        sig_hf, sig_lf = np.exp(u[d]), np.exp(u[d + 1])
        sigma_n = np.exp(u[d + 3])
        rho_lp, rho_grad, rho = _beta_logit_lp(u[d + 2], pr.rho_alpha, pr.rho_beta)

        built = build_L(ls, sig_hf, sig_lf, rho)
        if built is None:
            return -np.inf, np.zeros(dim)
        L, k_unit, bmap, dpref, rel, bdiag = built
        g = L @ z

        ll = 0.0
        v = np.zeros(n)
        dll_dlogn = 0.0
        if winners.size:
            ll_p, v_p, dlogn_p = _pref_terms(g, winners, losers, both, sigma_n)
            ll += ll_p
            v += v_p
            dll_dlogn += dlogn_p
        if n_lf:
            resid = y_lf - g[n_hf:]
            sse = float(resid @ resid)
            ll += -0.5 * n_lf * LOG2PI - n_lf * np.log(sigma_n) - 0.5 * sse / sigma_n**2
            v[n_hf:] += resid / sigma_n**2
            dll_dlogn += -n_lf + sse / sigma_n**2

        plp, pgrad_normal = prior.lp_and_grad(u[[*range(d), d, d + 1, d + 3]])
        lp = -0.5 * float(z @ z) - 0.5 * n * LOG2PI + ll + rho_lp + plp

        grad = np.empty(dim)
        grad[:n] = -z + L.T @ v
        E = _hyper_grad_core(L, v, z)
        P = bmap * k_unit * E
        if dpref is None:
            # diagonal entries multiply zero squared distances, so P serves both uses
            grad[n : n + d] = ctx.lengthscale_grads(P, ls)
        else:
            grad[n : n + d] = ctx.lengthscale_grads(bmap * dpref * E, ls)
        # jitter inherits the B diagonal, so the scale derivatives stay exact
        P.ravel()[:: n + 1] += rel * bdiag * E.ravel()[:: n + 1]
        total = float(P.sum())
        phh = float(P[:n_hf, :n_hf].sum())
        pll = float(P[n_hf:, n_hf:].sum())
        phl = total - phh - pll
        grad[n + d] = 2.0 * phh + phl
        grad[n + d + 1] = 2.0 * pll + phl
        # on the cross blocks P = rho sig_hf sig_lf k_unit E, so the rho
        # gradient reduces to (1 - rho) * phl
        grad[n + d + 2] = (1.0 - rho) * phl + rho_grad
        grad[n + d + 3] = dll_dlogn
        grad[n : n + d] += pgrad_normal[:d]
        grad[n + d] += pgrad_normal[d]
        grad[n + d + 1] += pgrad_normal[d + 1]
        grad[n + d + 3] += pgrad_normal[d + 2]
        return float(lp), grad

    def transform(x: np.ndarray):
        z, u = x[:n], x[n:]
        ls = np.exp(u[:d])
        rho = float(expit(u[d + 2]))
        built = build_L(ls, np.exp(u[d]), np.exp(u[d + 1]), rho)
        if built is None:
            raise np.linalg.LinAlgError("Gram factorization failed in transform")
        return built[0] @ z, np.concatenate([ls, [np.exp(u[d]), np.exp(u[d + 1]), rho, np.exp(u[d + 3])]])

    def initial_point(rng: np.random.Generator) -> np.ndarray:
        mean_rho = pr.rho_alpha / (pr.rho_alpha + pr.rho_beta)
        u0 = np.concatenate(
            [
                np.full(d, pr.lengthscale_log_mean),
                [pr.signal_log_mean, pr.signal_log_mean, np.log(mean_rho / (1 - mean_rho)), pr.noise_log_mean],
            ]
        )
        return np.concatenate([0.1 * rng.standard_normal(n), u0 + 0.1 * rng.standard_normal(d + 4)])

    return LogDensityModel(
        dim=dim,
        n_latent=n,
        hyper_names=tuple(f"lengthscale_{j}" for j in range(d)) + ("sigma_hf", "sigma_lf", "rho", "noise_sd"),
        value_and_gradient=value_and_gradient,
        transform=transform,
        initial_point=initial_point,
        name="mm-icm",
    )


def build_ar1_delta_model(
    hf_inputs: np.ndarray,
    comparisons,
    lf_mean: np.ndarray,
    lf_cov: np.ndarray,
    kind: str = "se",
    priors: PriorConfig = PriorConfig(),
) -> LogDensityModel:
    """Posterior over the high-fidelity correction at compared points.

    The low-fidelity model enters only through its predictive mean at the
    compared points and the variance of each compared difference, both held
    fixed during sampling. Unconstrained layout:
    [z (n), log lengthscales (d), log signal_sd, log noise_sd].
    """
    X = np.atleast_2d(np.asarray(hf_inputs, dtype=float))
    n, d = X.shape
    winners, losers = _comparison_as_arrays(comparisons)
    m = np.atleast_1d(np.asarray(lf_mean, dtype=float))
    cov = np.atleast_2d(np.asarray(lf_cov, dtype=float))
    if m.shape[0] != n or cov.shape != (n, n):
        raise ValueError("lf predictive statistics must cover all hf inputs")
    both = np.concatenate([winners, losers])
    if winners.size:
        vdiff = np.maximum(cov[winners, winners] + cov[losers, losers] - 2.0 * cov[winners, losers], 0.0)
        mdiff = m[winners] - m[losers]
    else:
        vdiff = np.zeros(0)
        mdiff = np.zeros(0)
    ctx = _KernelContext(X, kind)
    dim = n + d + 2
    prior = _NormalPriors(
        np.concatenate([np.full(d, priors.lengthscale_log_mean), [priors.signal_log_mean, priors.noise_log_mean]]),
        np.concatenate([np.full(d, priors.lengthscale_log_sd), [priors.signal_log_sd, priors.noise_log_sd]]),
    )

    def value_and_gradient(x: np.ndarray):
        z, u = x[:n], x[n:]
        if _out_of_bounds(x):
            return -np.inf, np.zeros(dim)
        ls = np.exp(u[:d])
        sig_sd = np.exp(u[d])
        sigma_n = np.exp(u[d + 1])

        k_unit, dpref = ctx.unit_kernel(ls)
        res = _chol_jittered(k_unit, 1.0)
        if res is None:
            return -np.inf, np.zeros(dim)
        L = sig_sd * res[0]
        delta = L @ z

        plp, pgrad = prior.lp_and_grad(u)
        lp = -0.5 * float(z @ z) - 0.5 * n * LOG2PI + plp
        v = np.zeros(n)
        dll_dlogn = 0.0
        if winners.size:
            s2 = vdiff + 2.0 * sigma_n**2
            s = np.sqrt(s2)
            t = (delta[winners] - delta[losers] + mdiff) / s
            lnd = log_ndtr(t)
            lp += float(lnd.sum())
            r = np.exp(-0.5 * t * t - 0.5 * LOG2PI - lnd)
            coef = r / s
            v = np.bincount(both, np.concatenate([coef, -coef]), n)
            dll_dlogn = float(-(r * t * 2.0 * sigma_n**2 / s2).sum())

        grad = np.empty(dim)
        grad[:n] = -z + L.T @ v
        E = _hyper_grad_core(L, v, z)
        pref_mat = k_unit if dpref is None else dpref
        grad[n : n + d] = ctx.lengthscale_grads(sig_sd**2 * pref_mat * E, ls)
        grad[n + d] = float(v @ delta)
        grad[n + d + 1] = dll_dlogn
        grad[n:] += pgrad
        return float(lp), grad

    def transform(x: np.ndarray):
        z, u = x[:n], x[n:]
        ls = np.exp(u[:d])
        sig_sd = np.exp(u[d])
        res = _chol_jittered(ctx.unit_kernel(ls)[0], 1.0)
        if res is None:
            raise np.linalg.LinAlgError("Gram factorization failed in transform")
        return sig_sd * (res[0] @ z), np.concatenate([ls, [sig_sd, np.exp(u[d + 1])]])

    def initial_point(rng: np.random.Generator) -> np.ndarray:
        return np.concatenate(
            [0.1 * rng.standard_normal(n), prior.means + 0.1 * rng.standard_normal(d + 2)]
        )

    return LogDensityModel(
        dim=dim,
        n_latent=n,
        hyper_names=tuple(f"lengthscale_{j}" for j in range(d)) + ("signal_sd", "noise_sd"),
        value_and_gradient=value_and_gradient,
        transform=transform,
        initial_point=initial_point,
        name="mm-ar1-delta",
    )


def build_icm_model(
    data: MixedDataset,
    kind: str = "se",
    priors: PriorConfig = PriorConfig(),
) -> LogDensityModel:
    """Collapsed posterior for the coregionalized mixed-modality GP.

    The numerically observed latents integrate out of the joint in closed
    form (their likelihood is Gaussian), leaving sampled blocks
    [z (n_hf), log lengthscales, log sigma_hf, log sigma_lf, logit rho,
    log noise_sd]. The target is exactly the marginal of the full model's
    posterior, with far better geometry once numerical data accumulates.
    """
    if data.is_empty():
        raise ValueError("mixed dataset must contain at least one observation")
    n_h, n_l = data.n_hf, data.n_lf
    n = n_h + n_l
    d = data.dim
    X = np.vstack([data.hf_inputs.reshape(n_h, d), data.lf_inputs.reshape(n_l, d)])
    winners, losers = _comparison_as_arrays(data.comparisons)
    both = np.concatenate([winners, losers])
    y_lf = data.lf_targets
    ctx = _KernelContext(X, kind)
    pr = priors
    dim = n_h + d + 4
    eye_l = np.eye(n_l)
    prior = _NormalPriors(
        np.concatenate(
            [np.full(d, pr.lengthscale_log_mean), [pr.signal_log_mean, pr.signal_log_mean, pr.noise_log_mean]]
        ),
        np.concatenate(
            [np.full(d, pr.lengthscale_log_sd), [pr.signal_log_sd, pr.signal_log_sd, pr.noise_log_sd]]
        ),
    )
    hsl = slice(0, n_h)
    lsl = slice(n_h, n)

    def build_blocks(ls, sig_hf, sig_lf, rho):
        k_unit, dpref = ctx.unit_kernel(ls)
        cross = rho * sig_hf * sig_lf
        K = np.empty((n, n))
        K[hsl, hsl] = sig_hf**2 * k_unit[hsl, hsl]
        K[lsl, lsl] = sig_lf**2 * k_unit[lsl, lsl]
        K[hsl, lsl] = cross * k_unit[hsl, lsl]
        K[lsl, hsl] = cross * k_unit[lsl, hsl]
        return K, k_unit, dpref

    def value_and_gradient(x: np.ndarray):
        z, u = x[:n_h], x[n_h:]
        if _out_of_bounds(x):
            return -np.inf, np.zeros(dim)
        ls = np.exp(u[:d])
        sig_hf, sig_lf = np.exp(u[d]), np.exp(u[d + 1])
        sigma_n = np.exp(u[d + 3])
        rho_lp, rho_grad, rho = _beta_logit_lp(u[d + 2], pr.rho_alpha, pr.rho_beta)

        K, k_unit, dpref = build_blocks(ls, sig_hf, sig_lf, rho)
        plp, pgrad_normal = prior.lp_and_grad(u[[*range(d), d, d + 1, d + 3]])
        lp = rho_lp + plp
        grad = np.zeros(dim)

        # hf block: whitened latents against the (jittered) hf prior
        Khh_j = K[hsl, hsl].copy()
        if n_h:
            res = _chol_jittered(Khh_j, sig_hf**2)
            if res is None:
                return -np.inf, np.zeros(dim)
            C_h, rel_h = res
            Khh_j.ravel()[:: n_h + 1] += rel_h * sig_hf**2
            g_h = C_h @ z
            lp += -0.5 * float(z @ z) - 0.5 * n_h * LOG2PI
        else:
            C_h = np.zeros((0, 0))
            g_h = np.zeros(0)

        v_h = np.zeros(n_h)
        dll_dlogn = 0.0
        if winners.size:
            ll_c, v_h, dll_dlogn = _pref_terms(g_h, winners, losers, both, sigma_n)
            lp += ll_c

        if n_l:
            K_hl = K[hsl, lsl]
            # A = Khh^-1 K_hl via the hf factor
            with np.errstate(all="ignore"):
                if n_h:
                    A = _tri_solve(C_h, _tri_solve(C_h, K_hl, trans=0), trans=1)
                    mu = A.T @ g_h
                    q = _tri_solve(C_h, z[:, None], trans=1)[:, 0]
                else:
                    A = np.zeros((0, n_l))
                    mu = np.zeros(n_l)
                    q = np.zeros(0)
                S = K[lsl, lsl] - K_hl.T @ A + sigma_n**2 * eye_l
            if not np.all(np.isfinite(S)) or not np.all(np.isfinite(mu)):
                return -np.inf, np.zeros(dim)
            L_s, info = dpotrf(np.asfortranarray(S), lower=1, clean=1, overwrite_a=0)
            if info != 0:
                return -np.inf, np.zeros(dim)
            r = y_lf - mu
            alpha = _tri_solve(L_s, _tri_solve(L_s, r[:, None], trans=0), trans=1)[:, 0]
            lp += float(
                -0.5 * n_l * LOG2PI - np.sum(np.log(np.diag(L_s))) - 0.5 * r @ alpha
            )
            Sinv = _tri_solve(L_s, _tri_solve(L_s, eye_l, trans=0), trans=1)
            W_s = 0.5 * (np.outer(alpha, alpha) - Sinv)
            dll_dlogn += sigma_n**2 * float(alpha @ alpha - np.trace(Sinv))
            Aalpha = A @ alpha
        else:
            W_s = np.zeros((0, 0))
            alpha = np.zeros(0)
            Aalpha = np.zeros(n_h)
            A = np.zeros((n_h, 0))
            q = None

        # gradient wrt whitened latents
        if n_h:
            vtot = v_h + Aalpha
            grad[:n_h] = -z + C_h.T @ vtot
            E_h = _hyper_grad_core(C_h, vtot, z)
        else:
            E_h = np.zeros((0, 0))

        # assemble the full-matrix weight for kernel-hyperparameter gradients
        W_full = np.zeros((n, n))
        if n_h:
            W_full[hsl, hsl] = E_h
            if n_l:
                W_full[hsl, hsl] += A @ W_s @ A.T - np.outer(Aalpha, q)
        if n_l:
            W_full[lsl, lsl] = W_s
            if n_h:
                W_hl = np.outer(q, alpha) - 2.0 * A @ W_s
                W_full[hsl, lsl] = 0.5 * W_hl
                W_full[lsl, hsl] = 0.5 * W_hl.T

        if dpref is None:
            grad[n_h : n_h + d] = ctx.lengthscale_grads(K * W_full, ls)
        else:
            cross = rho * sig_hf * sig_lf
            Kd = np.empty((n, n))
            Kd[hsl, hsl] = sig_hf**2 * dpref[hsl, hsl]
            Kd[lsl, lsl] = sig_lf**2 * dpref[lsl, lsl]
            Kd[hsl, lsl] = cross * dpref[hsl, lsl]
            Kd[lsl, hsl] = cross * dpref[lsl, hsl]
            grad[n_h : n_h + d] = ctx.lengthscale_grads(Kd * W_full, ls)

        # block scale derivatives; Khh's jitter inherits sigma_hf^2
        hh_term = float((Khh_j * W_full[hsl, hsl]).sum()) if n_h else 0.0
        ll_term = float((K[lsl, lsl] * W_full[lsl, lsl]).sum()) if n_l else 0.0
        hl_term = 2.0 * float((K[hsl, lsl] * W_full[hsl, lsl]).sum()) if (n_h and n_l) else 0.0
        grad[n_h + d] = 2.0 * hh_term + hl_term
        grad[n_h + d + 1] = 2.0 * ll_term + hl_term
        grad[n_h + d + 2] = (1.0 - rho) * hl_term + rho_grad
        grad[n_h + d + 3] = dll_dlogn
        grad[n_h : n_h + d] += pgrad_normal[:d]
        grad[n_h + d] += pgrad_normal[d]
        grad[n_h + d + 1] += pgrad_normal[d + 1]
        grad[n_h + d + 3] += pgrad_normal[d + 2]
        return float(lp), grad

    def transform(x: np.ndarray):
        z, u = x[:n_h], x[n_h:]
        ls = np.exp(u[:d])
        rho = float(expit(u[d + 2]))
        sig_hf, sig_lf = np.exp(u[d]), np.exp(u[d + 1])
        if n_h:
            K, _, _ = build_blocks(ls, sig_hf, sig_lf, rho)
            res = _chol_jittered(K[hsl, hsl].copy(), sig_hf**2)
            if res is None:
                raise np.linalg.LinAlgError("hf Gram factorization failed in transform")
            g_h = res[0] @ z
        else:
            g_h = np.zeros(0)
        return g_h, np.concatenate([ls, [sig_hf, sig_lf, rho, np.exp(u[d + 3])]])

    def initial_point(rng: np.random.Generator) -> np.ndarray:
        mean_rho = pr.rho_alpha / (pr.rho_alpha + pr.rho_beta)
        u0 = np.concatenate(
            [
                np.full(d, pr.lengthscale_log_mean),
                [pr.signal_log_mean, pr.signal_log_mean, np.log(mean_rho / (1 - mean_rho)), pr.noise_log_mean],
            ]
        )
        return np.concatenate([0.1 * rng.standard_normal(n_h), u0 + 0.1 * rng.standard_normal(d + 4)])

    return LogDensityModel(
        dim=dim,
        n_latent=n_h,
        hyper_names=tuple(f"lengthscale_{j}" for j in range(d)) + ("sigma_hf", "sigma_lf", "rho", "noise_sd"),
        value_and_gradient=value_and_gradient,
        transform=transform,
        initial_point=initial_point,
        name="mm-icm",
    )
