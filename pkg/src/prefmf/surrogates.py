"""Fitted surrogate models behind one prediction interface.

Three sample-based models (preference GP, coregionalized mixed-modality GP,
hierarchical correction GP) plus a closed-form numerical GP. All expose
posterior_mean / sample_at / marginal_components / pair_components so the
optimization loop runs unchanged against any of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from .densities import (
    PriorConfig,
    build_ar1_delta_model,
    build_icm_model,
    build_pref_gp_model,
)
from .design import Box, rng_for
from .gp import FitConfig, FittedGP, chol_with_jitter, condition_closed_form, fit_gp
from .kernels import Fidelity, KernelParams, kernel_matrix, kernel_rowwise
from .likelihoods import Comparison, MixedDataset
from .mcmc import HMCConfig, MCMCDivergenceError, PosteriorSampleSet, hmc_sample

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SurrogateConfig:
    kernel_kind: str = "se"
    mcmc: HMCConfig = field(default_factory=HMCConfig)
    priors: PriorConfig = field(default_factory=PriorConfig)
    lf_fit: FitConfig = field(default_factory=FitConfig)
    predict_thin: int | None = None
    warm_start: bool = False
    warm_warmup: int = 100


def _thin_indices(n: int, thin: int | None) -> np.ndarray:
    if thin is None or thin >= n:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, thin).astype(int))


def _as_fidelity(f) -> Fidelity:
    if isinstance(f, str):
        return Fidelity.HF if f.lower() == "hf" else Fidelity.LF
    return Fidelity(f)


class SurrogateModel:
    """Common surface: sample-based posterior prediction over the design box."""

    kind: str = "base"

    def __init__(self, box: Box, config: SurrogateConfig):
        self.box = box
        self.config = config

    # subclasses fill these in
    def marginal_components(self, X, fidelity=Fidelity.HF, thin=None):
        """Per-component predictive means and variances, shapes (M, T)."""
        raise NotImplementedError

    def pair_components(self, pairs, thin=None):
        """Top-fidelity joint predictives over point pairs: (M, P, 2) means, (M, P, 2, 2) covs."""
        raise NotImplementedError

    def joint_components(self, X, fidelity=Fidelity.HF, thin=None):
        """Per-component joint means (M, T) and covariances (M, T, T)."""
        raise NotImplementedError

    def conditional_blocks(self, A, B, fidelity=Fidelity.HF, thin=None):
        """Marginals at A and B plus their cross-covariance per component.

        Returns (mean_A (M,a), var_A (M,a), mean_B (M,b), var_B (M,b),
        cov_AB (M,a,b)); used by variance-reduction acquisitions.
        """
        raise NotImplementedError

    def posterior_mean(self, X, fidelity=Fidelity.HF, thin=None) -> np.ndarray:
        means, _ = self.marginal_components(X, fidelity=fidelity, thin=thin)
        return means.mean(axis=0)

    def sample_at(self, X, n_draws: int, seed: int = 0, fidelity=Fidelity.HF) -> np.ndarray:
        """n_draws joint predictive draws at X, shape (n_draws, T)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if n_draws == 0:
            return np.zeros((0, X.shape[0]))
        means, covs = self.joint_components(X, fidelity=fidelity)
        M, T = means.shape
        rng = np.random.default_rng(seed)
        comp = np.arange(n_draws) % M
        out = np.empty((n_draws, T))
        chols: dict[int, np.ndarray] = {}
        for i, c in enumerate(comp):
            if c not in chols:
                chols[c] = chol_with_jitter(covs[c])
            out[i] = means[c] + chols[c] @ rng.standard_normal(T)
        return out

    def to_doc(self) -> dict:
        raise NotImplementedError

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_doc(), fh)


def _config_to_doc(config: SurrogateConfig) -> dict:
    return {
        "kernel_kind": config.kernel_kind,
        "mcmc": vars(config.mcmc).copy(),
        "priors": vars(config.priors).copy(),
        "lf_fit": vars(config.lf_fit).copy(),
        "predict_thin": config.predict_thin,
        "warm_start": config.warm_start,
        "warm_warmup": config.warm_warmup,
    }


def _config_from_doc(doc: dict) -> SurrogateConfig:
    return SurrogateConfig(
        kernel_kind=doc["kernel_kind"],
        mcmc=HMCConfig(**doc["mcmc"]),
        priors=PriorConfig(**doc["priors"]),
        lf_fit=FitConfig(**doc["lf_fit"]),
        predict_thin=doc.get("predict_thin"),
        warm_start=doc.get("warm_start", False),
        warm_warmup=doc.get("warm_warmup", 100),
    )


def _samples_to_doc(s: PosteriorSampleSet) -> dict:
    return {
        "latent_draws": s.latent_draws.tolist(),
        "hyper_draws": s.hyper_draws.tolist(),
        "hyper_names": list(s.hyper_names),
        "diagnostics": s.diagnostics,
        "final_states": None if s.final_states is None else s.final_states.tolist(),
    }


def _samples_from_doc(doc: dict) -> PosteriorSampleSet:
    return PosteriorSampleSet(
        np.asarray(doc["latent_draws"], dtype=float).reshape(len(doc["latent_draws"]), -1),
        np.asarray(doc["hyper_draws"], dtype=float).reshape(len(doc["hyper_draws"]), -1),
        tuple(doc["hyper_names"]),
        doc["diagnostics"],
        None if doc.get("final_states") is None else np.asarray(doc["final_states"], dtype=float),
    )


def _warm_inits(previous: PosteriorSampleSet | None, new_dim: int, n_latent_new: int, n_latent_old: int):
    """Map a previous fit's final chain states into a grown model's space."""
    if previous is None or previous.final_states is None:
        return None
    inits = []
    for row in previous.final_states:
        x = np.zeros(new_dim)
        keep = min(n_latent_old, n_latent_new)
        x[:keep] = row[:keep]
        n_hyper = row.shape[0] - n_latent_old
        if n_hyper > 0 and new_dim - n_latent_new == n_hyper:
            x[n_latent_new:] = row[n_latent_old:]
        inits.append(x)
    return inits


def _mcmc_config_for_refit(config: SurrogateConfig, warm: bool) -> HMCConfig:
    if not warm:
        return config.mcmc
    return replace(config.mcmc, warmup=max(config.warm_warmup, 20))


#: A warm-started fit is redone cold when its chains disagree this much or
#: diverge this often; stale warm states are the usual trigger.
_WARM_RHAT_GATE = 1.3
_WARM_DIVERGENCE_GATE = 0.05


def _fit_is_healthy(samples: PosteriorSampleSet, config: HMCConfig) -> bool:
    d = samples.diagnostics
    rhat = d.get("split_rhat_max")
    div_rate = float(np.sum(d.get("divergences", [0]))) / max(config.chains * config.draws, 1)
    return (rhat is None or not np.isfinite(rhat) or rhat <= _WARM_RHAT_GATE) and div_rate <= _WARM_DIVERGENCE_GATE


def _sample_with_retry(model, config: SurrogateConfig, warm: bool, inits) -> PosteriorSampleSet:
    """Quality-gated sampling: unhealthy warm refits rerun cold, and one
    longer-adapted retry precedes propagating a divergence failure."""
    try:
        samples = hmc_sample(model, _mcmc_config_for_refit(config, warm), inits)
        if warm and not _fit_is_healthy(samples, config.mcmc):
            samples = hmc_sample(model, config.mcmc, None)
        return samples
    except MCMCDivergenceError:
        retry = replace(
            config.mcmc,
            warmup=2 * max(config.mcmc.warmup, 300),
            target_accept=min(0.95, config.mcmc.target_accept + 0.1),
            seed=config.mcmc.seed + 999331,
        )
        return hmc_sample(model, retry, None)


class PreferenceGP(SurrogateModel):
    """Latent-utility GP inferred from pairwise comparisons only."""

    kind = "pref-gp"

    def __init__(self, box, config, data: MixedDataset, samples: PosteriorSampleSet):
        super().__init__(box, config)
        self.data = data
        self.samples = samples
        self._Xu = box.to_unit(data.hf_inputs)
        d = box.dim
        self._ls_cols = slice(0, d)
        self._sig_col = d

    def _per_sample(self, Xt_unit: np.ndarray, thin, want_joint: bool, pairs: bool = False):
        idx = _thin_indices(self.samples.n_samples, thin)
        hyp = self.samples.hyper_draws
        lat = self.samples.latent_draws
        T = Xt_unit.shape[0]
        M = idx.shape[0]
        means = np.empty((M, T))
        if pairs:
            P = T // 2
            covs = np.empty((M, P, 2, 2))
        elif want_joint:
            covs = np.empty((M, T, T))
        else:
            covs = np.empty((M, T))
        kind = self.config.kernel_kind
        for out_i, s in enumerate(idx):
            ls = hyp[s, self._ls_cols]
            sig2 = hyp[s, self._sig_col] ** 2
            params = KernelParams(ls, sig2, kind)
            K = kernel_matrix(self._Xu, self._Xu, params)
            L = chol_with_jitter(K)
            A = solve_triangular(L, kernel_matrix(self._Xu, Xt_unit, params), lower=True, check_finite=False)
            b = solve_triangular(L, lat[s], lower=True, check_finite=False)
            means[out_i] = A.T @ b
            if pairs:
                left = Xt_unit[0::2]
                right = Xt_unit[1::2]
                kx = kernel_rowwise(left, right, params)
                v_all = sig2 - np.sum(A * A, axis=0)
                cross = kx - np.sum(A[:, 0::2] * A[:, 1::2], axis=0)
                covs[out_i, :, 0, 0] = v_all[0::2]
                covs[out_i, :, 1, 1] = v_all[1::2]
                covs[out_i, :, 0, 1] = cross
                covs[out_i, :, 1, 0] = cross
            elif want_joint:
                C = kernel_matrix(Xt_unit, Xt_unit, params) - A.T @ A
                covs[out_i] = 0.5 * (C + C.T)
            else:
                covs[out_i] = np.clip(sig2 - np.sum(A * A, axis=0), 0.0, None)
        return means, covs

    def marginal_components(self, X, fidelity=Fidelity.HF, thin=None):
        Xt = self.box.to_unit(np.atleast_2d(np.asarray(X, dtype=float)))
        return self._per_sample(Xt, thin if thin is not None else self.config.predict_thin, False)

    def joint_components(self, X, fidelity=Fidelity.HF, thin=None):
        Xt = self.box.to_unit(np.atleast_2d(np.asarray(X, dtype=float)))
        return self._per_sample(Xt, thin if thin is not None else self.config.predict_thin, True)

    def pair_components(self, pairs, thin=None):
        pairs = np.asarray(pairs, dtype=float)
        P = pairs.shape[0]
        flat = self.box.to_unit(pairs.reshape(2 * P, -1))
        means, covs = self._per_sample(flat, thin if thin is not None else self.config.predict_thin, False, pairs=True)
        return means.reshape(-1, P, 2), covs

    def conditional_blocks(self, A, B, fidelity=Fidelity.HF, thin=None):
        Xa = self.box.to_unit(np.atleast_2d(np.asarray(A, dtype=float)))
        Xb = self.box.to_unit(np.atleast_2d(np.asarray(B, dtype=float)))
        idx = _thin_indices(self.samples.n_samples, thin if thin is not None else self.config.predict_thin)
        hyp, lat = self.samples.hyper_draws, self.samples.latent_draws
        a, b, M = Xa.shape[0], Xb.shape[0], idx.shape[0]
        out = (np.empty((M, a)), np.empty((M, a)), np.empty((M, b)), np.empty((M, b)), np.empty((M, a, b)))
        kind = self.config.kernel_kind
        for out_i, s in enumerate(idx):
            params = KernelParams(hyp[s, self._ls_cols], hyp[s, self._sig_col] ** 2, kind)
            K = kernel_matrix(self._Xu, self._Xu, params)
            L = chol_with_jitter(K)
            Va = solve_triangular(L, kernel_matrix(self._Xu, Xa, params), lower=True, check_finite=False)
            Vb = solve_triangular(L, kernel_matrix(self._Xu, Xb, params), lower=True, check_finite=False)
            w = solve_triangular(L, lat[s], lower=True, check_finite=False)
            out[0][out_i] = Va.T @ w
            out[1][out_i] = np.clip(params.signal_variance - np.sum(Va * Va, axis=0), 0.0, None)
            out[2][out_i] = Vb.T @ w
            out[3][out_i] = np.clip(params.signal_variance - np.sum(Vb * Vb, axis=0), 0.0, None)
            out[4][out_i] = kernel_matrix(Xa, Xb, params) - Va.T @ Vb
        return out

    def to_doc(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "box": {"lower": self.box.lower.tolist(), "upper": self.box.upper.tolist()},
            "config": _config_to_doc(self.config),
            "data": {
                "hf_inputs": self.data.hf_inputs.tolist(),
                "comparisons": [[c.winner_index, c.loser_index] for c in self.data.comparisons],
            },
            "samples": _samples_to_doc(self.samples),
        }


class MultiModalICM(SurrogateModel):
    """Coregionalized GP conditioned jointly on comparisons and numerical data.

    Inference stores draws of the latent utility at the compared points; the
    numerically observed latents are integrated out, so predictions condition
    on [hf latent draw, standardized targets] with the sampled noise variance
    on the numerical rows.
    """

    kind = "mm-icm"

    def __init__(self, box, config, data: MixedDataset, samples: PosteriorSampleSet, y_shift: float, y_scale: float):
        super().__init__(box, config)
        self.data = data
        self.samples = samples
        self.y_shift = y_shift
        self.y_scale = y_scale
        self._Xu = np.vstack(
            [
                box.to_unit(data.hf_inputs.reshape(data.n_hf, box.dim)),
                box.to_unit(data.lf_inputs.reshape(data.n_lf, box.dim)),
            ]
        )
        self._train_fid = np.concatenate([np.ones(data.n_hf, dtype=int), np.full(data.n_lf, 2, dtype=int)])
        self._y_std = (data.lf_targets - y_shift) / y_scale
        d = box.dim
        self._ls_cols = slice(0, d)
        self._shf_col, self._slf_col, self._rho_col, self._noise_col = d, d + 1, d + 2, d + 3

    def _sample_B_row(self, s: int, test_fid: Fidelity):
        hyp = self.samples.hyper_draws[s]
        shf, slf, rho = hyp[self._shf_col], hyp[self._slf_col], hyp[self._rho_col]
        B = np.array([[shf**2, rho * shf * slf], [rho * shf * slf, slf**2]])
        ti = int(test_fid) - 1
        col = B[self._train_fid - 1, ti]
        return col, B[ti, ti]

    def _sample_train(self, s: int):
        """Per-sample conditioning matrix factor and conditioning values."""
        hyp = self.samples.hyper_draws[s]
        params = KernelParams(hyp[self._ls_cols], 1.0, self.config.kernel_kind)
        shf, slf, rho = hyp[self._shf_col], hyp[self._slf_col], hyp[self._rho_col]
        B = np.array([[shf**2, rho * shf * slf], [rho * shf * slf, slf**2]])
        fi = self._train_fid - 1
        K = B[np.ix_(fi, fi)] * kernel_matrix(self._Xu, self._Xu, params)
        noise2 = hyp[self._noise_col] ** 2
        K.ravel()[:: K.shape[0] + 1] += np.where(self._train_fid == 2, noise2, 0.0)
        L = chol_with_jitter(K)
        values = np.concatenate([self.samples.latent_draws[s], self._y_std])
        return params, L, values

    def _per_sample(self, Xt_unit, test_fid: Fidelity, thin, want_joint: bool, pairs: bool = False):
        idx = _thin_indices(self.samples.n_samples, thin)
        T = Xt_unit.shape[0]
        M = idx.shape[0]
        means = np.empty((M, T))
        if pairs:
            covs = np.empty((M, T // 2, 2, 2))
        elif want_joint:
            covs = np.empty((M, T, T))
        else:
            covs = np.empty((M, T))
        for out_i, s in enumerate(idx):
            params, L, values = self._sample_train(s)
            col_scale, test_var = self._sample_B_row(s, test_fid)
            Ks = col_scale[:, None] * kernel_matrix(self._Xu, Xt_unit, params)
            A = solve_triangular(L, Ks, lower=True, check_finite=False)
            b = solve_triangular(L, values, lower=True, check_finite=False)
            means[out_i] = A.T @ b
            if pairs:
                left, right = Xt_unit[0::2], Xt_unit[1::2]
                kx = test_var * kernel_rowwise(left, right, params)
                v_all = test_var - np.sum(A * A, axis=0)
                cross = kx - np.sum(A[:, 0::2] * A[:, 1::2], axis=0)
                covs[out_i, :, 0, 0] = v_all[0::2]
                covs[out_i, :, 1, 1] = v_all[1::2]
                covs[out_i, :, 0, 1] = cross
                covs[out_i, :, 1, 0] = cross
            elif want_joint:
                C = test_var * kernel_matrix(Xt_unit, Xt_unit, params) - A.T @ A
                covs[out_i] = 0.5 * (C + C.T)
            else:
                covs[out_i] = np.clip(test_var - np.sum(A * A, axis=0), 0.0, None)
        return means, covs

    def marginal_components(self, X, fidelity=Fidelity.HF, thin=None):
        Xt = self.box.to_unit(np.atleast_2d(np.asarray(X, dtype=float)))
        return self._per_sample(
            Xt, _as_fidelity(fidelity), thin if thin is not None else self.config.predict_thin, False
        )

    def joint_components(self, X, fidelity=Fidelity.HF, thin=None):
        Xt = self.box.to_unit(np.atleast_2d(np.asarray(X, dtype=float)))
        return self._per_sample(
            Xt, _as_fidelity(fidelity), thin if thin is not None else self.config.predict_thin, True
        )

    def pair_components(self, pairs, thin=None):
        pairs = np.asarray(pairs, dtype=float)
        P = pairs.shape[0]
        flat = self.box.to_unit(pairs.reshape(2 * P, -1))
        means, covs = self._per_sample(
            flat, Fidelity.HF, thin if thin is not None else self.config.predict_thin, False, pairs=True
        )
        return means.reshape(-1, P, 2), covs

    def conditional_blocks(self, A, B, fidelity=Fidelity.HF, thin=None):
        Xa = self.box.to_unit(np.atleast_2d(np.asarray(A, dtype=float)))
        Xb = self.box.to_unit(np.atleast_2d(np.asarray(B, dtype=float)))
        fid = _as_fidelity(fidelity)
        idx = _thin_indices(self.samples.n_samples, thin if thin is not None else self.config.predict_thin)
        a, b, M = Xa.shape[0], Xb.shape[0], idx.shape[0]
        out = (np.empty((M, a)), np.empty((M, a)), np.empty((M, b)), np.empty((M, b)), np.empty((M, a, b)))
        for out_i, s in enumerate(idx):
            params, L, values = self._sample_train(s)
            col_scale, test_var = self._sample_B_row(s, fid)
            Va = solve_triangular(L, col_scale[:, None] * kernel_matrix(self._Xu, Xa, params), lower=True, check_finite=False)
            Vb = solve_triangular(L, col_scale[:, None] * kernel_matrix(self._Xu, Xb, params), lower=True, check_finite=False)
            w = solve_triangular(L, values, lower=True, check_finite=False)
            out[0][out_i] = Va.T @ w
            out[1][out_i] = np.clip(test_var - np.sum(Va * Va, axis=0), 0.0, None)
            out[2][out_i] = Vb.T @ w
            out[3][out_i] = np.clip(test_var - np.sum(Vb * Vb, axis=0), 0.0, None)
            out[4][out_i] = test_var * kernel_matrix(Xa, Xb, params) - Va.T @ Vb
        return out

    def to_doc(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "box": {"lower": self.box.lower.tolist(), "upper": self.box.upper.tolist()},
            "config": _config_to_doc(self.config),
            "data": {
                "hf_inputs": self.data.hf_inputs.tolist(),
                "comparisons": [[c.winner_index, c.loser_index] for c in self.data.comparisons],
                "lf_inputs": self.data.lf_inputs.tolist(),
                "lf_targets": self.data.lf_targets.tolist(),
            },
            "y_shift": self.y_shift,
            "y_scale": self.y_scale,
            "samples": _samples_to_doc(self.samples),
        }


class MultiModalAR1(SurrogateModel):
    """Low-fidelity GP plus an independent preference-informed correction GP."""

    kind = "mm-ar1"

    def __init__(
        self,
        box,
        config,
        data: MixedDataset,
        lf_model: FittedGP,
        samples: PosteriorSampleSet,
    ):
        super().__init__(box, config)
        self.data = data
        self.lf_model = lf_model
        self.samples = samples
        self._Xu_hf = box.to_unit(data.hf_inputs.reshape(data.n_hf, box.dim))
        d = box.dim
        self._ls_cols = slice(0, d)
        self._sig_col = d

    def _delta_components(self, Xt_unit, thin, want_joint: bool, pairs: bool = False):
        """Per-sample conditionals of the correction GP at the test points."""
        idx = _thin_indices(self.samples.n_samples, thin)
        hyp = self.samples.hyper_draws
        lat = self.samples.latent_draws
        T = Xt_unit.shape[0]
        M = idx.shape[0]
        n = self._Xu_hf.shape[0]
        means = np.empty((M, T))
        if pairs:
            covs = np.empty((M, T // 2, 2, 2))
        elif want_joint:
            covs = np.empty((M, T, T))
        else:
            covs = np.empty((M, T))
        kind = self.config.kernel_kind
        for out_i, s in enumerate(idx):
            params = KernelParams(hyp[s, self._ls_cols], hyp[s, self._sig_col] ** 2, kind)
            sig2 = params.signal_variance
            if n == 0:
                means[out_i] = 0.0
                if pairs:
                    left, right = Xt_unit[0::2], Xt_unit[1::2]
                    kx = kernel_rowwise(left, right, params)
                    covs[out_i, :, 0, 0] = sig2
                    covs[out_i, :, 1, 1] = sig2
                    covs[out_i, :, 0, 1] = kx
                    covs[out_i, :, 1, 0] = kx
                elif want_joint:
                    covs[out_i] = kernel_matrix(Xt_unit, Xt_unit, params)
                else:
                    covs[out_i] = sig2
                continue
            K = kernel_matrix(self._Xu_hf, self._Xu_hf, params)
            L = chol_with_jitter(K)
            A = solve_triangular(L, kernel_matrix(self._Xu_hf, Xt_unit, params), lower=True, check_finite=False)
            b = solve_triangular(L, lat[s], lower=True, check_finite=False)
            means[out_i] = A.T @ b
            if pairs:
                left, right = Xt_unit[0::2], Xt_unit[1::2]
                kx = kernel_rowwise(left, right, params)
                v_all = sig2 - np.sum(A * A, axis=0)
                cross = kx - np.sum(A[:, 0::2] * A[:, 1::2], axis=0)
                covs[out_i, :, 0, 0] = v_all[0::2]
                covs[out_i, :, 1, 1] = v_all[1::2]
                covs[out_i, :, 0, 1] = cross
                covs[out_i, :, 1, 0] = cross
            elif want_joint:
                C = kernel_matrix(Xt_unit, Xt_unit, params) - A.T @ A
                covs[out_i] = 0.5 * (C + C.T)
            else:
                covs[out_i] = np.clip(sig2 - np.sum(A * A, axis=0), 0.0, None)
        return means, covs

    def _lf_prediction(self, Xt_unit, want_joint: bool):
        pred = condition_closed_form(self.lf_model.dataset, self.lf_model.params, 0.0, Xt_unit)
        if want_joint:
            return pred.mean, pred.covariance
        return pred.mean, pred.variance

    def marginal_components(self, X, fidelity=Fidelity.HF, thin=None):
        Xt = self.box.to_unit(np.atleast_2d(np.asarray(X, dtype=float)))
        lf_mean, lf_var = self._lf_prediction(Xt, False)
        if _as_fidelity(fidelity) == Fidelity.LF:
            return lf_mean[None, :], lf_var[None, :]
        dm, dv = self._delta_components(Xt, thin if thin is not None else self.config.predict_thin, False)
        return dm + lf_mean, dv + lf_var

    def joint_components(self, X, fidelity=Fidelity.HF, thin=None):
        Xt = self.box.to_unit(np.atleast_2d(np.asarray(X, dtype=float)))
        lf_mean, lf_cov = self._lf_prediction(Xt, True)
        if _as_fidelity(fidelity) == Fidelity.LF:
            return lf_mean[None, :], lf_cov[None, :, :]
        dm, dc = self._delta_components(Xt, thin if thin is not None else self.config.predict_thin, True)
        return dm + lf_mean, dc + lf_cov

    def pair_components(self, pairs, thin=None):
        pairs = np.asarray(pairs, dtype=float)
        P = pairs.shape[0]
        flat = self.box.to_unit(pairs.reshape(2 * P, -1))
        lf_mean, lf_cov = self._lf_prediction(flat, True)
        dm, dc = self._delta_components(flat, thin if thin is not None else self.config.predict_thin, False, pairs=True)
        means = dm + lf_mean
        i1 = np.arange(P) * 2
        i2 = i1 + 1
        dc[:, :, 0, 0] += lf_cov[i1, i1]
        dc[:, :, 1, 1] += lf_cov[i2, i2]
        dc[:, :, 0, 1] += lf_cov[i1, i2]
        dc[:, :, 1, 0] += lf_cov[i2, i1]
        return means.reshape(-1, P, 2), dc

    def conditional_blocks(self, A, B, fidelity=Fidelity.HF, thin=None):
        Xa = self.box.to_unit(np.atleast_2d(np.asarray(A, dtype=float)))
        Xb = self.box.to_unit(np.atleast_2d(np.asarray(B, dtype=float)))
        a, b = Xa.shape[0], Xb.shape[0]
        joint = condition_closed_form(self.lf_model.dataset, self.lf_model.params, 0.0, np.vstack([Xa, Xb]))
        lf_mean_a, lf_mean_b = joint.mean[:a], joint.mean[a:]
        lf_var_a = np.clip(np.diag(joint.covariance)[:a], 0.0, None)
        lf_var_b = np.clip(np.diag(joint.covariance)[a:], 0.0, None)
        lf_cov_ab = joint.covariance[:a, a:]
        if _as_fidelity(fidelity) == Fidelity.LF:
            return (
                lf_mean_a[None, :],
                lf_var_a[None, :],
                lf_mean_b[None, :],
                lf_var_b[None, :],
                lf_cov_ab[None, :, :],
            )
        idx = _thin_indices(self.samples.n_samples, thin if thin is not None else self.config.predict_thin)
        hyp, lat = self.samples.hyper_draws, self.samples.latent_draws
        M = idx.shape[0]
        n = self._Xu_hf.shape[0]
        out = (np.empty((M, a)), np.empty((M, a)), np.empty((M, b)), np.empty((M, b)), np.empty((M, a, b)))
        kind = self.config.kernel_kind
        for out_i, s in enumerate(idx):
            params = KernelParams(hyp[s, self._ls_cols], hyp[s, self._sig_col] ** 2, kind)
            if n == 0:
                out[0][out_i] = lf_mean_a
                out[1][out_i] = lf_var_a + params.signal_variance
                out[2][out_i] = lf_mean_b
                out[3][out_i] = lf_var_b + params.signal_variance
                out[4][out_i] = lf_cov_ab + kernel_matrix(Xa, Xb, params)
                continue
            K = kernel_matrix(self._Xu_hf, self._Xu_hf, params)
            L = chol_with_jitter(K)
            Va = solve_triangular(L, kernel_matrix(self._Xu_hf, Xa, params), lower=True, check_finite=False)
            Vb = solve_triangular(L, kernel_matrix(self._Xu_hf, Xb, params), lower=True, check_finite=False)
            w = solve_triangular(L, lat[s], lower=True, check_finite=False)
            out[0][out_i] = lf_mean_a + Va.T @ w
            out[1][out_i] = lf_var_a + np.clip(params.signal_variance - np.sum(Va * Va, axis=0), 0.0, None)
            out[2][out_i] = lf_mean_b + Vb.T @ w
            out[3][out_i] = lf_var_b + np.clip(params.signal_variance - np.sum(Vb * Vb, axis=0), 0.0, None)
            out[4][out_i] = lf_cov_ab + kernel_matrix(Xa, Xb, params) - Va.T @ Vb
        return out

    def sample_components_at(self, X, n_draws: int, seed: int = 0):
        """Joint hf draws split into (lf part, correction part); their sum is the hf draw."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Xt = self.box.to_unit(X)
        T = Xt.shape[0]
        if n_draws == 0:
            return np.zeros((0, T)), np.zeros((0, T))
        lf_mean, lf_cov = self._lf_prediction(Xt, True)
        L_lf = chol_with_jitter(lf_cov)
        dm, dc = self._delta_components(Xt, self.config.predict_thin, True)
        M = dm.shape[0]
        rng = np.random.default_rng(seed)
        comp = np.arange(n_draws) % M
        lf_draws = np.empty((n_draws, T))
        delta_draws = np.empty((n_draws, T))
        chols: dict[int, np.ndarray] = {}
        for i, c in enumerate(comp):
            lf_draws[i] = lf_mean + L_lf @ rng.standard_normal(T)
            if c not in chols:
                chols[c] = chol_with_jitter(dc[c])
            delta_draws[i] = dm[c] + chols[c] @ rng.standard_normal(T)
        return lf_draws, delta_draws

    def sample_at(self, X, n_draws: int, seed: int = 0, fidelity=Fidelity.HF) -> np.ndarray:
        if _as_fidelity(fidelity) == Fidelity.LF:
            return super().sample_at(X, n_draws, seed, fidelity)
        lf_draws, delta_draws = self.sample_components_at(X, n_draws, seed)
        return lf_draws + delta_draws

    def to_doc(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "box": {"lower": self.box.lower.tolist(), "upper": self.box.upper.tolist()},
            "config": _config_to_doc(self.config),
            "data": {
                "hf_inputs": self.data.hf_inputs.tolist(),
                "comparisons": [[c.winner_index, c.loser_index] for c in self.data.comparisons],
                "lf_inputs": self.data.lf_inputs.tolist(),
                "lf_targets": self.data.lf_targets.tolist(),
            },
            "lf_model": {
                "inputs": self.lf_model.inputs.tolist(),
                "targets_std": self.lf_model.targets_std.tolist(),
                "lengthscales": self.lf_model.params.lengthscales.tolist(),
                "signal_variance": self.lf_model.params.signal_variance,
                "kernel_kind": self.lf_model.params.kind,
                "noise_sd": self.lf_model.noise_sd,
                "y_shift": self.lf_model.y_shift,
                "y_scale": self.lf_model.y_scale,
            },
            "samples": _samples_to_doc(self.samples),
        }


class NumericalGP(SurrogateModel):
    """Closed-form GP over numerical observations (single fidelity)."""

    kind = "gp"

    def __init__(self, box, config, inputs: np.ndarray, targets: np.ndarray, model: FittedGP):
        super().__init__(box, config)
        self.inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        self.targets = np.atleast_1d(np.asarray(targets, dtype=float))
        self.model = model

    def marginal_components(self, X, fidelity=Fidelity.HF, thin=None):
        Xt = self.box.to_unit(np.atleast_2d(np.asarray(X, dtype=float)))
        pred = self.model.predict(Xt)
        return pred.mean[None, :], pred.variance[None, :]

    def joint_components(self, X, fidelity=Fidelity.HF, thin=None):
        Xt = self.box.to_unit(np.atleast_2d(np.asarray(X, dtype=float)))
        pred = self.model.predict(Xt)
        return pred.mean[None, :], pred.covariance[None, :, :]

    def pair_components(self, pairs, thin=None):
        pairs = np.asarray(pairs, dtype=float)
        P = pairs.shape[0]
        means, cov = self.joint_components(pairs.reshape(2 * P, -1))
        covs = np.empty((1, P, 2, 2))
        i1, i2 = np.arange(P) * 2, np.arange(P) * 2 + 1
        covs[0, :, 0, 0] = cov[0][i1, i1]
        covs[0, :, 1, 1] = cov[0][i2, i2]
        covs[0, :, 0, 1] = cov[0][i1, i2]
        covs[0, :, 1, 0] = cov[0][i2, i1]
        return means.reshape(1, P, 2), covs

    def conditional_blocks(self, A, B, fidelity=Fidelity.HF, thin=None):
        Xa = np.atleast_2d(np.asarray(A, dtype=float))
        Xb = np.atleast_2d(np.asarray(B, dtype=float))
        a = Xa.shape[0]
        means, cov = self.joint_components(np.vstack([Xa, Xb]))
        var = np.clip(np.diag(cov[0]), 0.0, None)
        return (
            means[:, :a],
            var[None, :a],
            means[:, a:],
            var[None, a:],
            cov[:, :a, a:],
        )

    def to_doc(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "box": {"lower": self.box.lower.tolist(), "upper": self.box.upper.tolist()},
            "config": _config_to_doc(self.config),
            "data": {"inputs": self.inputs.tolist(), "targets": self.targets.tolist()},
            "lf_model": {
                "lengthscales": self.model.params.lengthscales.tolist(),
                "signal_variance": self.model.params.signal_variance,
                "kernel_kind": self.model.params.kind,
                "noise_sd": self.model.noise_sd,
                "y_shift": self.model.y_shift,
                "y_scale": self.model.y_scale,
            },
        }


def fit_pref_gp(
    hf_inputs,
    comparisons,
    box: Box,
    config: SurrogateConfig = SurrogateConfig(),
    warm_from: PreferenceGP | None = None,
) -> PreferenceGP:
    """Infer the latent utility GP from pairwise comparisons."""
    comparisons = tuple(comparisons)
    if not comparisons:
        raise ValueError("need at least one comparison to fit a preference GP")
    hf_inputs = np.atleast_2d(np.asarray(hf_inputs, dtype=float))
    data = MixedDataset(hf_inputs, comparisons, np.zeros((0, box.dim)), np.zeros(0))
    Xu = box.to_unit(hf_inputs)
    model = build_pref_gp_model(Xu, comparisons, config.kernel_kind, config.priors)
    inits = None
    warm = config.warm_start and warm_from is not None
    if warm:
        inits = _warm_inits(warm_from.samples, model.dim, model.n_latent, warm_from.samples.latent_draws.shape[1])
    samples = _sample_with_retry(model, config, warm, inits)
    return PreferenceGP(box, config, data, samples)


def fit_mm_icm(
    data: MixedDataset,
    box: Box,
    config: SurrogateConfig = SurrogateConfig(),
    warm_from: MultiModalICM | None = None,
) -> MultiModalICM:
    """Infer the coregionalized surrogate on mixed-modality data."""
    if data.is_empty():
        raise ValueError("mixed dataset must contain at least one observation")
    y = data.lf_targets
    if y.shape[0] >= 2 and float(np.std(y)) > 1e-12:
        y_shift, y_scale = float(np.mean(y)), float(np.std(y))
    else:
        y_shift, y_scale = 0.0, 1.0
    std_data = MixedDataset(
        box.to_unit(data.hf_inputs.reshape(data.n_hf, box.dim)),
        data.comparisons,
        box.to_unit(data.lf_inputs.reshape(data.n_lf, box.dim)),
        (y - y_shift) / y_scale,
    )
    model = build_icm_model(std_data, config.kernel_kind, config.priors)
    inits = None
    warm = config.warm_start and warm_from is not None
    if warm:
        inits = _warm_inits(warm_from.samples, model.dim, model.n_latent, warm_from.samples.latent_draws.shape[1])
    samples = _sample_with_retry(model, config, warm, inits)
    return MultiModalICM(box, config, data, samples, y_shift, y_scale)


def _prior_only_delta_samples(config: SurrogateConfig, dim: int) -> PosteriorSampleSet:
    """Correction-GP hyperparameters drawn from their priors (no comparisons yet)."""
    pr = config.priors
    S = config.mcmc.chains * config.mcmc.draws
    rng = rng_for(config.mcmc.seed, 9102)
    ls = np.exp(pr.lengthscale_log_mean + pr.lengthscale_log_sd * rng.standard_normal((S, dim)))
    sig = np.exp(pr.signal_log_mean + pr.signal_log_sd * rng.standard_normal((S, 1)))
    noise = np.exp(pr.noise_log_mean + pr.noise_log_sd * rng.standard_normal((S, 1)))
    hyper = np.hstack([ls, sig, noise])
    names = tuple(f"lengthscale_{j}" for j in range(dim)) + ("signal_sd", "noise_sd")
    diag = {"model": "mm-ar1-delta", "prior_only": True, "chains": config.mcmc.chains}
    return PosteriorSampleSet(np.zeros((S, 0)), hyper, names, diag)


def fit_mm_ar1(
    data: MixedDataset,
    box: Box,
    config: SurrogateConfig = SurrogateConfig(),
    warm_from: MultiModalAR1 | None = None,
) -> MultiModalAR1:
    """Two-step fit: evidence-maximized lf GP, then sampled correction GP."""
    if data.n_lf < 2:
        raise ValueError("the hierarchical model needs at least 2 low-fidelity observations")
    Xu_lf = box.to_unit(data.lf_inputs)
    lf_model = fit_gp(Xu_lf, data.lf_targets, config.lf_fit)
    Xu_hf = box.to_unit(data.hf_inputs.reshape(data.n_hf, box.dim))
    if data.comparisons:
        pred = condition_closed_form(lf_model.dataset, lf_model.params, 0.0, Xu_hf)
        model = build_ar1_delta_model(
            Xu_hf, data.comparisons, pred.mean, pred.covariance, config.kernel_kind, config.priors
        )
        inits = None
        warm = config.warm_start and warm_from is not None and not warm_from.samples.diagnostics.get("prior_only")
        if warm:
            inits = _warm_inits(warm_from.samples, model.dim, model.n_latent, warm_from.samples.latent_draws.shape[1])
        samples = _sample_with_retry(model, config, warm, inits)
    else:
        samples = _prior_only_delta_samples(config, box.dim)
    return MultiModalAR1(box, config, data, lf_model, samples)


def fit_numerical_gp(
    inputs,
    targets,
    box: Box,
    config: SurrogateConfig = SurrogateConfig(),
) -> NumericalGP:
    """Closed-form GP surrogate for numerical-only optimization."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    model = fit_gp(box.to_unit(inputs), targets, config.lf_fit)
    return NumericalGP(box, config, inputs, targets, model)


def load_model(doc: dict) -> SurrogateModel:
    """Rebuild a fitted surrogate from its serialized document."""
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    box = Box(np.asarray(doc["box"]["lower"]), np.asarray(doc["box"]["upper"]))
    config = _config_from_doc(doc["config"])
    kind = doc["kind"]
    d = box.dim
    if kind == "pref-gp":
        data = MixedDataset(
            np.asarray(doc["data"]["hf_inputs"], dtype=float).reshape(-1, d),
            tuple(Comparison(w, l) for w, l in doc["data"]["comparisons"]),
            np.zeros((0, d)),
            np.zeros(0),
        )
        return PreferenceGP(box, config, data, _samples_from_doc(doc["samples"]))
    if kind == "mm-icm":
        data = _mixed_from_doc(doc["data"], d)
        return MultiModalICM(box, config, data, _samples_from_doc(doc["samples"]), doc["y_shift"], doc["y_scale"])
    if kind == "mm-ar1":
        data = _mixed_from_doc(doc["data"], d)
        lf = doc["lf_model"]
        lf_model = FittedGP(
            np.asarray(lf["inputs"], dtype=float).reshape(-1, d),
            np.asarray(lf["targets_std"], dtype=float),
            KernelParams(np.asarray(lf["lengthscales"]), lf["signal_variance"], lf["kernel_kind"]),
            lf["noise_sd"],
            lf["y_shift"],
            lf["y_scale"],
        )
        return MultiModalAR1(box, config, data, lf_model, _samples_from_doc(doc["samples"]))
    if kind == "gp":
        inputs = np.asarray(doc["data"]["inputs"], dtype=float).reshape(-1, d)
        targets = np.asarray(doc["data"]["targets"], dtype=float)
        lf = doc["lf_model"]
        y_std = (targets - lf["y_shift"]) / lf["y_scale"]
        model = FittedGP(
            Box(box.lower, box.upper).to_unit(inputs),
            y_std,
            KernelParams(np.asarray(lf["lengthscales"]), lf["signal_variance"], lf["kernel_kind"]),
            lf["noise_sd"],
            lf["y_shift"],
            lf["y_scale"],
        )
        return NumericalGP(box, config, inputs, targets, model)
    raise ValueError(f"unknown surrogate kind {kind!r}")


def _mixed_from_doc(data_doc: dict, d: int) -> MixedDataset:
    return MixedDataset(
        np.asarray(data_doc["hf_inputs"], dtype=float).reshape(-1, d),
        tuple(Comparison(w, l) for w, l in data_doc["comparisons"]),
        np.asarray(data_doc["lf_inputs"], dtype=float).reshape(-1, d),
        np.asarray(data_doc["lf_targets"], dtype=float),
    )
