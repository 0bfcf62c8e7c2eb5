import json

import numpy as np
import pytest

from conftest import consistent_comparisons, fast_surrogate_config
from prefmf.densities import PriorConfig
from prefmf.design import unit_box
from prefmf.kernels import Fidelity
from prefmf.likelihoods import Comparison, MixedDataset
from prefmf.mcmc import PosteriorSampleSet
from prefmf.surrogates import (
    MultiModalAR1,
    fit_mm_ar1,
    fit_mm_icm,
    fit_numerical_gp,
    fit_pref_gp,
    load_model,
)


@pytest.fixture(scope="module")
def box():
    return unit_box(2)


def peak_utility(X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.exp(-0.5 * np.sum(((X - [0.7, 0.3]) / 0.25) ** 2, axis=1))


class TestPrefGP:
    def test_single_comparison_orders_means(self, box):
        X = np.array([[0.2, 0.2], [0.8, 0.8]])
        m = fit_pref_gp(X, [Comparison(0, 1)], box, fast_surrogate_config(1))
        pm = m.posterior_mean(X)
        assert pm[0] > pm[1]

    def test_consistent_chain_orders_means(self, box):
        X = np.array([[0.1, 0.5], [0.5, 0.5], [0.9, 0.5]])
        comps = [Comparison(0, 1), Comparison(1, 2), Comparison(0, 2)]
        ok = 0
        for seed in range(5):
            m = fit_pref_gp(X, comps, box, fast_surrogate_config(seed))
            pm = m.posterior_mean(X)
            if pm[0] > pm[1] > pm[2]:
                ok += 1
        assert ok >= 4

    def test_zero_comparisons_rejected(self, box):
        with pytest.raises(ValueError):
            fit_pref_gp(np.array([[0.5, 0.5]]), [], box, fast_surrogate_config())


class TestMultiModalICM:
    def test_lf_only_transfer_to_hf(self, box):
        grid = box.sobol(20, seed=99)
        ok = 0
        for seed in range(5):
            rng = np.random.default_rng(seed)
            Xlf = box.uniform(16, rng)
            ylf = peak_utility(Xlf) + 0.05 * rng.standard_normal(16)
            data = MixedDataset(np.zeros((0, 2)), (), Xlf, ylf)
            m = fit_mm_icm(data, box, fast_surrogate_config(seed))
            hf = m.posterior_mean(grid, fidelity=Fidelity.HF)
            lf = m.posterior_mean(grid, fidelity=Fidelity.LF)
            if np.corrcoef(hf, lf)[0, 1] > 0.5:
                ok += 1
        assert ok >= 4

    def test_hf_only_reduces_to_pref_gp_ordering(self, box):
        ok = 0
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            X = box.uniform(10, rng)
            comps = consistent_comparisons(rng, X, peak_utility, 9)
            data = MixedDataset(X, tuple(comps), np.zeros((0, 2)), np.zeros(0))
            icm = fit_mm_icm(data, box, fast_surrogate_config(seed))
            pref = fit_pref_gp(X, comps, box, fast_surrogate_config(seed))
            a = icm.posterior_mean(X)
            b = pref.posterior_mean(X)
            if np.corrcoef(np.argsort(np.argsort(a)), np.argsort(np.argsort(b)))[0, 1] > 0.7:
                ok += 1
        assert ok >= 4

    def test_empty_dataset_rejected(self, box):
        with pytest.raises(ValueError):
            fit_mm_icm(MixedDataset(np.zeros((0, 2)), (), np.zeros((0, 2)), np.zeros(0)), box)

    def test_rho_suppressed_prior_reverts_hf_to_prior(self, box):
        # a Beta(1, 20) prior keeps rho near zero, severing the modalities
        rng = np.random.default_rng(3)
        Xlf = box.uniform(16, rng)
        ylf = 5.0 + 3.0 * peak_utility(Xlf)
        data = MixedDataset(np.zeros((0, 2)), (), Xlf, ylf)
        cfg = fast_surrogate_config(3, priors=PriorConfig(rho_alpha=1.0, rho_beta=20.0))
        m = fit_mm_icm(data, box, cfg)
        grid = box.sobol(16, seed=5)
        hf_mean = m.posterior_mean(grid, fidelity=Fidelity.HF)
        prior_sd = float(np.mean(m.samples.hyper("sigma_hf")))
        assert np.all(np.abs(hf_mean) <= 2.0 * prior_sd)


class TestMultiModalAR1:
    def test_without_comparisons_hf_tracks_lf(self, box):
        rng = np.random.default_rng(4)
        Xlf = box.uniform(14, rng)
        ylf = peak_utility(Xlf) + 0.02 * rng.standard_normal(14)
        data = MixedDataset(np.zeros((0, 2)), (), Xlf, ylf)
        m = fit_mm_ar1(data, box, fast_surrogate_config(4))
        grid = box.sobol(25, seed=6)
        hf_means, hf_vars = m.marginal_components(grid, fidelity=Fidelity.HF)
        lf_mean = m.posterior_mean(grid, fidelity=Fidelity.LF)
        hf_mean = hf_means.mean(axis=0)
        hf_sd = np.sqrt(hf_vars.mean(axis=0) + hf_means.var(axis=0))
        assert np.all(np.abs(hf_mean - lf_mean) <= 2.0 * hf_sd)

    def test_contradicting_comparisons_flip_ordering(self, box):
        # lf says A < B; repeated preferences say A beats B
        A, B = np.array([0.25, 0.5]), np.array([0.75, 0.5])
        flips = 0
        for seed in range(5):
            rng = np.random.default_rng(200 + seed)
            Xlf = box.uniform(12, rng)
            ylf = Xlf[:, 0]  # lf utility increases along x0, so lf(A) < lf(B)
            X_hf = np.vstack([A, B])
            comps = tuple(Comparison(0, 1) for _ in range(4))
            data = MixedDataset(X_hf, comps, Xlf, ylf)
            m = fit_mm_ar1(data, box, fast_surrogate_config(seed))
            delta_mean = m.samples.latent_draws.mean(axis=0)
            hf = m.posterior_mean(X_hf)
            if delta_mean[0] > delta_mean[1] and hf[0] > hf[1]:
                flips += 1
        assert flips >= 4

    def test_single_lf_point_rejected(self, box):
        data = MixedDataset(np.zeros((0, 2)), (), np.array([[0.5, 0.5]]), np.array([1.0]))
        with pytest.raises(ValueError):
            fit_mm_ar1(data, box, fast_surrogate_config())

    def test_hierarchy_consistency_exact(self, box):
        rng = np.random.default_rng(6)
        Xlf = box.uniform(10, rng)
        ylf = peak_utility(Xlf)
        X = box.uniform(6, rng)
        comps = consistent_comparisons(rng, X, peak_utility, 5)
        m = fit_mm_ar1(MixedDataset(X, tuple(comps), Xlf, ylf), box, fast_surrogate_config(6))
        pts = box.uniform(4, rng)
        lf_part, delta_part = m.sample_components_at(pts, 32, seed=8)
        total = m.sample_at(pts, 32, seed=8)
        assert np.array_equal(total, lf_part + delta_part)

    def test_forced_zero_correction_reproduces_lf(self, box):
        rng = np.random.default_rng(7)
        Xlf = box.uniform(12, rng)
        ylf = peak_utility(Xlf) + 0.05 * rng.standard_normal(12)
        m = fit_mm_ar1(MixedDataset(np.zeros((0, 2)), (), Xlf, ylf), box, fast_surrogate_config(7))
        # diagnostic: clamp the correction scale to (near) zero
        hyper = m.samples.hyper_draws.copy()
        hyper[:, m.samples.hyper_names.index("signal_sd")] = 1e-8
        forced = MultiModalAR1(
            m.box, m.config, m.data, m.lf_model,
            PosteriorSampleSet(m.samples.latent_draws, hyper, m.samples.hyper_names, {"prior_only": True}),
        )
        pts = box.uniform(5, rng)
        draws = forced.sample_at(pts, 600, seed=9)
        lf_pred_mean = forced.posterior_mean(pts, fidelity=Fidelity.LF)
        se = draws.std(axis=0) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - lf_pred_mean) <= 4 * se + 1e-6)


class TestPredictionInterface:
    @pytest.fixture(scope="class")
    def pref_model(self, box):
        rng = np.random.default_rng(8)
        X = box.uniform(10, rng)
        comps = consistent_comparisons(rng, X, peak_utility, 8)
        return fit_pref_gp(X, comps, box, fast_surrogate_config(8))

    def test_posterior_mean_deterministic(self, pref_model, box):
        pts = box.sobol(6, seed=10)
        assert np.array_equal(pref_model.posterior_mean(pts), pref_model.posterior_mean(pts))

    def test_sample_mean_consistent_with_posterior_mean(self, pref_model, box):
        pts = box.sobol(4, seed=11)
        draws = pref_model.sample_at(pts, 2000, seed=12)
        pm = pref_model.posterior_mean(pts)
        se = draws.std(axis=0) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - pm) <= 3 * se + 1e-3)

    def test_zero_draws_empty(self, pref_model):
        out = pref_model.sample_at(np.array([[0.5, 0.5]]), 0, seed=0)
        assert out.shape == (0, 1)

    def test_winner_beats_loser_in_draw_fraction(self, box):
        rng = np.random.default_rng(9)
        X = np.array([[0.7, 0.3], [0.1, 0.9]])
        comps = [Comparison(0, 1)] * 3
        m = fit_pref_gp(X, comps, box, fast_surrogate_config(9))
        draws = m.sample_at(X, 500, seed=13)
        assert np.mean(draws[:, 0] > draws[:, 1]) > 0.5


class TestSerialization:
    def test_round_trip_all_kinds(self, box):
        rng = np.random.default_rng(10)
        X = box.uniform(8, rng)
        comps = consistent_comparisons(rng, X, peak_utility, 6)
        Xlf = box.uniform(9, rng)
        ylf = peak_utility(Xlf)
        data = MixedDataset(X, tuple(comps), Xlf, ylf)
        cfg = fast_surrogate_config(10)
        models = [
            fit_pref_gp(X, comps, box, cfg),
            fit_mm_icm(data, box, cfg),
            fit_mm_ar1(data, box, cfg),
            fit_numerical_gp(Xlf, ylf, box, cfg),
        ]
        pts = box.sobol(5, seed=14)
        for m in models:
            doc = json.loads(json.dumps(m.to_doc()))
            assert doc["schema_version"] == 1
            re = load_model(doc)
            assert np.allclose(re.posterior_mean(pts), m.posterior_mean(pts))
            assert np.allclose(
                re.sample_at(pts, 16, seed=15), m.sample_at(pts, 16, seed=15)
            )

    def test_unknown_schema_rejected(self, box):
        rng = np.random.default_rng(11)
        Xlf = box.uniform(6, rng)
        m = fit_numerical_gp(Xlf, peak_utility(Xlf), box, fast_surrogate_config(11))
        doc = m.to_doc()
        doc["schema_version"] = 99
        with pytest.raises(ValueError):
            load_model(doc)
