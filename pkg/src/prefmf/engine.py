"""Optimization loops: numerical BO, preferential BO, and the phased
multi-modal multi-fidelity procedure, with trace and regret accounting."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .acquisition import expected_improvement, ipv_values, maximize_pair, maximize_single
from .design import Box, seed_for
from .kernels import Fidelity
from .likelihoods import Comparison, MixedDataset
from .surrogates import (
    SurrogateConfig,
    SurrogateModel,
    _config_from_doc,
    _config_to_doc,
    fit_mm_ar1,
    fit_mm_icm,
    fit_numerical_gp,
    fit_pref_gp,
)

TRACE_SCHEMA_VERSION = 1

PHASE_INIT = "init"
PHASE_LF_EXPLORE = "lf-explore"
PHASE_LF_EXPLOIT = "lf-exploit"
PHASE_HF = "hf"


class OracleFailure(RuntimeError):
    """An oracle raised mid-run; the partial trace is attached."""

    def __init__(self, message: str, trace: "RunTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class PhaseSchedule:
    lf_explore: int
    lf_exploit: int
    hf: int

    def __post_init__(self):
        if min(self.lf_explore, self.lf_exploit, self.hf) < 0:
            raise ValueError("phase counts must be nonnegative")
        if self.lf_explore + self.lf_exploit + self.hf == 0:
            raise ValueError("at least one phase must be non-empty")

    @property
    def total(self) -> int:
        return self.lf_explore + self.lf_exploit + self.hf


@dataclass(frozen=True)
class TruthOracle:
    """Known utility and its optimum value, for benchmark regret only."""

    utility: Callable[[np.ndarray], np.ndarray]
    optimum_value: float


@dataclass
class EpisodeRecord:
    episode: int
    phase: str
    hf_episode: int
    queried: list
    observation: dict
    recommendation: list
    regret: float | None
    wall_clock: float
    diagnostics: dict

    def to_json(self) -> dict:
        return {"record": "episode", **asdict(self)}


@dataclass
class RunTrace:
    meta: dict
    records: list[EpisodeRecord] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.meta["seed"]

    def recommendations(self) -> list[list]:
        return [r.recommendation for r in self.records]

    def comparisons_in(self, phases) -> int:
        return sum(1 for r in self.records if "winner" in r.observation and r.phase in phases)

    def validate(self) -> None:
        """Episode contiguity and modality-per-phase discipline."""
        for i, r in enumerate(self.records):
            if r.episode != i:
                raise ValueError("episode indices must be contiguous from 0")
            if "winner" in r.observation and r.phase not in (PHASE_INIT, PHASE_HF):
                raise ValueError("comparisons may only occur in hf episodes")
            if "y" in r.observation and r.phase == PHASE_HF:
                raise ValueError("numerical observations may not occur in hf episodes")
        hf_seen = False
        for r in self.records:
            if r.phase == PHASE_HF:
                hf_seen = True
            elif hf_seen and r.phase != PHASE_HF:
                raise ValueError("lf episodes may not follow the hf phase")

    def to_jsonl(self) -> str:
        lines = [json.dumps({"record": "meta", "schema_version": TRACE_SCHEMA_VERSION, **self.meta})]
        lines += [json.dumps(r.to_json()) for r in self.records]
        return "\n".join(lines) + "\n"

    def save_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "RunTrace":
        lines = [json.loads(line) for line in text.strip().splitlines() if line.strip()]
        if not lines or lines[0].get("record") != "meta":
            raise ValueError("trace must start with a meta record")
        meta = {k: v for k, v in lines[0].items() if k not in ("record", "schema_version")}
        records = []
        for doc in lines[1:]:
            doc = {k: v for k, v in doc.items() if k != "record"}
            records.append(EpisodeRecord(**doc))
        return cls(meta, records)

    @classmethod
    def load_jsonl(cls, path) -> "RunTrace":
        with open(path) as fh:
            return cls.from_jsonl(fh.read())

    def regret_rows(self) -> list[dict]:
        rows = []
        for r in self.records:
            rows.append(
                {
                    "method": self.meta["method"],
                    "seed": self.meta["seed"],
                    "episode": r.episode,
                    "phase": r.phase,
                    "hf_episode": r.hf_episode,
                    "regret": "" if r.regret is None else repr(r.regret),
                }
            )
        return rows


def write_regret_csv(path, traces: list[RunTrace]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method", "seed", "episode", "phase", "hf_episode", "regret"])
        writer.writeheader()
        for tr in traces:
            for row in tr.regret_rows():
                writer.writerow(row)


def regret_at_hf_episode(trace: RunTrace, k: int) -> float:
    """Recommendation regret once k hf episodes have completed.

    k = 0 reads the last record before the first hf episode (for
    multi-fidelity runs: the lf-phase-only model)."""
    if k == 0:
        pre = [r for r in trace.records if r.hf_episode == 0]
        if not pre:
            raise ValueError("trace has no pre-hf records")
        return float(pre[-1].regret)
    for r in trace.records:
        if r.phase == PHASE_HF and r.hf_episode == k:
            return float(r.regret)
    raise ValueError(f"trace has no hf episode {k}")


@dataclass(frozen=True)
class RunConfig:
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    init_lf_points: int = 4
    init_pairs: int = 2
    acq_budget: int = 512
    rec_budget: int = 512
    acq_draws: int = 256
    ipv_grid_size: int = 64
    ipv_thin: int = 64

    def to_doc(self) -> dict:
        doc = {k: v for k, v in asdict(self).items() if k != "surrogate"}
        doc["surrogate"] = _config_to_doc(self.surrogate)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        surrogate = _config_from_doc(doc.pop("surrogate"))
        return cls(surrogate=surrogate, **doc)


# stable stream ids for per-episode rngs
_STREAM_INIT = 1
_STREAM_ACQ = 2
_STREAM_DM = 3
_STREAM_FIT = 4
_STREAM_REC = 5


def _stream_seed(seed: int, episode: int, stream: int) -> int:
    return int(seed_for(seed, episode, stream).generate_state(1)[0])


def _seeded(config: SurrogateConfig, fit_seed: int) -> SurrogateConfig:
    return replace(config, mcmc=replace(config.mcmc, seed=fit_seed))


def recommend(model: SurrogateModel, box: Box, budget: int, seed: int = 0) -> np.ndarray:
    """Maximize the hf posterior mean over the box."""
    point, _ = maximize_single(
        lambda P: model.posterior_mean(P, fidelity=Fidelity.HF), box, budget, seed=seed
    )
    return point


def regret(xi: np.ndarray, truth_oracle: Callable[[np.ndarray], np.ndarray], truth_optimum_value: float) -> float:
    """Gap between the optimum and the true utility at xi (maximize convention)."""
    if truth_oracle is None:
        raise ValueError("a truth oracle must be registered to compute regret")
    val = float(np.asarray(truth_oracle(np.atleast_2d(np.asarray(xi, dtype=float))))[0])
    return truth_optimum_value - val


def _diag_summary(model: SurrogateModel) -> dict:
    samples = getattr(model, "samples", None)
    if samples is None:
        return {"closed_form": True}
    d = samples.diagnostics
    if d.get("prior_only"):
        return {"prior_only": True}
    return {
        "acceptance_mean": float(np.mean(d["acceptance_rate"])),
        "rhat_max": d["split_rhat_max"],
        "divergences": int(np.sum(d["divergences"])),
    }


def _record(trace, episode, phase, hf_episode, queried, observation, model, box, cfg, seed, truth, t0):
    rec_pt = recommend(model, box, cfg.rec_budget, seed=_stream_seed(seed, episode, _STREAM_REC))
    reg = None if truth is None else regret(rec_pt, truth.utility, truth.optimum_value)
    trace.records.append(
        EpisodeRecord(
            episode=episode,
            phase=phase,
            hf_episode=hf_episode,
            queried=[np.asarray(q, dtype=float).tolist() for q in queried],
            observation=observation,
            recommendation=rec_pt.tolist(),
            regret=reg,
            wall_clock=time.perf_counter() - t0,
            diagnostics=_diag_summary(model),
        )
    )


def propose_lf_query(model, X_lf, phase: str, box: Box, config: RunConfig, seed: int, episode: int) -> np.ndarray:
    """Next low-fidelity query under the phase's acquisition."""
    acq_seed = _stream_seed(seed, episode, _STREAM_ACQ)
    if phase == PHASE_LF_EXPLORE:
        grid = box.sobol(config.ipv_grid_size, seed=acq_seed + 1)
        fn = lambda P: ipv_values(model, P, grid, fidelity=Fidelity.LF, thin=config.ipv_thin)
    else:
        incumbent = float(np.max(model.posterior_mean(X_lf, fidelity=Fidelity.LF)))
        fn = lambda P: expected_improvement(
            model, P, incumbent, fidelity=Fidelity.LF, n_draws=config.acq_draws, seed=acq_seed
        )
    xi, _ = maximize_single(fn, box, config.acq_budget, seed=acq_seed)
    return xi


def propose_pair(model, box: Box, config: RunConfig, seed: int, episode: int) -> tuple[np.ndarray, np.ndarray]:
    """Next comparison pair from the pairwise acquisition."""
    return maximize_pair(
        model, box, config.acq_budget, seed=_stream_seed(seed, episode, _STREAM_ACQ), n_draws=config.acq_draws
    )


def _call_oracle(oracle, X, trace):
    try:
        return np.atleast_1d(np.asarray(oracle(np.atleast_2d(X)), dtype=float))
    except Exception as exc:
        raise OracleFailure(f"lf oracle failed: {exc}", trace) from exc


def _query_dm(dm, a, b, trace):
    try:
        return dm.query(a, b)
    except Exception as exc:
        raise OracleFailure(f"decision maker failed: {exc}", trace) from exc


def run_numerical_bo(
    lf_oracle,
    box: Box,
    episodes: int,
    seed: int,
    acq: str = "ei",
    config: RunConfig = RunConfig(),
    truth: TruthOracle | None = None,
) -> RunTrace:
    """Single-fidelity numerical BO against a closed-form GP surrogate."""
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    if acq not in ("ei", "ipv"):
        raise ValueError(f"unknown acquisition {acq!r}")
    trace = RunTrace(
        meta={
            "method": f"gp-{acq}",
            "seed": seed,
            "box": {"lower": box.lower.tolist(), "upper": box.upper.tolist()},
            "episodes": episodes,
            "config": config.to_doc(),
        }
    )
    t0 = time.perf_counter()
    X = box.sobol(config.init_lf_points, seed=_stream_seed(seed, 0, _STREAM_INIT))
    y = _call_oracle(lf_oracle, X, trace)
    model = fit_numerical_gp(X, y, box, _seeded(config.surrogate, _stream_seed(seed, 0, _STREAM_FIT)))
    _record(trace, 0, PHASE_INIT, 0, list(X), {"y": y.tolist()}, model, box, config, seed, truth, t0)

    for ep in range(1, episodes + 1):
        t0 = time.perf_counter()
        acq_seed = _stream_seed(seed, ep, _STREAM_ACQ)
        if acq == "ei":
            incumbent = float(np.max(y))
            fn = lambda P: expected_improvement(model, P, incumbent, n_draws=config.acq_draws, seed=acq_seed)
        else:
            grid = box.sobol(config.ipv_grid_size, seed=_stream_seed(seed, ep, _STREAM_ACQ) + 1)
            fn = lambda P: ipv_values(model, P, grid, thin=config.ipv_thin)
        xi, _ = maximize_single(fn, box, config.acq_budget, seed=acq_seed)
        val = _call_oracle(lf_oracle, xi[None, :], trace)[0]
        X = np.vstack([X, xi[None, :]])
        y = np.append(y, val)
        model = fit_numerical_gp(X, y, box, _seeded(config.surrogate, _stream_seed(seed, ep, _STREAM_FIT)))
        _record(
            trace, ep, PHASE_LF_EXPLOIT if acq == "ei" else PHASE_LF_EXPLORE, 0,
            [xi], {"y": float(val)}, model, box, config, seed, truth, t0,
        )
    trace.validate()
    return trace


def _append_hf_point(X: np.ndarray, xi: np.ndarray, tol: float = 1e-9):
    """Append xi to X unless an existing row matches within tol; return (X, index)."""
    if X.shape[0]:
        dists = np.max(np.abs(X - xi[None, :]), axis=1)
        j = int(np.argmin(dists))
        if dists[j] <= tol:
            return X, j
    return np.vstack([X, xi[None, :]]), X.shape[0]


def run_pbo(
    dm_oracle,
    box: Box,
    episodes: int,
    seed: int,
    config: RunConfig = RunConfig(),
    truth: TruthOracle | None = None,
) -> RunTrace:
    """Preference-only BO with the pairwise acquisition."""
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    trace = RunTrace(
        meta={
            "method": "pbo",
            "seed": seed,
            "box": {"lower": box.lower.tolist(), "upper": box.upper.tolist()},
            "episodes": episodes,
            "config": config.to_doc(),
        }
    )
    t0 = time.perf_counter()
    init_pts = box.sobol(2 * config.init_pairs, seed=_stream_seed(seed, 0, _STREAM_INIT))
    X = np.zeros((0, box.dim))
    comparisons: list[Comparison] = []
    init_obs = []
    for p in range(config.init_pairs):
        a, b = init_pts[2 * p], init_pts[2 * p + 1]
        c = _query_dm(dm_oracle, a, b, trace)
        X, ia = _append_hf_point(X, a)
        X, ib = _append_hf_point(X, b)
        idx = (ia, ib)
        comparisons.append(Comparison(idx[c.winner_index], idx[c.loser_index]))
        init_obs.append({"winner": c.winner_index})
    model = fit_pref_gp(X, comparisons, box, _seeded(config.surrogate, _stream_seed(seed, 0, _STREAM_FIT)))
    _record(
        trace, 0, PHASE_INIT, 0, list(init_pts), {"comparisons": init_obs},
        model, box, config, seed, truth, t0,
    )

    for ep in range(1, episodes + 1):
        t0 = time.perf_counter()
        a, b = maximize_pair(model, box, config.acq_budget, seed=_stream_seed(seed, ep, _STREAM_ACQ), n_draws=config.acq_draws)
        c = _query_dm(dm_oracle, a, b, trace)
        X, ia = _append_hf_point(X, a)
        X, ib = _append_hf_point(X, b)
        idx = (ia, ib)
        comparisons.append(Comparison(idx[c.winner_index], idx[c.loser_index]))
        model = fit_pref_gp(
            X, comparisons, box,
            _seeded(config.surrogate, _stream_seed(seed, ep, _STREAM_FIT)),
            warm_from=model if config.surrogate.warm_start else None,
        )
        _record(
            trace, ep, PHASE_HF, ep, [a, b], {"winner": c.winner_index},
            model, box, config, seed, truth, t0,
        )
    trace.validate()
    return trace


def _fit_mm(kind: str, data: MixedDataset, box: Box, scfg: SurrogateConfig, warm_from=None):
    if kind == "mm-icm":
        return fit_mm_icm(data, box, scfg, warm_from=warm_from)
    if kind == "mm-ar1":
        return fit_mm_ar1(data, box, scfg, warm_from=warm_from)
    raise ValueError(f"unknown multi-modal surrogate kind {kind!r}")


def run_mm_mf_bo(
    lf_oracle,
    dm_oracle,
    kind: str,
    schedule: PhaseSchedule,
    box: Box,
    seed: int,
    config: RunConfig = RunConfig(),
    truth: TruthOracle | None = None,
) -> RunTrace:
    """Phased multi-modal multi-fidelity BO.

    Low-fidelity phases query the numerical oracle (variance-reduction then
    expected improvement); the high-fidelity phase queries the decision
    maker with the pairwise acquisition. Recommendations always read the hf
    posterior.
    """
    if kind not in ("mm-icm", "mm-ar1"):
        raise ValueError(f"surrogate kind {kind!r} is not multi-modal")
    trace = RunTrace(
        meta={
            "method": kind,
            "seed": seed,
            "box": {"lower": box.lower.tolist(), "upper": box.upper.tolist()},
            "schedule": asdict(schedule),
            "config": config.to_doc(),
        }
    )
    t0 = time.perf_counter()
    X_lf = box.sobol(config.init_lf_points, seed=_stream_seed(seed, 0, _STREAM_INIT))
    y_lf = _call_oracle(lf_oracle, X_lf, trace)
    X_hf = np.zeros((0, box.dim))
    comparisons: list[Comparison] = []

    def dataset() -> MixedDataset:
        return MixedDataset(X_hf, tuple(comparisons), X_lf, y_lf)

    model = _fit_mm(kind, dataset(), box, _seeded(config.surrogate, _stream_seed(seed, 0, _STREAM_FIT)))
    _record(trace, 0, PHASE_INIT, 0, list(X_lf), {"y": y_lf.tolist()}, model, box, config, seed, truth, t0)

    ep = 0
    for phase, count in ((PHASE_LF_EXPLORE, schedule.lf_explore), (PHASE_LF_EXPLOIT, schedule.lf_exploit)):
        for _ in range(count):
            ep += 1
            t0 = time.perf_counter()
            xi = propose_lf_query(model, X_lf, phase, box, config, seed, ep)
            val = _call_oracle(lf_oracle, xi[None, :], trace)[0]
            X_lf = np.vstack([X_lf, xi[None, :]])
            y_lf = np.append(y_lf, val)
            model = _fit_mm(
                kind, dataset(), box,
                _seeded(config.surrogate, _stream_seed(seed, ep, _STREAM_FIT)),
                warm_from=model if config.surrogate.warm_start else None,
            )
            _record(trace, ep, phase, 0, [xi], {"y": float(val)}, model, box, config, seed, truth, t0)

    for hf_ep in range(1, schedule.hf + 1):
        ep += 1
        t0 = time.perf_counter()
        a, b = propose_pair(model, box, config, seed, ep)
        c = _query_dm(dm_oracle, a, b, trace)
        X_hf, ia = _append_hf_point(X_hf, a)
        X_hf, ib = _append_hf_point(X_hf, b)
        idx = (ia, ib)
        comparisons.append(Comparison(idx[c.winner_index], idx[c.loser_index]))
        model = _fit_mm(
            kind, dataset(), box,
            _seeded(config.surrogate, _stream_seed(seed, ep, _STREAM_FIT)),
            warm_from=model if config.surrogate.warm_start else None,
        )
        _record(trace, ep, PHASE_HF, hf_ep, [a, b], {"winner": c.winner_index}, model, box, config, seed, truth, t0)
    trace.validate()
    return trace


def replay_recommendations(trace: RunTrace) -> list[list]:
    """Re-fit surrogates along the recorded observations and recompute
    every recommendation with the trace's own seeds."""
    meta = trace.meta
    box = Box(np.asarray(meta["box"]["lower"]), np.asarray(meta["box"]["upper"]))
    config = RunConfig.from_doc(meta["config"])
    seed = meta["seed"]
    method = meta["method"]
    recs: list[list] = []

    if method.startswith("gp-"):
        X = np.asarray(trace.records[0].queried, dtype=float)
        y = np.asarray(trace.records[0].observation["y"], dtype=float)
        for r in trace.records:
            if r.episode > 0:
                X = np.vstack([X, np.asarray(r.queried, dtype=float)])
                y = np.append(y, r.observation["y"])
            model = fit_numerical_gp(X, y, box, _seeded(config.surrogate, _stream_seed(seed, r.episode, _STREAM_FIT)))
            recs.append(recommend(model, box, config.rec_budget, seed=_stream_seed(seed, r.episode, _STREAM_REC)).tolist())
        return recs

    if method == "pbo":
        X = np.zeros((0, box.dim))
        comparisons: list[Comparison] = []
        model = None
        for r in trace.records:
            if r.phase == PHASE_INIT:
                pts = np.asarray(r.queried, dtype=float)
                for p, obs in enumerate(r.observation["comparisons"]):
                    a, b = pts[2 * p], pts[2 * p + 1]
                    X, ia = _append_hf_point(X, a)
                    X, ib = _append_hf_point(X, b)
                    idx = (ia, ib)
                    comparisons.append(Comparison(idx[obs["winner"]], idx[1 - obs["winner"]]))
            else:
                a, b = np.asarray(r.queried, dtype=float)
                X, ia = _append_hf_point(X, a)
                X, ib = _append_hf_point(X, b)
                idx = (ia, ib)
                w = r.observation["winner"]
                comparisons.append(Comparison(idx[w], idx[1 - w]))
            model = fit_pref_gp(
                X, comparisons, box,
                _seeded(config.surrogate, _stream_seed(seed, r.episode, _STREAM_FIT)),
                warm_from=model if config.surrogate.warm_start else None,
            )
            recs.append(recommend(model, box, config.rec_budget, seed=_stream_seed(seed, r.episode, _STREAM_REC)).tolist())
        return recs

    # multi-modal runs
    X_lf = np.zeros((0, box.dim))
    y_lf = np.zeros(0)
    X_hf = np.zeros((0, box.dim))
    comparisons = []
    model = None
    for r in trace.records:
        if r.phase == PHASE_INIT:
            X_lf = np.asarray(r.queried, dtype=float)
            y_lf = np.asarray(r.observation["y"], dtype=float)
        elif r.phase in (PHASE_LF_EXPLORE, PHASE_LF_EXPLOIT):
            X_lf = np.vstack([X_lf, np.asarray(r.queried, dtype=float)])
            y_lf = np.append(y_lf, r.observation["y"])
        else:
            a, b = np.asarray(r.queried, dtype=float)
            X_hf, ia = _append_hf_point(X_hf, a)
            X_hf, ib = _append_hf_point(X_hf, b)
            idx = (ia, ib)
            w = r.observation["winner"]
            comparisons.append(Comparison(idx[w], idx[1 - w]))
        data = MixedDataset(X_hf, tuple(comparisons), X_lf, y_lf)
        model = _fit_mm(
            method, data, box,
            _seeded(config.surrogate, _stream_seed(seed, r.episode, _STREAM_FIT)),
            warm_from=model if config.surrogate.warm_start else None,
        )
        recs.append(recommend(model, box, config.rec_budget, seed=_stream_seed(seed, r.episode, _STREAM_REC)).tolist())
    return recs
