"""HTTP session service for live preference elicitation.

One session drives the high-fidelity loop for a human decision maker: the
low-fidelity phase (if any) executes eagerly at creation, then the service
serves one comparison pair at a time, refits on each posted preference, and
keeps a recommendation available throughout. Sessions persist as JSON files
and survive restarts.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .bench import make_synthetic_pair
from .design import Box
from .engine import (
    PHASE_HF,
    PHASE_LF_EXPLOIT,
    PHASE_LF_EXPLORE,
    RunConfig,
    _stream_seed,
    _STREAM_FIT,
    _STREAM_INIT,
    _STREAM_REC,
    _append_hf_point,
    _seeded,
    propose_lf_query,
    propose_pair,
    recommend,
)
from .likelihoods import Comparison, MixedDataset
from .mcmc import HMCConfig
from .surrogates import SurrogateConfig, fit_mm_ar1, fit_mm_icm, fit_pref_gp, load_model

SCHEMA_VERSION = 1


class BoxSpec(BaseModel):
    lower: list[float]
    upper: list[float]
    names: list[str] | None = None
    units: list[str] | None = None


class ScheduleSpec(BaseModel):
    lf_explore: int = 0
    lf_exploit: int = 0
    hf: int = Field(gt=0)


class LfOracleSpec(BaseModel):
    kind: Literal["synthetic-pair", "dataset"]
    seed: int = 0
    target_correlation: float = 0.9
    inputs: list[list[float]] | None = None
    targets: list[float] | None = None


class McmcSpec(BaseModel):
    chains: int = 2
    warmup: int = 300
    draws: int = 300
    target_accept: float = 0.8
    leapfrog_steps: int = 32


class CreateSessionRequest(BaseModel):
    schema_version: int = SCHEMA_VERSION
    box: BoxSpec
    schedule: ScheduleSpec
    surrogate_kind: Literal["mm-ar1", "mm-icm", "pref-gp"] = "mm-ar1"
    lf_oracle: LfOracleSpec | None = None
    seed: int = 0
    init_pairs: int = 2
    init_lf_points: int = 4
    acq_budget: int = 256
    rec_budget: int = 256
    mcmc: McmcSpec = Field(default_factory=McmcSpec)


class PreferenceRequest(BaseModel):
    schema_version: int = SCHEMA_VERSION
    winner: Literal["a", "b"]
    pair_id: int | None = None


@dataclass
class Session:
    session_id: str
    request: CreateSessionRequest
    box: Box
    names: list[str]
    units: list[str]
    lf_inputs: np.ndarray
    lf_targets: np.ndarray
    hf_inputs: np.ndarray
    comparisons: list[Comparison]
    lf_episodes_done: int
    hf_episodes_done: int
    outstanding_pair: dict | None
    history: list[dict]
    model: object | None = None
    recommendation: list | None = None
    last_refit_seconds: float | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def init_size(self) -> int:
        if self.request.surrogate_kind == "pref-gp":
            return self.request.init_pairs
        return self.request.init_lf_points

    @property
    def episode(self) -> int:
        """Acquisition episodes so far: observations minus initialization."""
        return len(self.comparisons) + self.lf_targets.shape[0] - self.init_size

    @property
    def complete(self) -> bool:
        sched = self.request.schedule
        if self.request.surrogate_kind == "pref-gp":
            return len(self.comparisons) >= self.request.init_pairs + sched.hf
        return self.hf_episodes_done >= sched.hf

    def run_config(self) -> RunConfig:
        mc = self.request.mcmc
        surrogate = SurrogateConfig(
            mcmc=HMCConfig(
                chains=mc.chains,
                warmup=mc.warmup,
                draws=mc.draws,
                target_accept=mc.target_accept,
                leapfrog_steps=mc.leapfrog_steps,
            ),
            predict_thin=128,
        )
        return RunConfig(
            surrogate=surrogate,
            init_lf_points=self.request.init_lf_points,
            init_pairs=self.request.init_pairs,
            acq_budget=self.request.acq_budget,
            rec_budget=self.request.rec_budget,
        )


def _named(values: np.ndarray, names: list[str], units: list[str]) -> dict:
    return {
        "values": [float(v) for v in values],
        "named": [
            {"name": n, "unit": u, "value": float(v)}
            for n, u, v in zip(names, units, values)
        ],
    }


class SessionStore:
    """Persistence plus the per-session compute steps."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._store_lock = threading.Lock()

    # -- persistence ------------------------------------------------------

    def _path(self, sid: str) -> Path:
        return self.data_dir / f"{sid}.json"

    def save(self, s: Session) -> None:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "session_id": s.session_id,
            "request": s.request.model_dump(),
            "state": {
                "lf_inputs": s.lf_inputs.tolist(),
                "lf_targets": s.lf_targets.tolist(),
                "hf_inputs": s.hf_inputs.tolist(),
                "comparisons": [[c.winner_index, c.loser_index] for c in s.comparisons],
                "lf_episodes_done": s.lf_episodes_done,
                "hf_episodes_done": s.hf_episodes_done,
                "outstanding_pair": s.outstanding_pair,
                "history": s.history,
                "recommendation": s.recommendation,
                "last_refit_seconds": s.last_refit_seconds,
                "model_doc": None if s.model is None else s.model.to_doc(),
            },
        }
        import json

        with open(self._path(s.session_id), "w") as fh:
            json.dump(doc, fh)

    def export_doc(self, sid: str) -> dict:
        self.get(sid)
        import json

        with open(self._path(sid)) as fh:
            return json.load(fh)

    def import_doc(self, doc: dict) -> Session:
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise HTTPException(status_code=400, detail="unsupported schema_version")
        sid = doc["session_id"]
        with self._store_lock:
            if sid in self._sessions or self._path(sid).exists():
                raise HTTPException(status_code=409, detail=f"session {sid} already exists")
        s = self._from_doc(doc)
        with self._store_lock:
            self._sessions[sid] = s
        self.save(s)
        return s

    def _from_doc(self, doc: dict) -> Session:
        req = CreateSessionRequest(**doc["request"])
        st = doc["state"]
        box = Box(np.asarray(req.box.lower), np.asarray(req.box.upper))
        d = box.dim
        names = req.box.names or [f"x{i}" for i in range(d)]
        units = req.box.units or ["" for _ in range(d)]
        model = None if st["model_doc"] is None else load_model(st["model_doc"])
        return Session(
            session_id=doc["session_id"],
            request=req,
            box=box,
            names=names,
            units=units,
            lf_inputs=np.asarray(st["lf_inputs"], dtype=float).reshape(-1, d),
            lf_targets=np.asarray(st["lf_targets"], dtype=float),
            hf_inputs=np.asarray(st["hf_inputs"], dtype=float).reshape(-1, d),
            comparisons=[Comparison(w, l) for w, l in st["comparisons"]],
            lf_episodes_done=st["lf_episodes_done"],
            hf_episodes_done=st["hf_episodes_done"],
            outstanding_pair=st["outstanding_pair"],
            history=st["history"],
            model=model,
            recommendation=st["recommendation"],
            last_refit_seconds=st["last_refit_seconds"],
        )

    def get(self, sid: str) -> Session:
        with self._store_lock:
            if sid in self._sessions:
                return self._sessions[sid]
        path = self._path(sid)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"unknown session {sid}")
        import json

        with open(path) as fh:
            doc = json.load(fh)
        s = self._from_doc(doc)
        with self._store_lock:
            self._sessions.setdefault(sid, s)
            return self._sessions[sid]

    # -- lifecycle --------------------------------------------------------

    def create(self, req: CreateSessionRequest) -> Session:
        if req.schema_version != SCHEMA_VERSION:
            raise HTTPException(status_code=400, detail="unsupported schema_version")
        try:
            box = Box(np.asarray(req.box.lower), np.asarray(req.box.upper))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=f"invalid box: {exc}")
        d = box.dim
        names = req.box.names or [f"x{i}" for i in range(d)]
        units = req.box.units or ["" for _ in range(d)]
        if len(names) != d or len(units) != d:
            raise HTTPException(status_code=400, detail="names/units must match box dimension")
        has_lf = req.schedule.lf_explore + req.schedule.lf_exploit > 0
        if req.surrogate_kind == "pref-gp" and has_lf:
            raise HTTPException(status_code=400, detail="pref-gp sessions cannot schedule lf episodes")
        if req.surrogate_kind != "pref-gp" and req.lf_oracle is None:
            raise HTTPException(
                status_code=400, detail="multi-fidelity sessions need an lf_oracle (spec or dataset)"
            )
        s = Session(
            session_id=uuid.uuid4().hex[:12],
            request=req,
            box=box,
            names=names,
            units=units,
            lf_inputs=np.zeros((0, d)),
            lf_targets=np.zeros(0),
            hf_inputs=np.zeros((0, d)),
            comparisons=[],
            lf_episodes_done=0,
            hf_episodes_done=0,
            outstanding_pair=None,
            history=[],
        )
        with s.lock:
            if req.surrogate_kind != "pref-gp":
                self._run_lf_phase(s)
            self._propose_if_needed(s)
            self.save(s)
        with self._store_lock:
            self._sessions[s.session_id] = s
        return s

    def _lf_oracle_fn(self, s: Session):
        spec = s.request.lf_oracle
        if spec.kind == "synthetic-pair":
            pair = make_synthetic_pair(spec.seed, spec.target_correlation, s.box.dim, box=s.box)
            return pair.lf_utility
        inputs = np.asarray(spec.inputs, dtype=float)
        targets = np.asarray(spec.targets, dtype=float)
        if inputs.ndim != 2 or inputs.shape[0] != targets.shape[0] or inputs.shape[0] < 2:
            raise HTTPException(status_code=400, detail="lf_oracle dataset needs matching inputs/targets (>= 2 rows)")
        return None, inputs, targets  # pre-collected dataset

    def _fit(self, s: Session):
        cfg = s.run_config()
        data = MixedDataset(s.hf_inputs, tuple(s.comparisons), s.lf_inputs, s.lf_targets)
        fit_seed = _stream_seed(s.request.seed, s.episode + 1000, _STREAM_FIT)
        scfg = _seeded(cfg.surrogate, fit_seed)
        t0 = time.perf_counter()
        if s.request.surrogate_kind == "mm-ar1":
            s.model = fit_mm_ar1(data, s.box, scfg)
        elif s.request.surrogate_kind == "mm-icm":
            s.model = fit_mm_icm(data, s.box, scfg)
        else:
            s.model = fit_pref_gp(s.hf_inputs, s.comparisons, s.box, scfg)
        s.last_refit_seconds = time.perf_counter() - t0
        rec = recommend(s.model, s.box, cfg.rec_budget, seed=_stream_seed(s.request.seed, s.episode + 2000, _STREAM_REC))
        s.recommendation = [float(v) for v in rec]

    def _run_lf_phase(self, s: Session) -> None:
        req = s.request
        cfg = s.run_config()
        oracle = self._lf_oracle_fn(s)
        if isinstance(oracle, tuple):
            _, inputs, targets = oracle
            s.lf_inputs, s.lf_targets = inputs, targets
            s.lf_episodes_done = req.schedule.lf_explore + req.schedule.lf_exploit
            try:
                self._fit(s)
            except Exception as exc:
                raise HTTPException(status_code=500, detail=f"model fit on uploaded lf data failed: {exc}")
            return
        try:
            X = s.box.sobol(req.init_lf_points, seed=_stream_seed(req.seed, 0, _STREAM_INIT))
            y = np.atleast_1d(np.asarray(oracle(X), dtype=float))
            s.lf_inputs, s.lf_targets = X, y
            self._fit(s)
            ep = 0
            for phase, count in (
                (PHASE_LF_EXPLORE, req.schedule.lf_explore),
                (PHASE_LF_EXPLOIT, req.schedule.lf_exploit),
            ):
                for _ in range(count):
                    ep += 1
                    xi = propose_lf_query(s.model, s.lf_inputs, phase, s.box, cfg, req.seed, ep)
                    val = float(np.atleast_1d(np.asarray(oracle(xi[None, :]), dtype=float))[0])
                    s.lf_inputs = np.vstack([s.lf_inputs, xi[None, :]])
                    s.lf_targets = np.append(s.lf_targets, val)
                    s.lf_episodes_done += 1
                    self._fit(s)
        except HTTPException:
            raise
        except Exception as exc:
            raise HTTPException(status_code=500, detail=f"lf oracle execution failed: {exc}")

    # -- queries and preferences ------------------------------------------

    def _propose_if_needed(self, s: Session) -> None:
        if s.outstanding_pair is not None or s.complete:
            return
        req = s.request
        cfg = s.run_config()
        pair_id = len(s.history)
        if req.surrogate_kind == "pref-gp" and len(s.comparisons) < req.init_pairs:
            pts = s.box.sobol(2 * req.init_pairs, seed=_stream_seed(req.seed, 0, _STREAM_INIT))
            k = len(s.comparisons)
            a, b = pts[2 * k], pts[2 * k + 1]
        else:
            a, b = propose_pair(s.model, s.box, cfg, req.seed, pair_id + 1)
        s.outstanding_pair = {"pair_id": pair_id, "a": [float(v) for v in a], "b": [float(v) for v in b]}

    def pair_payload(self, s: Session) -> dict:
        if s.complete:
            raise HTTPException(status_code=409, detail="session complete: schedule exhausted")
        p = s.outstanding_pair
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": s.session_id,
            "pair_id": p["pair_id"],
            "episode": s.episode,
            "hf_episode": s.hf_episodes_done,
            "phase": PHASE_HF,
            "a": _named(np.asarray(p["a"]), s.names, s.units),
            "b": _named(np.asarray(p["b"]), s.names, s.units),
            "preview": None,
        }

    def post_preference(self, s: Session, req: PreferenceRequest) -> dict:
        if s.outstanding_pair is None:
            raise HTTPException(status_code=409, detail="no outstanding pair; fetch the next query first")
        if req.pair_id is not None and req.pair_id != s.outstanding_pair["pair_id"]:
            raise HTTPException(status_code=409, detail="preference references a stale pair")
        a = np.asarray(s.outstanding_pair["a"], dtype=float)
        b = np.asarray(s.outstanding_pair["b"], dtype=float)
        s.hf_inputs, ia = _append_hf_point(s.hf_inputs, a)
        s.hf_inputs, ib = _append_hf_point(s.hf_inputs, b)
        winner, loser = (ia, ib) if req.winner == "a" else (ib, ia)
        s.comparisons.append(Comparison(winner, loser))
        is_init = s.request.surrogate_kind == "pref-gp" and len(s.comparisons) <= s.request.init_pairs
        if not is_init:
            s.hf_episodes_done += 1
        self._fit(s)
        s.history.append(
            {
                "pair_id": s.outstanding_pair["pair_id"],
                "a": s.outstanding_pair["a"],
                "b": s.outstanding_pair["b"],
                "winner": req.winner,
                "recommendation": s.recommendation,
                "refit_seconds": s.last_refit_seconds,
            }
        )
        # the next pair is proposed by the next query, per the state machine
        s.outstanding_pair = None
        self.save(s)
        return self.status_payload(s)

    def status_payload(self, s: Session) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": s.session_id,
            "surrogate_kind": s.request.surrogate_kind,
            "box": s.request.box.model_dump(),
            "schedule": s.request.schedule.model_dump(),
            "episode": s.episode,
            "hf_episode": s.hf_episodes_done,
            "hf_total": s.request.schedule.hf,
            "comparisons": len(s.comparisons),
            "lf_observations": int(s.lf_targets.shape[0]),
            "complete": s.complete,
            "outstanding_pair": s.outstanding_pair is not None,
            "recommendation": None
            if s.recommendation is None
            else _named(np.asarray(s.recommendation), s.names, s.units),
            "last_refit_seconds": s.last_refit_seconds,
            "history": s.history,
        }


def create_app(data_dir: str | Path = "sessions", frontend_dir: str | Path | None = None) -> FastAPI:
    """Build the session-service app; mount the UI when a build dir is given."""
    app = FastAPI(title="preference tuning session service")
    store = SessionStore(Path(data_dir))
    app.state.store = store

    @app.post("/api/sessions")
    def create_session(req: CreateSessionRequest):
        s = store.create(req)
        return store.status_payload(s)

    @app.get("/api/sessions/{sid}")
    def get_status(sid: str):
        s = store.get(sid)
        with s.lock:
            return store.status_payload(s)

    @app.get("/api/sessions/{sid}/query")
    def get_query(sid: str):
        s = store.get(sid)
        with s.lock:
            store._propose_if_needed(s)
            payload = store.pair_payload(s)
            store.save(s)
            return payload

    @app.post("/api/sessions/{sid}/preference")
    def post_preference(sid: str, req: PreferenceRequest):
        s = store.get(sid)
        with s.lock:
            return store.post_preference(s, req)

    @app.get("/api/sessions/{sid}/export")
    def export_session(sid: str):
        s = store.get(sid)
        with s.lock:
            store.save(s)
            return store.export_doc(sid)

    @app.post("/api/sessions/import")
    def import_session(doc: dict):
        s = store.import_doc(doc)
        return store.status_payload(s)

    if frontend_dir is not None:
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")
    return app
