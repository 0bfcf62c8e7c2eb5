"""Command-line entry points: batch benchmark runs and the session server."""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click

from .bench import SimulatedDM, grid_optimum, make_synthetic_pair
from .engine import (
    PhaseSchedule,
    RunConfig,
    TruthOracle,
    run_mm_mf_bo,
    run_numerical_bo,
    run_pbo,
    write_regret_csv,
)
from .mcmc import HMCConfig
from .surrogates import SurrogateConfig

MANIFEST_SCHEMA_VERSION = 1
KNOWN_METHODS = ("mm-ar1", "mm-icm", "pbo", "gp-ei", "gp-ipv")


class ManifestError(ValueError):
    """Manifest fails schema validation; message names the offending field."""


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise ManifestError(f"missing field {where}.{key}")
    if kind is not None and not isinstance(doc[key], kind):
        raise ManifestError(f"field {where}.{key} must be {kind.__name__}")
    return doc[key]


def parse_manifest(doc: dict) -> dict:
    """Validate and normalize a benchmark manifest."""
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ManifestError("field schema_version must equal 1")
    bench = _require(doc, "benchmark", dict, "manifest")
    _require(bench, "pair_seed", int, "benchmark")
    _require(bench, "dims", int, "benchmark")
    if not isinstance(bench.get("target_correlation"), (int, float)):
        raise ManifestError("field benchmark.target_correlation must be a number")
    bench.setdefault("dm_noise_sd", 0.1)
    bench.setdefault("grid_resolution", 101)

    sched_doc = _require(doc, "schedule", dict, "manifest")
    for k in ("lf_explore", "lf_exploit", "hf"):
        _require(sched_doc, k, int, "schedule")

    runs = _require(doc, "runs", list, "manifest")
    if not runs:
        raise ManifestError("field runs must be a non-empty list")
    for i, r in enumerate(runs):
        method = _require(r, "method", str, f"runs[{i}]")
        if method not in KNOWN_METHODS:
            raise ManifestError(f"field runs[{i}].method has unknown surrogate kind {method!r}")
        seeds = _require(r, "seeds", list, f"runs[{i}]")
        if not seeds or not all(isinstance(s, int) for s in seeds):
            raise ManifestError(f"field runs[{i}].seeds must be a non-empty list of ints")
    doc.setdefault("run_config", {})
    doc.setdefault("name", "benchmark")
    return doc


def load_manifest(path: Path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ManifestError(f"manifest file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}")
    return parse_manifest(doc)


def run_config_from_doc(doc: dict) -> RunConfig:
    doc = dict(doc)
    sur = doc.pop("surrogate", {})
    mcmc = sur.pop("mcmc", {}) if isinstance(sur, dict) else {}
    surrogate = SurrogateConfig(
        kernel_kind=sur.get("kernel_kind", "se"),
        mcmc=HMCConfig(**mcmc),
        predict_thin=sur.get("predict_thin", 128),
        warm_start=sur.get("warm_start", False),
        warm_warmup=sur.get("warm_warmup", 100),
    )
    return RunConfig(surrogate=surrogate, **doc)


def execute_manifest(manifest: dict, out_dir: Path, seed_override: int | None = None) -> int:
    """Run every (method, seed) in the manifest; returns the number of failures."""
    out_dir.mkdir(parents=True, exist_ok=True)
    bench = manifest["benchmark"]
    pair = make_synthetic_pair(bench["pair_seed"], bench["target_correlation"], bench["dims"])
    box = pair.box
    _, opt_val = grid_optimum(pair.hf_utility, box, bench["grid_resolution"])
    truth = TruthOracle(pair.hf_utility, opt_val)
    sched = PhaseSchedule(**manifest["schedule"])
    config = run_config_from_doc(manifest["run_config"])

    traces = []
    errors = []
    diagnostics = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "name": manifest["name"],
        "benchmark": bench,
        "achieved_correlation": pair.achieved_correlation,
        "optimum_value": opt_val,
        "runs": [],
    }
    for run in manifest["runs"]:
        method = run["method"]
        seeds = [seed_override] if seed_override is not None else run["seeds"]
        episodes = run.get("episodes")
        for seed in seeds:
            label = f"{method}-seed{seed}"
            t0 = time.perf_counter()
            try:
                dm = SimulatedDM(pair.hf_utility, bench["dm_noise_sd"], seed=seed + 5000)
                if method in ("mm-ar1", "mm-icm"):
                    trace = run_mm_mf_bo(pair.lf_utility, dm, method, sched, box, seed, config, truth)
                elif method == "pbo":
                    trace = run_pbo(dm, box, episodes or sched.hf, seed, config, truth)
                else:
                    trace = run_numerical_bo(
                        pair.lf_utility, box, episodes or (sched.lf_explore + sched.lf_exploit),
                        seed, acq=method.split("-")[1], config=config, truth=truth,
                    )
            except Exception as exc:
                errors.append({"run": label, "error": f"{type(exc).__name__}: {exc}"})
                continue
            trace.save_jsonl(out_dir / f"{label}.trace.jsonl")
            traces.append(trace)
            diagnostics["runs"].append(
                {
                    "run": label,
                    "wall_clock": time.perf_counter() - t0,
                    "final_regret": trace.records[-1].regret,
                    "episodes": len(trace.records) - 1,
                    "mcmc": trace.records[-1].diagnostics,
                }
            )
    write_regret_csv(out_dir / "regret.csv", traces)
    if errors:
        diagnostics["errors"] = errors
    with open(out_dir / "diagnostics.json", "w") as fh:
        json.dump(diagnostics, fh, indent=2)
    for e in errors:
        click.echo(f"FAILED {e['run']}: {e['error']}", err=True)
    return len(errors)


@click.group()
def main():
    """Black-box tuning from numerical evaluations and pairwise preferences."""


@main.command("run")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed-override", type=int, default=None, help="run each method on this single seed")
def run_command(manifest_path: Path, out_dir: Path, seed_override: int | None):
    """Execute a benchmark manifest and write traces, regret CSV, diagnostics."""
    try:
        manifest = load_manifest(manifest_path)
    except ManifestError as exc:
        click.echo(f"manifest error: {exc}", err=True)
        sys.exit(2)
    failures = execute_manifest(manifest, out_dir, seed_override)
    sys.exit(0 if failures == 0 else 1)


@main.command("serve")
@click.option("--port", type=int, default=8000)
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--data-dir", type=click.Path(path_type=Path), default=Path("sessions"))
@click.option("--frontend", type=click.Path(path_type=Path), default=None)
def serve_command(port: int, host: str, data_dir: Path, frontend: Path | None):
    """Serve the live preference-elicitation session API (and UI if built)."""
    import uvicorn

    from .server import create_app

    app = create_app(data_dir, frontend)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
