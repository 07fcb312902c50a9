"""Experiment execution: build streams and optimizers from specs, run every
(experiment x seed) cell, write one deterministic CSV per run plus a JSON
manifest with content hashes.

CSV values are printed with 17 significant digits so re-runs of the same
config are byte-identical; timing lives in the manifest only.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import time
from pathlib import Path

import numpy as np

from .. import __version__
from ..geometry import FeasibleSet, Regularizer
from ..hypergrad import DivergenceError
from ..metrics import (
    build_grid,
    compute_regret_series,
    hypergradient_error,
    variation_report,
)
from ..optimizers import (
    ObboConfig,
    RunTrace,
    SobboConfig,
    default_neumann_bound,
    run_oagd,
    run_obbo,
    run_single_level,
    run_sobbo,
    run_sobow,
)
from ..problems import (
    DriftSpec,
    StreamConfig,
    load_spline_task_csv,
    make_drifting_spline_task,
    meta_toy_stream,
    quadratic_stream,
    spline_stream,
)
from .config import ExperimentSpec, HarnessConfig, serialize_config

__all__ = [
    "RESULTS_SCHEMA",
    "MANIFEST_SCHEMA",
    "build_stream",
    "build_optimizer_config",
    "execute_run",
    "run_cell",
    "cli_run",
    "write_trace_csv",
]

RESULTS_SCHEMA = "obbo-results-v1"
MANIFEST_SCHEMA = "obbo-manifest-v1"
MAX_LAMBDA_COLUMNS = 8


def _drift_from_spec(spec: dict | None) -> DriftSpec:
    if spec is None:
        return DriftSpec.static()
    return DriftSpec(
        kind=spec.get("kind", "static"),
        rate=spec.get("rate", 1.0),
        scale=spec.get("scale", 1.0),
    )


def build_stream(spec: dict, run_seed: int):
    """Materialize the stream for one run.

    The spec may pin its own structural ``seed``; otherwise the run seed is
    used, so repetitions see different problem realizations.
    """
    kind = spec["kind"]
    seed = spec.get("seed", run_seed)
    if kind == "quadratic":
        config = StreamConfig(
            d1=spec["d1"],
            d2=spec["d2"],
            T=spec["T"],
            kappa_target=spec.get("kappa_target", 10.0),
            drift=_drift_from_spec(spec.get("drift")),
            noise=tuple(spec.get("noise", (0.0, 0.0))),
            seed=seed,
            cos_amplitude=spec.get("cos_amplitude", 0.5),
        )
        return quadratic_stream(config, stochastic=spec.get("stochastic"))
    if kind == "spline_synthetic":
        task = make_drifting_spline_task(
            seed=seed,
            T=spec["T"],
            n_knots=spec.get("n_knots", 12),
            n_train=spec.get("n_train", 60),
            n_val=spec.get("n_val", 30),
            noise_std=spec.get("noise_std", 0.25),
            lambda_lower=spec.get("lambda_lower", 1e-4),
            lambda_upper=spec.get("lambda_upper", 10.0),
            freq_start=spec.get("freq_start", 0.5),
            freq_end=spec.get("freq_end", 4.0),
            amp_start=spec.get("amp_start", 0.2),
            amp_end=spec.get("amp_end", 1.5),
        )
        return spline_stream(task)
    if kind == "spline_csv":
        task = load_spline_task_csv(
            spec["path"],
            knots=spec["knots"],
            lambda_lower=spec.get("lambda_lower", 1e-4),
            lambda_upper=spec.get("lambda_upper", 10.0),
        )
        return spline_stream(task)
    if kind == "meta":
        d = spec.get("d", spec.get("d1"))
        config = StreamConfig(
            d1=d,
            d2=d,
            T=spec["T"],
            drift=_drift_from_spec(spec.get("drift")),
            seed=seed,
        )
        return meta_toy_stream(
            config,
            gamma=spec.get("gamma", 1.0),
            n_train=spec.get("n_train", 16),
            n_val=spec.get("n_val", 16),
            task_noise=spec.get("task_noise", 0.1),
        )
    raise ValueError(f"unknown stream kind {kind!r}")


def _regularizer_from_spec(spec: dict | None) -> Regularizer:
    if spec is None or spec.get("kind", "zero") == "zero":
        return Regularizer.zero()
    if spec["kind"] == "l1":
        return Regularizer.l1(spec.get("weight", 0.0))
    raise ValueError(f"unknown regularizer kind {spec['kind']!r}")


def _feasible_from_spec(spec: dict | None) -> FeasibleSet:
    if spec is None or spec.get("kind", "full") == "full":
        return FeasibleSet.full_space()
    if spec["kind"] == "box":
        return FeasibleSet.box(spec["lower"], spec["upper"])
    raise ValueError(f"unknown feasible set kind {spec['kind']!r}")


def build_optimizer_config(spec: dict) -> ObboConfig:
    phi = spec.get("phi", {})
    common = dict(
        alpha=spec.get("alpha"),
        eta=spec.get("eta"),
        K=spec.get("K"),
        w=spec.get("w", 1),
        phi_mode=phi.get("mode", "euclidean"),
        adapt_beta=phi.get("beta", 0.9),
        adapt_epsilon=phi.get("epsilon", 1e-8),
        regularizer=_regularizer_from_spec(spec.get("regularizer")),
        feasible=_feasible_from_spec(spec.get("feasible")),
        clip_threshold=spec.get("clip_threshold"),
        lambda0=None if spec.get("lambda0") is None else np.asarray(spec["lambda0"], dtype=float),
        beta0=None if spec.get("beta0") is None else np.asarray(spec["beta0"], dtype=float),
        estimator=spec.get("estimator", "itd"),
    )
    if spec["kind"] == "sobbo":
        return SobboConfig(**common, s=spec.get("s"), m=spec.get("m"))
    return ObboConfig(**common)


def execute_run(exp: ExperimentSpec, seed: int) -> tuple[RunTrace, list]:
    """Run one cell and return the trace plus the stream it ran on."""
    stream = build_stream(exp.stream, seed)
    kind = exp.optimizer["kind"]
    config = build_optimizer_config(exp.optimizer)
    if kind == "obbo":
        trace = run_obbo(stream, config)
    elif kind == "sobbo":
        trace = run_sobbo(stream, config, np.random.default_rng(seed))
    elif kind == "oagd":
        trace = run_oagd(stream, config)
    elif kind == "sobow":
        trace = run_sobow(stream, config)
    elif kind in ("adam", "sgdm"):
        trace = run_single_level(stream, kind, config)
    else:
        raise ValueError(f"unknown optimizer kind {kind!r}")
    return trace, stream


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_trace_csv(
    path: Path,
    run_id: str,
    trace: RunTrace,
    regret=None,
    hg_error=None,
) -> None:
    d1 = trace.lambdas.shape[1]
    lam_cols = (
        [f"lambda_{i}" for i in range(d1)] if d1 <= MAX_LAMBDA_COLUMNS else ["lambda_norm"]
    )
    header = (
        ["run_id", "t"]
        + lam_cols
        + [
            "outer_loss",
            "inner_residual",
            "gen_proj_norm_sq",
            "smoothed_norm_sq",
            "blr_term",
            "blr_cum",
            "blr_eucl_term",
            "blr_eucl_cum",
            "hypergrad_err_sq",
        ]
    )
    lines = [f"# schema={RESULTS_SCHEMA}", ",".join(header)]
    for t in range(trace.T):
        if d1 <= MAX_LAMBDA_COLUMNS:
            lam_vals = [_fmt(v) for v in trace.lambdas[t]]
        else:
            lam_vals = [_fmt(np.linalg.norm(trace.lambdas[t]))]
        row = (
            [run_id, str(t + 1)]
            + lam_vals
            + [
                _fmt(trace.outer_loss[t]),
                _fmt(trace.inner_residual[t]),
                _fmt(trace.gen_proj_norm_sq[t]),
                _fmt(float(trace.smoothed[t] @ trace.smoothed[t])),
            ]
        )
        if regret is not None:
            row += [
                _fmt(regret.terms[t]),
                _fmt(regret.cumulative[t]),
                _fmt(regret.euclidean_terms[t]),
                _fmt(regret.euclidean_cumulative[t]),
            ]
        else:
            row += ["", "", "", ""]
        row.append(_fmt(hg_error[t]) if hg_error is not None else "")
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", newline="\n")


def _variation_grid(trace: RunTrace, grid_size: int) -> np.ndarray:
    feas = trace.config.feasible
    if feas.kind == "box":
        lower, upper = feas.lower, feas.upper
    else:
        span = np.maximum(1.0, np.abs(trace.lambdas).max(axis=0))
        lower, upper = -span, span
    return build_grid(lower, upper, n=grid_size, extra=trace.lambdas)


def run_cell(exp: ExperimentSpec, seed: int, out_dir: str) -> dict:
    """Execute one (experiment, seed) cell and write its CSV.

    Returns the manifest entry; a numerical abort is recorded rather than
    propagated so sibling cells are unaffected.
    """
    run_id = f"{exp.name}__seed{seed}"
    entry: dict = {"experiment": exp.name, "seed": seed, "run_id": run_id}
    t0 = time.perf_counter()
    try:
        trace, stream = execute_run(exp, seed)
        options = exp.metric_options()
        has_oracle = all(
            inst.exact_hypergradient is not None or inst.inner_opt is not None
            for inst in stream[: trace.T]
        )
        regret = (
            compute_regret_series(stream, trace)
            if options["regret"] and has_oracle
            else None
        )
        hg_err = (
            hypergradient_error(trace, stream)
            if options["hypergradient_error"] and has_oracle
            else None
        )
        csv_path = Path(out_dir) / f"{run_id}.csv"
        write_trace_csv(csv_path, run_id, trace, regret, hg_err)
        entry["status"] = "ok"
        entry["file"] = csv_path.name
        entry["sha256"] = hashlib.sha256(csv_path.read_bytes()).hexdigest()
        terminal = {
            "lambda_final": [float(v) for v in trace.lambda_final],
            "final_outer_loss": float(trace.outer_loss[-1]),
            "alpha": trace.alpha,
            "eta": trace.eta,
        }
        if regret is not None:
            terminal["final_blr_cum"] = float(regret.cumulative[-1])
            terminal["final_blr_eucl_cum"] = float(regret.euclidean_cumulative[-1])
        if isinstance(trace.config, SobboConfig):
            first = stream[0]
            terminal["s"] = trace.config.s if trace.config.s is not None else trace.w
            terminal["m"] = (
                trace.config.m
                if trace.config.m is not None
                else default_neumann_bound(trace.w, first.mu_g, first.l_g1)
            )
        if options["variations"]:
            grid = _variation_grid(trace, options["grid_size"])
            report = variation_report(stream, grid)
            entry["variations"] = {"h1": report.h1, "h2": report.h2, "v1": report.v1}
        entry["terminal"] = terminal
    except DivergenceError as exc:
        entry["status"] = "aborted"
        entry["file"] = None
        entry["error"] = str(exc)
    entry["wall_ms"] = (time.perf_counter() - t0) * 1e3
    return entry


def cli_run(
    config: HarnessConfig,
    out_dir,
    seeds_override: list[int] | None = None,
    jobs: int = 1,
) -> dict:
    """Execute every (experiment x seed) cell and write the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for exp in config.experiments:
        seeds = seeds_override if seeds_override is not None else exp.seeds
        for seed in seeds:
            cells.append((exp, seed))
    if jobs > 1 and len(cells) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_cell, exp, seed, str(out)) for exp, seed in cells]
            entries = [f.result() for f in futures]
    else:
        entries = [run_cell(exp, seed, str(out)) for exp, seed in cells]
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "library_version": __version__,
        "config_dialect": "json (canonical: sorted keys, 2-space indent)",
        "results_schema": RESULTS_SCHEMA,
        "config": json.loads(serialize_config(config)),
        "outputs": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
