"""Scenario runner: named experiments, CSV/JSON artifacts, expectation checks.

Outputs are deterministic for a fixed configuration: CSV bodies are
byte-identical across repeat runs (full-precision scientific notation, no
timestamps); summaries additionally carry the wall time, which is the only
non-reproducible field.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .gaussian import AnalyticBranch, IntegrationError
from .oracle import (GridEscapeError, PhaseUnwrapError, StepSizeError,
                     evolve_grid, scaled_config, scaled_grid_spec)
from .params import (Branch, ExperimentConfig, baseline_config,
                     config_to_mapping, get_constants, load_config,
                     separation_time, short_protocol_config, validate)
from .params import omega_s as omega_s_of
from .phase import (PhasePipeline, fit_log_slope, i2_difference_estimate,
                    naive_estimate, naive_estimate_two_term, phase_curve,
                    radius_sweep)
from .trajectories import plateau_distance

SCENARIOS = ("baseline", "radius-sweep", "q0-sweep", "short-protocol",
             "oracle-compare", "contributions")

EXIT_OK = 0
EXIT_COMPARE_FAILED = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _fmt(x: float) -> str:
    return format(x, ".17e")


def build_id(config: ExperimentConfig) -> str:
    payload = json.dumps({"version": __version__,
                          "config": config_to_mapping(config)},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def _summary_base(scenario: str, config: ExperimentConfig) -> dict:
    return {
        "scenario": scenario,
        "constants": config.constants.name,
        "build_id": build_id(config),
        "config": config_to_mapping(config),
        "derived": {
            "omega_s_rad_per_s": omega_s_of(config.sphere, config.constants),
            "separation_time_s": separation_time(config),
            "omega_trap_rad_per_s": config.omega_trap,
        },
        "results": {},
    }


def _phase_results(config: ExperimentConfig) -> dict:
    pipe = PhasePipeline(config)
    bd = pipe.breakdown()
    out = {
        "delta_phi_T5_rad": bd.delta_phi,
        "naive_estimate_rad": naive_estimate(config),
        "terms": {
            "i1_diff": bd.i1_diff,
            "i2_diff": bd.i2_diff,
            "const_self_diff": bd.const_self_diff,
            "newton_diff": bd.newton_diff,
            "classical_diff": bd.classical_diff,
            "boundary_diff": bd.boundary_diff,
        },
        "branch_plus": {
            "i1": bd.plus.i1, "i2": bd.plus.i2,
            "const_self": bd.plus.const_self,
            "newton_cross": bd.plus.newton_cross,
            "classical": bd.plus.classical,
        },
        "branch_minus": {
            "i1": bd.minus.i1, "i2": bd.minus.i2,
            "const_self": bd.minus.const_self,
            "newton_cross": bd.minus.newton_cross,
            "classical": bd.minus.classical,
        },
    }
    if abs(out["naive_estimate_rad"]) > 0:
        out["ratio_delta_phi_to_naive"] = (out["delta_phi_T5_rad"]
                                           / out["naive_estimate_rad"])
    return out


def _run_baseline(config: ExperimentConfig, out: Path, jobs: int) -> dict:
    phase_curve(config).to_csv(out / "phase_curve.csv")
    return _phase_results(config)


def _run_contributions(config: ExperimentConfig, out: Path, jobs: int) -> dict:
    phase_curve(config).to_csv(out / "contributions.csv")
    return _phase_results(config)


def _run_q0_sweep(config: ExperimentConfig, out: Path, jobs: int) -> dict:
    sqrt_q0s = (1e-9, 1e-10, 1e-13)
    results = {}
    for s in sqrt_q0s:
        cfg = replace(config, initial=type(config.initial)(Q0=s * s))
        if cfg.constants.name != config.constants.name:
            raise ValueError("constants sets must not vary across a sweep")
        tag = f"{s:.0e}"
        phase_curve(cfg).to_csv(out / f"contributions_q0_{tag}.csv")
        res = _phase_results(cfg)
        res["i2_difference_estimate_rad"] = i2_difference_estimate(cfg)
        results[tag] = res
    return {"per_sqrt_Q0": results}


def _run_short_protocol(config: ExperimentConfig, out: Path, jobs: int) -> dict:
    phase_curve(config).to_csv(out / "phase_curve.csv")
    res = _phase_results(config)
    res["two_term_estimate_rad"] = naive_estimate_two_term(config)
    res["plateau_distance_m"] = plateau_distance(config)
    res["contact_distance_m"] = 2.0 * config.sphere.radius
    res["plateau_to_contact_ratio"] = (res["plateau_distance_m"]
                                       / res["contact_distance_m"])
    return res


def _run_radius_sweep(config: ExperimentConfig, out: Path, jobs: int) -> dict:
    radii = [float(r) for r in np.geomspace(0.5e-6, 2e-6, 9)]
    points = radius_sweep(config, radii, jobs=jobs)
    with open(out / "radius_sweep.csv", "w") as f:
        f.write("radius_m,mass_kg,delta_phi_rad,error\n")
        for p in points:
            dp = _fmt(p.delta_phi) if p.delta_phi is not None else ""
            err = p.error or ""
            f.write(f"{_fmt(p.radius)},{_fmt(p.mass)},{dp},{err}\n")
    slope = fit_log_slope(points)
    return {
        "n_points": len(points),
        "n_failed": sum(1 for p in points if p.error),
        "log_slope": slope,
        "delta_phi_rad": {f"{p.radius:.3e}": p.delta_phi for p in points},
    }


def _run_oracle_compare(config: ExperimentConfig, out: Path, jobs: int) -> dict:
    cfg = scaled_config()
    spec = scaled_grid_spec()
    pipe = PhasePipeline(cfg)
    closed = pipe.breakdown().delta_phi
    run = evolve_grid(cfg, spec)
    branches = {b: AnalyticBranch(cfg, b) for b in Branch}
    q_closed = {b: np.array([branches[b].q(t) for t in run.t]) for b in Branch}
    with open(out / "oracle_compare.csv", "w") as f:
        f.write("t_s,Q_plus_grid,Q_plus_closed,Q_minus_grid,Q_minus_closed,"
                "delta_phi_grid\n")
        for i, t in enumerate(run.t):
            row = (t, run.q_history(Branch.PLUS)[i], q_closed[Branch.PLUS][i],
                   run.q_history(Branch.MINUS)[i], q_closed[Branch.MINUS][i],
                   run.delta_phi[i])
            f.write(",".join(_fmt(x) for x in row) + "\n")
    q_rel = max(float(np.max(np.abs(run.q_history(b) - q_closed[b]) / q_closed[b]))
                for b in Branch)
    return {
        "scaled_constants": cfg.constants.name,
        "omega_s_T5": omega_s_of(cfg.sphere, cfg.constants) * cfg.protocol.T5,
        "grid_points": spec.n,
        "delta_phi_closed_rad": closed,
        "delta_phi_grid_rad": run.delta_phi_final,
        "delta_phi_rel_error": abs(run.delta_phi_final - closed) / abs(closed),
        "max_Q_rel_error": q_rel,
        "norm_drift": run.max_norm_drift,
        "n_steps": run.n_steps,
    }


_RUNNERS = {
    "baseline": _run_baseline,
    "contributions": _run_contributions,
    "q0-sweep": _run_q0_sweep,
    "short-protocol": _run_short_protocol,
    "radius-sweep": _run_radius_sweep,
    "oracle-compare": _run_oracle_compare,
}


def run_scenario(name: str, config: ExperimentConfig, out_dir: str | Path,
                 jobs: int = 1) -> dict:
    """Execute one scenario, write its artifacts and summary.json."""
    if name not in _RUNNERS:
        raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = _summary_base(name, config)
    start = time.perf_counter()
    summary["results"] = _RUNNERS[name](config, out, jobs)
    summary["wall_time_s"] = time.perf_counter() - start
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary


# ---------------------------------------------------------------------------
# expectations

def _lookup(summary: dict, dotted: str):
    node = summary
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise KeyError(f"quantity {dotted!r} not present in summary")
        node = node[part]
    return node


def compare(summary: dict, expectations_path: str | Path) -> tuple[bool, list[str]]:
    """Check summary values against an expectations file.

    Each line: quantity,target,tolerance,tag with tolerance rel:X or abs:X.
    Returns (all_passed, report_lines); an empty file passes with a warning.
    """
    lines: list[str] = []
    ok = True
    rules = []
    for lineno, raw in enumerate(
            Path(expectations_path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ValueError(
                f"{expectations_path}:{lineno}: expected "
                f"'quantity,target,tolerance,tag', got {raw!r}")
        quantity, target_s, tol_s, tag = parts
        try:
            target = float(target_s)
        except ValueError:
            raise ValueError(f"{expectations_path}:{lineno}: bad target "
                             f"{target_s!r}") from None
        kind, _, tol_v = tol_s.partition(":")
        if kind not in ("rel", "abs") or not tol_v:
            raise ValueError(f"{expectations_path}:{lineno}: tolerance must "
                             f"be rel:X or abs:X, got {tol_s!r}")
        rules.append((quantity, target, kind, float(tol_v), tag))

    if not rules:
        return True, ["WARNING: expectations file contains no rules; "
                      "trivially passing"]
    for quantity, target, kind, tol, tag in rules:
        try:
            value = float(_lookup(summary, quantity))
        except KeyError as exc:
            ok = False
            lines.append(f"FAIL {quantity}: {exc} [{tag}]")
            continue
        err = abs(value - target)
        bound = tol * abs(target) if kind == "rel" else tol
        passed = err <= bound and math.isfinite(value)
        ok = ok and passed
        lines.append(f"{'PASS' if passed else 'FAIL'} {quantity}: "
                     f"value={value:.10g} target={target:.10g} "
                     f"|err|={err:.3e} bound={bound:.3e} [{tag}]")
    return ok, lines


# ---------------------------------------------------------------------------
# entry point

def _build_config(args) -> ExperimentConfig:
    if args.scenario == "short-protocol":
        cfg = short_protocol_config(args.constants)
    elif args.scenario == "oracle-compare":
        cfg = scaled_config()  # fixed desk-scale setup; --config ignored below
    else:
        cfg = baseline_config(args.constants)
    if args.config is not None:
        if args.scenario == "oracle-compare":
            raise ValueError("oracle-compare runs the fixed scaled "
                             "configuration and takes no --config")
        cfg = load_config(args.config, base=cfg)
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sgphase",
        description="Self-gravity phase shift in a Stern-Gerlach "
                    "interferometer: scenario runner")
    parser.add_argument("scenario", choices=SCENARIOS)
    parser.add_argument("--config", metavar="PATH",
                        help="flat key=value configuration file")
    parser.add_argument("--out", metavar="DIR", default="out",
                        help="output directory (default: ./out)")
    parser.add_argument("--constants", choices=("paper", "codata"),
                        default="paper")
    parser.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="parallel workers for sweep scenarios")
    parser.add_argument("--expectations", metavar="PATH",
                        help="compare the summary against this file")
    args = parser.parse_args(argv)

    try:
        get_constants(args.constants)
        config = _build_config(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    if args.scenario != "oracle-compare":
        report = validate(config)
        if not report.ok:
            print("error: configuration invalid:", file=sys.stderr)
            for v in report.violations:
                print(f"  - {v}", file=sys.stderr)
            return EXIT_VALIDATION

    try:
        summary = run_scenario(args.scenario, config, args.out, jobs=args.jobs)
    except (GridEscapeError, StepSizeError, PhaseUnwrapError,
            IntegrationError, FloatingPointError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    dp = summary["results"].get("delta_phi_T5_rad")
    if dp is not None:
        print(f"{args.scenario}: delta_phi(T5) = {dp:.6f} rad "
              f"[constants={summary['constants']}]")
    else:
        print(f"{args.scenario}: done [constants={summary['constants']}]")

    if args.expectations:
        try:
            ok, lines = compare(summary, args.expectations)
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        for line in lines:
            print(line)
        if not ok:
            return EXIT_COMPARE_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
