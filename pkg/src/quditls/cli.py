"""Command-line front end.

    quditls simulate          noisy gate decay + readout pipeline + certification
    quditls calibrate-spacing COM / breathing excitation versus ion spacing
    quditls solve-params      force parameters for the target phase
    quditls budget            per-source error budget
    quditls certify FILE      entanglement report from measured data

Exit codes: 0 ok, 2 config/input parse error, 3 infeasible physics,
4 numerical failure, 5 incomplete data.  Errors are also written to stderr
as one JSON line.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .entangle import alignment_phases, full_report, report_from_estimate, report_from_summary
from .gates import TargetState, entangling_phase_target, target_state
from .hilbert import OscillatorSpace, TruncationError
from .lightshift import (ConvergenceError, InfeasibleError, LightShiftParams, gate_error,
                         solve_gate_params, spacing_scan)
from .measure import (CoherenceEstimate, FidelityEstimate, IncompleteDataError, StateEstimate,
                      decay_experiment, decay_fit, default_phases, entangled_gate_counts,
                      state_fidelity_estimate)
from .noise import IntegrationError, error_budget_table, simulate_noisy_gate
from .report import ReportError, make_report, write_csv, write_json

EXIT_PARSE, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_INCOMPLETE = 2, 3, 4, 5


# --- shared helpers ------------------------------------------------------

def resolve_theta(cfg: ExperimentConfig, d: int) -> float:
    if cfg.lightshift.theta is not None:
        return cfg.lightshift.theta
    return entangling_phase_target(d).theta


def resolve_params(cfg: ExperimentConfig, d: int) -> tuple:
    ls = cfg.lightshift
    theta = resolve_theta(cfg, d)
    mode = OscillatorSpace(ls.n_max)
    if ls.fix == "delta":
        p = solve_gate_params(d, theta, ls.eta, fix_delta=2 * np.pi / ls.gate_time,
                              spacing_phase=cfg.trap.ion_spacing_phase, mode=mode)
    else:
        p = solve_gate_params(d, theta, ls.eta, fix_shift=ls.shift,
                              spacing_phase=cfg.trap.ion_spacing_phase, mode=mode)
    return theta, p


def params_dict(p: LightShiftParams) -> dict:
    return {"delta": p.delta, "eta": p.eta, "shifts": p.shifts, "t_g": p.t_g,
            "spatial_phase": list(p.spatial_phase), "n_max": p.mode.n_max,
            "per_pulse_phases": p.per_pulse_phases()}


def _outputs(cfg: ExperimentConfig):
    out = Path(cfg.output_dir)
    return out, cfg.output_format in ("json", "both"), cfg.output_format in ("csv", "both")


def _fit_dict(fit):
    return None if fit is None else fit


# --- commands ------------------------------------------------------------

def phase_evolution(p: LightShiftParams, samples: int = 40) -> list:
    """(time, j, k, phase relative to |00>) along one gate, following each
    logical state through the cyclic relabelling after every force pulse."""
    d = p.d
    rows = []
    acc = np.zeros((d, d))
    times = np.linspace(0, p.t_g, samples + 1)
    for m in range(d):
        phys = [[((j + m) % d, (k + m) % d) for k in range(d)] for j in range(d)]
        for i, t in enumerate(times):
            if m > 0 and i == 0:
                continue
            ph = p.geometric_phases(t)
            cur = np.array([[acc[j, k] + ph[phys[j][k]] for k in range(d)] for j in range(d)])
            for j in range(d):
                for k in range(d):
                    rows.append((m * p.t_g + t, j, k, cur[j, k] - cur[0, 0]))
        full = p.geometric_phases(p.t_g)
        acc = acc + np.array([[full[phys[j][k]] for k in range(d)] for j in range(d)])
    return rows


def cmd_solve_params(cfg: ExperimentConfig) -> list:
    d = cfg.dimension
    theta, p = resolve_params(cfg, d)
    out, js, cs = _outputs(cfg)
    body = {"dimension": d, "theta": theta, "params": params_dict(p),
            "gate_error": gate_error(p, theta)}
    written = []
    if js:
        written.append(write_json(out / "solve-params.json",
                                  make_report("solve-params", cfg.as_dict(), body)))
    if cs:
        written.append(write_csv(out / "phase_evolution.csv", ["time", "j", "k", "phase"],
                                 phase_evolution(p)))
    return written


def cmd_calibrate_spacing(cfg: ExperimentConfig) -> list:
    d = cfg.dimension
    _, p = resolve_params(cfg, d)
    sc = cfg.spacing
    phases = np.linspace(sc.start, sc.stop, sc.points)
    warnings = []
    if sc.points == 1:
        warnings.append("degenerate scan: a single spacing point")
        print("warning: degenerate scan with a single spacing point", file=sys.stderr)
    rows = []
    for ph in phases:
        trap = replace(cfg.trap, ion_spacing_phase=float(ph))
        com, br = spacing_scan(trap, p, sc.pulse_time)
        rows.append((float(ph), com, br))
    best = min(rows, key=lambda r: r[1])
    out, js, cs = _outputs(cfg)
    written = []
    body = {"dimension": d, "rows": [list(r) for r in rows], "warnings": warnings,
            "min_com": {"spacing_phase": best[0], "com_nbar": best[1], "breathing_nbar": best[2]}}
    if js:
        written.append(write_json(out / "calibrate-spacing.json",
                                  make_report("calibrate-spacing", cfg.as_dict(), body)))
    if cs:
        written.append(write_csv(out / "spacing_scan.csv",
                                 ["spacing_phase", "com_nbar", "breathing_nbar"], rows))
    return written


def _estimate_dict(est: StateEstimate) -> dict:
    return {"populations": est.populations, "population_err": est.population_err,
            "coherences": {f"{j},{k}": {"magnitude": c.magnitude, "std": c.std,
                                        "interval68": list(c.interval68),
                                        "interval95": list(c.interval95)}
                           for (j, k), c in est.coherences.items()},
            "fidelity": est.fidelity.value, "fidelity_err": est.fidelity.std}


def cmd_simulate(cfg: ExperimentConfig) -> list:
    d = cfg.dimension
    theta, p = resolve_params(cfg, d)
    noise = cfg.resolved_noise()
    n_gates = 1 if cfg.sequence == "single_gate" else cfg.n_gates
    res = simulate_noisy_gate(d, p, noise, n_gates, n_max=cfg.motion_n_max, workers=cfg.workers)
    target = target_state(d)
    counts = entangled_gate_counts(d, theta, n_gates, target)
    shots = cfg.shots or None
    rng = cfg.readout_rng()
    phases = default_phases(cfg.phases)
    body = {"dimension": d, "theta": theta, "params": params_dict(p),
            "n_realizations": res.n_realizations, "peak_leakage": res.peak_leakage,
            "entangled_counts": counts}
    fit_exact = fit_meas = None
    if len(counts) >= 3:
        fit_exact = decay_fit(res.fidelities[counts], counts)
        exp = decay_experiment(res.states, counts, target, shots, rng, phases)
        fit_meas = exp.fit
        estimates = exp.estimates
        body["spam"] = _estimate_dict(exp.spam)
    else:
        from .measure import estimate_state
        estimates = {n: estimate_state(res.states[n], target, shots, rng, phases) for n in counts}
    series = []
    for n in range(n_gates + 1):
        e = estimates.get(n)
        series.append({"n": n, "exact_fidelity": float(res.fidelities[n]),
                       "estimated_fidelity": e.fidelity.value if e else None,
                       "estimated_err": e.fidelity.std if e else None,
                       "in_fit": n in counts})
    body["series"] = series
    body["decay_fit_exact"] = fit_exact
    body["decay_fit_measured"] = fit_meas
    body["per_gate_fidelity"] = fit_meas.f if fit_meas else None
    body["per_gate_fidelity_exact"] = fit_exact.f if fit_exact else None
    ent = {"exact": full_report(res.states[1], target, alignment_phases(res.ideal_states[1], d))}
    if 1 in estimates:
        ent["measured"] = report_from_estimate(estimates[1], target)
        body["single_gate_data"] = {"d": d, **_estimate_dict(estimates[1])}
    body["entanglement"] = ent
    out, js, cs = _outputs(cfg)
    written = []
    if js:
        written.append(write_json(out / "simulate.json", make_report("simulate", cfg.as_dict(), body)))
    if cs:
        written.append(write_csv(out / "fidelity_vs_n.csv",
                                 ["n", "exact_fidelity", "estimated_fidelity", "estimated_err", "in_fit"],
                                 [(s["n"], s["exact_fidelity"], s["estimated_fidelity"],
                                   s["estimated_err"], s["in_fit"]) for s in series]))
    return written


BUDGET_HEADER_BASE = ["source", "label"]


def cmd_budget(cfg: ExperimentConfig) -> list:
    ls = cfg.lightshift
    table = error_budget_table(cfg.resolved_noise(), cfg.dims, n_gates=cfg.n_gates,
                               analytic=cfg.analytic, gate_time=ls.gate_time, eta=ls.eta,
                               n_max=ls.n_max, joint=cfg.joint_budget,
                               joint_n_max=cfg.motion_n_max, workers=cfg.workers)
    records = table.as_records()
    out, js, cs = _outputs(cfg)
    written = []
    body = {"dims": list(table.dims), "rows": records,
            "per_gate_fidelity": {str(d): 1 - table.row_sum[d] for d in table.dims}}
    if js:
        written.append(write_json(out / "budget.json", make_report("budget", cfg.as_dict(), body)))
    if cs:
        header = BUDGET_HEADER_BASE + [f"d{d}" for d in table.dims]
        written.append(write_csv(out / "budget.csv", header,
                                 [[r[h] for h in header] for r in records]))
        written.append(write_csv(out / "fidelity_vs_d.csv",
                                 ["d", "total_infidelity", "per_gate_fidelity"],
                                 [(d, table.row_sum[d], 1 - table.row_sum[d]) for d in table.dims]))
    return written


def _parse_pair(key) -> tuple:
    if isinstance(key, (list, tuple)):
        return int(key[0]), int(key[1])
    a, b = str(key).split(",")
    return int(a), int(b)


def certify_from_data(data: dict):
    """EntanglementReport from a measured-data mapping (summary values, or
    populations plus coherences, optionally nested in a simulate report)."""
    if not data:
        raise IncompleteDataError("no data")
    if "schema" in data:
        if "single_gate_data" not in data:
            raise IncompleteDataError("report contains no single-gate measurement data")
        data = data["single_gate_data"]
    d = data.get("d", data.get("dimension"))
    if d is None:
        raise IncompleteDataError("dimension 'd' missing")
    d = int(d)
    target = TargetState(d, tuple(data["lambdas"])) if "lambdas" in data else target_state(d)
    if "populations" in data and "coherences" in data:
        pops = np.asarray(data["populations"], dtype=float)
        if pops.size != d * d:
            raise IncompleteDataError(f"need {d * d} populations")
        pops = pops.reshape(d, d)
        perr = np.asarray(data.get("population_err", np.zeros((d, d))), dtype=float).reshape(d, d)
        raw = data["coherences"]
        items = raw.items() if isinstance(raw, dict) else [((r[0], r[1]), r[2]) for r in raw]
        coh = {}
        for key, v in items:
            j, k = _parse_pair(key)
            if isinstance(v, dict):
                mag, sd = float(v["magnitude"]), float(v.get("std", 0.0))
            else:
                mag, sd = float(v), 0.0
            coh[(j, k)] = CoherenceEstimate((j, k), mag, sd, (mag, mag), (mag, mag))
        fid = state_fidelity_estimate(pops, coh, target, perr)
        return report_from_estimate(StateEstimate(pops, perr, coh, fid), target)
    if "fidelity" in data and "concurrence" in data:
        return report_from_summary(float(data["fidelity"]), float(data.get("fidelity_err", 0.0)),
                                   float(data["concurrence"]), float(data.get("concurrence_err", 0.0)),
                                   target)
    raise IncompleteDataError("need fidelity and concurrence, or populations and coherences")


def cmd_certify(cfg: ExperimentConfig, input_path: str | None) -> list:
    path = input_path or cfg.certify_input
    if path is None:
        raise IncompleteDataError("no input file given")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not text.strip():
        raise IncompleteDataError(f"{path} is empty")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise IncompleteDataError("input must be a JSON object")
    try:
        rep = certify_from_data(data)
    except KeyError as exc:
        raise IncompleteDataError(f"missing field {exc}") from exc
    out, js, cs = _outputs(cfg)
    written = []
    if js:
        written.append(write_json(out / "certify.json",
                                  make_report("certify", cfg.as_dict(), {"report": rep})))
    if cs:
        keys = ["d", "fidelity", "fidelity_err", "fidelity_threshold", "schmidt_number_certified",
                "schmidt_number_certified_1sigma", "concurrence", "concurrence_err",
                "max_concurrence", "eof_lower_bound", "eof_err"]
        written.append(write_csv(out / "certify.csv", keys, [[getattr(rep, k) for k in keys]]))
    return written


# --- entry point ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quditls", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (INI)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=("json", "csv", "both"), dest="fmt")
    common.add_argument("--samples", type=int, help="Monte Carlo realizations")
    common.add_argument("--dimension", type=int, help="qudit dimension override")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="noisy gate decay and readout pipeline")
    sub.add_parser("calibrate-spacing", parents=[common], help="mode excitation versus spacing")
    sub.add_parser("solve-params", parents=[common], help="solve force parameters")
    sub.add_parser("budget", parents=[common], help="per-source error budget")
    c = sub.add_parser("certify", parents=[common], help="certify entanglement from data")
    c.add_argument("input", nargs="?", help="measured-data JSON or simulate report")
    return ap


def _fail(code: int, exc: BaseException) -> int:
    rec = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, out=args.out, fmt=args.fmt, samples=args.samples,
            dimension=args.dimension)
        if args.command == "simulate":
            written = cmd_simulate(cfg)
        elif args.command == "calibrate-spacing":
            written = cmd_calibrate_spacing(cfg)
        elif args.command == "solve-params":
            written = cmd_solve_params(cfg)
        elif args.command == "budget":
            written = cmd_budget(cfg)
        else:
            written = cmd_certify(cfg, args.input)
    except IncompleteDataError as exc:
        return _fail(EXIT_INCOMPLETE, exc)
    except (ConfigError, ReportError) as exc:
        return _fail(EXIT_PARSE, exc)
    except InfeasibleError as exc:
        return _fail(EXIT_INFEASIBLE, exc)
    except (ConvergenceError, IntegrationError, TruncationError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        return _fail(EXIT_NUMERICAL, exc)
    for w in written:
        print(w)
    return 0


if __name__ == "__main__":
    sys.exit(main())
