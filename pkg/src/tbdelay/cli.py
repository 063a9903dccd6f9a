"""Command-line frontend: JSON jobs in, CSV/JSON artifacts and plot scripts out.

Subcommands: simulate | equilibria | stability | optimize | iop | sweep.
Every run writes a manifest with the job hash, tool version and output list.
Numeric outputs are deterministic for identical jobs: CSV bytes reproduce
exactly (timestamps appear only in the manifest).

Exit codes: 0 success, 2 job validation failure, 3 numeric failure,
4 iteration cap reached but outputs written.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (BlowupError, ConvergenceFailure, GridError, JobError,
                     ParameterDomainError, RangeError, TbDelayError)
from .integrator import DelayConfig, Grid, HistorySpec, integrate
from .iop import ArcSchedule, beta_sweep, hessian_fd, optimize_switch_times, simulate_schedule
from .model import (ModelParams, StateVec, basic_reproduction_number,
                    disease_free_equilibrium, endemic_equilibrium,
                    NoEndemicEquilibrium)
from .ocp import ObjectiveKind, ObjectiveSpec, OcpProblem, solve, verify_bang_bang
from .stability import classify, dfe_char_coefficients, crossing_quartic, routh_hurwitz_quartic

_PARAM_KEYS = ["beta", "mu", "delta", "phi", "omega", "omega_r", "sigma",
               "sigma_r", "tau0", "tau1", "tau2", "n_pop", "eps1", "eps2"]


def _reject_unknown(section: dict, allowed, where: str):
    unknown = set(section) - set(allowed)
    if unknown:
        raise JobError(f"unknown keys in {where}: {sorted(unknown)}")


def _number(section, key, where, default=None):
    if key not in section:
        if default is None:
            raise JobError(f"missing {where}.{key}")
        return default
    v = section[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise JobError(f"{where}.{key} must be a number, got {v!r}")
    return float(v)


class JobSpec:
    """Validated job description (strict: unknown keys are rejected)."""

    TOP_KEYS = ["scenario", "params", "delays", "history", "grid", "objective",
                "solver", "control", "sweep"]

    def __init__(self, raw: dict):
        if not isinstance(raw, dict):
            raise JobError("job file must hold a JSON object")
        _reject_unknown(raw, self.TOP_KEYS, "job")
        self.scenario = raw.get("scenario", "unnamed")
        if not isinstance(self.scenario, str):
            raise JobError("scenario must be a string")

        psec = raw.get("params", {})
        _reject_unknown(psec, _PARAM_KEYS, "params")
        base = ModelParams.baseline()
        values = {k: _number(psec, k, "params", default=getattr(base, k))
                  for k in _PARAM_KEYS}
        try:
            self.params = ModelParams(**values)
        except ParameterDomainError as exc:
            raise JobError(str(exc)) from exc

        dsec = raw.get("delays", {})
        _reject_unknown(dsec, ["d_i", "d_u1", "d_u2"], "delays")
        try:
            self.delays = DelayConfig(
                d_i=_number(dsec, "d_i", "delays", 0.0),
                d_u1=_number(dsec, "d_u1", "delays", 0.0),
                d_u2=_number(dsec, "d_u2", "delays", 0.0))
        except ParameterDomainError as exc:
            raise JobError(str(exc)) from exc

        hsec = raw.get("history")
        try:
            if hsec is None:
                self.history = HistorySpec.paper_scenario(self.params)
            else:
                _reject_unknown(hsec, ["initial_state", "i_history"], "history")
                ssec = hsec.get("initial_state")
                if ssec is None:
                    raise JobError("history.initial_state is required")
                _reject_unknown(ssec, ["s", "l1", "i", "l2", "r"], "history.initial_state")
                state = StateVec(**{k: _number(ssec, k, "history.initial_state")
                                    for k in ("s", "l1", "i", "l2", "r")})
                self.history = HistorySpec(
                    initial_state=state,
                    i_history=_number(hsec, "i_history", "history", state.i))
            self.history.check_population(self.params)
        except ParameterDomainError as exc:
            raise JobError(str(exc)) from exc

        gsec = raw.get("grid", {})
        _reject_unknown(gsec, ["t_f", "n_steps"], "grid")
        n_steps = gsec.get("n_steps", 2500)
        if not isinstance(n_steps, int) or isinstance(n_steps, bool):
            raise JobError("grid.n_steps must be an integer")
        try:
            self.grid = Grid(t_f=_number(gsec, "t_f", "grid", 5.0), n_steps=n_steps)
        except ParameterDomainError as exc:
            raise JobError(str(exc)) from exc

        osec = raw.get("objective", {})
        _reject_unknown(osec, ["kind", "w1", "w2"], "objective")
        kind = osec.get("kind", "L1")
        if kind not in ("L1", "L2"):
            raise JobError(f"objective.kind must be 'L1' or 'L2', got {kind!r}")
        try:
            self.objective = ObjectiveSpec(
                kind=ObjectiveKind(kind),
                w1=_number(osec, "w1", "objective", 50.0),
                w2=_number(osec, "w2", "objective", 50.0))
        except ParameterDomainError as exc:
            raise JobError(str(exc)) from exc

        ssec = raw.get("solver", {})
        _reject_unknown(ssec, ["max_iter", "tol_factor", "seed"], "solver")
        max_iter = ssec.get("max_iter", 2000)
        if not isinstance(max_iter, int) or isinstance(max_iter, bool) or max_iter < 1:
            raise JobError("solver.max_iter must be a positive integer")
        self.max_iter = max_iter
        self.tol_factor = _number(ssec, "tol_factor", "solver", 1e-6)
        seed = ssec.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise JobError("solver.seed must be an integer")
        self.seed = seed

        csec = raw.get("control")
        if csec is None:
            self.control = None
        else:
            _reject_unknown(csec, ["initial", "switches"], "control")
            initial = csec.get("initial", [1, 1])
            switches = csec.get("switches", [[], []])
            if (not isinstance(initial, list) or len(initial) != 2
                    or not isinstance(switches, list) or len(switches) != 2):
                raise JobError("control.initial and control.switches must be 2-element lists")
            try:
                self.control = ArcSchedule(
                    initial=tuple(int(v) for v in initial),
                    switches=tuple(tuple(float(t) for t in sw) for sw in switches))
            except (TypeError, ValueError, ParameterDomainError) as exc:
                raise JobError(f"invalid control schedule: {exc}") from exc

        wsec = raw.get("sweep")
        if wsec is None:
            self.sweep = None
        else:
            _reject_unknown(wsec, ["beta_min", "beta_max", "steps"], "sweep")
            steps = wsec.get("steps", 101)
            if not isinstance(steps, int) or isinstance(steps, bool) or steps < 2:
                raise JobError("sweep.steps must be an integer >= 2")
            self.sweep = (_number(wsec, "beta_min", "sweep", 50.0),
                          _number(wsec, "beta_max", "sweep", 150.0), steps)

        try:
            self.grid.validate_delays(self.delays)
        except GridError as exc:
            raise JobError(str(exc)) from exc

    def ocp_problem(self) -> OcpProblem:
        return OcpProblem(params=self.params, delays=self.delays,
                          history=self.history, grid=self.grid,
                          objective=self.objective)


def _load_job(path: str) -> tuple:
    p = Path(path)
    try:
        raw_bytes = p.read_bytes()
    except OSError as exc:
        raise JobError(f"cannot read job file {path!r}: {exc}") from exc
    try:
        raw = json.loads(raw_bytes)
    except json.JSONDecodeError as exc:
        raise JobError(f"job file {path!r} is not valid JSON: {exc}") from exc
    return JobSpec(raw), hashlib.sha256(raw_bytes).hexdigest()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"cannot serialize {type(o)!r}")


def _write_report(out: Path, name: str, payload: dict, fmt: str) -> list:
    if fmt == "json":
        path = out / f"{name}.json"
        path.write_text(json.dumps(payload, indent=2, default=_json_default,
                                   sort_keys=True) + "\n")
        return [path]
    path = out / f"{name}.csv"
    flat = _flatten(payload)
    with open(path, "w") as fh:
        fh.write("key,value\n")
        for k, v in flat:
            fh.write(f"{k},{v}\n")
    return [path]


def _flatten(obj, prefix=""):
    rows = []
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = dataclasses.asdict(obj)
    if isinstance(obj, dict):
        for k in sorted(obj):
            rows.extend(_flatten(obj[k], f"{prefix}{k}."))
    elif isinstance(obj, (list, tuple, np.ndarray)):
        for i, v in enumerate(obj):
            rows.extend(_flatten(v, f"{prefix}{i}."))
    else:
        v = obj.value if hasattr(obj, "value") else obj
        rows.append((prefix[:-1], repr(v) if isinstance(v, str) else f"{v}"))
    return rows


def _manifest(out: Path, job_hash: str, outputs: list):
    payload = {
        "job_sha256": job_hash,
        "tool_version": __version__,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": sorted(str(Path(p).name) for p in outputs),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


_SIM_PLOT = """\
set datafile separator ','
set key autotitle columnhead
set xlabel 'time (yr)'
set terminal pngcairo size 1200,800
set output 'simulate.png'
set multiplot layout 2,3
plot '{csv}' using 1:2 with lines title 'S'
plot '{csv}' using 1:3 with lines title 'L1'
plot '{csv}' using 1:4 with lines title 'I'
plot '{csv}' using 1:5 with lines title 'L2'
plot '{csv}' using 1:6 with lines title 'R'
plot '{csv}' using 1:7 with lines title 'u1', '{csv}' using 1:8 with lines title 'u2'
unset multiplot
"""

_OPT_PLOT = """\
set datafile separator ','
set key autotitle columnhead
set xlabel 'time (yr)'
set terminal pngcairo size 1400,800
set output 'optimize.png'
set multiplot layout 2,3
plot '{csv}' using 1:7 with lines title 'u1', '{csv}' using 1:($13/{w1}) with lines title 'phi1/W1'
plot '{csv}' using 1:2 with lines title 'S', '' using 1:6 with lines title 'R'
plot '{csv}' using 1:4 with lines title 'I'
plot '{csv}' using 1:8 with lines title 'u2', '{csv}' using 1:($14/{w2}) with lines title 'phi2/W2'
plot '{csv}' using 1:3 with lines title 'L1'
plot '{csv}' using 1:5 with lines title 'L2'
unset multiplot
"""

_SWEEP_PLOT = """\
set datafile separator ','
set key autotitle columnhead
set xlabel 'beta'
set terminal pngcairo size 1400,800
set output 'sweep.png'
set multiplot layout 2,3
plot '{csv}' using 1:2 with lines title 'J'
plot '{csv}' using 1:3 with lines title 'S(T)'
plot '{csv}' using 1:7 with lines title 'R(T)'
plot '{csv}' using 1:5 with lines title 'I(T)'
plot '{csv}' using 1:4 with lines title 'L1(T)'
plot '{csv}' using 1:6 with lines title 'L2(T)'
unset multiplot
"""


def cmd_simulate(job: JobSpec, out: Path, fmt: str, threads: int) -> tuple:
    sched = job.control or ArcSchedule(initial=(0, 0))
    traj = integrate(job.params, job.delays, job.history, job.grid,
                     control=sched.control())
    csv_path = out / "trajectory.csv"
    traj.to_csv(csv_path)
    gp = out / "plot_simulate.gp"
    gp.write_text(_SIM_PLOT.format(csv=csv_path.name))
    return [csv_path, gp], 0


def cmd_equilibria(job: JobSpec, out: Path, fmt: str, threads: int) -> tuple:
    r0 = basic_reproduction_number(job.params)
    dfe = disease_free_equilibrium(job.params)
    payload = {
        "scenario": job.scenario,
        "r0": {"numerator": r0.numerator, "denominator": r0.denominator,
               "value": r0.value},
        "disease_free": dataclasses.asdict(dfe.state),
        "endemic": None,
    }
    if r0.value > 1.0:
        ee = endemic_equilibrium(job.params)
        payload["endemic"] = dataclasses.asdict(ee.state)
        payload["endemic_residual"] = ee.residual_norm
    return _write_report(out, "equilibria", payload, fmt), 0


def cmd_stability(job: JobSpec, out: Path, fmt: str, threads: int) -> tuple:
    r0 = basic_reproduction_number(job.params)
    cc = dfe_char_coefficients(job.params)
    rh = routh_hurwitz_quartic(cc)
    zq = crossing_quartic(cc, job.params)
    payload = {
        "scenario": job.scenario,
        "delay": job.delays.d_i,
        "r0": r0.value,
        "char_coefficients": {"a0": cc.a0, "a1": cc.a1, "a2": cc.a2, "a3": cc.a3},
        "routh_hurwitz": dataclasses.asdict(rh),
        "crossing_quartic": dataclasses.asdict(zq),
    }
    verdict = classify(job.params, disease_free_equilibrium(job.params), job.delays.d_i)
    payload["dfe_verdict"] = verdict.kind.value
    payload["dfe_real_roots"] = verdict.details.get("real_roots")
    payload["dfe_crossing_frequencies"] = verdict.details.get("crossing_frequencies")
    if r0.value > 1.0:
        ee = endemic_equilibrium(job.params)
        v_ee = classify(job.params, ee, job.delays.d_i)
        payload["endemic_verdict"] = v_ee.kind.value
        payload["endemic_real_roots"] = v_ee.details.get("real_roots")
    return _write_report(out, "stability", payload, fmt), 0


def _solution_csv(path, prob, sol):
    n = prob.grid.n_steps
    times = prob.grid.times()
    st = sol.trajectory.states
    u = sol.controls
    lam = sol.adjoints
    phi = sol.switching
    with open(path, "w") as fh:
        fh.write("t,S,L1,I,L2,R,u1,u2,lamS,lamL1,lamI,lamL2,phi1,phi2\n")
        for j in range(n + 1):
            row = [times[j], *st[j], u[j, 0], u[j, 1], *lam[j], phi[j, 0], phi[j, 1]]
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def cmd_optimize(job: JobSpec, out: Path, fmt: str, threads: int) -> tuple:
    prob = job.ocp_problem()
    sol = solve(prob, max_iter=job.max_iter, tol_factor=job.tol_factor)
    report = verify_bang_bang(sol) if job.objective.kind is ObjectiveKind.L1 else None
    csv_path = out / "solution.csv"
    _solution_csv(csv_path, prob, sol)
    summary = {
        "scenario": job.scenario,
        "objective": sol.objective_value,
        "switch_times": sol.switch_times,
        "initial_levels": sol.initial_levels,
        "terminal_state": sol.trajectory.states[-1].tolist(),
        "adjoint_initial": sol.adjoints[0].tolist(),
        "converged": sol.converged,
        "iterations": sol.diagnostics["iterations"],
        "projected_gradient_norm": sol.diagnostics["projected_gradient_norm"],
        "bang_bang": dataclasses.asdict(report) if report else None,
    }
    outs = _write_report(out, "summary", summary, fmt)
    gp = out / "plot_optimize.gp"
    gp.write_text(_OPT_PLOT.format(csv=csv_path.name, w1=prob.objective.w1,
                                   w2=prob.objective.w2))
    code = 0 if sol.converged else 4
    return [csv_path, gp] + outs, code


def cmd_iop(job: JobSpec, out: Path, fmt: str, threads: int) -> tuple:
    prob = job.ocp_problem()
    if job.control is not None:
        init = job.control
    else:
        sol = solve(prob, max_iter=job.max_iter, tol_factor=job.tol_factor)
        init = ArcSchedule.from_solution(sol)
    code = 0
    try:
        sched, j, diag = optimize_switch_times(init, prob)
    except ConvergenceFailure as exc:
        sched = exc.last_iterate
        _, j = simulate_schedule(sched, prob)
        diag = {"converged": False}
        code = 4
    traj, j = simulate_schedule(sched, prob)
    csv_path = out / "trajectory.csv"
    traj.to_csv(csv_path)
    summary = {
        "scenario": job.scenario,
        "objective": j,
        "initial_levels": list(sched.initial),
        "switch_times": [list(s) for s in sched.switches],
        "terminal_state": traj.states[-1].tolist(),
        "diagnostics": diag,
        "hessian": None,
    }
    if sched.times_vector().size and code == 0:
        hess = hessian_fd(sched, prob, threads=threads)
        summary["hessian"] = {
            "matrix": hess.matrix.tolist(),
            "eigenvalues": hess.eigenvalues.tolist(),
            "positive_definite": hess.positive_definite,
        }
    outs = _write_report(out, "summary", summary, fmt)
    gp = out / "plot_simulate.gp"
    gp.write_text(_SIM_PLOT.format(csv=csv_path.name))
    return [csv_path, gp] + outs, code


def cmd_sweep(job: JobSpec, out: Path, fmt: str, threads: int) -> tuple:
    if job.sweep is None:
        raise JobError("sweep jobs need a 'sweep' section")
    beta_min, beta_max, steps = job.sweep
    prob0 = dataclasses.replace(job.ocp_problem(),
                                params=job.params.with_beta(beta_min))
    if job.control is not None:
        init = job.control
    else:
        sol = solve(prob0, max_iter=job.max_iter, tol_factor=job.tol_factor)
        init = ArcSchedule.from_solution(sol)
    betas = np.linspace(beta_min, beta_max, steps)
    result = beta_sweep(betas, prob0, init)
    csv_path = out / "sweep.csv"
    result.to_csv(csv_path)
    gp = out / "plot_sweep.gp"
    gp.write_text(_SWEEP_PLOT.format(csv=csv_path.name))
    code = 0 if all(r.converged for r in result.records) else 4
    return [csv_path, gp], code


_COMMANDS = {
    "simulate": cmd_simulate,
    "equilibria": cmd_equilibria,
    "stability": cmd_stability,
    "optimize": cmd_optimize,
    "iop": cmd_iop,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tbdelay",
        description="Delayed TB model: simulation, stability analysis and optimal control")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--job", required=True, help="path to the JSON job file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads for independent evaluations")
        sp.add_argument("--format", choices=("csv", "json"), default="json",
                        help="report format for summary outputs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.threads < 1:
            raise JobError("--threads must be >= 1")
        job, job_hash = _load_job(args.job)
        out.mkdir(parents=True, exist_ok=True)
        outputs, code = _COMMANDS[args.command](job, out, args.format, args.threads)
        outputs.append(_manifest(out, job_hash, outputs))
        return code
    except JobError as exc:
        print(f"job error: {exc}", file=sys.stderr)
        return 2
    except (ParameterDomainError, GridError, RangeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (BlowupError, NoEndemicEquilibrium, ConvergenceFailure,
            ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except TbDelayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
