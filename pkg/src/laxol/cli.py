"""Command-line drivers: ``laxol evolve|convergence|tolsweep|hbar``.

Deterministic results (CSV tables, snapshots, ``*.json`` summaries) depend
only on the config. Wall times, the thread count and a timestamp go to
``timings.json`` so that repeated runs can be compared byte for byte.

Exit codes: 0 success, 1 a study's assertion failed, 2 invalid config or
unwritable output directory, 3 numeric blow-up (partial outputs kept).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .grid import EvaluationError, InvalidInput, NonFiniteError
from .scheme import EvolutionTrace, evolve
from .weakkam import (
    build_period_matrix,
    eigenvalue_karp,
    estimate_hbar_drift,
    period_steps,
)

logger = logging.getLogger("laxol")

EXIT_OK = 0
EXIT_STUDY_FAILED = 1
EXIT_INVALID = 2
EXIT_BLOWUP = 3


class StudyFailed(Exception):
    """A study ran to completion but one of its checks did not hold."""


class BlowUp(Exception):
    """Non-finite values during a run; ``trace`` holds what was computed."""

    trace = None


# --------------------------------------------------------------------------
# output helpers


class Writer:
    def __init__(self, directory: Path, cfg: RunConfig, command: str):
        self.dir = directory
        self.cfg = cfg
        self.command = command
        self.timings: dict = {}

    @property
    def csv(self) -> bool:
        return "csv" in self.cfg.output.formats

    @property
    def json(self) -> bool:
        return "json" in self.cfg.output.formats

    def table(self, name: str, header: list[str], rows) -> None:
        if not self.csv:
            return
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_fmt(v) for v in row))
        (self.dir / name).write_text("\n".join(lines) + "\n")

    def profile(self, name: str, x: np.ndarray, u: np.ndarray) -> None:
        self.table(name, ["x", "u"], zip(x, u))

    def summary(self, name: str, payload: dict) -> None:
        if not self.json:
            return
        doc = {
            "command": self.command,
            "version": __version__,
            "config_hash": self.cfg.digest(),
            "config": self.cfg.to_dict(),
            **payload,
        }
        (self.dir / name).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")

    def finish(self, threads: int) -> None:
        doc = {
            "command": self.command,
            "threads": threads,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            **self.timings,
        }
        (self.dir / "timings.json").write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _prepare_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".laxol_write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise InvalidInput(f"output directory {path} is not writable: {exc.strerror or exc}") from exc
    return path


def _run(cfg: RunConfig, *, params=None, u0=None, threads=1, snapshot_steps=()):
    """Evolve the configured problem; returns the trace (or raises BlowUp with it attached)."""
    params = params or cfg.params()
    spec = cfg.problem.hamiltonian()
    u0 = u0 if u0 is not None else cfg.problem.initial.sample(params)
    steps = cfg.run.n_steps(params.tau)
    try:
        return evolve(u0, cfg.run.t0, steps, spec, params,
                      engine=cfg.discretization.engine, threads=threads,
                      snapshot_every=cfg.run.snapshot_every, record=snapshot_steps)
    except NonFiniteError as exc:
        err = BlowUp(str(exc))
        err.trace = exc.trace
        raise err from exc
    except EvaluationError as exc:
        err = BlowUp(str(exc))
        err.trace = None
        raise err from exc


# --------------------------------------------------------------------------
# commands


def cmd_evolve(cfg: RunConfig, out: Writer, *, threads=1, rescale_left=False) -> dict:
    params = cfg.params()
    tau = params.tau
    wanted = [_nearest_step(t - cfg.run.t0, tau) for t in cfg.run.snapshot_times]
    steps = cfg.run.n_steps(tau)
    if any(k > steps for k in wanted):
        raise InvalidInput("run.snapshot_times reach beyond the run horizon")
    start = time.perf_counter()
    try:
        trace = _run(cfg, params=params, threads=threads, snapshot_steps=wanted)
        blown = None
    except BlowUp as exc:
        trace, blown = exc.trace, exc
    out.timings["total_wall"] = time.perf_counter() - start
    if trace is None:
        raise blown
    out.timings["step_wall"] = trace.wall
    keep = set(wanted) if wanted else set(trace.snapshot_steps)
    keep.add(0)
    if blown is None:
        keep.add(steps)
    files = []
    if "snapshots" in cfg.output.fields:
        for k, u in zip(trace.snapshot_steps, trace.snapshots):
            if k not in keep:
                continue
            vals = u.values - u.values[0] if rescale_left else u.values
            name = f"u_step{k:07d}.csv"
            out.profile(name, u.coords, vals)
            files.append({"step": k, "t": cfg.run.t0 + k * tau, "file": name})
    payload = {
        "rescale_left": rescale_left,
        "n_space": params.n_space,
        "tau": tau,
        "eps": params.eps,
        "eta": params.eta,
        "steps_requested": steps,
        "steps_completed": trace.n_steps,
        "aborted": blown is not None,
        "snapshots": files,
    }
    if "blocks" in cfg.output.fields:
        payload["blocks"] = trace.blocks
        payload["mean_blocks"] = float(np.mean(trace.blocks)) if trace.blocks else None
    if "drift" in cfg.output.fields:
        payload["drift"] = trace.drift
    if blown is not None:
        payload["error"] = str(blown)
    out.summary("summary.json", payload)
    if blown is not None:
        raise blown
    return payload


def _nearest_step(span: float, tau: float) -> int:
    if span < 0:
        raise InvalidInput("snapshot times must not precede t0")
    return int(round(span / tau))


def moreau_abs(t: float, x: np.ndarray, a: float) -> np.ndarray:
    """Exact solution for ``V = 0``, ``K*(v) = v^2/2`` and ``u_0 = a |x|``."""
    x = np.asarray(x, dtype=np.float64)
    if t == 0:
        return a * np.abs(x)
    inner = np.abs(x) < a * t
    return np.where(inner, x * x / (2 * t), a * np.abs(x) - a * a * t / 2)


def _fit_order(h, err) -> float:
    h = np.log(np.asarray(h, dtype=np.float64))
    e = np.log(np.asarray(err, dtype=np.float64))
    return float(np.polyfit(h, e, 1)[0])


def cmd_convergence(cfg: RunConfig, out: Writer, *, threads=1, rescale_left=False) -> dict:
    study = cfg.study
    if len(study.ladder) < 2:
        raise InvalidInput("study.ladder (or study.taus) needs at least two points")
    prob = cfg.problem
    if study.reference == "moreau_abs":
        kin = prob.kinetic
        if not (kin.kind == "mechanical" and kin.drift == 0 and prob.potential.kind == "zero"
                and prob.initial.kind == "abs"):
            raise InvalidInput("reference 'moreau_abs' needs drift 0, potential 'zero' and initial 'abs'")
    rows, finals, walls = [], [], []
    for p in study.ladder:
        params = cfg.params(n_space=p.n_space, tau=p.tau)
        start = time.perf_counter()
        trace = _run(cfg, params=params, threads=threads)
        walls.append(time.perf_counter() - start)
        final = trace.final
        finals.append(final)
        t_end = cfg.run.t0 + trace.n_steps * p.tau
        if study.reference == "moreau_abs":
            exact = moreau_abs(t_end - cfg.run.t0, final.coords, prob.initial.slope)
            err = float(np.max(np.abs(final.values - exact)))
        else:
            err = math.nan
        rows.append([p.n_space, params.eps, p.tau, params.eps / p.tau + p.tau, t_end, err,
                     float(np.mean(trace.blocks)) if trace.blocks else 0.0])
    if study.reference == "fine_grid":
        ref = finals[-1]
        for row, fin in zip(rows[:-1], finals[:-1]):
            row[5] = float(np.max(np.abs(fin.values - np.interp(fin.coords, ref.coords, ref.values))))
        rows = rows[:-1]
    errs = [r[5] for r in rows]
    hs = [r[3] for r in rows]
    order = _fit_order(hs, errs) if all(e > 0 for e in errs) else math.inf
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    ok = decreasing and order >= study.min_order
    out.timings["ladder_wall"] = walls
    out.table("convergence.csv",
              ["n_space", "eps", "tau", "eps_over_tau_plus_tau", "t_final", "sup_error", "mean_blocks"],
              rows)
    payload = {
        "reference": study.reference,
        "rows": [dict(zip(["n_space", "eps", "tau", "h", "t_final", "sup_error", "mean_blocks"], r))
                 for r in rows],
        "fitted_order": order,
        "error_decreasing": decreasing,
        "min_order": study.min_order,
        "passed": ok,
    }
    out.summary("convergence.json", payload)
    if not ok:
        raise StudyFailed(
            f"convergence check failed: decreasing={decreasing}, fitted order {order:.3f} "
            f"(need >= {study.min_order})"
        )
    return payload


def cmd_tolsweep(cfg: RunConfig, out: Writer, *, threads=1, rescale_left=False) -> dict:
    etas = list(cfg.study.etas)
    if 0.0 not in etas:
        raise InvalidInput("study.etas must include 0 (the exact baseline)")
    etas = [0.0] + [e for e in etas if e != 0.0]
    if any(e < 0 for e in etas):
        raise InvalidInput("study.etas must be non-negative")
    rows, walls = [], []
    base = None
    for i, eta in enumerate(etas):
        params = cfg.params(eta=eta)
        start = time.perf_counter()
        trace = _run(cfg, params=params, threads=threads)
        walls.append(time.perf_counter() - start)
        final = trace.final
        if base is None:
            base = final
        dev = float(np.max(np.abs(final.values - base.values)))
        blocks = np.asarray(trace.blocks if trace.blocks else [0])
        rows.append([eta, dev, float(blocks.mean()), int(blocks.max()), int(blocks[-1])])
        vals = final.values - final.values[0] if rescale_left else final.values
        out.profile(f"final_eta{i:02d}.csv", final.coords, vals)
    out.timings["sweep_wall"] = dict(zip(map(repr, etas), walls))
    header = ["eta", "deviation", "mean_blocks", "max_blocks", "final_blocks"]
    out.table("tolsweep.csv", header, rows)
    payload = {"rows": [dict(zip(header, r)) for r in rows], "rescale_left": rescale_left}
    out.summary("tolsweep.json", payload)
    return payload


def cmd_hbar(cfg: RunConfig, out: Writer, *, threads=1, rescale_left=False) -> dict:
    study = cfg.study
    spec = cfg.problem.hamiltonian()
    ladder = study.ladder or ()
    rows, notes = [], []
    failures = []
    for p in ladder:
        params = cfg.params(n_space=p.n_space, tau=p.tau)
        try:
            period_steps(spec, params)
        except InvalidInput as exc:
            notes.append(f"n_space={p.n_space}, tau={p.tau:g}: {exc}")
            continue
        u0 = cfg.problem.initial.sample(params)
        drift = estimate_hbar_drift(u0, spec, params, study.max_periods, study.tol,
                                    t0=cfg.run.t0, engine=cfg.discretization.engine, threads=threads)
        karp = math.nan
        if params.n_samples <= study.matrix_max_size:
            c = build_period_matrix(spec, params, t0=cfg.run.t0, max_size=study.matrix_max_size)
            karp = eigenvalue_karp(c) / c.period
        rows.append([p.n_space, params.eps, p.tau, params.eps / p.tau + p.tau, drift.h_bar,
                     int(drift.converged), drift.n_steps, drift.residual, karp,
                     abs(drift.h_bar - karp) if math.isfinite(karp) else math.nan])
        if study.expected is not None:
            for name, val in (("drift", drift.h_bar), ("matrix", karp)):
                if math.isfinite(val) and abs(val - study.expected) > 1e-10:
                    failures.append(f"{name} estimate {val!r} != expected {study.expected!r} "
                                    f"at n_space={p.n_space}, tau={p.tau:g}")
    header = ["n_space", "eps", "tau", "h", "drift_h_bar", "drift_converged", "drift_steps",
              "drift_residual", "matrix_h_bar", "agreement"]
    out.table("hbar.csv", header, rows)
    payload = {"rows": [dict(zip(header, r)) for r in rows], "notes": notes}
    if len(rows) >= 2:
        best = [r[8] if math.isfinite(r[8]) else r[4] for r in rows]
        hs = [r[3] for r in rows]
        slope, limit = np.polyfit(hs, best, 1)
        payload["extrapolated_h_bar"] = float(limit)
        payload["extrapolation_slope"] = float(slope)
    if study.slope_fit:
        payload["slope_fit"] = _slope_fit(cfg, out, threads, rescale_left, failures)
    payload["failures"] = failures
    out.summary("hbar.json", payload)
    if failures:
        raise StudyFailed("; ".join(failures))
    return payload


def _slope_fit(cfg: RunConfig, out: Writer, threads, rescale_left, failures) -> dict:
    start = time.perf_counter()
    trace = _run(cfg, threads=threads)
    out.timings["slope_fit_wall"] = time.perf_counter() - start
    res = left_point_fit(trace)
    out.table("left_point.csv", ["t", "u_left"], zip(res.pop("t"), res.pop("u")))
    if not res["relative_residual"] < cfg.study.fit_tolerance:
        failures.append(f"left-point linear fit residual {res['relative_residual']:.3g} "
                        f"of total growth (need < {cfg.study.fit_tolerance:g})")
    return res


def left_point_fit(trace: EvolutionTrace) -> dict:
    """Least-squares line through ``u(t, x_0)`` over the snapshots.

    The residual is the largest deviation from the line, relative to the
    total change of ``u(t, x_0)`` over the run.
    """
    t = trace.times
    u = np.array([s.values[0] for s in trace.snapshots])
    slope, icpt = np.polyfit(t, u, 1)
    growth = abs(u[-1] - u[0])
    resid = float(np.max(np.abs(u - (slope * t + icpt))))
    rel = resid / growth if growth > 0 else math.inf
    return {"slope": float(slope), "intercept": float(icpt), "max_residual": resid,
            "growth": float(growth), "relative_residual": rel, "t": t, "u": u}


COMMANDS = {
    "evolve": cmd_evolve,
    "convergence": cmd_convergence,
    "tolsweep": cmd_tolsweep,
    "hbar": cmd_hbar,
}


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laxol", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"laxol {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for the convolution")
        p.add_argument("--rescale-left", action="store_true",
                       help="write profiles shifted so that u at the left end is 0")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LAXOL_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    writer = None
    try:
        cfg = RunConfig.load(args.config).resolve()
        directory = _prepare_dir(Path(args.out or cfg.output.directory))
        writer = Writer(directory, cfg, args.command)
        COMMANDS[args.command](cfg, writer, threads=args.threads, rescale_left=args.rescale_left)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BlowUp as exc:
        print(f"error: numeric blow-up: {exc}", file=sys.stderr)
        writer.finish(args.threads)
        return EXIT_BLOWUP
    except StudyFailed as exc:
        print(f"study failed: {exc}", file=sys.stderr)
        writer.finish(args.threads)
        return EXIT_STUDY_FAILED
    writer.finish(args.threads)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
