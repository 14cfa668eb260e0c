"""Run the bundled configs through the CLI and print a one-line digest of each.

    python3 scripts/run_experiments.py [--out out] [--threads 4] [--only evolve hbar ...]
"""

from __future__ import annotations

import argparse
import json
import time
from dataclasses import dataclass
from pathlib import Path

from laxol.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]


@dataclass(frozen=True)
class Experiment:
    name: str
    command: str
    config: str
    extra: tuple[str, ...] = ()


EXPERIMENTS = (
    Experiment("convergence", "convergence", "convergence_moreau.json"),
    Experiment("run1", "evolve", "run1_evolve.json", ("--rescale-left",)),
    Experiment("run2", "tolsweep", "run2_tolsweep.json", ("--rescale-left",)),
    Experiment("run3", "hbar", "run3_hbar.json"),
    Experiment("hbar_autonomous", "hbar", "hbar_autonomous.json"),
)


def digest(exp: Experiment, out: Path) -> str:
    if exp.command == "convergence":
        r = json.loads((out / "convergence.json").read_text())
        errs = ", ".join(f"{row['sup_error']:.3g}" for row in r["rows"])
        return f"errors [{errs}], fitted order {r['fitted_order']:.3f}"
    if exp.command == "evolve":
        r = json.loads((out / "summary.json").read_text())
        return f"{r['steps_completed']} steps, mean blocks {r.get('mean_blocks') or 0:.1f}"
    if exp.command == "tolsweep":
        rows = json.loads((out / "tolsweep.json").read_text())["rows"]
        return "; ".join(f"eta={r['eta']:.3g}: dev {r['deviation']:.2e}, blocks {r['mean_blocks']:.1f}"
                         for r in rows)
    r = json.loads((out / "hbar.json").read_text())
    parts = [f"N={row['n_space']}: drift {row['drift_h_bar']:.10f}, matrix {row['matrix_h_bar']}"
             for row in r["rows"]]
    if "slope_fit" in r:
        fit = r["slope_fit"]
        parts.append(f"u(t, left) slope {fit['slope']:.5f}, residual {fit['relative_residual']:.2e}")
    return "; ".join(parts)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(ROOT / "out"))
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--only", nargs="*", choices=[e.name for e in EXPERIMENTS])
    args = parser.parse_args()
    worst = 0
    for exp in EXPERIMENTS:
        if args.only and exp.name not in args.only:
            continue
        out = Path(args.out) / exp.name
        start = time.perf_counter()
        code = cli_main([exp.command, "--config", str(ROOT / "configs" / exp.config), "--out", str(out),
                         "--threads", str(args.threads), *exp.extra])
        wall = time.perf_counter() - start
        info = digest(exp, out) if code in (0, 1) else "no summary"
        print(f"{exp.name:16s} exit {code}  {wall:6.1f}s  {info}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
