"""How long run 1 takes to become stationary up to the moving constant.

Prints, for several grid sizes and step rules, the first time after which the
per-step sup-norm change of ``u - u(x_left)`` stays below a threshold.

    python3 scripts/settling_time.py [--threshold 1e-6] [--max-time 120]
"""

from __future__ import annotations

import argparse
import math

import numpy as np

from laxol import HamiltonianSpec, Potential, SchemeParams, Term, evolve


def settling_time(n: int, tau: float, threshold: float, max_time: float) -> tuple[float, float]:
    spec = HamiltonianSpec.mechanical(1.0, Potential.trig([Term(-1.0)], 1.0))
    params = SchemeParams(n, tau, length=2 * math.pi, origin=-math.pi)
    u0 = params.sample(lambda x: np.cos(2 * x))
    steps = int(math.ceil(max_time / tau))
    trace = evolve(u0, 0.0, steps, spec, params, snapshot_every=1)
    w = np.array([s.values - s.values[0] for s in trace.snapshots])
    change = np.max(np.abs(np.diff(w, axis=0)), axis=1)
    tail_max = np.maximum.accumulate(change[::-1])[::-1]
    ok = np.nonzero(tail_max < threshold)[0]
    at20 = change[min(int(round(20 / tau)), len(change)) - 1]
    return ((ok[0] + 1) * tau if ok.size else math.inf), float(at20)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--threshold", type=float, default=1e-6)
    parser.add_argument("--max-time", type=float, default=120.0)
    args = parser.parse_args()
    print(f"{'N':>5} {'rule':>12} {'tau':>8} {'change at t=20':>15} {'settled from t':>15}")
    for n in (150, 300, 600, 1200):
        for rule, tau in (("sqrt(1/N)", math.sqrt(1 / n)), ("sqrt(eps)", math.sqrt(2 * math.pi / n))):
            t_set, at20 = settling_time(n, tau, args.threshold, args.max_time)
            print(f"{n:5d} {rule:>12} {tau:8.4f} {at20:15.2e} {t_set:15.1f}")


if __name__ == "__main__":
    main()
