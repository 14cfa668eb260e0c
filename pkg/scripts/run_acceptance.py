"""Run the acceptance criteria without pytest and print one PASS/FAIL line each.

    python3 scripts/run_acceptance.py [1 3 8 ...]
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from test_acceptance import CRITERIA  # noqa: E402


def main(argv: list[str]) -> int:
    chosen = [int(a) for a in argv] or list(CRITERIA)
    failed = 0
    for number in chosen:
        passed, detail = CRITERIA[number]()
        failed += not passed
        print(f"CRITERION {number}: {'PASS' if passed else 'FAIL'} | {detail}", flush=True)
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
