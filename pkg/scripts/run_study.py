#!/usr/bin/env python3
"""Run the full scenario catalog at desk scale and write summary tables.

Usage:
    python scripts/run_study.py [--out study_out] [--workers 2] [--quick]

--quick drops to n=800, R=100 for a fast smoke pass; default sizes are
the catalog's n=2000, R=500.  Outputs land in the chosen directory as
per-scenario CSV/JSON plus a combined markdown table.
"""

import argparse
import time
from pathlib import Path

from drlogit.cli import markdown_table
from drlogit.simulate import (
    run_scenario,
    scenario_catalog,
    with_size,
    write_summary_csv,
    write_summary_json,
)

MENU = ("mle", "dr_identity", "dr_simple", "dr_optimal")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="study_out")
    ap.add_argument("--workers", type=int, default=2)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for sc in scenario_catalog():
        if args.quick:
            sc = with_size(sc, n=800, replications=100)
        t0 = time.time()
        summary = run_scenario(sc, MENU, workers=args.workers)
        summaries.append(summary)
        write_summary_json([summary], out / f"{sc.name}_summary.json")
        write_summary_csv([summary], out / f"{sc.name}_summary.csv")
        print(f"{sc.name}: n={sc.n} R={sc.replications} done in {time.time()-t0:.1f}s")
    (out / "summary.md").write_text(markdown_table(summaries))
    write_summary_json(summaries, out / "summary.json")
    print(f"wrote {out / 'summary.md'}")


if __name__ == "__main__":
    main()
