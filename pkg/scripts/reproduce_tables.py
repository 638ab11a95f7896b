"""Run every named study and print each ladder next to its target values.

Outputs (CSV, JSON metadata, plot data) go to ``results/`` unless ``--out``
says otherwise.  The tab2 study also gets the side-by-side CSV.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from jumpsplit import harness_cli as hc

STUDIES = ("table-1", "table-2", "tab2", "tab3", "tabAL1", "tab4")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--only", nargs="*", choices=STUDIES)
    args = ap.parse_args()
    out = Path(args.out)
    for study in args.only or STUDIES:
        cfg = hc.resolve_config(study)
        reports = []
        for method in hc.jump_methods(cfg):
            t0 = time.perf_counter()
            rep = hc.run_convergence(cfg, method)
            hc.emit_outputs(rep, out)
            print(hc.format_report(rep))
            if rep.target_values:
                worst = max(abs(c - p) / abs(p) for c, p in zip(rep.prices, rep.target_values))
                print(f"largest relative gap to the target column: {worst:.3%}")
            print(f"wall time {time.perf_counter() - t0:.1f}s\n")
            reports.append(rep)
        if len(reports) == 2:
            hc.atomic_write(out / f"{study}.csv", hc.paired_csv(reports))


if __name__ == "__main__":
    main()
