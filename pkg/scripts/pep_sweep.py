"""Solve the OHM performance estimation SDP over a range of k, with and without a cap on ||v||^2.

Writes ``pep_sweep.csv`` with one row per (k, cap).  The uncapped rows show
the value drifting upward as the solver lets ||v|| grow; the capped rows
stay inside the bracket.
"""

import argparse
import csv
import os

from idvkit.pep import build_pep, solve_pep, verify_pep_bounds


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k-max", type=int, default=15)
    ap.add_argument("--caps", default="none,1,10,100", help="comma list; 'none' means uncapped")
    ap.add_argument("--max-iter", type=int, default=60_000)
    ap.add_argument("--out-dir", default=os.environ.get("IDVKIT_OUT", "."))
    args = ap.parse_args()
    caps = [None if c == "none" else float(c) for c in args.caps.split(",")]
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "pep_sweep.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "cap", "value", "scaled_value", "v_norm_sq", "lower", "upper", "in_bracket", "accurate"])
        for cap in caps:
            for k in range(1, args.k_max + 1):
                sol = solve_pep(build_pep(k, cap), max_iter=args.max_iter)
                rep = verify_pep_bounds(k, sol.value)
                w.writerow([k, "" if cap is None else cap, f"{sol.value:.10g}", f"{(k + 1) ** 2 * sol.value:.10g}",
                            f"{sol.diagnostics['v_norm_sq']:.6g}", f"{rep.lower:.10g}", f"{rep.upper:.10g}",
                            int(rep.passed), int(sol.accurate)])
                print(f"cap={cap} {rep} accurate={sol.accurate}", flush=True)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
