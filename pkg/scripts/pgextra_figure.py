"""Produce the CSV series behind the PG-EXTRA infeasibility plot.

By default runs the small instance (a couple of minutes at most); pass
``--full`` for the 10-agent, 50,000-sweep setup, which takes hours on one
core.  The four output files can be plotted directly: the x axis is ``k``,
the y axes are ``norm_iter_norm_sq`` and ``fpr_mnorm_sq`` on a log scale.
"""

import argparse
import os
from dataclasses import replace

from idvkit.pgextra import PgExtraConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--full", action="store_true")
    ap.add_argument("--horizon", type=int)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default=os.environ.get("IDVKIT_OUT", "pgextra_out"))
    args = ap.parse_args()
    cfg = PgExtraConfig() if args.full else PgExtraConfig.reduced()
    cfg = replace(cfg, seed=args.seed, **({"horizon": args.horizon} if args.horizon else {}))
    res = run_experiment(cfg)
    for path in res.write(args.out_dir):
        print("wrote", path)
    K = cfg.horizon
    for name, cols in res.columns.items():
        margins = {kind: float(s.min()) / res.v_hat_norm_sq for kind, s in res.tail_margins[name].items()}
        print(f"{name}: ||normalized||^2={cols['norm_iter_norm_sq'][K]:.5g}  ||residual||^2={cols['fpr_mnorm_sq'][K]:.5g}  "
              f"tail margins {margins}")
    print(f"||v_hat||_M^2 = {res.v_hat_norm_sq:.5g}")


if __name__ == "__main__":
    main()
