"""Sparse-recovery phase transition: success rate against sparsity per algorithm.

Default grid: n=256, m=100, 25 trials at 12 sparsity levels (a few minutes on
one core).  ``--full`` runs 100 trials at every s in 1..100.

    python scripts/run_phase_transition.py --out results/phase.csv
"""

import argparse
import logging
import sys
import time
from pathlib import Path

from airopt.air import AirConfig
from airopt.harness import PAPER_S_VALUES, Algorithm, SweepConfig, recovery_sweep, write_plot_script
from airopt.penalties import Penalty


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/phase_transition.csv", help="result CSV path")
    ap.add_argument("--seed", type=int, default=20240101)
    ap.add_argument("--trials", type=int, default=None, help="trials per sparsity level")
    ap.add_argument("--full", action="store_true", help="100 trials at every s = 1..100")
    ap.add_argument("--s-values", type=int, nargs="+", default=None, help="override the sparsity grid")
    ap.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")
    ap.add_argument("--p", type=float, default=0.1, help="exponent of the lp penalty")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.ERROR)

    s_values = tuple(range(1, 101)) if args.full else PAPER_S_VALUES
    if args.s_values:
        s_values = tuple(args.s_values)
    trials = args.trials or (100 if args.full else 25)
    cfg = SweepConfig(s_values=s_values, trials=trials, seed=args.seed, penalty=Penalty.lpn(args.p),
                      air=AirConfig(eps0=1.0, eps_decay=0.7, eps_floor=1e-6), workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()

    def progress(done, total):
        sys.stderr.write(f"\r{done}/{total} trials")
        if done == total:
            sys.stderr.write("\n")

    result = recovery_sweep(cfg, progress=progress)
    result.write_csv(out)
    script = write_plot_script(out)
    print(result.to_csv(), end="")
    for alg in Algorithm:
        print(f"{alg.value:>13}: last s with rate >= 0.5: {result.transition(alg, 0.5)}, "
              f">= 0.95: {result.transition(alg, 0.95)}")
    print(f"wrote {out} and {script} in {time.perf_counter() - start:.0f} s")


if __name__ == "__main__":
    main()
