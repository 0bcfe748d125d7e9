"""Command-line entry point: ``smlrelay {simulate,dtmc,pep,complexity}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .analysis import complexity_report
from .config import parse_config
from .experiment import dtmc_table, emit_results, pep_table, run_experiment


def _table(rows, out=None):
    out = out or sys.stdout
    if not rows:
        return
    keys = list(rows[0])
    print(",".join(keys), file=out)
    for r in rows:
        print(",".join(v if isinstance(v, str) else f"{v:.6g}" for v in r.values()), file=out)


def _simulate(args):
    cfg = parse_config(args.config)
    results = run_experiment(cfg, workers=args.workers)
    raw, agg = emit_results(results, args.out, args.name)
    print(f"wrote {raw} and {agg}")


def _dtmc(args):
    _table(dtmc_table(parse_config(args.config)))


def _pep(args):
    _table(pep_table(parse_config(args.config)))


def _complexity(args):
    r = complexity_report(args.n, args.u, args.ms, args.w)
    print("criterion,additions,multiplications")
    print(f"MMD,{r.mmd_additions},{r.mmd_multiplications}")
    print(f"QN,{r.qn_additions},{r.qn_multiplications}")
    print(f"# X = {r.X}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smlrelay",
                                 description="Buffer-aided multi-antenna relay selection simulator")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-trial progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a protocol x SNR x seed sweep and write CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--name", default="results", help="CSV file stem")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_simulate)

    p = sub.add_parser("dtmc", help="buffer-state Markov chain: outage, throughput, delay")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_dtmc)

    p = sub.add_parser("pep", help="theoretical worst-case PEP curves")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_pep)

    p = sub.add_parser("complexity", help="operation counts of the MMD and QN criteria")
    p.add_argument("--n", type=int, required=True, help="number of relays")
    p.add_argument("--ms", type=int, required=True, help="source antennas M_S")
    p.add_argument("--u", type=int, required=True, help="submatrices per relay U")
    p.add_argument("--w", type=int, required=True, help="distance-alphabet size W")
    p.set_defaults(func=_complexity)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, RuntimeError) as e:
        print(f"smlrelay: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
