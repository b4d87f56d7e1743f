"""Compare the compiled and pure-Python kernel backends.

Usage::

    python3 benchmarks/bench_backends.py [--repeat 5] [--csv out.csv]

Each case is timed under both backends (median of ``--repeat`` runs) and the
results are checked for bit-identical output before the speedup is reported.
"""

import argparse
import csv
import statistics
import sys
import time

from latticegt import _backend
from latticegt.halving import select_bha, select_op_bha, select_op_bha_parallel
from latticegt.lattice import build_lattice, mass
from latticegt.response import ResponseModel
from latticegt.tree import AnalysisConfig, Scheme, homogeneous_priors, run_analysis


def case_mass():
    lat = build_lattice(homogeneous_priors(20, 0.05))
    return lambda: mass(0, lat)


def case_op_bha():
    lat = build_lattice(homogeneous_priors(16, 0.05))
    return lambda: select_op_bha(lat)


def case_op_bha_parallel():
    lat = build_lattice(homogeneous_priors(16, 0.05))
    return lambda: select_op_bha_parallel(lat, worker_count=4)


def case_bha():
    lat = build_lattice(homogeneous_priors(12, 0.1))
    return lambda: select_bha(lat)


def case_single_tree():
    config = AnalysisConfig(homogeneous_priors(8, 0.1), model=ResponseModel(0.9, 0.98, 1.0), max_stages=8)
    return lambda: run_analysis(config).to_dict()


def case_multi_tree():
    config = AnalysisConfig(homogeneous_priors(6, 0.1), max_stages=8, scheme=Scheme.MULTI)
    return lambda: run_analysis(config).to_dict()


CASES = {
    "mass n=20": case_mass,
    "op-bha n=16 p=0.05": case_op_bha,
    "op-bha x4 n=16 p=0.05": case_op_bha_parallel,
    "bha n=12": case_bha,
    "single tree n=8 stages=8": case_single_tree,
    "multi tree n=6 stages=8": case_multi_tree,
}


def timed(fn, repeat):
    result = fn()
    runs = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - start)
    return statistics.median(runs), result


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--csv")
    parser.add_argument("--cases", help="comma-separated substrings selecting cases")
    args = parser.parse_args(argv)

    if "compiled" not in _backend.available():
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1
    names = list(CASES)
    if args.cases:
        wanted = [w.strip() for w in args.cases.split(",")]
        names = [n for n in names if any(w in n for w in wanted)]

    rows = []
    for name in names:
        out = {}
        for backend in ("compiled", "python"):
            with _backend.using(backend):
                out[backend] = timed(CASES[name](), args.repeat)
        if out["compiled"][1] != out["python"][1]:
            raise SystemExit(f"{name}: backends disagree")
        fast, slow = out["compiled"][0], out["python"][0]
        rows.append({"case": name, "compiled_s": f"{fast:.6f}", "python_s": f"{slow:.6f}", "speedup": f"{slow / fast:.1f}"})

    width = max(len(r["case"]) for r in rows)
    print(f"{'case':<{width}}  {'compiled s':>11}  {'python s':>11}  {'speedup':>8}")
    for r in rows:
        print(f"{r['case']:<{width}}  {r['compiled_s']:>11}  {r['python_s']:>11}  {r['speedup']:>7}x")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
