"""Command line entry point: ``gt select | analyze | bench``.

Exit codes: 0 success, 1 usage or configuration error, 2 scale-guard refusal.
"""

import argparse
import csv
import json
import logging
import statistics
import sys
import time
from pathlib import Path

from . import __version__, _backend
from .config import load_json, parse_config, parse_history
from .errors import ConfigError, ImpossibleResponseError, LatticeError, ScaleGuardError
from .halving import default_chunk_size, select, select_bha, select_op_bha, select_op_bha_parallel
from .lattice import (
    build_lattice,
    classify_and_shrink,
    decode_state,
    encode_state,
    update_posterior,
)
from .tree import run_analysis

log = logging.getLogger("latticegt")

EXIT_OK, EXIT_CONFIG, EXIT_SCALE = 0, 1, 2
BHA_MAX_N = 20
SIG_DIGITS = 12


def fmt(x):
    return float(f"{x:.{SIG_DIGITS}g}")


def rounded(obj):
    """Round every float in a JSON-like structure to 12 significant digits."""
    if isinstance(obj, float):
        return fmt(obj)
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    return obj


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _commit_json(config, event):
    return {
        "subject": config.label_of(event.subject_id),
        "decision": event.decision.value,
        "residual_error": event.residual_error,
        "stage": event.stage,
    }


def replay(config, history):
    """Build the lattice and apply ``history``; returns (lattice, commits)."""
    lattice = build_lattice(config.analysis.priors)
    commits = classify_and_shrink(lattice, config.analysis.thresholds)
    for step, (ids, response) in enumerate(history, start=1):
        try:
            pool = encode_state(ids, lattice)
            update_posterior(lattice, pool, response, config.analysis.model)
        except ImpossibleResponseError:
            raise ConfigError(f"impossible response at step {step}") from None
        except LatticeError as exc:
            raise ConfigError(f"history step {step}: {exc}") from None
        commits += classify_and_shrink(lattice, config.analysis.thresholds)
    return lattice, commits


def cmd_select(config, history=(), workers=None):
    workers = config.worker_count if workers is None else workers
    lattice, commits = replay(config, history)
    out = {"commits": [_commit_json(config, e) for e in commits], "backend": _backend.current()}
    if lattice.n_active == 0:
        out.update(pool=[], mass=None, evaluated_states=0, note="all subjects classified")
        return out
    chosen = select(lattice, worker_count=workers, chunk_exponent_offset=config.chunk_exponent_offset)
    out.update(
        pool=[config.label_of(i) for i in sorted(decode_state(chosen.pool, lattice))],
        mass=chosen.pool_mass,
        evaluated_states=chosen.evaluated_states,
        skipped_states=chosen.skipped_states,
        mass_reads=chosen.mass_reads,
    )
    return out


def analysis_document(config, report):
    return {
        "engine": "latticegt",
        "version": __version__,
        "backend": _backend.current(),
        "config": config.to_json(),
        "report": report.to_dict(),
    }


def cmd_analyze(config, out_dir, workers=None):
    workers = config.worker_count if workers is None else workers
    report = run_analysis(config.analysis, workers=workers)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = rounded(analysis_document(config, report))
    # per-subject keys are labels in the file form
    doc["report"]["per_subject"] = {
        config.label_of(int(k)): v for k, v in doc["report"]["per_subject"].items()
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "per_subject.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "risk", "fn_mass", "fp_mass", "fn_rate", "fp_rate"])
        for sid, err in report.per_subject.items():
            writer.writerow(
                [sid, config.label_of(sid), f"{config.risks[sid]:.12g}"]
                + [f"{v:.12g}" for v in (err.fn_mass, err.fp_mass, err.fn_rate, err.fp_rate)]
            )
    return report, doc


ALGORITHMS = ("bha", "opbha", "opbha_par")


def cmd_bench(config, algos, trials, out_csv, workers=None, history=()):
    workers = config.worker_count if workers is None else workers
    unknown = set(algos) - set(ALGORITHMS)
    if unknown:
        raise ConfigError(f"unknown algorithms: {sorted(unknown)}")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    lattice, _ = replay(config, history)
    n = lattice.n_active
    if n == 0:
        raise ConfigError("nothing to select: every subject is already classified")
    if "bha" in algos and n > BHA_MAX_N:
        raise ScaleGuardError(f"bha is exhaustive; refusing n={n} > {BHA_MAX_N}")
    chunk = default_chunk_size(n, config.chunk_exponent_offset)
    runners = {
        "bha": select_bha,
        "opbha": select_op_bha,
        "opbha_par": lambda lat: select_op_bha_parallel(lat, chunk_size=chunk, worker_count=workers),
    }
    timings = {a: [] for a in algos}
    results = {}
    for trial in range(trials):
        gaps = {}
        for algo in algos:
            start = time.perf_counter()
            chosen = runners[algo](lattice)
            timings[algo].append(time.perf_counter() - start)
            results[algo] = chosen
            gaps[algo] = chosen.gap
        spread = max(gaps.values()) - min(gaps.values())
        if spread > 1e-12:
            raise RuntimeError(f"trial {trial}: selectors disagree on the optimal gap ({gaps})")
    rows = []
    for algo in algos:
        chosen = results[algo]
        rows.append(
            {
                "algo": algo,
                "backend": _backend.current(),
                "n": n,
                "trials": trials,
                "median_seconds": f"{statistics.median(timings[algo]):.6g}",
                "evaluated_states": chosen.evaluated_states,
                "mass_reads": chosen.mass_reads,
                "pool": " ".join(config.label_of(i) for i in sorted(decode_state(chosen.pool, lattice))),
                "pool_mass": f"{chosen.pool_mass:.12g}",
                "gap": f"{chosen.gap:.12g}",
                "workers": workers if algo == "opbha_par" else 1,
                "chunk_size": chunk if algo == "opbha_par" else "",
            }
        )
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return rows


def build_parser():
    parser = _Parser(prog="gt", description="Bayesian group testing on bit-encoded lattices.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--backend", choices=_backend.available(), help="kernel backend (default: compiled if built)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("select", help="pick the next pool by Op-BHA")
    p.add_argument("--config", required=True)
    p.add_argument("--history", help="JSON list of {pool, response} already observed")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("analyze", help="exhaustive response-tree statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("bench", help="compare selectors on one lattice")
    p.add_argument("--config", required=True)
    p.add_argument("--algos", default=",".join(ALGORITHMS))
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--history")
    p.add_argument("--workers", type=int)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.backend:
        _backend.set_backend(args.backend)
    try:
        config = parse_config(args.config)
        history = ()
        if getattr(args, "history", None):
            history = parse_history(load_json(args.history), config)
        if args.workers is not None and args.workers < 0:
            raise ConfigError("--workers must be >= 0")
        if args.command == "select":
            result = cmd_select(config, history, args.workers)
            print(json.dumps(rounded(result), indent=2))
        elif args.command == "analyze":
            _, doc = cmd_analyze(config, args.out, args.workers)
            print(json.dumps({k: doc["report"][k] for k in ("expected_tests", "decisive_rate", "aggregate_fn_mass", "aggregate_fp_mass")}, indent=2))
        else:
            algos = [a.strip() for a in args.algos.split(",") if a.strip()]
            rows = cmd_bench(config, algos, args.trials, args.out, args.workers, history)
            writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    except ScaleGuardError as exc:
        print(f"gt: refused: {exc}", file=sys.stderr)
        return EXIT_SCALE
    except (ConfigError, LatticeError) as exc:
        print(f"gt: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
