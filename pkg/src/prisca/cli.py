"""Command-line front end: ``prisca detect``, ``prisca benchmark``, ``prisca simulate``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 fit did not converge
(the report is still written).
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import __version__
from .engine import PriscaFit, auto_fit, fit
from .extensions import ArSpec, ar_residualize, difference_detrend
from .io import DataError, EffectRecord, ReportDocument, ingest, to_csv, write_series_csv
from .model import InvalidInputError, ModelConfig
from .simbench import METHODS, InfeasibleSpecError, SimulationSpec, generate_dataset, run_benchmark
from .summaries import credible_set, detect, map_estimate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2, 3

BENCHMARK_COLUMNS = ["T", "method", "bias", "hausdorff", "time", "length", "cond_cov", "reps", "failures"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prisca", description="Bayesian variance change point detection with credible sets.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("detect", help="detect variance changes in CSV series")
    d.add_argument("paths", nargs="+", type=Path)
    d.add_argument("--L", type=int, help="number of single effects")
    d.add_argument("--auto", action="store_true", help="grow L until the detected count plateaus (default)")
    d.add_argument("--a0", type=float, default=0.001)
    d.add_argument("--sigma2", type=float, default=1.0)
    d.add_argument("--p", type=float, default=0.9)
    d.add_argument("--epsilon", type=float, default=1e-3)
    d.add_argument("--max-iter", type=int, default=1000)
    d.add_argument("--diff", action="store_true", help="analyse first-order differences")
    d.add_argument("--ar", type=int, default=0, metavar="ORDER", help="remove an AR(ORDER) component")
    d.add_argument("--emit-alpha", action="store_true")
    d.add_argument("--plot-data", type=Path, metavar="PATH")
    d.add_argument("--seed", type=int, default=None, help="reserved; echoed in the report")
    d.add_argument("--format", choices=("json", "csv"), default="json")
    d.add_argument("--out", type=Path)
    d.add_argument("--no-meta", action="store_true", help="omit timing and timestamps")
    d.add_argument("--jobs", type=int, default=1)

    b = sub.add_parser("benchmark", help="simulation study in the style of the variance-change benchmark")
    b.add_argument("--T", type=int, nargs="+", required=True)
    b.add_argument("--reps", type=int, default=300)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--method", choices=METHODS, default="prisca")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--a0", type=float, default=0.001)
    b.add_argument("--p", type=float, default=0.9)
    b.add_argument("--epsilon", type=float, default=1e-3)
    b.add_argument("--out", type=Path)

    s = sub.add_parser("simulate", help="write one simulated series as CSV")
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--truth", type=Path, help="write true change times and variances as JSON")
    return parser


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _config_echo(args) -> dict:
    return {
        "L": "auto" if args.L is None else args.L,
        "a0": args.a0,
        "sigma2": args.sigma2,
        "p": args.p,
        "epsilon": args.epsilon,
        "max_iter": args.max_iter,
        "diff": args.diff,
        "ar": args.ar,
        "seed": args.seed,
    }


def analyse_file(path: Path, args) -> tuple:
    """Run the detection pipeline on one file; returns ``(document, fit)``."""
    start = time.perf_counter()
    y = ingest(path)
    digest = {"source": str(path), "length": y.T, "replicates": bool(y.has_counts), "preprocessing": []}
    digest["axis"] = "original"
    digest["index_offset"] = 0
    if args.diff:
        y = difference_detrend(y)
        digest["preprocessing"].append("first-difference")
        digest["axis"] = "differenced"
        digest["axis_note"] = "index i is y[i+1]-y[i]; a change at original time t appears at i = t-1 or t"
    config = ModelConfig(
        a0=args.a0, sigma2=args.sigma2, L=args.L or 1, p=args.p, epsilon=args.epsilon, max_iter=args.max_iter
    )
    fitter = auto_fit if args.L is None else fit
    if args.ar:
        ar = ar_residualize(y, ArSpec(args.ar), config, fitter=fitter)
        result = ar.fit
        digest["preprocessing"].append(f"ar({args.ar})")
        digest["axis"] = "ar-residual" if digest["axis"] == "original" else digest["axis"] + "+ar-residual"
        digest["index_offset"] = args.ar
        digest["ar_coefficients"] = [float(c) for c in ar.spec.coefficients]
    else:
        result = fitter(y, config)
    digest["analysed_length"] = result.T

    report = detect(result)
    kept = {d.effect for d in report.detections}
    effects = []
    for l, eff in enumerate(result.effects):
        cs = credible_set(eff.alpha, config.p)
        effects.append(
            EffectRecord(
                effect=l + 1,
                status="kept" if l in kept else "discarded",
                estimate=map_estimate(eff.alpha),
                credible_set=list(cs.indices),
                total_mass=cs.total_mass,
                peak=cs.peak,
                alpha=[float(a) for a in eff.alpha] if args.emit_alpha else None,
            )
        )
    echo = _config_echo(args)
    echo["L_used"] = result.L
    meta = None
    if not args.no_meta:
        meta = {
            "elapsed_seconds": time.perf_counter() - start,
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "version": __version__,
        }
    doc = ReportDocument(
        input=digest,
        config=echo,
        effects=effects,
        k_hat=report.k_hat,
        elbo_trace=[float(v) for v in result.elbo_trace],
        converged=bool(result.converged),
        iterations=result.iterations,
        meta=meta,
    )
    return doc, result


def _analyse_job(job):
    path, args = job
    try:
        doc, result = analyse_file(path, args)
    except InvalidInputError as exc:
        return None, str(exc)
    return (doc, result), None


def plot_table(result: PriscaFit, p: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "effect", "alpha", "in_credible_set"])
    for l, eff in enumerate(result.effects):
        members = set(credible_set(eff.alpha, p).indices)
        for t, a in enumerate(eff.alpha, start=1):
            w.writerow([t, l + 1, repr(float(a)), int(t in members)])
    return buf.getvalue()


def cmd_detect(args) -> int:
    if args.L is not None and args.auto:
        raise UsageError("--L and --auto are mutually exclusive")
    if args.L is not None and args.L < 1:
        raise UsageError("--L must be a positive integer")
    if args.ar < 0:
        raise UsageError("--ar must be nonnegative")
    if args.plot_data is not None and len(args.paths) > 1:
        raise UsageError("--plot-data takes a single input file")
    try:
        ModelConfig(a0=args.a0, sigma2=args.sigma2, p=args.p, epsilon=args.epsilon, max_iter=args.max_iter)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from exc

    paths = sorted(args.paths, key=str)
    jobs = [(p, args) for p in paths]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_analyse_job, jobs))
    else:
        outcomes = [_analyse_job(j) for j in jobs]

    errors = [err for _, err in outcomes if err]
    if errors:
        for err in errors:
            print(f"prisca: data error: {err}", file=sys.stderr)
        return EXIT_DATA

    docs = [o[0][0] for o in outcomes]
    payload = docs[0].to_dict() if len(docs) == 1 else {"reports": [d.to_dict() for d in docs]}
    text = json.dumps(payload, indent=2) + "\n" if args.format == "json" else to_csv(payload)
    _emit(text, args.out)
    if args.plot_data is not None:
        args.plot_data.write_text(plot_table(outcomes[0][0][1], args.p))
    if not all(d.converged for d in docs):
        print("prisca: warning: fit stopped at --max-iter without converging", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def cmd_benchmark(args) -> int:
    if args.reps < 0 or args.jobs < 1:
        raise UsageError("--reps must be >= 0 and --jobs >= 1")
    try:
        base = ModelConfig(a0=args.a0, p=args.p, epsilon=args.epsilon)
        specs = [SimulationSpec(T=T, replicates=args.reps, seed=args.seed) for T in args.T]
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from exc
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCHMARK_COLUMNS)
    for spec in specs:
        row = run_benchmark(spec, args.method, jobs=args.jobs, base=base).row()
        w.writerow([_fmt(row[c]) for c in BENCHMARK_COLUMNS])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        data = generate_dataset(SimulationSpec(T=args.T, seed=args.seed, replicates=1), args.index)
    except InfeasibleSpecError as exc:
        raise UsageError(str(exc)) from exc
    write_series_csv(args.out, data.series.values)
    truth = {"changes": list(data.changes), "variances": [float(v) for v in data.variances]}
    if args.truth is not None:
        args.truth.write_text(json.dumps(truth, indent=2) + "\n")
    else:
        sys.stdout.write(json.dumps(truth) + "\n")
    return EXIT_OK


COMMANDS = {"detect": cmd_detect, "benchmark": cmd_benchmark, "simulate": cmd_simulate}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"prisca: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"prisca: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
