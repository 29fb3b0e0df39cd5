"""Command-line front end: solves, convergence studies, timings and checks.

Results are written as CSV (one header line, one row per record) or, for an
``--out`` path ending in ``.json``, as a JSON list of records.  Every record
carries a ``schema`` column naming the command and the schema version.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 selftest
failure.
"""

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import statistics
import sys
import time
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pydantic

from . import (
    assembly,
    element_core,
    poisson_solver,
    selftest,
    spectral_cache,
)
from .config import Algorithm, RunConfig, load_config_file
from .errors import FftFemError, NumericalError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_SELFTEST = 3

SCHEMA_VERSION = 1

BENCH_ALGORITHMS: Tuple[Algorithm, ...] = ("a", "b")

SCHEMAS: Dict[str, Tuple[str, ...]] = {
    "solve": (
        "schema",
        "dims",
        "K",
        "n",
        "X",
        "alpha",
        "algorithm",
        "threads",
        "dof",
        "error",
        "residual",
        "setup_s",
        "assembly_s",
        "transform_s",
        "solve_s",
    ),
    "convergence": (
        "schema",
        "dims",
        "K",
        "n",
        "alpha",
        "algorithm",
        "dof",
        "error",
        "order",
        "residual",
    ),
    "bench": (
        "schema",
        "dims",
        "K",
        "n",
        "algorithm",
        "threads",
        "repeat",
        "dof",
        "setup_s",
        "solve_s",
        "ratio_K",
        "ratio_n",
    ),
    "selftest": ("schema", "module", "invariant", "passed", "seconds", "detail"),
    "spectrum": ("schema", "n", "kind", "index", "value", "parity"),
}

Record = Dict[str, Any]

_HANDLER_MARK = "_fftfem_cli_handler"


def schema_id(cmd: str) -> str:
    return f"fftfem.{cmd}/{SCHEMA_VERSION}"


@dataclasses.dataclass
class ResultRecord:
    """Outcome of one solve."""

    dims: int
    elements: Tuple[int, ...]
    orders: Tuple[int, ...]
    lengths: Tuple[float, ...]
    alpha: float
    algorithm: str
    threads: int
    dof: int
    error: float
    residual: float
    setup_s: float
    assembly_s: float
    transform_s: float
    solve_s: float

    def as_record(self) -> Record:
        return {
            "schema": schema_id("solve"),
            "dims": self.dims,
            "K": _join(self.elements),
            "n": _join(self.orders),
            "X": _join(self.lengths),
            "alpha": self.alpha,
            "algorithm": self.algorithm,
            "threads": self.threads,
            "dof": self.dof,
            "error": self.error,
            "residual": self.residual,
            "setup_s": self.setup_s,
            "assembly_s": self.assembly_s,
            "transform_s": self.transform_s,
            "solve_s": self.solve_s,
        }


def _join(values: Sequence[Any]) -> str:
    return "x".join(str(v) for v in values)


def manufactured_case(config: RunConfig) -> assembly.ManufacturedCase:
    if config.preset == "skew":
        return assembly.manufactured_case_2d(config.alpha)
    return assembly.manufactured_case_sines(config.axis_lengths, config.alpha)


def _check_case(case: assembly.ManufacturedCase) -> None:
    rng = np.random.default_rng(0)
    points = rng.uniform(0.1, 0.9, size=(8, len(case.lengths))) * np.array(
        case.lengths
    )
    defect = assembly.laplacian_defect(case, points)
    if not defect <= 1e-5:
        raise NumericalError(
            f"Right-hand side of the {case.name!r} case does not match its "
            f"solution (defect {defect!r})"
        )


def run_solve(
    config: RunConfig,
    cache_dir: Optional[str],
    case: assembly.ManufacturedCase,
    elements: Optional[int] = None,
    order: Optional[int] = None,
) -> ResultRecord:
    problem = config.problem(elements=elements, order=order)
    threads = config.thread_count
    plan = poisson_solver.build_plan(problem, threads, cache_dir)
    start = time.perf_counter()
    f_h = assembly.assemble_rhs(case.rhs, problem.meshes)
    assembly_s = time.perf_counter() - start
    stats = poisson_solver.SolveStats()
    start = time.perf_counter()
    v = poisson_solver.solve(plan, f_h, stats)
    solve_s = time.perf_counter() - start
    record = ResultRecord(
        dims=problem.dims,
        elements=tuple(m.elements for m in problem.meshes),
        orders=tuple(m.order for m in problem.meshes),
        lengths=tuple(m.length for m in problem.meshes),
        alpha=problem.alpha,
        algorithm=problem.algorithm,
        threads=threads,
        dof=problem.dof_count,
        error=assembly.error_uniform(v, case.solution, problem.meshes),
        residual=poisson_solver.residual_norm(plan, v, f_h),
        setup_s=plan.setup_seconds,
        assembly_s=assembly_s,
        transform_s=stats.seconds["transforms"],
        solve_s=solve_s,
    )
    logger.info(
        "K=%s n=%s: %d unknowns, error %.3e, residual %.3e, solve %.3fs",
        _join(record.elements),
        _join(record.orders),
        record.dof,
        record.error,
        record.residual,
        record.solve_s,
    )
    return record


def cmd_solve(config: RunConfig, cache_dir: Optional[str]) -> Tuple[List[Record], bool]:
    case = manufactured_case(config)
    return [run_solve(config, cache_dir, case).as_record()], True


def observed_order(coarse: float, fine: float) -> Optional[float]:
    """``log2(err(K)/err(2K))``, or `None` if either error is zero."""
    if coarse <= 0 or fine <= 0:
        return None
    return math.log2(coarse / fine)


def cmd_convergence(
    config: RunConfig, cache_dir: Optional[str]
) -> Tuple[List[Record], bool]:
    case = manufactured_case(config)
    _check_case(case)
    records = []
    for n in config.orders:
        previous: Optional[float] = None
        for k in sorted(config.elements):
            result = run_solve(config, cache_dir, case, elements=k, order=n)
            order = None if previous is None else observed_order(previous, result.error)
            previous = result.error
            records.append(
                {
                    "schema": schema_id("convergence"),
                    "dims": result.dims,
                    "K": k,
                    "n": n,
                    "alpha": result.alpha,
                    "algorithm": result.algorithm,
                    "dof": result.dof,
                    "error": result.error,
                    "order": "" if order is None else order,
                    "residual": result.residual,
                }
            )
    return records, True


def _time_solves(
    plan: poisson_solver.SolverPlan, f_h: np.ndarray, repeat: int
) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        poisson_solver.solve(plan, f_h)
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def cmd_bench(config: RunConfig, cache_dir: Optional[str]) -> Tuple[List[Record], bool]:
    rng = np.random.default_rng(0)
    threads = config.thread_count
    timings: Dict[Tuple[str, int, int], float] = {}
    records = []
    for n in config.orders:
        for algorithm in BENCH_ALGORITHMS:
            for k in sorted(config.elements):
                problem = config.problem(elements=k, order=n, algorithm=algorithm)
                plan = poisson_solver.build_plan(problem, threads, cache_dir)
                f_h = rng.standard_normal(problem.shape)
                solve_s = _time_solves(plan, f_h, config.repeat)
                timings[algorithm, k, n] = solve_s
                logger.info(
                    "bench algorithm=%s K=%d n=%d: %.4fs", algorithm, k, n, solve_s
                )
                records.append(
                    {
                        "schema": schema_id("bench"),
                        "dims": problem.dims,
                        "K": k,
                        "n": n,
                        "algorithm": algorithm,
                        "threads": threads,
                        "repeat": config.repeat,
                        "dof": problem.dof_count,
                        "setup_s": plan.setup_seconds,
                        "solve_s": solve_s,
                    }
                )
    orders = list(config.orders)
    for record in records:
        key = (record["algorithm"], record["K"], record["n"])
        coarser = timings.get((key[0], key[1] // 2, key[2]))
        record["ratio_K"] = "" if coarser is None else timings[key] / coarser
        i = orders.index(key[2])
        lower = timings.get((key[0], key[1], orders[i - 1])) if i else None
        record["ratio_n"] = "" if lower is None else timings[key] / lower
    return records, True


def cmd_selftest(
    config: RunConfig, cache_dir: Optional[str]
) -> Tuple[List[Record], bool]:
    results = selftest.run_checks(cache_dir, config.thread_count)
    records = [
        {
            "schema": schema_id("selftest"),
            "module": r.module,
            "invariant": r.invariant,
            "passed": r.passed,
            "seconds": r.seconds,
            "detail": r.detail,
        }
        for r in results
    ]
    failed = [r for r in results if not r.passed]
    if failed:
        logger.error("%d of %d checks failed", len(failed), len(results))
    return records, not failed


def cmd_spectrum(
    config: RunConfig, cache_dir: Optional[str]
) -> Tuple[List[Record], bool]:
    records = []
    for n in config.orders:
        ref = element_core.reference_element(n)
        for i, (value, parity) in enumerate(
            zip(ref.eigen.values, ref.eigen.parity)
        ):
            records.append(
                {
                    "schema": schema_id("spectrum"),
                    "n": n,
                    "kind": "interior",
                    "index": i + 1,
                    "value": float(value),
                    "parity": "even" if parity > 0 else "odd",
                }
            )
        full = element_core.full_element_spectrum(ref.pencil)
        for i, value in enumerate(full):
            records.append(
                {
                    "schema": schema_id("spectrum"),
                    "n": n,
                    "kind": "element",
                    "index": i,
                    "value": float(value),
                    "parity": "",
                }
            )
    return records, True


Command = Callable[[RunConfig, Optional[str]], Tuple[List[Record], bool]]

COMMANDS: Dict[str, Command] = {
    "solve": cmd_solve,
    "convergence": cmd_convergence,
    "bench": cmd_bench,
    "selftest": cmd_selftest,
    "spectrum": cmd_spectrum,
}


def format_csv(cmd: str, records: List[Record]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SCHEMAS[cmd], lineterminator="\n")
    writer.writeheader()
    for record in records:
        writer.writerow(record)
    return buf.getvalue()


def write_records(cmd: str, records: List[Record], out: Optional[str]) -> None:
    if out is not None and out.endswith(".json"):
        with open(out, "w", encoding="utf-8") as f:
            json.dump(records, f, indent=2)
            f.write("\n")
        return
    content = format_csv(cmd, records)
    if out is None:
        sys.stdout.write(content)
    else:
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(content)


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    ap = _ArgumentParser(
        prog="fftfem",
        description="FFT-based direct solver for -Δu + αu = f with "
        "order-n finite elements on boxes.",
    )
    ap.add_argument("--cmd", choices=sorted(COMMANDS))
    ap.add_argument("--dims", type=int)
    ap.add_argument("--K", dest="elements", type=int, nargs="+")
    ap.add_argument("--n", dest="orders", type=int, nargs="+")
    ap.add_argument("--X", dest="lengths", type=float, nargs="+")
    ap.add_argument("--alpha", type=float)
    ap.add_argument("--algorithm", choices=["a", "b"])
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out", type=str)
    ap.add_argument("--cache-dir", type=str)
    ap.add_argument("--config", type=str)
    ap.add_argument("--preset", choices=["skew", "sines"])
    ap.add_argument("--repeat", type=int)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("-q", "--quiet", action="count", default=0)
    return ap.parse_args(argv)


_FLAG_FIELDS = (
    "cmd",
    "dims",
    "elements",
    "orders",
    "lengths",
    "alpha",
    "algorithm",
    "threads",
    "out",
    "cache_dir",
    "preset",
    "repeat",
)


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merges the ``--config`` file with the flags; flags win.

    :raises pydantic.ValidationError: on invalid values.
    """
    values: Dict[str, Any] = {}
    if args.config is not None:
        values.update(load_config_file(args.config))
    for name in _FLAG_FIELDS:
        value = getattr(args, name)
        if value is not None:
            values[name] = value
    if args.verbose or args.quiet:
        values["verbosity"] = args.verbose - args.quiet
    return RunConfig(**values)


def configure_logging(verbosity: int) -> None:
    root = logging.getLogger("fftfem")
    for handler in list(root.handlers):
        if getattr(handler, _HANDLER_MARK, False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    setattr(handler, _HANDLER_MARK, True)
    root.addHandler(handler)
    if verbosity > 0:
        root.setLevel(logging.DEBUG)
    elif verbosity < 0:
        root.setLevel(logging.WARNING)
    else:
        root.setLevel(logging.INFO)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parse_args(argv)
    try:
        config = build_config(args)
    except pydantic.ValidationError as e:
        sys.stderr.write(f"fftfem: invalid configuration:\n{e}\n")
        return EXIT_USAGE
    except (OSError, ValueError) as e:
        sys.stderr.write(f"fftfem: cannot read config file {args.config!r}: {e}\n")
        return EXIT_USAGE
    configure_logging(config.verbosity)
    cache_dir = spectral_cache.resolve_cache_dir(config.cache_dir)
    try:
        records, ok = COMMANDS[config.cmd](config, cache_dir)
    except NumericalError as e:
        logger.error("%s", e)
        return EXIT_NUMERICAL
    except FftFemError as e:
        logger.error("%s", e)
        return EXIT_USAGE
    try:
        write_records(config.cmd, records, config.out)
    except OSError as e:
        logger.error("Cannot write results to %r: %s", config.out, e)
        return EXIT_USAGE
    return EXIT_OK if ok else EXIT_SELFTEST


if __name__ == "__main__":
    sys.exit(main())
