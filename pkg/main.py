#!/usr/bin/env python3
"""
Command-line entry point for incremental view maintenance of linear-algebra
programs.

    python main.py compile programs/a4.ivla --dims n=64
    python main.py run powers --dims n=64 --k 16 --model exp --gen count=10 --verify
    python main.py run programs/ols.ivla --dims m=200,n=100,p=1 --dynamic X
    python main.py bench powers --sizes 64,128,256 --models exp --k 16 --report bench.md
    python main.py predict powers --model lin --strategy incr --n 100 --k 4

Exit codes: 0 ok, 1 internal error, 2 configuration or parse error, 3 data
error, 4 numerical singularity.
"""

import argparse
import contextlib
import logging
import sys
from pathlib import Path
from typing import Dict, Iterator, List, Optional, TextIO

import numpy as np
from dotenv import load_dotenv

from bench_service import (
    BENCH_COLUMNS,
    BenchService,
    RowLabels,
    UpdateRow,
    generate_updates,
    render_report,
    run_stream,
    write_rows,
)
from cost_predictor import predict_cost
from errors import ConfigError, DataError, IvlaError, ShapeError
from iterative_analytics import BUILTIN_WORKLOADS, ProgramWorkload, Workload, make_workload, random_workload_inputs
from matrix_core import CostLedger, Matrix, load_matrix, save_matrix
from program_ir import load_program, random_inputs, shape_check
from run_config import (
    BenchConfig,
    GenSpec,
    RunConfig,
    log_level,
    parse_bindings,
    parse_dims,
    parse_list,
    validated,
)
from trigger_compiler import compile_program, format_trigger_set
from trigger_optimizer import optimize
from update_streams import read_update_stream

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


@contextlib.contextmanager
def _output(path: Optional[str]) -> Iterator[TextIO]:
    if path is None:
        yield sys.stdout
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        yield f


# ===== COMPILE =====

def cmd_compile(args: argparse.Namespace) -> int:
    program = load_program(args.program)
    dims = parse_dims(args.dims)
    shape_check(program, dims)
    dynamic = parse_list(args.dynamic) or program.input_names
    triggers = compile_program(program, dynamic, dims, args.rank)
    if not args.no_optimize:
        triggers = optimize(triggers)
    with _output(args.out) as out:
        out.write(format_trigger_set(triggers))
    logger.info(f"✅ Compiled {len(triggers.triggers)} trigger(s) for {args.program}")
    return 0


# ===== RUN =====

def _load_inputs(paths: Dict[str, Path], expected: Dict[str, tuple]) -> Dict[str, Matrix]:
    loaded = {}
    for name, path in paths.items():
        if name not in expected:
            raise ConfigError(f"--inputs names '{name}', which is not an input ({', '.join(expected)})")
        m = load_matrix(path)
        if m.shape != tuple(expected[name]):
            raise ShapeError(
                f"input {name} from {path} is {m.shape[0]}x{m.shape[1]}, "
                f"expected {expected[name][0]}x{expected[name][1]}"
            )
        loaded[name] = m
    return loaded


def _program_workload(config: RunConfig):
    program = load_program(config.program_path)
    shapes = shape_check(program, config.dims)
    dynamic = config.dynamic or program.input_names[0]
    if dynamic not in program.input_names:
        raise ConfigError(f"dynamic input '{dynamic}' is not one of {program.input_names}")

    updates = None
    rank = config.gen.rank
    if config.stream is not None:
        updates = read_update_stream(config.stream, {dynamic: shapes[dynamic]})
        rank = max((u.rank for u in updates), default=1)
    workload = ProgramWorkload(program, dynamic, config.dims, config.strategy, rank, name=config.program_path.stem)

    inputs = random_inputs(program, config.dims, np.random.default_rng(config.seed))
    inputs.update(_load_inputs(config.inputs, {name: shapes[name] for name in program.input_names}))
    labels = RowLabels(
        config.program_path.stem,
        strategy=workload.strategy.value,
        n=str(config.dims.get("n", "-")),
    )
    return workload, inputs, updates, labels


def _builtin_workload(config: RunConfig):
    model = config.iterative_model
    rank = config.gen.rank
    workload = make_workload(config.workload, model, config.strategy, config.k, config.dims, rank)
    dims = dict(config.dims)
    inputs = random_workload_inputs(config.workload, dims, np.random.default_rng(config.seed))
    inputs.update(_load_inputs(config.inputs, {name: m.shape for name, m in inputs.items()}))
    iterative = model is not None
    labels = RowLabels(
        config.workload,
        model=model.label if iterative else "-",
        strategy=workload.strategy.value,
        n=str(dims["n"]),
        p=str(dims.get("p", 1)) if config.workload in ("general", "ols") else "-",
        k=str(config.k) if iterative else "-",
        s=str(config.s) if iterative and model.s else "-",
    )
    return workload, inputs, None, labels


def _save_final(workload: Workload, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    finals = dict(workload.outputs())
    finals[workload.dynamic_input] = workload.inputs[workload.dynamic_input]
    for name, m in finals.items():
        save_matrix(directory / f"{name}.txt", m)
    logger.info(f"✅ Saved {len(finals)} final matrices to {directory}")


def cmd_run(args: argparse.Namespace) -> int:
    target = args.workload
    is_program = target not in BUILTIN_WORKLOADS and (target.endswith(".ivla") or Path(target).is_file())
    data = dict(
        workload=Path(target).stem if is_program else target,
        program_path=Path(target) if is_program else None,
        dynamic=args.dynamic,
        dims=parse_dims(args.dims),
        k=args.k,
        s=args.s,
        model=args.model,
        strategy=args.strategy,
        stream=Path(args.stream) if args.stream else None,
        gen=GenSpec.parse(args.gen),
        verify=args.verify,
        out=Path(args.out) if args.out else None,
        save_final=Path(args.save_final) if args.save_final else None,
        inputs={name: Path(p) for name, p in parse_bindings(args.inputs).items()},
    )
    if args.tolerance is not None:
        data["tolerance"] = args.tolerance
    if args.seed is not None:
        data["seed"] = args.seed
    config = validated(RunConfig, **data)

    if is_program:
        workload, inputs, updates, labels = _program_workload(config)
    else:
        workload, inputs, updates, labels = _builtin_workload(config)
    workload.materialize(inputs, CostLedger())
    if updates is None:
        if config.stream is not None:
            updates = read_update_stream(config.stream, {workload.dynamic_input: workload.update_shape()})
        else:
            updates = generate_updates(workload, config.gen)

    verify = config.should_verify()
    failures: List[int] = []

    def checked(rows: Iterator[UpdateRow]):
        for row in rows:
            if verify and float(row.max_abs_error_vs_oracle) > config.tolerance:
                failures.append(row.update_index)
            yield row.as_list()

    logger.info(f"🔄 Applying {len(updates)} update(s) to {labels.workload} ({labels.strategy}, verify={verify})")
    with _output(args.out) as out:
        written = write_rows(out, checked(run_stream(workload, updates, labels, verify)))

    if config.save_final is not None:
        _save_final(workload, config.save_final)
    if failures:
        logger.error(f"❌ {len(failures)} update(s) exceeded tolerance {config.tolerance:g}: {failures[:10]}")
        return 1
    logger.info(f"✅ Applied {written} update(s)")
    return 0


# ===== BENCH AND PREDICT =====

def cmd_bench(args: argparse.Namespace) -> int:
    data = dict(
        workload=args.workload,
        sizes=parse_list(args.sizes, int),
        models=parse_list(args.models) or ["lin"],
        strategies=parse_list(args.strategies) or ["reeval", "incr"],
        k=args.k,
        s=args.s,
        p=args.p,
        m=args.m,
        runs=args.runs,
        updates=args.updates,
        rank=args.rank,
        zipf_factors=parse_list(args.zipf_factors, float),
        batch=args.batch,
        verify=args.verify,
        out=Path(args.out) if args.out else None,
        report=Path(args.report) if args.report else None,
    )
    if args.seed is not None:
        data["seed"] = args.seed
    if args.workers is not None:
        data["workers"] = args.workers
    config = validated(BenchConfig, **data)

    results = BenchService(config).run()
    with _output(args.out) as out:
        write_rows(out, (r.as_list() for r in results), BENCH_COLUMNS)
    if config.report is not None:
        render_report(config, results, config.report)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    prediction = predict_cost(
        args.workload,
        args.model if args.workload != "ols" else None,
        args.strategy,
        n=args.n,
        p=args.p,
        k=args.k,
        s=args.s,
        gamma=args.gamma,
        m=args.m,
    )
    exact = "-" if prediction.exact is None else str(prediction.exact)
    lines = [
        f"workload: {prediction.workload}",
        f"model: {prediction.model}",
        f"strategy: {prediction.strategy}",
        f"exact_ops: {exact}",
        f"time_class: {prediction.time_class}",
        f"time_estimate: {prediction.time_estimate:.6g}",
        f"space_class: {prediction.space_class}",
        f"space_estimate: {prediction.space_estimate:.6g}",
        f"stored_views: {prediction.stored_views}",
    ]
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


# ===== ENTRY POINT =====

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Incremental maintenance of linear-algebra views")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="Compile a program into update triggers")
    p.add_argument("program", help="Program file (.ivla)")
    p.add_argument("--dims", help="Dimension bindings, e.g. n=64,m=128")
    p.add_argument("--dynamic", help="Comma-separated dynamic inputs (default: all inputs)")
    p.add_argument("--rank", type=int, default=1, help="Expected update rank (default: 1)")
    p.add_argument("--no-optimize", action="store_true", help="Skip the trigger optimizer")
    p.add_argument("--out", help="Write the trigger listing here instead of stdout")
    p.set_defaults(handler=cmd_compile)

    p = sub.add_parser("run", help="Apply an update stream and emit one CSV row per update")
    p.add_argument("workload", help="powers, sums, general, ols or a program file")
    p.add_argument("--dims", help="Dimension bindings, e.g. n=64,p=4")
    p.add_argument("--k", type=int, default=1, help="Iteration count (default: 1)")
    p.add_argument("--s", type=int, help="Skip size for the skip model")
    p.add_argument("--model", choices=["lin", "exp", "skip"], help="Iterative model (default: lin)")
    p.add_argument("--strategy", choices=["reeval", "incr", "hybrid"], default="incr")
    p.add_argument("--dynamic", help="Dynamic input of a program (default: its first input)")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--stream", help="Update-stream file (text, or binary with .bin)")
    source.add_argument("--gen", help="Generated stream, e.g. count=10,rank=1,zipf=1.0,seed=42")
    verify = p.add_mutually_exclusive_group()
    verify.add_argument("--verify", dest="verify", action="store_true", default=None,
                        help="Check every update against re-evaluation")
    verify.add_argument("--no-verify", dest="verify", action="store_false")
    p.add_argument("--tolerance", type=float, help="Largest accepted absolute error (default: 1e-6)")
    p.add_argument("--inputs", help="Input matrix files, e.g. A=a.txt,B=b.bin")
    p.add_argument("--save-final", help="Directory for the final matrices")
    p.add_argument("--seed", type=int, help="Seed for generated inputs (default: IVLA_SEED or 42)")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("bench", help="Compare strategies over a grid of sizes and models")
    p.add_argument("workload", choices=["powers", "sums", "general", "ols"])
    p.add_argument("--sizes", required=True, help="Comma-separated n values")
    p.add_argument("--models", help="Comma-separated models (default: lin)")
    p.add_argument("--strategies", help="Comma-separated strategies (default: reeval,incr)")
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--s", type=int)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--m", type=int, help="Rows of X for ols (default: 2n)")
    p.add_argument("--runs", type=int, default=3, help="Repetitions per cell (default: 3)")
    p.add_argument("--updates", type=int, default=10, help="Updates per run (default: 10)")
    p.add_argument("--rank", type=int, default=1)
    p.add_argument("--zipf-factors", help="Comma-separated zipf factors for batch updates")
    p.add_argument("--batch", type=int, default=64, help="Row changes per zipf batch (default: 64)")
    p.add_argument("--workers", type=int, help="Worker threads (default: IVLA_BENCH_WORKERS or 1)")
    p.add_argument("--seed", type=int)
    p.add_argument("--verify", action="store_true", help="Check each cell's final state against re-evaluation")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--report", help="Markdown report path")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("predict", help="Predicted cost of one rank-1 update")
    p.add_argument("workload", choices=["powers", "sums", "general", "ols"])
    p.add_argument("--model", default="lin", choices=["lin", "exp", "skip"])
    p.add_argument("--strategy", default="incr", choices=["reeval", "incr", "hybrid"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--s", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--gamma", type=float, default=3.0)
    p.set_defaults(handler=cmd_predict)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)

    level = "DEBUG" if args.verbose else log_level()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT, stream=sys.stderr, force=True)

    try:
        return args.handler(args)
    except IvlaError as e:
        logger.error(f"❌ {e.message}")
        return e.exit_code
    except OSError as e:
        logger.error(f"❌ {e}")
        return DataError.exit_code
    except Exception as e:
        logger.exception(f"❌ Unexpected error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
