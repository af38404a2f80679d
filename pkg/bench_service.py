#!/usr/bin/env python3
"""
Stream runner and benchmark service.

``run_stream`` drives one workload through an update stream and yields one
CSV row per update. ``BenchService`` runs the cross product of a
BenchConfig on a thread pool, each cell with private inputs, state and
ledger, and reports mean and standard deviation of the refresh time next to
the ledger counts.
"""

import csv
import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, TextIO, Tuple

import numpy as np
from jinja2 import Environment, FileSystemLoader

from delta_engine import RankKUpdate
from errors import IvlaError
from iterative_analytics import (
    IterativeModel,
    Strategy,
    Workload,
    make_workload,
    random_workload_inputs,
)
from matrix_core import CostLedger, Matrix
from run_config import BenchConfig, GenSpec
from update_streams import random_row_updates, zipf_batch_stream

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).parent / "templates"

CSV_COLUMNS = [
    "workload", "model", "strategy", "n", "p", "k", "s",
    "update_index", "mul_adds", "adds", "wall_ns", "max_abs_error_vs_oracle",
]

BENCH_COLUMNS = [
    "workload", "model", "strategy", "n", "p", "k", "s", "zipf", "runs", "updates",
    "mul_adds", "adds", "mean_ns", "std_ns", "speedup", "ops_speedup", "max_abs_error", "status",
]


# ===== STREAM RUNS =====

@dataclass
class UpdateRow:
    workload: str
    model: str
    strategy: str
    n: str
    p: str
    k: str
    s: str
    update_index: int
    mul_adds: int
    adds: int
    wall_ns: int
    max_abs_error_vs_oracle: str = "-"

    def as_list(self) -> List:
        return [getattr(self, column) for column in CSV_COLUMNS]


@dataclass(frozen=True)
class RowLabels:
    """The identifying CSV columns of a run"""

    workload: str
    model: str = "-"
    strategy: str = "-"
    n: str = "-"
    p: str = "-"
    k: str = "-"
    s: str = "-"


def max_abs_error(outputs: Mapping[str, Matrix], expected: Mapping[str, Matrix]) -> float:
    return max((float(np.max(np.abs(outputs[name] - expected[name]))) for name in expected), default=0.0)


def run_stream(
    workload: Workload,
    updates: Sequence[RankKUpdate],
    labels: RowLabels,
    verify: bool = False,
) -> Iterator[UpdateRow]:
    """
    Apply ``updates`` to an already materialized workload, one row per update.

    Rows are yielded as soon as each update is applied, so a failing update
    leaves every earlier row with the caller.
    """
    for index, update in enumerate(updates):
        ledger = CostLedger()
        start = time.perf_counter_ns()
        try:
            workload.apply(update, ledger)
        except IvlaError as e:
            logger.error(f"❌ Update {index} failed: {e.message}")
            raise
        wall_ns = time.perf_counter_ns() - start
        row = UpdateRow(
            labels.workload, labels.model, labels.strategy, labels.n, labels.p, labels.k, labels.s,
            update_index=index,
            mul_adds=ledger.mul_adds,
            adds=ledger.total_adds,
            wall_ns=wall_ns,
        )
        if verify:
            row.max_abs_error_vs_oracle = f"{max_abs_error(workload.outputs(), workload.oracle()):.3e}"
        yield row


def write_rows(stream: TextIO, rows, columns: Sequence[str] = CSV_COLUMNS) -> int:
    """Header plus ``rows``, flushed row by row; returns the number of rows written"""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    stream.flush()
    count = 0
    for row in rows:
        writer.writerow(row)
        stream.flush()
        count += 1
    return count


def generate_updates(workload: Workload, gen: GenSpec) -> List[RankKUpdate]:
    """Random row updates, or zipf batches of ``gen.rank`` row changes when ``gen.zipf`` is set"""
    rows, cols = workload.update_shape()
    target = workload.dynamic_input
    if gen.zipf is not None:
        stream = zipf_batch_stream(rows, gen.rank, gen.zipf, gen.seed, cols=cols, count=gen.count, target=target, scale=gen.scale)
        return list(stream)
    rng = np.random.default_rng(gen.seed)
    return random_row_updates(target, rows, cols, gen.count, gen.rank, rng, gen.scale)


# ===== BENCHMARKS =====

@dataclass
class CellResult:
    workload: str
    model: str
    strategy: str
    n: int
    p: int
    k: int
    s: int
    zipf: Optional[float] = None
    runs: int = 0
    updates: int = 0
    mul_adds: int = 0
    adds: int = 0
    times_ns: List[int] = field(default_factory=list)
    speedup: Optional[float] = None
    ops_speedup: Optional[float] = None
    max_abs_error: Optional[float] = None
    error: Optional[str] = None

    @property
    def mean_ns(self) -> float:
        return statistics.fmean(self.times_ns) if self.times_ns else 0.0

    @property
    def std_ns(self) -> float:
        return statistics.pstdev(self.times_ns) if len(self.times_ns) > 1 else 0.0

    @property
    def ops(self) -> int:
        return self.mul_adds + self.adds

    @property
    def status(self) -> str:
        return "ok" if self.error is None else f"failed: {self.error}"

    def group_key(self) -> Tuple:
        return (self.workload, self.model, self.n, self.p, self.k, self.s, self.zipf)

    def as_list(self) -> List:
        def fmt(x: Optional[float]) -> str:
            return "-" if x is None else f"{x:.3f}"

        return [
            self.workload, self.model, self.strategy, self.n, self.p, self.k, self.s,
            "-" if self.zipf is None else self.zipf,
            self.runs, self.updates, self.mul_adds, self.adds,
            f"{self.mean_ns:.0f}", f"{self.std_ns:.0f}",
            fmt(self.speedup), fmt(self.ops_speedup),
            "-" if self.max_abs_error is None else f"{self.max_abs_error:.3e}",
            self.status,
        ]


@dataclass(frozen=True)
class Cell:
    n: int
    model: Optional[str]
    strategy: str
    zipf: Optional[float] = None


class BenchService:
    """Runs every cell of a BenchConfig and aggregates the results"""

    def __init__(self, config: BenchConfig):
        self.config = config

    def cells(self) -> List[Cell]:
        config = self.config
        models: List[Optional[str]] = [None] if config.workload == "ols" else list(config.models)
        zipfs: List[Optional[float]] = list(config.zipf_factors) or [None]
        return [
            Cell(n, model, strategy, zipf)
            for n in config.sizes
            for model in models
            for strategy in config.strategies
            for zipf in zipfs
        ]

    def _dims(self, n: int) -> Dict[str, int]:
        dims = {"n": n, "p": self.config.p}
        if self.config.workload == "ols":
            dims["m"] = self.config.m or 2 * n
        return dims

    def _gen(self, cell: Cell) -> GenSpec:
        config = self.config
        rank = config.batch if cell.zipf is not None else config.rank
        return GenSpec(count=config.updates, rank=rank, zipf=cell.zipf, seed=config.seed)

    def run_cell(self, cell: Cell) -> CellResult:
        config = self.config
        result = CellResult(
            config.workload, cell.model or "-", cell.strategy, cell.n, config.p, config.k,
            config.s or 0, zipf=cell.zipf,
        )
        try:
            model = IterativeModel.parse(cell.model, config.s) if cell.model else None
            gen = self._gen(cell)
            dims = self._dims(cell.n)
            rank = min(gen.rank, cell.n, dims.get("m", cell.n))
            for run in range(config.runs):
                workload = make_workload(config.workload, model, cell.strategy, config.k, dims, rank)
                rng = np.random.default_rng(config.seed)
                workload.materialize(random_workload_inputs(config.workload, dims, rng), CostLedger())
                updates = generate_updates(workload, gen)

                ledger = CostLedger()
                start = time.perf_counter_ns()
                for update in updates:
                    workload.apply(update, ledger)
                elapsed = time.perf_counter_ns() - start
                result.times_ns.append(elapsed // max(1, len(updates)))
                result.mul_adds, result.adds = ledger.mul_adds, ledger.total_adds
                result.updates = len(updates)
                result.runs = run + 1
                if config.verify:
                    error = max_abs_error(workload.outputs(), workload.oracle())
                    result.max_abs_error = max(error, result.max_abs_error or 0.0)
                    logger.debug(f"🔍 {config.workload}/{result.model}/{cell.strategy} n={cell.n}: max error {error:.3e}")
        except IvlaError as e:
            result.error = e.message
        except (np.linalg.LinAlgError, ValueError) as e:
            result.error = f"{type(e).__name__}: {e}"
        if result.error is not None:
            logger.warning(f"⚠️ Cell {config.workload}/{result.model}/{cell.strategy} n={cell.n} failed: {result.error}")
        return result

    def run(self) -> List[CellResult]:
        cells = self.cells()
        logger.info(f"📊 Benchmarking {len(cells)} cells x {self.config.runs} runs on {self.config.workers} worker(s)")
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            results = list(pool.map(self.run_cell, cells))
        self._speedups(results)
        failed = sum(1 for r in results if r.error)
        if failed:
            logger.warning(f"⚠️ {failed} of {len(results)} cells failed and were skipped")
        else:
            logger.info(f"✅ All {len(results)} cells completed")
        return results

    @staticmethod
    def _speedups(results: List[CellResult]) -> None:
        """Re-evaluation time and ledger ratio over each other strategy of the same cell"""
        baselines = {
            r.group_key(): r for r in results
            if r.strategy == Strategy.REEVALUATION.value and r.error is None
        }
        for r in results:
            base = baselines.get(r.group_key())
            if base is None or r.error is not None:
                continue
            if r.mean_ns > 0:
                r.speedup = base.mean_ns / r.mean_ns
            if r.ops > 0:
                r.ops_speedup = base.ops / r.ops


def render_report(config: BenchConfig, results: Sequence[CellResult], path: Path) -> None:
    env = Environment(loader=FileSystemLoader(str(TEMPLATES_DIR)), trim_blocks=True, lstrip_blocks=True)
    template = env.get_template("bench_report.md.j2")
    text = template.render(
        config=config.model_dump(mode="json"),
        columns=BENCH_COLUMNS,
        rows=[r.as_list() for r in results],
        failed=[asdict(r) for r in results if r.error],
    )
    Path(path).write_text(text, encoding="utf-8")
    logger.info(f"✅ Report written to {path}")
