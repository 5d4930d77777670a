import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple, Union

import pandas as pd
from dotenv.parser import parse_stream
from loguru import logger
from pydantic import BaseModel, Field, ValidationError

from src.common.exceptions import BenchmarkConfigError, SolverError
from src.config.settings import settings
from src.model.pomdp_parser import load_pomdp
from src.sampling.belief_sampling import SamplingKind
from src.solver.pbvi_solver import solve
from src.solver.run_metrics import RunStatus
from src.solver.solver_config import EngineKind, SolverConfig

SUMMARY_COLUMNS = [
    "problem",
    "horizon",
    "strategy",
    "engine",
    "seed",
    "lb",
    "ub",
    "gap",
    "wall_seconds",
    "sawtooth_count",
    "status",
]
CELL_KEYS = ["problem", "horizon", "strategy", "engine"]
COMPARISON_COLUMNS = [
    "problem",
    "horizon",
    "strategy",
    "seed",
    "sawtooth_gap",
    "sawtooth_seconds",
    "gpucb_time_to_gap",
    "time_reduction_pct",
    "compared_iterations",
    "sawtooth_reduction_pct",
]
FLOAT_FORMAT = "%.6g"
NA_STATUS = "NA"

# Spec-file keys and the BenchmarkSpec field each one fills.
_SPEC_KEYS = {
    "problem": "problems",
    "problems": "problems",
    "horizon": "horizons",
    "horizons": "horizons",
    "strategy": "strategies",
    "strategies": "strategies",
    "engine": "engines",
    "engines": "engines",
    "seed": "seeds",
    "seeds": "seeds",
    "time_limit": "time_limit",
    "output_dir": "output_dir",
    "jobs": "jobs",
    "max_iterations": "max_iterations",
}
_SCALAR_FIELDS = {"time_limit", "output_dir", "jobs", "max_iterations"}


class BenchmarkSpec(BaseModel):
    """Solver matrix: problems × horizons × strategies × engines × seeds."""
    problems: List[Path] = Field(min_length=1)
    horizons: List[int] = Field(min_length=1)
    strategies: List[SamplingKind] = Field(default_factory=lambda: [SamplingKind.MAX_GAP], min_length=1)
    engines: List[EngineKind] = Field(
        default_factory=lambda: [EngineKind.SAWTOOTH, EngineKind.GP_UCB], min_length=1
    )
    seeds: List[int] = Field(min_length=1)
    time_limit: float = Field(default_factory=lambda: settings.time_limit, gt=0)
    output_dir: Path = Field(default_factory=lambda: Path(settings.results_dir))
    jobs: int = Field(default_factory=lambda: settings.jobs, ge=1)
    max_iterations: Optional[int] = Field(default=None, ge=1)

    def cells(self) -> List["BenchmarkCell"]:
        return [
            BenchmarkCell(problem, horizon, strategy, engine, seed, self.time_limit, self.max_iterations)
            for problem in self.problems
            for horizon in self.horizons
            for strategy in self.strategies
            for engine in self.engines
            for seed in self.seeds
        ]


@dataclass(frozen=True)
class BenchmarkCell:
    problem: Path
    horizon: int
    strategy: SamplingKind
    engine: EngineKind
    seed: int
    time_limit: float
    max_iterations: Optional[int] = None

    @property
    def trace_name(self) -> str:
        return f"{self.problem.stem}_h{self.horizon}_{self.strategy.value}_{self.engine.value}_s{self.seed}.csv"


def _split_values(raw: str) -> List[str]:
    return [part.strip() for part in raw.split(",") if part.strip()]


def load_benchmark_spec(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> BenchmarkSpec:
    """Read a flat key=value spec file; repeated keys accumulate into lists.

    List keys also accept comma-separated values. Entries in `overrides`
    (already typed, e.g. from command-line flags) replace the file's values.
    """
    path = Path(path)
    if not path.is_file():
        raise BenchmarkConfigError(f"benchmark spec {path} not found")

    collected: Dict[str, List[str]] = {}
    with open(path, "r", encoding="utf-8") as stream:
        for binding in parse_stream(stream):
            if binding.error:
                raise BenchmarkConfigError(f"{path}: cannot parse line {binding.original.line}: {binding.original.string!r}")
            if binding.key is None:
                continue
            field_name = _SPEC_KEYS.get(binding.key.strip().lower())
            if field_name is None:
                raise BenchmarkConfigError(f"{path}: unknown key {binding.key!r}")
            collected.setdefault(field_name, []).extend(_split_values(binding.value or ""))

    values: Dict[str, Any] = {}
    for field_name, items in collected.items():
        if field_name in _SCALAR_FIELDS:
            if len(items) != 1:
                raise BenchmarkConfigError(f"{path}: {field_name} takes one value, got {items}")
            values[field_name] = items[0]
        else:
            values[field_name] = items
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})

    try:
        spec = BenchmarkSpec(**values)
    except ValidationError as e:
        raise BenchmarkConfigError(f"{path}: {e}") from e
    logger.info(f"Loaded benchmark spec {path}: {len(spec.cells())} cells")
    return spec


def write_csv_atomic(frame: pd.DataFrame, path: Path):
    """Write a CSV next to its destination, then move it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    frame.to_csv(temporary, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")
    os.replace(temporary, path)


def run_cell(cell: BenchmarkCell, output_dir: Path) -> Tuple[Dict[str, Any], Optional[pd.DataFrame]]:
    """Solve one matrix cell, write its trace and return (summary row, trace)."""
    logger.info(
        f"Cell {cell.problem.stem} h={cell.horizon} {cell.strategy.value}/{cell.engine.value} seed={cell.seed}"
    )
    row = {
        "problem": cell.problem.stem,
        "horizon": cell.horizon,
        "strategy": cell.strategy.value,
        "engine": cell.engine.value,
        "seed": cell.seed,
    }
    model = load_pomdp(cell.problem, horizon=cell.horizon)
    config = SolverConfig.from_settings(
        strategy=cell.strategy,
        ub_engine=cell.engine,
        seed=cell.seed,
        time_limit=cell.time_limit,
        max_iterations=cell.max_iterations,
    )
    try:
        result = solve(model, config)
    except SolverError as e:
        logger.error(f"Cell {cell.trace_name} failed: {e}")
        row.update(lb=math.nan, ub=math.nan, gap=math.nan, wall_seconds=math.nan, sawtooth_count=0, status="error")
        return row, None

    metrics = result.metrics
    final = metrics.final
    status = NA_STATUS if metrics.status == RunStatus.GRID_TOO_LARGE else metrics.status.value
    row.update(
        lb=result.lb,
        ub=result.ub,
        gap=result.gap,
        wall_seconds=final.wall_seconds if final else math.nan,
        sawtooth_count=final.sawtooth_count if final else 0,
        status=status,
    )
    if not final:
        return row, None
    trace = metrics.to_frame()
    write_csv_atomic(trace, output_dir / "traces" / cell.trace_name)
    return row, trace


def time_to_gap(trace: pd.DataFrame, target: float) -> Optional[float]:
    """First wall-clock time at which the trace's gap is at most target."""
    if trace.empty:
        raise ValueError("trace is empty")
    reached = trace.loc[trace["gap"] <= target, "wall_seconds"]
    return None if reached.empty else float(reached.iloc[0])


def aggregate_results(summary: pd.DataFrame) -> pd.DataFrame:
    """Mean, standard deviation and worst gap of every cell across seeds."""
    grouped = summary.groupby(CELL_KEYS, sort=False)
    aggregate = grouped.agg(
        runs=("seed", "count"),
        mean_lb=("lb", "mean"),
        mean_ub=("ub", "mean"),
        mean_gap=("gap", "mean"),
        std_gap=("gap", "std"),
        worst_gap=("gap", "max"),
        mean_sawtooth_count=("sawtooth_count", "mean"),
        mean_wall_seconds=("wall_seconds", "mean"),
        na_count=("status", lambda status: int((status == NA_STATUS).sum())),
    )
    return aggregate.reset_index()


def compare_engines(summary: pd.DataFrame, traces: Dict[Tuple, pd.DataFrame]) -> pd.DataFrame:
    """Time and sawtooth savings of gp-ucb relative to sawtooth, per seed.

    `traces` is keyed by (problem, horizon, strategy, engine, seed). The time
    saving compares gp-ucb's time to reach sawtooth's terminal gap with
    sawtooth's terminal time; the sawtooth saving compares cumulative
    projection counts at the last iteration both runs completed.
    """
    rows = []
    keys = ["problem", "horizon", "strategy", "seed"]
    for (problem, horizon, strategy, seed), _ in summary.groupby(keys, sort=False):
        base = (problem, horizon, strategy)
        sawtooth = traces.get(base + (EngineKind.SAWTOOTH.value, seed))
        gp = traces.get(base + (EngineKind.GP_UCB.value, seed))
        if sawtooth is None or gp is None or sawtooth.empty or gp.empty:
            continue

        sawtooth_gap = float(sawtooth["gap"].iloc[-1])
        sawtooth_time = float(sawtooth["wall_seconds"].iloc[-1])
        gp_time = time_to_gap(gp, sawtooth_gap)
        time_reduction = math.nan
        if gp_time is not None and sawtooth_time > 0:
            time_reduction = 100.0 * (1.0 - gp_time / sawtooth_time)

        common = min(len(sawtooth), len(gp)) - 1
        sawtooth_calls = float(sawtooth["sawtooth_count"].iloc[common])
        gp_calls = float(gp["sawtooth_count"].iloc[common])
        sawtooth_reduction = 100.0 * (1.0 - gp_calls / sawtooth_calls) if sawtooth_calls > 0 else math.nan

        rows.append({
            "problem": problem,
            "horizon": horizon,
            "strategy": strategy,
            "seed": seed,
            "sawtooth_gap": sawtooth_gap,
            "sawtooth_seconds": sawtooth_time,
            "gpucb_time_to_gap": gp_time if gp_time is not None else math.nan,
            "time_reduction_pct": time_reduction,
            "compared_iterations": common + 1,
            "sawtooth_reduction_pct": sawtooth_reduction,
        })
    return pd.DataFrame(rows, columns=COMPARISON_COLUMNS)


def _run_cells(cells: List[BenchmarkCell], output_dir: Path, jobs: int) -> Iterable[Tuple[Dict[str, Any], Optional[pd.DataFrame]]]:
    if jobs <= 1:
        for cell in cells:
            yield run_cell(cell, output_dir)
        return
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        yield from executor.map(run_cell, cells, [output_dir] * len(cells))


def run_benchmark(
    spec: BenchmarkSpec, on_cell_done: Optional[Callable[[Dict[str, Any]], None]] = None
) -> Dict[str, Path]:
    """Run every cell and write summary, aggregate, comparison and traces."""
    for problem in spec.problems:
        if not Path(problem).is_file():
            raise BenchmarkConfigError(f"problem file {problem} not found")
        load_pomdp(problem, horizon=1)

    output_dir = Path(spec.output_dir)
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise BenchmarkConfigError(f"cannot create output directory {output_dir}: {e}") from e

    cells = spec.cells()
    rows = []
    traces = {}
    for cell, (row, trace) in zip(cells, _run_cells(cells, output_dir, spec.jobs)):
        rows.append(row)
        if trace is not None:
            key = (cell.problem.stem, cell.horizon, cell.strategy.value, cell.engine.value, cell.seed)
            traces[key] = trace
        if on_cell_done is not None:
            on_cell_done(row)

    summary = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    outputs = {
        "summary": output_dir / "summary.csv",
        "aggregate": output_dir / "aggregate.csv",
        "comparison": output_dir / "comparison.csv",
    }
    write_csv_atomic(summary, outputs["summary"])
    write_csv_atomic(aggregate_results(summary), outputs["aggregate"])
    write_csv_atomic(compare_engines(summary, traces), outputs["comparison"])
    logger.info(f"Benchmark finished: {len(rows)} runs written to {output_dir}")
    return outputs
