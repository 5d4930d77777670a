#!/usr/bin/env python3
"""
Finite-horizon POMDP solver
Point-based value iteration with sawtooth or GP-UCB upper bounds, an exact
enumeration oracle and a benchmark harness.
"""

import os
import sys
import argparse
from pathlib import Path
from loguru import logger
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn

# Add src to path
sys.path.append(str(Path(__file__).parent / "src"))

from src.config.settings import settings
from src.common.exceptions import (
    BenchmarkConfigError,
    ModelValidationError,
    PomdpParseError,
    PomdpToolkitError,
)
from src.model.pomdp_parser import load_pomdp
from src.bounds.exact_oracle import exact_value, exact_values_at
from src.benchmark.benchmark_harness import load_benchmark_spec, run_benchmark, write_csv_atomic
from src.sampling.belief_sampling import SamplingKind
from src.solver.pbvi_solver import solve
from src.solver.solver_config import EngineKind, SolverConfig

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_SOLVER_ERROR = 2


def setup_logging():
    """Setup logging configuration."""
    # Remove default logger
    logger.remove()

    # Add console logging
    logger.add(
        sys.stdout,
        level=settings.log_level,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
    )

    # Add file logging
    os.makedirs(Path(settings.log_file).parent, exist_ok=True)
    logger.add(
        settings.log_file,
        level=settings.log_level,
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
        rotation="10 MB",
        retention="7 days"
    )


def run_solve(args: argparse.Namespace, console: Console) -> int:
    """Solve one problem and print the bounds at the initial belief."""
    model = load_pomdp(args.file, horizon=args.horizon)
    overrides = {
        "strategy": SamplingKind(args.strategy),
        "ub_engine": EngineKind(args.engine),
        "seed": args.seed if args.seed is not None else settings.seed,
    }
    for name in ("rho", "eta", "nu", "time_limit", "max_iterations"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    config = SolverConfig.from_settings(**overrides)

    with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), console=console) as progress:
        progress.add_task(f"Solving {model.name} (T={model.horizon})", total=None)
        result = solve(model, config)

    table = Table(title=f"{model.name}: {config.ub_engine.value} / {config.strategy.kind.value}")
    table.add_column("Lower bound", style="cyan")
    table.add_column("Upper bound", style="cyan")
    table.add_column("Gap", style="green")
    table.add_column("Iterations", style="white")
    table.add_column("Sawtooth calls", style="white")
    table.add_column("Status", style="magenta")
    final = result.metrics.final
    table.add_row(
        f"{result.lb:.6g}",
        f"{result.ub:.6g}",
        f"{result.gap:.3g}",
        str(result.metrics.iterations),
        str(final.sawtooth_count if final else 0),
        result.metrics.status.value,
    )
    console.print(table)

    if args.out:
        out_dir = Path(args.out)
        trace_path = out_dir / f"{model.name}_h{model.horizon}_{config.strategy.kind.value}_{config.ub_engine.value}_s{config.seed}.csv"
        write_csv_atomic(result.metrics.to_frame(), trace_path)
        console.print(f"Trace written to {trace_path}")
    return EXIT_OK


def run_bench(args: argparse.Namespace, console: Console) -> int:
    """Run a benchmark spec file."""
    overrides = {
        "time_limit": args.time_limit,
        "output_dir": args.out,
        "jobs": args.jobs,
        "seeds": args.seeds,
        "horizons": args.horizons,
        "problems": args.problems,
        "strategies": args.strategies,
        "engines": args.engines,
        "max_iterations": args.max_iterations,
    }
    spec = load_benchmark_spec(args.spec_file, overrides)
    cells = spec.cells()

    with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), console=console) as progress:
        task = progress.add_task(f"Running {len(cells)} benchmark cells", total=len(cells))
        outputs = run_benchmark(spec, on_cell_done=lambda row: progress.advance(task))

    table = Table(title="Benchmark outputs")
    table.add_column("File", style="cyan")
    table.add_column("Path", style="white")
    for name, path in outputs.items():
        table.add_row(name, str(path))
    console.print(table)
    return EXIT_OK


def run_exact(args: argparse.Namespace, console: Console) -> int:
    """Print the exact optimal values at the initial belief."""
    model = load_pomdp(args.file, horizon=args.horizon)
    stages = exact_value(model, cap=args.cap if args.cap is not None else settings.exact_cap)
    values = exact_values_at(stages, model.initial_belief)

    table = Table(title=f"Exact values of {model.name} at b0")
    table.add_column("Stage", style="cyan")
    table.add_column("Vectors", style="white")
    table.add_column("Value", style="green")
    for t, (gamma, value) in enumerate(zip(stages, values)):
        table.add_row(str(t), str(len(gamma)), f"{value:.10g}")
    console.print(table)
    return EXIT_OK


def run_parse(args: argparse.Namespace, console: Console) -> int:
    """Validate a problem file and print its sizes."""
    model = load_pomdp(args.file)
    discount = "not set" if model.file_discount is None else f"{model.file_discount} (ignored)"
    console.print(Panel.fit(
        f"|S| = {model.num_states}\n|A| = {model.num_actions}\n|O| = {model.num_observations}\n"
        f"discount in file: {discount}",
        title=f"{model.name}",
        border_style="green"
    ))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Finite-horizon POMDP solver with sawtooth and GP-UCB upper bounds")
    parser.add_argument(
        "--verbose",
        action="store_true",
        help="Enable verbose logging"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    solve_parser = subparsers.add_parser("solve", help="Solve one .pomdp problem")
    solve_parser.add_argument("file", help="Cassandra .pomdp file")
    solve_parser.add_argument("--horizon", type=int, required=True, help="Number of stages T")
    solve_parser.add_argument("--strategy", choices=[kind.value for kind in SamplingKind], default=SamplingKind.MAX_GAP.value)
    solve_parser.add_argument("--engine", choices=[kind.value for kind in EngineKind], default=EngineKind.SAWTOOTH.value)
    solve_parser.add_argument("--rho", type=int, help=f"Target-gap precision (default: {settings.rho})")
    solve_parser.add_argument("--eta", type=float, help=f"UCB multiplier (default: {settings.eta})")
    solve_parser.add_argument("--nu", type=float, help=f"ALD threshold (default: {settings.nu})")
    solve_parser.add_argument("--time-limit", dest="time_limit", type=float, help=f"Seconds (default: {settings.time_limit})")
    solve_parser.add_argument("--max-iterations", dest="max_iterations", type=int, help="Iteration cap")
    solve_parser.add_argument("--seed", type=int, help=f"Random seed (default: {settings.seed})")
    solve_parser.add_argument("--out", help="Directory for the per-iteration trace CSV")
    solve_parser.set_defaults(handler=run_solve)

    bench_parser = subparsers.add_parser("bench", help="Run a benchmark spec file")
    bench_parser.add_argument("spec_file", help="key=value benchmark spec")
    bench_parser.add_argument("--time-limit", dest="time_limit", type=float, help="Override time_limit")
    bench_parser.add_argument("--out", help="Override output_dir")
    bench_parser.add_argument("--jobs", type=int, help="Cells run in parallel")
    bench_parser.add_argument("--seeds", type=int, nargs="+", help="Override seeds")
    bench_parser.add_argument("--horizons", type=int, nargs="+", help="Override horizons")
    bench_parser.add_argument("--problems", nargs="+", help="Override problem files")
    bench_parser.add_argument("--strategies", nargs="+", choices=[kind.value for kind in SamplingKind], help="Override strategies")
    bench_parser.add_argument("--engines", nargs="+", choices=[kind.value for kind in EngineKind], help="Override engines")
    bench_parser.add_argument("--max-iterations", dest="max_iterations", type=int, help="Override max_iterations")
    bench_parser.set_defaults(handler=run_bench)

    exact_parser = subparsers.add_parser("exact", help="Exact values by full enumeration")
    exact_parser.add_argument("file", help="Cassandra .pomdp file")
    exact_parser.add_argument("--horizon", type=int, required=True, help="Number of stages T")
    exact_parser.add_argument("--cap", type=float, help=f"Enumeration cap (default: {settings.exact_cap})")
    exact_parser.set_defaults(handler=run_exact)

    parse_parser = subparsers.add_parser("parse", help="Validate a .pomdp file")
    parse_parser.add_argument("file", help="Cassandra .pomdp file")
    parse_parser.set_defaults(handler=run_parse)
    return parser


def main(argv=None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)

    # Setup logging
    if args.verbose:
        settings.log_level = "DEBUG"
    setup_logging()

    console = Console()
    try:
        return args.handler(args, console)
    except (PomdpParseError, ModelValidationError, BenchmarkConfigError, ValidationError, OSError) as e:
        logger.error(f"Invalid input: {e}")
        console.print(f"[red]Error:[/red] {e}")
        return EXIT_CONFIG_ERROR
    except PomdpToolkitError as e:
        logger.error(f"Solver error: {e}")
        console.print(f"[red]Solver error:[/red] {e}")
        return EXIT_SOLVER_ERROR


if __name__ == "__main__":
    sys.exit(main())
