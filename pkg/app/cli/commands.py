"""CLI commands for the alternating sparse channel estimator."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING, Any

import click
import msgspec
import structlog
from rich import get_console

from app.lib.exceptions import ApplicationError

if TYPE_CHECKING:
    from rich.console import Console

    from app.schemas import BenchmarkRecord, MetricRecord, SelfTestCheck, SolveResult


logger = structlog.get_logger()


@click.group(name="app", invoke_without_command=False, help="Sparse channel estimation with a dynamic grid.")
@click.version_option(message="%(version)s", package_name="ae-sc-vbi")
def app_group() -> None:
    """Sparse channel estimation with a dynamic grid."""


def _load_spec(config: Path | None) -> Any:
    from app.schemas import ExperimentSpec
    from app.services.harness import load_experiment_spec

    return load_experiment_spec(config) if config is not None else ExperimentSpec()


def _solve_summary(result: SolveResult, nmse: float | None) -> dict[str, Any]:
    return {
        "converged": result.converged,
        "iterations": result.iterations,
        "support": result.support.indices.tolist(),
        "kappa_hat": result.kappa_hat,
        "free_energy": result.trace[-1].free_energy if result.trace else None,
        "nmse_db": nmse,
    }


@click.command(name="solve", help="Generate one channel instance and estimate it.")
@click.option("--config", "config", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="Experiment JSON; its first cell defines the instance")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Instance seed (defaults to EXPERIMENT_SEED)")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Write the full result as JSON")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="BLAS threads (defaults to EXPERIMENT_THREADS)")
def solve_cmd(config: Path | None, seed: int | None, out: Path | None, threads: int | None) -> None:
    """Generate one channel instance and estimate it."""
    from threadpoolctl import threadpool_limits

    from app.lib.settings import get_settings
    from app.schemas import SolverConfig
    from app.services.ae import AlternatingEstimator
    from app.services.harness import build_instance, build_support_prior
    from app.services.model import nmse_db
    from app.services.prior import default_hyperparams
    from app.utils.serialization import to_json

    console = get_console()
    try:
        spec = _load_spec(config)
        seed = get_settings().experiment.SEED if seed is None else seed
        model, truth = build_instance(
            nx=spec.nx,
            ny=spec.ny,
            n1=spec.n1,
            n2=spec.n2,
            compression_ratio=spec.compression_ratios[0],
            k_paths=spec.k_paths[0],
            snr_db=spec.snr_db[0],
            seed=seed,
            off_grid=spec.off_grid,
            clustered_truth=spec.clustered_truth,
            mean_run=spec.mean_run,
            noise_free=spec.noise_free,
        )
        solver = msgspec.structs.replace(
            spec.solver or SolverConfig.from_settings(),
            algorithm=spec.algorithms[0],
            grid_refinement_enabled=spec.grid_refinement[0],
            rng_seed=seed,
        )
        estimator = AlternatingEstimator(
            default_hyperparams(model.n),
            build_support_prior(spec.prior, spec.n1, spec.n2, spec.k_paths[0], spec.mean_run),
            solver,
        )
        console.rule("[bold blue]Alternating Estimation", style="blue", align="left")
        workers = threads or get_settings().experiment.THREADS
        with console.status("[bold yellow]Solving...", spinner="dots"), threadpool_limits(limits=workers, user_api="blas"):
            result = estimator.solve(model, truth)
        h_hat = result.h_hat if result.h_hat is not None else result.x_hat
        summary = _solve_summary(result, nmse_db(h_hat, truth.h))
        console.print_json(to_json(summary).decode())
        if out is not None:
            try:
                out.parent.mkdir(parents=True, exist_ok=True)
                out.write_bytes(to_json(result))
            except OSError as e:
                from app.lib.exceptions import ExperimentIOError

                raise ExperimentIOError(out, detail=f"Could not write result ({e.strerror})") from e
            console.print(f"[dim]Result written to {out}[/dim]")
    except ApplicationError as e:
        console.print(f"[red]✗[/red] Solve failed: [red]{e.detail}[/red]")
        raise click.ClickException(str(e)) from e


def _display_final_records(console: Console, rows: list[MetricRecord]) -> None:
    from rich.table import Table

    finals = [r for r in rows if r.kind == "final"]
    if not finals:
        console.print("[yellow]No cell finished[/yellow]")
        return
    table = Table(show_header=True, header_style="bold blue", expand=True)
    table.add_column("Seed", justify="right")
    table.add_column("SNR (dB)", justify="right")
    table.add_column("Algorithm", style="cyan")
    table.add_column("CR", justify="right")
    table.add_column("K", justify="right")
    table.add_column("Grid")
    table.add_column("Iterations", justify="right")
    table.add_column("NMSE (dB)", justify="right", style="bold")
    for r in finals:
        table.add_row(
            str(r.seed),
            f"{r.snr_db:g}",
            r.algorithm,
            str(r.compression_ratio),
            str(r.k_paths),
            "✓" if r.grid_refinement else "✗",
            str(r.iteration),
            f"{r.nmse_db:.2f}",
        )
    console.print(table)


@click.command(name="experiment", help="Run every cell of an experiment spec and write a CSV.")
@click.option("--config", "config", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True,
              help="Experiment JSON")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="CSV output path")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker processes (defaults to EXPERIMENT_THREADS)")
def experiment_cmd(config: Path, out: Path | None, threads: int | None) -> None:
    """Run every cell of an experiment spec and write a CSV."""
    from app.lib.settings import get_settings
    from app.services.harness import run_experiment

    console = get_console()
    try:
        spec = _load_spec(config)
        workers = threads or get_settings().experiment.THREADS
        console.rule(f"[bold blue]Experiment: {spec.scenario}", style="blue", align="left")
        with console.status("[bold yellow]Running cells...", spinner="dots"):
            rows = run_experiment(spec, workers=workers, out=out)
        _display_final_records(console, rows)
        console.print(f"[bold green]Wrote {len(rows)} rows[/bold green]")
    except ApplicationError as e:
        console.print(f"[red]✗[/red] Experiment failed: [red]{e.detail}[/red]")
        raise click.ClickException(str(e)) from e


def _display_benchmark(console: Console, records: list[BenchmarkRecord], slopes: dict[str, float]) -> None:
    from rich.table import Table

    table = Table(show_header=True, header_style="bold blue", expand=True)
    table.add_column("Algorithm", style="cyan")
    table.add_column("N", justify="right")
    table.add_column("M", justify="right")
    table.add_column("|S|", justify="right")
    table.add_column("Median (ms)", justify="right", style="bold")
    for r in records:
        table.add_row(r.algorithm, str(r.n), str(r.m), str(r.support_size), f"{r.median_ms:.3f}")
    console.print(table)
    for key, slope in sorted(slopes.items()):
        console.print(f"  • log-log slope [cyan]{key}[/cyan]: [bold]{slope:.2f}[/bold]")


@click.command(name="bench", help="Time SC-VBI rounds against the exact IC-VBI solve.")
@click.option("--n", "n_list", type=click.IntRange(min=2), multiple=True, default=(128, 256, 512, 1024), show_default=True,
              help="Signal dimensions")
@click.option("--m", "m_list", type=click.IntRange(min=1), multiple=True, default=(32,), show_default=True,
              help="Measurement counts")
@click.option("--repeats", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--support-size", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="CSV output path")
def bench_cmd(
    n_list: tuple[int, ...], m_list: tuple[int, ...], repeats: int, support_size: int, seed: int, out: Path | None
) -> None:
    """Time SC-VBI rounds against the exact IC-VBI solve."""
    from app.services.harness import run_scaling_benchmark

    console = get_console()
    try:
        console.rule("[bold blue]Scaling Benchmark", style="blue", align="left")
        with console.status("[bold yellow]Timing...", spinner="dots"):
            records, slopes = run_scaling_benchmark(list(n_list), list(m_list), repeats, support_size, out=out, seed=seed)
        _display_benchmark(console, records, slopes)
    except ApplicationError as e:
        console.print(f"[red]✗[/red] Benchmark failed: [red]{e.detail}[/red]")
        raise click.ClickException(str(e)) from e


def _display_checks(console: Console, checks: list[SelfTestCheck]) -> None:
    from rich.table import Table

    table = Table(show_header=True, header_style="bold blue", expand=True)
    table.add_column("Check", style="cyan", ratio=3)
    table.add_column("Deviation", justify="right", ratio=2)
    table.add_column("Tolerance", justify="right", ratio=2)
    table.add_column("Status", ratio=1)
    for c in checks:
        status = "[green]✓[/green]" if c.passed else "[red]✗[/red]"
        table.add_row(c.name, f"{c.value:.3e}", f"{c.tolerance:.0e}", status)
    console.print(table)


@click.command(name="selftest", help="Run the built-in oracle and property checks.")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Write the checks as JSON")
def selftest_cmd(seed: int, out: Path | None) -> None:
    """Run the built-in oracle and property checks."""
    from app.services.harness import run_selftest
    from app.utils.serialization import to_json

    console = get_console()
    try:
        console.rule("[bold blue]Self-test", style="blue", align="left")
        with console.status("[bold yellow]Checking...", spinner="dots"):
            checks = run_selftest(seed)
    except ApplicationError as e:
        console.print(f"[red]✗[/red] Self-test aborted: [red]{e.detail}[/red]")
        raise click.ClickException(str(e)) from e
    _display_checks(console, checks)
    if out is not None:
        try:
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_bytes(to_json(checks))
        except OSError as e:
            from app.lib.exceptions import ExperimentIOError

            err = ExperimentIOError(out, detail=f"Could not write checks ({e.strerror})")
            console.print(f"[red]✗[/red] Self-test output failed: [red]{err.detail}[/red]")
            raise click.ClickException(str(err)) from err
    failed = [c.name for c in checks if not c.passed]
    if failed:
        msg = f"{len(failed)} check(s) failed: {', '.join(failed)}"
        raise click.ClickException(msg)
    console.print(f"[bold green]All {len(checks)} checks passed[/bold green]")


@click.command(name="schema", help="Print the JSON schema of experiment configuration files.")
def schema_cmd() -> None:
    """Print the JSON schema of experiment configuration files."""
    from app.schemas import ExperimentSpec

    get_console().print_json(msgspec.json.encode(msgspec.json.schema(ExperimentSpec)).decode())


app_group.add_command(solve_cmd)
app_group.add_command(experiment_cmd)
app_group.add_command(bench_cmd)
app_group.add_command(selftest_cmd)
app_group.add_command(schema_cmd)
