"""Experiment harness: scenario generation, Monte Carlo runs, scaling benchmarks and self-checks."""

from __future__ import annotations

import csv
import itertools
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import TYPE_CHECKING, Any

import msgspec
import numpy as np
import structlog

from app.lib.exceptions import ConfigurationError, ExperimentIOError, InputError, SolveAborted
from app.lib.settings import get_settings
from app.schemas import (
    BenchmarkRecord,
    BernoulliMessage,
    ExperimentSpec,
    GridLikelihoodContext,
    IIDSupportPrior,
    MetricRecord,
    SelfTestCheck,
    SolverConfig,
    SupportEstimate,
)
from app.services.ae import AlternatingEstimator, omp_initial_support
from app.services.grid import grid_gradient, grid_likelihood
from app.services.model import (
    generate_channel,
    generate_clustered_channel,
    generate_combiner,
    grid_with_truth,
    mimo_observation_model,
    nmse_db,
    noise_precision_from_snr,
    observe,
    uniform_grid,
)
from app.services.prior import default_hyperparams, markov2d_from_sparsity
from app.services.scvbi import (
    QuadraticSurrogate,
    compute_moments,
    exact_icvbi_mean,
    extrinsic_from_scvbi,
    free_energy,
    initial_state,
    scvbi_round,
    subspace_init,
)
from app.services.ssi import brute_force_marginals, output_message, propagate_markov2d, ssi_markov2d

if TYPE_CHECKING:
    from collections.abc import Sequence

    from app.schemas import ChannelTruth, ObservationModel, SupportPrior
    from app.schemas.solver import Algorithm

__all__ = (
    "build_instance",
    "build_support_prior",
    "load_experiment_spec",
    "nmse_db",
    "read_metric_records",
    "run_experiment",
    "run_scaling_benchmark",
    "run_selftest",
    "write_csv",
)

logger = structlog.get_logger()

Cell = tuple[int, float, "Algorithm", int, int, bool]


def load_experiment_spec(path: Path | str) -> ExperimentSpec:
    """Decode a JSON experiment file into an :class:`ExperimentSpec`.

    Raises:
        ExperimentIOError: If the file cannot be read.
        ConfigurationError: If the contents do not match the schema.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ExperimentIOError(path, detail=f"Could not read experiment config ({e.strerror})") from e
    try:
        return msgspec.json.decode(raw, type=ExperimentSpec)
    except msgspec.ValidationError as e:
        msg = f"Invalid experiment config {path}: {e}"
        raise ConfigurationError(msg) from e
    except msgspec.DecodeError as e:
        msg = f"Malformed experiment config {path}: {e}"
        raise ConfigurationError(msg) from e


def build_support_prior(
    kind: str, n1: int, n2: int, expected_paths: float, mean_run: float = 3.0
) -> SupportPrior:
    """I.i.d. or 2D Markov support prior with activity ``expected_paths / Q``."""
    q = n1 * n2
    lam = min(max(expected_paths / q, 1e-6), 0.5)
    if kind == "iid":
        return IIDSupportPrior(lam=np.full(q, lam))
    if kind == "markov2d":
        return markov2d_from_sparsity(lam, mean_run, n1, n2)
    msg = f"Unknown support prior {kind!r}"
    raise ConfigurationError(msg)


def build_instance(
    *,
    nx: int,
    ny: int,
    n1: int,
    n2: int,
    compression_ratio: int,
    k_paths: int,
    snr_db: float,
    seed: int,
    off_grid: bool = True,
    clustered_truth: bool = False,
    mean_run: float = 3.0,
    noise_free: bool = False,
) -> tuple[ObservationModel, ChannelTruth]:
    """Generate one MIMO channel-estimation instance, fully determined by ``seed``.

    The measurements come from the true (possibly off-grid) path angles while the returned
    model carries the uniform grid the estimator starts from.

    Raises:
        InputError: If the compression ratio does not split the array evenly.
    """
    nr = nx * ny
    if compression_ratio < 1 or nr % compression_ratio:
        msg = f"compression ratio {compression_ratio} must divide nr={nr}"
        raise InputError(msg)
    rng = np.random.default_rng(seed)
    grid = uniform_grid(n1, n2)
    combiner = generate_combiner(nr, nr // compression_ratio, int(rng.integers(2**32)))
    if clustered_truth:
        truth_prior = markov2d_from_sparsity(min(k_paths / grid.q, 0.5), mean_run, n1, n2)
        truth = generate_clustered_channel(truth_prior, grid, off_grid, rng, nx, ny)
    else:
        truth = generate_channel(k_paths, grid, off_grid, rng, nx, ny)
    exact = mimo_observation_model(grid_with_truth(grid, truth), combiner, nx, ny)
    kappa = noise_precision_from_snr(combiner.matrix @ truth.h, snr_db)
    y = observe(exact, truth.x_true, kappa, rng, noise_free=noise_free)
    model = mimo_observation_model(grid, combiner, nx, ny, y=y)
    return model, msgspec.structs.replace(truth, kappa=kappa)


def _cells(spec: ExperimentSpec) -> list[Cell]:
    return list(
        itertools.product(
            spec.seeds,
            spec.snr_db,
            spec.algorithms,
            spec.compression_ratios,
            spec.k_paths,
            spec.grid_refinement,
        )
    )


def _run_cell(spec: ExperimentSpec, cell: Cell) -> list[MetricRecord]:
    seed, snr, algorithm, ratio, k_paths, refinement = cell
    model, truth = build_instance(
        nx=spec.nx,
        ny=spec.ny,
        n1=spec.n1,
        n2=spec.n2,
        compression_ratio=ratio,
        k_paths=k_paths,
        snr_db=snr,
        seed=seed,
        off_grid=spec.off_grid,
        clustered_truth=spec.clustered_truth,
        mean_run=spec.mean_run,
        noise_free=spec.noise_free,
    )
    base = spec.solver or SolverConfig.from_settings()
    config = msgspec.structs.replace(base, algorithm=algorithm, grid_refinement_enabled=refinement, rng_seed=seed)
    estimator = AlternatingEstimator(
        default_hyperparams(model.n),
        build_support_prior(spec.prior, spec.n1, spec.n2, k_paths, spec.mean_run),
        config,
    )
    common: dict[str, Any] = {
        "scenario": spec.scenario,
        "seed": seed,
        "algorithm": algorithm,
        "snr_db": snr,
        "compression_ratio": ratio,
        "k_paths": k_paths,
        "prior": spec.prior,
        "grid_refinement": refinement,
    }
    try:
        result = estimator.solve(model, truth)
    except SolveAborted as e:
        logger.warning("Experiment cell aborted", cell=cell, error=e.detail, iterations=len(e.partial_trace))
        trace, final = e.partial_trace, None
    else:
        trace, final = result.trace, result
    rows = [
        MetricRecord(
            kind="iteration",
            iteration=rec.iteration,
            nmse_db=rec.nmse_db if rec.nmse_db is not None else float("nan"),
            free_energy=rec.free_energy,
            support_size=rec.support_size,
            wall_ms=rec.wall_ms,
            **common,
        )
        for rec in trace
    ]
    if final is not None:
        h_hat = final.h_hat if final.h_hat is not None else final.x_hat
        rows.append(
            MetricRecord(
                kind="final",
                iteration=final.iterations,
                nmse_db=nmse_db(h_hat, truth.h),
                free_energy=final.trace[-1].free_energy,
                support_size=final.support.size,
                wall_ms=sum(rec.wall_ms for rec in final.trace),
                **common,
            )
        )
    return rows


def _csv_value(value: Any) -> Any:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    return value


def write_csv(path: Path | str, rows: Sequence[msgspec.Struct], fieldnames: Sequence[str]) -> Path:
    """Write rows as an RFC-4180 CSV with a header line.

    Raises:
        ExperimentIOError: If the file cannot be written.
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
            writer.writeheader()
            for row in rows:
                writer.writerow({name: _csv_value(getattr(row, name)) for name in fieldnames})
    except OSError as e:
        raise ExperimentIOError(target, detail=f"Could not write results ({e.strerror})") from e
    return target


def run_experiment(spec: ExperimentSpec, workers: int = 1, out: Path | str | None = None) -> list[MetricRecord]:
    """Run every cell of ``spec`` and write the metric rows to CSV.

    Cells are independent and may run in a process pool; rows are always emitted in cell
    order, so output is identical for any worker count.

    Args:
        spec: Experiment description.
        workers: Worker processes; 1 runs in-process.
        out: CSV path; defaults to ``spec.output`` or ``<OUTPUT_DIR>/<scenario>.csv``.

    Returns:
        All metric rows in output order.

    Raises:
        ConfigurationError: If the spec has no cells.
        ExperimentIOError: If the CSV cannot be written.
    """
    cells = _cells(spec)
    if not cells:
        msg = "experiment spec has no cells to run"
        raise ConfigurationError(msg)
    logger.info("Experiment started", scenario=spec.scenario, cells=len(cells), workers=workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            chunks = list(executor.map(_run_cell, itertools.repeat(spec), cells))
    else:
        chunks = [_run_cell(spec, cell) for cell in cells]
    rows = [row for chunk in chunks for row in chunk]
    target = out or spec.output or get_settings().experiment.OUTPUT_DIR / f"{spec.scenario}.csv"
    write_csv(target, rows, MetricRecord.__struct_fields__)
    logger.info("Experiment finished", scenario=spec.scenario, rows=len(rows), path=str(target))
    return rows


def _parse_field(raw: str, type_: Any) -> Any:
    if type_ is bool:
        return raw.strip().lower() == "true"
    if type_ is int:
        return int(raw)
    if type_ is float:
        return float(raw)
    return raw


def read_metric_records(path: Path | str) -> list[MetricRecord]:
    """Parse a results CSV written by :func:`run_experiment`.

    Raises:
        ExperimentIOError: If the file cannot be read or its header does not match.
        ConfigurationError: If a row does not match the record schema.
    """
    fields = msgspec.structs.fields(MetricRecord)
    names = [f.name for f in fields]
    try:
        with Path(path).open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != names:
                raise ExperimentIOError(path, detail=f"Unexpected CSV header {reader.fieldnames}")
            raw_rows = list(reader)
    except OSError as e:
        raise ExperimentIOError(path, detail=f"Could not read results ({e.strerror})") from e
    records = []
    for raw in raw_rows:
        try:
            values = {f.name: _parse_field(raw[f.name], f.type) for f in fields}
            records.append(msgspec.convert(values, MetricRecord))
        except (ValueError, msgspec.ValidationError) as e:
            msg = f"Invalid results row in {path}: {e}"
            raise ConfigurationError(msg) from e
    return records


def _random_problem(n: int, m: int, support_size: int, rng: np.random.Generator) -> ObservationModel:
    from app.schemas import ObservationModel

    sensing = (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2 * m)
    x = np.zeros(n, dtype=np.complex128)
    support = rng.choice(n, size=support_size, replace=False)
    x[support] = (rng.standard_normal(support_size) + 1j * rng.standard_normal(support_size)) / np.sqrt(2)
    y = sensing @ x + 0.05 * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    return ObservationModel(sensing=sensing, y=y)


def _median_ms(fn: Any, repeats: int) -> float:
    timings = []
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        timings.append((time.perf_counter() - started) * 1000.0)
    return statistics.median(timings)


def run_scaling_benchmark(
    n_list: Sequence[int],
    m_list: Sequence[int],
    repeats: int,
    support_size: int,
    out: Path | str | None = None,
    seed: int = 0,
) -> tuple[list[BenchmarkRecord], dict[str, float]]:
    """Time one SC-VBI round and one exact IC-VBI mean solve per problem size.

    SC-VBI is also timed with twice the support size, which should roughly scale its
    subspace-solve share cubically while leaving the ``N`` dependence linear.

    Returns:
        The timing rows and the fitted log-log slope of median time against ``N`` per
        algorithm and ``M`` (keys like ``"sc_vbi@m=32"``).

    Raises:
        InputError: If a size list is empty, ``repeats < 1`` or the support exceeds ``N``.
    """
    if not n_list or not m_list or repeats < 1:
        msg = "benchmark needs at least one N, one M and one repeat"
        raise InputError(msg)
    rng = np.random.default_rng(seed)
    records: list[BenchmarkRecord] = []
    for m, n in itertools.product(m_list, n_list):
        if 2 * support_size > n:
            msg = f"support size {support_size} too large for N={n}"
            raise InputError(msg)
        model = _random_problem(n, m, support_size, rng)
        hyper = default_hyperparams(n)
        prior_msg = BernoulliMessage(active_prob=np.full(n, support_size / n))
        state = initial_state(model, hyper, prior_msg)
        config = SolverConfig()

        for label, size in (("sc_vbi", support_size), ("sc_vbi_2s", 2 * support_size)):
            support = SupportEstimate(indices=np.sort(rng.choice(n, size=size, replace=False)), threshold=0.0)

            def run_round(support: SupportEstimate = support) -> None:
                scvbi_round(state, model, hyper, prior_msg, config.b_x, config.support_policy, support)

            records.append(
                BenchmarkRecord(
                    algorithm=label, n=n, m=m, support_size=size, median_ms=_median_ms(run_round, repeats), repeats=repeats
                )
            )

        surrogate = QuadraticSurrogate.from_moments(model, compute_moments(state))
        records.append(
            BenchmarkRecord(
                algorithm="ic_vbi_oracle",
                n=n,
                m=m,
                support_size=n,
                median_ms=_median_ms(lambda s=surrogate, mod=model: exact_icvbi_mean(s, mod.y), repeats),
                repeats=repeats,
            )
        )
        logger.debug("Benchmark size complete", n=n, m=m)

    slopes: dict[str, float] = {}
    if len(set(n_list)) > 1:
        for (algorithm, m), group in itertools.groupby(
            sorted(records, key=lambda r: (r.algorithm, r.m, r.n)), key=lambda r: (r.algorithm, r.m)
        ):
            rows = list(group)
            ns = np.log([r.n for r in rows])
            ts = np.log([max(r.median_ms, 1e-6) for r in rows])
            slopes[f"{algorithm}@m={m}"] = float(np.polyfit(ns, ts, 1)[0])
    if out is not None:
        write_csv(out, records, BenchmarkRecord.__struct_fields__)
    return records, slopes


def _check(name: str, value: float, tolerance: float) -> SelfTestCheck:
    return SelfTestCheck(name=name, value=float(value), tolerance=tolerance, passed=bool(abs(value) <= tolerance))


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.finfo(float).tiny))


def run_selftest(seed: int = 0) -> list[SelfTestCheck]:
    """Deterministic oracle and property checks over small instances.

    Every check reports the absolute deviation from its reference and passes when that stays
    within the tolerance.
    """
    from app.schemas import ObservationModel, VariationalState

    rng = np.random.default_rng(seed)
    checks: list[SelfTestCheck] = []

    # scalar references
    state = VariationalState(
        mu=np.zeros(1, dtype=np.complex128),
        sigma2=np.ones(1),
        a_tilde=np.ones(1),
        b_tilde=np.ones(1),
        lambda_tilde=np.full(1, 0.5),
        c_tilde=64.0,
        d_tilde=32.0,
    )
    moments = compute_moments(state)
    checks.append(_check("digamma_at_one", moments.ln_rho_mean[0] + 0.5772156649015329, 1e-12))
    checks.append(_check("kappa_mean", moments.kappa_mean - 2.0, 1e-15))
    message = extrinsic_from_scvbi(np.array([0.9]), BernoulliMessage(active_prob=np.array([0.6])))
    checks.append(_check("extrinsic_log_odds", message.active_prob[0] - 6.0 / 7.0, 1e-12))
    markov = markov2d_from_sparsity(0.1, 4.0, 4, 4)
    checks.append(_check("markov_transition", markov.p01_row - 0.25 / 9.0, 1e-15))
    checks.append(_check("nmse_minus_20db", nmse_db(np.full(4, 1.1), np.ones(4)) + 20.0, 1e-9))

    # chain message passing against enumeration
    worst = 0.0
    for n1, n2 in ((1, 7), (6, 1)):
        chain = markov2d_from_sparsity(0.3, 2.5, n1, n2)
        msg_in = BernoulliMessage(active_prob=rng.uniform(0.05, 0.95, n1 * n2))
        exact = brute_force_marginals(msg_in, chain).active_prob
        worst = max(worst, float(np.max(np.abs(ssi_markov2d(msg_in, chain, 1, 0.3).active_prob - exact))))
    checks.append(_check("chain_messages_exact", worst, 1e-10))
    grid = markov2d_from_sparsity(0.1, 4.0, 3, 3)
    flat = BernoulliMessage(active_prob=np.full(9, 0.5))
    propagated = output_message(propagate_markov2d(flat, grid, 200, 0.3, tol=1e-14)).active_prob
    exact = brute_force_marginals(flat, grid).active_prob
    deviation = max(float(np.max(np.abs(propagated - 0.1))), float(np.max(np.abs(exact - 0.1))))
    checks.append(_check("uniform_input_marginal", deviation, 1e-9))

    # linear-algebra oracles on a well-conditioned problem
    model = _random_problem(64, 16, 3, rng)
    hyper = default_hyperparams(model.n)
    prior_msg = BernoulliMessage(active_prob=np.full(model.n, 0.05))
    state = initial_state(model, hyper, prior_msg)
    surrogate = QuadraticSurrogate.from_moments(model, compute_moments(state))
    full = SupportEstimate(indices=np.arange(model.n), threshold=0.0)
    exact_mean = exact_icvbi_mean(surrogate, model.y)
    checks.append(_check("subspace_full_support", _relative(subspace_init(full, surrogate, model.y), exact_mean), 1e-10))

    u = (rng.standard_normal(model.n) + 1j * rng.standard_normal(model.n)) / np.sqrt(2)
    g = surrogate.gradient(u)
    step = 1e-5
    fd = np.empty(model.n, dtype=np.complex128)
    for k in range(model.n):
        e = np.zeros(model.n, dtype=np.complex128)
        e[k] = step
        d_re = (surrogate.objective(u + e) - surrogate.objective(u - e)) / (2 * step)
        d_im = (surrogate.objective(u + 1j * e) - surrogate.objective(u - 1j * e)) / (2 * step)
        fd[k] = 0.5 * (d_re + 1j * d_im)
    checks.append(_check("mean_gradient_fd", _relative(fd, g), 1e-6))

    # free energy within SC-VBI rounds
    support = omp_initial_support(model.sensing, model.y, 6)
    energies = [free_energy(state, model, hyper, prior_msg)]
    for _ in range(5):
        state, support, _ = scvbi_round(state, model, hyper, prior_msg, 3, SolverConfig().support_policy, support)
        energies.append(free_energy(state, model, hyper, prior_msg))
    checks.append(_check("free_energy_increase", max(0.0, float(np.max(np.diff(energies)))), 1e-9))

    # grid likelihood gradient
    mimo, truth = build_instance(nx=4, ny=4, n1=8, n2=4, compression_ratio=2, k_paths=2, snr_db=20.0, seed=seed)
    ctx = GridLikelihoodContext(
        x_hat_s=truth.gains,
        kappa_hat=1.0,
        y=mimo.y,
        support=truth.support_true,
        combiner=mimo.combiner,
        array_shape=(4, 4),
    )
    grad = grid_gradient(mimo.grid, ctx)
    fd_az = np.empty(truth.support_true.size)
    for j, q in enumerate(truth.support_true):
        plus, minus = mimo.grid.copy(), mimo.grid.copy()
        plus.azimuth[q] += 1e-6
        minus.azimuth[q] -= 1e-6
        fd_az[j] = (grid_likelihood(plus, ctx) - grid_likelihood(minus, ctx)) / 2e-6
    checks.append(_check("grid_gradient_fd", _relative(fd_az, grad.d_azimuth), 1e-5))

    # one-sparse support recovery
    sensing = model.sensing
    y = 2.0 * sensing[:, 11]
    picked = omp_initial_support(sensing, y, 1).indices
    checks.append(_check("omp_one_sparse", float(picked.tolist() != [11]), 0.0))

    single = ObservationModel(sensing=sensing, y=y)
    config = SolverConfig(initial_support=[11], grid_refinement_enabled=False, max_iters=30)
    result = AlternatingEstimator(hyper, IIDSupportPrior(lam=np.full(model.n, 0.05)), config).solve(single)
    x_true = np.zeros(model.n, dtype=np.complex128)
    x_true[11] = 2.0
    checks.append(_check("noise_free_one_sparse", _relative(result.x_hat, x_true), 1e-2))

    failed = [c.name for c in checks if not c.passed]
    logger.info("Self-test finished", checks=len(checks), failed=failed)
    return checks
