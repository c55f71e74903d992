from __future__ import annotations

from pathlib import Path

import msgspec
import numpy as np
import pytest

from app.lib.exceptions import ConfigurationError, ExperimentIOError, InputError
from app.schemas import ExperimentSpec, IIDSupportPrior, Markov2DSupportPrior, MetricRecord, SolverConfig
from app.services.harness import (
    build_instance,
    build_support_prior,
    load_experiment_spec,
    read_metric_records,
    run_experiment,
    run_scaling_benchmark,
    run_selftest,
)


@pytest.fixture
def tiny_spec() -> ExperimentSpec:
    return ExperimentSpec(
        scenario="convergence",
        nx=4,
        ny=4,
        n1=8,
        n2=4,
        compression_ratios=[2],
        k_paths=[2],
        snr_db=[20.0],
        seeds=[0, 1],
        solver=SolverConfig(max_iters=3),
    )


def _without_timing(rows: list[MetricRecord]) -> list[dict[str, object]]:
    out = []
    for row in rows:
        values = msgspec.structs.asdict(row)
        values.pop("wall_ms")
        out.append(values)
    return out


def test_build_instance_is_seeded() -> None:
    kwargs = {"nx": 4, "ny": 4, "n1": 8, "n2": 4, "compression_ratio": 4, "k_paths": 3, "snr_db": 10.0}
    first, truth = build_instance(seed=5, **kwargs)
    second, _ = build_instance(seed=5, **kwargs)
    other, _ = build_instance(seed=6, **kwargs)
    np.testing.assert_array_equal(first.y, second.y)
    np.testing.assert_array_equal(first.sensing, second.sensing)
    assert not np.array_equal(first.y, other.y)
    assert first.m == 4
    assert first.n == 32
    assert truth.kappa is not None
    assert truth.kappa > 0
    assert truth.support_true.size == 3


def test_build_instance_noise_free_matches_truth_angles() -> None:
    model, truth = build_instance(
        nx=4, ny=4, n1=8, n2=4, compression_ratio=2, k_paths=2, snr_db=10.0, seed=3, noise_free=True
    )
    np.testing.assert_allclose(model.y, model.combiner.matrix @ truth.h, atol=1e-12)


def test_build_instance_rejects_uneven_compression() -> None:
    with pytest.raises(InputError):
        build_instance(nx=4, ny=4, n1=8, n2=4, compression_ratio=3, k_paths=2, snr_db=10.0, seed=0)


def test_build_support_prior() -> None:
    iid = build_support_prior("iid", 8, 4, 2)
    assert isinstance(iid, IIDSupportPrior)
    np.testing.assert_allclose(iid.lam, 2 / 32)
    markov = build_support_prior("markov2d", 8, 4, 2, mean_run=4.0)
    assert isinstance(markov, Markov2DSupportPrior)
    assert markov.p10_row == pytest.approx(0.25)
    with pytest.raises(ConfigurationError):
        build_support_prior("dense", 8, 4, 2)


def test_run_experiment_writes_ordered_rows(tiny_spec: ExperimentSpec, tmp_path: Path) -> None:
    out = tmp_path / "results" / "tiny.csv"
    rows = run_experiment(tiny_spec, out=out)
    assert out.exists()
    finals = [r for r in rows if r.kind == "final"]
    assert [r.seed for r in finals] == [0, 1]
    for seed in (0, 1):
        cell = [r for r in rows if r.seed == seed]
        assert cell[-1].kind == "final"
        iterations = [r.iteration for r in cell if r.kind == "iteration"]
        assert iterations == list(range(1, len(iterations) + 1))
        assert cell[-1].iteration == iterations[-1]
    assert all(np.isfinite(r.nmse_db) for r in rows)
    assert read_metric_records(out) == rows


def test_run_experiment_is_reproducible(tiny_spec: ExperimentSpec, tmp_path: Path) -> None:
    first = run_experiment(tiny_spec, out=tmp_path / "a.csv")
    second = run_experiment(tiny_spec, workers=2, out=tmp_path / "b.csv")
    assert _without_timing(first) == _without_timing(second)


def test_run_experiment_needs_cells(tiny_spec: ExperimentSpec, tmp_path: Path) -> None:
    with pytest.raises(ConfigurationError):
        run_experiment(msgspec.structs.replace(tiny_spec, seeds=[]), out=tmp_path / "empty.csv")


def test_run_experiment_reports_unwritable_output(tiny_spec: ExperimentSpec, tmp_path: Path) -> None:
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    spec = msgspec.structs.replace(tiny_spec, seeds=[0])
    with pytest.raises(ExperimentIOError) as exc_info:
        run_experiment(spec, out=blocker / "results.csv")
    assert exc_info.value.path == blocker / "results.csv"


def test_read_metric_records_checks_header(tmp_path: Path) -> None:
    path = tmp_path / "bad.csv"
    path.write_text("seed,nmse_db\n0,-10.0\n")
    with pytest.raises(ExperimentIOError):
        read_metric_records(path)


def test_load_experiment_spec(tmp_path: Path) -> None:
    path = tmp_path / "spec.json"
    path.write_text('{"scenario": "snr", "snr_db": [0, 10], "solver": {"max_iters": 7}}')
    spec = load_experiment_spec(path)
    assert spec.scenario == "snr"
    assert spec.snr_db == [0.0, 10.0]
    assert spec.solver is not None
    assert spec.solver.max_iters == 7


@pytest.mark.parametrize("contents", ['{"scenario": "unknown"}', '{"bogus": 1}', "{not json"])
def test_load_experiment_spec_rejects_bad_files(contents: str, tmp_path: Path) -> None:
    path = tmp_path / "spec.json"
    path.write_text(contents)
    with pytest.raises(ConfigurationError):
        load_experiment_spec(path)


def test_load_experiment_spec_missing_file(tmp_path: Path) -> None:
    with pytest.raises(ExperimentIOError):
        load_experiment_spec(tmp_path / "missing.json")


def test_scaling_benchmark(tmp_path: Path) -> None:
    out = tmp_path / "bench.csv"
    records, slopes = run_scaling_benchmark([32, 64], [8], repeats=1, support_size=2, out=out)
    assert {r.algorithm for r in records} == {"sc_vbi", "sc_vbi_2s", "ic_vbi_oracle"}
    assert len(records) == 6
    assert all(r.median_ms >= 0 for r in records)
    assert set(slopes) == {"sc_vbi@m=8", "sc_vbi_2s@m=8", "ic_vbi_oracle@m=8"}
    assert out.read_text().splitlines()[0] == "algorithm,n,m,support_size,median_ms,repeats"


def test_scaling_benchmark_separates_subspace_and_exact_costs() -> None:
    _, slopes = run_scaling_benchmark([128, 256, 512, 1024], [32], repeats=3, support_size=8)
    assert slopes["sc_vbi@m=32"] <= 1.3
    assert slopes["ic_vbi_oracle@m=32"] > slopes["sc_vbi@m=32"] + 1.0


def test_scaling_benchmark_rejects_oversized_support() -> None:
    with pytest.raises(InputError):
        run_scaling_benchmark([8], [4], repeats=1, support_size=5)


def test_selftest_passes() -> None:
    checks = run_selftest()
    failed = [(c.name, c.value) for c in checks if not c.passed]
    assert not failed
    assert {c.name for c in checks} >= {
        "chain_messages_exact",
        "uniform_input_marginal",
        "subspace_full_support",
        "noise_free_one_sparse",
    }


@pytest.mark.parametrize("name", ["compression", "convergence", "grid", "paths", "prior", "snr"])
def test_shipped_experiment_files_decode(name: str) -> None:
    spec = load_experiment_spec(Path(__file__).parents[2] / "experiments" / f"{name}.json")
    assert spec.scenario == name
    assert len(spec.seeds) == 20
