from __future__ import annotations

import numpy as np

from app.schemas import SolverConfig
from app.services.ae import AlternatingEstimator
from app.services.harness import build_instance, build_support_prior
from app.services.model import nmse_db
from app.services.prior import default_hyperparams

NX, NY = 8, 8
N1, N2 = 16, 8


def _final_nmse(
    seed: int,
    *,
    prior: str = "markov2d",
    refinement: bool = True,
    k_paths: int = 1,
    compression_ratio: int = 4,
    snr_db: float = 20.0,
    off_grid: bool = True,
    noise_free: bool = False,
    clustered_truth: bool = False,
) -> float:
    model, truth = build_instance(
        nx=NX,
        ny=NY,
        n1=N1,
        n2=N2,
        compression_ratio=compression_ratio,
        k_paths=k_paths,
        snr_db=snr_db,
        seed=seed,
        off_grid=off_grid,
        clustered_truth=clustered_truth,
        noise_free=noise_free,
    )
    config = SolverConfig(grid_refinement_enabled=refinement, rng_seed=seed)
    estimator = AlternatingEstimator(
        default_hyperparams(model.n), build_support_prior(prior, N1, N2, k_paths), config
    )
    result = estimator.solve(model, truth)
    h_hat = result.h_hat if result.h_hat is not None else result.x_hat
    return nmse_db(h_hat, truth.h)


def test_noise_free_on_grid_paths_are_recovered() -> None:
    errors = np.array(
        [
            _final_nmse(seed, k_paths=3, compression_ratio=2, off_grid=False, noise_free=True, refinement=False)
            for seed in range(20)
        ]
    )
    assert np.sum(errors <= -60.0) >= 19, errors


def test_grid_refinement_resolves_an_off_grid_path() -> None:
    seeds = range(8)
    fixed = np.array([_final_nmse(seed, noise_free=True, refinement=False) for seed in seeds])
    refined = np.array([_final_nmse(seed, noise_free=True, refinement=True) for seed in seeds])
    assert np.median(fixed - refined) >= 20.0, (fixed, refined)


def test_grid_refinement_helps_at_moderate_snr() -> None:
    seeds = range(10)
    fixed = np.array([_final_nmse(seed, snr_db=20.0, refinement=False) for seed in seeds])
    refined = np.array([_final_nmse(seed, snr_db=20.0, refinement=True) for seed in seeds])
    assert np.sum(refined < fixed) >= 9, (fixed, refined)


def test_markov_prior_beats_iid_on_clustered_supports() -> None:
    seeds = range(16)
    errors = {
        prior: [
            _final_nmse(seed, prior=prior, k_paths=5, snr_db=0.0, clustered_truth=True, off_grid=False, refinement=False)
            for seed in seeds
        ]
        for prior in ("markov2d", "iid")
    }
    markov, iid = errors["markov2d"], errors["iid"]
    assert np.median(markov) < np.median(iid), (markov, iid)
