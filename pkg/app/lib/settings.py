"""Application settings loaded from the environment."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from app.utils.env import get_env

DEFAULT_MODULE_NAME = "app"
BASE_DIR = Path(__file__).parent.parent


@dataclass
class SolverSettings:
    """Default solver knobs; every field can be overridden per run through ``SolverConfig``."""

    MAX_ITERS: int = field(default_factory=get_env("SOLVER_MAX_ITERS", 50))
    """Maximum outer iterations of the alternating estimator."""
    B_X: int = field(default_factory=get_env("SOLVER_B_X", 3))
    """Gradient refinement steps per SC-VBI round."""
    B_THETA: int = field(default_factory=get_env("SOLVER_B_THETA", 2))
    """Ascent steps per grid-estimation phase."""
    SSI_SWEEPS: int = field(default_factory=get_env("SOLVER_SSI_SWEEPS", 5))
    """Rounds of directional sweeps in structured sparse inference."""
    SSI_DAMPING: float = field(default_factory=get_env("SOLVER_SSI_DAMPING", 0.3))
    """Message damping on loopy grids."""
    FIRST_ROUND_REPEATS: int = field(default_factory=get_env("SOLVER_FIRST_ROUND_REPEATS", 5))
    """SC-VBI repeats in the first outer iteration."""
    STOP_TOL: float = field(default_factory=get_env("SOLVER_STOP_TOL", 1e-6))
    """Relative change of the variational parameters below which the solver stops."""
    SUPPORT_MULTIPLE: float = field(default_factory=get_env("SOLVER_SUPPORT_MULTIPLE", 2.5))
    """Support threshold as a multiple of the estimated noise power."""
    GRID_REFINEMENT: bool = field(default_factory=get_env("SOLVER_GRID_REFINEMENT", True))
    """Refine the dynamic grid over the estimated support."""


@dataclass
class ExperimentSettings:
    """Experiment harness configuration."""

    OUTPUT_DIR: Path = field(default_factory=get_env("EXPERIMENT_OUTPUT_DIR", Path("results")))
    """Directory for CSV outputs when no explicit path is given."""
    THREADS: int = field(default_factory=get_env("EXPERIMENT_THREADS", 1))
    """Worker processes for independent experiment cells."""
    SEED: int = field(default_factory=get_env("EXPERIMENT_SEED", 0))
    """Seed used by ``solve`` when none is passed."""


@dataclass
class LogSettings:
    """Logger configuration."""

    LEVEL: int = field(default_factory=get_env("LOG_LEVEL", 30))
    """Stdlib log levels.

    Only emit logs at this level, or higher.
    """
    FORCE_JSON: bool = field(default_factory=get_env("LOG_FORCE_JSON", False))
    """Render JSON even on an interactive terminal."""
    WARNINGS_LEVEL: int = field(default_factory=get_env("LOG_WARNINGS_LEVEL", 30))
    """Level for captured numpy/scipy runtime warnings."""


@dataclass
class AppSettings:
    """Application configuration."""

    NAME: str = field(default_factory=lambda: "AE-SC-VBI")
    """Application name."""
    VERSION: str = field(default="0.1.0")
    """Current application version."""
    DEBUG: bool = field(default_factory=get_env("DEBUG", False))
    """Run application with debug mode."""


@dataclass
class Settings:
    """Main application settings."""

    app: AppSettings = field(default_factory=AppSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    log: LogSettings = field(default_factory=LogSettings)

    @classmethod
    @lru_cache(maxsize=1, typed=True)
    def from_env(cls, dotenv_filename: str = ".env") -> Settings:
        from dotenv import load_dotenv

        env_file = Path(f"{os.curdir}/{dotenv_filename}")
        if env_file.is_file():
            load_dotenv(env_file, override=True)

        try:
            app: AppSettings = AppSettings()
            solver: SolverSettings = SolverSettings()
            experiment: ExperimentSettings = ExperimentSettings()
            log: LogSettings = LogSettings()
        except (ValueError, TypeError, KeyError) as e:
            import structlog

            logger = structlog.get_logger()
            logger.fatal("Could not load settings", error=str(e))
            sys.exit(1)

        return Settings(app=app, solver=solver, experiment=experiment, log=log)


def get_settings(dotenv_filename: str = ".env") -> Settings:
    """Get application settings."""
    return Settings.from_env(dotenv_filename)
