"""Sparse channel recovery with alternating estimation and structured support priors."""

import multiprocessing
import platform

from app import cli, config, lib, schemas, services, utils

__all__ = (
    "cli",
    "config",
    "lib",
    "schemas",
    "services",
    "utils",
)

if platform.system() == "Darwin":
    multiprocessing.set_start_method("fork", force=True)
