"""Environment variable helpers with type-directed parsing."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import TYPE_CHECKING, Any, Final, TypeVar, overload

if TYPE_CHECKING:
    from collections.abc import Callable

TRUE_VALUES: Final[frozenset[str]] = frozenset({"True", "true", "1", "yes", "YES", "Y", "y", "T", "t", "on"})

T = TypeVar("T")
ParseTypes = bool | int | float | str | Path | list[int] | list[float] | list[str]


@overload
def get_env(key: str, default: bool) -> Callable[[], bool]: ...


@overload
def get_env(key: str, default: int) -> Callable[[], int]: ...


@overload
def get_env(key: str, default: float) -> Callable[[], float]: ...


@overload
def get_env(key: str, default: str) -> Callable[[], str]: ...


@overload
def get_env(key: str, default: Path) -> Callable[[], Path]: ...


@overload
def get_env(key: str, default: list[T]) -> Callable[[], list[T]]: ...


def get_env(key: str, default: ParseTypes) -> Callable[[], Any]:
    """Return a zero-argument callable reading ``key`` from the environment.

    Intended for ``dataclasses.field(default_factory=...)`` so that the value is read
    when the settings object is built rather than at import time.
    """
    return lambda: get_config_val(key, default)


def get_config_val(key: str, default: ParseTypes) -> Any:
    """Parse an environment variable using the type of its default.

    Args:
        key: Environment variable name.
        default: Value returned when the variable is unset. Its type selects the parser.

    Raises:
        ValueError: When the raw value cannot be converted.

    Returns:
        The parsed value, or ``default``.
    """
    raw = os.getenv(key)
    if raw is None:
        return default
    if isinstance(default, bool):
        return raw in TRUE_VALUES
    if isinstance(default, Path):
        return Path(raw)
    if isinstance(default, list):
        item_type: type = type(default[0]) if default else str
        return _parse_list(key, raw, item_type)
    if isinstance(default, int | float):
        try:
            return type(default)(raw)
        except ValueError as e:
            msg = f"Cannot convert '{raw}' to {type(default).__name__} for key '{key}'"
            raise ValueError(msg) from e
    return raw


def _parse_list(key: str, raw: str, item_type: type[T]) -> list[T]:
    """Parse a JSON array or a comma separated string."""
    if raw.startswith("[") and raw.endswith("]"):
        try:
            items = json.loads(raw)
        except json.JSONDecodeError as e:
            msg = f"'{key}' is not a valid JSON list"
            raise ValueError(msg) from e
    else:
        items = [item.strip() for item in raw.split(",") if item.strip()]
    try:
        return [item_type(item) for item in items]  # type: ignore[call-arg]
    except (TypeError, ValueError) as e:
        msg = f"Error parsing list items for '{key}': {e}"
        raise ValueError(msg) from e
