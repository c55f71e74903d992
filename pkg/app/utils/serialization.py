"""msgspec-based JSON serialization with numpy support.

Complex arrays are written as ``{"real": [...], "imag": [...]}`` objects; real arrays as
plain (nested) lists. Decoding into ``np.ndarray`` fields goes through :func:`general_dec_hook`.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, TypeVar

import msgspec
import numpy as np

T = TypeVar("T")


def _default_encoder(value: Any) -> Any:
    """Default encoder for non-standard types.

    Args:
        value: Object to encode

    Returns:
        A msgspec-encodable representation of the object

    Raises:
        TypeError: If object cannot be serialized
    """
    if isinstance(value, np.ndarray):
        return numpy_array_enc_hook(value)
    if isinstance(value, np.generic):
        if np.iscomplexobj(value):
            return {"real": float(value.real), "imag": float(value.imag)}
        return value.item()
    if isinstance(value, complex):
        return {"real": value.real, "imag": value.imag}
    if isinstance(value, Path):
        return str(value)
    msg = f"Cannot serialize {type(value).__name__}"
    raise TypeError(msg)


_msgspec_json_encoder = msgspec.json.Encoder(enc_hook=_default_encoder)
_msgspec_json_decoder = msgspec.json.Decoder()


def to_json(value: Any) -> bytes:
    """Encode object to JSON bytes using msgspec.

    Args:
        value: Object to encode

    Returns:
        JSON encoded bytes
    """
    if isinstance(value, bytes):
        return value
    return _msgspec_json_encoder.encode(value)


def from_json(value: bytes | str, type_: type[T] | None = None) -> T | Any:
    """Decode JSON, optionally into a typed msgspec structure.

    Args:
        value: JSON bytes or string to decode
        type_: Target type; ``None`` returns builtin Python objects

    Returns:
        Decoded object
    """
    if type_ is None:
        return _msgspec_json_decoder.decode(value)
    return msgspec.json.decode(value, type=type_, dec_hook=general_dec_hook)


def numpy_array_predicate(type_: type[Any]) -> bool:
    """Check if type is a numpy array.

    Args:
        type_: Type to check

    Returns:
        True if type is a numpy array type
    """
    return type_ is np.ndarray or str(type_).startswith("numpy.ndarray")


def numpy_array_enc_hook(arr: np.ndarray) -> Any:
    """Convert a numpy array to JSON-compatible lists."""
    if np.iscomplexobj(arr):
        return {"real": arr.real.tolist(), "imag": arr.imag.tolist()}
    return arr.tolist()


def numpy_array_dec_hook(obj: Any) -> np.ndarray:
    """Rebuild a numpy array from its encoded form.

    Args:
        obj: A list, or a ``{"real", "imag"}`` mapping for complex data

    Returns:
        The decoded array
    """
    if isinstance(obj, dict) and {"real", "imag"} <= obj.keys():
        return np.asarray(obj["real"], dtype=np.float64) + 1j * np.asarray(obj["imag"], dtype=np.float64)
    arr = np.asarray(obj)
    return arr.astype(np.float64) if arr.size == 0 else arr


def general_dec_hook(type_: type[Any], obj: Any) -> Any:
    """General decoder hook for custom types.

    Args:
        type_: Target type for conversion
        obj: Object to convert

    Returns:
        Converted object

    Raises:
        NotImplementedError: For unsupported types
    """
    if numpy_array_predicate(type_):
        return numpy_array_dec_hook(obj)
    if type_ is complex and isinstance(obj, dict):
        return complex(obj["real"], obj["imag"])
    msg = f"Encountered unknown type: {type_!s}"
    raise NotImplementedError(msg)
