"""
JSON helpers shared by the library codecs and the report writers.

Complex numbers travel as ``[re, im]`` pairs and matrices as row-major nested
lists of such pairs. Documents are emitted with orjson, whose float output is the
shortest representation that round-trips a double exactly; CSV cells use 17
significant digits for the same guarantee.
"""

from typing import Any, Iterable, Sequence

import numpy as np
import orjson

FLOAT_FORMAT = "{:.17g}"


def encode_complex(value: complex) -> list[float]:
    value = complex(value)
    return [float(value.real), float(value.imag)]


def decode_complex(pair: Any) -> complex:
    """Decode ``[re, im]`` or ``{"re": .., "im": ..}``; bare reals are accepted too."""
    if isinstance(pair, dict):
        return complex(float(pair["re"]), float(pair.get("im", 0.0)))
    if isinstance(pair, (int, float)):
        return complex(float(pair), 0.0)
    if len(pair) != 2:
        raise ValueError(f"complex value must be a [re, im] pair, got {pair!r}")
    return complex(float(pair[0]), float(pair[1]))


def encode_matrix(matrix: np.ndarray) -> list[list[list[float]]]:
    matrix = np.asarray(matrix, dtype=complex)
    return [[encode_complex(entry) for entry in row] for row in matrix]


def decode_matrix(rows: Sequence[Sequence[Any]], shape=(2, 2)) -> np.ndarray:
    matrix = np.array([[decode_complex(entry) for entry in row] for row in rows], dtype=complex)
    if matrix.shape != tuple(shape):
        raise ValueError(f"matrix must have shape {shape}, got {matrix.shape}")
    return matrix


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy arrays, complex numbers and tuples to JSON-ready values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            if obj.ndim == 0:
                return encode_complex(obj.item())
            return [to_jsonable(v) for v in obj]
        return obj.tolist()
    if isinstance(obj, (complex, np.complexfloating)):
        return encode_complex(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj: Any) -> bytes:
    return orjson.dumps(to_jsonable(obj), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)


def loads(data: bytes | str) -> Any:
    return orjson.loads(data)


def format_float(value: float) -> str:
    return FLOAT_FORMAT.format(float(value))


def csv_rows(header: Iterable[str], rows: Iterable[Iterable[float]]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_float(v) for v in row))
    return "\n".join(lines) + "\n"
