"""Dense nonnegative matrices: shifts, entrywise kernels and the NMAT v1 text format.

Matrices are plain 2-D ``float64`` numpy arrays. The helpers here never
modify their inputs; every operation returns a freshly allocated array.
"""

from __future__ import annotations

import os
from typing import Iterable

import numpy as np

DEFAULT_EPS = 1e-12


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NmatFormatError(ValueError):
    """A matrix or dictionary file could not be parsed."""


def as_nonneg(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a 2-D float64 array, checking that it is finite and nonnegative."""
    a = np.array(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(a < 0):
        raise ValueError(f"{name} has negative entries")
    return a


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


def right_shift(x: np.ndarray, m: int) -> np.ndarray:
    """Shift columns ``m`` places to the right, filling with zeros."""
    if m < 0:
        raise ValueError("shift must be nonnegative")
    out = np.zeros_like(x)
    if m < x.shape[1]:
        out[:, m:] = x[:, : x.shape[1] - m]
    return out


def left_shift(x: np.ndarray, m: int) -> np.ndarray:
    """Shift columns ``m`` places to the left, filling with zeros."""
    if m < 0:
        raise ValueError("shift must be nonnegative")
    out = np.zeros_like(x)
    if m < x.shape[1]:
        out[:, : x.shape[1] - m] = x[:, m:]
    return out


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b)
    return a * b


def entrywise_pow(a: np.ndarray, p: float, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Raise every entry to the power ``p``.

    For negative ``p`` the base is first floored at ``eps`` so that zeros map
    to a large finite value instead of ``inf``. ``0 ** 0`` is 1, so ``p == 0``
    yields the all-ones matrix.
    """
    if p == 0:
        return np.ones_like(a)
    if p == 1:
        return a.copy()
    if p < 0:
        base = np.maximum(a, eps)
        if p == -1:
            return 1.0 / base
        return np.power(base, p)
    if p == 2:
        return a * a
    return np.power(a, p)


def safe_divide(a: np.ndarray, b: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Entrywise ``a / max(b, eps)``."""
    _check_same_shape(a, b)
    return a / np.maximum(b, eps)


# --- NMAT v1 text format ---------------------------------------------------


def _format_rows(a: np.ndarray) -> Iterable[str]:
    for row in a:
        # repr() gives the shortest string that round-trips to the same double
        yield " ".join(repr(float(v)) for v in row)


def format_nmat(a: np.ndarray) -> str:
    a = np.asarray(a, dtype=np.float64)
    lines = [f"{a.shape[0]} {a.shape[1]}", *_format_rows(a)]
    return "\n".join(lines) + "\n"


def format_dictionary(w: np.ndarray) -> str:
    """Serialize an (M, K, I) dictionary: header ``K I M`` then M row blocks in lag order."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 3:
        raise DimensionError(f"dictionary must be 3-D, got shape {w.shape}")
    m, k, i = w.shape
    lines = [f"{k} {i} {m}"]
    for slice_ in w:
        lines.extend(_format_rows(slice_))
    return "\n".join(lines) + "\n"


def _parse_header(line: str, n: int) -> list[int]:
    parts = line.split()
    if len(parts) != n:
        raise NmatFormatError(f"expected {n} integers in header, got {line!r}")
    try:
        dims = [int(p) for p in parts]
    except ValueError as exc:
        raise NmatFormatError(f"bad header {line!r}") from exc
    if any(d < 1 for d in dims):
        raise NmatFormatError(f"dimensions must be positive, got {line!r}")
    return dims


def _parse_rows(lines: list[str], rows: int, cols: int) -> np.ndarray:
    if len(lines) != rows:
        raise NmatFormatError(f"expected {rows} rows, got {len(lines)}")
    out = np.empty((rows, cols))
    for r, line in enumerate(lines):
        parts = line.split()
        if len(parts) != cols:
            raise NmatFormatError(f"row {r}: expected {cols} values, got {len(parts)}")
        try:
            out[r] = [float(p) for p in parts]
        except ValueError as exc:
            raise NmatFormatError(f"row {r}: {exc}") from exc
    if not np.all(np.isfinite(out)) or np.any(out < 0):
        raise NmatFormatError("entries must be finite and nonnegative")
    return out


def _content_lines(text: str) -> list[str]:
    return [ln for ln in text.splitlines() if ln.strip()]


def parse_nmat(text: str) -> np.ndarray:
    lines = _content_lines(text)
    if not lines:
        raise NmatFormatError("empty matrix file")
    rows, cols = _parse_header(lines[0], 2)
    return _parse_rows(lines[1:], rows, cols)


def parse_dictionary(text: str) -> np.ndarray:
    lines = _content_lines(text)
    if not lines:
        raise NmatFormatError("empty dictionary file")
    k, i, m = _parse_header(lines[0], 3)
    body = lines[1:]
    if len(body) != k * m:
        raise NmatFormatError(f"expected {k * m} rows for {m} slices, got {len(body)}")
    return np.stack([_parse_rows(body[j * k : (j + 1) * k], k, i) for j in range(m)])


def write_nmat(path: str | os.PathLike, a: np.ndarray) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_nmat(a))


def read_nmat(path: str | os.PathLike) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        return parse_nmat(fh.read())


def write_dictionary(path: str | os.PathLike, w: np.ndarray) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_dictionary(w))


def read_dictionary(path: str | os.PathLike) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        return parse_dictionary(fh.read())
