"""Declarative SDC models loaded from TOML files.

A model file fixes the dimensions, the dense input/output matrices, and
the entries of A(x) as polynomials in the state components.  Each entry
is a sparse (row, col, terms) record; a term is a coefficient together
with a list of 1-based state indices whose product it multiplies, so

    [[entry]]
    row = 1
    col = 2
    terms = [{coeff = -1.0, vars = []}, {coeff = -1.0, vars = [1, 1]}]

encodes ``A[1,2] = -1 - x1^2``.  Monomials cover every coefficient shape
the built-in plants use (constants, x1^2, x4^2, -x1, diag(x)^2).
"""

from __future__ import annotations

import sys
from typing import List, Tuple

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .models import SdcModel


class ParseError(Exception):
    """Model file is not valid TOML or not a valid model description."""


class DimensionMismatchError(Exception):
    """An index in the model file exceeds the declared dimensions."""


def _require(table: dict, key: str, kind, where: str):
    if key not in table:
        raise ParseError(f"missing key {key!r} in {where}")
    value = table[key]
    if not isinstance(value, kind):
        raise ParseError(
            f"key {key!r} in {where} must be {kind.__name__}, "
            f"got {type(value).__name__}"
        )
    return value


def _matrix_from(table: dict, key: str, rows: int, cols: int) -> np.ndarray:
    if key not in table:
        if rows == 0 or cols == 0:
            return np.zeros((rows, cols))
        raise ParseError(f"missing matrix {key!r}")
    raw = table[key]
    mat = np.asarray(raw, dtype=float)
    if mat.size == 0:
        mat = mat.reshape(rows, cols) if rows * cols == 0 else mat
    if mat.shape != (rows, cols):
        raise DimensionMismatchError(
            f"matrix {key!r} must be {rows}x{cols}, got {mat.shape}"
        )
    return mat


def _compile_entries(raw_entries, n: int):
    """Validate entries and flatten them into evaluation triples."""
    compiled: List[Tuple[int, int, float, tuple]] = []
    for pos, entry in enumerate(raw_entries):
        where = f"entry #{pos + 1}"
        row = _require(entry, "row", int, where)
        col = _require(entry, "col", int, where)
        if not (1 <= row <= n and 1 <= col <= n):
            raise DimensionMismatchError(
                f"{where}: position ({row}, {col}) outside 1..{n}"
            )
        terms = _require(entry, "terms", list, where)
        for term in terms:
            if not isinstance(term, dict):
                raise ParseError(f"{where}: each term must be a table")
            coeff = term.get("coeff")
            if not isinstance(coeff, (int, float)):
                raise ParseError(f"{where}: term is missing a numeric coeff")
            variables = term.get("vars", [])
            if not isinstance(variables, list):
                raise ParseError(f"{where}: vars must be a list of indices")
            for v in variables:
                if not isinstance(v, int) or not 1 <= v <= n:
                    raise DimensionMismatchError(
                        f"{where}: state index x_{v} outside 1..{n}"
                    )
            compiled.append(
                (row - 1, col - 1, float(coeff),
                 tuple(v - 1 for v in variables))
            )
    return compiled


def load_model_file(path) -> SdcModel:
    """Load a declarative polynomial SDC model from a TOML file.

    Raises
    ------
    ParseError
        On malformed TOML (the message carries line/column) or missing
        and ill-typed keys.
    DimensionMismatchError
        When an entry position, state index, or matrix shape exceeds the
        declared dimensions.
    """
    try:
        with open(path, "rb") as fh:
            doc = _toml.load(fh)
    except _toml.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc

    name = doc.get("name", "model")
    n = _require(doc, "n", int, "model file")
    p = _require(doc, "p", int, "model file")
    q = _require(doc, "q", int, "model file")
    if n < 1 or p < 0 or q < 0:
        raise ParseError("dimensions must satisfy n >= 1, p >= 0, q >= 0")

    entries = _compile_entries(doc.get("entry", []), n)
    b = _matrix_from(doc, "B", n, p)
    c = _matrix_from(doc, "C", q, n)

    def coeff(x: np.ndarray) -> np.ndarray:
        a = np.zeros((n, n))
        for row, col, co, variables in entries:
            value = co
            for v in variables:
                value *= x[v]
            a[row, col] += value
        return a

    return SdcModel(name=str(name), n=n, p=p, q=q,
                    coefficient=coeff, b=b, c=c)
