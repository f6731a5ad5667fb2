from __future__ import annotations

from collections.abc import Iterable, Iterator
from typing import TextIO

import numpy as np
import numpy.typing as npt

from ..exceptions import PolytopeFormatException

__all__ = ("PolytopeReader", "PolytopeWriter")


class PolytopeReader:
    """Reads the ``d k`` header and ``k`` constraint rows of the polytope text format.

    Lines starting with ``#`` and blank lines are skipped. Every error carries the 1-based line number
    it was found on.
    """

    def __init__(self, lines: Iterable[str]) -> None:
        self._lines: Iterator[tuple[int, str]] = iter(enumerate(lines, start=1))
        self._line: int = 0

    @property
    def line(self) -> int:
        """The number of the last line consumed."""
        return self._line

    def _next_tokens(self) -> list[str] | None:
        for number, raw in self._lines:
            self._line = number
            text = raw.strip()

            if not text or text.startswith("#"):
                continue

            return text.split()

        return None

    def _parse_float(self, token: str) -> float:
        try:
            value = float(token)
        except ValueError:
            raise PolytopeFormatException(f'"{token}" is not a decimal number', line=self._line) from None

        if not np.isfinite(value):
            raise PolytopeFormatException(f'"{token}" is not finite', line=self._line)

        return value

    def read_header(self) -> tuple[int, int]:
        """Reads the ``d k`` header.

        Returns
        -------
        tuple[int, int]
            The dimension and the number of constraint rows.
        """
        tokens = self._next_tokens()
        if tokens is None:
            raise PolytopeFormatException("missing 'd k' header")

        if len(tokens) != 2:
            raise PolytopeFormatException(f"expected header 'd k', found {len(tokens)} fields", line=self._line)

        try:
            d, k = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise PolytopeFormatException("header fields must be integers", line=self._line) from None

        if d < 1 or k < 1:
            raise PolytopeFormatException("header fields must be positive", line=self._line)

        return d, k

    def read_row(self, d: int) -> tuple[npt.NDArray[np.float64], float]:
        """Reads one constraint row ``a_1 ... a_d b``.

        Returns
        -------
        tuple[numpy.ndarray, float]
            The facet normal and its offset.
        """
        tokens = self._next_tokens()
        if tokens is None:
            raise PolytopeFormatException("unexpected end of file, missing constraint rows", line=self._line)

        if len(tokens) != d + 1:
            raise PolytopeFormatException(f"expected {d + 1} numbers, found {len(tokens)}", line=self._line)

        values = [self._parse_float(token) for token in tokens]
        return np.asarray(values[:-1], dtype=np.float64), values[-1]

    def read(self) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        """Reads a whole polytope.

        Returns
        -------
        tuple[numpy.ndarray, numpy.ndarray]
            The ``k x d`` constraint matrix and the ``k`` offsets.

        Raises
        ------
        PolytopeFormatException
            The header or a row is malformed, rows are missing or trailing data follows the last row.
        """
        d, k = self.read_header()

        A = np.empty((k, d), dtype=np.float64)
        b = np.empty(k, dtype=np.float64)
        for i in range(k):
            A[i], b[i] = self.read_row(d)

        if self._next_tokens() is not None:
            raise PolytopeFormatException(f"trailing data after {k} constraint rows", line=self._line)

        return A, b


class PolytopeWriter:
    """Writes a polytope in the text format with 17 significant digits per number."""

    def __init__(self, stream: TextIO) -> None:
        self._stream = stream

    @staticmethod
    def _format(value: float) -> str:
        return f"{value:.17g}"

    def write_comment(self, text: str) -> None:
        for line in text.splitlines():
            self._stream.write(f"# {line}\n")

    def write_header(self, d: int, k: int) -> None:
        self._stream.write(f"{d} {k}\n")

    def write_row(self, row: npt.NDArray[np.float64], offset: float) -> None:
        fields = [self._format(float(value)) for value in row]
        fields.append(self._format(offset))
        self._stream.write(" ".join(fields) + "\n")

    def write(self, A: npt.NDArray[np.float64], b: npt.NDArray[np.float64]) -> None:
        k, d = A.shape
        self.write_header(d, k)

        for row, offset in zip(A, b):
            self.write_row(row, float(offset))
