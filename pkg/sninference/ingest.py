"""
CSV ingestion.

Reads a comma-separated UTF-8 file into a TimeSeries: one observation per
line in time order, one column per component, with an optional header row
that is detected automatically (a first row with a non-numeric cell).
Every rejected input names the offending line and column.
"""

import hashlib
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from sninference.core import TimeSeries
from sninference.errors import IngestionError

logger = logging.getLogger(__name__)

AUTO = "auto"
_LINE_PATTERN = re.compile(r"line (\d+)")


@dataclass(frozen=True, eq=False)
class CsvInput:
    """
    An ingested data file.

    Attributes:
        series: The TimeSeries
        digest: SHA-256 of the raw file bytes
        header: Column names when a header row was present, else None
        path: Source file
    """

    series: TimeSeries
    digest: str
    header: tuple = None
    path: str = ""

    @property
    def n(self):
        return self.series.n

    @property
    def d(self):
        return self.series.d


def _is_number(cell):
    try:
        float(cell)
    except (TypeError, ValueError):
        return False
    return True


def _parse_frame(path, delimiter):
    try:
        return pd.read_csv(
            path,
            header=None,
            sep=delimiter,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError as exc:
        raise IngestionError(f"{path} is empty", line=1) from exc
    except pd.errors.ParserError as exc:
        match = _LINE_PATTERN.search(str(exc))
        line = int(match.group(1)) if match else None
        raise IngestionError(f"ragged row in {path}: {exc}", line=line) from exc
    except UnicodeDecodeError as exc:
        raise IngestionError(f"{path} is not UTF-8 text") from exc


def read_csv_input(path, header=AUTO, delimiter=","):
    """
    Reads a data file with its provenance.

    Args:
        path: CSV file
        header: ``"auto"`` to detect a header row, True or False to force it
        delimiter: Field separator

    Returns:
        CsvInput

    Raises:
        IngestionError: Unreadable file, ragged rows, non-numeric cells,
            non-finite values or no data
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if not raw.strip():
        raise IngestionError(f"{path} is empty", line=1)

    frame = _parse_frame(path, delimiter)

    # drop trailing blank lines; pandas reads them as NaN or as ""
    stripped = frame.apply(lambda column: column.str.strip())
    filled = ~(stripped.isna() | stripped.eq("")).all(axis=1)
    if filled.any():
        frame = frame.loc[: filled[filled].index[-1]]

    ragged = frame.isna().any(axis=1)
    if ragged.any():
        row = int(np.flatnonzero(ragged.to_numpy())[0])
        raise IngestionError(f"ragged row in {path}: expected {frame.shape[1]} fields", line=row + 1)

    frame = frame.apply(lambda column: column.str.strip())
    first_row = frame.iloc[0].tolist()
    has_header = header if header != AUTO else not all(_is_number(cell) for cell in first_row)
    names = tuple(first_row) if has_header else None
    offset = 2 if has_header else 1
    data = frame.iloc[1:] if has_header else frame
    if data.empty:
        raise IngestionError(f"{path} has a header but no data rows", line=offset)

    numeric = data.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy() & ~data.isin(["nan", "NaN", "NAN"]).to_numpy()
    if bad.any():
        row, column = np.argwhere(bad)[0]
        cell = data.iat[row, column]
        raise IngestionError(f"non-numeric cell {cell!r} in {path}", line=row + offset, column=column + 1)

    values = numeric.to_numpy(dtype=float)
    non_finite = ~np.isfinite(values)
    if non_finite.any():
        row, column = np.argwhere(non_finite)[0]
        raise IngestionError(f"non-finite value {values[row, column]} in {path}", line=row + offset, column=column + 1)

    digest = hashlib.sha256(raw).hexdigest()
    logger.info("read %s: n = %d, d = %d, sha256 %s", path, values.shape[0], values.shape[1], digest[:12])
    return CsvInput(TimeSeries(values), digest, names, str(path))


def ingest_csv(path, options=None):
    """
    Reads a CSV file into a TimeSeries.

    Args:
        path: CSV file
        options: Optional dict with ``header`` ("auto", True, False) and ``delimiter``

    Returns:
        TimeSeries
    """
    return read_csv_input(path, **(options or {})).series
