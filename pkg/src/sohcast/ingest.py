"""Flat-file readers and writers: raw telemetry CSV and the household power format."""

from __future__ import annotations

import csv
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .core import TELEMETRY_CHANNELS, DailySeries, RawTelemetry
from .errors import EmptyInput, ParseError

TELEMETRY_HEADER = ["timestamp", *TELEMETRY_CHANNELS]
HOUSEHOLD_TARGET = "global_active_power"


def parse_timestamp(text: str) -> float:
    """ISO-8601 to epoch seconds; naive times are taken as UTC."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamps(ts: np.ndarray) -> list[str]:
    secs = np.asarray(ts, dtype=float)
    whole = np.all(secs == np.floor(secs))
    unit = "s" if whole else "ms"
    scale = 1 if whole else 1000
    stamps = np.round(secs * scale).astype(np.int64).astype(f"datetime64[{unit}]")
    return [s + "Z" for s in np.datetime_as_string(stamps, unit=unit)]


def ingest_telemetry(path) -> RawTelemetry:
    """Read ``timestamp,voltage,current,soc,ambient_temp`` rows; sorted and deduplicated."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"{path}: empty file") from None
        if [h.strip().lower() for h in header] != TELEMETRY_HEADER:
            raise ParseError(f"expected header {','.join(TELEMETRY_HEADER)}", 1)
        ts, cols = [], [[] for _ in TELEMETRY_CHANNELS]
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(TELEMETRY_HEADER):
                raise ParseError(f"expected {len(TELEMETRY_HEADER)} fields, got {len(row)}", line_no)
            try:
                ts.append(parse_timestamp(row[0]))
                for col, cell in zip(cols, row[1:]):
                    col.append(float(cell))
            except ValueError as exc:
                raise ParseError(str(exc), line_no) from None
    if not ts:
        raise EmptyInput(f"{path}: no samples")
    return RawTelemetry(np.array(ts), *(np.array(c) for c in cols)).sorted_unique()


def write_telemetry(raw: RawTelemetry, path) -> None:
    stamps = format_timestamps(raw.timestamps)
    cols = [raw.column(c) for c in TELEMETRY_CHANNELS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TELEMETRY_HEADER)
        for i, s in enumerate(stamps):
            w.writerow([s, *(repr(float(c[i])) for c in cols)])


def ingest_household(path) -> DailySeries:
    """Monthly means of the minute-level household power file.

    The file is semicolon separated with ``Date`` as d/m/yyyy and ``?`` for
    missing readings; missing readings are left out of the means. Months with
    no readings at all come out as NaN.
    """
    path = Path(path)
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, np.ndarray] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=";")
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"{path}: empty file") from None
        names = [h.strip().lower() for h in header]
        if names[:2] != ["date", "time"] or HOUSEHOLD_TARGET not in names:
            raise ParseError("expected Date;Time;Global_active_power;... header", 1)
        n_val = len(names) - 2
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise ParseError(f"expected {len(names)} fields, got {len(row)}", line_no)
            try:
                day, month, year = row[0].split("/")
                key = int(year) * 12 + int(month) - 1
                vals = np.array([np.nan if c.strip() == "?" or not c.strip() else float(c) for c in row[2:]])
            except ValueError as exc:
                raise ParseError(str(exc), line_no) from None
            if key not in sums:
                sums[key] = np.zeros(n_val)
                counts[key] = np.zeros(n_val)
            ok = ~np.isnan(vals)
            sums[key][ok] += vals[ok]
            counts[key] += ok
    if not sums:
        raise EmptyInput(f"{path}: no readings")
    first, last = min(sums), max(sums)
    months = np.arange(first, last + 1)
    chans = {}
    for j, name in enumerate(names[2:]):
        s = np.array([sums[m][j] if m in sums else 0.0 for m in months])
        c = np.array([counts[m][j] if m in counts else 0.0 for m in months])
        with np.errstate(invalid="ignore", divide="ignore"):
            chans[name] = np.where(c > 0, s / np.maximum(c, 1), np.nan)
    # datetime64[M] counts months from 1970-01
    dates = (months - 1970 * 12).astype("datetime64[M]")
    return DailySeries(dates, chans, HOUSEHOLD_TARGET)


def write_household(path, timestamps, columns: dict[str, np.ndarray]) -> None:
    """Write minute data in the household format; NaN becomes ``?``."""
    stamps = np.asarray(timestamps, dtype=np.int64).astype("datetime64[s]")
    names = list(columns)
    with open(path, "w", newline="") as fh:
        fh.write(";".join(["Date", "Time", *names]) + "\n")
        for i, st in enumerate(stamps):
            iso = str(st)
            y, m, d = iso[:10].split("-")
            cells = []
            for n in names:
                v = columns[n][i]
                cells.append("?" if np.isnan(v) else f"{v:.3f}")
            fh.write(f"{int(d)}/{int(m)}/{y};{iso[11:19]};" + ";".join(cells) + "\n")
