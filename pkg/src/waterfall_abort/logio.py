"""CSV serialization of waterfall logs.

One line per auction observation with the request-level fields repeated on
every line of the request. Column order::

    request_id, publisher_id, tag_id, position, won, request_payoff_usd,
    request_num_played, request_waterfall_length, median_bid_usd,
    cf_would_win, [cf_payoff_usd,] ctx_<name>...

``cf_payoff_usd`` is optional; simulator logs carry it so that oracle replay
can price a counterfactual winner downstream of the logged one.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from .domain import AuctionLog, ContextColumn, ValidationError

BASE_COLUMNS = [
    "request_id",
    "publisher_id",
    "tag_id",
    "position",
    "won",
    "request_payoff_usd",
    "request_num_played",
    "request_waterfall_length",
    "median_bid_usd",
    "cf_would_win",
]
CF_PAYOFF_COLUMN = "cf_payoff_usd"
CTX_PREFIX = "ctx_"


class LogParseError(ValueError):
    """Malformed log file; carries the file name and 1-based line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt_float(values: np.ndarray) -> np.ndarray:
    # repr gives the shortest round-tripping representation
    return np.array(["" if np.isnan(v) else repr(float(v)) for v in values], dtype=object)


def log_to_frame(log: AuctionLog) -> pd.DataFrame:
    req = log.row_request
    cf = log.cf_would_win
    cf_col = np.where(cf < 0, "", cf.astype(str)).astype(object)
    data = {
        "request_id": log.request_ids[req],
        "publisher_id": np.asarray(log.publishers, dtype=object)[log.publisher_code][req]
        if log.n_rows else np.array([], dtype=object),
        "tag_id": np.asarray(log.tags, dtype=object)[log.row_tag] if log.n_rows else np.array([], dtype=object),
        "position": log.position,
        "won": log.won.astype(np.int8),
        "request_payoff_usd": _fmt_float(log.payoff)[req],
        "request_num_played": log.num_played[req],
        "request_waterfall_length": log.waterfall_length[req],
        "median_bid_usd": _fmt_float(log.median_bid)[req],
        "cf_would_win": cf_col,
    }
    if np.any(~np.isnan(log.cf_payoff)):
        data[CF_PAYOFF_COLUMN] = _fmt_float(log.cf_payoff)
    for name, col in log.context.items():
        if col.kind == "categorical":
            cats = np.asarray(list(col.categories) + [""], dtype=object)
            data[CTX_PREFIX + name] = cats[col.codes][req]
        else:
            data[CTX_PREFIX + name] = _fmt_float(col.values)[req]
    return pd.DataFrame(data)


def write_log(log: AuctionLog, path) -> None:
    """Write ``log`` as CSV (atomically)."""
    frame = log_to_frame(log)
    atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def _parse_floats(raw: np.ndarray) -> np.ndarray:
    """Exact decimal-to-double parsing; empty or malformed cells become NaN."""
    raw = np.asarray(raw, dtype=object)
    try:
        return np.where(raw == "", "nan", raw).astype(np.float64)
    except ValueError:
        pass
    out = np.full(len(raw), np.nan)
    for i, cell in enumerate(raw):
        try:
            out[i] = float(cell)
        except ValueError:
            pass
    return out


def _to_numeric(frame: pd.DataFrame, column: str, path, *, integer=False, allow_empty=False):
    raw = frame[column]
    empty = (raw == "").to_numpy()
    values = _parse_floats(raw.to_numpy())
    values[~np.isfinite(values)] = np.nan
    bad = np.isnan(values) & ~(empty & allow_empty)
    if integer:
        with np.errstate(invalid="ignore"):
            bad |= ~np.isnan(values) & (values != np.round(values))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise LogParseError(path, i + 2, f"column {column!r}: cannot parse {raw.iloc[i]!r}")
    return values


def _flag(frame, column, path, allow_empty):
    raw = frame[column].to_numpy()
    ok = (raw == "0") | (raw == "1") | ((raw == "") & allow_empty)
    if not np.all(ok):
        i = int(np.flatnonzero(~ok)[0])
        raise LogParseError(path, i + 2, f"column {column!r}: expected 0/1, got {raw[i]!r}")
    out = np.full(len(raw), -1, dtype=np.int8)
    out[raw == "0"] = 0
    out[raw == "1"] = 1
    return out


def read_log(path, *, validate: bool = True) -> AuctionLog:
    """Read a CSV log.

    Context columns whose non-empty cells all parse as numbers are numeric;
    anything else is categorical.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as exc:
        raise LogParseError(path, None, str(exc)) from exc
    columns = list(frame.columns)
    if columns[: len(BASE_COLUMNS)] != BASE_COLUMNS:
        raise LogParseError(path, 1, f"header must start with {','.join(BASE_COLUMNS)}")
    rest = columns[len(BASE_COLUMNS):]
    has_cf_payoff = bool(rest) and rest[0] == CF_PAYOFF_COLUMN
    if has_cf_payoff:
        rest = rest[1:]
    for c in rest:
        if not c.startswith(CTX_PREFIX) or len(c) == len(CTX_PREFIX):
            raise LogParseError(path, 1, f"unexpected column {c!r}")
    if len(set(columns)) != len(columns):
        raise LogParseError(path, 1, "duplicate column names")

    for c in ("request_id", "publisher_id", "tag_id"):
        empty = frame[c].to_numpy() == ""
        if np.any(empty):
            raise LogParseError(path, int(np.flatnonzero(empty)[0]) + 2, f"column {c!r} is empty")

    position = _to_numeric(frame, "position", path, integer=True)
    won = _flag(frame, "won", path, allow_empty=False)
    payoff = _to_numeric(frame, "request_payoff_usd", path)
    num_played = _to_numeric(frame, "request_num_played", path, integer=True)
    wf_len = _to_numeric(frame, "request_waterfall_length", path, integer=True)
    median_bid = _to_numeric(frame, "median_bid_usd", path, allow_empty=True)
    cf = _flag(frame, "cf_would_win", path, allow_empty=True)
    cf_payoff = (
        _to_numeric(frame, CF_PAYOFF_COLUMN, path, allow_empty=True) if has_cf_payoff else None
    )

    context = {}
    for c in rest:
        name = c[len(CTX_PREFIX):]
        raw = frame[c]
        empty = (raw == "").to_numpy()
        numeric = _parse_floats(raw.to_numpy())
        numeric[~np.isfinite(numeric)] = np.nan
        if len(raw) and np.all(~np.isnan(numeric) | empty) and not np.all(empty):
            context[name] = ContextColumn.numeric(name, numeric)
        else:
            codes, uniques = pd.factorize(raw, sort=True)
            cats = [u for u in uniques if u != ""]
            remap = np.array([cats.index(u) if u != "" else -1 for u in uniques], dtype=np.int32)
            context[name] = ContextColumn(
                name, "categorical", codes=remap[codes] if len(codes) else codes.astype(np.int32),
                categories=tuple(cats),
            )

    try:
        return AuctionLog.from_columns(
            request_id=frame["request_id"].to_numpy(),
            publisher_id=frame["publisher_id"].to_numpy(),
            tag_id=frame["tag_id"].to_numpy(),
            position=position.astype(np.int64),
            won=won.astype(bool),
            request_payoff=payoff,
            request_num_played=num_played.astype(np.int64),
            request_waterfall_length=wf_len.astype(np.int64),
            median_bid=median_bid,
            cf_would_win=cf,
            cf_payoff=cf_payoff,
            context=context,
            validate=validate,
        )
    except ValidationError as exc:
        line = _locate_request_line(frame, str(exc))
        raise LogParseError(path, line, str(exc)) from exc


def _locate_request_line(frame: pd.DataFrame, message: str):
    if message.startswith("request "):
        rid = message[len("request "):].split(":", 1)[0]
        hits = np.flatnonzero(frame["request_id"].to_numpy() == rid)
        if len(hits):
            return int(hits[0]) + 2
    return None
