"""
Parse transaction logs and reduce them to per-customer RFM statistics.

Columns of an RFM table (one row per customer, ordered by user_id):
  user_id, frequency (repeat purchase days), recency (first to last purchase
  day), T (first purchase day to observation end), monetary_value (mean value
  of the repeat purchase days; 0 without repeats).

Same-day transactions are merged into one purchase day (UTC calendar day)
with the summed value before anything is counted.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd

from scripts.config import DEFAULT_COLUMNS, to_utc
from scripts.errors import DuplicateIdError, FormatError, InputError


RFM_COLUMNS = ["user_id", "frequency", "recency", "T", "monetary_value"]
HOLDOUT_COLUMNS = [
    "user_id",
    "frequency_cal",
    "recency_cal",
    "T_cal",
    "monetary_value_cal",
    "frequency_holdout",
    "duration_holdout",
]
LOG_COLUMNS = ["user_id", "transaction_id", "timestamp", "value"]

ONE_DAY = pd.Timedelta(days=1)


@dataclass
class TransactionLog:
    """Accepted records sorted by (user_id, timestamp) plus the rejected rows."""

    frame: pd.DataFrame
    rejected: pd.DataFrame = field(
        default_factory=lambda: pd.DataFrame(columns=["line", "reason"])
    )

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)

    def __len__(self):
        return len(self.frame)


@dataclass
class CalibrationHoldout:
    rows: pd.DataFrame
    n_excluded: int
    duration_holdout: float


def _check_unit(time_unit) -> pd.Timedelta:
    unit = pd.Timedelta(time_unit)
    if unit <= pd.Timedelta(0):
        raise InputError(f"time_unit must be positive, got {time_unit}")
    return unit


# --- Parsing ------------------------------------------------------------------

def parse_transactions(source, columns: Optional[Dict[str, str]] = None, delimiter: str = ",") -> TransactionLog:
    """
    Read delimiter-separated text with a header row into a TransactionLog.

    Args:
        source: path or text stream.
        columns: maps user_id / transaction_id / timestamp / value to the
            header names used in `source`.
        delimiter: field separator.

    Rows with a missing id, unparseable timestamp, or unparseable, negative or
    non-finite value are rejected and reported with a reason; they are not fatal.

    Raises:
        FormatError: a mapped column is absent from the header.
        DuplicateIdError: a transaction_id appears twice among accepted rows.
    """
    mapping = dict(DEFAULT_COLUMNS)
    mapping.update(columns or {})

    try:
        raw = pd.read_csv(source, sep=delimiter, dtype=str, keep_default_na=False)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise FormatError(f"Cannot read a transaction table from {source}: {exc}") from exc
    missing = [f"{key} ({name!r})" for key, name in mapping.items() if name not in raw.columns]
    if missing:
        raise FormatError(f"Missing required column(s): {', '.join(missing)}")

    frame = pd.DataFrame({key: raw[name].str.strip() for key, name in mapping.items()})
    timestamps = pd.to_datetime(frame["timestamp"], errors="coerce", utc=True, format="ISO8601")
    values = pd.to_numeric(frame["value"], errors="coerce")

    reason = pd.Series("", index=frame.index)
    checks = [
        (frame["user_id"] == "", "missing user_id"),
        (frame["transaction_id"] == "", "missing transaction_id"),
        (timestamps.isna(), "unparseable timestamp"),
        (values.isna(), "unparseable value"),
        (~np.isfinite(values.fillna(0.0)), "non-finite value"),
        (values < 0, "negative value"),
    ]
    for mask, text in checks:
        reason = reason.where(~(mask & (reason == "")), text)

    bad = reason != ""
    # header is line 1
    rejected = pd.DataFrame({"line": frame.index[bad.to_numpy()] + 2, "reason": reason[bad].values})

    accepted = pd.DataFrame({
        "user_id": frame.loc[~bad, "user_id"],
        "transaction_id": frame.loc[~bad, "transaction_id"],
        "timestamp": timestamps[~bad],
        "value": values[~bad].astype(float),
    })
    dup = accepted["transaction_id"].duplicated()
    if dup.any():
        raise DuplicateIdError(accepted.loc[dup, "transaction_id"].iloc[0])

    accepted = accepted.sort_values(
        ["user_id", "timestamp", "transaction_id"], kind="mergesort"
    ).reset_index(drop=True)
    return TransactionLog(frame=accepted, rejected=rejected.reset_index(drop=True))


# --- RFM summaries ------------------------------------------------------------

def _frame(log) -> pd.DataFrame:
    return log.frame if isinstance(log, TransactionLog) else log


def _purchase_day_table(frame: pd.DataFrame) -> pd.DataFrame:
    """One row per (user_id, UTC calendar day) with summed value and the day's first timestamp."""
    days = frame.assign(day=frame["timestamp"].dt.floor("D"))
    grouped = days.groupby(["user_id", "day"], sort=True)
    return grouped.agg(value=("value", "sum"), first_time=("timestamp", "min")).reset_index()


def _rfm_from_days(days: pd.DataFrame, observation_end: pd.Timestamp, unit: pd.Timedelta) -> pd.DataFrame:
    if days.empty:
        return pd.DataFrame(columns=RFM_COLUMNS)
    grouped = days.groupby("user_id", sort=True)["day"]
    stats = grouped.agg(n_days="size", first="min", last="max")

    first = days["user_id"].map(stats["first"])
    repeat = days[days["day"] > first]
    monetary = repeat.groupby("user_id")["value"].mean().reindex(stats.index, fill_value=0.0)

    return pd.DataFrame({
        "user_id": stats.index.values,
        "frequency": (stats["n_days"] - 1).astype(int).values,
        "recency": ((stats["last"] - stats["first"]) / unit).astype(float).values,
        "T": ((observation_end - stats["first"]) / unit).astype(float).values,
        "monetary_value": monetary.astype(float).values,
    })


def summarize_rfm(log, observation_end, time_unit=ONE_DAY) -> pd.DataFrame:
    """
    Per-customer RFM table observed up to `observation_end`.

    Raises:
        InputError: a transaction is later than observation_end, or time_unit <= 0.
    """
    unit = _check_unit(time_unit)
    frame = _frame(log)
    observation_end = to_utc(observation_end)
    if frame.empty:
        return pd.DataFrame(columns=RFM_COLUMNS)
    latest = frame["timestamp"].max()
    if latest > observation_end:
        raise InputError(f"Transaction at {latest} is later than observation_end {observation_end}")
    return _rfm_from_days(_purchase_day_table(frame), observation_end, unit)


def calibration_holdout_summary(log, calibration_end, observation_end, time_unit=ONE_DAY) -> CalibrationHoldout:
    """
    Calibration statistics up to `calibration_end` plus holdout purchase-day
    counts in (calibration_end, observation_end].

    Transactions are merged into purchase days first; a day belongs to the
    calibration period when its first transaction is at or before
    calibration_end, so a day straddling the cutoff is counted once. Customers
    whose first purchase falls after calibration_end are excluded and counted
    in `n_excluded`.
    """
    unit = _check_unit(time_unit)
    calibration_end = to_utc(calibration_end)
    observation_end = to_utc(observation_end)
    if not calibration_end < observation_end:
        raise InputError(
            f"calibration_end {calibration_end} must be earlier than observation_end {observation_end}"
        )
    frame = _frame(log)
    duration = float((observation_end - calibration_end) / unit)
    if frame.empty:
        return CalibrationHoldout(pd.DataFrame(columns=HOLDOUT_COLUMNS), 0, duration)
    latest = frame["timestamp"].max()
    if latest > observation_end:
        raise InputError(f"Transaction at {latest} is later than observation_end {observation_end}")

    days = _purchase_day_table(frame)
    in_cal = days["first_time"] <= calibration_end
    cal = _rfm_from_days(days[in_cal], calibration_end, unit)
    n_excluded = int(frame["user_id"].nunique() - len(cal))

    holdout_days = days[~in_cal]
    holdout_counts = (
        holdout_days.groupby("user_id").size()
        .reindex(cal["user_id"], fill_value=0)
        .astype(int)
        .values
    )

    rows = pd.DataFrame({
        "user_id": cal["user_id"].values,
        "frequency_cal": cal["frequency"].values,
        "recency_cal": cal["recency"].values,
        "T_cal": cal["T"].values,
        "monetary_value_cal": cal["monetary_value"].values,
        "frequency_holdout": holdout_counts,
        "duration_holdout": duration,
    }, columns=HOLDOUT_COLUMNS)
    return CalibrationHoldout(rows=rows, n_excluded=n_excluded, duration_holdout=duration)


def purchase_days(log, user_id: str, time_unit=ONE_DAY) -> tuple:
    """
    Merged purchase-day times of one customer in time units since the first
    purchase day, plus that first day as a UTC timestamp.
    """
    unit = _check_unit(time_unit)
    frame = _frame(log)
    own = frame[frame["user_id"] == user_id]
    if own.empty:
        raise InputError(f"No transactions for user_id {user_id!r}")
    days = _purchase_day_table(own)["day"]
    origin = days.iloc[0]
    return ((days - origin) / unit).astype(float).to_numpy(), origin


def _read_table(path, columns, kind: str) -> pd.DataFrame:
    try:
        if str(path).endswith((".json", ".jsonl")):
            table = pd.read_json(path, lines=True, dtype={"user_id": str})
        else:
            table = pd.read_csv(path, dtype={"user_id": str})
    except (pd.errors.EmptyDataError, pd.errors.ParserError, ValueError) as exc:
        raise FormatError(f"Cannot read a {kind} table from {path}: {exc}") from exc
    missing = [c for c in columns if c not in table.columns]
    if missing:
        raise FormatError(f"{kind} table {path} is missing column(s): {missing}")
    return table[columns]


def read_rfm(path) -> pd.DataFrame:
    """Load an RFM table written by `summarize` (CSV, or JSON lines for .json/.jsonl)."""
    return _read_table(path, RFM_COLUMNS, "RFM")


def read_holdout(path) -> pd.DataFrame:
    """Load a calibration/holdout table written by `summarize --calibration-end`."""
    return _read_table(path, HOLDOUT_COLUMNS, "calibration/holdout")


# --- Main Test Block ----------------------------------------------------------

if __name__ == "__main__":
    import io
    import sys

    if len(sys.argv) > 1:
        source = sys.argv[1]
    else:
        source = io.StringIO(
            "user_id,transaction_id,timestamp,value\n"
            "u1,t1,2022-01-01T10:00:00Z,5\n"
            "u1,t2,2022-01-11T09:00:00Z,7\n"
            "u1,t3,2022-01-31T12:00:00Z,9\n"
            "u2,t4,2022-01-05T08:00:00Z,abc\n"
        )
        print("No input provided. Testing with an inline example.\n")

    log = parse_transactions(source)
    print(f"Accepted {len(log)} rows, rejected {log.n_rejected}")
    print(log.rejected.to_string(index=False))
    end = log.frame["timestamp"].max().floor("D") + pd.Timedelta(days=9)
    print(summarize_rfm(log, end).to_string(index=False))
