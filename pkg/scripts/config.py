"""Configuration helpers for the customer-base analysis toolkit.

Provides:
- load_env(): loads from .env (python-dotenv) when present.
- get_thread_count(): CLV_THREADS override for parallel simulation, default 1.
- get_data_dir() / sample_transactions_path(): bundled data locations.
- to_utc(): date parsing shared by the config checks and ingestion.
- PipelineConfig: every resolved command-line setting.
- load_config_file() / resolve_config(): JSON `--config` overrides merged as
  defaults < config file < explicit flags.

The CLV_THREADS variable is the only environment configuration; everything
else is passed explicitly on the command line or in the JSON config file.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd

try:
    from dotenv import load_dotenv
    _HAS_DOTENV = True
except Exception:
    _HAS_DOTENV = False

from scripts.errors import InputError


THREADS_ENV = "CLV_THREADS"

DEFAULT_COLUMNS = {
    "user_id": "user_id",
    "transaction_id": "transaction_id",
    "timestamp": "timestamp",
    "value": "value",
}


def to_utc(value) -> pd.Timestamp:
    """Parse a date or timestamp; naive values are taken as UTC."""
    try:
        ts = pd.Timestamp(value)
    except (TypeError, ValueError) as exc:
        raise InputError(f"Unparseable date {value!r}") from exc
    if pd.isna(ts):
        raise InputError(f"Unparseable date {value!r}")
    return ts.tz_localize("UTC") if ts.tzinfo is None else ts.tz_convert("UTC")


def load_env(project_root: Optional[Path] = None) -> None:
    """Load .env from project root if python-dotenv is installed.

    Non-fatal if python-dotenv isn't available.
    """
    if not _HAS_DOTENV:
        return
    if project_root is None:
        project_root = Path(__file__).resolve().parents[1]
    env_path = project_root / '.env'
    if env_path.exists():
        load_dotenv(dotenv_path=str(env_path))


def get_thread_count() -> int:
    """Return CLV_THREADS as a positive int; 1 when unset or invalid."""
    load_env()
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        count = int(raw)
    except ValueError:
        return 1
    return max(count, 1)


def get_data_dir() -> Path:
    """Return the project data/ directory."""
    return Path(__file__).resolve().parents[1] / 'data'


def sample_transactions_path() -> Path:
    path = get_data_dir() / 'sample_transactions.csv'
    if path.exists():
        return path
    raise FileNotFoundError(f"Expected CSV not found: {path}")


@dataclass
class PipelineConfig:
    input: Optional[str] = None
    output: Optional[str] = None
    columns: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_COLUMNS))
    delimiter: str = ","
    time_unit_days: float = 1.0
    calibration_end: Optional[str] = None
    observation_end: Optional[str] = None
    horizon: float = 30.0
    discount_rate: float = 0.0
    penalizer: float = 0.0
    correlation_threshold: float = 0.1
    seed: int = 42
    format: str = "text"
    stamp: bool = False

    def time_unit(self) -> pd.Timedelta:
        return pd.Timedelta(days=float(self.time_unit_days))

    def validate(self) -> "PipelineConfig":
        if not self.time_unit_days > 0:
            raise InputError("time_unit_days must be positive")
        if self.format not in ("text", "json"):
            raise InputError(f"Unknown output format: {self.format!r}")
        missing = set(DEFAULT_COLUMNS) - set(self.columns)
        if missing:
            raise InputError(f"Column mapping is missing {sorted(missing)}")
        for name in ("calibration_end", "observation_end"):
            if getattr(self, name):
                to_utc(getattr(self, name))
        if self.calibration_end and self.observation_end:
            cal = to_utc(self.calibration_end)
            obs = to_utc(self.observation_end)
            if not cal < obs:
                raise InputError(
                    f"calibration_end ({self.calibration_end}) must be earlier than "
                    f"observation_end ({self.observation_end})"
                )
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def load_config_file(path) -> Dict[str, Any]:
    """Read a JSON object of overrides from `path`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        values = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"Config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(values, dict):
        raise InputError(f"Config file {path} must hold a JSON object")
    return values


def resolve_config(
    file_values: Optional[Dict[str, Any]] = None,
    flag_values: Optional[Dict[str, Any]] = None,
) -> PipelineConfig:
    """
    Merge defaults < config file < explicit flags into a validated PipelineConfig.

    Flags whose value is None count as "not given". Keys that are not
    PipelineConfig fields are ignored; column mappings merge per key.
    """
    known = {f.name for f in fields(PipelineConfig)}
    merged: Dict[str, Any] = {}
    columns = dict(DEFAULT_COLUMNS)
    for source in (file_values or {}, flag_values or {}):
        for key, value in source.items():
            if value is None or key not in known:
                continue
            if key == "columns":
                columns.update({k: v for k, v in value.items() if v is not None})
            else:
                merged[key] = value
    merged["columns"] = columns
    return PipelineConfig(**merged).validate()


# --- Main Test Block ----------------------------------------------------------

if __name__ == "__main__":
    cfg = resolve_config({"horizon": 60, "seed": 7}, {"seed": 11})
    print(json.dumps(cfg.to_dict(), indent=2))
    print(f"Threads: {get_thread_count()}")
    print(f"Data dir: {get_data_dir()}")
