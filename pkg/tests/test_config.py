"""
Configuration layering and environment helpers.

`pytest tests/test_config.py`
"""
import json

import pandas as pd
import pytest

from scripts.config import (
    DEFAULT_COLUMNS,
    PipelineConfig,
    get_data_dir,
    get_thread_count,
    load_config_file,
    resolve_config,
    to_utc,
)
from scripts.errors import InputError


def test_defaults():
    cfg = resolve_config()
    assert cfg == PipelineConfig()
    assert cfg.columns == DEFAULT_COLUMNS
    assert cfg.horizon == 30.0 and cfg.seed == 42 and cfg.format == "text"
    assert not cfg.stamp


def test_flags_override_file_override_defaults():
    cfg = resolve_config({"horizon": 60, "seed": 7, "penalizer": 0.5}, {"seed": 11, "penalizer": None})
    assert cfg.horizon == 60
    assert cfg.seed == 11
    assert cfg.penalizer == 0.5


def test_column_mappings_merge_per_key():
    cfg = resolve_config({"columns": {"user_id": "customer"}}, {"columns": {"value": "amount"}})
    assert cfg.columns == {**DEFAULT_COLUMNS, "user_id": "customer", "value": "amount"}


def test_unknown_keys_are_ignored():
    assert resolve_config({"no_such_option": 1}) == PipelineConfig()


@pytest.mark.parametrize("values", [
    {"time_unit_days": 0},
    {"format": "xml"},
    {"calibration_end": "2022-06-01", "observation_end": "2022-05-01"},
    {"calibration_end": "2022-06-01", "observation_end": "2022-06-01"},
    {"observation_end": "not-a-date"},
    {"calibration_end": "2022-13-45"},
])
def test_validation(values):
    with pytest.raises(InputError):
        resolve_config(values)


def test_time_unit():
    assert PipelineConfig(time_unit_days=7).time_unit().days == 7


def test_to_utc():
    assert to_utc("2022-01-10") == pd.Timestamp("2022-01-10", tz="UTC")
    assert to_utc("2022-01-10T05:00:00-05:00") == pd.Timestamp("2022-01-10T10:00:00", tz="UTC")
    for bad in ("not-a-date", None, ""):
        with pytest.raises(InputError):
            to_utc(bad)


def test_mixed_naive_and_offset_dates_compare():
    cfg = resolve_config({"calibration_end": "2022-01-10", "observation_end": "2022-02-01T00:00:00+02:00"})
    assert cfg.calibration_end == "2022-01-10"


def test_load_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"horizon": 90}))
    assert load_config_file(path) == {"horizon": 90}


def test_load_config_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config_file(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InputError):
        load_config_file(bad)
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(InputError):
        load_config_file(listing)


@pytest.mark.parametrize("raw, expected", [("4", 4), ("0", 1), ("-3", 1), ("many", 1)])
def test_thread_count_from_environment(monkeypatch, raw, expected):
    monkeypatch.setenv("CLV_THREADS", raw)
    assert get_thread_count() == expected


def test_data_dir_holds_sample():
    assert (get_data_dir() / "sample_transactions.csv").exists()


# --- Main Test Block ----------------------------------------------------------

if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
