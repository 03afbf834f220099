'''
Purpose:
Default configuration and the typed settings read out of a Flask config.
'''

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Optional

from digiwallet.domain import WalletEngineError
from digiwallet.gateway import FaultConfig
from digiwallet.investments import BusinessCalendar
from digiwallet.ledger import parse_timestamp
from digiwallet.transactions import RetryPolicy

DEFAULTS = {
    "STATE_DIR": ".digiwallet",
    "MAX_ATTEMPTS": 3,
    "GW_FAIL_NEXT_K": 0,
    "GW_FAIL_PROB": "0",
    "GW_SEED": 0,
    "HOLIDAYS_FILE": None,
    "NOW": None,
    "LOG_LEVEL": "WARNING",
}


class ConfigError(WalletEngineError):
    pass


@dataclass(frozen=True)
class Settings:
    state_dir: Path
    retry_policy: RetryPolicy
    fault_config: FaultConfig
    calendar: BusinessCalendar
    now: Optional[datetime]
    log_level: int


def parse_probability(value: Any) -> Fraction:
    # str() first so a float from the environment keeps its decimal spelling
    return Fraction(str(value).strip())


def parse_log_level(value: Any) -> int:
    level = logging.getLevelName(str(value).upper())
    if not isinstance(level, int):
        raise ValueError(f"unknown log level {value!r}")
    return level


def load_settings(config: Mapping[str, Any]) -> Settings:
    try:
        holidays_file = config.get("HOLIDAYS_FILE")
        now = config.get("NOW")
        return Settings(
            state_dir=Path(config["STATE_DIR"]),
            retry_policy=RetryPolicy(max_attempts=int(config["MAX_ATTEMPTS"])),
            fault_config=FaultConfig(
                fail_next_k=int(config["GW_FAIL_NEXT_K"]),
                fail_probability=parse_probability(config["GW_FAIL_PROB"]),
                seed=int(config["GW_SEED"]),
            ),
            calendar=BusinessCalendar.from_file(Path(holidays_file)) if holidays_file else BusinessCalendar(),
            now=parse_timestamp(str(now)) if now else None,
            log_level=parse_log_level(config["LOG_LEVEL"]),
        )
    except (KeyError, ValueError, TypeError, ZeroDivisionError, OSError) as e:
        raise ConfigError(f"{type(e).__name__}: {e}") from e
