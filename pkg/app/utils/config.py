"""
Runtime settings and logging setup.
Settings come from environment variables, optionally loaded from a .env file.
"""
import os
import sys
from dataclasses import dataclass, asdict
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from loguru import logger

PROJECT_ROOT = Path(__file__).resolve().parents[2]

LOG_FORMAT = (
    "<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | "
    "<cyan>{name}</cyan> - <level>{message}</level>"
)


@dataclass(frozen=True)
class Settings:
    """Environment-level settings shared by the CLI, the dashboard and the harness"""
    results_dir: Path
    state_dir: Path
    workers: int = 1
    gram_cap: int = 32768
    rip_cap: int = 100_000
    log_level: str = "INFO"

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["results_dir"] = str(self.results_dir)
        data["state_dir"] = str(self.state_dir)
        return data


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {name}={raw!r}, using {default}")
        return default
    if value < 1:
        logger.warning(f"Ignoring non-positive {name}={value}, using {default}")
        return default
    return value


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    Load settings from the environment (and .env if present).

    Returns:
        Settings instance, cached for the process lifetime
    """
    load_dotenv()

    results_dir = Path(os.getenv("GMP_RESULTS_DIR", str(PROJECT_ROOT / "results")))
    state_dir = Path(os.getenv("GMP_STATE_DIR", str(PROJECT_ROOT / "state")))

    return Settings(
        results_dir=results_dir,
        state_dir=state_dir,
        workers=_env_int("GMP_WORKERS", 1),
        gram_cap=_env_int("GMP_GRAM_CAP", 32768),
        rip_cap=_env_int("GMP_RIP_CAP", 100_000),
        log_level=os.getenv("GMP_LOG_LEVEL", "INFO").upper(),
    )


def configure_logging(level: Optional[str] = None) -> None:
    """Replace loguru's default sink with a single stderr sink at the given level"""
    level = (level or get_settings().log_level).upper()
    logger.remove()
    logger.add(sys.stderr, level=level, format=LOG_FORMAT)
