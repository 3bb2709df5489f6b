"""
Experiment file loading and command-line overrides.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import ValidationError

from config.schemas import ExperimentConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Experiment file is malformed or violates a constraint."""


def _validate(data: Dict[str, Any], source: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"{source}: {where}: {first['msg']} ({e.error_count()} error(s))") from e


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read a flat JSON experiment file.

    Raises:
        OSError: file cannot be read
        ConfigError: invalid JSON, unknown keys, or constraint violations
    """
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")

    cfg = _validate(data, str(path))
    logger.info(f"📄 Loaded experiment config {path}")
    return cfg


def apply_overrides(
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    frames: Optional[int] = None,
    output_path: Optional[str] = None,
    workers: Optional[int] = None
) -> ExperimentConfig:
    """Re-validate cfg with the non-None command-line values swapped in."""
    overrides = {
        "rng_seed": seed,
        "frames_per_point": frames,
        "output_path": output_path,
        "workers": workers,
    }
    data = cfg.model_dump()
    data.update({k: v for k, v in overrides.items() if v is not None})
    return _validate(data, "command line")
