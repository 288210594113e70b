# wmsn/config.py
"""
Network configuration loading.

Config files are YAML. A bare name such as ``six_node`` or ``six_node.cfg`` that does
not exist on disk resolves to the copy bundled in ``wmsn/data``; ``fig2.cfg``
is accepted as another name for ``six_node.cfg``.
"""

import logging
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Union

import yaml
from pydantic import ValidationError

from .errors import ConfigError
from .models import NetworkConfig

logger = logging.getLogger(__name__)

BUNDLED_CONFIGS = ("six_node.cfg",)
# published file names that load a bundled config
BUNDLED_ALIASES = {"fig2.cfg": "six_node.cfg"}


def resolve_config_path(path: Union[str, Path]) -> Path:
    candidate = Path(path)
    if candidate.exists():
        return candidate
    name = candidate.name if candidate.suffix else f"{candidate.name}.cfg"
    name = BUNDLED_ALIASES.get(name, name)
    if name in BUNDLED_CONFIGS:
        return Path(str(resources.files("wmsn") / "data" / name))
    raise ConfigError(f"config file not found: {path}")


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err.get("loc", ()))
        msg = str(err.get("msg", "")).removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}" if loc else msg)
    return "; ".join(parts)


def config_from_dict(data: Dict[str, Any]) -> NetworkConfig:
    try:
        return NetworkConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid network config: {_format_validation_error(exc)}") from exc


def load_config(path: Union[str, Path]) -> NetworkConfig:
    """Parse and validate a network config file."""
    resolved = resolve_config_path(path)
    try:
        raw = yaml.safe_load(resolved.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {resolved}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {resolved}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{resolved}: top level must be a mapping")
    raw.setdefault("name", resolved.stem)
    config = config_from_dict(raw)
    logger.info(
        "Loaded config %s: %d nodes, %d links, %d sessions",
        config.name, len(config.nodes), len(config.links), len(config.sessions),
    )
    return config
