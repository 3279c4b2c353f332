"""Shipped fixture configurations (``sigmaflow <cmd> --config fixture:NAME``)."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import yaml

from ..config import parse_config
from ..errors import ConfigError

__all__ = ["names", "load", "text"]


def names():
    return sorted(p.name[:-5] for p in resources.files(__name__).iterdir() if p.name.endswith(".yaml"))


def text(name):
    if name not in names():
        raise ConfigError(f"unknown fixture {name!r} (available: {', '.join(names())})")
    return resources.files(__name__).joinpath(f"{name}.yaml").read_text()


def load(name, seed=None, base_dir=None):
    """Parsed :class:`RunConfig` of a fixture; relative paths resolve against ``base_dir`` (cwd)."""
    return parse_config(yaml.safe_load(text(name)), base_dir=base_dir or Path.cwd(), seed=seed)
