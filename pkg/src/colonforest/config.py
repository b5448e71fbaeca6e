"""Run configuration: built-in defaults, overlaid by a YAML file, then by flags."""
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from .errors import ColonForestError, ConfigError
from .estimator import SmootherParams
from .forest import ForestParams
from .registration import IcpParams
from .simulator import InsertionConfig, PhantomConfig

CONFIG_ENV_VAR = "COLONFOREST_CONFIG"


@dataclass(frozen=True)
class RunConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    insertion: InsertionConfig = field(default_factory=InsertionConfig)
    n_insertions: int = 7
    forest: ForestParams = field(default_factory=ForestParams)
    center_features: bool = False
    smoother: SmootherParams = field(default_factory=SmootherParams)
    icp: IcpParams = field(default_factory=IcpParams)
    # None: shapes are already in the reference frame; "phantom": align to the
    # centerline echoed in the sequence header; otherwise a path to an xyz file
    icp_target: Optional[str] = None
    jump_threshold: float = 50.0

    def to_dict(self):
        return {
            "phantom": self.phantom.to_dict(),
            "insertion": self.insertion.to_dict(),
            "simulate": {"n_insertions": self.n_insertions},
            "forest": self.forest.to_dict(),
            "features": {"center": self.center_features},
            "smoother": {"window": self.smoother.window, "mode": self.smoother.mode},
            "icp": {
                "max_iterations": self.icp.max_iterations,
                "convergence_tol": self.icp.convergence_tol,
                "target": self.icp_target,
            },
            "validation": {"jump_threshold": self.jump_threshold},
        }


_SECTIONS = {
    "phantom": ("phantom", PhantomConfig),
    "insertion": ("insertion", InsertionConfig),
    "forest": ("forest", ForestParams),
    "smoother": ("smoother", SmootherParams),
}


def _update(obj, section, values):
    if not isinstance(values, dict):
        raise ConfigError("section must be a mapping", section)
    known = {f.name for f in fields(obj)}
    for key in values:
        if key not in known:
            raise ConfigError("unknown key", f"{section}.{key}")
    for key, v in values.items():
        try:
            obj = replace(obj, **{key: v})
        except (ColonForestError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc), f"{section}.{key}") from None
    return obj


def apply_mapping(cfg, data):
    """Overlay a parsed config mapping onto ``cfg``."""
    if data is None:
        return cfg
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    changes = {}
    for section, values in data.items():
        if section in _SECTIONS:
            attr, _ = _SECTIONS[section]
            changes[attr] = _update(changes.get(attr, getattr(cfg, attr)), section, values)
        elif section == "simulate":
            for key, v in (values or {}).items():
                if key != "n_insertions":
                    raise ConfigError("unknown key", f"simulate.{key}")
                if not isinstance(v, int) or v < 1:
                    raise ConfigError("must be an integer >= 1", "simulate.n_insertions")
                changes["n_insertions"] = v
        elif section == "features":
            for key, v in (values or {}).items():
                if key != "center":
                    raise ConfigError("unknown key", f"features.{key}")
                changes["center_features"] = bool(v)
        elif section == "icp":
            values = dict(values or {})
            if "target" in values:
                changes["icp_target"] = values.pop("target")
            changes["icp"] = _update(cfg.icp, "icp", values)
        elif section == "validation":
            for key, v in (values or {}).items():
                if key != "jump_threshold":
                    raise ConfigError("unknown key", f"validation.{key}")
                changes["jump_threshold"] = float(v)
        else:
            raise ConfigError("unknown section", section)
    return replace(cfg, **changes)


def load_config(path=None, overrides=None):
    """Resolve the run configuration.

    ``path`` falls back to the ``COLONFOREST_CONFIG`` environment variable.
    ``overrides`` uses the same nested layout as the file and wins over it.
    """
    cfg = RunConfig()
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if path:
        p = Path(path)
        try:
            data = yaml.safe_load(p.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc.strerror}", str(p)) from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}", str(p)) from None
        cfg = apply_mapping(cfg, data)
    if overrides:
        cfg = apply_mapping(cfg, overrides)
    return cfg
