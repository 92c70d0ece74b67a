"""Flat pipeline configuration: defaults, TOML file, ``--key=value`` overrides."""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from ._validation import check_interval, check_positive
from .classifier import DEFAULT_LAMBDA, DEFAULT_PALETTE, DEFAULT_POOL, DEFAULT_TIMEOUT_S, format_palette, parse_palette
from .clustering import DEFAULT_MIN_POINTS, DEFAULT_TAU, ClusterParams
from .evaluation import DEFAULT_IOU_THRESH
from .exceptions import ConfigError
from .proposal import ProposalParams

__all__ = ["PipelineConfig", "load_config"]

BACKENDS = ("stub", "external")


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the pipeline. Keys match the config file and CLI flags."""

    tau: float = DEFAULT_TAU
    min_points: int = DEFAULT_MIN_POINTS
    min_fraction: float = 0.02
    corner_frac: float = 0.15
    margin_frac: float = 0.02
    drop_behind_camera: bool = True
    backend: str = "stub"
    lambda_: float = DEFAULT_LAMBDA
    palette: str = format_palette(DEFAULT_PALETTE)
    external_cmd: str = ""
    timeout_s: float = DEFAULT_TIMEOUT_S
    pool_size: int = DEFAULT_POOL
    iou_thresh: float = DEFAULT_IOU_THRESH
    class_aware: bool = True
    cloud: str = ""
    image: str = ""
    calib: str = ""
    gt: str = ""
    out: str = ""
    frame: str = ""

    def __post_init__(self):
        check_positive(self.tau, "tau")
        check_positive(self.min_points, "min_points", integer=True)
        # component parameter objects carry their own range checks
        self.proposal_params()
        check_interval(self.lambda_, "lambda", 0.0, 1.0)
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.backend == "external" and not self.external_cmd.strip():
            raise ConfigError("backend 'external' needs external_cmd")
        parse_palette(self.palette)
        check_positive(self.timeout_s, "timeout_s")
        check_positive(self.pool_size, "pool_size", integer=True)
        check_interval(self.iou_thresh, "iou_thresh", 0.0, 1.0, closed=(False, True))

    def cluster_params(self) -> ClusterParams:
        return ClusterParams(self.tau, self.min_points)

    def proposal_params(self) -> ProposalParams:
        return ProposalParams(self.min_fraction, self.corner_frac, self.margin_frac, self.drop_behind_camera)

    def palette_dict(self):
        return parse_palette(self.palette)

    def replace(self, **changes) -> "PipelineConfig":
        return _build({**self.as_dict(), **changes})

    def as_dict(self) -> dict:
        return {_key(f.name): getattr(self, f.name) for f in fields(self)}


def _key(field_name):
    return "lambda" if field_name == "lambda_" else field_name


def _field(key):
    return "lambda_" if key == "lambda" else key


_TYPES = {_key(f.name): f.type for f in fields(PipelineConfig)}
KEYS = tuple(_TYPES)


def _coerce(key, value):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("true", "1", "yes", "on"):
                return True
            if text in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if not isinstance(value, (str, int, float)) or isinstance(value, bool):
            raise ValueError(value)
        return str(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {value!r} as {kind}") from None


def _build(values: dict) -> PipelineConfig:
    unknown = sorted(set(values) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs = {_field(k): _coerce(k, v) for k, v in values.items()}
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def parse_overrides(pairs) -> dict:
    """``["tau=0.05", "backend=stub"]`` -> dict (values still strings)."""
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        key = key.strip().lstrip("-").replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"override {pair!r} is not key=value")
        out[key] = value
    return out


def load_config(path=None, overrides=None) -> PipelineConfig:
    """Defaults, then the flat TOML file at ``path``, then ``overrides``."""
    values = {}
    if path:
        try:
            doc = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        nested = [k for k, v in doc.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"{path}: tables are not supported ({', '.join(nested)})")
        values.update(doc)
    values.update(overrides or {})
    return _build(values)

