"""Run configuration: one YAML document covering every module.

Every key is optional. Missing keys take the defaults in :data:`DEFAULTS`;
unknown keys are rejected with an error naming the full dotted key.
"""
from __future__ import annotations

import copy
from typing import Any, Dict, Optional

import yaml

from .decoder import DecoderConfig
from .field import Grid2D
from .sim import NoiseSpec, TargetSpec, SUBSET_DEFOCUS_UM
from .solvers import RmsPropConfig, WirtingerConfig
from .zernike import PupilGeometry


class ConfigError(ValueError):
    """Configuration could not be parsed or validated."""


# Desk-scale defaults: 128 px grid with the decoder scaled to match
# (8 -> 128 px in 4 upsampling layers plus one plain layer).
DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "grid": {"width": 128, "height": 128, "pixel_size": 0.1625, "wavelength": 0.514},
    "geometry": {"na": 0.65},
    "defocus_um": list(SUBSET_DEFOCUS_UM),
    "target": {"kind": "disk-array", "contrast": 0.95, "feature_scale": 8, "path": None},
    "noise": {"model": "none", "parameter": 0.0, "rng_seed": 0},
    "zernike": {"modes": 9},
    "decoder": {"channels": 32, "seed_side": 8, "layers": 5, "upsample_factor": 2},
    "optimizer": {
        "learning_rate": 1e-3, "decay": 0.99, "epsilon": 1e-8, "iterations": 50_000,
        "log_every": 100, "zernike_lr_scale": 1.0, "init_std": 0.1,
        "precision": "single", "defocus_sign": None,
    },
    "wirtinger": {"step_size": None, "iterations": 500, "tolerance": 1e-12,
                  "log_every": 10, "max_halvings": 20},
}

# keys whose value may be null
_NULLABLE = {"target.path", "optimizer.defocus_sign", "wirtinger.step_size", "defocus_um"}


def _check_value(key: str, default, value):
    if value is None:
        if key in _NULLABLE:
            return None
        raise ConfigError(f"{key}: null is not allowed")
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"{key}: booleans are not accepted here")
    if key == "defocus_um":
        if not isinstance(value, list) or not value:
            raise ConfigError("defocus_um: expected a nonempty list of numbers")
        for z in value:
            if isinstance(z, bool) or not isinstance(z, (int, float)):
                raise ConfigError(f"defocus_um: {z!r} is not a number")
        return [float(z) for z in value]
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float) or (default is None and key != "target.path"):
        if key == "optimizer.defocus_sign":
            if value not in (1, -1):
                raise ConfigError(f"{key}: expected 1, -1 or null, got {value!r}")
            return int(value)
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def _merge(defaults: dict, doc: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in doc.items():
        full = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown key {full!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{full}: expected a mapping")
            out[key] = _merge(defaults[key], value, full + ".")
        else:
            out[key] = _check_value(full, defaults[key], value)
    return out


class RunConfig:
    """Validated configuration; ``data`` holds the full, defaults-filled document."""

    def __init__(self, data: Optional[dict] = None):
        if data is not None and not isinstance(data, dict):
            raise ConfigError("configuration document must be a mapping")
        self.data = _merge(DEFAULTS, data or {})
        self._validate()

    # ---------------------------------------------------------- builders
    def grid(self) -> Grid2D:
        return Grid2D(**self.data["grid"])

    def geometry(self) -> PupilGeometry:
        return PupilGeometry(self.grid(), self.data["geometry"]["na"])

    def target(self) -> TargetSpec:
        return TargetSpec(**self.data["target"])

    def noise(self) -> NoiseSpec:
        return NoiseSpec(**self.data["noise"])

    def decoder(self, output_side: Optional[int] = None) -> DecoderConfig:
        d = self.data["decoder"]
        side = output_side if output_side is not None else self.data["grid"]["width"]
        return DecoderConfig(channels=d["channels"], seed_side=d["seed_side"],
                             output_side=side, layers=d["layers"],
                             upsample_factor=d["upsample_factor"], rng_seed=self.data["seed"])

    def rmsprop(self) -> RmsPropConfig:
        o = self.data["optimizer"]
        return RmsPropConfig(learning_rate=o["learning_rate"], decay=o["decay"],
                             epsilon=o["epsilon"], iterations=o["iterations"],
                             log_every=o["log_every"], zernike_lr_scale=o["zernike_lr_scale"])

    def wirtinger(self) -> WirtingerConfig:
        return WirtingerConfig(**self.data["wirtinger"])

    @property
    def defocus_um(self):
        return self.data["defocus_um"]

    @property
    def zernike_modes(self) -> int:
        return self.data["zernike"]["modes"]

    # --------------------------------------------------------- overrides
    def with_overrides(self, seed: Optional[int] = None,
                       iterations: Optional[int] = None) -> "RunConfig":
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["seed"] = seed
        if iterations is not None:
            data["optimizer"]["iterations"] = iterations
            data["wirtinger"]["iterations"] = iterations
        return RunConfig(data)

    def _validate(self):
        o = self.data["optimizer"]
        try:
            self.grid()
            self.geometry()
            self.target()
            self.noise()
            self.decoder()
            self.rmsprop()
            self.wirtinger()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if o["precision"] not in ("single", "double"):
            raise ConfigError("optimizer.precision: expected 'single' or 'double'")
        if o["init_std"] < 0:
            raise ConfigError("optimizer.init_std: must be >= 0")
        if not 1 <= self.zernike_modes <= 36:
            raise ConfigError("zernike.modes: must lie in [1, 36]")

    # ------------------------------------------------------ serialization
    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False, default_flow_style=None)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.data == other.data

    def __repr__(self):
        return f"RunConfig({self.data!r})"


def parse_config(text: str) -> RunConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc
    return RunConfig(doc or {})


def load_config(path: Optional[str]) -> RunConfig:
    """Read a config file; ``None`` gives the defaults. I/O errors propagate as OSError."""
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())
