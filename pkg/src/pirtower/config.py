"""Tower configuration files.

YAML with explicit units in key names (``focal_length_m``, ``k2_per_s``...).
Unknown keys are rejected; errors carry the offending key path and, for
syntax problems, the line number.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import yaml

from .optics import Channel, LensSystem, PixelPair, SensorTowerConfig
from .radiometry import RadiometryParams, SensorResponseParams

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "sample_rate_hz", "samples_per_event", "lenses", "channels",
             "sensor_response", "radiometry"}
_LENS_KEYS = {"kind", "focal_point_m", "focal_length_m", "lenslet_azimuths_deg", "aperture_area_m2",
              "transmission", "filter_fraction"}
_CHANNEL_KEYS = {"lens", "pixel_width_m", "pixel_height_m", "pixel_gap_m", "vertical_offset_m"}
_RESPONSE_KEYS = {"k1_per_w_s", "k2_per_s", "k3_per_w_s", "k4_per_s", "gain", "agc_target_fraction",
                  "clip_low_v", "clip_high_v", "dc_offset_v", "noise_std_v"}
_RADIOMETRY_KEYS = {"atmospheric_attenuation", "background_temperature_k", "object_temperature_k"}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration file."""


@dataclass(frozen=True)
class SimulationConfig:
    tower: SensorTowerConfig
    sensor_response: SensorResponseParams
    radiometry: RadiometryParams
    raw: Dict[str, Any]

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def lens_radiometry(self, lens_name: str, t_obj: Optional[float] = None) -> RadiometryParams:
        lens = self.tower.lenses[lens_name]
        base = self.radiometry
        return RadiometryParams(tau=base.tau, eta=lens.transmission, filter_fraction=lens.filter_fraction,
                                aperture_area=lens.aperture_area,
                                t_obj=base.t_obj if t_obj is None else t_obj, t_b=base.t_b)


def config_hash(raw: Dict[str, Any]) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _check_keys(section: Dict[str, Any], allowed, required, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    missing = sorted(set(required) - set(section))
    if missing:
        raise ConfigError(f"{where}: missing key(s) {', '.join(missing)}")


def _num(section, key, where) -> float:
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {val!r}")
    return float(val)


def parse_config(raw: Dict[str, Any]) -> SimulationConfig:
    """Build and validate a :class:`SimulationConfig` from a parsed mapping."""
    _check_keys(raw, _TOP_KEYS, _TOP_KEYS, "config")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"config.schema_version: unsupported version {raw['schema_version']!r}")

    lenses = {}
    if not isinstance(raw["lenses"], dict):
        raise ConfigError("config.lenses: expected a mapping")
    for name, sec in raw["lenses"].items():
        where = f"lenses.{name}"
        _check_keys(sec, _LENS_KEYS, _LENS_KEYS, where)
        fp = sec["focal_point_m"]
        if not (isinstance(fp, list) and len(fp) == 3):
            raise ConfigError(f"{where}.focal_point_m: expected [x, y, z]")
        az = sec["lenslet_azimuths_deg"]
        if not isinstance(az, list) or not az:
            raise ConfigError(f"{where}.lenslet_azimuths_deg: expected a non-empty list")
        lenses[name] = LensSystem(
            kind=str(sec["kind"]), focal_point=tuple(float(x) for x in fp),
            focal_length=_num(sec, "focal_length_m", where),
            lenslet_azimuths=tuple(float(np.deg2rad(a)) for a in az),
            aperture_area=_num(sec, "aperture_area_m2", where),
            transmission=_num(sec, "transmission", where),
            filter_fraction=_num(sec, "filter_fraction", where))

    channels = []
    if not isinstance(raw["channels"], dict):
        raise ConfigError("config.channels: expected a mapping")
    for name, sec in raw["channels"].items():
        where = f"channels.{name}"
        _check_keys(sec, _CHANNEL_KEYS, _CHANNEL_KEYS, where)
        pixels = PixelPair.from_dimensions(_num(sec, "pixel_width_m", where), _num(sec, "pixel_height_m", where),
                                           _num(sec, "pixel_gap_m", where), _num(sec, "vertical_offset_m", where))
        channels.append(Channel(str(name), pixels, str(sec["lens"])))

    tower = SensorTowerConfig(tuple(channels), lenses, sample_rate=float(raw["sample_rate_hz"]),
                              samples_per_event=int(raw["samples_per_event"]))

    sr = raw["sensor_response"]
    _check_keys(sr, _RESPONSE_KEYS, _RESPONSE_KEYS - {"agc_target_fraction"}, "sensor_response")
    rad = raw["radiometry"]
    _check_keys(rad, _RADIOMETRY_KEYS, _RADIOMETRY_KEYS, "radiometry")
    try:
        tower.validate()
        agc = sr.get("agc_target_fraction")
        response = SensorResponseParams(
            k1=_num(sr, "k1_per_w_s", "sensor_response"), k2=_num(sr, "k2_per_s", "sensor_response"),
            k3=_num(sr, "k3_per_w_s", "sensor_response"), k4=_num(sr, "k4_per_s", "sensor_response"),
            gain=_num(sr, "gain", "sensor_response"),
            clip_low=_num(sr, "clip_low_v", "sensor_response"), clip_high=_num(sr, "clip_high_v", "sensor_response"),
            dc_offset=_num(sr, "dc_offset_v", "sensor_response"),
            noise_std=_num(sr, "noise_std_v", "sensor_response"),
            agc_target_fraction=None if agc is None else float(agc))
        radiometry = RadiometryParams(
            tau=_num(rad, "atmospheric_attenuation", "radiometry"),
            t_b=_num(rad, "background_temperature_k", "radiometry"),
            t_obj=_num(rad, "object_temperature_k", "radiometry"))
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return SimulationConfig(tower, response, radiometry, raw)


def load_config(path: Union[str, Path, None] = None) -> SimulationConfig:
    """Load a tower configuration; ``None`` loads the packaged default."""
    if path is None:
        text = resources.files("pirtower").joinpath("data/tower_default.yaml").read_text()
        source = "<default>"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from exc
        source = str(path)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}:{line} {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return parse_config(raw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def default_config() -> SimulationConfig:
    return load_config(None)
