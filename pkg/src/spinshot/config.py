"""Structured-text configuration: `[section]` headers and `key = value`
pairs, `#` comments, comma-separated number lists.

Parse errors carry the origin and line number.  Builders below turn
sections into the typed parameter objects of the other modules; a
config name that does not exist on disk falls back to the packaged
presets (so `--config paper.cfg` works from any directory).
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass
from importlib import resources

from .estimators import gaussian_fwhm_to_sigma
from .montecarlo import BathParams
from .physics import CavityConfig, EmitterConfig, ZeemanConfig
from .readout import ReadoutParams

__all__ = [
    "ConfigError",
    "Config",
    "parse_config",
    "load_config",
    "resolve_config_path",
    "emitter_config",
    "cavity_config",
    "zeeman_config",
    "readout_params",
    "bath_params",
    "microwave_settings",
]

_MISSING = object()
_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_.-]+)\]$")
_KEY_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    sections: dict
    origin: str
    text: str

    def has_section(self, section: str) -> bool:
        return section in self.sections

    def _fetch(self, section: str, key: str):
        try:
            sec = self.sections[section]
        except KeyError:
            raise ConfigError(f"{self.origin}: missing section [{section}]")
        try:
            return sec[key]
        except KeyError:
            raise ConfigError(f"{self.origin}: missing key {key!r} in [{section}]")

    def number(self, section: str, key: str, default=_MISSING):
        try:
            value = self._fetch(section, key)
        except ConfigError:
            if default is _MISSING:
                raise
            return default if default is None else float(default)
        if isinstance(value, (int, float)):
            return float(value)
        raise ConfigError(f"{self.origin}: [{section}] {key} must be a number, "
                          f"got {value!r}")

    def integer(self, section: str, key: str, default=_MISSING):
        try:
            value = self._fetch(section, key)
        except ConfigError:
            if default is _MISSING:
                raise
            return default
        if not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{self.origin}: [{section}] {key} must be an "
                              f"integer, got {value!r}")
        return int(value)

    def numbers(self, section: str, key: str, default=_MISSING):
        try:
            value = self._fetch(section, key)
        except ConfigError:
            if default is _MISSING:
                raise
            return default if default is None else tuple(default)
        if isinstance(value, tuple):
            return value
        if isinstance(value, (int, float)):
            return (float(value),)
        raise ConfigError(f"{self.origin}: [{section}] {key} must be a "
                          f"number list, got {value!r}")

    def string(self, section: str, key: str, default=_MISSING):
        try:
            value = self._fetch(section, key)
        except ConfigError:
            if default is _MISSING:
                raise
            return default
        if isinstance(value, str):
            return value
        raise ConfigError(f"{self.origin}: [{section}] {key} must be a string, "
                          f"got {value!r}")


def _parse_value(raw: str):
    parts = [p.strip() for p in raw.split(",")]
    try:
        values = tuple(float(p) for p in parts)
    except ValueError:
        return raw
    return values if len(values) > 1 else values[0]


def parse_config(text: str, origin: str = "<config>") -> Config:
    sections: dict = {}
    current = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith(";"):
            continue
        if line.startswith("["):
            match = _SECTION_RE.match(line)
            if not match:
                raise ConfigError(f"{origin}:{line_no}: malformed section "
                                  f"header {line!r}")
            current = match.group(1)
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{line_no}: expected 'key = value', "
                              f"got {line!r}")
        key, _, raw_value = line.partition("=")
        key, raw_value = key.strip(), raw_value.strip()
        if not _KEY_RE.match(key):
            raise ConfigError(f"{origin}:{line_no}: invalid key {key!r}")
        if current is None:
            raise ConfigError(f"{origin}:{line_no}: key {key!r} outside any "
                              f"[section]")
        if not raw_value:
            raise ConfigError(f"{origin}:{line_no}: empty value for {key!r}")
        if key in sections[current]:
            raise ConfigError(f"{origin}:{line_no}: duplicate key {key!r} "
                              f"in [{current}]")
        sections[current][key] = _parse_value(raw_value)
    return Config(sections=sections, origin=origin, text=text)


def resolve_config_path(path: str) -> str:
    """Return ``path`` if it exists, else look it up in the packaged presets."""
    if os.path.exists(path):
        return path
    if os.path.basename(path) == path:
        preset = resources.files("spinshot").joinpath("presets", path)
        if preset.is_file():
            return str(preset)
    raise ConfigError(f"config file not found: {path}")


def load_config(path: str) -> Config:
    resolved = resolve_config_path(path)
    with open(resolved, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), origin=path)


# ---------------------------------------------------------------------------
# typed builders
# ---------------------------------------------------------------------------

def emitter_config(cfg: Config) -> EmitterConfig:
    return EmitterConfig(
        zero_field_frequency_ghz=cfg.number("emitter", "frequency_ghz"),
        g_ground=cfg.number("emitter", "g_ground"),
        g_excited=cfg.number("emitter", "g_excited"),
        bulk_lifetime_us=cfg.number("emitter", "bulk_lifetime_us"),
        spectral_diffusion_fwhm_mhz=cfg.number(
            "emitter", "spectral_diffusion_fwhm_mhz", 13.5),
    )


def cavity_config(cfg: Config) -> CavityConfig:
    return CavityConfig(
        resonance_frequency_ghz=cfg.number("cavity", "resonance_frequency_ghz"),
        quality_factor=cfg.number("cavity", "quality_factor"),
        purcell_on_resonance=cfg.number("cavity", "purcell_on_resonance"),
        mode_volume=cfg.number("cavity", "mode_volume", 0.83),
        eta_waveguide=cfg.number("detection", "eta_waveguide", 1.0),
        eta_offchip=cfg.number("detection", "eta_offchip", 1.0),
        eta_switch=cfg.number("detection", "eta_switch", 1.0),
        eta_detector=cfg.number("detection", "eta_detector", 1.0),
        flip_dipole_projection=cfg.number(
            "cavity", "flip_dipole_projection", 1.0),
    )


def zeeman_config(cfg: Config) -> ZeemanConfig:
    return ZeemanConfig(
        magnetic_field_t=cfg.number("field", "magnetic_field_t"),
        field_axis=cfg.string("field", "axis", "(100)"),
    )


def readout_params(cfg: Config, n_pulses: int | None = None) -> ReadoutParams:
    """Readout chain parameters from [readout] plus detector noise from
    [detection].

    Flip probabilities come either from explicit flip_bright/flip_dark
    keys or from (relaxation_constant, flip_asymmetry): a = s/R,
    b = (1-s)/R, which pins the fitted trace constant to R pulses.
    """
    section = "readout"
    if n_pulses is None:
        n_pulses = cfg.integer(section, "n_pulses")
    flip_bright = cfg.number(section, "flip_bright", None)
    flip_dark = cfg.number(section, "flip_dark", None)
    if flip_bright is None or flip_dark is None:
        relaxation = cfg.number(section, "relaxation_constant")
        asymmetry = cfg.number(section, "flip_asymmetry", 0.5)
        if relaxation <= 1.0:
            raise ConfigError(f"{cfg.origin}: [readout] relaxation_constant "
                              f"must exceed 1 pulse")
        if not (0.0 <= asymmetry <= 1.0):
            raise ConfigError(f"{cfg.origin}: [readout] flip_asymmetry must "
                              f"be in [0, 1]")
        flip_bright = asymmetry / relaxation
        flip_dark = (1.0 - asymmetry) / relaxation
    try:
        return ReadoutParams(
            n_pulses=n_pulses,
            p_excite=cfg.number(section, "p_excite"),
            eta_detect=cfg.number(section, "eta_detect"),
            flip_bright=flip_bright,
            flip_dark=flip_dark,
            dark_rate=cfg.number("detection", "dark_rate_hz", 0.0),
            gate_window=cfg.number("detection", "gate_window_us", 3.0),
            pulse_period=cfg.number(section, "pulse_period_us", 10.0),
        )
    except ValueError as exc:
        raise ConfigError(f"{cfg.origin}: [readout] {exc}") from exc


def bath_params(cfg: Config) -> BathParams:
    try:
        return BathParams(
            odmr_centers=cfg.numbers("bath", "odmr_centers_mhz", (-3.3, 0.0, 3.3)),
            odmr_weights=cfg.numbers("bath", "odmr_weights", (0.25, 0.5, 0.25)),
            odmr_sigma=gaussian_fwhm_to_sigma(
                cfg.number("bath", "odmr_fwhm_mhz", 2.37)),
            t1_spin=cfg.number("bath", "t1_spin_s", 0.44),
            t2_echo=cfg.number("bath", "t2_echo_us", 48.0),
            echo_exponent=cfg.number("bath", "echo_exponent", 2.0),
        )
    except ValueError as exc:
        raise ConfigError(f"{cfg.origin}: [bath] {exc}") from exc


def microwave_settings(cfg: Config) -> dict:
    return {
        "mw_rabi_khz": cfg.number("microwave", "rabi_khz", 217.4),
        "detuning_sigma_khz": cfg.number("microwave", "detuning_sigma_khz", 20.0),
        "drive_jitter": cfg.number("microwave", "drive_jitter", 0.0),
    }
