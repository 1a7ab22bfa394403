"""Run configuration: YAML loading, schema validation and presets.

A config is a YAML mapping with ``schema_version: 1`` and any of the
sections listed in ``SCHEMA``. Unknown keys and wrongly typed values are
rejected with the line they appear on.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .core import PAPER_PARAMS, PhysicalParams
from .fidelity import DetectorRates
from .signal import DriveConfig
from .transit import CloudProfile, ExperimentPlan

SCHEMA_VERSION = 1
PRESETS = ("paper-reflection", "paper-fluorescence", "table1")

_num = (int, float)
_opt_num = (int, float, type(None))

SCHEMA = {
    "schema_version": int,
    "seed": int,
    "params": {"g": _num, "kappa": _num, "gamma": _num, "wavelength": _num,
               "length": _num, "waist": _num},
    "drive": {"j_in": _num, "fringe_amplitude": _opt_num, "saturation": _opt_num,
              "rabi": _opt_num, "fibre_coupling": _num, "pump_strength": _num},
    "cloud": {"peak_mean_neff": _num, "fwhm_ms": _num, "centre_ms": _num,
              "drive_on_ms": _opt_num, "decay_us": _opt_num},
    "experiment": {"mode": str, "bin_width_us": _num, "n_trials": int, "start_us": _num,
                   "stop_us": _num, "background_per_us": _num, "motion": str,
                   "speed_m_s": _num, "refresh_bins": (int, type(None)),
                   "cooperativity_ratio": _num, "yield_per_us": _opt_num, "n_workers": int},
    "neff": {"mean": _num, "kind": str, "n_samples": int, "n_points": int, "n_workers": int},
    "analysis": {"max_lag_bins": int, "window_us": _opt_num, "segment_start_us": _opt_num,
                 "segment_stop_us": _opt_num,
                 "fidelity": {"signal_per_ms": _num, "background_per_ms": _num,
                              "prior": _num, "max_k": int}},
    "steady": {"couplings": list, "rabi": list, "pump": _num, "fock_cutoff": int,
               "fringe_amplitude": _num, "j_in": _num},
    "zeeman": {"saturation": list, "polarization": str, "theta": _num, "phi": _num,
               "method": str},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and line."""


def _marked_load(text: str, source: str) -> tuple[dict, dict]:
    """Parse YAML, returning the data and a {key path: line} map."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: malformed YAML: {exc}") from exc
    lines: dict = {}

    def walk(n, path):
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                key_path = path + (k.value,)
                lines[key_path] = k.start_mark.line + 1
                walk(v, key_path)

    if node is not None:
        walk(node, ())
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return data, lines


def _validate(data: dict, schema: dict, lines: dict, source: str, path=()) -> None:
    for key, value in data.items():
        where = f"{source}:{lines.get(path + (key,), '?')}"
        dotted = ".".join(path + (key,))
        if key not in schema:
            allowed = ", ".join(sorted(schema))
            raise ConfigError(f"{where}: unknown key '{dotted}' (allowed: {allowed})")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: '{dotted}' must be a mapping")
            _validate(value, expected, lines, source, path + (key,))
        elif isinstance(value, bool) or not isinstance(value, expected):
            names = expected.__name__ if isinstance(expected, type) else "/".join(
                t.__name__ for t in expected)
            raise ConfigError(f"{where}: '{dotted}' must be {names}, got {value!r}")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}' (available: {', '.join(PRESETS)})")
    return resources.files("cavitydetect.presets").joinpath(f"{name}.yaml").read_text()


@dataclass
class RunConfig:
    """Validated, fully declarative description of one run."""

    data: dict
    source: str = "<config>"
    lines: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>", check: bool = True) -> "RunConfig":
        """Parse and schema-validate; ``check=False`` skips building the sections
        (for partial files that are layered over a preset)."""
        data, lines = _marked_load(text, source)
        _validate(data, SCHEMA, lines, source)
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            line = lines.get(("schema_version",), "?")
            raise ConfigError(f"{source}:{line}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
        cfg = cls(data, source, lines)
        if check:
            cfg.check()
        return cfg

    @classmethod
    def load(cls, path: Optional[str] = None, preset: Optional[str] = None) -> "RunConfig":
        """Read a preset, a file, or a file layered over a preset."""
        if path is None and preset is None:
            raise ConfigError("need --config or --preset")
        base = {}
        if preset is not None:
            base = cls.from_text(preset_text(preset), f"preset:{preset}").data
        if path is None:
            return cls(base, f"preset:{preset}")
        text = Path(path).read_text()
        own = cls.from_text(text, str(path), check=not base)
        if not base:
            return own
        merged = cls(_merge(base, own.data), f"{path} over preset:{preset}", own.lines)
        merged.check()
        return merged

    def section(self, name: str) -> dict:
        return self.data.get(name, {}) or {}

    def require(self, name: str) -> dict:
        if name not in self.data:
            raise ConfigError(f"{self.source}: section '{name}' is required for this command")
        return self.section(name)

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None:
            return self
        data = copy.deepcopy(self.data)
        data["seed"] = int(seed)
        return RunConfig(data, self.source, self.lines)

    def _wrap(self, section: str, build):
        try:
            return build()
        except (TypeError, ValueError) as exc:
            line = self.lines.get((section,), "?")
            raise ConfigError(f"{self.source}:{line}: invalid '{section}' section: {exc}") from exc

    def check(self) -> None:
        """Build every present section so component invariants are enforced up front."""
        self.params()
        if "drive" in self.data:
            self.drive()
        if "cloud" in self.data:
            self.cloud()
        if "experiment" in self.data:
            self.plan()
        if "neff" in self.data:
            mean = self.section("neff").get("mean", 1.0)
            if not mean > 0:
                line = self.lines.get(("neff", "mean"), "?")
                raise ConfigError(f"{self.source}:{line}: neff.mean must be positive, got {mean!r}")
        fid = self.section("analysis").get("fidelity")
        if fid:
            self.detector_rates()

    def params(self) -> PhysicalParams:
        sec = self.section("params")
        return self._wrap("params", lambda: PAPER_PARAMS.replace(**{k: float(v) for k, v in sec.items()}))

    def drive(self) -> DriveConfig:
        sec = self.section("drive")
        return self._wrap("drive", lambda: DriveConfig(**sec))

    def cloud(self) -> CloudProfile:
        sec = self.require("cloud")
        return self._wrap("cloud", lambda: CloudProfile(**sec))

    def plan(self) -> ExperimentPlan:
        sec = dict(self.require("experiment"))
        renames = {"bin_width_us": "bin_width", "background_per_us": "background",
                   "speed_m_s": "speed"}
        kwargs = {renames.get(k, k): v for k, v in sec.items()}
        return self._wrap("experiment", lambda: ExperimentPlan(
            params=self.params(), drive=self.drive(), seed=self.seed, **kwargs))

    def detector_rates(self) -> DetectorRates:
        fid = self.section("analysis").get("fidelity") or {}
        return self._wrap("analysis", lambda: DetectorRates(
            float(fid["signal_per_ms"]), float(fid["background_per_ms"]), float(fid.get("prior", 0.5))))

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)
