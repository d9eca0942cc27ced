"""Run configuration: schema-validated JSON in, physical objects out.

Unit conventions at the file boundary: fields ending in ``_hz`` are
laboratory frequencies (converted to angular rad/s internally), ``_cps``
fields are detector count rates (no conversion), the LO amplitude is in
sqrt(counts/s), phases are radians, and the magnetic field is in gauss.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .atom import AtomModel, Ba138Config, build_ba138, build_two_level
from .errors import ConfigError
from .homodyne import DetectionChain

__all__ = ["RunConfig", "load_config", "parse_config", "preset_config",
           "config_hash", "phase_label", "PRESETS"]

TWO_PI = 2.0 * math.pi

_DETECTION_SCHEMA = {
    "type": "object",
    "required": ["gamma1_cps", "gamma2_cps", "lo_amplitude_sqrt_cps", "lo_phases_rad"],
    "additionalProperties": False,
    "properties": {
        "gamma1_cps": {"type": "number", "minimum": 0},
        "gamma2_cps": {"type": "number", "minimum": 0},
        "lo_amplitude_sqrt_cps": {"type": "number", "minimum": 0},
        "lo_phases_rad": {
            "type": "array",
            "items": {"type": "number"},
            "minItems": 1,
        },
        "dark_rate_start_cps": {"type": "number", "minimum": 0},
        "dark_rate_stop_cps": {"type": "number", "minimum": 0},
        "phase_jitter_rad": {"type": "number", "minimum": 0},
    },
}

_SIMULATION_SCHEMA = {
    "type": "object",
    "required": ["duration_s", "seed"],
    "additionalProperties": False,
    "properties": {
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "quantization_ps": {"type": "integer", "minimum": 100},
        "n_segments": {"type": "integer", "minimum": 1},
    },
}

_ANALYSIS_SCHEMA = {
    "type": "object",
    "required": ["bin_width_s", "tau_max_s"],
    "additionalProperties": False,
    "properties": {
        "bin_width_s": {"type": "number", "exclusiveMinimum": 0},
        "tau_max_s": {"type": "number", "exclusiveMinimum": 0},
        "tail_window_s": {
            "anyOf": [
                {"type": "null"},
                {"type": "array", "items": {"type": "number", "minimum": 0},
                 "minItems": 2, "maxItems": 2},
            ]
        },
    },
}

_SCHEMA = {
    "type": "object",
    "required": ["version", "atom", "detection", "simulation", "analysis"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": 1},
        "atom": {"type": "object"},
        "detection": _DETECTION_SCHEMA,
        "simulation": _SIMULATION_SCHEMA,
        "analysis": _ANALYSIS_SCHEMA,
    },
}

_ATOM_SCHEMAS = {
    "two_level": {
        "type": "object",
        "required": ["kind", "rabi_hz", "detuning_hz", "linewidth_hz"],
        "additionalProperties": False,
        "properties": {
            "kind": {"const": "two_level"},
            "rabi_hz": {"type": "number", "minimum": 0},
            "detuning_hz": {"type": "number"},
            "linewidth_hz": {"type": "number", "exclusiveMinimum": 0},
        },
    },
    "ba138": {
        "type": "object",
        "required": ["kind", "rabi_green_hz", "rabi_red_hz", "detuning_green_hz",
                     "detuning_red_hz", "p_linewidth_hz", "branching_s",
                     "b_field_gauss", "g_s", "g_p", "g_d"],
        "additionalProperties": False,
        "properties": {
            "kind": {"const": "ba138"},
            "rabi_green_hz": {"type": "number", "minimum": 0},
            "rabi_red_hz": {"type": "number", "minimum": 0},
            "detuning_green_hz": {"type": "number"},
            "detuning_red_hz": {"type": "number"},
            "p_linewidth_hz": {"type": "number", "exclusiveMinimum": 0},
            "branching_s": {"type": "number", "exclusiveMinimum": 0,
                            "exclusiveMaximum": 1},
            "b_field_gauss": {"type": "number", "minimum": 0},
            "g_s": {"type": "number"},
            "g_p": {"type": "number"},
            "g_d": {"type": "number"},
        },
    },
}


def _validate(instance: dict, schema: dict, prefix: str = "") -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for err in errors[:5]:
            path = ".".join(str(p) for p in err.absolute_path)
            loc = ".".join(x for x in (prefix, path) if x)
            msgs.append(f"{loc or '<root>'}: {err.message}")
        raise ConfigError("invalid configuration: " + "; ".join(msgs))


def phase_label(phi: float) -> str:
    """Filename label of a detector phase: rounded degrees, zero-padded."""
    deg = round(math.degrees(phi))
    return f"{deg:03d}" if deg >= 0 else f"m{-deg:03d}"


def config_hash(raw: dict) -> str:
    """Stable short hash of the raw configuration dictionary."""
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class RunConfig:
    """Parsed configuration with the physical objects already built."""

    model: AtomModel
    gamma1: float
    gamma2: float
    lo_amplitude: float
    lo_phases: list
    dark_rate_start: float
    dark_rate_stop: float
    phase_jitter: float
    duration: float
    seed: int
    quantization_ps: int
    n_segments: int
    bin_width: float
    tau_max: float
    tail_window: tuple | None
    raw: dict = field(repr=False)
    hash: str = ""

    def detection(self, phi: float | None = None) -> DetectionChain:
        return DetectionChain(
            gamma1=self.gamma1,
            gamma2=self.gamma2,
            lo_amplitude=self.lo_amplitude,
            lo_phase=self.lo_phases[0] if phi is None else phi,
            dark_rate_start=self.dark_rate_start,
            dark_rate_stop=self.dark_rate_stop,
            phase_jitter=self.phase_jitter,
        )

    @property
    def phase_labels(self) -> list:
        return [phase_label(p) for p in self.lo_phases]

    @property
    def n_bins(self) -> int:
        return int(round(self.tau_max / self.bin_width))

    def bin_centers(self):
        import numpy as np

        return (np.arange(self.n_bins) + 0.5) * self.bin_width


def _build_atom(spec: dict) -> AtomModel:
    kind = spec.get("kind")
    if kind not in _ATOM_SCHEMAS:
        known = ", ".join(sorted(_ATOM_SCHEMAS))
        raise ConfigError(f"atom.kind: {kind!r} is not one of [{known}]")
    _validate(spec, _ATOM_SCHEMAS[kind], prefix="atom")
    if kind == "two_level":
        return build_two_level(
            rabi=TWO_PI * spec["rabi_hz"],
            detuning=TWO_PI * spec["detuning_hz"],
            gamma=TWO_PI * spec["linewidth_hz"],
        )
    return build_ba138(Ba138Config(
        rabi_green=TWO_PI * spec["rabi_green_hz"],
        rabi_red=TWO_PI * spec["rabi_red_hz"],
        detuning_green=TWO_PI * spec["detuning_green_hz"],
        detuning_red=TWO_PI * spec["detuning_red_hz"],
        gamma_p=TWO_PI * spec["p_linewidth_hz"],
        branching_s=spec["branching_s"],
        b_field=spec["b_field_gauss"],
        g_s=spec["g_s"],
        g_p=spec["g_p"],
        g_d=spec["g_d"],
    ))


def parse_config(raw: dict) -> RunConfig:
    """Validate a configuration dictionary and build the run objects.

    All violations raise :class:`ConfigError` with the offending field in
    the message; nothing is computed before validation passes.
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    _validate(raw, _SCHEMA)
    model = _build_atom(raw["atom"])

    det = raw["detection"]
    sim = raw["simulation"]
    ana = raw["analysis"]

    phases = [float(p) for p in det["lo_phases_rad"]]
    labels = [phase_label(p) for p in phases]
    if len(set(labels)) != len(labels):
        raise ConfigError(
            f"detection.lo_phases_rad: phases map to duplicate labels {labels}; "
            "phases must differ by at least one degree"
        )

    quant_ps = int(sim.get("quantization_ps", 100))
    bin_width = float(ana["bin_width_s"])
    tau_max = float(ana["tau_max_s"])
    bin_ps = bin_width * 1e12
    if abs(bin_ps / quant_ps - round(bin_ps / quant_ps)) > 1e-6 or bin_ps < quant_ps:
        raise ConfigError(
            f"analysis.bin_width_s: {bin_width} s is not a multiple of the "
            f"{quant_ps} ps quantisation step"
        )
    n_bins = tau_max / bin_width
    if abs(n_bins - round(n_bins)) > 1e-6 or round(n_bins) < 2:
        raise ConfigError(
            f"analysis.tau_max_s: {tau_max} s is not a multiple (>= 2) of the bin width"
        )
    tail = ana.get("tail_window_s")
    if tail is not None:
        lo, hi = float(tail[0]), float(tail[1])
        if not 0.0 <= lo < hi <= tau_max * (1 + 1e-12):
            raise ConfigError(
                f"analysis.tail_window_s: [{lo}, {hi}] must satisfy 0 <= lo < hi <= tau_max"
            )
        if hi - lo < bin_width:
            raise ConfigError("analysis.tail_window_s: window holds no complete bin")
        tail = (lo, hi)

    return RunConfig(
        model=model,
        gamma1=float(det["gamma1_cps"]),
        gamma2=float(det["gamma2_cps"]),
        lo_amplitude=float(det["lo_amplitude_sqrt_cps"]),
        lo_phases=phases,
        dark_rate_start=float(det.get("dark_rate_start_cps", 0.0)),
        dark_rate_stop=float(det.get("dark_rate_stop_cps", 0.0)),
        phase_jitter=float(det.get("phase_jitter_rad", 0.0)),
        duration=float(sim["duration_s"]),
        seed=int(sim["seed"]),
        quantization_ps=quant_ps,
        n_segments=int(sim.get("n_segments", 1)),
        bin_width=bin_width,
        tau_max=tau_max,
        tail_window=tail,
        raw=copy.deepcopy(raw),
        hash=config_hash(raw),
    )


def load_config(path: str | Path) -> RunConfig:
    """Parse a JSON configuration file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"configuration file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(raw)


# Ready-made configurations.  "twolevel" is the fast sandbox; "fig2" and
# "fig4" run the eight-level ion at an operating point with visibility 0.18
# and chaotic intensity fraction 0.31 (fig4 adds LO phase jitter).  The ion
# numbers (linewidth, branching, Lande factors) are textbook-plausible
# values for the barium scheme, not fitted to any particular dataset, and
# the detected fluxes are far above realistic collection efficiencies so
# that demo runs gather statistics quickly.
_PI = math.pi
PRESETS: dict = {
    "twolevel": {
        "version": 1,
        "atom": {
            "kind": "two_level",
            "rabi_hz": 4.3035e7,
            "detuning_hz": 0.0,
            "linewidth_hz": 1.51e7,
        },
        "detection": {
            "gamma1_cps": 5.69e7,
            "gamma2_cps": 2.85e7,
            "lo_amplitude_sqrt_cps": 5464.0,
            "lo_phases_rad": [0.0, _PI / 2, _PI],
            "dark_rate_start_cps": 0.0,
            "dark_rate_stop_cps": 0.0,
            "phase_jitter_rad": 0.0,
        },
        "simulation": {
            "duration_s": 0.02,
            "seed": 20260826,
            "quantization_ps": 100,
            "n_segments": 4,
        },
        "analysis": {
            "bin_width_s": 1.0e-9,
            "tau_max_s": 5.0e-7,
            "tail_window_s": [3.75e-7, 5.0e-7],
        },
    },
    "fig2": {
        "version": 1,
        "atom": {
            "kind": "ba138",
            "rabi_green_hz": 8.2e6,
            "rabi_red_hz": 8.0e6,
            "detuning_green_hz": -6.0e6,
            "detuning_red_hz": -3.0e6,
            "p_linewidth_hz": 2.01e7,
            "branching_s": 0.73,
            "b_field_gauss": 4.0,
            "g_s": 2.0,
            "g_p": 0.6666666666666666,
            "g_d": 0.8,
        },
        "detection": {
            "gamma1_cps": 2.5e7,
            "gamma2_cps": 2.5e7,
            "lo_amplitude_sqrt_cps": 505.0,
            "lo_phases_rad": [0.0, _PI / 2, _PI],
            "dark_rate_start_cps": 500.0,
            "dark_rate_stop_cps": 500.0,
            "phase_jitter_rad": 0.0,
        },
        "simulation": {
            "duration_s": 2.0,
            "seed": 20260826,
            "quantization_ps": 100,
            "n_segments": 8,
        },
        "analysis": {
            "bin_width_s": 1.0e-8,
            "tau_max_s": 1.6e-5,
            "tail_window_s": [1.2e-5, 1.6e-5],
        },
    },
}
PRESETS["fig4"] = copy.deepcopy(PRESETS["fig2"])
PRESETS["fig4"]["detection"]["phase_jitter_rad"] = 0.17


def preset_config(name: str) -> dict:
    """Raw dictionary of a named preset (deep copy; safe to modify)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])
