"""INI-style run configuration with per-command defaults and CLI overrides."""

from __future__ import annotations

import configparser
import copy
from dataclasses import dataclass, field
from pathlib import Path

from . import assembler, dynamics, noise
from .lattice import TrapArray, centered_block, parse_pattern, preset_array


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "run": {"seed": None, "shots": 100, "out": "out"},
    "array": {"preset": 3, "rows": 19, "cols": 19},
    "pattern": {"file": None, "target_rows": 5, "target_cols": 5, "frame": 0},
    "assembly": {"trials": 100, "fill_probability": 0.55},
    "execution": {
        "ramp_duration": 0.2,
        "transport_duration": 0.6,
        "cycle_overhead": 20.0,
        "per_move_loss": 0.01,
        "per_cycle_loss": 0.005,
        "depth_lowering_factor": 5.0,
        "max_cycles": 15,
        "surplus_policy": "relocate",
    },
    "excitation": {
        "rabi": 0.32,
        "two_photon_detuning": 0.0,
        "damping": 0.0,
        "intermediate_detuning": 410.0,
        "scattering_rate": 0.08,
        "decay_fraction": 0.5,
        "t_max": 5.0,
        "sample_dt": 0.05,
    },
    "interaction": {"level": "87D", "c6": None, "anisotropic": True, "perfect_blockade": False},
    "beam": {"region": 5, "waist": 19.0, "rabi_max": 0.77, "offset_x": 7.0, "offset_y": 3.5, "neighbours": True},
    "noise": {f: v for f, v in noise.NoiseModel().__dict__.items()},
    "detection": {
        "level": None,
        "false_negative": None,
        "prep_fidelity": None,
        "sequence_loss": None,
        "rydberg_decay_rate": None,
        "release_time": None,
    },
    "recapture": {"trials": 100000, "ponderomotive_scale": 1.0, "states": "rydberg,ground"},
    "fit": {"input": None, "observable": "p_k1", "correct": False},
}

COMMAND_DEFAULTS = {
    "rabi": {"interaction": {"level": "57D", "anisotropic": False}, "run": {"shots": 40}},
    "blockade": {"run": {"shots": 200}},
    "recapture": {"interaction": {"level": "57D"}},
    "assemble": {"array": {"preset": 2}},
}


_STRING_KEYS = {"file", "input", "out", "level", "states", "observable", "surplus_policy"}


def _coerce(value, like, key=""):
    v = value.strip()
    if v.lower() in ("none", ""):
        return None
    if key in _STRING_KEYS:
        return v
    if isinstance(like, bool):
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(like, int):
        return int(v)
    if isinstance(like, float):
        return float(v)
    if like is None:
        for conv in (int, float):
            try:
                return conv(v)
            except ValueError:
                pass
    return v


@dataclass
class RunConfig:
    command: str
    sections: dict = field(default_factory=dict)
    source: str | None = None

    @classmethod
    def load(cls, command, path=None, overrides=None):
        sections = copy.deepcopy(DEFAULTS)
        for sec, vals in COMMAND_DEFAULTS.get(command, {}).items():
            sections[sec].update(vals)
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {path}")
            parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
            try:
                parser.read(p)
            except configparser.Error as exc:
                raise ConfigError(str(exc)) from exc
            for sec in parser.sections():
                if sec not in sections:
                    raise ConfigError(f"unknown config section [{sec}]")
                for key, raw in parser.items(sec):
                    if key not in sections[sec]:
                        raise ConfigError(f"unknown key {key!r} in [{sec}]")
                    try:
                        sections[sec][key] = _coerce(raw, sections[sec][key], key)
                    except ValueError as exc:
                        raise ConfigError(f"[{sec}] {key}: {exc}") from exc
        for (sec, key), val in (overrides or {}).items():
            if val is not None:
                sections[sec][key] = val
        cfg = cls(command, sections, str(path) if path else None)
        cfg.validate()
        return cfg

    def validate(self):
        if self.get("run", "seed") is None:
            raise ConfigError("a seed is required (--seed or [run] seed)")
        pf = self.get("pattern", "file")
        if pf is not None and not Path(pf).is_file():
            raise ConfigError(f"pattern file not found: {pf}")
        if self.get("run", "shots") < 1:
            raise ConfigError("shots must be >= 1")

    def get(self, section, key):
        return self.sections[section][key]

    def resolved(self):
        """Plain-dict view embedded in every output for provenance."""
        return {"command": self.command, **copy.deepcopy(self.sections)}

    # builders -------------------------------------------------------------

    def array(self, rows=None, cols=None) -> TrapArray:
        a = self.sections["array"]
        return preset_array(a["preset"], rows or a["rows"], cols or a["cols"])

    def pattern(self, array):
        p = self.sections["pattern"]
        if p["file"]:
            pat = parse_pattern(Path(p["file"]).read_text())
            if pat.shape != array.shape:
                raise ConfigError(f"pattern is {pat.shape[0]}x{pat.shape[1]} but the array is {array.rows}x{array.cols}")
            return pat
        return centered_block(array.rows, array.cols, p["target_rows"], p["target_cols"], p["frame"])

    def execution(self):
        return assembler.ExecutionModel(**self.sections["execution"])

    def load_model(self):
        return assembler.LoadModel(self.get("assembly", "fill_probability"))

    def interaction(self):
        s = self.sections["interaction"]
        kw = {"perfect_blockade": bool(s["perfect_blockade"])}
        if s["c6"] is not None:
            return dynamics.InteractionModel(c6=float(s["c6"]), **kw)
        level = str(s["level"]).upper()
        if level == "57D":
            return dynamics.interaction_57d(**kw)
        if level == "87D":
            return dynamics.interaction_87d(anisotropic=bool(s["anisotropic"]), **kw)
        raise ConfigError(f"unknown Rydberg level {s['level']!r}; use 57D or 87D or give c6")

    def noise(self):
        return noise.NoiseModel(**self.sections["noise"])

    def detection(self):
        level = self.get("detection", "level") or self.get("interaction", "level")
        level = str(level).upper()
        kw = {k: v for k, v in self.sections["detection"].items() if k != "level" and v is not None}
        if level == "57D":
            return noise.detection_57d(**kw)
        if level == "87D":
            return noise.detection_87d(**kw)
        raise ConfigError(f"unknown detection level {level!r}")
