"""INI run configuration. Frequencies are linear GHz and are multiplied by
2*pi on load; a value may carry a ``/2pi`` suffix (``J_ghz = -0.1/2pi``).
See docs/config.md for the key reference.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .device import TWO_PI, DeviceSpec
from .optimize import GuessRanges
from .propagation import IntegratorConfig


class ConfigError(ValueError):
    pass


# section -> {key: kind}; kinds: ghz, ghz_list, float, int, str
SCHEMA = {
    "device": {"omega_ghz": "ghz_list", "delta_ghz": "ghz_list", "omega_int_ghz": "ghz",
               "gamma_min_ghz": "ghz", "gamma_max_ghz": "ghz", "omega_idle_ghz": "ghz_list", "levels": "int"},
    "model": {"target": "str", "J_ghz": "ghz", "delta_V_ghz": "ghz", "n_v": "int", "sites": "int",
              "T_s_ns": "float", "q": "int"},
    "control": {"T_c_ns": "float", "M": "int", "a_min_ghz": "ghz", "a_max_ghz": "ghz", "mu_min_frac": "float",
                "mu_max_frac": "float", "sigma_min_ns": "float", "sigma_max_ns": "float", "pool": "int",
                "n_starts": "int", "seed": "int", "max_iter": "int", "grad_tol": "float"},
    "integrator": {"abs_tol": "float", "rel_tol": "float", "verify_abs_tol": "float", "verify_rel_tol": "float"},
    "output": {"directory": "str"},
}
REQUIRED_KEYS = {
    "device": ("omega_ghz", "delta_ghz", "omega_int_ghz", "gamma_min_ghz", "gamma_max_ghz"),
}


def _number(text: str, section: str, key: str) -> float:
    t = text.strip()
    div = 1.0
    if t.lower().endswith("/2pi"):
        t, div = t[:-4], TWO_PI
    try:
        return float(t) / div
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse number {text!r}") from None


def _convert(kind: str, text: str, section: str, key: str):
    if kind == "str":
        return text.strip()
    if kind == "int":
        try:
            return int(text.strip())
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected an integer, got {text!r}") from None
    if kind == "ghz_list":
        return [_number(p, section, key) for p in text.split(",") if p.strip()]
    return _number(text, section, key)


@dataclass
class RunConfig:
    sections: dict = field(default_factory=dict)
    source: str = ""

    def require(self, *names: str) -> None:
        for n in names:
            if n not in self.sections:
                raise ConfigError(f"config {self.source or '<string>'} is missing section [{n}]")

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def device(self) -> DeviceSpec:
        self.require("device")
        d = self.sections["device"]
        try:
            return DeviceSpec.from_ghz(d["omega_ghz"], d["delta_ghz"], d["omega_int_ghz"], d["gamma_min_ghz"],
                                       d["gamma_max_ghz"], d.get("omega_idle_ghz"), d.get("levels", 3))
        except ValueError as exc:
            raise ConfigError(f"[device] {exc}") from None

    # model values come back in rad/ns
    @property
    def J(self) -> float:
        return TWO_PI * self.get("model", "J_ghz", -0.1 / TWO_PI)

    @property
    def delta_V(self) -> float:
        return TWO_PI * self.get("model", "delta_V_ghz", 0.1 / TWO_PI)

    @property
    def T_s(self) -> float:
        return self.get("model", "T_s_ns", 1.0)

    @property
    def q(self) -> int:
        return self.get("model", "q", 6)

    @property
    def target(self) -> str:
        t = self.get("model", "target", "E_step")
        if t not in ("E_step", "BH_step"):
            raise ConfigError(f"[model] target must be E_step or BH_step, got {t!r}")
        return t

    def ranges(self) -> GuessRanges:
        dflt = GuessRanges()
        c = self.sections.get("control", {})
        try:
            return GuessRanges(
                (TWO_PI * c["a_min_ghz"] if "a_min_ghz" in c else dflt.a_range[0],
                 TWO_PI * c["a_max_ghz"] if "a_max_ghz" in c else dflt.a_range[1]),
                (c.get("mu_min_frac", dflt.mu_range[0]), c.get("mu_max_frac", dflt.mu_range[1])),
                (c.get("sigma_min_ns", dflt.sigma_range[0]), c.get("sigma_max_ns", dflt.sigma_range[1])),
            )
        except ValueError as exc:
            raise ConfigError(f"[control] {exc}") from None

    def integrator(self) -> IntegratorConfig:
        try:
            return IntegratorConfig(self.get("integrator", "abs_tol", 1e-10), self.get("integrator", "rel_tol", 1e-10))
        except ValueError as exc:
            raise ConfigError(f"[integrator] {exc}") from None

    def verify_integrator(self) -> IntegratorConfig:
        try:
            return IntegratorConfig(self.get("integrator", "verify_abs_tol", 1e-12),
                                    self.get("integrator", "verify_rel_tol", 1e-12))
        except ValueError as exc:
            raise ConfigError(f"[integrator] {exc}") from None


def parse_config(text: str, source: str = "") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<string>")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = {}
    for name in cp.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        vals = {}
        for key, raw in cp[name].items():
            if key not in SCHEMA[name]:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")
            vals[key] = _convert(SCHEMA[name][key], raw, name, key)
        for key in REQUIRED_KEYS.get(name, ()):
            if key not in vals:
                raise ConfigError(f"section [{name}] is missing key {key!r}")
        sections[name] = vals
    for name, vals in sections.items():
        for k, v in vals.items():
            if isinstance(v, float) and not math.isfinite(v):
                raise ConfigError(f"[{name}] {k} must be finite")
    return RunConfig(sections, source)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
