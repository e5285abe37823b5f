"""Scenario description and its strict YAML file format.

Unknown or misspelled keys are rejected with the offending line number;
nothing is silently defaulted except keys that are documented as optional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import yaml

from .channel import (DriftConfig, LeakageSpec, LinkBudget, NoiseConfig, TargetSpec,
                      scenario_to_paths)
from .dsp import AdcConfig
from .errors import SchemaError, ScenarioError, ToneOutOfBand
from .frontend import CombinerModel, DdsConfig
from .signal_model import ChirpConfig, dechirped_tone

PRESETS = ("paper_10cm", "paper_20cm", "array_3path", "no_leakage")


@dataclass(frozen=True)
class ReplicaImpairment:
    """Gain/phase error of the replica path that the calibrator cannot see."""

    phase_rad: float = 0.0
    gain_db: float = 0.0

    @property
    def factor(self) -> complex:
        return 10.0 ** (self.gain_db / 20.0) * complex(math.cos(self.phase_rad),
                                                       math.sin(self.phase_rad))


@dataclass(frozen=True)
class Scenario:
    chirp: ChirpConfig
    link_budget: LinkBudget = field(default_factory=LinkBudget)
    leakage: tuple[LeakageSpec, ...] = ()
    targets: tuple[TargetSpec, ...] = ()
    adc: AdcConfig = field(default_factory=AdcConfig)
    dds: DdsConfig = field(default_factory=DdsConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    drift: DriftConfig = field(default_factory=DriftConfig)
    combiner: CombinerModel = field(default_factory=CombinerModel)
    impairment: ReplicaImpairment = field(default_factory=ReplicaImpairment)
    seed: int = 0
    name: str = ""

    @property
    def n_samples(self) -> int:
        return int(round(self.chirp.t_chirp * self.adc.fs))

    @property
    def n_fft(self) -> int:
        return self.n_samples // self.adc.decimation

    @property
    def rbw(self) -> float:
        return self.adc.fs_out / self.n_fft

    def validate(self) -> "Scenario":
        n_exact = self.chirp.t_chirp * self.adc.fs
        if abs(n_exact - round(n_exact)) > 1e-6 or self.n_samples < 1:
            raise ScenarioError("chirp period must hold an integer number of ADC samples")
        if self.n_samples % self.adc.decimation:
            raise ScenarioError("decimation factor must divide the per-chirp sample count")
        if not self.chirp.f_start <= self.link_budget.carrier_hz <= self.chirp.f_stop:
            raise ScenarioError("carrier_hz must lie within the chirp sweep")
        if self.seed < 0:
            raise ScenarioError("seed must be non-negative")
        for p in scenario_to_paths(self):
            try:
                dechirped_tone(p, 0.0, self.chirp, bandwidth=self.adc.fs_out / 2)
            except ToneOutOfBand as exc:
                raise ScenarioError(str(exc)) from exc
        return self

    def with_noise(self, enabled: bool) -> "Scenario":
        return replace(self, noise=replace(self.noise, enabled=enabled))


# --- strict schema -----------------------------------------------------------

_F, _I, _B = "float", "int", "bool"

# section -> {key: (type, required)}
_SECTIONS = {
    "chirp": {"f_start_hz": (_F, True), "f_stop_hz": (_F, True), "t_chirp_s": (_F, True),
              "amplitude": (_F, False), "phi0_rad": (_F, False)},
    "link_budget": {"tx_power_dbm": (_F, True), "tx_gain_dbi": (_F, False),
                    "rx_gain_dbi": (_F, False), "nf_db": (_F, True), "carrier_hz": (_F, False)},
    "adc": {"fs": (_F, False), "bits": (_I, False), "decimation": (_I, False),
            "full_scale": (_F, False)},
    "dds": {"dac_rate": (_F, False), "table_len": (_I, False), "dac_bits": (_I, False),
            "full_scale": (_F, False)},
    "noise": {"enabled": (_B, False), "flicker_corner_hz": (_F, False)},
    "drift": {"enabled": (_B, False), "phase_drift_rad_per_chirp": (_F, False),
              "gain_drift_db_per_chirp": (_F, False)},
    "combiner": {"insertion_loss_db": (_F, False), "isolation_db": (_F, False),
                 "replica_loss_db": (_F, False)},
    "impairments": {"replica_phase_rad": (_F, False), "replica_gain_db": (_F, False)},
}
_LISTS = {
    "leakage": {"delay_s": (_F, True), "coupling_db": (_F, True)},
    "targets": {"range_m": (_F, True), "rcs_dbsm": (_F, True)},
}
_TOP_SCALARS = {"seed": _I, "name": "str"}
_REQUIRED_SECTIONS = ("chirp", "link_budget")


def _line(node) -> int:
    return node.start_mark.line + 1


def _scalar(node, kind: str, key: str):
    if not isinstance(node, yaml.ScalarNode):
        raise SchemaError(f"'{key}' must be a scalar", _line(node))
    value = yaml.safe_load(yaml.serialize(node))
    if kind == "str":
        return str(value)
    if kind == _B:
        if not isinstance(value, bool):
            raise SchemaError(f"'{key}' must be true or false", _line(node))
        return value
    if kind == _I:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"'{key}' must be an integer", _line(node))
        return value
    if isinstance(value, bool):
        raise SchemaError(f"'{key}' must be a number", _line(node))
    if isinstance(value, (int, float)):
        return float(value)
    try:
        # YAML 1.1 reads 1.0e9 (no exponent sign) as a string
        return float(value)
    except (TypeError, ValueError):
        raise SchemaError(f"'{key}' must be a number, got {value!r}", _line(node)) from None


def _mapping(node, spec: dict, where: str) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise SchemaError(f"'{where}' must be a mapping", _line(node))
    out = {}
    for knode, vnode in node.value:
        key = knode.value
        if key not in spec:
            raise SchemaError(f"unknown key '{key}' in '{where}' "
                              f"(allowed: {', '.join(spec)})", _line(knode))
        if key in out:
            raise SchemaError(f"duplicate key '{key}' in '{where}'", _line(knode))
        out[key] = _scalar(vnode, spec[key][0], key)
    for key, (_, required) in spec.items():
        if required and key not in out:
            raise SchemaError(f"missing required key '{key}' in '{where}'", _line(node))
    return out


def parse_scenario(text: str, name: str = "") -> Scenario:
    """Parse and validate scenario YAML text."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise SchemaError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None
    if root is None:
        raise SchemaError("empty scenario file", 1)
    if not isinstance(root, yaml.MappingNode):
        raise SchemaError("scenario must be a mapping of sections", _line(root))

    raw: dict = {}
    lines: dict = {}
    for knode, vnode in root.value:
        key = knode.value
        if key in raw:
            raise SchemaError(f"duplicate section '{key}'", _line(knode))
        lines[key] = _line(knode)
        if key in _SECTIONS:
            raw[key] = _mapping(vnode, _SECTIONS[key], key)
        elif key in _LISTS:
            if isinstance(vnode, yaml.ScalarNode) and vnode.value in ("", "~", "null"):
                raw[key] = []
                continue
            if not isinstance(vnode, yaml.SequenceNode):
                raise SchemaError(f"'{key}' must be a list", _line(vnode))
            raw[key] = [(_mapping(item, _LISTS[key], f"{key}[{i}]"), _line(item))
                        for i, item in enumerate(vnode.value)]
        elif key in _TOP_SCALARS:
            raw[key] = _scalar(vnode, _TOP_SCALARS[key], key)
        else:
            allowed = list(_SECTIONS) + list(_LISTS) + list(_TOP_SCALARS)
            raise SchemaError(f"unknown section '{key}' (allowed: {', '.join(allowed)})",
                              _line(knode))
    for sec in _REQUIRED_SECTIONS:
        if sec not in raw:
            raise SchemaError(f"missing required section '{sec}'", 1)

    def build(section, fn):
        try:
            return fn(raw.get(section, {}))
        except (ValueError, TypeError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"invalid '{section}': {exc}", lines.get(section)) from None

    lb_raw = raw["link_budget"]
    c_raw = raw["chirp"]
    implied_amp = 10.0 ** (lb_raw["tx_power_dbm"] / 20.0)
    amp = c_raw.get("amplitude", implied_amp)
    if not (amp > 0 and abs(20.0 * math.log10(amp / implied_amp)) <= 0.01):
        raise SchemaError("chirp.amplitude disagrees with link_budget.tx_power_dbm "
                          f"(expected {implied_amp!r} sqrt(mW))", lines["chirp"])

    chirp = build("chirp", lambda d: ChirpConfig(d["f_start_hz"], d["f_stop_hz"], d["t_chirp_s"],
                                                 amp, d.get("phi0_rad", 0.0)))
    link = build("link_budget", lambda d: LinkBudget(
        d["tx_power_dbm"], d.get("tx_gain_dbi", 0.0), d.get("rx_gain_dbi", 0.0), d["nf_db"],
        d.get("carrier_hz", 0.5 * (chirp.f_start + chirp.f_stop))))

    def build_list(key, fn):
        out = []
        for item, line in raw.get(key, []):
            try:
                out.append(fn(item))
            except ValueError as exc:
                raise SchemaError(f"invalid '{key}' entry: {exc}", line) from None
        return tuple(out)

    leakage = build_list("leakage", lambda d: LeakageSpec(d["delay_s"], d["coupling_db"]))
    targets = build_list("targets", lambda d: TargetSpec(d["range_m"], d["rcs_dbsm"]))
    adc = build("adc", lambda d: AdcConfig(**{k: v for k, v in d.items()}))
    dds = build("dds", lambda d: DdsConfig(**{k: v for k, v in d.items()}))
    noise = build("noise", lambda d: NoiseConfig(**d))
    drift = build("drift", lambda d: DriftConfig(**d))
    comb = build("combiner", lambda d: CombinerModel(**d))
    imp = build("impairments", lambda d: ReplicaImpairment(d.get("replica_phase_rad", 0.0),
                                                          d.get("replica_gain_db", 0.0)))
    scenario = Scenario(chirp=chirp, link_budget=link, leakage=leakage, targets=targets,
                        adc=adc, dds=dds, noise=noise, drift=drift, combiner=comb,
                        impairment=imp, seed=raw.get("seed", 0), name=raw.get("name", name))
    try:
        return scenario.validate()
    except ScenarioError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(str(exc)) from None


def load_scenario(ref: str | Path) -> Scenario:
    """Load a preset by name or a scenario file by path."""
    ref = str(ref)
    if ref in PRESETS:
        text = resources.files("fmcw_leakcal.presets").joinpath(f"{ref}.yaml").read_text()
        return parse_scenario(text, name=ref)
    path = Path(ref)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read scenario '{ref}': {exc.strerror}") from None
    return parse_scenario(text, name=path.stem)
