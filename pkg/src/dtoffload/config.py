"""Simulation configuration: parameter sets, cost weights, task specs and seeded RNG streams.

All data sizes are megabytes, CPU work is Gigacycles, and time is counted in
slots internally (converted to seconds via ``slot_duration_s`` only when costs
are reported). Rent for cloud transfer is priced per MB, not per bit: with
MB-scale tasks a per-bit price of 1 would dwarf every other cost term.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

Interval = Tuple[float, float]


class ConfigError(ValueError):
    """Raised when a config file cannot be parsed."""


class ValidationError(ValueError):
    """Raised when a parsed configuration violates a constraint."""


@dataclass(frozen=True)
class SimParams:
    """Physical and workload parameters of the offloading scenario."""

    slot_duration_s: float = 0.2
    rsu_spacing_m: float = 50.0
    vehicle_speed_mps: float = 10.0
    queue_capacity_mb: float = 1000.0
    deadline_slots: float = 20.0
    task_size_range_mb: Interval = (0.1, 2.5)
    task_cycles_range_gc: Interval = (1.0, 10.0)
    tx_power_w: float = 1.25
    carrier_hz: float = 2e9
    mec_bandwidth_hz: float = 10e6
    cloud_bandwidth_hz: float = 5e6
    noise_power_dbm: float = -114.0
    local_capacity_gc_per_slot: float = 2.0
    cloud_capacity_gc_per_slot: float = 20.0
    mec_capacity_range_gc_per_slot: Interval = (2.0, 10.0)
    rent_compute_coeff: float = 3.0
    rent_price_exponent: float = 1.0
    rent_transfer_coeff: float = 1.0
    switched_capacitance: float = 1.0
    power_exponent: float = 3.0
    gain_history_len: int = 50
    capacity_history_len: int = 5
    prediction_horizon_slots: int = 10
    initial_battery: float = 10_000.0
    handover_penalty: float = 1.0
    # Artifact knobs (the paper leaves these unspecified; see README).
    path_loss_exponent: float = 2.0
    path_loss_ref_m: float = 1.0
    cloud_link_distance_m: float = 500.0
    noise_as_density: bool = False
    rate_chain_range: Interval = (0.1, 0.9)
    rate_chain_dwell_slots: int = 20
    static_fill_fraction: float = 0.5
    cloud_uses_iterative_drain: bool = False

    def __post_init__(self):
        positives = [
            "slot_duration_s", "rsu_spacing_m", "queue_capacity_mb", "deadline_slots",
            "tx_power_w", "carrier_hz", "mec_bandwidth_hz", "cloud_bandwidth_hz",
            "local_capacity_gc_per_slot", "cloud_capacity_gc_per_slot",
            "switched_capacitance", "power_exponent", "gain_history_len",
            "capacity_history_len", "prediction_horizon_slots", "initial_battery",
            "path_loss_exponent", "path_loss_ref_m", "cloud_link_distance_m",
            "rate_chain_dwell_slots",
        ]
        for name in positives:
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be strictly positive")
        for name in ("vehicle_speed_mps", "rent_compute_coeff", "rent_transfer_coeff",
                     "handover_penalty", "static_fill_fraction"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        if self.rent_price_exponent < 1:
            raise ValidationError("rent_price_exponent must be >= 1")
        for name in ("task_size_range_mb", "task_cycles_range_gc",
                     "mec_capacity_range_gc_per_slot", "rate_chain_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValidationError(f"{name} interval has lower > upper")
            if lo <= 0 and name != "rate_chain_range":
                raise ValidationError(f"{name} lower bound must be positive")

    @property
    def noise_power_w(self) -> float:
        """Total noise power per link in watts (see noise_as_density)."""
        return 10.0 ** (self.noise_power_dbm / 10.0) / 1000.0


@dataclass(frozen=True)
class CostWeights:
    """Scalarization weights and penalty coefficients of the task cost."""

    xi_time: float = 0.4
    xi_energy: float = 0.4
    xi_rent: float = 0.2
    eta: float = 5.0
    psi: float = 5.0
    upsilon: float = 0.005

    def __post_init__(self):
        for name in ("xi_time", "xi_energy", "xi_rent", "eta", "psi", "upsilon"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        total = self.xi_time + self.xi_energy + self.xi_rent
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"xi sum != 1 (got {total:.6g})")


@dataclass(frozen=True)
class TaskSpec:
    """One computing task waiting in the vehicle queue."""

    id: int
    data_mb: float
    cycles_gc: float
    deadline_slots: float
    arrival_slot: int = 0

    def __post_init__(self):
        if self.data_mb <= 0 or self.cycles_gc <= 0:
            raise ValidationError("task size and cycles must be positive")
        if self.deadline_slots <= 0:
            raise ValidationError("deadline_slots must be positive")


# Named RNG stream ids; each stream is owned by exactly one consumer so that
# common-random-number comparisons across sweep cells stay aligned.
STREAM_TASKS = 0
STREAM_FADING_MEC = 1
STREAM_FADING_CLOUD = 2
STREAM_CAPACITY = 3
STREAM_RATE_CHAIN = 4
STREAM_POLICY = 5
STREAM_INIT = 6
STREAM_NN_INIT = 7


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for a (seed, stream) pair."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.default_rng(ss)


def sample_uniform(interval: Interval, rng: np.random.Generator) -> float:
    """Uniform draw from [lo, hi]; degenerate intervals return lo exactly."""
    lo, hi = interval
    if lo > hi:
        raise ValidationError(f"inverted interval [{lo}, {hi}]")
    if lo == hi:
        return float(lo)
    return float(lo + (hi - lo) * rng.random())


_PARAM_FIELDS = {f.name: f for f in dataclasses.fields(SimParams)}
_WEIGHT_FIELDS = {f.name: f for f in dataclasses.fields(CostWeights)}


def _parse_value(field: dataclasses.Field, raw: str, path: str, lineno: int):
    raw = raw.strip()
    try:
        if field.type in ("Interval", Interval) or "Interval" in str(field.type):
            parts = [p for p in raw.replace("[", "").replace("]", "").split(",") if p.strip()]
            if len(parts) != 2:
                raise ValueError("expected two comma-separated numbers")
            return (float(parts[0]), float(parts[1]))
        if field.type in ("bool", bool) or "bool" in str(field.type):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        if field.type in ("int", int) or str(field.type) == "int":
            return int(float(raw))
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{path}:{lineno}: cannot parse value {raw!r} for "
                          f"{field.name}: {exc}") from None


def load_config(path: str) -> tuple[SimParams, CostWeights]:
    """Parse a `key = value` config file; unset keys take the defaults.

    Lines starting with `#` are comments. Interval-valued keys take two
    comma-separated numbers. Raises ConfigError (naming the line) on parse
    failures and ValidationError on constraint violations.
    """
    params_kw: dict = {}
    weights_kw: dict = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in _PARAM_FIELDS:
            params_kw[key] = _parse_value(_PARAM_FIELDS[key], raw, path, lineno)
        elif key in _WEIGHT_FIELDS:
            weights_kw[key] = _parse_value(_WEIGHT_FIELDS[key], raw, path, lineno)
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    return SimParams(**params_kw), CostWeights(**weights_kw)


def serialize_config(params: SimParams, weights: CostWeights) -> str:
    """Render a config back to the key = value text form (round-trips)."""
    out = ["# dtoffload configuration"]
    for obj in (params, weights):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                out.append(f"{f.name} = {value[0]!r}, {value[1]!r}")
            else:
                out.append(f"{f.name} = {value!r}")
    return "\n".join(out) + "\n"
