"""Experiment configuration: fee parameters, simulation parameters, scenario setup.

Configs are JSON. Every section is optional; missing keys take the defaults
below. Dollar amounts are written as strings so they stay exact decimals.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .core import WEI_PER_ETHER, WEI_PER_GWEI
from .ledger import GasSchedule
from .netsim import LoadModel, Phase


@dataclass(frozen=True)
class FeeConfig:
    usd_per_ether: Decimal = Decimal("650")
    gas_price_wei: int = 10 * WEI_PER_GWEI
    credit_rate: Decimal = Decimal("0.02")
    credit_flat: Decimal = Decimal("0.25")
    gallons: Decimal = Decimal("12")
    usd_per_gallon: Decimal = Decimal("3.85")

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "gas_price_wei":
                v = Decimal(str(v))
                object.__setattr__(self, f.name, v)
            if v <= 0:
                raise ValueError(f"{f.name} must be positive")

    @property
    def purchase_usd(self) -> Decimal:
        return self.gallons * self.usd_per_gallon


@dataclass(frozen=True)
class LoadConfig:
    arrival_rate: float = 15.0
    median_gas_price: int = 4 * WEI_PER_GWEI
    sigma: float = 0.6
    gas_limit_per_tx: int = 21_000
    accounts: int = 25_000
    # (duration s, rate multiplier, median multiplier)
    phases: tuple = ((7200.0, 1.0, 1.0), (1800.0, 2.5, 4.0))
    enabled: bool = True

    def model(self, phase_offset: float = 0.0) -> Optional[LoadModel]:
        if not self.enabled:
            return None
        return LoadModel(self.arrival_rate, self.median_gas_price, self.sigma, self.gas_limit_per_tx,
                         tuple(Phase(*p) for p in self.phases), phase_offset, self.accounts)


@dataclass(frozen=True)
class SweepConfig:
    gas_prices: tuple = tuple(2**k * WEI_PER_GWEI for k in range(7))  # 1 .. 64 gwei
    trials: int = 5
    probe_gas_limit: int = 70_000
    warmup: float = 1200.0
    max_wait: float = 6 * 3600.0


@dataclass(frozen=True)
class CdfConfig:
    gas_price: int = 10 * WEI_PER_GWEI
    trials: int = 60
    probe_gas_limit: int = 70_000
    cycles: float = 2.0  # load cycles the probes are spread over
    warmup: float = 1200.0
    max_wait: float = 6 * 3600.0


@dataclass(frozen=True)
class ThroughputConfig:
    load_factor: float = 3.0  # arrival rate as a multiple of capacity
    duration: float = 1800.0
    warmup: float = 60.0
    accounts: int = 5_000


@dataclass(frozen=True)
class ScenarioConfig:
    fuel_type: str = "regular"
    amount_mgal: int = 12_000
    prices: dict = field(default_factory=lambda: {
        "regular": 5_923_076_923_000,   # $3.85/gal at $650/ETH
        "premium": 6_923_076_923_000,
    })
    min_deposit: int = WEI_PER_ETHER // 10
    deposit: Optional[int] = None  # None: pay exactly the posted minimum
    vehicle_funding_target: int = WEI_PER_ETHER // 5
    user_balance: int = WEI_PER_ETHER
    station_balance: int = WEI_PER_ETHER // 10
    pump_flow_rate: float = 10_000 / 60
    start_time: float = 600.0
    timeout: float = 6 * 3600.0
    background: bool = True


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    mean_block_interval: float = 15.0
    block_gas_limit: int = 8_000_000
    gas_schedule: dict = field(default_factory=lambda: dict(GasSchedule().per_function))
    base_transfer_gas: int = 21_000
    propagation_delay: float = 0.5
    confirmation_depth: int = 1
    load: LoadConfig = field(default_factory=LoadConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    cdf: CdfConfig = field(default_factory=CdfConfig)
    throughput: ThroughputConfig = field(default_factory=ThroughputConfig)

    def __post_init__(self):
        if self.mean_block_interval <= 0 or self.block_gas_limit <= 0 or self.propagation_delay < 0:
            raise ValueError("invalid simulation parameters")
        if self.confirmation_depth < 1:
            raise ValueError("confirmation_depth must be at least 1")

    def schedule(self) -> GasSchedule:
        return GasSchedule(self.base_transfer_gas, dict(self.gas_schedule))


@dataclass(frozen=True)
class Config:
    fees: FeeConfig = field(default_factory=FeeConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    @property
    def seed(self) -> int:
        return self.sim.seed

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _plain(v):
    if isinstance(v, Decimal):
        return str(v)
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


_SECTIONS = {"fees": FeeConfig, "sim": SimConfig, "scenario": ScenarioConfig}
_SIM_SUBSECTIONS = {"load": LoadConfig, "sweep": SweepConfig, "cdf": CdfConfig, "throughput": ThroughputConfig}
_TUPLE_FIELDS = {"phases", "gas_prices"}


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for k, v in data.items():
        if k in _TUPLE_FIELDS:
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        kwargs[k] = v
    return cls(**kwargs)


def config_from_dict(data: dict) -> Config:
    data = copy.deepcopy(data)
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ValueError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    sim = data.get("sim", {})
    if "seed" in data:
        sim["seed"] = data["seed"]
    for name, cls in _SIM_SUBSECTIONS.items():
        if name in sim:
            sim[name] = _build(cls, sim[name], f"sim.{name}")
    return Config(_build(FeeConfig, data.get("fees", {}), "fees"), _build(SimConfig, sim, "sim"),
                  _build(ScenarioConfig, data.get("scenario", {}), "scenario"))


def apply_override(data: dict, assignment: str) -> dict:
    """Apply ``section.key=value`` to a raw config dict. The value is parsed as JSON when possible."""
    path, sep, raw = assignment.partition("=")
    if not sep or not path:
        raise ValueError(f"override must look like section.key=value, got {assignment!r}")
    try:
        value: Any = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = data
    keys = path.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return data


def default_config_text() -> str:
    return resources.files("agasp").joinpath("data/default_config.json").read_text()


def load_config(path=None, overrides=(), seed: Optional[int] = None) -> Config:
    """Read a JSON config (the bundled default if ``path`` is None) and apply overrides."""
    text = Path(path).read_text() if path is not None else default_config_text()
    data = json.loads(text)
    for o in overrides:
        apply_override(data, o)
    if seed is not None:
        data["seed"] = seed
    return config_from_dict(data)
