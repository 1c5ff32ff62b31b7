"""Fee comparison, latency experiments and the throughput check.

Dollar figures use exact integer wei and ``Decimal`` dollars; rounding to
cents (half-up) happens only when a value is displayed or tabulated.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal, localcontext
from typing import Optional

import numpy as np
from scipy import stats

from .config import FeeConfig, SimConfig
from .core import WEI_PER_ETHER, Keyring
from .ledger import GasSchedule
from .netsim import BACKGROUND_SINK, Kernel, LoadModel

CENT = Decimal("0.01")
SWEEP_HEADER = ["gas_price_wei", "trial", "latency_seconds"]
CDF_HEADER = ["sample_index", "latency_seconds", "cumulative_fraction"]
FEE_HEADER = ["transaction", "paying_party", "fee_usd"]


class ProbeNeverIncluded(Exception):
    def __init__(self, gas_price: int, trial: int = 0):
        super().__init__(f"probe at gasPrice {gas_price} (trial {trial}) not included before the horizon")
        self.gas_price = gas_price
        self.trial = trial


# -- fees ---------------------------------------------------------------------------


def round_cents(x: Decimal) -> Decimal:
    return x.quantize(CENT, rounding=ROUND_HALF_UP)


def credit_card_fee_exact(rate, amount, flat) -> Decimal:
    rate, amount, flat = Decimal(str(rate)), Decimal(str(amount)), Decimal(str(flat))
    if rate < 0 or amount < 0 or flat < 0:
        raise ValueError("credit card fee inputs must be non-negative")
    return rate * amount + flat


def credit_card_fee(rate, amount, flat) -> Decimal:
    """Fee = rate * amount + flat, in dollars, rounded to the cent."""
    return round_cents(credit_card_fee_exact(rate, amount, flat))


def wei_to_usd(wei: int, usd_per_ether) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 80
        return Decimal(wei) * Decimal(str(usd_per_ether)) / Decimal(WEI_PER_ETHER)


def usd_to_wei(usd, usd_per_ether) -> int:
    """Whole wei, truncated."""
    with localcontext() as ctx:
        ctx.prec = 80
        return int(Decimal(str(usd)) * Decimal(WEI_PER_ETHER) / Decimal(str(usd_per_ether)))


@dataclass(frozen=True)
class FeeRow:
    transaction: str
    paying_party: str
    fee_usd: Decimal  # cents
    exact_usd: Decimal
    fee_wei: Optional[int] = None


@dataclass(frozen=True)
class FeeTable:
    rows: tuple[FeeRow, ...]
    total_savings: Decimal  # fraction, from the rounded rows
    station_savings: Decimal

    def row(self, transaction: str) -> FeeRow:
        return next(r for r in self.rows if r.transaction == transaction)

    def csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(FEE_HEADER)
        for r in self.rows:
            w.writerow([r.transaction, r.paying_party, f"{r.fee_usd:.2f}"])
        return out.getvalue()

    def summary(self) -> dict:
        return {"total_savings_percent": f"{self.total_savings * 100:.1f}",
                "station_savings_percent": f"{self.station_savings * 100:.1f}"}


FEE_ROWS = (
    ("setGasInfo", "Gas Station"),
    ("sendDeposit", "Vehicle"),
    ("sendFuelUsage", "Gas Station"),
)


def fee_table(cfg: FeeConfig = FeeConfig(), schedule: GasSchedule = GasSchedule()) -> FeeTable:
    credit_exact = credit_card_fee_exact(cfg.credit_rate, cfg.purchase_usd, cfg.credit_flat)
    rows = [FeeRow("Credit Card", "Gas Station", round_cents(credit_exact), credit_exact)]
    total_wei = 0
    for fn, party in FEE_ROWS:
        wei = cfg.gas_price_wei * schedule.per_function[fn]
        total_wei += wei
        usd = wei_to_usd(wei, cfg.usd_per_ether)
        rows.append(FeeRow(fn, party, round_cents(usd), usd, wei))
    # The total row sums the rounded rows, as a reader of the table would.
    total = sum((r.fee_usd for r in rows[1:]), Decimal(0))
    rows.append(FeeRow("setGasInfo+sendDeposit+sendFuelUsage", "Vehicle, Gas Station", total,
                       wei_to_usd(total_wei, cfg.usd_per_ether), total_wei))
    credit = rows[0].fee_usd
    station_only = next(r for r in rows if r.transaction == "sendFuelUsage").fee_usd
    return FeeTable(tuple(rows), (credit - total) / credit, (credit - station_only) / credit)


# -- latency ------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencySample:
    gas_price_wei: int
    submit_time: float
    inclusion_time: float  # when the submitter sees the including block
    trial_index: int
    block_number: int = 0

    def __post_init__(self):
        if not self.inclusion_time > self.submit_time:
            raise ValueError("an included probe has positive latency")

    @property
    def latency_seconds(self) -> float:
        return self.inclusion_time - self.submit_time


def _kernel(cfg: SimConfig, seed: int, load: Optional[LoadModel], probes: dict, keyring: Keyring) -> Kernel:
    return Kernel(probes, seed=seed, mean_block_interval=cfg.mean_block_interval,
                  block_gas_limit=cfg.block_gas_limit, schedule=cfg.schedule(), load=load,
                  propagation_delay=cfg.propagation_delay, keyring=keyring)


class _Probe:
    def __init__(self, kernel: Kernel, key, gas_price, gas_limit, trial):
        self.kernel, self.key, self.gas_price, self.gas_limit, self.trial = kernel, key, gas_price, gas_limit, trial
        self.submit_time = None
        self.sample: Optional[LatencySample] = None
        self.failed: Optional[str] = None

    def fire(self):
        k = self.kernel
        tx = self.key.transaction(k.next_nonce(self.key.address), BACKGROUND_SINK, 0, self.gas_price,
                                  self.gas_limit, submit_time=k.now)
        self.submit_time = k.now
        k.submit(tx)
        k.watch(tx.id, 1, self._seen)

    def _seen(self, c):
        if c.ok:
            self.sample = LatencySample(self.gas_price, self.submit_time, c.time, self.trial, c.block_number)
        else:
            self.failed = c.reason or c.status


def _probe_funding(gas_price: int, gas_limit: int, count: int = 1) -> int:
    return gas_price * gas_limit * count * 2


def trial_phase_offset(load: LoadModel, trial: int, trials: int, warmup: float) -> float:
    """Offset placing trial ``trial``'s probe at an evenly spread point of the load cycle."""
    if not load.phases:
        return 0.0
    cycle = load.cycle
    return ((trial + 0.5) / trials * cycle - warmup) % cycle


def measure_trial(cfg: SimConfig, gas_prices, trial: int, trials: int, gas_limit: int, *,
                  warmup: float, max_wait: float, seed: int) -> list[LatencySample]:
    """One run of the background load; after ``warmup`` a probe per gasPrice is
    submitted at the same instant, each from its own account."""
    keyring = Keyring()
    keys = [keyring.issue(f"probe-{p}") for p in gas_prices]
    base = cfg.load.model()
    load = None
    if base is not None:
        load = replace(base, phase_offset=trial_phase_offset(base, trial, trials, warmup))
    funding = {k.address: _probe_funding(p, gas_limit) for k, p in zip(keys, gas_prices)}
    kernel = _kernel(cfg, seed, load, funding, keyring)
    kernel.run(until=warmup)
    probes = [_Probe(kernel, k, p, gas_limit, trial) for k, p in zip(keys, gas_prices)]
    for probe in probes:
        probe.fire()
    kernel.run(until=warmup + max_wait,
               stop=lambda: all(p.sample is not None or p.failed is not None for p in probes))
    for probe in probes:
        if probe.sample is None:
            raise ProbeNeverIncluded(probe.gas_price, trial)
    return [p.sample for p in probes]


def latency_sweep(cfg: SimConfig, gas_prices=None, trials: Optional[int] = None, progress=None) -> dict[int, list[LatencySample]]:
    """Latency per gasPrice. Within a trial all prices face the same background
    traffic (seed ``seed + trial``); trials sit at spread-out load phases."""
    sweep = cfg.sweep
    gas_prices = list(gas_prices if gas_prices is not None else sweep.gas_prices)
    trials = trials if trials is not None else sweep.trials
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if len(set(gas_prices)) != len(gas_prices):
        raise ValueError("duplicate gas prices")
    out: dict[int, list[LatencySample]] = {p: [] for p in gas_prices}
    for i in range(trials):
        for s in measure_trial(cfg, gas_prices, i, trials, sweep.probe_gas_limit, warmup=sweep.warmup,
                               max_wait=sweep.max_wait, seed=cfg.seed + i):
            out[s.gas_price_wei].append(s)
        if progress is not None:
            progress(i)
    return out


@dataclass(frozen=True)
class CdfResult:
    samples: tuple[LatencySample, ...]  # in submission order
    mean: float
    p95: float

    @property
    def sorted_latencies(self) -> list[float]:
        return sorted(s.latency_seconds for s in self.samples)

    @property
    def ratio(self) -> float:
        return self.p95 / self.mean

    def cdf_points(self) -> list[tuple[int, float, float]]:
        lat = self.sorted_latencies
        n = len(lat)
        return [(i, x, (i + 1) / n) for i, x in enumerate(lat)]

    def summary(self) -> dict:
        return {"trials": len(self.samples), "mean_seconds": self.mean, "p95_seconds": self.p95,
                "p95_over_mean": self.ratio}


def latency_cdf(cfg: SimConfig, gas_price: Optional[int] = None, trials: Optional[int] = None,
                constant_load: bool = False) -> CdfResult:
    """Identical probes spread evenly over ``cdf.cycles`` load cycles in one run.

    Each probe comes from its own account. With ``constant_load`` the phase
    schedule is replaced by its time average (the control run).
    """
    c = cfg.cdf
    gas_price = gas_price if gas_price is not None else c.gas_price
    trials = trials if trials is not None else c.trials
    if trials < 1:
        raise ValueError("trials must be at least 1")
    load = cfg.load.model()
    span = c.cycles * _cycle_of(load)
    if constant_load and load is not None:
        load = load.flattened()
    spacing = span / trials
    keyring = Keyring()
    keys = [keyring.issue(f"probe-{i}") for i in range(trials)]
    funding = {k.address: _probe_funding(gas_price, c.probe_gas_limit) for k in keys}
    kernel = _kernel(cfg, cfg.seed, load, funding, keyring)
    probes = [_Probe(kernel, k, gas_price, c.probe_gas_limit, i) for i, k in enumerate(keys)]
    for i, p in enumerate(probes):
        kernel.run(until=c.warmup + i * spacing)
        p.fire()
    deadline = kernel.now + c.max_wait
    kernel.run(until=deadline, stop=lambda: all(p.sample is not None or p.failed for p in probes))
    for p in probes:
        if p.sample is None:
            raise ProbeNeverIncluded(gas_price, p.trial)
    samples = tuple(p.sample for p in probes)
    lat = np.array([s.latency_seconds for s in samples])
    return CdfResult(samples, float(lat.mean()), float(np.percentile(lat, 95)))


def _cycle_of(load: Optional[LoadModel]) -> float:
    return load.cycle if load is not None and load.phases else 9000.0


# -- sweep statistics ---------------------------------------------------------------


@dataclass(frozen=True)
class SweepStats:
    gas_prices: tuple[int, ...]
    means: tuple[float, ...]
    variances: tuple[float, ...]
    spearman: float
    variance_inversions: int

    @property
    def top_mean(self) -> float:
        return self.means[-1]

    def diminishing_returns(self) -> bool:
        top = abs(self.means[-2] - self.means[-1])
        bottom = abs(self.means[0] - self.means[1])
        return top < 0.2 * bottom

    def to_dict(self) -> dict:
        return {"gas_prices": list(self.gas_prices), "mean_latency": list(self.means),
                "latency_variance": list(self.variances), "spearman": self.spearman,
                "variance_inversions": self.variance_inversions}


def sweep_stats(samples: dict[int, list[LatencySample]]) -> SweepStats:
    prices = sorted(samples)
    means = [float(np.mean([s.latency_seconds for s in samples[p]])) for p in prices]
    variances = [float(np.var([s.latency_seconds for s in samples[p]], ddof=1)) if len(samples[p]) > 1 else 0.0
                 for p in prices]
    # Undefined when every mean is the same (e.g. no background load).
    rho = stats.spearmanr(prices, means).statistic if len(set(means)) > 1 else float("nan")
    inversions = sum(1 for a, b in zip(variances, variances[1:]) if b > a)
    return SweepStats(tuple(prices), tuple(means), tuple(variances), float(rho), inversions)


# -- throughput ---------------------------------------------------------------------


@dataclass(frozen=True)
class ThroughputResult:
    duration: float
    included: int
    blocks: int
    nominal_bound: float  # blockGasLimit / (gasLimit * configured mean interval)
    realized_bound: float  # same, with the realized mean interval
    max_per_block: int

    @property
    def rate(self) -> float:
        return self.included / self.duration

    @property
    def realized_interval(self) -> float:
        return self.duration / self.blocks if self.blocks else math.inf

    def to_dict(self) -> dict:
        return {"duration_seconds": self.duration, "included": self.included, "blocks": self.blocks,
                "tx_per_second": self.rate, "nominal_bound": self.nominal_bound,
                "realized_bound": self.realized_bound, "max_tx_in_a_block": self.max_per_block}


def throughput_run(cfg: SimConfig) -> ThroughputResult:
    """Saturate the chain with plain transfers and count what gets in.

    Counting starts after a warmup so the pool is already backed up. Only
    blocks fully inside the measurement window count.
    """
    t = cfg.throughput
    gas = cfg.base_transfer_gas
    capacity = cfg.block_gas_limit / (gas * cfg.mean_block_interval)
    load = LoadModel(capacity * t.load_factor, cfg.load.median_gas_price, cfg.load.sigma, gas, (), 0.0, t.accounts)
    kernel = _kernel(cfg, cfg.seed, load, {}, Keyring())
    window = []
    start, end = t.warmup, t.warmup + t.duration

    def on_block(block, receipts, state):
        if start <= block.timestamp < end:
            window.append(block)

    kernel.block_listeners.append(on_block)
    kernel.run(until=end)
    included = sum(len(b.transactions) for b in window)
    per_block = max((len(b.transactions) for b in window), default=0)
    # Realized interval from the block times bracketing the window.
    blocks = len(window)
    realized = t.duration / blocks if blocks else math.inf
    return ThroughputResult(t.duration, included, blocks, capacity,
                            cfg.block_gas_limit / (gas * realized), per_block)


# -- CSV ----------------------------------------------------------------------------


def sweep_csv(samples: dict[int, list[LatencySample]]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for price in sorted(samples):
        for s in sorted(samples[price], key=lambda s: s.trial_index):
            w.writerow([price, s.trial_index, repr(s.latency_seconds)])
    return out.getvalue()


def cdf_csv(result: CdfResult) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CDF_HEADER)
    for i, x, f in result.cdf_points():
        w.writerow([i, repr(x), repr(f)])
    return out.getvalue()


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
