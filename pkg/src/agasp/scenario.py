"""Vehicle and station agents running a full gasoline purchase.

Sequence: station posts prices (only when they changed), the user funds the
vehicle, the vehicle reads the station's posted info and sends a deposit,
waits for confirmation, drives to the pump, both sides run an off-chain
challenge-response handshake, the station checks the deposit, dispenses,
and reports usage; the contract settles payment and change.

A :class:`PurchaseTrace` records every step. Its fields are chosen so that
:func:`audit_trace` can re-derive each of them from the chain plus the
network's delivery delay, which makes any post-hoc edit detectable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

from . import contract
from .chain import Chain, execute_block
from .core import CONTRACT_ADDRESS, Address, ContractCall, KeyHandle, Keyring, hash_content
from .netsim import AwaitConfirmation, Kernel, Sleep

TRACE_SCHEMA = "agasp.purchase-trace/1"
DEFAULT_GAS_PRICE = 10 * 10**9
DEFAULT_GAS_LIMIT = 70_000
GAL_PER_MIN_10 = 10_000 / 60  # mgal per second at 10 gal/min


class TraceAborted(Exception):
    def __init__(self, step: str, reason: str, trace: Optional["PurchaseTrace"] = None):
        super().__init__(f"{step}: {reason}")
        self.step = step
        self.reason = reason
        self.trace = trace


class AuditMismatch(Exception):
    def __init__(self, diff: list[str]):
        super().__init__("; ".join(diff[:5]) + (" …" if len(diff) > 5 else ""))
        self.diff = diff


@dataclass
class VehicleAgent:
    key: KeyHandle
    target_station: Address
    funding_balance_target: int = 0
    tank_capacity: int = 12_000
    confirmation_depth: int = 1
    deposit_amount: Optional[int] = None  # None: the station's posted minimum
    pump_key: Optional[KeyHandle] = None  # key presented at the pump; differs only for impostors
    gas_price: int = DEFAULT_GAS_PRICE

    @property
    def address(self) -> Address:
        return self.key.address


@dataclass
class StationAgent:
    key: KeyHandle
    min_deposit: int
    price_list: dict[str, int]
    pump_flow_rate: float = GAL_PER_MIN_10
    confirmation_depth: int = 1
    gas_price: int = DEFAULT_GAS_PRICE

    @property
    def address(self) -> Address:
        return self.key.address


@dataclass(frozen=True)
class Handshake:
    vehicle: Address
    station: Address
    nonce_v: bytes
    nonce_s: bytes
    outcome: str  # verified | failed


def handshake_challenges(deposit_tx_id: bytes) -> tuple[bytes, bytes]:
    """Challenges bound to the deposit, so a response cannot be replayed for another purchase."""
    return (hash_content(b"vehicle-challenge:" + deposit_tx_id),
            hash_content(b"station-challenge:" + deposit_tx_id))


def run_handshake(vehicle: VehicleAgent, station: StationAgent, deposit_tx_id: bytes) -> Handshake:
    """Off-chain mutual challenge-response at the pump. No transactions, no fees."""
    nonce_v, nonce_s = handshake_challenges(deposit_tx_id)
    presented = vehicle.pump_key or vehicle.key
    vehicle_ok = station.key.verify_peer(vehicle.address, nonce_s, presented.respond(nonce_s))
    station_ok = presented.verify_peer(station.address, nonce_v, station.key.respond(nonce_v))
    return Handshake(vehicle.address, station.address, nonce_v, nonce_s,
                     "verified" if vehicle_ok and station_ok else "failed")


# -- trace ------------------------------------------------------------------------


@dataclass
class PurchaseTrace:
    vehicle: Address
    station: Address
    user: Optional[Address]  # set only when the user funded the vehicle in this purchase
    fuel_type: str
    confirmation_depth: int
    steps: list[dict] = field(default_factory=list)
    settlement: Optional[dict] = None

    def step(self, name: str) -> Optional[dict]:
        return next((s for s in self.steps if s["step"] == name), None)

    @property
    def fee_bearing_steps(self) -> list[dict]:
        return [s for s in self.steps if s["kind"] == "contract"]

    def to_dict(self) -> dict:
        return {
            "schema": TRACE_SCHEMA,
            "vehicle": self.vehicle.hex,
            "station": self.station.hex,
            "user": self.user.hex if self.user is not None else None,
            "fuel_type": self.fuel_type,
            "confirmation_depth": self.confirmation_depth,
            "steps": [dict(s) for s in self.steps],
            "settlement": dict(self.settlement) if self.settlement is not None else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PurchaseTrace":
        if d.get("schema") != TRACE_SCHEMA:
            raise ValueError("unknown trace schema")
        user = Address.from_hex(d["user"]) if d.get("user") is not None else None
        return cls(Address.from_hex(d["vehicle"]), Address.from_hex(d["station"]), user,
                   d["fuel_type"], d["confirmation_depth"], [dict(s) for s in d["steps"]],
                   dict(d["settlement"]) if d.get("settlement") is not None else None)


def _tx_step(name: str, kind: str, tx, confirmation) -> dict:
    r = confirmation.receipt
    return {
        "step": name,
        "kind": kind,
        "time": tx.submit_time,
        "tx_id": tx.id.hex(),
        "sender": tx.sender.hex,
        "value": tx.value,
        "gas_price": tx.gas_price,
        "block_number": confirmation.block_number,
        "confirmed_block": confirmation.confirmed_block,
        "status": r.status.value,
        "gas_used": r.gas_used,
        "fee_wei": r.fee,
    }


# -- purchase process -------------------------------------------------------------


def _send(kernel: Kernel, key: KeyHandle, recipient: Address, value: int, gas_price: int,
          payload: Optional[ContractCall], gas_limit: int = DEFAULT_GAS_LIMIT):
    tx = key.transaction(kernel.next_nonce(key.address), recipient, value, gas_price, gas_limit, payload,
                         submit_time=kernel.now)
    kernel.submit(tx)
    return tx


def _confirm(trace, step, confirmation, require_success=True):
    if confirmation.status == "dropped":
        raise TraceAborted(step, confirmation.reason, trace)
    if confirmation.status == "timeout":
        raise TraceAborted(step, "NotConfirmed", trace)
    if require_success and confirmation.receipt.status.value != "success":
        raise TraceAborted(step, confirmation.receipt.revert_reason or confirmation.receipt.status.value, trace)


def purchase_process(kernel: Kernel, vehicle: VehicleAgent, station: StationAgent, fuel_type: str,
                     amount: int, user: Optional[KeyHandle] = None, timeout: float = 6 * 3600.0,
                     probe=None):
    """Generator driving one purchase; returns the finished :class:`PurchaseTrace`.

    ``probe``, if given, is called with the trace after each step (test hook).
    """
    if amount <= 0:
        raise ValueError("a purchase dispenses a positive amount; use refund_deposit to cancel")
    trace = PurchaseTrace(vehicle.address, station.address, None, fuel_type, vehicle.confirmation_depth)
    depth_v = vehicle.confirmation_depth
    depth_s = station.confirmation_depth

    def note(entry):
        trace.steps.append(entry)
        if probe is not None:
            probe(trace)

    # Station publishes prices if what is on chain differs from its list.
    posted = kernel.view_state().contract_storage.stations.get(station.address)
    if posted is None or posted.min_deposit != station.min_deposit or dict(posted.prices) != station.price_list:
        tx = _send(kernel, station.key, CONTRACT_ADDRESS, 0, station.gas_price,
                   ContractCall.set_gas_info(station.min_deposit, station.price_list))
        c = yield AwaitConfirmation(tx.id, depth_s, timeout)
        _confirm(trace, "station_priced", c)
        note(_tx_step("station_priced", "contract", tx, c))

    # User tops the vehicle up to its funding target with a plain transfer.
    if user is not None:
        shortfall = vehicle.funding_balance_target - kernel.view_state().balance(vehicle.address)
        if shortfall > 0:
            tx = _send(kernel, user, vehicle.address, shortfall, vehicle.gas_price, None, 21_000)
            c = yield AwaitConfirmation(tx.id, depth_v, timeout)
            _confirm(trace, "vehicle_funded", c)
            trace.user = user.address
            note(_tx_step("vehicle_funded", "transfer", tx, c))

    # Free read of the posted info, then the deposit.
    view = kernel.view_state()
    try:
        info = contract.get_gas_info(view.contract_storage, station.address)
    except contract.UnknownStation:
        raise TraceAborted("info_polled", "UnknownStation", trace) from None
    note({"step": "info_polled", "kind": "read", "time": kernel.now,
          "observed_block": kernel.delivered_block.number,
          "min_deposit": info.min_deposit, "prices": dict(sorted(info.prices.items()))})
    deposit = vehicle.deposit_amount if vehicle.deposit_amount is not None else info.min_deposit
    tx = _send(kernel, vehicle.key, CONTRACT_ADDRESS, deposit, vehicle.gas_price,
               ContractCall.send_deposit(station.address))
    deposit_tx = tx
    c = yield AwaitConfirmation(tx.id, depth_v, timeout)
    _confirm(trace, "sendDeposit", c)
    made = contract.find_log(c.receipt.logs, "DepositMade")
    entry = _tx_step("deposit_sent", "contract", tx, c)
    entry["deposit_wei"] = made.fields["amount"]
    entry["price_snapshot"] = dict(sorted(made.fields["prices"].items()))
    note(entry)

    # Vehicle is at the pump the moment it sees the deposit confirmed.
    hs = run_handshake(vehicle, station, deposit_tx.id)
    note({"step": "handshake", "kind": "offchain", "time": kernel.now, "nonce_v": hs.nonce_v.hex(),
          "nonce_s": hs.nonce_s.hex(), "outcome": hs.outcome})
    if hs.outcome != "verified":
        raise TraceAborted("handshake", "HandshakeFailed", trace)

    ok = contract.verify_deposit(kernel.view_state().contract_storage, station.address, vehicle.address)
    note({"step": "deposit_verified", "kind": "read", "time": kernel.now,
          "observed_block": kernel.delivered_block.number, "result": ok})
    if not ok:
        raise TraceAborted("deposit_verified", "NoDeposit", trace)

    start = kernel.now
    duration = amount / station.pump_flow_rate
    yield Sleep(duration)
    note({"step": "fuel_dispensed", "kind": "offchain", "time": start, "end_time": kernel.now,
          "fuel_type": fuel_type, "amount_mgal": amount, "flow_rate": station.pump_flow_rate})

    tx = _send(kernel, station.key, CONTRACT_ADDRESS, 0, station.gas_price,
               ContractCall.send_fuel_usage(vehicle.address, fuel_type, amount))
    c = yield AwaitConfirmation(tx.id, depth_s, timeout)
    _confirm(trace, "sendFuelUsage", c)
    note(_tx_step("usage_reported", "contract", tx, c))
    settled = contract.find_log(c.receipt.logs, "Settled")
    trace.settlement = {"payment": settled.fields["payment"], "change": settled.fields["change"],
                        "price_per_mgal": settled.fields["price"], "deposit_wei": settled.fields["deposit"],
                        "shortfall": contract.find_log(c.receipt.logs, "Shortfall") is not None,
                        "block_number": c.block_number}
    return trace


def run_purchase(vehicle: VehicleAgent, station: StationAgent, fuel_type: str, amount: int, kernel: Kernel,
                 user: Optional[KeyHandle] = None, timeout: float = 6 * 3600.0) -> PurchaseTrace:
    proc = kernel.spawn(purchase_process(kernel, vehicle, station, fuel_type, amount, user, timeout),
                        name=f"purchase-{vehicle.address.hex[:10]}")
    try:
        return kernel.run_process(proc)
    except TimeoutError:
        raise TraceAborted("run", "NotFinished") from None


def refund_process(kernel: Kernel, station: StationAgent, vehicle: Address, fuel_type: str,
                   timeout: float = 6 * 3600.0):
    """Station cancels a deposit by reporting zero fuel; the full deposit returns as change."""
    tx = _send(kernel, station.key, CONTRACT_ADDRESS, 0, station.gas_price,
               ContractCall.send_fuel_usage(vehicle, fuel_type, 0))
    c = yield AwaitConfirmation(tx.id, station.confirmation_depth, timeout)
    return c


def refund_deposit(station: StationAgent, vehicle: Address, fuel_type: str, kernel: Kernel):
    proc = kernel.spawn(refund_process(kernel, station, vehicle, fuel_type), name="refund")
    return kernel.run_process(proc)


# -- audit --------------------------------------------------------------------------


@dataclass
class AuditReport:
    clean: bool
    checks: int
    settlement: Optional[dict] = None

    def to_dict(self) -> dict:
        return {"clean": self.clean, "checks": self.checks, "settlement": self.settlement}


class ChainRecord:
    """Canonical chain re-executed from genesis: receipts and contract storage per block.

    Build once and pass to :func:`audit_trace` when auditing many traces against one chain.
    """

    def __init__(self, chain: Chain, delay: float = 0.5):
        self.delay = delay
        self.blocks = chain.canonical()
        self.receipts: dict[bytes, tuple] = {}
        self.txs: dict[bytes, Any] = {}
        self.by_sender: dict[Address, list] = {}
        state = chain.genesis_state
        self.storages = [state.contract_storage]
        for block in self.blocks[1:]:
            violations, state, receipts = execute_block(state, block, chain.schedule)
            if violations:
                raise AuditMismatch([f"block {block.number} does not replay: {v}" for v in violations])
            for tx, r in zip(block.transactions, receipts):
                self.receipts[tx.id] = (block, r)
                self.txs[tx.id] = tx
                self.by_sender.setdefault(tx.sender, []).append((block.number, tx))
            self.storages.append(state.contract_storage)
        self.state_hash = state.state_hash()

    def view_at(self, t: float) -> int:
        """Latest block an agent has seen at time ``t``."""
        seen = 0
        for b in self.blocks:
            if b.timestamp + self.delay <= t + 1e-9:
                seen = b.number
            else:
                break
        return seen

    def seen_time(self, number: int) -> float:
        return self.blocks[number].timestamp + self.delay


class _Auditor:
    def __init__(self, record: ChainRecord):
        self.record = record
        self.blocks = record.blocks
        self.receipts = record.receipts
        self.txs = record.txs
        self.storages = record.storages
        self.view_at = record.view_at
        self.seen_time = record.seen_time
        self.diff: list[str] = []
        self.checks = 0

    def expect(self, what: str, recorded, derived):
        self.checks += 1
        if recorded != derived:
            self.diff.append(f"{what}: trace has {recorded!r}, chain says {derived!r}")

    def expect_time(self, what: str, recorded, derived, rel_tol: float = 0.0):
        self.checks += 1
        if not isinstance(recorded, (int, float)) or isinstance(recorded, bool) or not math.isclose(
                recorded, derived, rel_tol=rel_tol, abs_tol=1e-9):
            self.diff.append(f"{what}: trace has {recorded!r}, chain says {derived!r}")


_TX_FIELDS = {"step", "kind", "time", "tx_id", "sender", "value", "gas_price", "block_number", "confirmed_block",
              "status", "gas_used", "fee_wei"}
_STEP_SHAPES = {
    "station_priced": ("contract", _TX_FIELDS),
    "vehicle_funded": ("transfer", _TX_FIELDS),
    "info_polled": ("read", {"step", "kind", "time", "observed_block", "min_deposit", "prices"}),
    "deposit_sent": ("contract", _TX_FIELDS | {"deposit_wei", "price_snapshot"}),
    "handshake": ("offchain", {"step", "kind", "time", "nonce_v", "nonce_s", "outcome"}),
    "deposit_verified": ("read", {"step", "kind", "time", "observed_block", "result"}),
    "fuel_dispensed": ("offchain", {"step", "kind", "time", "end_time", "fuel_type", "amount_mgal", "flow_rate"}),
    "usage_reported": ("contract", _TX_FIELDS),
}
_STEP_ORDER = list(_STEP_SHAPES)


def audit_trace(trace, chain: Optional[Chain] = None, delivery_delay: float = 0.5,
                record: Optional[ChainRecord] = None) -> AuditReport:
    """Recompute a purchase from on-chain data alone and compare it with ``trace``.

    Accepts a :class:`PurchaseTrace` or its dict form. ``delivery_delay`` is
    the network delay after which agents see a block. Raises
    :class:`AuditMismatch` listing every disagreement.
    """
    if isinstance(trace, PurchaseTrace):
        trace = trace.to_dict()
    if record is None:
        record = ChainRecord(chain, delivery_delay)
    a = _Auditor(record)
    try:
        _audit(a, trace)
    except (KeyError, TypeError, ValueError, IndexError, AttributeError) as exc:
        a.diff.append(f"malformed trace: {exc!r}")
    if a.diff:
        raise AuditMismatch(a.diff)
    return AuditReport(True, a.checks, trace.get("settlement"))


def _audit(a: _Auditor, t: dict):
    a.expect("schema", t["schema"], TRACE_SCHEMA)
    vehicle, station = Address.from_hex(t["vehicle"]), Address.from_hex(t["station"])
    steps = {s["step"]: s for s in t["steps"]}
    names = [s["step"] for s in t["steps"]]
    a.expect("step order", names, [n for n in _STEP_ORDER if n in steps])
    for name, step in steps.items():
        kind, keys = _STEP_SHAPES[name]
        a.expect(f"{name}.kind", step["kind"], kind)
        a.expect(f"{name} fields", set(step), keys)
    funded = steps.get("vehicle_funded")
    a.expect("user", t["user"], funded["sender"] if funded else None)
    user = Address.from_hex(funded["sender"]) if funded else None
    for required in ("info_polled", "deposit_sent", "handshake", "deposit_verified", "fuel_dispensed",
                     "usage_reported"):
        a.expect(f"{required} present", required in steps, True)
    depth = t["confirmation_depth"]
    a.expect("confirmation depth", isinstance(depth, int) and depth >= 1, True)

    expected_calls = {
        "station_priced": (station, "setGasInfo"),
        "vehicle_funded": (user, None),
        "deposit_sent": (vehicle, "sendDeposit"),
        "usage_reported": (station, None),
    }
    prev_seen = None
    for name in ("station_priced", "vehicle_funded"):
        if name in steps:
            txs = _audit_tx_step(a, steps[name], expected_calls[name], depth)
            if prev_seen is not None:
                a.expect_time(f"{name}.time", steps[name]["time"], prev_seen)
            prev_seen = a.seen_time(steps[name]["confirmed_block"])
            if name == "vehicle_funded":
                a.expect("vehicle_funded recipient", txs.recipient, vehicle)
                a.expect("vehicle_funded is a transfer", txs.payload, None)

    dep = steps["deposit_sent"]
    dep_tx = _audit_tx_step(a, dep, expected_calls["deposit_sent"], depth)
    if prev_seen is not None:
        a.expect_time("deposit_sent.time", dep["time"], prev_seen)
    a.expect("deposit station", dep_tx.payload.args["station"], station)
    dep_block, dep_receipt = a.receipts[dep_tx.id]
    made = contract.find_log(dep_receipt.logs, "DepositMade")
    a.expect("DepositMade log present", made is not None, True)
    snapshot = dict(made.fields["prices"])
    a.expect("deposit_wei", dep["deposit_wei"], made.fields["amount"])
    a.expect("price_snapshot", dep["price_snapshot"], dict(sorted(snapshot.items())))

    poll = steps["info_polled"]
    a.expect_time("info_polled.time", poll["time"], dep["time"])
    observed = a.view_at(dep["time"])
    a.expect("info_polled.observed_block", poll["observed_block"], observed)
    info = a.storages[observed].stations.get(station)
    a.expect("info_polled station listed", info is not None, True)
    a.expect("info_polled.min_deposit", poll["min_deposit"], info.min_deposit)
    a.expect("info_polled.prices", poll["prices"], dict(sorted(info.prices.items())))

    arrival = a.seen_time(dep["confirmed_block"])
    hs = steps["handshake"]
    nonce_v, nonce_s = handshake_challenges(dep_tx.id)
    a.expect_time("handshake.time", hs["time"], arrival)
    a.expect("handshake.nonce_v", hs["nonce_v"], nonce_v.hex())
    a.expect("handshake.nonce_s", hs["nonce_s"], nonce_s.hex())
    a.expect("handshake.outcome", hs["outcome"], "verified")

    ver = steps["deposit_verified"]
    a.expect_time("deposit_verified.time", ver["time"], arrival)
    seen = a.view_at(arrival)
    a.expect("deposit_verified.observed_block", ver["observed_block"], seen)
    a.expect("deposit_verified.result", ver["result"],
             contract.verify_deposit(a.storages[seen], station, vehicle))

    fuel = steps["fuel_dispensed"]
    use = steps["usage_reported"]
    use_tx = _audit_tx_step(a, use, expected_calls["usage_reported"], depth)
    call = use_tx.payload
    a.expect("usage function", call.function, "sendFuelUsage")
    a.expect("usage vehicle", call.args["vehicle"], vehicle)
    a.expect("fuel_type", t["fuel_type"], call.args["fuel_type"])
    a.expect("fuel_dispensed.fuel_type", fuel["fuel_type"], call.args["fuel_type"])
    a.expect("fuel_dispensed.amount_mgal", fuel["amount_mgal"], call.args["amount"])
    a.expect_time("fuel_dispensed.time", fuel["time"], arrival)
    a.expect_time("fuel_dispensed.end_time", fuel["end_time"], use_tx.submit_time)
    a.expect_time("fuel_dispensed.flow_rate", fuel["flow_rate"],
                  call.args["amount"] / (use_tx.submit_time - arrival) if use_tx.submit_time > arrival
                  else fuel["flow_rate"], rel_tol=1e-9)
    a.expect_time("fuel_dispensed duration", fuel["end_time"] - fuel["time"],
                  fuel["amount_mgal"] / fuel["flow_rate"] if fuel["flow_rate"] else math.inf)
    a.expect("usage after deposit", use["block_number"] > dep["block_number"], True)
    # Pump-side steps are off-chain: the vehicle sends nothing between deposit and settlement.
    vehicle_txs = [tx for n, tx in a.record.by_sender.get(vehicle, ())
                   if dep["block_number"] < n <= use["block_number"]]
    a.expect("vehicle transactions during fueling", vehicle_txs, [])

    # Settlement recomputed from the deposit's snapshot and the reported usage only.
    price = snapshot.get(call.args["fuel_type"])
    deposit = made.fields["amount"]
    owed = call.args["amount"] * price
    payment = owed if owed <= deposit else deposit
    derived = {"payment": payment, "change": deposit - payment, "price_per_mgal": price,
               "deposit_wei": deposit, "shortfall": owed > deposit, "block_number": use["block_number"]}
    a.expect("settlement", t["settlement"], derived)
    _, use_receipt = a.receipts[use_tx.id]
    settled = contract.find_log(use_receipt.logs, "Settled")
    a.expect("Settled log agrees", (settled.fields["payment"], settled.fields["change"]),
             (payment, deposit - payment))


def _audit_tx_step(a: _Auditor, step: dict, expected: tuple, depth: int):
    name = step["step"]
    tx_id = bytes.fromhex(step["tx_id"])
    found = a.receipts.get(tx_id)
    a.expect(f"{name} on canonical chain", found is not None, True)
    if found is None:
        raise KeyError(name)
    block, receipt = found
    tx = a.txs[tx_id]
    sender, function = expected
    a.expect(f"{name}.sender", step["sender"], tx.sender.hex)
    a.expect(f"{name} signer", tx.sender, sender)
    if function is not None:
        a.expect(f"{name} function", tx.function, function)
    a.expect(f"{name}.recipient", tx.recipient == CONTRACT_ADDRESS, step["kind"] == "contract")
    a.expect_time(f"{name}.time", step["time"], tx.submit_time)
    a.expect(f"{name}.value", step["value"], tx.value)
    a.expect(f"{name}.gas_price", step["gas_price"], tx.gas_price)
    a.expect(f"{name}.block_number", step["block_number"], block.number)
    a.expect(f"{name}.confirmed_block", step["confirmed_block"], block.number + depth - 1)
    a.expect(f"{name} confirmed on chain", step["confirmed_block"] < len(a.blocks), True)
    a.expect(f"{name}.status", step["status"], receipt.status.value)
    a.expect(f"{name}.gas_used", step["gas_used"], receipt.gas_used)
    a.expect(f"{name}.fee_wei", step["fee_wei"], receipt.fee)
    return tx


def fee_bearing_count(trace: PurchaseTrace) -> int:
    return len(trace.fee_bearing_steps)


def new_agents(keyring: Keyring, label: str, price_list: dict[str, int], min_deposit: int, **vehicle_kw):
    """Convenience: a station, a vehicle targeting it, and the vehicle's owner."""
    station = StationAgent(keyring.issue(f"station-{label}"), min_deposit, dict(price_list))
    vehicle = VehicleAgent(keyring.issue(f"vehicle-{label}"), station.address, **vehicle_kw)
    user = keyring.issue(f"user-{label}")
    return station, vehicle, user


@dataclass
class ScenarioRun:
    trace: Optional[PurchaseTrace]
    report: Optional[AuditReport]
    kernel: Kernel
    error: Optional[Exception] = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.report is not None and self.report.clean


def run_configured_scenario(config, event_log=None) -> ScenarioRun:
    """One purchase as described by a :class:`agasp.config.Config`, then its audit."""
    sc, sim = config.scenario, config.sim
    keyring = Keyring()
    station = StationAgent(keyring.issue("station"), sc.min_deposit, dict(sc.prices), sc.pump_flow_rate,
                           sim.confirmation_depth)
    vehicle = VehicleAgent(keyring.issue("vehicle"), station.address, sc.vehicle_funding_target,
                           confirmation_depth=sim.confirmation_depth, deposit_amount=sc.deposit)
    user = keyring.issue("user")
    load = sim.load.model() if sc.background else None
    kernel = Kernel({user.address: sc.user_balance, station.address: sc.station_balance}, seed=sim.seed,
                    mean_block_interval=sim.mean_block_interval, block_gas_limit=sim.block_gas_limit,
                    schedule=sim.schedule(), load=load, propagation_delay=sim.propagation_delay,
                    keyring=keyring, event_log=event_log)
    kernel.run(until=sc.start_time)
    try:
        trace = run_purchase(vehicle, station, sc.fuel_type, sc.amount_mgal, kernel, user, sc.timeout)
    except TraceAborted as exc:
        return ScenarioRun(exc.trace, None, kernel, exc)
    try:
        report = audit_trace(trace, kernel.chain, sim.propagation_delay)
    except AuditMismatch as exc:
        return ScenarioRun(trace, None, kernel, exc)
    return ScenarioRun(trace, report, kernel)
