"""Randomized purchase workload shared by the scenario and acceptance tests.

Many purchases run concurrently in one kernel with no background load.
Prices, deposits and amounts are random; some stations repost prices mid-
purchase, some vehicles meet an impostor at the pump (the station then
refunds), and some vehicles try to pull escrow out themselves. Invariants are
checked transaction by transaction as blocks are mined.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from agasp import contract
from agasp.core import CONTRACT_ADDRESS, WEI_PER_ETHER, ContractCall, Keyring
from agasp.ledger import TxStatus, apply_transaction
from agasp.netsim import AwaitConfirmation, Kernel, Sleep
from agasp.scenario import StationAgent, TraceAborted, VehicleAgent, purchase_process, refund_process

FUEL_TYPES = ("regular", "midgrade", "premium", "diesel")


@dataclass
class Outcome:
    index: int
    vehicle: VehicleAgent
    station: StationAgent
    fuel_type: str
    amount: int
    plan: dict
    trace: object = None
    aborted: object = None
    refund: object = None


@dataclass
class WorkloadResult:
    kernels: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    settlements: int = 0
    blocks_checked: int = 0
    vehicle_txs_checked: int = 0

    def successes(self):
        return [(o, k) for k, batch in self.kernels for o in batch if o.trace is not None]


def _random_prices(rng: random.Random) -> dict:
    kinds = rng.sample(FUEL_TYPES, rng.randint(1, len(FUEL_TYPES)))
    return {k: rng.randint(10**12, 10**13) for k in kinds}


class _Checker:
    """Per-transaction invariant checks, fed from the kernel's block listener."""

    def __init__(self, kernel: Kernel, vehicles: set, result: WorkloadResult):
        self.kernel = kernel
        self.vehicles = vehicles
        self.result = result
        self.snapshots = {}  # vehicle -> price snapshot at deposit

    def __call__(self, block, receipts, post_state):
        chain = self.kernel.chain
        state = chain.state_at(block.parent_hash).copy()
        for tx, receipt in zip(block.transactions, receipts):
            before = state.contract_storage.escrowed
            r = apply_transaction(state, tx, block.miner, block.number, chain.schedule)
            after = state.contract_storage.escrowed
            if r.fee != receipt.fee or r.status != receipt.status:
                self.result.violations.append(f"block {block.number}: receipt differs on re-execution")
            if tx.sender in self.vehicles:
                self.result.vehicle_txs_checked += 1
                if after < before:
                    self.result.violations.append(f"vehicle {tx.sender} released escrow")
            if state.balance(CONTRACT_ADDRESS) != after:
                self.result.violations.append(f"block {block.number}: contract balance != escrow mid-block")
            made = contract.find_log(receipt.logs, "DepositMade")
            if made is not None:
                self.snapshots[made.fields["vehicle"]] = (made.fields["amount"], dict(made.fields["prices"]))
            settled = contract.find_log(receipt.logs, "Settled")
            if settled is not None:
                f = settled.fields
                self.result.settlements += 1
                if f["payment"] + f["change"] != f["deposit"]:
                    self.result.violations.append("escrow not conserved at settlement")
                deposit, snapshot = self.snapshots.pop(f["vehicle"])
                if f["deposit"] != deposit or f["price"] != snapshot[f["fuel_type"]]:
                    self.result.violations.append("settlement did not use the deposit-time snapshot")
                if f["payment"] != min(f["amount"] * snapshot[f["fuel_type"]], deposit):
                    self.result.violations.append("settlement arithmetic")
        if state.state_hash() != post_state.state_hash():
            self.result.violations.append(f"block {block.number}: per-tx replay diverges from block state")
        escrow = post_state.contract_storage.escrowed
        if post_state.balance(CONTRACT_ADDRESS) != escrow:
            self.result.violations.append(f"block {block.number}: contract balance {post_state.balance(CONTRACT_ADDRESS)} != escrow {escrow}")
        self.result.blocks_checked += 1


def _reposter(kernel, station: StationAgent, rng: random.Random, times: int):
    for _ in range(times):
        yield Sleep(rng.uniform(5.0, 60.0))
        prices = {k: rng.randint(10**12, 10**13) for k in station.price_list}
        tx = station.key.transaction(kernel.next_nonce(station.address), CONTRACT_ADDRESS, 0, station.gas_price,
                                     70_000, ContractCall.set_gas_info(station.min_deposit, prices),
                                     submit_time=kernel.now)
        kernel.submit(tx)
        yield AwaitConfirmation(tx.id, 1, 3600.0)


def _attacker(kernel, o: Outcome, rng: random.Random):
    """Once its purchase has ended (settled or aborted with escrow still held),
    the vehicle tries to get wei out of the contract on its own."""
    while o.trace is None and o.aborted is None:
        yield Sleep(rng.uniform(1.0, 10.0))
    vehicle = o.vehicle
    attempts = [(ContractCall.send_fuel_usage(vehicle.address, o.fuel_type, 0), 0),
                (ContractCall.send_fuel_usage(vehicle.address, o.fuel_type, 1), 0),
                (None, 0)]
    for call, value in attempts:
        if kernel.view_state().balance(vehicle.address) < value + vehicle.gas_price * 70_000:
            continue
        tx = vehicle.key.transaction(kernel.next_nonce(vehicle.address), CONTRACT_ADDRESS, value, vehicle.gas_price,
                                     70_000, call, submit_time=kernel.now)
        kernel.submit(tx)
        yield AwaitConfirmation(tx.id, 1, 3600.0)


def _scenario(kernel, o: Outcome, user, rng: random.Random):
    yield Sleep(o.plan["start"])
    try:
        o.trace = yield from purchase_process(kernel, o.vehicle, o.station, o.fuel_type, o.amount, user)
    except TraceAborted as exc:
        o.aborted = exc
        if exc.step == "handshake":
            c = yield from refund_process(kernel, o.station, o.vehicle.address, o.fuel_type)
            o.refund = c


def run_workload(n: int, seed: int = 7, batch: int = 100, depth: int = 1) -> WorkloadResult:
    rng = random.Random(seed)
    result = WorkloadResult()
    index = 0
    while index < n:
        size = min(batch, n - index)
        keyring = Keyring()
        outcomes, users, alloc = [], {}, {}
        for j in range(size):
            i = index + j
            prices = _random_prices(rng)
            min_deposit = rng.randint(10**16, 2 * 10**17)
            station = StationAgent(keyring.issue(f"station-{i}"), min_deposit, prices,
                                   confirmation_depth=depth)
            fuel = rng.choice(sorted(prices))
            amount = rng.randint(1, 20_000)
            roll = rng.random()
            deposit = None if roll < 0.5 else (
                rng.randint(min_deposit, 3 * min_deposit) if roll < 0.9 else min_deposit - rng.randint(1, 10**15))
            impostor = rng.random() < 0.1
            plan = {"start": rng.uniform(0.0, 120.0), "deposit": deposit, "impostor": impostor,
                    "reposts": rng.randint(1, 3) if rng.random() < 0.3 else 0, "attack": rng.random() < 0.1}
            vehicle = VehicleAgent(keyring.issue(f"vehicle-{i}"), station.address,
                                   funding_balance_target=max(deposit or 0, min_deposit) + WEI_PER_ETHER // 100,
                                   confirmation_depth=depth, deposit_amount=deposit,
                                   pump_key=keyring.issue(f"impostor-{i}") if impostor else None)
            user = keyring.issue(f"user-{i}")
            alloc[user.address] = WEI_PER_ETHER
            alloc[station.address] = WEI_PER_ETHER // 10
            users[i] = user
            outcomes.append(Outcome(i, vehicle, station, fuel, amount, plan))
        kernel = Kernel(alloc, seed=seed * 1000 + index, keyring=keyring)
        kernel.block_listeners.append(_Checker(kernel, {o.vehicle.address for o in outcomes}, result))
        procs = []
        for o in outcomes:
            procs.append(kernel.spawn(_scenario(kernel, o, users[o.index], rng)))
            if o.plan["reposts"]:
                procs.append(kernel.spawn(_reposter(kernel, o.station, rng, o.plan["reposts"])))
            if o.plan["attack"]:
                procs.append(kernel.spawn(_attacker(kernel, o, rng)))
        kernel.run(until=24 * 3600.0, stop=lambda: all(p.done for p in procs))
        for p in procs:
            if p.error is not None:
                raise p.error
            if not p.done:
                result.violations.append(f"process {p.name} never finished")
        # A few extra blocks so every watched transaction is settled on chain.
        kernel.run(until=kernel.now + 120.0)
        result.kernels.append((kernel, outcomes))
        result.outcomes.extend(outcomes)
        index += size
    return result


def check_outcomes(result: WorkloadResult) -> list[str]:
    """Post-run checks on each purchase's outcome."""
    bad = []
    for kernel, batch in result.kernels:
        state = kernel.chain.head_state
        storage = state.contract_storage
        for o in batch:
            if o.plan["deposit"] is not None and o.plan["deposit"] < o.station.min_deposit:
                if o.aborted is None or o.aborted.reason != "BelowMinimum":
                    bad.append(f"{o.index}: below-minimum deposit not rejected")
                continue
            if o.plan["impostor"]:
                if o.trace is not None or o.aborted is None or o.aborted.step != "handshake":
                    bad.append(f"{o.index}: impostor was not stopped at the handshake")
                elif o.aborted.trace.step("fuel_dispensed") is not None:
                    bad.append(f"{o.index}: fuel dispensed after failed handshake")
                elif o.refund is None or not o.refund.ok or o.refund.receipt.status != TxStatus.SUCCESS:
                    bad.append(f"{o.index}: refund failed")
                continue
            if o.trace is None:
                bad.append(f"{o.index}: purchase aborted: {o.aborted}")
                continue
            steps = [s["step"] for s in o.trace.steps]
            if steps.index("deposit_sent") > steps.index("fuel_dispensed"):
                bad.append(f"{o.index}: fuel before deposit")
            s = o.trace.settlement
            if s["payment"] + s["change"] != s["deposit_wei"]:
                bad.append(f"{o.index}: settlement does not split the deposit")
            if o.vehicle.address in storage.deposits:
                bad.append(f"{o.index}: deposit still active after settlement")
    return bad
