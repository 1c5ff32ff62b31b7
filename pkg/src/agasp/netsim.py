"""Discrete-event network kernel.

One logical miner produces blocks with exponential inter-block times. All
submitters share a single mempool reached after a fixed propagation delay.
Transactions are selected by descending gasPrice under the block gas limit.
A background load of plain transfers models congestion.

Every stochastic draw goes through ``Kernel.rng``; nothing else is random.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterator, Mapping, Optional

from .core import WEI_PER_GWEI, Address, Block, Keyring, Transaction
from .chain import Chain
from .ledger import GasSchedule, Receipt, WorldState

BACKGROUND_SINK = Address.derive("background-sink")
MINER_ADDRESS = Address.derive("miner")
BACKGROUND_FUNDING = 10**24


class EventKind(str, Enum):
    TX_SUBMITTED = "TxSubmitted"
    TX_ARRIVED = "TxArrivedAtPool"
    BLOCK_MINED = "BlockMined"
    BLOCK_DELIVERED = "BlockDelivered"
    AGENT_TIMER = "AgentTimer"


class DropReason(str, Enum):
    BAD_NONCE = "BadNonce"
    INSUFFICIENT_FUNDS = "InsufficientFunds"
    UNKNOWN_SENDER = "UnknownSender"
    BAD_SIGNATURE = "BadSignature"
    EXCEEDS_BLOCK_GAS_LIMIT = "ExceedsBlockGasLimit"


class TimeInPast(ValueError):
    pass


@dataclass(frozen=True)
class SimEvent:
    time: float
    seq: int
    kind: EventKind
    payload: Any = None


class EventQueue:
    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()
        self.now = 0.0

    def __len__(self):
        return len(self._heap)

    def schedule(self, time: float, kind: EventKind, payload: Any = None) -> SimEvent:
        if time < self.now:
            raise TimeInPast(f"{time} < {self.now}")
        event = SimEvent(time, next(self._seq), kind, payload)
        heapq.heappush(self._heap, (time, event.seq, event))
        return event

    def peek_time(self) -> float:
        return self._heap[0][0] if self._heap else math.inf

    def pop(self) -> SimEvent:
        _, _, event = heapq.heappop(self._heap)
        self.now = event.time
        return event


def schedule_event(queue: EventQueue, event: SimEvent) -> SimEvent:
    """Enqueue a pre-built event; its ``seq`` is reassigned by the queue."""
    return queue.schedule(event.time, event.kind, event.payload)


# -- mempool ----------------------------------------------------------------------


@dataclass
class PoolEntry:
    tx: Transaction
    arrival: int


class Mempool:
    """Pending transactions, indexed by id and by (sender, nonce).

    Future nonces are admitted; a transaction is only selectable once its
    sender's earlier nonces are on chain or selected ahead of it.
    """

    def __init__(self):
        self.by_id: dict[bytes, PoolEntry] = {}
        self.by_sender: dict[Address, dict[int, PoolEntry]] = {}
        self._arrivals = itertools.count()
        self._gas_limits: Counter = Counter()

    def __len__(self):
        return len(self.by_id)

    def __contains__(self, tx_id: bytes) -> bool:
        return tx_id in self.by_id

    def __iter__(self) -> Iterator[Transaction]:
        return (e.tx for e in self.by_id.values())

    @property
    def min_gas_limit(self) -> int:
        return min(self._gas_limits) if self._gas_limits else 0

    def add(self, tx: Transaction, state: WorldState) -> Optional[DropReason]:
        acct = state.accounts.get(tx.sender)
        if acct is None:
            return DropReason.UNKNOWN_SENDER
        if tx.nonce < acct.nonce or tx.nonce in self.by_sender.get(tx.sender, ()):
            return DropReason.BAD_NONCE
        if acct.balance < tx.max_cost:
            return DropReason.INSUFFICIENT_FUNDS
        entry = PoolEntry(tx, next(self._arrivals))
        self.by_id[tx.id] = entry
        self.by_sender.setdefault(tx.sender, {})[tx.nonce] = entry
        self._gas_limits[tx.gas_limit] += 1
        return None

    def remove(self, tx: Transaction):
        entry = self.by_id.pop(tx.id, None)
        if entry is None:
            return
        nonces = self.by_sender[tx.sender]
        del nonces[tx.nonce]
        if not nonces:
            del self.by_sender[tx.sender]
        self._gas_limits[tx.gas_limit] -= 1
        if not self._gas_limits[tx.gas_limit]:
            del self._gas_limits[tx.gas_limit]

    def revalidate(self, state: WorldState, senders=None) -> list[tuple[Transaction, DropReason]]:
        """Drop entries no longer valid against ``state``. Only ``senders`` are checked if given."""
        dropped = []
        for sender in list(self.by_sender if senders is None else senders):
            entries = self.by_sender.get(sender)
            if not entries:
                continue
            acct = state.accounts.get(sender)
            for nonce, entry in list(entries.items()):
                if acct is None:
                    dropped.append((entry.tx, DropReason.UNKNOWN_SENDER))
                elif nonce < acct.nonce:
                    dropped.append((entry.tx, DropReason.BAD_NONCE))
                elif acct.balance < entry.tx.max_cost:
                    dropped.append((entry.tx, DropReason.INSUFFICIENT_FUNDS))
        for tx, _ in dropped:
            self.remove(tx)
        return dropped


def select_transactions(pool: Mempool, state: WorldState, block_gas_limit: int) -> list[Transaction]:
    """Greedy by descending gasPrice, then earlier arrival, then lower nonce.

    Reserved gas (sum of gasLimit) never exceeds ``block_gas_limit``. Each
    sender's transactions are taken in nonce order, and only while the sender
    can cover the worst-case cost of everything selected for it so far.
    """
    heads = []
    for sender, entries in pool.by_sender.items():
        acct = state.accounts.get(sender)
        if acct is None:
            continue
        entry = entries.get(acct.nonce)
        if entry is not None:
            heads.append((-entry.tx.gas_price, entry.arrival, entry.tx.nonce, entry.tx))
    heapq.heapify(heads)

    selected = []
    remaining = block_gas_limit
    budget: dict[Address, int] = {}
    smallest = pool.min_gas_limit
    while heads and remaining >= smallest:
        _, _, nonce, tx = heapq.heappop(heads)
        if tx.gas_limit > remaining:
            continue
        funds = budget.get(tx.sender)
        if funds is None:
            funds = state.accounts[tx.sender].balance
        if tx.max_cost > funds:
            continue
        budget[tx.sender] = funds - tx.max_cost
        selected.append(tx)
        remaining -= tx.gas_limit
        nxt = pool.by_sender[tx.sender].get(nonce + 1)
        if nxt is not None:
            heapq.heappush(heads, (-nxt.tx.gas_price, nxt.arrival, nxt.tx.nonce, nxt.tx))
    return selected


# -- background load --------------------------------------------------------------


@dataclass(frozen=True)
class Phase:
    duration: float
    rate_multiplier: float = 1.0
    median_multiplier: float = 1.0

    def __post_init__(self):
        if self.duration <= 0 or self.rate_multiplier < 0 or self.median_multiplier <= 0:
            raise ValueError("phase needs positive duration and median multiplier, non-negative rate")


DEFAULT_PHASES = (
    Phase(7200.0, 1.0, 1.0),   # ordinary traffic
    Phase(1800.0, 2.5, 4.0),   # congestion: demand above capacity, bids up
)


@dataclass(frozen=True)
class LoadModel:
    """Poisson arrivals with lognormal gasPrice bids, modulated by a cyclic phase schedule."""

    arrival_rate: float = 15.0
    median_gas_price: int = 4 * WEI_PER_GWEI
    sigma: float = 0.6
    gas_limit_per_tx: int = 21_000
    phases: tuple[Phase, ...] = DEFAULT_PHASES
    phase_offset: float = 0.0
    accounts: int = 25_000

    def __post_init__(self):
        if self.arrival_rate < 0 or self.sigma < 0 or self.median_gas_price <= 0:
            raise ValueError("invalid load model")
        object.__setattr__(self, "phases", tuple(self.phases))

    @property
    def cycle(self) -> float:
        return sum(p.duration for p in self.phases)

    def phase_at(self, t: float) -> tuple[Phase, float]:
        """Phase in force at ``t`` and the time it ends."""
        if not self.phases:
            return Phase(math.inf), math.inf
        cycle = self.cycle
        pos = (t + self.phase_offset) % cycle
        start = t - pos
        for p in self.phases:
            if pos < p.duration:
                return p, start + p.duration
            pos -= p.duration
            start += p.duration
        return self.phases[0], start + self.phases[0].duration  # float round-off at the cycle edge

    def rate_at(self, t: float) -> float:
        return self.arrival_rate * self.phase_at(t)[0].rate_multiplier

    def median_at(self, t: float) -> float:
        return self.median_gas_price * self.phase_at(t)[0].median_multiplier

    def next_arrival(self, t: float, rng: random.Random) -> float:
        while True:
            phase, end = self.phase_at(t)
            rate = self.arrival_rate * phase.rate_multiplier
            if rate <= 0:
                if math.isinf(end):
                    return math.inf
                t = end
                continue
            t_next = t + rng.expovariate(rate)
            if t_next < end:
                return t_next
            t = end

    def sample_gas_price(self, t: float, rng: random.Random) -> int:
        return max(1, round(self.median_at(t) * math.exp(self.sigma * rng.gauss(0.0, 1.0))))

    def flattened(self) -> "LoadModel":
        """Same time-averaged rate and median, no variation over time."""
        if not self.phases:
            return self
        cycle = self.cycle
        rate = sum(p.duration * p.rate_multiplier for p in self.phases) / cycle
        median = sum(p.duration * p.median_multiplier for p in self.phases) / cycle
        return LoadModel(self.arrival_rate * rate, round(self.median_gas_price * median), self.sigma,
                         self.gas_limit_per_tx, (), 0.0, self.accounts)

    def percentile_price(self, q: float, t: float = 0.0) -> int:
        from statistics import NormalDist

        return round(self.median_at(t) * math.exp(self.sigma * NormalDist().inv_cdf(q)))


def generate_background_load(model: LoadModel, horizon: float, rng: random.Random,
                             start: float = 0.0) -> Iterator[tuple[float, int, int]]:
    """Yield ``(time, gas_price, gas_limit)`` for each background arrival before ``horizon``."""
    t = model.next_arrival(start, rng)
    while t < horizon:
        yield t, model.sample_gas_price(t, rng), model.gas_limit_per_tx
        t = model.next_arrival(t, rng)


class BackgroundSenders:
    """Funded accounts for the background load.

    An idle account (nothing pending) is preferred so that background bids
    are not held back by their sender's earlier low bids; when every account
    is busy the accounts are reused round-robin.
    """

    def __init__(self, keyring: Keyring, count: int):
        self.handles = [keyring.issue(f"background-{i}") for i in range(count)]
        self.index = {h.address: i for i, h in enumerate(self.handles)}
        self.idle = deque(range(count))
        self.pending = [0] * count
        self.next_nonce = [0] * count
        self._rr = 0

    def acquire(self):
        if self.idle:
            i = self.idle.popleft()
        else:
            i = self._rr
            self._rr = (self._rr + 1) % len(self.handles)
        self.pending[i] += 1
        nonce = self.next_nonce[i]
        self.next_nonce[i] += 1
        return self.handles[i], nonce

    def release(self, address: Address, dropped_nonce: Optional[int] = None):
        i = self.index.get(address)
        if i is None:
            return
        self.pending[i] -= 1
        if dropped_nonce is not None:
            self.next_nonce[i] = min(self.next_nonce[i], dropped_nonce)
        if self.pending[i] == 0:
            self.idle.append(i)


# -- processes --------------------------------------------------------------------


@dataclass(frozen=True)
class Sleep:
    seconds: float


@dataclass(frozen=True)
class AwaitConfirmation:
    tx_id: bytes
    depth: int = 1
    timeout: float = math.inf


@dataclass(frozen=True)
class Confirmation:
    status: str  # confirmed | dropped | timeout
    tx_id: bytes
    time: float
    receipt: Optional[Receipt] = None
    block_number: Optional[int] = None
    confirmed_block: Optional[int] = None
    reason: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "confirmed"


class Process:
    """A generator-based agent. It yields :class:`Sleep` or :class:`AwaitConfirmation`."""

    def __init__(self, kernel: "Kernel", gen, name: str):
        self.kernel = kernel
        self.gen = gen
        self.name = name
        self.done = False
        self.result = None
        self.error: Optional[BaseException] = None
        self._token = 0

    def _resume(self, token: int, value=None):
        if self.done or token != self._token:
            return
        self._token += 1
        try:
            command = self.gen.send(value)
        except StopIteration as stop:
            self.done, self.result = True, stop.value
            return
        except Exception as exc:  # surfaced to whoever waits on the process
            self.done, self.error = True, exc
            return
        self.kernel._wait(self, command, self._token)


@dataclass
class Watch:
    tx_id: bytes
    depth: int
    callback: Callable[[Confirmation], None]
    active: bool = True


# -- kernel -----------------------------------------------------------------------


class Kernel:
    def __init__(self, genesis_allocation: Optional[Mapping[Address, int]] = None, *, seed: int = 0,
                 mean_block_interval: float = 15.0, block_gas_limit: int = 8_000_000,
                 schedule: Optional[GasSchedule] = None, load: Optional[LoadModel] = None,
                 propagation_delay: float = 0.5, keyring: Optional[Keyring] = None,
                 event_log=None, miner: Address = MINER_ADDRESS):
        self.seed = seed
        self.rng = random.Random(seed)
        self.keyring = keyring if keyring is not None else Keyring()
        self.mean_block_interval = mean_block_interval
        self.block_gas_limit = block_gas_limit
        self.schedule = schedule or GasSchedule()
        self.load = load
        self.propagation_delay = propagation_delay
        self.miner = miner
        self.event_log = event_log

        allocation = dict(genesis_allocation or {})
        self.background: Optional[BackgroundSenders] = None
        if load is not None and load.accounts > 0:
            self.background = BackgroundSenders(self.keyring, load.accounts)
            for h in self.background.handles:
                allocation.setdefault(h.address, BACKGROUND_FUNDING)

        self.chain = Chain(WorldState.genesis(allocation), self.schedule, block_gas_limit)
        self.state = self.chain.head_state  # miner's view; replaced by each block's post-state
        self.delivered = self.chain.genesis.hash
        self.pool = Mempool()
        self.queue = EventQueue()
        self.block_listeners: list[Callable[[Block, tuple[Receipt, ...], WorldState], None]] = []
        self.drops: list[tuple[float, bytes, DropReason]] = []
        self.included_count = 0

        self._watches: dict[bytes, list[Watch]] = {}
        self._checking = False
        self._recheck = False
        self._nonce_hint: dict[Address, int] = {}
        self._pids = itertools.count()

        self.queue.schedule(self.rng.expovariate(1.0 / mean_block_interval), EventKind.BLOCK_MINED)
        if load is not None:
            first = load.next_arrival(0.0, self.rng)
            if not math.isinf(first):
                self.queue.schedule(first, EventKind.TX_SUBMITTED, {"background": True})

    # -- clock and views -------------------------------------------------------

    @property
    def now(self) -> float:
        return self.queue.now

    def view_state(self) -> WorldState:
        """State as seen by agents: the last block delivered to them."""
        return self.chain.state_at(self.delivered)

    @property
    def delivered_block(self) -> Block:
        return self.chain.blocks[self.delivered]

    def next_nonce(self, address: Address) -> int:
        return max(self.state.nonce(address), self._nonce_hint.get(address, 0))

    # -- submissions and watches ---------------------------------------------

    def schedule(self, time: float, kind: EventKind, payload: Any = None) -> SimEvent:
        return self.queue.schedule(time, kind, payload)

    def submit(self, tx: Transaction) -> bytes:
        self._nonce_hint[tx.sender] = max(self._nonce_hint.get(tx.sender, 0), tx.nonce + 1)
        self.queue.schedule(self.now, EventKind.TX_SUBMITTED, {"tx": tx})
        return tx.id

    def watch(self, tx_id: bytes, depth: int, callback: Callable[[Confirmation], None]) -> Watch:
        """Call ``callback`` once the tx's block has ``depth - 1`` canonical descendants."""
        if depth < 1:
            raise ValueError("depth must be at least 1")
        w = Watch(tx_id, depth, callback)
        self._watches.setdefault(tx_id, []).append(w)
        self._check_watches()
        return w

    def spawn(self, gen, name: str = "") -> Process:
        proc = Process(self, gen, name or f"process-{next(self._pids)}")
        self.queue.schedule(self.now, EventKind.AGENT_TIMER, {"process": proc, "token": 0})
        return proc

    def _wait(self, proc: Process, command, token: int):
        if isinstance(command, Sleep):
            self.queue.schedule(self.now + command.seconds, EventKind.AGENT_TIMER,
                                {"process": proc, "token": token})
        elif isinstance(command, AwaitConfirmation):
            watch = self.watch(command.tx_id, command.depth, lambda c: proc._resume(token, c))
            if not math.isinf(command.timeout) and not proc.done and proc._token == token:
                self.queue.schedule(self.now + command.timeout, EventKind.AGENT_TIMER,
                                    {"process": proc, "token": token, "timeout": command.tx_id, "watch": watch})
        else:
            proc.done, proc.error = True, TypeError(f"unsupported command {command!r}")

    # -- running ---------------------------------------------------------------

    def run(self, until: Optional[float] = None, stop: Optional[Callable[[], bool]] = None,
            max_events: Optional[int] = None) -> int:
        """Process events up to time ``until`` or until ``stop()`` is true."""
        processed = 0
        while self.queue:
            if until is not None and self.queue.peek_time() > until:
                self.queue.now = max(self.queue.now, until)
                break
            self._handle(self.queue.pop())
            processed += 1
            if stop is not None and stop():
                break
            if max_events is not None and processed >= max_events:
                break
        return processed

    def run_process(self, proc: Process, timeout: float = math.inf):
        deadline = None if math.isinf(timeout) else self.now + timeout
        self.run(until=deadline, stop=lambda: proc.done)
        if proc.error is not None:
            raise proc.error
        if not proc.done:
            raise TimeoutError(f"{proc.name} did not finish")
        return proc.result

    def _handle(self, ev: SimEvent):
        kind = ev.kind
        if kind is EventKind.TX_ARRIVED:
            self._on_arrival(ev)
        elif kind is EventKind.TX_SUBMITTED:
            self._on_submitted(ev)
        elif kind is EventKind.BLOCK_MINED:
            self._on_block_mined(ev)
        elif kind is EventKind.BLOCK_DELIVERED:
            self._on_block_delivered(ev)
        elif kind is EventKind.AGENT_TIMER:
            self._on_timer(ev)

    def _log(self, ev: SimEvent, **fields):
        if self.event_log is None:
            return
        record = {"seq": ev.seq, "time": ev.time, "kind": ev.kind.value, **fields}
        line = json.dumps(record, sort_keys=True, separators=(",", ":"))
        if hasattr(self.event_log, "write"):
            self.event_log.write(line + "\n")
        else:
            self.event_log.append(line)

    # -- handlers --------------------------------------------------------------

    def _on_submitted(self, ev: SimEvent):
        payload = ev.payload
        if payload.get("background"):
            handle, nonce = self.background.acquire() if self.background else (None, 0)
            price = self.load.sample_gas_price(ev.time, self.rng)
            nxt = self.load.next_arrival(ev.time, self.rng)
            if not math.isinf(nxt):
                self.queue.schedule(nxt, EventKind.TX_SUBMITTED, {"background": True})
            if handle is None:
                return
            tx = handle.transaction(nonce, BACKGROUND_SINK, 0, price, self.load.gas_limit_per_tx,
                                    submit_time=ev.time)
            background = True
        else:
            tx = payload["tx"]
            background = False
        self._log(ev, tx=tx.id.hex(), sender=tx.sender.hex, nonce=tx.nonce, gas_price=tx.gas_price,
                  gas_limit=tx.gas_limit, function=tx.function, background=background)
        self.queue.schedule(ev.time + self.propagation_delay, EventKind.TX_ARRIVED,
                            {"tx": tx, "background": background})

    def _on_arrival(self, ev: SimEvent):
        tx = ev.payload["tx"]
        if tx.id in self.pool or self.chain.locate(tx.id) is not None:
            self._log(ev, tx=tx.id.hex(), outcome="duplicate")
            return
        if not self.keyring.verify_transaction(tx):
            reason = DropReason.BAD_SIGNATURE
        elif tx.gas_limit > self.block_gas_limit:
            reason = DropReason.EXCEEDS_BLOCK_GAS_LIMIT
        else:
            reason = self.pool.add(tx, self.state)
        if reason is None:
            self._log(ev, tx=tx.id.hex(), outcome="pooled")
        else:
            self._log(ev, tx=tx.id.hex(), outcome="dropped", reason=reason.value)
            self._dropped(tx, reason)

    def _dropped(self, tx: Transaction, reason: DropReason):
        self.drops.append((self.now, tx.id, reason))
        if self._nonce_hint.get(tx.sender) == tx.nonce + 1:
            self._nonce_hint[tx.sender] = tx.nonce
        if self.background is not None:
            self.background.release(tx.sender, dropped_nonce=tx.nonce)
        for w in self._watches.pop(tx.id, ()):
            if w.active:
                w.active = False
                w.callback(Confirmation("dropped", tx.id, self.now, reason=reason.value))

    def _on_block_mined(self, ev: SimEvent):
        parent = self.chain.head_block
        txs = select_transactions(self.pool, self.state, self.block_gas_limit)
        gas = sum(self.schedule.gas_used(tx) for tx in txs)
        block = Block.build(parent.number + 1, parent.hash, ev.time, txs, gas, self.block_gas_limit, self.miner)
        receipts = self.chain.append(block)
        self.state = self.chain.head_state
        self.included_count += len(txs)
        for tx in txs:
            self.pool.remove(tx)
            if self.background is not None:
                self.background.release(tx.sender)
        for tx, reason in self.pool.revalidate(self.state, {tx.sender for tx in txs}):
            self._dropped(tx, reason)
        self._log(ev, number=block.number, hash=block.hash.hex(), parent=block.parent_hash.hex(),
                  txs=len(txs), gas_used=gas, pool=len(self.pool))
        self.queue.schedule(ev.time + self.propagation_delay, EventKind.BLOCK_DELIVERED, {"hash": block.hash})
        self.queue.schedule(ev.time + self.rng.expovariate(1.0 / self.mean_block_interval), EventKind.BLOCK_MINED)
        for listener in self.block_listeners:
            listener(block, receipts, self.state)

    def _on_block_delivered(self, ev: SimEvent):
        h = ev.payload["hash"]
        block = self.chain.blocks[h]
        if self.chain.is_canonical(h) and block.number > self.delivered_block.number:
            self.delivered = h
        self._log(ev, number=block.number, hash=h.hex())
        self._check_watches()

    def _check_watches(self):
        # Callbacks may resume processes that add watches; those are picked up
        # by another pass rather than by re-entering this loop.
        if self._checking:
            self._recheck = True
            return
        self._checking = True
        try:
            while self._watches:
                self._recheck = False
                fired = []
                tip = self.delivered_block.number
                for tx_id in list(self._watches):
                    found = self.chain.locate(tx_id)
                    if found is None or found[0].number > tip:
                        continue
                    block, idx = found
                    for w in self._watches[tx_id]:
                        if w.active and tip - block.number + 1 >= w.depth:
                            w.active = False
                            receipt = self.chain.receipts[block.hash][idx]
                            fired.append((w, Confirmation("confirmed", tx_id, self.now, receipt, block.number,
                                                          block.number + w.depth - 1)))
                    remaining = [w for w in self._watches[tx_id] if w.active]
                    if remaining:
                        self._watches[tx_id] = remaining
                    else:
                        del self._watches[tx_id]
                for w, c in fired:
                    w.callback(c)
                if not self._recheck:
                    break
        finally:
            self._checking = False

    def _on_timer(self, ev: SimEvent):
        p = ev.payload
        proc: Process = p["process"]
        if "timeout" in p:
            self._log(ev, process=proc.name, timeout=p["timeout"].hex())
            watch = p["watch"]
            if watch.active and proc._token == p["token"]:
                watch.active = False
                proc._resume(p["token"], Confirmation("timeout", p["timeout"], ev.time))
            return
        self._log(ev, process=proc.name)
        proc._resume(p["token"])
