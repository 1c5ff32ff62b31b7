"""Append-only block store with longest-chain fork choice and state replay."""

from __future__ import annotations

from collections import OrderedDict
from typing import Optional

from .core import Block, Transaction, genesis_block
from .ledger import GasSchedule, InvalidTransaction, Receipt, WorldState, apply_transaction, compute_fee


class UnknownParent(Exception):
    pass


class InvalidBlock(Exception):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def execute_block(parent_state: WorldState, block: Block, schedule: GasSchedule) -> tuple[list[str], WorldState, list[Receipt]]:
    """Apply ``block`` on a copy of ``parent_state``; return violations, post-state and receipts."""
    violations = []
    state = parent_state.copy()
    receipts = []
    for i, tx in enumerate(block.transactions):
        try:
            receipts.append(apply_transaction(state, tx, block.miner, block.number, schedule))
        except InvalidTransaction as exc:
            violations.append(f"transaction {i} invalid: {exc.reason.value}")
            break
    else:
        used = sum(r.gas_used for r in receipts)
        if used != block.gas_used_total:
            violations.append(f"gas accounting: receipts use {used}, header claims {block.gas_used_total}")
        for tx, r in zip(block.transactions, receipts):
            if r.fee != compute_fee(tx.gas_price, r.gas_used, tx.gas_limit):
                violations.append(f"fee mismatch for {tx.id.hex()}")
    return violations, state, receipts


class Chain:
    """Blocks by hash plus the canonical head.

    Post-states are cached for the most recent blocks only; older states are
    rebuilt by re-executing from the nearest cached ancestor.
    """

    def __init__(self, genesis_state: WorldState, schedule: Optional[GasSchedule] = None,
                 block_gas_limit: int = 8_000_000, state_cache_size: int = 64):
        self.schedule = schedule or GasSchedule()
        self.block_gas_limit = block_gas_limit
        self.genesis = genesis_block(block_gas_limit)
        self.genesis_state = genesis_state.copy()
        self.blocks: dict[bytes, Block] = {self.genesis.hash: self.genesis}
        self.receipts: dict[bytes, tuple[Receipt, ...]] = {self.genesis.hash: ()}
        self.received: dict[bytes, int] = {self.genesis.hash: 0}
        self.head: bytes = self.genesis.hash
        self._canonical: list[bytes] = [self.genesis.hash]
        self._tx_blocks: dict[bytes, list[bytes]] = {}
        self._states: OrderedDict[bytes, WorldState] = OrderedDict()
        self._cache_size = state_cache_size

    # -- queries -------------------------------------------------------------

    @property
    def head_block(self) -> Block:
        return self.blocks[self.head]

    @property
    def height(self) -> int:
        return self.head_block.number

    def canonical(self) -> list[Block]:
        return [self.blocks[h] for h in self._canonical]

    def canonical_hash(self, number: int) -> Optional[bytes]:
        return self._canonical[number] if 0 <= number < len(self._canonical) else None

    def is_canonical(self, block_hash: bytes) -> bool:
        b = self.blocks.get(block_hash)
        return b is not None and self.canonical_hash(b.number) == block_hash

    def locate(self, tx_id: bytes) -> Optional[tuple[Block, int]]:
        """Canonical block containing ``tx_id`` and the tx index, if any."""
        for h in self._tx_blocks.get(tx_id, ()):
            if self.is_canonical(h):
                block = self.blocks[h]
                idx = next(i for i, tx in enumerate(block.transactions) if tx.id == tx_id)
                return block, idx
        return None

    def transaction(self, tx_id: bytes) -> Optional[Transaction]:
        found = self.locate(tx_id)
        return found[0].transactions[found[1]] if found else None

    def receipt(self, tx_id: bytes) -> Optional[Receipt]:
        found = self.locate(tx_id)
        return self.receipts[found[0].hash][found[1]] if found else None

    def state_at(self, block_hash: bytes) -> WorldState:
        """Post-state of ``block_hash``. Shared with the cache; copy before mutating."""
        if block_hash == self.genesis.hash:
            return self.genesis_state
        cached = self._states.get(block_hash)
        if cached is not None:
            self._states.move_to_end(block_hash)
            return cached
        path = []
        h = block_hash
        while h != self.genesis.hash and h not in self._states:
            path.append(self.blocks[h])
            h = self.blocks[h].parent_hash
        state = self.state_at(h)
        for block in reversed(path):
            _, state, _ = execute_block(state, block, self.schedule)
        self._remember(block_hash, state)
        return state

    @property
    def head_state(self) -> WorldState:
        return self.state_at(self.head)

    # -- mutation ------------------------------------------------------------

    def validate(self, block: Block) -> list[str]:
        return self._check(block)[0]

    def _check(self, block: Block):
        parent = self.blocks.get(block.parent_hash)
        if parent is None:
            return ["unknown parent"], None, None
        violations = []
        if block.hash != block.compute_hash():
            violations.append("hash mismatch")
        if block.number != parent.number + 1:
            violations.append(f"number {block.number} does not follow parent {parent.number}")
        if block.timestamp < parent.timestamp:
            violations.append("timestamp precedes parent")
        if block.block_gas_limit != self.block_gas_limit:
            violations.append("wrong block gas limit")
        if block.gas_used_total > block.block_gas_limit:
            violations.append("gas used exceeds block gas limit")
        if block.reserved_gas > block.block_gas_limit:
            violations.append("reserved gas exceeds block gas limit")
        ids = [tx.id for tx in block.transactions]
        if len(set(ids)) != len(ids):
            violations.append("duplicate transaction")
        exec_violations, state, receipts = execute_block(self.state_at(parent.hash), block, self.schedule)
        return violations + exec_violations, state, receipts

    def append(self, block: Block) -> tuple[Receipt, ...]:
        if block.hash in self.blocks:
            return self.receipts[block.hash]
        if block.parent_hash not in self.blocks:
            raise UnknownParent(block.parent_hash.hex())
        violations, state, receipts = self._check(block)
        if violations:
            raise InvalidBlock(violations)
        receipts = tuple(receipts)
        self.blocks[block.hash] = block
        self.receipts[block.hash] = receipts
        self.received[block.hash] = len(self.received)
        for tx in block.transactions:
            self._tx_blocks.setdefault(tx.id, []).append(block.hash)
        self._remember(block.hash, state)
        # Strictly longer only: ties keep the earlier-received tip.
        if block.number > self.height:
            self._set_head(block.hash)
        return receipts

    def _set_head(self, tip: bytes):
        branch = []
        h = tip
        while self.canonical_hash(self.blocks[h].number) != h:
            branch.append(h)
            h = self.blocks[h].parent_hash
        fork_point = self.blocks[h].number
        del self._canonical[fork_point + 1:]
        self._canonical.extend(reversed(branch))
        self.head = tip

    def _remember(self, block_hash: bytes, state: WorldState):
        self._states[block_hash] = state
        self._states.move_to_end(block_hash)
        while len(self._states) > self._cache_size:
            self._states.popitem(last=False)


def append_block(chain: Chain, block: Block) -> Chain:
    chain.append(block)
    return chain


def validate_block(chain: Chain, block: Block) -> list[str]:
    """Empty list means the block is valid on top of its parent."""
    return chain.validate(block)


def replay(chain: Chain) -> tuple[WorldState, list[tuple[Block, tuple[Receipt, ...]]]]:
    """Re-execute the canonical branch from the genesis allocation."""
    state = chain.genesis_state.copy()
    history = []
    for block in chain.canonical()[1:]:
        violations, state, receipts = execute_block(state, block, chain.schedule)
        if violations:
            raise InvalidBlock(violations)
        history.append((block, tuple(receipts)))
    return state, history


def replay_state(chain: Chain) -> WorldState:
    return replay(chain)[0]
