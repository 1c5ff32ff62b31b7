"""Account state, transaction validity, fee charging and contract dispatch."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

from . import contract
from .contract import AGasPStorage, ContractRevert, LogEntry, RevertReason
from .core import (
    CONTRACT_ADDRESS,
    Address,
    Transaction,
    encode_str,
    encode_uint,
    encode_value,
    hash_content,
)


class InvalidReason(str, Enum):
    BAD_NONCE = "BadNonce"
    INSUFFICIENT_FUNDS = "InsufficientFunds"
    UNKNOWN_SENDER = "UnknownSender"


class TxStatus(str, Enum):
    SUCCESS = "success"
    REVERTED = "reverted"
    INVALID = "invalid"


class InvalidTransaction(Exception):
    def __init__(self, reason: InvalidReason):
        super().__init__(reason.value)
        self.reason = reason


def compute_fee(gas_price: int, gas_used: int, gas_limit: int) -> int:
    """Fee = gasPrice * min(gasUsed, gasLimit), in wei."""
    if gas_price < 0 or gas_used < 0 or gas_limit < 0:
        raise ValueError("fee inputs must be non-negative")
    return gas_price * min(gas_used, gas_limit)


@dataclass(frozen=True)
class GasSchedule:
    base_transfer: int = 21_000
    per_function: Mapping[str, int] = field(default_factory=lambda: {
        "setGasInfo": 32_308,
        "sendDeposit": 49_231,
        "sendFuelUsage": 38_462,
    })

    def __post_init__(self):
        if self.base_transfer <= 0 or any(g <= 0 for g in self.per_function.values()):
            raise ValueError("gas schedule entries must be positive")

    def scheduled_gas(self, tx: Transaction) -> int:
        if tx.payload is None:
            return self.base_transfer
        return self.per_function.get(tx.payload.function, self.base_transfer)

    def gas_used(self, tx: Transaction) -> int:
        """Gas a transaction will consume; depends on the transaction alone."""
        return min(self.scheduled_gas(tx), tx.gas_limit)


@dataclass(frozen=True, slots=True)
class Account:
    balance: int = 0
    nonce: int = 0
    kind: str = "user"
    storage: Optional[AGasPStorage] = None


@dataclass(frozen=True)
class Receipt:
    tx_id: bytes
    status: TxStatus
    gas_used: int
    fee: int
    logs: tuple[LogEntry, ...]
    block_number: int

    @property
    def revert_reason(self) -> Optional[str]:
        log = contract.find_log(self.logs, "Reverted")
        return log.fields["reason"] if log else None

    def to_json(self) -> dict:
        return {"tx_id": self.tx_id.hex(), "status": self.status.value, "gas_used": self.gas_used,
                "fee": self.fee, "block_number": self.block_number,
                "logs": [log.to_json() for log in self.logs]}


class WorldState:
    """Accounts keyed by address. Account objects are immutable, so ``copy`` is cheap."""

    def __init__(self, accounts: Optional[dict] = None, contract_address: Address = CONTRACT_ADDRESS):
        self.accounts: dict[Address, Account] = dict(accounts or {})
        self.contract_address = contract_address
        if contract_address not in self.accounts:
            self.accounts[contract_address] = Account(0, 0, "contract", AGasPStorage())

    @classmethod
    def genesis(cls, allocation: Mapping[Address, int], contract_address: Address = CONTRACT_ADDRESS):
        return cls({a: Account(b) for a, b in allocation.items()}, contract_address)

    def copy(self) -> "WorldState":
        clone = WorldState.__new__(WorldState)
        clone.accounts = self.accounts.copy()
        clone.contract_address = self.contract_address
        return clone

    def balance(self, address: Address) -> int:
        acct = self.accounts.get(address)
        return acct.balance if acct else 0

    def nonce(self, address: Address) -> int:
        acct = self.accounts.get(address)
        return acct.nonce if acct else 0

    @property
    def contract_storage(self) -> AGasPStorage:
        return self.accounts[self.contract_address].storage

    def set_contract_storage(self, storage: AGasPStorage):
        acct = self.accounts[self.contract_address]
        self.accounts[self.contract_address] = Account(acct.balance, acct.nonce, acct.kind, storage)

    def total_wei(self) -> int:
        return sum(a.balance for a in self.accounts.values())

    def transfer(self, src: Address, dst: Address, amount: int):
        if amount == 0:
            return
        s = self.accounts[src]
        if s.balance < amount:
            raise AssertionError(f"transfer of {amount} exceeds balance of {src}")
        self.accounts[src] = Account(s.balance - amount, s.nonce, s.kind, s.storage)
        d = self.accounts.get(dst) or Account()
        self.accounts[dst] = Account(d.balance + amount, d.nonce, d.kind, d.storage)

    def encode(self) -> bytes:
        parts = []
        for addr in sorted(self.accounts):
            a = self.accounts[addr]
            parts += [addr.raw, encode_uint(a.balance), encode_uint(a.nonce), encode_str(a.kind)]
            if a.storage is not None:
                parts.append(_encode_storage(a.storage))
        return struct.pack(">I", len(self.accounts)) + b"".join(parts)

    def state_hash(self) -> bytes:
        return hash_content(self.encode())


def _encode_storage(storage: AGasPStorage) -> bytes:
    parts = [b"stations", struct.pack(">I", len(storage.stations))]
    for addr in sorted(storage.stations):
        s = storage.stations[addr]
        parts += [addr.raw, encode_uint(s.min_deposit), encode_value(dict(s.prices)), encode_uint(s.last_updated_block)]
    parts += [b"deposits", struct.pack(">I", len(storage.deposits))]
    for addr in sorted(storage.deposits):
        d = storage.deposits[addr]
        parts += [addr.raw, d.station.raw, encode_uint(d.amount), encode_value(dict(d.price_snapshot)),
                  encode_uint(d.created_block)]
    return b"".join(parts)


def validate_transaction(state: WorldState, tx: Transaction) -> Optional[InvalidReason]:
    """Return ``None`` if ``tx`` may be applied to ``state`` now, else why not."""
    acct = state.accounts.get(tx.sender)
    if acct is None:
        return InvalidReason.UNKNOWN_SENDER
    if tx.nonce != acct.nonce:
        return InvalidReason.BAD_NONCE
    if acct.balance < tx.value + tx.gas_price * tx.gas_limit:
        return InvalidReason.INSUFFICIENT_FUNDS
    return None


def _reverted(reason: RevertReason, detail: str = "") -> tuple[LogEntry, ...]:
    fields = {"reason": reason.value}
    if detail:
        fields["detail"] = detail
    return (LogEntry("Reverted", fields),)


def _execute(state: WorldState, tx: Transaction, block_number: int) -> tuple[LogEntry, ...]:
    if tx.payload is None:
        if tx.recipient == state.contract_address:
            raise ContractRevert(RevertReason.NO_FALLBACK)
        state.transfer(tx.sender, tx.recipient, tx.value)
        return ()
    if tx.recipient != state.contract_address:
        raise ContractRevert(RevertReason.NOT_A_CONTRACT)
    result = contract.execute(state.contract_storage, tx.sender, tx.payload, tx.value, block_number)
    state.transfer(tx.sender, state.contract_address, tx.value)
    state.set_contract_storage(result.storage)
    for dst, wei in result.payouts:
        state.transfer(state.contract_address, dst, wei)
    return result.logs


def apply_transaction(state: WorldState, tx: Transaction, miner: Address, block_number: int,
                      schedule: GasSchedule) -> Receipt:
    """Apply ``tx`` to ``state`` in place and return its receipt.

    A revert rolls back value and contract effects but still consumes the
    nonce and charges the fee.
    """
    reason = validate_transaction(state, tx)
    if reason is not None:
        raise InvalidTransaction(reason)
    s = state.accounts[tx.sender]
    state.accounts[tx.sender] = Account(s.balance, s.nonce + 1, s.kind, s.storage)

    scheduled = schedule.scheduled_gas(tx)
    gas_used = min(scheduled, tx.gas_limit)
    status = TxStatus.SUCCESS
    if scheduled > tx.gas_limit:
        status, logs = TxStatus.REVERTED, _reverted(RevertReason.OUT_OF_GAS)
    else:
        try:
            logs = _execute(state, tx, block_number)
        except ContractRevert as exc:
            status, logs = TxStatus.REVERTED, _reverted(exc.reason, exc.detail)

    fee = compute_fee(tx.gas_price, gas_used, tx.gas_limit)
    state.transfer(tx.sender, miner, fee)
    return Receipt(tx.id, status, gas_used, fee, logs, block_number)
