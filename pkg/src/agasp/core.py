"""Addresses, transactions, blocks and their canonical byte encoding.

Everything here is an immutable value. Hashes are SHA-256 over a canonical
serialization: fixed field order, 32-byte big-endian unsigned integers,
4-byte length prefixes on variable-length fields, sorted mappings.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

WEI_PER_ETHER = 10**18
WEI_PER_GWEI = 10**9

HASH_SIZE = 32
ADDRESS_SIZE = 20


def hash_content(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# -- canonical encoding -------------------------------------------------------

_TAG_INT = b"i"
_TAG_STR = b"s"
_TAG_BYTES = b"b"
_TAG_ADDR = b"a"
_TAG_MAP = b"m"
_TAG_NONE = b"n"
_TAG_BOOL = b"t"


def encode_uint(n: int) -> bytes:
    if n < 0:
        raise ValueError(f"cannot encode negative integer {n}")
    return n.to_bytes(32, "big")


def encode_bytes(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def encode_str(s: str) -> bytes:
    return encode_bytes(s.encode("utf-8"))


def encode_time(t: float) -> bytes:
    return struct.pack(">d", float(t))


def encode_value(v: Any) -> bytes:
    """Tagged encoding for heterogeneous argument and log values."""
    if v is None:
        return _TAG_NONE
    if isinstance(v, bool):
        return _TAG_BOOL + (b"\x01" if v else b"\x00")
    if isinstance(v, int):
        return _TAG_INT + encode_uint(v)
    if isinstance(v, str):
        return _TAG_STR + encode_str(v)
    if isinstance(v, Address):
        return _TAG_ADDR + v.raw
    if isinstance(v, (bytes, bytearray)):
        return _TAG_BYTES + encode_bytes(bytes(v))
    if isinstance(v, Mapping):
        items = sorted((encode_value(k), encode_value(x)) for k, x in v.items())
        return _TAG_MAP + struct.pack(">I", len(items)) + b"".join(k + x for k, x in items)
    raise TypeError(f"no canonical encoding for {type(v).__name__}")


# -- addresses ----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Address:
    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, bytes) or len(self.raw) != ADDRESS_SIZE:
            raise ValueError("an address is exactly 20 bytes")

    @classmethod
    def derive(cls, label: str) -> "Address":
        """Deterministic address for a human-readable label (test and config convenience)."""
        return cls(hash_content(b"address:" + label.encode())[:ADDRESS_SIZE])

    @classmethod
    def from_hex(cls, text: str) -> "Address":
        text = text[2:] if text.startswith("0x") else text
        return cls(bytes.fromhex(text))

    @property
    def hex(self) -> str:
        return "0x" + self.raw.hex()

    def __str__(self) -> str:
        return self.hex

    def __repr__(self) -> str:
        return f"Address({self.hex[:10]}…)"

    def __lt__(self, other: "Address") -> bool:
        return self.raw < other.raw

    def __hash__(self) -> int:
        return hash(self.raw)


ZERO_ADDRESS = Address(bytes(ADDRESS_SIZE))
CONTRACT_ADDRESS = Address.derive("agasp-contract")


# -- contract calls -----------------------------------------------------------


@dataclass(frozen=True)
class ContractCall:
    function: str
    args: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        # Defensive copy; nested price maps are copied too.
        frozen = {k: (dict(v) if isinstance(v, Mapping) else v) for k, v in self.args.items()}
        object.__setattr__(self, "args", frozen)

    def encode(self) -> bytes:
        return encode_str(self.function) + encode_value(self.args)

    @classmethod
    def set_gas_info(cls, min_deposit: int, prices: Mapping[str, int]) -> "ContractCall":
        return cls("setGasInfo", {"min_deposit": min_deposit, "prices": prices})

    @classmethod
    def send_deposit(cls, station: Address) -> "ContractCall":
        return cls("sendDeposit", {"station": station})

    @classmethod
    def send_fuel_usage(cls, vehicle: Address, fuel_type: str, amount: int) -> "ContractCall":
        return cls("sendFuelUsage", {"vehicle": vehicle, "fuel_type": fuel_type, "amount": amount})

    def to_json(self) -> dict:
        return {"function": self.function, "args": to_jsonable(self.args)}


# -- transactions -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Transaction:
    """A transfer or contract call. ``id`` covers every field except the signature."""

    sender: Address
    nonce: int
    recipient: Address
    value: int
    gas_price: int
    gas_limit: int
    payload: Optional[ContractCall] = None
    submit_time: float = 0.0
    signature: bytes = b""
    id: bytes = field(init=False, repr=False)

    def __post_init__(self):
        if self.nonce < 0:
            raise ValueError("nonce must be non-negative")
        if self.value < 0:
            raise ValueError("value must be non-negative")
        if self.gas_price <= 0:
            raise ValueError("gasPrice must be positive")
        if self.gas_limit <= 0:
            raise ValueError("gasLimit must be positive")
        object.__setattr__(self, "id", hash_content(self.signing_bytes()))

    def signing_bytes(self) -> bytes:
        return b"".join(
            [
                b"tx",
                self.sender.raw,
                encode_uint(self.nonce),
                self.recipient.raw,
                encode_uint(self.value),
                encode_uint(self.gas_price),
                encode_uint(self.gas_limit),
                self.payload.encode() if self.payload is not None else _TAG_NONE,
                encode_time(self.submit_time),
            ]
        )

    @property
    def max_cost(self) -> int:
        return self.value + self.gas_price * self.gas_limit

    @property
    def function(self) -> Optional[str]:
        return self.payload.function if self.payload is not None else None

    def __eq__(self, other):
        return isinstance(other, Transaction) and other.id == self.id

    def __hash__(self):
        return hash(self.id)

    def __repr__(self):
        return f"Transaction({self.id.hex()[:10]}… nonce={self.nonce} fn={self.function})"

    def to_json(self) -> dict:
        return {
            "id": self.id.hex(),
            "sender": self.sender.hex,
            "nonce": self.nonce,
            "recipient": self.recipient.hex,
            "value": self.value,
            "gas_price": self.gas_price,
            "gas_limit": self.gas_limit,
            "payload": self.payload.to_json() if self.payload is not None else None,
            "submit_time": self.submit_time,
        }


# -- blocks -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Block:
    number: int
    parent_hash: bytes
    timestamp: float
    transactions: tuple[Transaction, ...]
    gas_used_total: int
    block_gas_limit: int
    miner: Address
    hash: bytes = b""

    def compute_hash(self) -> bytes:
        parts = [
            b"block",
            encode_uint(self.number),
            encode_bytes(self.parent_hash),
            encode_time(self.timestamp),
            struct.pack(">I", len(self.transactions)),
            *(tx.id for tx in self.transactions),
            encode_uint(self.gas_used_total),
            encode_uint(self.block_gas_limit),
            self.miner.raw,
        ]
        return hash_content(b"".join(parts))

    @classmethod
    def build(cls, number, parent_hash, timestamp, transactions, gas_used_total, block_gas_limit, miner) -> "Block":
        draft = cls(number, parent_hash, timestamp, tuple(transactions), gas_used_total, block_gas_limit, miner)
        return cls(number, parent_hash, timestamp, tuple(transactions), gas_used_total, block_gas_limit, miner,
                   draft.compute_hash())

    @property
    def reserved_gas(self) -> int:
        return sum(tx.gas_limit for tx in self.transactions)

    def __repr__(self):
        return f"Block(#{self.number} {self.hash.hex()[:10]}… txs={len(self.transactions)})"


GENESIS_PARENT_HASH = bytes(HASH_SIZE)


def genesis_block(block_gas_limit: int) -> Block:
    return Block.build(0, GENESIS_PARENT_HASH, 0.0, (), 0, block_gas_limit, ZERO_ADDRESS)


# -- keys ---------------------------------------------------------------------


class KeyHandle:
    """Stand-in for a private key held by an agent.

    Signatures are modeled: a transaction counts as signed by ``address`` only
    if this handle produced it. Verification goes through the issuing
    :class:`Keyring`, which plays the part of public-key recovery.
    """

    def __init__(self, keyring: "Keyring", label: str):
        self._keyring = keyring
        self.label = label
        self._secret = hash_content(b"secret:" + label.encode())
        self.address = Address(hash_content(b"pub:" + self._secret)[:ADDRESS_SIZE])

    def _mac(self, message: bytes) -> bytes:
        return hash_content(self._secret + message)

    def transaction(self, nonce, recipient, value, gas_price, gas_limit, payload=None, submit_time=0.0) -> Transaction:
        tx = Transaction(self.address, nonce, recipient, value, gas_price, gas_limit, payload, submit_time)
        # The signature is outside the id, so it can be attached before the tx is shared.
        object.__setattr__(tx, "signature", self._mac(tx.id))
        return tx

    def respond(self, challenge: bytes) -> bytes:
        return self._mac(b"challenge:" + challenge)

    def verify_peer(self, peer: Address, challenge: bytes, response: bytes) -> bool:
        return self._keyring.verify_response(peer, challenge, response)

    def __repr__(self):
        return f"KeyHandle({self.label!r}, {self.address.hex[:10]}…)"


class Keyring:
    def __init__(self):
        self._handles: dict[Address, KeyHandle] = {}

    def issue(self, label: str) -> KeyHandle:
        handle = KeyHandle(self, label)
        self._handles[handle.address] = handle
        return handle

    def __contains__(self, address: Address) -> bool:
        return address in self._handles

    def verify_transaction(self, tx: Transaction) -> bool:
        handle = self._handles.get(tx.sender)
        return handle is not None and tx.signature == handle._mac(tx.id)

    def verify_response(self, address: Address, challenge: bytes, response: bytes) -> bool:
        handle = self._handles.get(address)
        return handle is not None and handle.respond(challenge) == response


# -- JSON helpers ---------------------------------------------------------------


def to_jsonable(v: Any) -> Any:
    if isinstance(v, Address):
        return v.hex
    if isinstance(v, (bytes, bytearray)):
        return bytes(v).hex()
    if isinstance(v, Mapping):
        return {str(to_jsonable(k)): to_jsonable(x) for k, x in sorted(v.items(), key=lambda kv: str(to_jsonable(kv[0])))}
    if isinstance(v, (list, tuple)):
        return [to_jsonable(x) for x in v]
    if hasattr(v, "value") and hasattr(v, "name"):  # enums
        return v.value
    return v
