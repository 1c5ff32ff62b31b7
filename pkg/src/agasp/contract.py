"""The AGasP gasoline-purchase contract as a pure state machine.

Storage is persistent: every mutating function returns a new
:class:`AGasPStorage` and never touches the one it was given, so a revert
is simply "discard the result". Funds are not moved here; the ledger moves
attached value into escrow and pays out the ``payouts`` of a successful call.

Units: prices are wei per milligallon, fuel amounts are milligallons.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Mapping, Optional

from .core import Address, ContractCall

FUNCTIONS = ("setGasInfo", "getGasInfo", "sendDeposit", "verifyDeposit", "sendFuelUsage")
FEE_BEARING = ("setGasInfo", "sendDeposit", "sendFuelUsage")
READ_ONLY = ("getGasInfo", "verifyDeposit")


class RevertReason(str, Enum):
    INVALID_PRICES = "InvalidPrices"
    INVALID_MIN_DEPOSIT = "InvalidMinDeposit"
    UNKNOWN_STATION = "UnknownStation"
    BELOW_MINIMUM = "BelowMinimum"
    ALREADY_DEPOSITED = "AlreadyDeposited"
    NO_DEPOSIT = "NoDeposit"
    UNKNOWN_FUEL_TYPE = "UnknownFuelType"
    INVALID_AMOUNT = "InvalidAmount"
    NOT_PAYABLE = "NotPayable"
    BAD_ARGUMENTS = "BadArguments"
    READ_ONLY_FUNCTION = "ReadOnlyFunction"
    UNKNOWN_FUNCTION = "UnknownFunction"
    OUT_OF_GAS = "OutOfGas"
    NOT_A_CONTRACT = "NotAContract"
    NO_FALLBACK = "NoFallback"


class ContractRevert(Exception):
    def __init__(self, reason: RevertReason, detail: str = ""):
        super().__init__(f"{reason.value}{': ' + detail if detail else ''}")
        self.reason = reason
        self.detail = detail


class UnknownStation(LookupError):
    pass


@dataclass(frozen=True)
class LogEntry:
    event: str
    fields: Mapping[str, Any]

    def to_json(self) -> dict:
        from .core import to_jsonable

        return {"event": self.event, **to_jsonable(dict(self.fields))}


@dataclass(frozen=True)
class StationInfo:
    station: Address
    min_deposit: int
    prices: Mapping[str, int]
    last_updated_block: int


@dataclass(frozen=True)
class DepositRecord:
    vehicle: Address
    station: Address
    amount: int
    price_snapshot: Mapping[str, int]
    created_block: int


@dataclass(frozen=True)
class Settlement:
    payment: int
    change: int
    price_per_mgal: int
    shortfall: bool = False


def _frozen(mapping: Mapping) -> Mapping:
    return MappingProxyType(dict(mapping))


@dataclass(frozen=True)
class AGasPStorage:
    stations: Mapping[Address, StationInfo] = field(default_factory=lambda: _frozen({}))
    # One active record per vehicle, keyed by vehicle.
    deposits: Mapping[Address, DepositRecord] = field(default_factory=lambda: _frozen({}))

    def with_station(self, info: StationInfo) -> "AGasPStorage":
        stations = dict(self.stations)
        stations[info.station] = info
        return AGasPStorage(_frozen(stations), self.deposits)

    def with_deposit(self, record: DepositRecord) -> "AGasPStorage":
        deposits = dict(self.deposits)
        deposits[record.vehicle] = record
        return AGasPStorage(self.stations, _frozen(deposits))

    def without_deposit(self, vehicle: Address) -> "AGasPStorage":
        deposits = dict(self.deposits)
        del deposits[vehicle]
        return AGasPStorage(self.stations, _frozen(deposits))

    @property
    def escrowed(self) -> int:
        return sum(r.amount for r in self.deposits.values())


@dataclass(frozen=True)
class ExecutionResult:
    storage: AGasPStorage
    logs: tuple[LogEntry, ...] = ()
    payouts: tuple[tuple[Address, int], ...] = ()
    output: Any = None


# -- fee-bearing functions ------------------------------------------------------


def set_gas_info(storage: AGasPStorage, caller: Address, min_deposit: int, prices: Mapping[str, int],
                 block_number: int) -> ExecutionResult:
    if not isinstance(min_deposit, int) or min_deposit <= 0:
        raise ContractRevert(RevertReason.INVALID_MIN_DEPOSIT)
    if not prices or any(not isinstance(p, int) or p <= 0 for p in prices.values()):
        raise ContractRevert(RevertReason.INVALID_PRICES)
    info = StationInfo(caller, min_deposit, _frozen(prices), block_number)
    log = LogEntry("PricesSet", {"station": caller, "min_deposit": min_deposit, "prices": dict(prices),
                                 "block": block_number})
    return ExecutionResult(storage.with_station(info), (log,))


def send_deposit(storage: AGasPStorage, caller: Address, station: Address, value: int,
                 block_number: int) -> ExecutionResult:
    info = storage.stations.get(station)
    if info is None:
        raise ContractRevert(RevertReason.UNKNOWN_STATION)
    if value < info.min_deposit:
        raise ContractRevert(RevertReason.BELOW_MINIMUM, f"{value} < {info.min_deposit}")
    if caller in storage.deposits:
        raise ContractRevert(RevertReason.ALREADY_DEPOSITED)
    record = DepositRecord(caller, station, value, info.prices, block_number)
    log = LogEntry("DepositMade", {"vehicle": caller, "station": station, "amount": value,
                                   "prices": dict(info.prices), "block": block_number})
    return ExecutionResult(storage.with_deposit(record), (log,))


def settle(record: DepositRecord, fuel_type: str, amount: int) -> Settlement:
    price = record.price_snapshot[fuel_type]
    owed = amount * price
    payment = min(owed, record.amount)
    return Settlement(payment, record.amount - payment, price, owed > record.amount)


def send_fuel_usage(storage: AGasPStorage, caller: Address, vehicle: Address, fuel_type: str,
                    amount: int) -> ExecutionResult:
    record = storage.deposits.get(vehicle)
    if record is None or record.station != caller:
        raise ContractRevert(RevertReason.NO_DEPOSIT)
    if fuel_type not in record.price_snapshot:
        raise ContractRevert(RevertReason.UNKNOWN_FUEL_TYPE, fuel_type)
    if amount < 0:
        raise ContractRevert(RevertReason.INVALID_AMOUNT)
    s = settle(record, fuel_type, amount)
    logs = []
    if s.shortfall:
        logs.append(LogEntry("Shortfall", {"vehicle": vehicle, "station": caller,
                                           "owed": amount * s.price_per_mgal, "paid": s.payment}))
    logs.append(LogEntry("Settled", {"vehicle": vehicle, "station": caller, "fuel_type": fuel_type,
                                     "amount": amount, "price": s.price_per_mgal, "deposit": record.amount,
                                     "payment": s.payment, "change": s.change}))
    payouts = tuple((who, wei) for who, wei in ((caller, s.payment), (vehicle, s.change)) if wei > 0)
    return ExecutionResult(storage.without_deposit(vehicle), tuple(logs), payouts, s)


# -- free reads -----------------------------------------------------------------


def get_gas_info(storage: AGasPStorage, station: Address) -> StationInfo:
    try:
        return storage.stations[station]
    except KeyError:
        raise UnknownStation(station) from None


def verify_deposit(storage: AGasPStorage, caller: Address, vehicle: Address) -> bool:
    record = storage.deposits.get(vehicle)
    return record is not None and record.station == caller


# -- dispatch ---------------------------------------------------------------------

_ARG_SHAPES = {
    "setGasInfo": {"min_deposit": int, "prices": Mapping},
    "sendDeposit": {"station": Address},
    "sendFuelUsage": {"vehicle": Address, "fuel_type": str, "amount": int},
}


def _check_args(call: ContractCall):
    shape = _ARG_SHAPES[call.function]
    if set(call.args) != set(shape):
        raise ContractRevert(RevertReason.BAD_ARGUMENTS, f"expected {sorted(shape)}")
    for name, kind in shape.items():
        v = call.args[name]
        if not isinstance(v, kind) or (kind is int and isinstance(v, bool)):
            raise ContractRevert(RevertReason.BAD_ARGUMENTS, name)
    if call.function == "setGasInfo":
        if not all(isinstance(k, str) for k in call.args["prices"]):
            raise ContractRevert(RevertReason.BAD_ARGUMENTS, "fuel types must be strings")


def execute(storage: AGasPStorage, caller: Address, call: ContractCall, value: int,
            block_number: int) -> ExecutionResult:
    """Run one fee-bearing call. Raises :class:`ContractRevert` without side effects."""
    if call.function in READ_ONLY:
        raise ContractRevert(RevertReason.READ_ONLY_FUNCTION, call.function)
    if call.function not in _ARG_SHAPES:
        raise ContractRevert(RevertReason.UNKNOWN_FUNCTION, call.function)
    _check_args(call)
    if call.function != "sendDeposit" and value != 0:
        raise ContractRevert(RevertReason.NOT_PAYABLE)
    a = call.args
    if call.function == "setGasInfo":
        return set_gas_info(storage, caller, a["min_deposit"], a["prices"], block_number)
    if call.function == "sendDeposit":
        return send_deposit(storage, caller, a["station"], value, block_number)
    return send_fuel_usage(storage, caller, a["vehicle"], a["fuel_type"], a["amount"])


def find_log(logs, event: str) -> Optional[LogEntry]:
    return next((log for log in logs if log.event == event), None)
