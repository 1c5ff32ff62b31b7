import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from agasp.core import CONTRACT_ADDRESS, ContractCall, WEI_PER_ETHER
from agasp.ledger import (
    GasSchedule,
    InvalidReason,
    InvalidTransaction,
    TxStatus,
    WorldState,
    apply_transaction,
    compute_fee,
    validate_transaction,
)
from agasp.netsim import MINER_ADDRESS

SCHEDULE = GasSchedule()


def test_set_gas_info_fee_example():
    assert compute_fee(10 * 10**9, 32_308, 70_000) == 323_080_000_000_000


def test_zero_gas_costs_nothing():
    assert compute_fee(12345, 0, 70_000) == 0


def test_min_clamps_to_limit():
    assert compute_fee(10**10, 90_000, 70_000) == 7 * 10**14


@given(st.integers(0, 10**12), st.integers(0, 10**7), st.integers(0, 10**7))
def test_fee_matches_arithmetic(price, used, limit):
    assert compute_fee(price, used, limit) == price * (used if used <= limit else limit)


def test_negative_fee_input_rejected():
    with pytest.raises(ValueError):
        compute_fee(-1, 1, 1)


def test_schedule_entries_positive():
    with pytest.raises(ValueError):
        GasSchedule(0)
    with pytest.raises(ValueError):
        GasSchedule(21_000, {"setGasInfo": 0})


def _state(handle, balance):
    return WorldState.genesis({handle.address: balance})


def test_balance_exactly_covering_max_cost_is_ok(alice, bob):
    tx = alice.transaction(0, bob.address, 100, 10**9, 21_000)
    assert validate_transaction(_state(alice, tx.max_cost), tx) is None


def test_one_wei_short_is_insufficient(alice, bob):
    tx = alice.transaction(0, bob.address, 100, 10**9, 21_000)
    assert validate_transaction(_state(alice, tx.max_cost - 1), tx) == InvalidReason.INSUFFICIENT_FUNDS


def test_replayed_nonce(alice, bob):
    state = _state(alice, 10**18)
    tx = alice.transaction(0, bob.address, 1, 10**9, 21_000)
    apply_transaction(state, tx, MINER_ADDRESS, 1, SCHEDULE)
    assert validate_transaction(state, tx) == InvalidReason.BAD_NONCE
    with pytest.raises(InvalidTransaction):
        apply_transaction(state, tx, MINER_ADDRESS, 1, SCHEDULE)


def test_unknown_sender(alice, bob):
    tx = bob.transaction(0, alice.address, 0, 1, 21_000)
    assert validate_transaction(_state(alice, 10**18), tx) == InvalidReason.UNKNOWN_SENDER


def test_plain_transfer_balances(alice, bob):
    state = _state(alice, 2 * WEI_PER_ETHER)
    r = apply_transaction(state, alice.transaction(0, bob.address, WEI_PER_ETHER, 10**10, 21_000), MINER_ADDRESS, 1,
                          SCHEDULE)
    assert r.status == TxStatus.SUCCESS and r.fee == 21 * 10**13
    assert state.balance(alice.address) == 2 * WEI_PER_ETHER - (WEI_PER_ETHER + 21 * 10**13)
    assert state.balance(bob.address) == WEI_PER_ETHER
    assert state.balance(MINER_ADDRESS) == 21 * 10**13
    assert state.nonce(alice.address) == 1


def test_below_minimum_deposit_reverts_and_refunds_value(keyring, alice):
    station = keyring.issue("station")
    state = WorldState.genesis({alice.address: WEI_PER_ETHER, station.address: WEI_PER_ETHER})
    apply_transaction(state, station.transaction(0, CONTRACT_ADDRESS, 0, 10**10, 70_000,
                                                 ContractCall.set_gas_info(10**17, {"regular": 5})),
                      MINER_ADDRESS, 1, SCHEDULE)
    storage_before = state.contract_storage
    tx = alice.transaction(0, CONTRACT_ADDRESS, 10**17 - 1, 10**10, 70_000, ContractCall.send_deposit(station.address))
    r = apply_transaction(state, tx, MINER_ADDRESS, 2, SCHEDULE)
    assert r.status == TxStatus.REVERTED and r.revert_reason == "BelowMinimum"
    assert state.balance(alice.address) == WEI_PER_ETHER - 49_231 * 10**10
    assert state.balance(CONTRACT_ADDRESS) == 0
    assert state.contract_storage is storage_before
    assert state.nonce(alice.address) == 1


def test_out_of_gas_reverts_with_full_limit_charged(keyring, alice):
    station = keyring.issue("station")
    state = WorldState.genesis({station.address: WEI_PER_ETHER})
    tx = station.transaction(0, CONTRACT_ADDRESS, 0, 10**9, 30_000, ContractCall.set_gas_info(1, {"r": 1}))
    r = apply_transaction(state, tx, MINER_ADDRESS, 1, SCHEDULE)
    assert r.status == TxStatus.REVERTED and r.revert_reason == "OutOfGas"
    assert r.gas_used == 30_000 and r.fee == 30_000 * 10**9
    assert station.address not in state.contract_storage.stations


def test_transfer_to_contract_and_call_to_user_revert(keyring, alice, bob):
    state = _state(alice, WEI_PER_ETHER)
    r1 = apply_transaction(state, alice.transaction(0, CONTRACT_ADDRESS, 5, 1, 21_000), MINER_ADDRESS, 1, SCHEDULE)
    r2 = apply_transaction(state, alice.transaction(1, bob.address, 0, 1, 70_000, ContractCall.send_deposit(bob.address)),
                           MINER_ADDRESS, 1, SCHEDULE)
    assert (r1.revert_reason, r2.revert_reason) == ("NoFallback", "NotAContract")
    assert state.balance(CONTRACT_ADDRESS) == 0


def test_conservation_and_nonces_over_random_workload(keyring):
    """10^4 random transactions: wei is conserved, nonces run 0,1,2,... and every fee matches the formula."""
    rng = random.Random(11)
    users = [keyring.issue(f"user-{i}") for i in range(20)]
    stations = users[:4]
    state = WorldState.genesis({u.address: rng.randint(10**16, 10**19) for u in users})
    total = state.total_wei()
    applied = {u.address: [] for u in users}
    for i in range(10_000):
        u = rng.choice(users)
        kind = rng.random()
        price = rng.randint(1, 40) * 10**9
        limit = rng.choice([21_000, 30_000, 50_000, 70_000])
        if kind < 0.4:
            tx = u.transaction(state.nonce(u.address), rng.choice(users).address, rng.randint(0, 10**16), price, limit)
        elif kind < 0.55:
            prices = {"regular": rng.randint(-1, 10**13)} if rng.random() < 0.9 else {}
            tx = u.transaction(state.nonce(u.address), CONTRACT_ADDRESS, 0, price, limit,
                               ContractCall.set_gas_info(rng.randint(0, 10**17), prices))
        elif kind < 0.8:
            tx = u.transaction(state.nonce(u.address), CONTRACT_ADDRESS, rng.randint(0, 2 * 10**17), price, limit,
                               ContractCall.send_deposit(rng.choice(stations).address))
        else:
            tx = u.transaction(state.nonce(u.address), CONTRACT_ADDRESS, 0, price, limit,
                               ContractCall.send_fuel_usage(rng.choice(users).address, "regular",
                                                            rng.randint(0, 30_000)))
        if rng.random() < 0.05:  # stale nonce
            tx = u.transaction(max(0, state.nonce(u.address) - 1), tx.recipient, tx.value, price, limit, tx.payload)
        reason = validate_transaction(state, tx)
        if reason is not None:
            with pytest.raises(InvalidTransaction):
                apply_transaction(state, tx, MINER_ADDRESS, i, SCHEDULE)
            continue
        before = state.copy()
        r = apply_transaction(state, tx, MINER_ADDRESS, i, SCHEDULE)
        applied[tx.sender].append(tx.nonce)
        assert r.fee == compute_fee(tx.gas_price, r.gas_used, tx.gas_limit)
        assert state.total_wei() == total
        assert all(a.balance >= 0 for a in state.accounts.values())
        assert state.balance(CONTRACT_ADDRESS) == state.contract_storage.escrowed
        if r.status == TxStatus.REVERTED:
            assert state.contract_storage is before.contract_storage
    for nonces in applied.values():
        assert nonces == list(range(len(nonces)))
