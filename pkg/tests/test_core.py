import hashlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from agasp.core import (
    CONTRACT_ADDRESS,
    ZERO_ADDRESS,
    Address,
    Block,
    ContractCall,
    Keyring,
    Transaction,
    encode_value,
    genesis_block,
    hash_content,
)


def test_empty_input_digest_is_the_sha256_vector():
    assert hash_content(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_hash_is_deterministic_and_32_bytes():
    assert hash_content(b"abc") == hash_content(b"abc")
    assert len(hash_content(b"abc")) == 32
    assert hash_content(b"abc") == hashlib.sha256(b"abc").digest()


def test_address_equality_is_bytewise():
    a = Address(bytes(19) + b"\x01")
    assert a == Address(bytes(19) + b"\x01")
    assert a != Address(bytes(19) + b"\x02")
    assert Address.from_hex(a.hex) == a
    with pytest.raises(ValueError):
        Address(b"short")


def test_contract_address_is_fixed():
    assert CONTRACT_ADDRESS == Address.derive("agasp-contract")
    assert CONTRACT_ADDRESS != ZERO_ADDRESS


def test_transactions_differing_only_in_nonce_have_different_ids(alice, bob):
    t0 = alice.transaction(0, bob.address, 5, 10**9, 21_000)
    t1 = alice.transaction(1, bob.address, 5, 10**9, 21_000)
    assert t0.id != t1.id


def test_id_is_a_function_of_the_other_fields(alice, bob):
    t = alice.transaction(3, bob.address, 5, 10**9, 21_000, ContractCall.send_deposit(bob.address), 1.5)
    again = Transaction(t.sender, 3, bob.address, 5, 10**9, 21_000, ContractCall.send_deposit(bob.address), 1.5)
    assert again.id == t.id  # signature is not part of the id
    assert again.signature == b"" and t.signature != b""


@pytest.mark.parametrize("kwargs", [dict(value=-1), dict(gas_price=0), dict(gas_limit=0), dict(nonce=-1)])
def test_transaction_field_invariants(alice, bob, kwargs):
    base = dict(sender=alice.address, nonce=0, recipient=bob.address, value=0, gas_price=1, gas_limit=21_000)
    base.update(kwargs)
    with pytest.raises(ValueError):
        Transaction(**base)


def test_signature_verification(keyring, alice, bob):
    tx = alice.transaction(0, bob.address, 1, 1, 21_000)
    assert keyring.verify_transaction(tx)
    forged = Transaction(alice.address, 0, bob.address, 1, 1, 21_000, signature=bob._mac(tx.id))
    assert not keyring.verify_transaction(forged)
    stranger = Keyring().issue("mallory")
    assert not keyring.verify_transaction(stranger.transaction(0, bob.address, 1, 1, 21_000))


@given(st.dictionaries(st.text(max_size=5), st.integers(0, 2**64), max_size=5))
def test_map_encoding_ignores_insertion_order(d):
    assert encode_value(d) == encode_value(dict(reversed(list(d.items()))))


def test_genesis_hash_is_well_known():
    g = genesis_block(8_000_000)
    assert g.transactions == () and g.number == 0
    assert g.hash == genesis_block(8_000_000).hash
    assert g.hash == g.compute_hash()


def test_block_hash_covers_fields(alice, bob):
    tx = alice.transaction(0, bob.address, 1, 1, 21_000)
    b = Block.build(1, bytes(32), 15.0, [tx], 21_000, 8_000_000, ZERO_ADDRESS)
    assert b.hash == b.compute_hash()
    other = Block.build(1, bytes(32), 15.5, [tx], 21_000, 8_000_000, ZERO_ADDRESS)
    assert other.hash != b.hash
