import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from agasp.core import Block, Keyring  # noqa: E402
from agasp.ledger import GasSchedule, WorldState  # noqa: E402
from agasp.netsim import MINER_ADDRESS  # noqa: E402

CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def keyring():
    return Keyring()


@pytest.fixture
def alice(keyring):
    return keyring.issue("alice")


@pytest.fixture
def bob(keyring):
    return keyring.issue("bob")


def mine(chain, txs, timestamp=None, parent=None, miner=MINER_ADDRESS):
    """Build a correctly accounted block on ``parent`` (default: head) without appending it."""
    parent = chain.blocks[parent] if parent is not None else chain.head_block
    schedule = chain.schedule
    gas = sum(schedule.gas_used(tx) for tx in txs)
    ts = timestamp if timestamp is not None else parent.timestamp + 15.0
    return Block.build(parent.number + 1, parent.hash, ts, txs, gas, chain.block_gas_limit, miner)


def funded_state(*handles, balance=10**20):
    return WorldState.genesis({h.address: balance for h in handles})


SCHEDULE = GasSchedule()
