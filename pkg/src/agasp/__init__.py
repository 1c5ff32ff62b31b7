"""Simulator of a blockchain-hosted gasoline purchase contract, with fee and latency experiments."""

from .chain import Chain, InvalidBlock, UnknownParent, append_block, replay, replay_state, validate_block
from .config import Config, FeeConfig, SimConfig, load_config
from .contract import ContractRevert, DepositRecord, RevertReason, Settlement, StationInfo
from .core import (
    CONTRACT_ADDRESS,
    WEI_PER_ETHER,
    WEI_PER_GWEI,
    Address,
    Block,
    ContractCall,
    KeyHandle,
    Keyring,
    Transaction,
)
from .experiments import (
    LatencySample,
    ProbeNeverIncluded,
    credit_card_fee,
    fee_table,
    latency_cdf,
    latency_sweep,
    throughput_run,
)
from .ledger import (
    GasSchedule,
    InvalidTransaction,
    Receipt,
    TxStatus,
    WorldState,
    apply_transaction,
    compute_fee,
    validate_transaction,
)
from .netsim import Kernel, LoadModel, Mempool, Phase, select_transactions
from .scenario import (
    AuditMismatch,
    Handshake,
    PurchaseTrace,
    StationAgent,
    TraceAborted,
    VehicleAgent,
    audit_trace,
    refund_deposit,
    run_handshake,
    run_purchase,
)

__version__ = "0.1.0"
