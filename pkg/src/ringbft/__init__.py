"""Ring-overlay Byzantine fault-tolerant log replication with a chain baseline."""

from .agreement import AgreementCore, PendingRecord, ReplicaParams, SafetyError, StableLog, StableRecord
from .chain import ChainParams, ChainReplica, chain_placement
from .core import (
    BATCH_CAP, REQUEST_BYTES, ConfigError, Ed25519Scheme, KeyedTagScheme, MessageId, SystemConfig,
    batch_digest, commit_quorum, digest, make_scheme, max_faults, sequencer_for,
)
from .reconfig import Replica, plan_redo, verify_new_config, verify_reconfig, vouch, vouched_choice
from .ringcast import RingCast, RingParams

__version__ = "0.1.0"

__all__ = [
    "AgreementCore", "BATCH_CAP", "ChainParams", "ChainReplica", "ConfigError", "Ed25519Scheme",
    "KeyedTagScheme", "MessageId", "PendingRecord", "REQUEST_BYTES", "Replica", "ReplicaParams",
    "RingCast", "RingParams", "SafetyError", "StableLog", "StableRecord", "SystemConfig",
    "batch_digest", "chain_placement", "commit_quorum", "digest", "make_scheme", "max_faults",
    "plan_redo", "sequencer_for", "verify_new_config", "verify_reconfig", "vouch", "vouched_choice",
]
