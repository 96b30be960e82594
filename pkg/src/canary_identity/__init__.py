"""Identity-stable canary upgrades for named agent capabilities."""

from .audit import AuditChain, AuditKind, AuditRecord, query_by_identity, verify_chain
from .engine import Engine
from .identity import (
    AgentState,
    IdentityHash,
    IdentityManifest,
    SemVer,
    compute_identity_hash,
    compute_registry_hash,
    deregister_capability,
    register_capability,
    set_persona,
    set_policy_documents,
)
from .metrics import CanaryMetrics, ExecutionRecord, ExecutionStore, collect_metrics, evaluate_tick
from .pipeline import EvolutionJob, JobStatus, JobStore, Pipeline, PipelineHooks, UpgradeConflict

__version__ = "0.1.0"
