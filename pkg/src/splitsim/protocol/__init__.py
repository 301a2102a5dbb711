"""Training protocols, message/cost ledgers, and the server-side cache."""

from .cache import CacheEntry, CachePool, cache_insert, cache_sample, server_step_cached
from .costs import cost_report
from .messages import (
    FED,
    CostLedger,
    Message,
    MessageLedger,
    SMASHED,
    SPLIT_GRADS,
    WEIGHTS,
    client_role,
    is_client,
    role_index,
    server_role,
)
from .schemes import (
    PSL_FAMILY,
    SCHEMES,
    WEIGHT_SHARING,
    ClientState,
    NewcomerReport,
    RunContext,
    RunResult,
    SchemeConfig,
    ServerInstance,
    build_clients,
    build_server,
    client_batches,
    client_step,
    evaluate_client,
    model_logits,
    run_msl,
    run_msl_epoch,
    run_newcomer_scenario,
    run_psl_epoch,
    run_psl_parallel,
    run_psl_parallel_epoch,
    run_scheme,
    run_sfl_epoch,
    run_sl_roundrobin_epoch,
)

__all__ = [
    "CacheEntry",
    "CachePool",
    "ClientState",
    "CostLedger",
    "FED",
    "Message",
    "MessageLedger",
    "NewcomerReport",
    "PSL_FAMILY",
    "RunContext",
    "RunResult",
    "SCHEMES",
    "SMASHED",
    "SPLIT_GRADS",
    "SchemeConfig",
    "ServerInstance",
    "WEIGHTS",
    "WEIGHT_SHARING",
    "build_clients",
    "build_server",
    "cache_insert",
    "cache_sample",
    "client_batches",
    "client_role",
    "client_step",
    "cost_report",
    "evaluate_client",
    "is_client",
    "model_logits",
    "role_index",
    "run_msl",
    "run_msl_epoch",
    "run_newcomer_scenario",
    "run_psl_epoch",
    "run_psl_parallel",
    "run_psl_parallel_epoch",
    "run_scheme",
    "run_sfl_epoch",
    "run_sl_roundrobin_epoch",
    "server_role",
    "server_step_cached",
]
