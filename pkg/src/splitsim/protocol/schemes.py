"""Training orchestrators for every supported scheme.

One client iteration (`client_step`) is the vanilla split step: client
forward, smashed batch to the server, server forward/backward, split
gradients back, client backward, both sides SGD-updated. The schemes differ
only in how client turns are ordered and how (or whether) client weights move
around them:

  sl_vanilla     single client, plain split training
  sl_roundrobin  clients train sequentially; each adopts the previous
                 client's weights, the chain tail uploads to the server and
                 the final model is broadcast after the last epoch
  sfl            clients interleave against the shared server model; a fed
                 aggregator averages client weights at every epoch end
  msl            fully independent client/server pairs (no sharing at all)
  psl            sequential turns against one shared server model; client
                 weights never move
  psl_parallel   psl with a pool of server instances trained concurrently and
                 periodically averaged
  psl_cache      psl with the server rehearsing cached smashed rows
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..data import Dataset, ClientShard
from ..errors import ConfigError, ProtocolError
from ..nn import (
    average_parameters,
    backward,
    forward,
    init_parameters,
    loss_softmax_ce,
    sgd_step,
)
from ..nn.network import ParameterSet, SplitModelSpec
from ..metrics import accuracy as top1_accuracy
from ..seeds import derive_seed, rng
from .cache import CachePool, server_step_cached
from .messages import (
    FED,
    Message,
    MessageLedger,
    CostLedger,
    SMASHED,
    SPLIT_GRADS,
    WEIGHTS,
    client_role,
    server_role,
)

SCHEMES = ("sl_vanilla", "sl_roundrobin", "sfl", "msl", "psl", "psl_parallel", "psl_cache")

PSL_FAMILY = ("psl", "psl_parallel", "psl_cache")
WEIGHT_SHARING = ("sl_roundrobin", "sfl")


@dataclass
class SchemeConfig:
    scheme: str
    epochs: int
    batch_size: int
    learning_rate: float
    order_policy: str = "fixed"  # fixed | random (reshuffled per epoch)
    instances: int = 1  # psl_parallel pool size
    snapshots_per_agg: Optional[int] = None  # psl_parallel; defaults to pool size
    cache_capacity: Optional[int] = None  # psl_cache rows; defaults to one epoch
    cache_fraction: float = 1.0
    threaded: bool = False  # psl_parallel: real threads instead of simulation

    def validate(self, client_count: int) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme.scheme: unknown scheme {self.scheme!r}")
        if self.epochs < 1:
            raise ConfigError("scheme.epochs: must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("scheme.batch_size: must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("scheme.learning_rate: must be >= 0")
        if self.order_policy not in ("fixed", "random"):
            raise ConfigError(f"scheme.order_policy: unknown policy {self.order_policy!r}")
        if self.scheme == "sl_vanilla" and client_count != 1:
            raise ConfigError("scheme.scheme: sl_vanilla requires exactly one client")
        if self.scheme == "psl_parallel":
            if self.instances < 1:
                raise ConfigError("scheme.instances: need at least one server instance")
            if self.snapshots_per_agg is not None and self.snapshots_per_agg < 1:
                raise ConfigError("scheme.snapshots_per_agg: must be >= 1")
        elif self.instances != 1:
            raise ConfigError("scheme.instances: only psl_parallel uses a server pool")
        if self.cache_fraction < 0:
            raise ConfigError("scheme.cache_fraction: must be >= 0")
        if self.scheme != "psl_cache" and self.cache_capacity is not None:
            raise ConfigError("scheme.cache_capacity: only psl_cache uses the cache pool")


@dataclass
class ClientState:
    client_id: int
    params: ParameterSet
    shard: np.ndarray  # indices into the training dataset


@dataclass
class ServerInstance:
    instance_id: int
    params: ParameterSet
    busy: bool = False


@dataclass
class RunContext:
    """Everything a scheme needs while running one experiment."""

    dataset: Dataset
    split: SplitModelSpec
    config: SchemeConfig
    scheduler_seed: int
    ledger: MessageLedger
    costs: CostLedger
    cache: Optional[CachePool] = None

    @property
    def lr(self) -> float:
        return self.config.learning_rate


def client_batches(ctx: RunContext, client: ClientState, epoch: int) -> list[np.ndarray]:
    """Seeded shuffle of the client's shard, chunked into batches."""
    gen = rng(ctx.scheduler_seed, "batches", epoch, client.client_id)
    order = client.shard[gen.permutation(len(client.shard))]
    bs = ctx.config.batch_size
    return [order[i : i + bs] for i in range(0, len(order), bs)]


def epoch_order(ctx: RunContext, clients: list[ClientState], epoch: int) -> list[ClientState]:
    if ctx.config.order_policy == "random":
        gen = rng(ctx.scheduler_seed, "order", epoch)
        return [clients[i] for i in gen.permutation(len(clients))]
    return list(clients)


def client_step(
    ctx: RunContext,
    client: ClientState,
    server: ServerInstance,
    batch_indices: np.ndarray,
    epoch: int,
    batch_no: int,
) -> float:
    """One full vanilla-SL iteration for one batch; returns the batch loss."""
    split = ctx.split
    x = ctx.dataset.inputs[batch_indices]
    y = ctx.dataset.labels[batch_indices]
    z, tape_client = forward(split.network, client.params, x, stop=split.split_index)
    batch_id = f"e{epoch}/c{client.client_id}/b{batch_no}"
    payload = None
    if ctx.ledger.captures(SMASHED):
        payload = {
            "activations": z.copy(),
            "labels": y.astype(np.float64),
            "indices": np.asarray(batch_indices, dtype=np.float64),
        }
    ctx.ledger.record(
        Message(
            SMASHED,
            client_role(client.client_id),
            server_role(server.instance_id),
            batch_id,
            int(z.size),
            epoch,
            payload=payload,
            meta={"samples": int(x.shape[0])},
        )
    )
    cost = ctx.costs.client(client.client_id)
    cost.items += int(x.shape[0])
    cost.up_smashed += int(z.size)

    if ctx.cache is not None:
        sample_seed = derive_seed(ctx.scheduler_seed, "cache", ctx.cache.step_counter)
        server.params, grad_z, loss, _ = server_step_cached(
            split, server.params, ctx.cache, client.client_id, z, y, ctx.lr, sample_seed
        )
    else:
        logits, tape_server = forward(split.network, server.params, z, start=split.split_index)
        loss, grad_logits = loss_softmax_ce(logits, y)
        server_grads, grad_z = backward(split.network, server.params, tape_server, grad_logits)
        server.params = sgd_step(server.params, server_grads, ctx.lr)

    if grad_z.shape != z.shape:
        raise ProtocolError(f"split gradient shape {grad_z.shape} != smashed shape {z.shape}")
    ctx.ledger.record(
        Message(
            SPLIT_GRADS,
            server_role(server.instance_id),
            client_role(client.client_id),
            batch_id,
            int(grad_z.size),
            epoch,
            payload={"gradients": grad_z.copy()} if ctx.ledger.captures(SPLIT_GRADS) else None,
        )
    )
    cost.down_grads += int(grad_z.size)

    client_grads, _ = backward(split.network, client.params, tape_client, grad_z)
    client.params = sgd_step(client.params, client_grads, ctx.lr)
    return loss


def _train_client_epoch(ctx, client, server, epoch) -> float:
    losses = [
        client_step(ctx, client, server, batch, epoch, bno)
        for bno, batch in enumerate(client_batches(ctx, client, epoch))
    ]
    return float(np.mean(losses)) if losses else 0.0


def run_psl_epoch(ctx: RunContext, clients: list[ClientState], server: ServerInstance, epoch: int) -> dict:
    """One global epoch without any client weight movement (also the cached
    variant when ctx.cache is set)."""
    order = epoch_order(ctx, clients, epoch)
    losses = {c.client_id: _train_client_epoch(ctx, c, server, epoch) for c in order}
    return {"epoch": epoch, "order": [c.client_id for c in order], "mean_loss": losses}


def _send_weights(ctx, sender, receiver, params, epoch, tag):
    ctx.ledger.record(
        Message(WEIGHTS, sender, receiver, tag, int(params.scalar_count), epoch)
    )


def run_sl_roundrobin_epoch(
    ctx: RunContext,
    clients: list[ClientState],
    server: ServerInstance,
    circulating: ParameterSet,
    epoch: int,
    final: bool = False,
) -> ParameterSet:
    """Sequential training with the client part passed along the chain.

    The chain head adopts the circulating copy from the server, intermediate
    hand-offs go client to client, and the tail uploads back to the server.
    After the last epoch the final weights are broadcast to every client.
    Returns the new circulating copy.
    """
    order = epoch_order(ctx, clients, epoch)
    size = circulating.scalar_count
    previous = None
    for client in order:
        cost = ctx.costs.client(client.client_id)
        if previous is None:
            _send_weights(ctx, server_role(server.instance_id), client_role(client.client_id),
                          circulating, epoch, f"e{epoch}/adopt")
            client.params = circulating.copy()
        else:
            _send_weights(ctx, client_role(previous.client_id), client_role(client.client_id),
                          previous.params, epoch, f"e{epoch}/handoff")
            ctx.costs.client(previous.client_id).up_weights += size
            client.params = previous.params.copy()
        cost.down_weights += size
        cost.update_events += 1
        _train_client_epoch(ctx, client, server, epoch)
        previous = client
    _send_weights(ctx, client_role(previous.client_id), server_role(server.instance_id),
                  previous.params, epoch, f"e{epoch}/return")
    ctx.costs.client(previous.client_id).up_weights += size
    circulating = previous.params.copy()
    if final:
        for client in clients:
            _send_weights(ctx, server_role(server.instance_id), client_role(client.client_id),
                          circulating, None, "final-broadcast")
            ctx.costs.client(client.client_id).down_weights_final += size
            client.params = circulating.copy()
    return circulating


def run_sfl_epoch(ctx: RunContext, clients: list[ClientState], server: ServerInstance, epoch: int) -> dict:
    """Interleaved local training plus a federated averaging sync at epoch end."""
    gen = rng(ctx.scheduler_seed, "interleave", epoch)
    order = [clients[i] for i in gen.permutation(len(clients))]
    queues = {c.client_id: client_batches(ctx, c, epoch) for c in clients}
    cursor = {c.client_id: 0 for c in clients}
    remaining = sum(len(q) for q in queues.values())
    while remaining:
        for client in order:
            q = queues[client.client_id]
            i = cursor[client.client_id]
            if i < len(q):
                client_step(ctx, client, server, q[i], epoch, i)
                cursor[client.client_id] += 1
                remaining -= 1
    size = clients[0].params.scalar_count
    for client in clients:
        _send_weights(ctx, client_role(client.client_id), FED, client.params, epoch, f"e{epoch}/fed-up")
        ctx.costs.client(client.client_id).up_weights += size
    averaged = average_parameters([c.params for c in clients])
    for client in clients:
        _send_weights(ctx, FED, client_role(client.client_id), averaged, epoch, f"e{epoch}/fed-down")
        cost = ctx.costs.client(client.client_id)
        cost.down_weights += size
        cost.update_events += 1
        client.params = averaged.copy()
    return {"epoch": epoch, "order": [c.client_id for c in order]}


def run_msl_epoch(ctx: RunContext, clients: list[ClientState], servers: list[ServerInstance], epoch: int) -> dict:
    """One epoch of N fully independent vanilla-SL trainings."""
    if len(servers) != len(clients):
        raise ConfigError("scheme.scheme: msl needs one private server per client")
    for client, server in zip(clients, servers):
        _train_client_epoch(ctx, client, server, epoch)
    return {"epoch": epoch}


def run_psl_parallel_epoch(
    ctx: RunContext,
    clients: list[ClientState],
    instances: list[ServerInstance],
    snapshot_buffer: list[ParameterSet],
    epoch: int,
) -> dict:
    """One epoch of pooled P-SL: waves of up to m concurrent sessions.

    Each session is one client's full epoch against a dedicated instance.
    Snapshots are recorded in instance order at the wave barrier; once the
    buffer holds at least `snapshots_per_agg`, all buffered snapshots are
    averaged and every instance adopts the result. Sessions within a wave are
    data-independent, so the threaded mode is bitwise identical to the
    sequential simulation.
    """
    m = len(instances)
    k = ctx.config.snapshots_per_agg or m
    order = epoch_order(ctx, clients, epoch)
    aggregations = 0
    for start in range(0, len(order), m):
        wave = order[start : start + m]

        def session(j: int, client: ClientState, scratch: Optional[MessageLedger]):
            inst = instances[j]
            inst.busy = True
            local_ctx = replace(ctx, ledger=scratch) if scratch is not None else ctx
            _train_client_epoch(local_ctx, client, inst, epoch)
            inst.busy = False

        if ctx.config.threaded and len(wave) > 1:
            scratches = [
                MessageLedger(ctx.ledger.capture_payloads, ctx.ledger.capture_variants)
                for _ in wave
            ]
            with concurrent.futures.ThreadPoolExecutor(max_workers=len(wave)) as pool:
                futures = [
                    pool.submit(session, j, c, scratches[j]) for j, c in enumerate(wave)
                ]
                for future in futures:
                    future.result()
            for scratch in scratches:  # merge in instance order for a stable ledger
                ctx.ledger.messages.extend(scratch.messages)
        else:
            for j, client in enumerate(wave):
                session(j, client, None)

        for j in range(len(wave)):
            snapshot_buffer.append(instances[j].params.copy())
        if len(snapshot_buffer) >= k:
            aggregated = average_parameters(snapshot_buffer)
            snapshot_buffer.clear()
            for inst in instances:
                inst.params = aggregated.copy()
            aggregations += 1
    return {"epoch": epoch, "aggregations": aggregations}


# ---------------------------------------------------------------------------
# evaluation and the top-level runner
# ---------------------------------------------------------------------------

def model_logits(
    split: SplitModelSpec,
    client_params: ParameterSet,
    server_params: ParameterSet,
    inputs: np.ndarray,
    batch: int = 256,
) -> np.ndarray:
    chunks = []
    for i in range(0, inputs.shape[0], batch):
        z, _ = forward(split.network, client_params, inputs[i : i + batch], stop=split.split_index)
        logits, _ = forward(split.network, server_params, z, start=split.split_index)
        chunks.append(logits)
    return np.concatenate(chunks, axis=0)


def evaluate_client(split, client_params, server_params, dataset: Dataset) -> float:
    logits = model_logits(split, client_params, server_params, dataset.inputs)
    return top1_accuracy(logits, dataset.labels)


@dataclass
class RunResult:
    scheme: str
    split: SplitModelSpec
    clients: list[ClientState]
    servers: list[ServerInstance]
    ledger: MessageLedger
    costs: CostLedger
    per_epoch_accuracy: dict[int, list[float]] = field(default_factory=dict)
    epoch_reports: list[dict] = field(default_factory=list)
    server_of_client: Optional[dict[int, int]] = None  # msl pairing

    def server_params_for(self, client_id: int) -> ParameterSet:
        if self.server_of_client is not None:
            return self.servers[self.server_of_client[client_id]].params
        if len(self.servers) == 1:
            return self.servers[0].params
        return average_parameters([s.params for s in self.servers])

    def final_accuracy(self, test_dataset: Dataset) -> dict[int, float]:
        return {
            c.client_id: evaluate_client(
                self.split, c.params, self.server_params_for(c.client_id), test_dataset
            )
            for c in self.clients
        }


def build_clients(split: SplitModelSpec, shards: list[ClientShard], init_seed: int) -> list[ClientState]:
    """Independently initialized client halves, one per shard."""
    return [
        ClientState(
            shard.client_id,
            init_parameters(
                split.network,
                derive_seed(init_seed, "client", shard.client_id),
                0,
                split.split_index,
            ),
            np.asarray(shard.indices, dtype=np.int64),
        )
        for shard in shards
    ]


def build_server(split: SplitModelSpec, init_seed: int, instance_id: int = 0,
                 seed_key: tuple = ()) -> ServerInstance:
    return ServerInstance(
        instance_id,
        init_parameters(
            split.network,
            derive_seed(init_seed, "server", *seed_key),
            split.split_index,
            None,
        ),
    )


def run_scheme(
    dataset: Dataset,
    shards: list[ClientShard],
    split: SplitModelSpec,
    config: SchemeConfig,
    init_seed: int,
    scheduler_seed: int,
    test_dataset: Optional[Dataset] = None,
    capture_payloads: bool = False,
    capture_variants: Optional[tuple[str, ...]] = None,
) -> RunResult:
    """Train `config.scheme` end to end and return states plus ledgers."""
    config.validate(len(shards))
    clients = build_clients(split, shards, init_seed)
    if capture_variants is None:
        ledger = MessageLedger(capture_payloads=capture_payloads)
    else:
        ledger = MessageLedger(capture_payloads, capture_variants)
    costs = CostLedger([c.client_id for c in clients])
    cache = None
    if config.scheme == "psl_cache":
        capacity = config.cache_capacity
        if capacity is None:
            capacity = int(sum(len(c.shard) for c in clients))
        cache = CachePool(capacity, config.cache_fraction)
    ctx = RunContext(dataset, split, config, scheduler_seed, ledger, costs, cache)

    if config.scheme == "msl":
        servers = [build_server(split, init_seed, i, seed_key=(i,)) for i in range(len(clients))]
        server_of_client = {c.client_id: i for i, c in enumerate(clients)}
    elif config.scheme == "psl_parallel":
        prototype = build_server(split, init_seed)
        servers = [ServerInstance(j, prototype.params.copy()) for j in range(config.instances)]
        server_of_client = None
    else:
        servers = [build_server(split, init_seed)]
        server_of_client = None

    result = RunResult(
        config.scheme, split, clients, servers, ledger, costs,
        server_of_client=server_of_client,
    )

    circulating = clients[0].params.copy() if config.scheme == "sl_roundrobin" else None
    snapshot_buffer: list[ParameterSet] = []

    for epoch in range(config.epochs):
        if config.scheme in ("psl", "psl_cache", "sl_vanilla"):
            report = run_psl_epoch(ctx, clients, servers[0], epoch)
        elif config.scheme == "sl_roundrobin":
            circulating = run_sl_roundrobin_epoch(
                ctx, clients, servers[0], circulating, epoch, final=epoch == config.epochs - 1
            )
            report = {"epoch": epoch}
        elif config.scheme == "sfl":
            report = run_sfl_epoch(ctx, clients, servers[0], epoch)
        elif config.scheme == "msl":
            report = run_msl_epoch(ctx, clients, servers, epoch)
        elif config.scheme == "psl_parallel":
            report = run_psl_parallel_epoch(ctx, clients, servers, snapshot_buffer, epoch)
        else:  # pragma: no cover - validate() rejects unknown schemes
            raise ConfigError(f"scheme.scheme: unhandled scheme {config.scheme!r}")
        costs.snapshot_epoch()
        result.epoch_reports.append(report)
        if test_dataset is not None:
            for client in clients:
                acc = evaluate_client(
                    split, client.params, result.server_params_for(client.client_id), test_dataset
                )
                result.per_epoch_accuracy.setdefault(client.client_id, []).append(acc)
    return result


def run_msl(dataset, shards, split, config, init_seed, scheduler_seed, test_dataset=None,
            capture_payloads=False) -> RunResult:
    """N fully independent vanilla-SL trainings (convenience wrapper)."""
    cfg = replace(config, scheme="msl")
    return run_scheme(dataset, shards, split, cfg, init_seed, scheduler_seed,
                      test_dataset, capture_payloads)


def run_psl_parallel(dataset, shards, split, config, init_seed, scheduler_seed,
                     test_dataset=None, capture_payloads=False) -> RunResult:
    """Pooled P-SL (convenience wrapper)."""
    cfg = replace(config, scheme="psl_parallel")
    return run_scheme(dataset, shards, split, cfg, init_seed, scheduler_seed,
                      test_dataset, capture_payloads)


@dataclass
class NewcomerReport:
    policy: str
    cache_enabled: bool
    existing_ids: list[int]
    new_ids: list[int]
    phase1_accuracy: dict[int, float]
    phase2_accuracy: dict[int, float]
    phase1_epochs: int
    phase2_epochs: int
    result: RunResult

    def existing_mean(self, phase: int) -> float:
        table = self.phase1_accuracy if phase == 1 else self.phase2_accuracy
        return float(np.mean([table[i] for i in self.existing_ids]))


def run_newcomer_scenario(
    dataset: Dataset,
    shards: list[ClientShard],
    split: SplitModelSpec,
    config: SchemeConfig,
    init_seed: int,
    scheduler_seed: int,
    existing_ids: list[int],
    new_ids: list[int],
    policy: str,
    cache_enabled: bool,
    test_dataset: Dataset,
    phase2_epochs: Optional[int] = None,
) -> NewcomerReport:
    """Two-phase P-SL: existing clients first, then late joiners.

    Phase 2 trains all clients (`policy="train_all"`) or only the newcomers
    (`policy="train_new"`). When the cache is enabled it is active in both
    phases with one shared pool, so phase-1 rows are available for rehearsal
    while the newcomers train.
    """
    if policy not in ("train_all", "train_new"):
        raise ConfigError(f"newcomer.policy: unknown policy {policy!r}")
    overlap = set(existing_ids) & set(new_ids)
    if overlap:
        raise ConfigError(f"newcomer.client_ids: overlapping ids {sorted(overlap)}")
    known = {s.client_id for s in shards}
    missing = (set(existing_ids) | set(new_ids)) - known
    if missing:
        raise ConfigError(f"newcomer.client_ids: unknown ids {sorted(missing)}")

    clients = build_clients(split, shards, init_seed)
    by_id = {c.client_id: c for c in clients}
    ledger = MessageLedger()
    costs = CostLedger([c.client_id for c in clients])
    cache = None
    if cache_enabled:
        capacity = config.cache_capacity
        if capacity is None:
            capacity = int(sum(len(c.shard) for c in clients))
        cache = CachePool(capacity, config.cache_fraction)
    ctx = RunContext(dataset, split, config, scheduler_seed, ledger, costs, cache)
    server = build_server(split, init_seed)

    phase1 = [by_id[i] for i in existing_ids]
    for epoch in range(config.epochs):
        run_psl_epoch(ctx, phase1, server, epoch)
        costs.snapshot_epoch()
    phase1_acc = {
        c.client_id: evaluate_client(split, c.params, server.params, test_dataset)
        for c in clients
    }

    e2 = phase2_epochs if phase2_epochs is not None else config.epochs
    phase2 = clients if policy == "train_all" else [by_id[i] for i in new_ids]
    for epoch in range(config.epochs, config.epochs + e2):
        run_psl_epoch(ctx, phase2, server, epoch)
        costs.snapshot_epoch()
    phase2_acc = {
        c.client_id: evaluate_client(split, c.params, server.params, test_dataset)
        for c in clients
    }

    result = RunResult("psl_cache" if cache_enabled else "psl", split, clients, [server],
                       ledger, costs)
    return NewcomerReport(
        policy=policy,
        cache_enabled=cache_enabled,
        existing_ids=list(existing_ids),
        new_ids=list(new_ids),
        phase1_accuracy=phase1_acc,
        phase2_accuracy=phase2_acc,
        phase1_epochs=config.epochs,
        phase2_epochs=e2,
        result=result,
    )
