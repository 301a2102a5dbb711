"""Protocol tests: the split step against a monolithic oracle, ledger audits,
weight-movement rules per scheme, and exact cost accounting."""

import numpy as np
import pytest

from splitsim import nn
from splitsim.data import PartitionSpec, partition, synth_classification
from splitsim.errors import ConfigError
from splitsim.nn.network import ParameterSet
from splitsim.presets import preset_split_model
from splitsim.protocol import (
    CostLedger,
    MessageLedger,
    RunContext,
    SchemeConfig,
    WEIGHTS,
    build_clients,
    build_server,
    client_step,
    cost_report,
    is_client,
    run_scheme,
)

DATA_SEED, INIT_SEED, SCHED_SEED = 101, 202, 303


def make_setup(samples=120, classes=4, shape=(1, 8, 8), clients=4, preset="tiny-mlp",
               partition_mode="balanced"):
    train = synth_classification(samples, classes, shape, DATA_SEED)
    test = synth_classification(40, classes, shape, DATA_SEED + 1)
    shards = partition(train, PartitionSpec(partition_mode, clients, seed=7))
    split = preset_split_model(preset, shape, classes)
    return train, test, shards, split


def scheme_config(scheme, epochs=2, batch=10, lr=0.1, **kw):
    return SchemeConfig(scheme=scheme, epochs=epochs, batch_size=batch,
                        learning_rate=lr, **kw)


def make_ctx(train, shards, split, config):
    clients = build_clients(split, shards, INIT_SEED)
    server = build_server(split, INIT_SEED)
    ledger = MessageLedger()
    costs = CostLedger([c.client_id for c in clients])
    ctx = RunContext(train, split, config, SCHED_SEED, ledger, costs)
    return ctx, clients, server


@pytest.mark.parametrize("preset,shape", [
    ("tiny-mlp", (1, 8, 8)),
    ("tiny-conv2", (1, 12, 12)),
    ("tiny-conv1d", (1, 32)),
])
def test_client_step_matches_monolithic_sgd(preset, shape):
    train, _, shards, split = make_setup(shape=shape, preset=preset, clients=2)
    config = scheme_config("psl", lr=0.2)
    ctx, clients, server = make_ctx(train, shards, split, config)
    client = clients[0]
    merged = nn.merge_parameters(client.params.copy(), server.params.copy())
    batch = client.shard[:10]

    client_step(ctx, client, server, batch, epoch=0, batch_no=0)

    x, y = train.inputs[batch], train.labels[batch]
    out, tape = nn.forward(split.network, merged, x)
    _, grad = nn.loss_softmax_ce(out, y)
    grads, _ = nn.backward(split.network, merged, tape, grad)
    mono = nn.sgd_step(merged, grads, 0.2)
    assert nn.merge_parameters(client.params, server.params) == mono


def test_client_step_zero_lr_and_message_accounting():
    train, _, shards, split = make_setup()
    config = scheme_config("psl", lr=0.0, batch=32)
    ctx, clients, server = make_ctx(train, shards, split, config)
    client = clients[0]
    before_c, before_s = client.params.copy(), server.params.copy()
    batch = client.shard[:30]
    client_step(ctx, client, server, batch, epoch=0, batch_no=0)
    assert client.params == before_c and server.params == before_s
    assert len(ctx.ledger) == 2  # smashed up, gradients down
    cost = ctx.costs.client(client.client_id)
    assert cost.up_smashed == 30 * split.split_size
    assert cost.down_grads == 30 * split.split_size
    assert cost.items == 30


class TestPsl:
    def test_no_weight_messages_and_divergent_clients(self):
        train, test, shards, split = make_setup(clients=2)
        result = run_scheme(train, shards, split, scheme_config("psl"),
                            INIT_SEED, SCHED_SEED, test_dataset=test)
        assert result.ledger.counts_by_variant()[WEIGHTS] == 0
        assert not (result.clients[0].params == result.clients[1].params)

    def test_single_client_equals_vanilla(self):
        train, test, shards, split = make_setup(clients=1)
        psl = run_scheme(train, shards, split, scheme_config("psl"), INIT_SEED, SCHED_SEED)
        vanilla = run_scheme(train, shards, split, scheme_config("sl_vanilla"),
                             INIT_SEED, SCHED_SEED)
        assert psl.clients[0].params == vanilla.clients[0].params
        assert psl.servers[0].params == vanilla.servers[0].params


class TestRoundRobin:
    def test_handoff_copies_and_counts(self):
        train, test, shards, split = make_setup(clients=4)
        epochs = 3
        result = run_scheme(train, shards, split,
                            scheme_config("sl_roundrobin", epochs=epochs),
                            INIT_SEED, SCHED_SEED)
        n = 4
        # client-to-client hand-offs: exactly N-1 per epoch, none outside epochs
        for epoch in range(epochs):
            assert len(result.ledger.client_to_client_snapshots(epoch)) == n - 1
        assert len(result.ledger.client_to_client_snapshots()) == epochs * (n - 1)
        # one snapshot sent per client per epoch (hand-offs plus tail upload)
        for epoch in range(epochs):
            sent = [m for m in result.ledger.messages
                    if m.variant == WEIGHTS and m.epoch == epoch and is_client(m.sender)]
            assert len(sent) == n
        # final broadcast: one delivery per client, outside any epoch
        broadcast = [m for m in result.ledger.messages
                     if m.variant == WEIGHTS and m.epoch is None]
        assert len(broadcast) == n
        assert all(m.sender.startswith("server:") for m in broadcast)
        # after the broadcast every client holds the same weights
        for client in result.clients[1:]:
            assert client.params == result.clients[0].params

    def test_adoption_is_bitwise(self):
        train, _, shards, split = make_setup(clients=3)
        config = scheme_config("sl_roundrobin", epochs=1, lr=0.0)
        # with lr 0 nothing trains, so every adoption propagates client 0's init
        result = run_scheme(train, shards, split, config, INIT_SEED, SCHED_SEED)
        init0 = build_clients(split, shards, INIT_SEED)[0].params
        for client in result.clients:
            assert client.params == init0

    def test_single_client_equals_vanilla_trajectory(self):
        train, _, shards, split = make_setup(clients=1)
        rr = run_scheme(train, shards, split, scheme_config("sl_roundrobin"),
                        INIT_SEED, SCHED_SEED)
        vanilla = run_scheme(train, shards, split, scheme_config("sl_vanilla"),
                             INIT_SEED, SCHED_SEED)
        assert rr.clients[0].params == vanilla.clients[0].params
        assert rr.servers[0].params == vanilla.servers[0].params


class TestSfl:
    def test_post_sync_equality_and_weight_traffic(self):
        train, _, shards, split = make_setup(clients=3)
        result = run_scheme(train, shards, split, scheme_config("sfl", epochs=2),
                            INIT_SEED, SCHED_SEED)
        first = result.clients[0].params
        assert all(c.params == first for c in result.clients)
        size = first.scalar_count
        for client in result.clients:
            cost = result.costs.client(client.client_id)
            assert cost.up_weights == 2 * size  # one upload per epoch
            assert cost.down_weights == 2 * size
            assert cost.update_events == 2
        assert len(result.ledger.client_to_client_snapshots()) == 0

    def test_single_client_reduces_to_vanilla(self):
        train, _, shards, split = make_setup(clients=1)
        sfl = run_scheme(train, shards, split, scheme_config("sfl"), INIT_SEED, SCHED_SEED)
        vanilla = run_scheme(train, shards, split, scheme_config("sl_vanilla"),
                             INIT_SEED, SCHED_SEED)
        assert sfl.clients[0].params == vanilla.clients[0].params
        assert sfl.servers[0].params == vanilla.servers[0].params


class TestMsl:
    def test_client_depends_only_on_own_shard(self):
        train, _, shards, split = make_setup(clients=3)
        base = run_scheme(train, shards, split, scheme_config("msl"), INIT_SEED, SCHED_SEED)
        # permute the *other* clients' shards; client 0 must be unaffected
        swapped = [shards[0],
                   type(shards[1])(1, shards[2].indices),
                   type(shards[2])(2, shards[1].indices)]
        rerun = run_scheme(train, swapped, split, scheme_config("msl"), INIT_SEED, SCHED_SEED)
        assert rerun.clients[0].params == base.clients[0].params
        assert rerun.servers[0].params == base.servers[0].params
        assert not (rerun.clients[1].params == base.clients[1].params)

    def test_no_cross_pair_messages(self):
        train, _, shards, split = make_setup(clients=3)
        result = run_scheme(train, shards, split, scheme_config("msl"), INIT_SEED, SCHED_SEED)
        for m in result.ledger.messages:
            a, b = (m.sender, m.receiver)
            ci = a if is_client(a) else b
            si = b if is_client(a) else a
            assert int(ci.split(":")[1]) == int(si.split(":")[1])


class TestCosts:
    def test_balanced_conformance_exact(self):
        train, _, shards, split = make_setup(samples=120, clients=4)
        total = 120
        u = build_clients(split, shards, INIT_SEED)[0].params.scalar_count
        s = split.split_size
        epochs = 2
        for scheme, sharing in [("psl", False), ("sl_roundrobin", True), ("sfl", True),
                                ("msl", False)]:
            result = run_scheme(train, shards, split, scheme_config(scheme, epochs=epochs),
                                INIT_SEED, SCHED_SEED)
            rows = cost_report(result.costs, scheme, 4, total, s, u, epochs)
            for row in rows:
                assert row["per_epoch_items"] == row["predicted_items_per_epoch"] == 30
                assert row["delta_comm"] == 0
                assert row["delta_update_events"] == 0
                expected_weights = 2 * u * epochs if sharing else 0
                assert row["measured_weight_scalars"] == expected_weights

    def test_sl_minus_psl_difference_is_2u_per_epoch(self):
        train, _, shards, split = make_setup(samples=120, clients=4)
        u = build_clients(split, shards, INIT_SEED)[0].params.scalar_count
        epochs = 3
        sl = run_scheme(train, shards, split,
                        scheme_config("sl_roundrobin", epochs=epochs), INIT_SEED, SCHED_SEED)
        psl = run_scheme(train, shards, split,
                         scheme_config("psl", epochs=epochs), INIT_SEED, SCHED_SEED)
        for cid in range(4):
            diff = (sl.costs.client(cid).training_communication()
                    - psl.costs.client(cid).training_communication())
            assert diff == 2 * u * epochs

    def test_psl_weight_scalars_zero(self):
        train, _, shards, split = make_setup(clients=3)
        result = run_scheme(train, shards, split, scheme_config("psl"), INIT_SEED, SCHED_SEED)
        for cid in range(3):
            cost = result.costs.client(cid)
            assert cost.up_weights == cost.down_weights == cost.down_weights_final == 0


class TestConfigValidation:
    def test_rejections(self):
        cfg = scheme_config("psl")
        with pytest.raises(ConfigError):
            scheme_config("warp_drive").validate(2)
        with pytest.raises(ConfigError):
            scheme_config("sl_vanilla").validate(3)
        with pytest.raises(ConfigError):
            scheme_config("psl_parallel", instances=0).validate(2)
        with pytest.raises(ConfigError):
            scheme_config("psl", instances=3).validate(2)
        with pytest.raises(ConfigError):
            scheme_config("psl", cache_capacity=10).validate(2)
        cfg.validate(2)  # sanity: a valid config passes


def test_random_order_policy_changes_order_not_cover():
    train, test, shards, split = make_setup(clients=4)
    config = scheme_config("psl", epochs=2, order_policy="random")
    result = run_scheme(train, shards, split, config, INIT_SEED, SCHED_SEED)
    orders = [r["order"] for r in result.epoch_reports]
    assert sorted(orders[0]) == [0, 1, 2, 3]
    fixed = run_scheme(train, shards, split, scheme_config("psl", epochs=2),
                       INIT_SEED, SCHED_SEED)
    assert all(r["order"] == [0, 1, 2, 3] for r in fixed.epoch_reports)
