"""Pooled (parallel) no-weight-sharing training: degenerate equivalence,
thread/simulation equality, and aggregation behavior."""

import numpy as np

from splitsim.data import PartitionSpec, partition, synth_classification
from splitsim.presets import preset_split_model
from splitsim.protocol import SchemeConfig, run_scheme

DATA_SEED, INIT_SEED, SCHED_SEED = 5, 6, 7


def make(clients=4, samples=120):
    train = synth_classification(samples, 4, (1, 8, 8), DATA_SEED)
    test = synth_classification(40, 4, (1, 8, 8), DATA_SEED + 1)
    shards = partition(train, PartitionSpec("balanced", clients, seed=3))
    split = preset_split_model("tiny-mlp", (1, 8, 8), 4)
    return train, test, shards, split


def cfg(**kw):
    base = dict(scheme="psl_parallel", epochs=2, batch_size=10, learning_rate=0.1)
    base.update(kw)
    return SchemeConfig(**base)


def test_single_instance_single_snapshot_equals_sequential():
    train, test, shards, split = make()
    parallel = run_scheme(train, shards, split, cfg(instances=1, snapshots_per_agg=1),
                          INIT_SEED, SCHED_SEED, test_dataset=test)
    sequential = run_scheme(train, shards, split,
                            SchemeConfig("psl", epochs=2, batch_size=10, learning_rate=0.1),
                            INIT_SEED, SCHED_SEED, test_dataset=test)
    assert parallel.servers[0].params == sequential.servers[0].params
    for a, b in zip(parallel.clients, sequential.clients):
        assert a.params == b.params
    assert parallel.per_epoch_accuracy == sequential.per_epoch_accuracy


def test_instances_agree_after_aggregation():
    train, _, shards, split = make(clients=4)
    result = run_scheme(train, shards, split, cfg(instances=2), INIT_SEED, SCHED_SEED)
    # 4 clients in waves of 2 with K=2: every wave ends in an aggregation
    first = result.servers[0].params
    assert all(inst.params == first for inst in result.servers)
    assert all(r["aggregations"] == 2 for r in result.epoch_reports)


def test_threaded_matches_simulated():
    train, test, shards, split = make(clients=4)
    sim = run_scheme(train, shards, split, cfg(instances=2, threaded=False),
                     INIT_SEED, SCHED_SEED, test_dataset=test)
    threaded = run_scheme(train, shards, split, cfg(instances=2, threaded=True),
                          INIT_SEED, SCHED_SEED, test_dataset=test)
    assert sim.servers[0].params == threaded.servers[0].params
    for a, b in zip(sim.clients, threaded.clients):
        assert a.params == b.params
    assert sim.per_epoch_accuracy == threaded.per_epoch_accuracy
    assert sim.ledger.counts_by_variant() == threaded.ledger.counts_by_variant()


def test_uneven_waves_and_delayed_aggregation():
    train, _, shards, split = make(clients=3)
    # K=4 with waves of 2: the buffer reaches K only after the second wave
    result = run_scheme(train, shards, split,
                        cfg(instances=2, snapshots_per_agg=4, epochs=1),
                        INIT_SEED, SCHED_SEED)
    assert result.epoch_reports[0]["aggregations"] == 0  # 3 snapshots < 4
    result2 = run_scheme(train, shards, split,
                         cfg(instances=2, snapshots_per_agg=3, epochs=1),
                         INIT_SEED, SCHED_SEED)
    assert result2.epoch_reports[0]["aggregations"] == 1


def test_no_weight_messages_in_parallel_runs():
    train, _, shards, split = make(clients=4)
    result = run_scheme(train, shards, split, cfg(instances=2), INIT_SEED, SCHED_SEED)
    assert result.ledger.counts_by_variant()["WeightSnapshot"] == 0
    assert len(result.ledger.client_to_client_snapshots()) == 0
