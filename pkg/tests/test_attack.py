"""Inversion-attack mechanics: decoder mirrors, pair building, training
determinism, reconstruction contracts, and leakage bookkeeping."""

import numpy as np
import pytest

from splitsim import nn
from splitsim.attack import (
    AttackScenario,
    DecoderSpec,
    build_attack_dataset,
    build_decoder_spec,
    client_forward,
    evaluate_leakage,
    reconstruct,
    train_decoder,
    write_pgm,
)
from splitsim.data import PartitionSpec, partition, synth_classification, synth_series
from splitsim.errors import ConfigError, ShapeError, StateError
from splitsim.nn.network import NetworkSpec, ParameterSet, SplitModelSpec
from splitsim.presets import preset_split_model
from splitsim.protocol import SchemeConfig, run_scheme

DATA_SEED, INIT_SEED, SCHED_SEED, ATTACK_SEED = 31, 32, 33, 34


def small_run(clients=2, samples=60, scheme="psl", epochs=2, shape=(1, 8, 8), classes=3):
    train = synth_classification(samples, classes, shape, DATA_SEED)
    shards = partition(train, PartitionSpec("balanced", clients, seed=2))
    split = preset_split_model("tiny-conv2", shape, classes)
    config = SchemeConfig(scheme, epochs=epochs, batch_size=10, learning_rate=0.1)
    result = run_scheme(train, shards, split, config, INIT_SEED, SCHED_SEED,
                        capture_payloads=True)
    return train, result


class TestDecoderMirror:
    @pytest.mark.parametrize("preset,shape", [
        ("tiny-mlp", (1, 8, 8)),
        ("tiny-conv2", (1, 8, 8)),
        ("tiny-conv1d", (1, 32)),
    ])
    def test_shapes(self, preset, shape):
        split = preset_split_model(preset, shape, 5)
        decoder = build_decoder_spec(split)
        assert decoder.network.input_shape == split.split_shape
        assert decoder.output_shape == shape
        assert decoder.network.layers[-1].kind == "sigmoid"

    def test_downsampling_client_rejected(self):
        net = NetworkSpec((nn.conv2d(4, 3, stride=2, padding=1), nn.relu(),
                           nn.flatten(), nn.dense(3)), (1, 8, 8))
        with pytest.raises(ConfigError):
            build_decoder_spec(SplitModelSpec(net, 2))

    def test_pooling_client_rejected(self):
        net = NetworkSpec((nn.conv2d(4, 3, padding=1), nn.maxpool2d(2),
                           nn.flatten(), nn.dense(3)), (1, 8, 8))
        with pytest.raises(ConfigError):
            build_decoder_spec(SplitModelSpec(net, 2))


class TestBuildAttackDataset:
    def test_client_pairs_match_forward(self):
        train, result = small_run()
        attacker = result.clients[0]
        scenario = AttackScenario(attacker_client_id=0)
        smashed, raw = build_attack_dataset(
            result.split, attacker.params, train.inputs[attacker.shard], scenario, ATTACK_SEED
        )
        assert smashed.shape[0] == raw.shape[0] == len(attacker.shard)
        direct = client_forward(result.split, attacker.params, train.inputs[attacker.shard])
        assert np.array_equal(smashed, direct)

    def test_server_pairs_use_query_budget(self):
        train, result = small_run()
        attacker = result.clients[0]
        scenario = AttackScenario(attacker_role="server", attacker_client_id=0, query_budget=17)
        pool = synth_classification(40, 3, (1, 8, 8), DATA_SEED + 5)
        smashed, raw = build_attack_dataset(
            result.split, attacker.params, train.inputs[attacker.shard], scenario,
            ATTACK_SEED, query_pool=pool.inputs,
        )
        assert smashed.shape[0] == raw.shape[0] == 17

    def test_empty_attacker_data_rejected(self):
        train, result = small_run()
        scenario = AttackScenario(attacker_client_id=0)
        with pytest.raises(ConfigError):
            build_attack_dataset(result.split, result.clients[0].params,
                                 train.inputs[:0], scenario, ATTACK_SEED)


class TestTrainDecoder:
    def test_linear_identity_converges(self):
        # identity "client part": pairs are (x, x); a single dense layer learns it
        gen = np.random.default_rng(1)
        x = gen.uniform(size=(80, 6))
        decoder = DecoderSpec(NetworkSpec((nn.dense(6),), (6,)), (6,))
        params, loss = train_decoder(decoder, x, x, epochs=300, learning_rate=0.2,
                                     seed=3, batch_size=16)
        assert loss < 1e-3

    def test_deterministic(self):
        gen = np.random.default_rng(2)
        smashed = gen.normal(size=(40, 5))
        raw = gen.uniform(size=(40, 8))
        decoder = DecoderSpec(NetworkSpec((nn.dense(8), nn.sigmoid()), (5,)), (8,))
        a, _ = train_decoder(decoder, smashed, raw, 20, 0.1, seed=9)
        b, _ = train_decoder(decoder, smashed, raw, 20, 0.1, seed=9)
        assert a == b

    def test_shape_mismatch(self):
        decoder = DecoderSpec(NetworkSpec((nn.dense(8),), (5,)), (8,))
        with pytest.raises(ShapeError):
            train_decoder(decoder, np.zeros((4, 6)), np.zeros((4, 8)), 1, 0.1, 0)


class TestReconstruct:
    def test_clamps_to_unit_range(self):
        decoder = DecoderSpec(NetworkSpec((nn.dense(4),), (2,)), (4,))
        params = ParameterSet({0: {"weight": np.zeros((4, 2)),
                                   "bias": np.array([2.0, -1.0, 0.5, 1.0])}})
        out = reconstruct(decoder, params, np.zeros((3, 2)))
        assert out.shape == (3, 4)
        assert np.array_equal(out[0], [1.0, 0.0, 0.5, 1.0])

    def test_shape_contract(self):
        split = preset_split_model("tiny-conv2", (1, 8, 8), 3)
        decoder = build_decoder_spec(split)
        params = nn.init_parameters(decoder.network, 4)
        z = np.random.default_rng(0).normal(size=(5,) + split.split_shape)
        out = reconstruct(decoder, params, z)
        assert out.shape == (5, 1, 8, 8)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestEvaluateLeakage:
    def test_self_flagged_and_excluded_from_cross(self):
        train, result = small_run()
        scenario = AttackScenario(attacker_client_id=0, decoder_epochs=10)
        report = evaluate_leakage(scenario, result, train, ATTACK_SEED)
        assert report.per_victim[0].is_self
        assert not report.per_victim[1].is_self
        assert report.cross_ssim_mean == pytest.approx(report.per_victim[1].ssim_mean)
        assert -1.0 <= report.per_victim[1].ssim_mean <= 1.0
        assert report.per_victim[1].mse_mean >= 0.0
        d = report.as_dict()
        assert d["attacker"] == 0 and len(d["victims"]) == 2

    def test_missing_payloads_raise_state_error(self):
        train = synth_classification(40, 3, (1, 8, 8), DATA_SEED)
        shards = partition(train, PartitionSpec("balanced", 2, seed=2))
        split = preset_split_model("tiny-conv2", (1, 8, 8), 3)
        config = SchemeConfig("psl", epochs=1, batch_size=10, learning_rate=0.1)
        result = run_scheme(train, shards, split, config, INIT_SEED, SCHED_SEED,
                            capture_payloads=False)
        with pytest.raises(StateError, match="verbose"):
            evaluate_leakage(AttackScenario(decoder_epochs=1), result, train, ATTACK_SEED)

    def test_series_data_reports_dtw_dc(self):
        train = synth_series(48, 3, 32, DATA_SEED)
        shards = partition(train, PartitionSpec("balanced", 2, seed=2))
        split = preset_split_model("tiny-conv1d", (1, 32), 3)
        config = SchemeConfig("psl", epochs=2, batch_size=8, learning_rate=0.1)
        result = run_scheme(train, shards, split, config, INIT_SEED, SCHED_SEED,
                            capture_payloads=True)
        report = evaluate_leakage(AttackScenario(decoder_epochs=15), result, train, ATTACK_SEED)
        victim = report.per_victim[1]
        assert victim.ssim_mean is None
        assert victim.dtw_mean is not None and victim.dtw_mean >= 0.0
        assert victim.dc_mean is not None and 0.0 <= victim.dc_mean <= 1.0

    def test_untrained_decoder_not_better_seed_averaged(self):
        # random-init decoder reconstructions should not beat the trained ones
        trained_scores, raw_scores = [], []
        for seed in range(5):
            train = synth_classification(60, 3, (1, 8, 8), DATA_SEED + seed)
            shards = partition(train, PartitionSpec("balanced", 2, seed=2))
            split = preset_split_model("tiny-conv2", (1, 8, 8), 3)
            config = SchemeConfig("psl", epochs=2, batch_size=10, learning_rate=0.1)
            result = run_scheme(train, shards, split, config, INIT_SEED + seed, SCHED_SEED,
                                capture_payloads=True)
            trained = evaluate_leakage(AttackScenario(decoder_epochs=40), result, train,
                                       ATTACK_SEED + seed)
            untrained = evaluate_leakage(AttackScenario(decoder_epochs=0), result, train,
                                         ATTACK_SEED + seed)
            trained_scores.append(trained.cross_ssim_mean)
            raw_scores.append(untrained.cross_ssim_mean)
        assert np.mean(raw_scores) <= np.mean(trained_scores)


def test_write_pgm(tmp_path):
    img = np.linspace(0, 1, 64).reshape(8, 8)
    path = tmp_path / "img.pgm"
    write_pgm(path, img)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n8 8\n255\n")
    assert len(raw) == len(b"P5\n8 8\n255\n") + 64
    with pytest.raises(ShapeError):
        write_pgm(tmp_path / "bad.pgm", np.zeros((2, 3, 4, 5)))
