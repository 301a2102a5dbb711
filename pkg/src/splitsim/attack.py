"""Model-inversion attack harness.

Three phases: build a paired (smashed, raw) dataset from the attacker's own
model and data, train a decoder on it by SGD over reconstruction MSE, then
apply the decoder to smashed data other clients exposed during training and
score the reconstructions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset
from .errors import ConfigError, ShapeError, StateError
from .metrics import distance_correlation, dtw, mse, ssim
from .nn import (
    NetworkSpec,
    ParameterSet,
    backward,
    forward,
    init_parameters,
    loss_mse,
    sgd_step,
)
from .nn.layers import LayerSpec, conv1d, conv2d, dense, relu, sigmoid
from .nn.network import SplitModelSpec
from .protocol.schemes import RunResult
from .seeds import rng


@dataclass(frozen=True)
class AttackScenario:
    attacker_role: str = "client"  # client | server
    attacker_client_id: int = 0
    victim_client_ids: Optional[tuple[int, ...]] = None  # default: every client
    query_budget: int = 256  # server role: black-box queries against the attacker client
    decoder_epochs: int = 200
    decoder_lr: float = 0.01
    decoder_batch: int = 32

    def __post_init__(self):
        if self.attacker_role not in ("client", "server"):
            raise ConfigError(f"attack.attacker_role: unknown role {self.attacker_role!r}")
        if self.query_budget < 1:
            raise ConfigError("attack.query_budget: must be >= 1")


@dataclass(frozen=True)
class DecoderSpec:
    """Inverse network mapping split-layer activations back to raw samples."""

    network: NetworkSpec
    output_shape: tuple[int, ...]  # raw sample shape; decoder output reshapes to it


def build_decoder_spec(split: SplitModelSpec) -> DecoderSpec:
    """Mirror the client part: one counterpart per conv/dense layer in reverse
    order, ReLU between counterparts, sigmoid at the end.

    A stride-1 convolution with padding p inverts shape-wise as a stride-1
    convolution with padding k-1-p and swapped channel counts. Downsampling
    client parts (stride > 1 or pooling before the cut) are not supported.
    """
    net = split.network
    stages = []  # (layer, input sample shape) for parameterized client layers
    for i in range(split.split_index):
        layer = net.layers[i]
        if layer.kind in ("conv2d", "conv1d"):
            if layer.stride != 1:
                raise ConfigError(
                    "attack.decoder: cannot mirror a strided convolution in the client part"
                )
            if layer.padding > layer.kernel - 1:
                raise ConfigError("attack.decoder: padding exceeds kernel-1, cannot mirror")
            stages.append((layer, net.shape_at(i)))
        elif layer.kind == "dense":
            stages.append((layer, net.shape_at(i)))
        elif layer.kind == "maxpool2d":
            raise ConfigError("attack.decoder: cannot mirror pooling in the client part")
        # relu / sigmoid / flatten need no counterpart
    if not stages:
        raise ConfigError("attack.decoder: client part has no parameterized layers")

    mirror: list[LayerSpec] = []
    for idx, (layer, in_shape) in enumerate(reversed(stages)):
        if layer.kind == "conv2d":
            mirror.append(conv2d(in_shape[0], layer.kernel, 1, layer.kernel - 1 - layer.padding))
        elif layer.kind == "conv1d":
            mirror.append(conv1d(in_shape[0], layer.kernel, 1, layer.kernel - 1 - layer.padding))
        else:
            mirror.append(dense(int(np.prod(in_shape))))
        mirror.append(sigmoid() if idx == len(stages) - 1 else relu())
    network = NetworkSpec(tuple(mirror), split.split_shape)
    raw_shape = net.input_shape
    if int(np.prod(network.output_shape)) != int(np.prod(raw_shape)):
        raise ShapeError(
            f"decoder output {network.output_shape} cannot reshape to raw shape {raw_shape}"
        )
    return DecoderSpec(network, raw_shape)


def client_forward(split: SplitModelSpec, client_params: ParameterSet, inputs: np.ndarray,
                   batch: int = 256) -> np.ndarray:
    """Smashed data for a batch of raw inputs."""
    chunks = []
    for i in range(0, inputs.shape[0], batch):
        z, _ = forward(split.network, client_params, inputs[i : i + batch],
                       stop=split.split_index)
        chunks.append(z)
    return np.concatenate(chunks, axis=0)


def build_attack_dataset(
    split: SplitModelSpec,
    attacker_params: ParameterSet,
    attacker_inputs: np.ndarray,
    scenario: AttackScenario,
    seed: int,
    query_pool: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Paired (smashed, raw) training data for the decoder.

    Client attackers pair their own raw data with their model's smashed
    output. A server attacker instead queries the attacker-held client model
    black-box over a bag drawn from `query_pool`.
    """
    if scenario.attacker_role == "client":
        raw = attacker_inputs
        if raw.shape[0] == 0:
            raise ConfigError("attack.attacker_client_id: attacker holds no data")
    else:
        if query_pool is None or query_pool.shape[0] == 0:
            raise ConfigError("attack.query_budget: server attack needs a query pool")
        gen = rng(seed, "query-bag")
        picks = gen.choice(query_pool.shape[0], size=scenario.query_budget,
                           replace=scenario.query_budget > query_pool.shape[0])
        raw = query_pool[picks]
    return client_forward(split, attacker_params, raw), raw


def train_decoder(
    decoder: DecoderSpec,
    smashed: np.ndarray,
    raw: np.ndarray,
    epochs: int,
    learning_rate: float,
    seed: int,
    batch_size: int = 32,
) -> tuple[ParameterSet, float]:
    """SGD on mean squared reconstruction error; returns (params, final loss)."""
    if smashed.shape[0] == 0:
        raise ConfigError("attack.decoder: empty training pairs")
    if smashed.shape[0] != raw.shape[0]:
        raise ShapeError(f"pair count mismatch: {smashed.shape[0]} vs {raw.shape[0]}")
    if tuple(smashed.shape[1:]) != decoder.network.input_shape:
        raise ShapeError(
            f"smashed shape {tuple(smashed.shape[1:])} != decoder input "
            f"{decoder.network.input_shape}"
        )
    targets = raw.reshape(raw.shape[0], *decoder.network.output_shape)
    params = init_parameters(decoder.network, seed)
    n = smashed.shape[0]
    final_loss = float("nan")
    for epoch in range(epochs):
        gen = rng(seed, "decoder-batches", epoch)
        order = gen.permutation(n)
        losses = []
        for i in range(0, n, batch_size):
            idx = order[i : i + batch_size]
            out, tape = forward(decoder.network, params, smashed[idx])
            diff = out - targets[idx]
            # optimize the per-sample summed error (step size independent of
            # sample dimensionality); report the element-mean MSE
            grad = (2.0 / out.shape[0]) * diff
            grads, _ = backward(decoder.network, params, tape, grad)
            params = sgd_step(params, grads, learning_rate)
            losses.append(float(np.mean(diff * diff)))
        final_loss = float(np.mean(losses))
    return params, final_loss


def reconstruct(decoder: DecoderSpec, params: ParameterSet, smashed: np.ndarray,
                batch: int = 256) -> np.ndarray:
    """Decoder forward pass, clamped to the raw data range [0, 1]."""
    if tuple(smashed.shape[1:]) != decoder.network.input_shape:
        raise ShapeError(
            f"smashed shape {tuple(smashed.shape[1:])} != decoder input "
            f"{decoder.network.input_shape}"
        )
    chunks = []
    for i in range(0, smashed.shape[0], batch):
        out, _ = forward(decoder.network, params, smashed[i : i + batch])
        chunks.append(out)
    out = np.concatenate(chunks, axis=0)
    return np.clip(out.reshape(out.shape[0], *decoder.output_shape), 0.0, 1.0)


@dataclass
class VictimLeakage:
    victim_id: int
    samples: int
    is_self: bool
    ssim_mean: Optional[float]  # None for 1D data
    mse_mean: float
    dtw_mean: Optional[float] = None  # 1D data only
    dc_mean: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "victim": self.victim_id,
            "samples": self.samples,
            "self": self.is_self,
            "ssim": self.ssim_mean,
            "mse": self.mse_mean,
            "dtw": self.dtw_mean,
            "dc": self.dc_mean,
        }


@dataclass
class ReconstructionReport:
    attacker_id: int
    per_victim: dict[int, VictimLeakage]
    decoder_final_loss: float
    reconstructions: dict[int, np.ndarray] = field(default_factory=dict)
    raw_references: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def self_ssim(self) -> Optional[float]:
        v = self.per_victim.get(self.attacker_id)
        return v.ssim_mean if v is not None else None

    @property
    def cross_ssim_mean(self) -> Optional[float]:
        vals = [v.ssim_mean for v in self.per_victim.values()
                if not v.is_self and v.ssim_mean is not None]
        return float(np.mean(vals)) if vals else None

    def as_dict(self) -> dict:
        return {
            "attacker": self.attacker_id,
            "decoder_final_loss": self.decoder_final_loss,
            "self_ssim": self.self_ssim,
            "cross_ssim_mean": self.cross_ssim_mean,
            "victims": [self.per_victim[v].as_dict() for v in sorted(self.per_victim)],
        }


def _score_pairs(raw: np.ndarray, recon: np.ndarray, victim_id: int, is_self: bool) -> VictimLeakage:
    sample_shape = raw.shape[1:]
    mses = [mse(raw[i], recon[i]) for i in range(raw.shape[0])]
    if len(sample_shape) == 3:  # (C, H, W) image
        ssims = [ssim(raw[i], recon[i]) for i in range(raw.shape[0])]
        for s in ssims:
            if not -1.0 <= s <= 1.0 + 1e-12:
                raise ShapeError(f"ssim {s} outside [-1, 1]")
        return VictimLeakage(victim_id, raw.shape[0], is_self,
                             float(np.mean(ssims)), float(np.mean(mses)))
    # 1D series: DTW and distance correlation instead of SSIM
    dtws = [dtw(raw[i].ravel(), recon[i].ravel()) for i in range(raw.shape[0])]
    dcs = [distance_correlation(raw[i].ravel(), recon[i].ravel()) for i in range(raw.shape[0])]
    return VictimLeakage(victim_id, raw.shape[0], is_self, None, float(np.mean(mses)),
                         float(np.mean(dtws)), float(np.mean(dcs)))


def collect_victim_smashed(run: RunResult, victim_id: int) -> tuple[np.ndarray, np.ndarray]:
    """A victim's final-epoch smashed rows and their dataset indices, from the
    run's captured message payloads."""
    epoch = run.ledger.last_epoch_with_smashed(victim_id)
    if epoch is None:
        raise StateError(
            f"no captured smashed data for client {victim_id}; rerun with a verbose ledger"
        )
    acts, idxs = [], []
    for message in run.ledger.smashed_from(victim_id, epoch):
        if message.payload is None:
            raise StateError(
                f"smashed payloads were not captured for client {victim_id}; "
                "rerun with a verbose ledger"
            )
        acts.append(message.payload["activations"])
        idxs.append(message.payload["indices"].astype(np.int64))
    return np.concatenate(acts, axis=0), np.concatenate(idxs, axis=0)


def evaluate_leakage(
    scenario: AttackScenario,
    run: RunResult,
    dataset: Dataset,
    attack_seed: int,
    query_pool: Optional[Dataset] = None,
    keep_reconstructions: bool = False,
) -> ReconstructionReport:
    """Train the scenario's decoder and score every victim's reconstructions.

    Victim smashed data comes from the run's captured ledger (their last
    training epoch, one full pass over their shard). Self-reconstruction is
    reported but flagged and excluded from the cross-client aggregate.
    """
    attacker_id = scenario.attacker_client_id
    clients = {c.client_id: c for c in run.clients}
    if attacker_id not in clients:
        raise ConfigError(f"attack.attacker_client_id: unknown client {attacker_id}")
    attacker = clients[attacker_id]
    attacker_inputs = dataset.inputs[attacker.shard]

    decoder = build_decoder_spec(run.split)
    smashed, raw = build_attack_dataset(
        run.split,
        attacker.params,
        attacker_inputs,
        scenario,
        attack_seed,
        query_pool=query_pool.inputs if query_pool is not None else None,
    )
    decoder_params, final_loss = train_decoder(
        decoder, smashed, raw, scenario.decoder_epochs, scenario.decoder_lr,
        attack_seed, scenario.decoder_batch,
    )

    victims = scenario.victim_client_ids
    if victims is None:
        victims = tuple(sorted(clients))
    report = ReconstructionReport(attacker_id, {}, final_loss)
    for victim_id in victims:
        if victim_id not in clients:
            raise ConfigError(f"attack.victim_client_ids: unknown client {victim_id}")
        z, indices = collect_victim_smashed(run, victim_id)
        recon = reconstruct(decoder, decoder_params, z)
        raw_victim = dataset.inputs[indices]
        report.per_victim[victim_id] = _score_pairs(
            raw_victim, recon, victim_id, victim_id == attacker_id
        )
        if keep_reconstructions:
            report.reconstructions[victim_id] = recon
            report.raw_references[victim_id] = raw_victim
    return report


def write_pgm(path, image: np.ndarray) -> None:
    """Binary (P5) 8-bit grayscale dump of a [0, 1] image for eyeballing."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise ShapeError(f"PGM dump needs (H, W) or (1, H, W), got shape {img.shape}")
    h, w = img.shape
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
