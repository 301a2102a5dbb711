"""Wire messages between roles, the append-only message ledger, and per-client
cost counters.

Roles are strings: ``client:<i>``, ``server:<j>``, ``fed:0``. Every transfer
between roles is recorded exactly once; payload arrays are retained only when
the ledger runs in capture mode (needed by the inversion-attack pipeline and
by verbose JSONL export).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SMASHED = "SmashedBatch"
SPLIT_GRADS = "SplitGradients"
WEIGHTS = "WeightSnapshot"

VARIANTS = (SMASHED, SPLIT_GRADS, WEIGHTS)


def client_role(i: int) -> str:
    return f"client:{i}"


def server_role(j: int = 0) -> str:
    return f"server:{j}"


FED = "fed:0"


def is_client(role: str) -> bool:
    return role.startswith("client:")


def role_index(role: str) -> int:
    return int(role.split(":", 1)[1])


@dataclass
class Message:
    variant: str
    sender: str
    receiver: str
    batch_id: str
    scalar_count: int
    epoch: Optional[int]  # None for post-run traffic (final broadcast)
    payload: Optional[dict] = None  # retained only in capture mode
    meta: dict = field(default_factory=dict)

    def envelope(self) -> dict:
        env = {
            "variant": self.variant,
            "sender": self.sender,
            "receiver": self.receiver,
            "batch_id": self.batch_id,
            "scalar_count": self.scalar_count,
            "epoch": self.epoch,
        }
        if self.meta:
            env["meta"] = self.meta
        return env


def _jsonable_payload(payload: dict) -> dict:
    out = {}
    for key, value in payload.items():
        if isinstance(value, np.ndarray):
            out[key] = {"shape": list(value.shape), "data": value.ravel().tolist()}
        elif isinstance(value, dict):
            out[key] = _jsonable_payload(value)
        else:
            out[key] = value
    return out


def _payload_from_json(raw):
    if isinstance(raw, dict) and set(raw) == {"shape", "data"}:
        return np.asarray(raw["data"], dtype=np.float64).reshape(raw["shape"])
    if isinstance(raw, dict):
        return {k: _payload_from_json(v) for k, v in raw.items()}
    return raw


class MessageLedger:
    """Append-only record of every message exchanged during a run.

    `capture_variants` limits payload retention to some message kinds (the
    attack pipeline only needs SmashedBatch payloads); envelopes are always
    kept for every message.
    """

    def __init__(self, capture_payloads: bool = False,
                 capture_variants: tuple[str, ...] = VARIANTS):
        self.capture_payloads = capture_payloads
        self.capture_variants = capture_variants
        self.messages: list[Message] = []

    def captures(self, variant: str) -> bool:
        return self.capture_payloads and variant in self.capture_variants

    def record(self, message: Message) -> Message:
        if message.variant not in VARIANTS:
            raise ValueError(f"unknown message variant {message.variant!r}")
        if not self.captures(message.variant):
            message.payload = None
        self.messages.append(message)
        return message

    def __len__(self):
        return len(self.messages)

    def counts_by_variant(self) -> dict[str, int]:
        counts = {v: 0 for v in VARIANTS}
        for m in self.messages:
            counts[m.variant] += 1
        return counts

    def client_to_client_snapshots(self, epoch: Optional[int] = None) -> list[Message]:
        out = []
        for m in self.messages:
            if m.variant != WEIGHTS or not is_client(m.sender) or not is_client(m.receiver):
                continue
            if epoch is not None and m.epoch != epoch:
                continue
            out.append(m)
        return out

    def smashed_from(self, client_id: int, epoch: Optional[int] = None) -> list[Message]:
        sender = client_role(client_id)
        return [
            m
            for m in self.messages
            if m.variant == SMASHED
            and m.sender == sender
            and (epoch is None or m.epoch == epoch)
        ]

    def last_epoch_with_smashed(self, client_id: int) -> Optional[int]:
        epochs = [m.epoch for m in self.smashed_from(client_id) if m.epoch is not None]
        return max(epochs) if epochs else None

    def to_jsonl(self, path, include_payloads: bool = False) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for m in self.messages:
                line = m.envelope()
                if include_payloads and m.payload is not None:
                    line["payload"] = _jsonable_payload(m.payload)
                fh.write(json.dumps(line) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "MessageLedger":
        ledger = cls(capture_payloads=True)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                raw = json.loads(line)
                payload = raw.get("payload")
                ledger.messages.append(
                    Message(
                        variant=raw["variant"],
                        sender=raw["sender"],
                        receiver=raw["receiver"],
                        batch_id=raw["batch_id"],
                        scalar_count=raw["scalar_count"],
                        epoch=raw["epoch"],
                        payload=_payload_from_json(payload) if payload else None,
                        meta=raw.get("meta", {}),
                    )
                )
        return ledger


@dataclass
class ClientCost:
    """Table-style per-client counters for one run.

    `items` counts samples pushed through one forward+backward of the client
    part (the per-item processing cost multiplier); `update_events` counts
    adoptions of externally supplied client weights (the per-sync update cost
    multiplier). Weight scalars from the final model distribution live in a
    separate bucket so per-epoch training costs stay comparable across
    schemes.
    """

    items: int = 0
    update_events: int = 0
    up_smashed: int = 0
    down_grads: int = 0
    up_weights: int = 0
    down_weights: int = 0
    down_weights_final: int = 0

    def training_communication(self) -> int:
        return self.up_smashed + self.down_grads + self.up_weights + self.down_weights

    def as_dict(self) -> dict:
        return {
            "items": self.items,
            "update_events": self.update_events,
            "up_smashed": self.up_smashed,
            "down_grads": self.down_grads,
            "up_weights": self.up_weights,
            "down_weights": self.down_weights,
            "down_weights_final": self.down_weights_final,
        }


class CostLedger:
    """Monotone per-client counters plus per-epoch snapshots."""

    def __init__(self, client_ids):
        self.per_client: dict[int, ClientCost] = {i: ClientCost() for i in client_ids}
        self.epoch_snapshots: list[dict[int, dict]] = []

    def client(self, client_id: int) -> ClientCost:
        return self.per_client[client_id]

    def snapshot_epoch(self) -> None:
        self.epoch_snapshots.append(
            {i: c.as_dict() for i, c in self.per_client.items()}
        )

    def epoch_delta(self, epoch_index: int) -> dict[int, dict]:
        """Counter increments during one epoch (0-based index)."""
        after = self.epoch_snapshots[epoch_index]
        before = (
            self.epoch_snapshots[epoch_index - 1]
            if epoch_index > 0
            else {i: ClientCost().as_dict() for i in self.per_client}
        )
        return {
            i: {k: after[i][k] - before[i][k] for k in after[i]} for i in after
        }
