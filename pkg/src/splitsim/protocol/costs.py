"""Closed-form cost predictions and the measured-vs-predicted report.

Per client and global epoch, with S the split-layer size per sample and |U|
the client-part scalar count:

    weight-sharing schemes  computation (|X|/N)*Cp + Cu,  communication 2(|X|/N)S + 2|U|
    non-sharing schemes     computation (|X|/N)*Cp,       communication 2(|X|/N)S

The measured side reports the Cp multiplier (items processed), the Cu count
(weight adoption events), and communicated scalars, so conformance can be
checked exactly on balanced shards.
"""

from __future__ import annotations

from .messages import CostLedger
from .schemes import WEIGHT_SHARING


def cost_report(
    costs: CostLedger,
    scheme: str,
    client_count: int,
    total_items: int,
    split_size: int,
    client_param_count: int,
    epochs: int,
) -> list[dict]:
    """Per-client rows of measured counters, per-epoch closed forms, and deltas."""
    sharing = scheme in WEIGHT_SHARING
    items_pred = total_items / client_count
    comm_pred = 2 * items_pred * split_size + (2 * client_param_count if sharing else 0)
    update_pred = 1 if sharing else 0
    rows = []
    for client_id in sorted(costs.per_client):
        c = costs.per_client[client_id]
        measured_comm = c.training_communication()
        rows.append(
            {
                "client": client_id,
                "epochs": epochs,
                "measured_items": c.items,
                "measured_update_events": c.update_events,
                "measured_up_smashed": c.up_smashed,
                "measured_down_grads": c.down_grads,
                "measured_weight_scalars": c.up_weights + c.down_weights,
                "measured_comm_total": measured_comm,
                "measured_final_distribution": c.down_weights_final,
                "per_epoch_items": c.items / epochs,
                "per_epoch_update_events": c.update_events / epochs,
                "per_epoch_comm": measured_comm / epochs,
                "predicted_items_per_epoch": items_pred,
                "predicted_update_events_per_epoch": update_pred,
                "predicted_comm_per_epoch": comm_pred,
                "delta_items": c.items / epochs - items_pred,
                "delta_update_events": c.update_events / epochs - update_pred,
                "delta_comm": measured_comm / epochs - comm_pred,
            }
        )
    return rows
