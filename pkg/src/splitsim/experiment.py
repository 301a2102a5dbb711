"""Experiment configs, run manifests, and the four runner entry points
(partition / train / attack / report) behind the CLI.

Configs are JSON with a schema version; reruns of a persisted config in
deterministic mode reproduce the manifest hash bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__ as ENGINE_VERSION
from .attack import AttackScenario, evaluate_leakage, write_pgm
from .data import (
    Dataset,
    PartitionSpec,
    load_idx,
    partition,
    summarize_shards,
    synth_classification,
    synth_series,
)
from .errors import ConfigError, FormatError
from .nn import load_parameters, save_parameters
from .presets import preset_split_model
from .protocol import (
    MessageLedger,
    RunResult,
    SchemeConfig,
    build_clients,
    cost_report,
    run_scheme,
)
from .seeds import derive_seed

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DatasetConfig:
    source: str  # synth_classification | synth_series | idx
    samples: int = 2000
    test_samples: int = 500
    classes: int = 10
    sample_shape: tuple[int, ...] = (1, 16, 16)
    mean_scale: float = 1.0
    length: int = 128
    noise: float = 0.05
    images: Optional[str] = None
    labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None


@dataclass(frozen=True)
class Seeds:
    data: int = 1
    init: int = 2
    scheduler: int = 3
    attack: int = 4


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    clients: int
    model: str
    scheme: SchemeConfig
    partition_mode: str = "balanced"
    partition_ratios: Optional[tuple[float, ...]] = None
    classes_per_client: Optional[int] = None
    attack: Optional[AttackScenario] = None
    seeds: Seeds = field(default_factory=Seeds)
    schema_version: int = SCHEMA_VERSION

    def partition_spec(self) -> PartitionSpec:
        return PartitionSpec(
            mode=self.partition_mode,
            client_count=self.clients,
            seed=derive_seed(self.seeds.data, "partition"),
            ratios=self.partition_ratios,
            classes_per_client=self.classes_per_client,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["scheme"] = asdict(self.scheme)
        out["attack"] = asdict(self.attack) if self.attack else None
        return out


def _require(raw: dict, key: str, path: str):
    if key not in raw:
        raise ConfigError(f"{path}.{key}: missing required field")
    return raw[key]


def _unknown_fields(raw: dict, allowed, path: str):
    extra = set(raw) - set(allowed)
    if extra:
        raise ConfigError(f"{path}: unknown fields {sorted(extra)}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config.schema_version: unsupported version {version}")
    _unknown_fields(
        raw,
        (
            "schema_version", "dataset", "clients", "model", "scheme",
            "partition_mode", "partition_ratios", "classes_per_client",
            "attack", "seeds",
        ),
        "config",
    )
    ds_raw = _require(raw, "dataset", "config")
    _unknown_fields(ds_raw, DatasetConfig.__dataclass_fields__, "config.dataset")
    source = _require(ds_raw, "source", "config.dataset")
    if source not in ("synth_classification", "synth_series", "idx"):
        raise ConfigError(f"config.dataset.source: unknown source {source!r}")
    ds_kwargs = dict(ds_raw)
    if "sample_shape" in ds_kwargs:
        ds_kwargs["sample_shape"] = tuple(int(d) for d in ds_kwargs["sample_shape"])
    dataset = DatasetConfig(**ds_kwargs)
    if source == "idx" and (dataset.images is None or dataset.labels is None):
        raise ConfigError("config.dataset.images/labels: required for idx source")

    scheme_raw = _require(raw, "scheme", "config")
    _unknown_fields(scheme_raw, SchemeConfig.__dataclass_fields__, "config.scheme")
    for key in ("scheme", "epochs", "batch_size", "learning_rate"):
        _require(scheme_raw, key, "config.scheme")
    scheme = SchemeConfig(**scheme_raw)

    attack_raw = raw.get("attack")
    attack = None
    if attack_raw is not None:
        _unknown_fields(attack_raw, AttackScenario.__dataclass_fields__, "config.attack")
        kwargs = dict(attack_raw)
        if kwargs.get("victim_client_ids") is not None:
            kwargs["victim_client_ids"] = tuple(int(v) for v in kwargs["victim_client_ids"])
        attack = AttackScenario(**kwargs)

    seeds_raw = raw.get("seeds", {})
    _unknown_fields(seeds_raw, Seeds.__dataclass_fields__, "config.seeds")
    seeds = Seeds(**{k: int(v) for k, v in seeds_raw.items()})

    clients = int(_require(raw, "clients", "config"))
    if clients < 1:
        raise ConfigError("config.clients: must be >= 1")
    ratios = raw.get("partition_ratios")
    config = ExperimentConfig(
        dataset=dataset,
        clients=clients,
        model=str(_require(raw, "model", "config")),
        scheme=scheme,
        partition_mode=raw.get("partition_mode", "balanced"),
        partition_ratios=tuple(float(r) for r in ratios) if ratios is not None else None,
        classes_per_client=raw.get("classes_per_client"),
        attack=attack,
        seeds=seeds,
        schema_version=SCHEMA_VERSION,
    )
    config.partition_spec()  # validates partition fields
    config.scheme.validate(clients)
    return config


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc})") from exc
    return config_from_dict(raw)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def apply_seed_overrides(config: ExperimentConfig, overrides: dict[str, int]) -> ExperimentConfig:
    valid = set(Seeds.__dataclass_fields__)
    bad = set(overrides) - valid
    if bad:
        raise ConfigError(f"config.seeds: unknown seed names {sorted(bad)}")
    return replace(config, seeds=replace(config.seeds, **{k: int(v) for k, v in overrides.items()}))


# ---------------------------------------------------------------------------
# dataset materialization
# ---------------------------------------------------------------------------

def build_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """(train, test) pair per the dataset config; synthetic sources carve the
    test slice from one deterministic generation so train and test share the
    class structure."""
    ds = config.dataset
    seed = config.seeds.data
    if ds.source == "synth_classification":
        full = synth_classification(
            ds.samples + ds.test_samples, ds.classes, ds.sample_shape, seed,
            mean_scale=ds.mean_scale,
        )
    elif ds.source == "synth_series":
        full = synth_series(
            ds.samples + ds.test_samples, ds.classes, ds.length, seed, noise=ds.noise
        )
    else:
        train = load_idx(ds.images, ds.labels)
        if ds.test_images and ds.test_labels:
            return train, load_idx(ds.test_images, ds.test_labels)
        cut = max(1, int(0.9 * len(train)))
        return train.subset(np.arange(cut)), train.subset(np.arange(cut, len(train)))
    train = full.subset(np.arange(ds.samples))
    test = full.subset(np.arange(ds.samples, ds.samples + ds.test_samples))
    return train, test


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def manifest_hash(config_dict: dict, results: dict) -> str:
    digest = hashlib.sha256(_canonical({"config": config_dict, "results": results}).encode())
    return f"sha256:{digest.hexdigest()}"


def build_manifest(config: ExperimentConfig, result: RunResult, test_dataset: Dataset,
                   wall_clock: float, leakage: Optional[dict] = None) -> dict:
    final_acc = result.final_accuracy(test_dataset)
    split = result.split
    client_params_count = result.clients[0].params.scalar_count
    total_items = int(sum(len(c.shard) for c in result.clients))
    costs = cost_report(
        result.costs, result.scheme, len(result.clients), total_items,
        split.split_size, client_params_count, config.scheme.epochs,
    )
    digest = result.ledger.counts_by_variant()
    digest["client_to_client_snapshots"] = len(result.ledger.client_to_client_snapshots())
    results = {
        "scheme": result.scheme,
        "epochs": config.scheme.epochs,
        "split_size": split.split_size,
        "client_param_scalars": client_params_count,
        "per_epoch_accuracy": {
            str(cid): [round(a, 12) for a in accs]
            for cid, accs in sorted(result.per_epoch_accuracy.items())
        },
        "final_accuracy": {str(cid): round(a, 12) for cid, a in sorted(final_acc.items())},
        "mean_final_accuracy": round(float(np.mean(list(final_acc.values()))), 12),
        "cost_table": costs,
        "ledger_digest": digest,
        "leakage": leakage,
    }
    config_dict = config.to_dict()
    return {
        "schema_version": SCHEMA_VERSION,
        "engine_version": ENGINE_VERSION,
        "config": config_dict,
        "results": results,
        "wall_clock_s": wall_clock,
        "manifest_hash": manifest_hash(config_dict, results),
    }


def _write_accuracy_csv(path, manifest: dict) -> None:
    table = manifest["results"]["per_epoch_accuracy"]
    clients = sorted(table, key=int)
    epochs = len(next(iter(table.values()))) if table else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch"] + [f"client_{c}" for c in clients])
        for e in range(epochs):
            writer.writerow([e] + [table[c][e] for c in clients])


def _write_costs_csv(path, manifest: dict) -> None:
    rows = manifest["results"]["cost_table"]
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# runner entry points
# ---------------------------------------------------------------------------

def cmd_partition(config: ExperimentConfig, out_dir) -> dict:
    """Partition the training set and persist shard indices plus a summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, _ = build_datasets(config)
    shards = partition(train, config.partition_spec())
    summary = summarize_shards(train, shards)
    (out / "shards.json").write_text(
        json.dumps({str(s.client_id): s.indices.tolist() for s in shards}) + "\n",
        encoding="utf-8",
    )
    (out / "partition_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary


def cmd_train(config: ExperimentConfig, out_dir, verbose_ledger: bool = False,
              deterministic: bool = True) -> dict:
    """Run the configured scheme; write manifest, CSVs, checkpoints, ledger."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scheme = config.scheme
    if deterministic and scheme.threaded:
        scheme = replace(scheme, threaded=False)
    started = time.perf_counter()
    train, test = build_datasets(config)
    shards = partition(train, config.partition_spec())
    split = preset_split_model(config.model, train.sample_shape, train.class_count)
    result = run_scheme(
        train, shards, split, scheme,
        init_seed=config.seeds.init,
        scheduler_seed=config.seeds.scheduler,
        test_dataset=test,
        capture_payloads=verbose_ledger,
    )
    wall = time.perf_counter() - started
    manifest = build_manifest(config, result, test, wall)

    save_config(config, out / "config.json")
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_accuracy_csv(out / "accuracy.csv", manifest)
    _write_costs_csv(out / "costs.csv", manifest)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for client in result.clients:
        save_parameters(ckpt_dir / f"client_{client.client_id}.pslw", client.params)
    for server in result.servers:
        save_parameters(ckpt_dir / f"server_{server.instance_id}.pslw", server.params)
    result.ledger.to_jsonl(out / "ledger.jsonl", include_payloads=verbose_ledger)
    return manifest


def _load_run(run_dir) -> tuple[ExperimentConfig, dict]:
    run = Path(run_dir)
    manifest_path = run / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"attack.run_dir: {run_dir} has no manifest.json")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(
            f"{manifest_path}: manifest schema {manifest.get('schema_version')} "
            f"!= supported {SCHEMA_VERSION}"
        )
    return config_from_dict(manifest["config"]), manifest


def restore_run(run_dir) -> tuple[ExperimentConfig, RunResult, Dataset, Dataset]:
    """Rebuild enough of a persisted run to attack it: dataset and shards are
    regenerated from the config seeds, client parameters come from the
    checkpoints, captured payloads from the verbose ledger."""
    run = Path(run_dir)
    config, _ = _load_run(run_dir)
    train, test = build_datasets(config)
    shards = partition(train, config.partition_spec())
    split = preset_split_model(config.model, train.sample_shape, train.class_count)
    clients = build_clients(split, shards, config.seeds.init)
    ckpt_dir = run / "checkpoints"
    for client in clients:
        path = ckpt_dir / f"client_{client.client_id}.pslw"
        if not path.exists():
            raise ConfigError(f"attack.run_dir: missing checkpoint {path}")
        client.params = load_parameters(path)
    ledger_path = run / "ledger.jsonl"
    if not ledger_path.exists():
        raise ConfigError(f"attack.run_dir: {run_dir} has no ledger.jsonl")
    ledger = MessageLedger.from_jsonl(ledger_path)
    from .protocol.messages import CostLedger  # local import avoids cycle at module load

    result = RunResult(
        scheme=config.scheme.scheme,
        split=split,
        clients=clients,
        servers=[],
        ledger=ledger,
        costs=CostLedger([c.client_id for c in clients]),
    )
    return config, result, train, test


def cmd_attack(config: Optional[ExperimentConfig], run_dir, out_dir,
               dump_samples: int = 4) -> dict:
    """Run the inversion pipeline against a persisted training run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_config, result, train, test = restore_run(run_dir)
    scenario = None
    if config is not None and config.attack is not None:
        scenario = config.attack
    elif run_config.attack is not None:
        scenario = run_config.attack
    if scenario is None:
        raise ConfigError("config.attack: no attack scenario in config or run manifest")
    report = evaluate_leakage(
        scenario, result, train, run_config.seeds.attack,
        query_pool=test, keep_reconstructions=dump_samples > 0,
    )
    leakage = report.as_dict()
    (out / "leakage.json").write_text(
        json.dumps(leakage, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if dump_samples > 0 and len(train.sample_shape) == 3 and train.sample_shape[0] == 1:
        dump_dir = out / "reconstructions"
        dump_dir.mkdir(exist_ok=True)
        for victim_id, recon in report.reconstructions.items():
            raw = report.raw_references[victim_id]
            for k in range(min(dump_samples, recon.shape[0])):
                write_pgm(dump_dir / f"victim{victim_id}_sample{k}_raw.pgm", raw[k])
                write_pgm(dump_dir / f"victim{victim_id}_sample{k}_recon.pgm", recon[k])
    return leakage


def cmd_report(run_dirs, out_dir) -> dict:
    """Comparison tables (CSV) and plots (SVG) across one or more runs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not run_dirs:
        raise ConfigError("report.run_dirs: need at least one run directory")
    out = Path(out_dir)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    manifests = []
    for run_dir in run_dirs:
        _, manifest = _load_run(run_dir)
        manifests.append((Path(run_dir).name, manifest))

    # accuracy table: one row per run, one column per client
    clients = sorted(
        {cid for _, m in manifests for cid in m["results"]["final_accuracy"]}, key=int
    )
    with open(out / "accuracy_comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "scheme"] + [f"client_{c}" for c in clients] + ["mean"])
        for name, m in manifests:
            acc = m["results"]["final_accuracy"]
            writer.writerow(
                [name, m["results"]["scheme"]]
                + [acc.get(c, "") for c in clients]
                + [m["results"]["mean_final_accuracy"]]
            )
        if len(manifests) == 2:
            a = manifests[0][1]["results"]["final_accuracy"]
            b = manifests[1][1]["results"]["final_accuracy"]
            writer.writerow(
                ["delta", ""]
                + [
                    (a[c] - b[c]) if c in a and c in b else ""
                    for c in clients
                ]
                + [
                    manifests[0][1]["results"]["mean_final_accuracy"]
                    - manifests[1][1]["results"]["mean_final_accuracy"]
                ]
            )

    # accuracy-vs-epoch line plot
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, m in manifests:
        table = m["results"]["per_epoch_accuracy"]
        if not table:
            continue
        epochs = range(len(next(iter(table.values()))))
        mean_curve = np.mean([table[c] for c in sorted(table, key=int)], axis=0)
        ax.plot(list(epochs), mean_curve, marker="o", label=f"{name} ({m['results']['scheme']})")
    ax.set_xlabel("global epoch")
    ax.set_ylabel("mean accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "plots" / "accuracy_vs_epoch.svg")
    plt.close(fig)

    # leakage bar chart, runs ordered by mean cross-client SSIM descending;
    # leakage lives in the manifest or in a sibling leakage.json from cmd_attack
    leaky: dict[str, float] = {}
    for name, m in manifests:
        data = m["results"].get("leakage")
        if data and data.get("cross_ssim_mean") is not None:
            leaky[name] = data["cross_ssim_mean"]
    for run_dir in run_dirs:
        path = Path(run_dir) / "leakage.json"
        if path.exists():
            data = json.loads(path.read_text(encoding="utf-8"))
            if data.get("cross_ssim_mean") is not None:
                leaky.setdefault(Path(run_dir).name, data["cross_ssim_mean"])
    if leaky:
        ordered = sorted(leaky.items(), key=lambda item: -item[1])
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar([name for name, _ in ordered], [value for _, value in ordered])
        ax.set_ylabel("mean cross-client SSIM")
        ax.set_ylim(0, 1)
        fig.tight_layout()
        fig.savefig(out / "plots" / "leakage.svg")
        plt.close(fig)

    return {"runs": [name for name, _ in manifests]}
