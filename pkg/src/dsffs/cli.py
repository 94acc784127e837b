"""Experiment driver: config parsing, training runs, metric/manifest output.

Configs are flat key: value files (YAML syntax, one level deep). Every
unset key resolves to a documented default and the fully resolved config
is echoed next to the outputs, so a run is reproducible from its output
directory alone.

Exit codes: 0 ok, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from .data import (
    Dataset,
    generate_synthetic,
    load_dataset,
    normalize,
    partition_noniid,
)
from .fed_core import FedConfig, run_training
from .metrics import RoundMetrics
from .sparse_net import ConfigError

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


@dataclass
class ExperimentConfig:
    """Declarative description of one run; defaults follow the standard setup."""

    # dataset
    dataset: str = "synthetic"          # synthetic | csv | idx | libsvm
    path: str | None = None
    label_column: str | None = None
    n_features: int | None = None       # libsvm width override
    n_informative: int = 20
    n_noise: int = 480
    n_samples: int = 2000
    n_classes: int = 2
    separation: float = 1.0
    normalize: str = "minmax"           # minmax | zscore | none
    test_fraction: float = 0.2
    # model / training
    hidden_dims: list[int] = field(default_factory=lambda: [200, 200])
    sparsity: float = 0.8
    k_features: int = 150
    zeta: float = 0.2
    beta: float = 0.65
    rounds: int = 400
    local_epochs: int = 10
    clients: int = 10
    clients_per_round: int | None = None
    dirichlet_alpha: float = 0.5
    lr: float = 0.1
    momentum: float = 0.9
    mu: float = 0.0
    adjust_rate: float = 0.05
    adjust_every: int = 10
    batch_size: int = 32
    seed: int = 1
    feature_selection: bool = True
    workers: int | None = None
    out_dir: str = "runs/out"

    def fed_config(self) -> FedConfig:
        return FedConfig(
            hidden_dims=list(self.hidden_dims),
            n_clients=self.clients,
            clients_per_round=self.clients_per_round,
            local_epochs=self.local_epochs,
            rounds=self.rounds,
            sparsity=self.sparsity,
            k_features=self.k_features,
            zeta=self.zeta,
            beta=self.beta,
            mu=self.mu,
            adjust_every=self.adjust_every,
            adjust_rate=self.adjust_rate,
            lr=self.lr,
            momentum=self.momentum,
            batch_size=self.batch_size,
            seed=self.seed,
            workers=self.workers,
            feature_selection=self.feature_selection,
        )


_INT_OR_NONE = {"clients_per_round", "workers", "n_features"}
_STR_OR_NONE = {"path", "label_column"}


def _coerce(name: str, value, target):
    if value is None:
        if name in _INT_OR_NONE or name in _STR_OR_NONE:
            return None
        raise ConfigError(f"config key {name!r} may not be null")
    if target is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"config key {name!r} must be true or false")
    if target is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {name!r} must be an integer")
        if float(value) != int(value):
            raise ConfigError(f"config key {name!r} must be an integer")
        return int(value)
    if target is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {name!r} must be a number")
        return float(value)
    if target is list:
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        if not isinstance(value, list) or not value:
            raise ConfigError(f"config key {name!r} must be a non-empty list")
        try:
            return [int(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"config key {name!r} must hold integers") from None
    return str(value)


def load_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a flat config file; unknown keys are rejected."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a flat key: value mapping")
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})

    cfg = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if key == "hidden_dims":
            setattr(cfg, key, _coerce(key, value, list))
        elif isinstance(current, bool):
            setattr(cfg, key, _coerce(key, value, bool))
        elif key in _INT_OR_NONE:
            setattr(cfg, key, None if value is None else _coerce(key, value, int))
        elif key in _STR_OR_NONE:
            setattr(cfg, key, None if value is None else str(value))
        elif isinstance(current, int):
            setattr(cfg, key, _coerce(key, value, int))
        elif isinstance(current, float):
            setattr(cfg, key, _coerce(key, value, float))
        else:
            setattr(cfg, key, _coerce(key, value, str))

    env_seed = os.environ.get("DSFFS_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"DSFFS_SEED must be an integer, got {env_seed!r}") from None
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.dataset not in ("synthetic", "csv", "idx", "libsvm"):
        raise ConfigError(f"unknown dataset kind {cfg.dataset!r}")
    if cfg.dataset != "synthetic":
        if not cfg.path:
            raise ConfigError(f"dataset {cfg.dataset!r} requires a path")
        for part in str(cfg.path).split(","):
            if not os.path.exists(part.strip()):
                raise ConfigError(f"dataset file not found: {part.strip()}")
    if cfg.normalize not in ("minmax", "zscore", "none"):
        raise ConfigError(f"unknown normalize mode {cfg.normalize!r}")
    if not 0.0 < cfg.test_fraction < 1.0:
        raise ConfigError("test_fraction must be in (0, 1)")
    cfg.fed_config().validate()


def resolved_lines(cfg: ExperimentConfig) -> str:
    parts = []
    for f in sorted(fields(ExperimentConfig), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        if isinstance(value, list):
            value = "[" + ", ".join(str(v) for v in value) + "]"
        elif value is None:
            value = "null"
        elif isinstance(value, bool):
            value = "true" if value else "false"
        parts.append(f"{f.name}: {value}")
    return "\n".join(parts) + "\n"


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "synthetic":
        return generate_synthetic(cfg.n_informative, cfg.n_noise, cfg.n_samples,
                                  cfg.n_classes, cfg.seed, cfg.separation)
    return load_dataset(cfg.path, cfg.dataset, label_column=cfg.label_column,
                        n_features=cfg.n_features)


def prepare(cfg: ExperimentConfig, ds: Dataset | None = None):
    """Dataset -> normalized, partitioned dataset ready for run_training."""
    if ds is None:
        ds = build_dataset(cfg)
    parts = partition_noniid(ds, cfg.clients, cfg.dirichlet_alpha, cfg.seed,
                             test_fraction=cfg.test_fraction)
    if cfg.normalize != "none":
        train_idx = np.sort(np.concatenate(parts.shards))
        normed = normalize(ds, cfg.normalize, fit_idx=train_idx)
        normed.meta = dict(ds.meta)
        parts = type(parts)(normed, parts.shards, parts.test)
    return parts


def write_metrics_csv(path: str, metrics: list[RoundMetrics]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(RoundMetrics.CSV_HEADER + "\n")
        for m in metrics:
            fh.write(m.csv_row() + "\n")


def cmd_run(args) -> int:
    cfg = load_config(args.config, {"workers": args.workers, "out_dir": args.out})
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(resolved_lines(cfg))

    parts = prepare(cfg)
    server, metrics, selection = run_training(cfg.fed_config(), parts)

    write_metrics_csv(os.path.join(cfg.out_dir, "metrics.csv"), metrics)
    manifest = {
        "selected_features": selection.indices,
        "strengths": selection.strengths,
        "k_requested": selection.requested,
        "shortfall": selection.shortfall,
        "seed": cfg.seed,
        "config": {f.name: getattr(cfg, f.name) for f in fields(ExperimentConfig)},
    }
    with open(os.path.join(cfg.out_dir, "selected_features.json"), "w",
              encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    final = metrics[-1]
    print(f"done: {cfg.rounds} rounds, final accuracy {final.test_accuracy:.4f}, "
          f"{final.connected_input_neurons} connected inputs, "
          f"{len(selection.indices)} features -> {cfg.out_dir}")
    return EXIT_OK


def cmd_figure1(args) -> int:
    """Noisy-feature study: clean vs noisy baselines, then selection enabled.

    Trains three configurations on one synthetic draw: (1) informative
    columns only, no feature selection; (2) all columns, no feature
    selection; (3) all columns with feature selection on. Emits the three
    accuracy curves and how much of the ground truth the selection
    recovered.
    """
    cfg = load_config(args.config, {"out_dir": args.out})
    if cfg.dataset != "synthetic":
        raise ConfigError("the figure1 study requires a synthetic dataset config")
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(resolved_lines(cfg))

    ds = build_dataset(cfg)
    informative = ds.meta["informative_idx"]

    original = Dataset(ds.X[:, informative], ds.y.copy(), name=ds.name + "_original",
                       meta=dict(ds.meta))

    def run_one(dataset: Dataset, fs: bool):
        sub = ExperimentConfig(**{f.name: getattr(cfg, f.name)
                                  for f in fields(ExperimentConfig)})
        sub.feature_selection = fs
        fed = sub.fed_config()
        fed.k_features = min(fed.k_features, dataset.d)
        parts = prepare(sub, dataset)
        return run_training(fed, parts)

    log.info("figure1: training on informative features only (no selection)")
    _, m_orig, _ = run_one(original, fs=False)
    log.info("figure1: training on noisy features (no selection)")
    _, m_noisy, _ = run_one(ds, fs=False)
    log.info("figure1: training on noisy features with selection")
    _, m_fs, selection = run_one(ds, fs=True)

    curves_path = os.path.join(cfg.out_dir, "figure1_curves.csv")
    with open(curves_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("round,acc_original,acc_noisy_nofs,acc_noisy_fs\n")
        for a, b, c in zip(m_orig, m_noisy, m_fs):
            fh.write(f"{a.round},{a.test_accuracy:.10g},{b.test_accuracy:.10g},"
                     f"{c.test_accuracy:.10g}\n")

    recovered = sorted(set(selection.indices) & set(informative))
    report = {
        "n_informative": len(informative),
        "informative_idx": list(informative),
        "selected_features": selection.indices,
        "recovered": recovered,
        "recovery_fraction": len(recovered) / len(informative),
        "final_acc_original": m_orig[-1].test_accuracy,
        "final_acc_noisy_nofs": m_noisy[-1].test_accuracy,
        "final_acc_noisy_fs": m_fs[-1].test_accuracy,
        "seed": cfg.seed,
    }
    with open(os.path.join(cfg.out_dir, "figure1_report.json"), "w",
              encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

    print(f"figure1: original {report['final_acc_original']:.4f}, "
          f"noisy {report['final_acc_noisy_nofs']:.4f}, "
          f"with selection {report['final_acc_noisy_fs']:.4f}, "
          f"recovery {report['recovery_fraction']:.2f} -> {cfg.out_dir}")
    return EXIT_OK


def _histogram_line(y: np.ndarray, n_classes: int) -> str:
    counts = np.bincount(y, minlength=n_classes)
    return " ".join(f"{c}:{n}" for c, n in enumerate(counts))


def cmd_inspect(args) -> int:
    if args.dataset.startswith("synthetic"):
        cfg = ExperimentConfig()
        ds = build_dataset(cfg)
    else:
        if ":" not in args.dataset:
            raise ConfigError("dataset spec must look like format:path (or 'synthetic')")
        fmt, path = args.dataset.split(":", 1)
        ds = load_dataset(path, fmt, label_column=args.label_column)
    print(f"name: {ds.name}")
    print(f"N={ds.n} D={ds.d} C={ds.n_classes}")
    print("class histogram:", _histogram_line(ds.y, ds.n_classes))
    if args.partition:
        try:
            m_s, alpha_s, seed_s = args.partition.split(",")
            m, alpha, seed = int(m_s), float(alpha_s), int(seed_s)
        except ValueError:
            raise ConfigError("--partition must look like M,alpha,seed") from None
        parts = partition_noniid(ds, m, alpha, seed)
        print(f"test split: {len(parts.test)} samples")
        for k, shard in enumerate(parts.shards):
            print(f"shard {k}: {len(shard)} samples |",
                  _histogram_line(ds.y[shard], ds.n_classes))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsffs",
        description="Dynamic sparse federated feature selection simulator",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log per-round progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train and emit metrics + feature manifest")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--workers", type=int, default=None,
                       help="parallel client training (default: all clients)")
    p_run.add_argument("--out", default=None, help="override output directory")
    p_run.set_defaults(func=cmd_run)

    p_fig = sub.add_parser("figure1", help="noisy-feature study on synthetic data")
    p_fig.add_argument("--config", required=True)
    p_fig.add_argument("--out", default=None)
    p_fig.set_defaults(func=cmd_figure1)

    p_ins = sub.add_parser("inspect", help="print dataset and partition stats")
    p_ins.add_argument("--dataset", required=True,
                       help="'synthetic' or format:path (csv:..., idx:img,lbl, libsvm:...)")
    p_ins.add_argument("--label-column", default=None)
    p_ins.add_argument("--partition", default=None, metavar="M,alpha,seed")
    p_ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
