"""Operator-facing command surface.

One JSON config file drives a run; unknown keys are rejected and every
command archives the resolved config next to its outputs, so (config,
seed) fully determines all output bytes.

Exit codes: 0 success, 2 configuration/contract error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .attention_maps import (
    aggregate_records,
    geometry_for,
    normalize_per_scale,
    render_heatmaps,
    write_heatmap,
    write_records_csv,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .clustering import assign_dataset, cluster_dataset, load_cluster_model, save_cluster_model
from .data import Dataset, SyntheticSpec, generate_synthetic, load_dataset, save_dataset, split_train_test
from .errors import ConfigError, CrossmilError
from .evaluation import (
    auc,
    average_precision,
    compare_models,
    evaluate,
    read_scores,
    write_curves,
    write_report,
    write_scores,
)
from .models import ModelConfig, attention_records
from .training import TrainConfig, TrainedModel, train_all, write_loss_curves

DEFAULT_CONFIG = {
    "seed": 0,
    "data": {
        "n_train_per_class": 10,
        "n_test_per_class": 5,
        "n_locations": 25,
        "dim": 32,
        "n_scales": 3,
        "informative_scale": 0,
        "signal_fraction": 0.5,
        "signal_strength": 1.0,
        "noise_level": 0.2,
        "n_prototypes": 8,
    },
    "cluster": {"scale": "5x", "k": 8},
    "model": {
        "fusion": "cross_scale_attention",
        "attention_sharing": "shared",
        "attention_activation": "relu",
        "encoder_dim": 64,
        "attention_hidden": 32,
        "pooling": "plain",
        "scale_index": None,
    },
    "train": {
        "epochs": 100,
        "learning_rate": 1e-4,
        "bag_size": 8,
        "n_splits": 10,
        "bag_resample": True,
    },
    "eval": {"mode": "ensemble", "n_bootstrap": 1000},
    "render": {"cell_size": 256.0},
}

FUSION_ALIASES = {
    "cs-attn": "cross_scale_attention",
    "cross_scale_attention": "cross_scale_attention",
    "concat": "concat",
    "add": "add",
    "single-scale": "single_scale",
    "single_scale": "single_scale",
    "instance-pool": "instance_pool",
    "instance_pool": "instance_pool",
}


def load_config(path: str | None) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is None:
        return config
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        user = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    for key, value in user.items():
        if key == "seed":
            config["seed"] = value
            continue
        if key not in config:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        for sub, subval in value.items():
            if sub not in config[key]:
                raise ConfigError(f"unknown config key {key}.{sub}")
            config[key][sub] = subval
    return config


def write_resolved_config(config: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n"
    )


def synthetic_spec(config: dict) -> SyntheticSpec:
    d = config["data"]
    return SyntheticSpec(
        n_patients_per_class=d["n_train_per_class"] + d["n_test_per_class"],
        n_locations=d["n_locations"],
        dim=d["dim"],
        n_scales=d["n_scales"],
        informative_scale=d["informative_scale"],
        signal_fraction=d["signal_fraction"],
        signal_strength=d["signal_strength"],
        noise_level=d["noise_level"],
        n_prototypes=d["n_prototypes"],
        seed=config["seed"],
    )


def model_config(config: dict, dataset: Dataset, n_clusters: int) -> ModelConfig:
    m = config["model"]
    return ModelConfig(
        fusion=m["fusion"],
        attention_sharing=m["attention_sharing"],
        attention_activation=m["attention_activation"],
        embed_dim=dataset.dim,
        encoder_dim=m["encoder_dim"],
        attention_hidden=m["attention_hidden"],
        n_clusters=n_clusters,
        n_scales=dataset.n_scales,
        pooling=m["pooling"],
        scale_index=m["scale_index"],
    )


def train_config(config: dict) -> TrainConfig:
    t = config["train"]
    return TrainConfig(
        epochs=t["epochs"],
        learning_rate=t["learning_rate"],
        bag_size=t["bag_size"],
        n_splits=t["n_splits"],
        seed=config["seed"],
        bag_resample=t["bag_resample"],
    )


def _load_checkpoints(ckpt_dir: Path, cfg: ModelConfig) -> list[TrainedModel]:
    paths = sorted(ckpt_dir.glob("checkpoint_split*.bin"))
    if not paths:
        raise ConfigError(f"no checkpoints found in {ckpt_dir}")
    return [
        TrainedModel(load_checkpoint(p, cfg), split_id=i, selection_epoch=-1)
        for i, p in enumerate(paths)
    ]


def cmd_gen_data(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    out = Path(args.out_dir)
    spec = synthetic_spec(config)
    dataset = generate_synthetic(spec)
    train, test = split_train_test(dataset, config["data"]["n_test_per_class"])
    write_resolved_config(config, out)
    train_manifest = save_dataset(train, out / "train")
    test_manifest = save_dataset(test, out / "test")
    print(train_manifest)
    print(test_manifest)
    return 0


def cmd_cluster(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    dataset = load_dataset(args.data)
    model = cluster_dataset(
        dataset, config["cluster"]["scale"], config["cluster"]["k"], seed=config["seed"]
    )
    out = Path(args.out_dir)
    write_resolved_config(config, out)
    print(save_cluster_model(model, out / "cluster_model.json"))
    return 0


def _apply_model_overrides(config: dict, args) -> None:
    if getattr(args, "fusion", None) is not None:
        try:
            config["model"]["fusion"] = FUSION_ALIASES[args.fusion]
        except KeyError:
            raise ConfigError(
                f"unknown fusion {args.fusion!r}; expected one of {sorted(FUSION_ALIASES)}"
            ) from None
    if getattr(args, "scale_index", None) is not None:
        config["model"]["scale_index"] = args.scale_index


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    _apply_model_overrides(config, args)
    dataset = load_dataset(args.data)
    cluster = load_cluster_model(args.cluster)
    cfg = model_config(config, dataset, cluster.k)
    tcfg = train_config(config)
    out = Path(args.out_dir)
    write_resolved_config(config, out)
    models = train_all(dataset, cluster, tcfg, cfg)
    for m in models:
        save_checkpoint(m.params, out / f"checkpoint_split{m.split_id:02d}.bin")
        write_loss_curves(m, out / f"loss_split{m.split_id:02d}.csv")
    print(out)
    return 0


def cmd_eval(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    _apply_model_overrides(config, args)
    dataset = load_dataset(args.data)
    cluster = assign_dataset(load_cluster_model(args.cluster), dataset)
    cfg = model_config(config, dataset, cluster.k)
    models = _load_checkpoints(Path(args.ckpt_dir), cfg)
    report, scored = evaluate(
        models,
        dataset,
        cluster,
        bag_size=config["train"]["bag_size"],
        seed=config["seed"],
        mode=config["eval"]["mode"],
    )
    out = Path(args.out_dir)
    write_resolved_config(config, out)
    write_report(report, out / "report.txt")
    write_curves(report, out)
    write_scores(scored, out / "scores.csv")
    print(out / "report.txt")
    return 0


def cmd_compare(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    entries = []
    for item in args.scores:
        if "=" not in item:
            raise ConfigError(f"--scores expects NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        entries.append((name, *read_scores(path)))
    if len(entries) < 2:
        raise ConfigError("compare needs at least two --scores entries")
    names = [e[0] for e in entries]
    ref = args.ref if args.ref is not None else names[0]
    if ref not in names:
        raise ConfigError(f"--ref {ref!r} is not among the score sets {names}")
    base_ids, base_labels = entries[0][1], entries[0][2]
    for name, ids, labels, _ in entries:
        if ids != base_ids or (labels != base_labels).any():
            raise ConfigError(f"score set {name!r} covers different patients than {names[0]!r}")
    ref_scores = next(e[3] for e in entries if e[0] == ref)

    out = Path(args.out_dir)
    write_resolved_config(config, out)
    lines = ["model,auc,ap,acc,p_auc_vs_ref,p_ap_vs_ref"]
    for name, ids, labels, scores in entries:
        acc = float(((scores >= 0.5).astype(int) == labels).mean())
        if name == ref:
            p_auc, p_ap = "", ""
        else:
            test = compare_models(
                name, scores, ref, ref_scores, labels,
                n_boot=config["eval"]["n_bootstrap"], seed=config["seed"],
            )
            p_auc, p_ap = repr(test.p_auc), repr(test.p_ap)
        lines.append(
            f"{name},{auc(scores, labels)!r},{average_precision(scores, labels)!r},"
            f"{acc!r},{p_auc},{p_ap}"
        )
    path = out / "comparison.csv"
    path.write_text("\n".join(lines) + "\n")
    print(path)
    return 0


def cmd_attn_map(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    dataset = load_dataset(args.data)
    cfg = model_config(config, dataset, config["cluster"]["k"])
    models = _load_checkpoints(Path(args.ckpt_dir), cfg)
    known = {p.patient_id for p in dataset}
    wanted = args.patients.split(",") if args.patients else [p.patient_id for p in dataset]
    unknown = [pid for pid in wanted if pid not in known]
    if unknown:
        raise ConfigError(f"patient(s) not in this dataset: {', '.join(unknown)}")
    out = Path(args.out_dir)
    write_resolved_config(config, out)
    all_records = []
    labels = [s.label for s in dataset.scales]
    for pid in wanted:
        per_model = [attention_records(dataset, m.params, cfg, patients=[pid]) for m in models]
        records = aggregate_records([r for recs in per_model for r in recs])
        records = normalize_per_scale(records)
        geometry = geometry_for(records, config["render"]["cell_size"])
        for heatmap in render_heatmaps(records, geometry, labels):
            write_heatmap(heatmap, out / f"{pid}_scale-{heatmap.scale_label}.pgm")
        all_records.extend(records)
    write_records_csv(all_records, out / "attention_records.csv")
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossmil",
        description="Cross-scale attention MIL pipeline: synthetic data, clustering, "
        "training, evaluation, attention maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, cluster=False, ckpt=False):
        p.add_argument("--config", help="JSON config file (defaults applied underneath)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out-dir", required=True)
        if data:
            p.add_argument("--data", required=True, help="dataset manifest.json")
        if cluster:
            p.add_argument("--cluster", required=True, help="cluster_model.json")
        if ckpt:
            p.add_argument("--ckpt-dir", required=True, help="directory with checkpoint_split*.bin")

    p = sub.add_parser("gen-data", help="generate a synthetic train/test dataset pair")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("cluster", help="fit phenotype k-means on a dataset")
    common(p, data=True)
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("train", help="train one model variant over all splits")
    common(p, data=True, cluster=True)
    p.add_argument("--fusion", help="override model.fusion (e.g. cs-attn, concat, add)")
    p.add_argument("--scale-index", type=int, dest="scale_index")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a test dataset with trained checkpoints")
    common(p, data=True, cluster=True, ckpt=True)
    p.add_argument("--fusion", help="override model.fusion (must match the checkpoints)")
    p.add_argument("--scale-index", type=int, dest="scale_index")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare", help="pairwise significance tests over score CSVs")
    common(p)
    p.add_argument("--scores", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--ref", help="reference model name (default: first)")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("attn-map", help="render per-scale attention heatmaps")
    common(p, data=True, ckpt=True)
    p.add_argument("--patients", help="comma-separated patient ids (default: all)")
    p.set_defaults(fn=cmd_attn_map)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CrossmilError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
