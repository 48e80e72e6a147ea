#!/usr/bin/env python3
"""End-to-end demo: synthesize data, cluster, train cross-scale attention,
evaluate, and render attention maps, all through the CLI surface.

Usage: python scripts/run_pipeline.py [--out runs/demo] [--seed 0]
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from crossmil.cli import main as cli

CONFIG = {
    "data": {
        "n_train_per_class": 20,
        "n_test_per_class": 10,
        "n_locations": 36,
        "dim": 32,
        "signal_fraction": 0.5,
        "signal_strength": 1.0,
        "noise_level": 0.2,
    },
    "cluster": {"scale": "5x", "k": 8},
    "model": {"encoder_dim": 64, "attention_hidden": 32},
    "train": {"epochs": 15, "learning_rate": 1e-3, "bag_size": 8, "n_splits": 2},
}


def run(out: Path, seed: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    config = out / "config.json"
    config.write_text(json.dumps(CONFIG, indent=2))
    c, s = str(config), str(seed)

    steps = [
        ["gen-data", "--config", c, "--out-dir", str(out / "data"), "--seed", s],
        ["cluster", "--config", c, "--data", str(out / "data/train/manifest.json"),
         "--out-dir", str(out / "cluster"), "--seed", s],
        ["train", "--config", c, "--data", str(out / "data/train/manifest.json"),
         "--cluster", str(out / "cluster/cluster_model.json"),
         "--out-dir", str(out / "checkpoints"), "--seed", s],
        ["eval", "--config", c, "--data", str(out / "data/test/manifest.json"),
         "--cluster", str(out / "cluster/cluster_model.json"),
         "--ckpt-dir", str(out / "checkpoints"), "--out-dir", str(out / "eval"), "--seed", s],
        ["attn-map", "--config", c, "--data", str(out / "data/test/manifest.json"),
         "--ckpt-dir", str(out / "checkpoints"), "--out-dir", str(out / "maps"), "--seed", s],
    ]
    for step in steps:
        print(f"$ crossmil {' '.join(step)}")
        code = cli(step)
        if code != 0:
            sys.exit(code)
    print(f"\nreport: {(out / 'eval/report.txt').read_text()}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", type=Path, default=Path("runs/demo"))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    run(args.out, args.seed)
