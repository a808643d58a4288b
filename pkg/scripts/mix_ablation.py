"""Mixing-strategy ablation on the synthetic set: no mixing, then each strategy alone.

Label-preserving augmentation is identical across arms; only the mix stage changes.
Prints test accuracy per arm and how often each stage fired during training.
"""

import argparse
import math
from collections import Counter

import numpy as np
import torch

from eat_audio.augment import AugmentPipeline, default_specs
from eat_audio.mix import MixKind, MixPolicy
from eat_audio.model import EatConfig, build
from eat_audio.synthetic import toy_dataset
from eat_audio.train import TrainConfig, TrainState, ema_model, evaluate, train_epoch


def run_arm(kinds, args, train, test):
    model_cfg = EatConfig(base_channels=8, transformer_layers=2, transformer_heads=4, embed_dim=64,
                          num_classes=3, res_blocks_per_stage=1)
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    model = build(model_cfg, args.seed)
    state = TrainState.init(model, cfg.epochs * math.ceil(len(train) / cfg.batch_size))
    pipeline = AugmentPipeline(default_specs(args.p_augment))
    mix = MixPolicy(kinds=kinds, probability=args.p_mix) if kinds else None
    fired = Counter()
    for epoch in range(cfg.epochs):
        res = train_epoch(model, train, pipeline, mix, cfg, state, np.random.default_rng([args.seed, epoch]), epoch)
        for rec in res.stage_log:
            fired.update(s.get("kind", s["stage"]) if s["stage"] == "mix" else s["stage"] for s in rec["stages"])
    return evaluate(ema_model(model, state), test, cfg)["accuracy"], fired


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--p-augment", type=float, default=0.5)
    ap.add_argument("--p-mix", type=float, default=0.5)
    ap.add_argument("--train-per-class", type=int, default=100)
    args = ap.parse_args()
    torch.set_num_threads(1)
    train, test = toy_dataset(args.train_per_class)
    arms = [("none", ())] + [(k.value, (k.value,)) for k in MixKind]
    for name, kinds in arms:
        acc, fired = run_arm(kinds, args, train, test)
        print(f"{name:9s} accuracy {acc:.3f}  stages {dict(sorted(fired.items()))}", flush=True)


if __name__ == "__main__":
    main()
