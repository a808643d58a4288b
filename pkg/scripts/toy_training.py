"""Train the reduced EAT on the synthetic 3-class set and report test accuracy per epoch.

Defaults match the desk-scale acceptance run: 300 train / 90 test clips of 1 s at 16 kHz,
base_channels 8, two transformer layers, 20 epochs, no augmentation.
"""

import argparse
import json
import time

import torch

from eat_audio.model import EatConfig, build, param_count
from eat_audio.synthetic import toy_dataset
from eat_audio.train import TrainConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train-per-class", type=int, default=100)
    ap.add_argument("--test-per-class", type=int, default=30)
    ap.add_argument("--out", help="write the metric history as JSON lines")
    args = ap.parse_args()
    torch.set_num_threads(1)

    train, test = toy_dataset(args.train_per_class, args.test_per_class, seed=args.seed)
    model_cfg = EatConfig(base_channels=8, transformer_layers=2, transformer_heads=4, embed_dim=64,
                          num_classes=3, res_blocks_per_stage=1)
    print(f"{param_count(build(model_cfg)):,} parameters, {len(train)} train / {len(test)} test clips")
    t0 = time.perf_counter()
    records = []

    def report(rec):
        records.append(rec)
        if rec["split"] == "eval":
            print(f"epoch {rec['epoch']:2d}  test accuracy {rec['accuracy']:.3f}  "
                  f"loss {rec['loss']:.3f}  {time.perf_counter() - t0:.0f} s", flush=True)

    fit(model_cfg, TrainConfig(epochs=args.epochs, seed=args.seed), train, test, on_epoch=report)
    if args.out:
        with open(args.out, "w") as fh:
            fh.writelines(json.dumps(r) + "\n" for r in records)


if __name__ == "__main__":
    main()
