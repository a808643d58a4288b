"""Write the 3-class synthetic set (tone / chirp / pink noise) as WAV files plus manifest.csv."""

import argparse

from eat_audio.synthetic import write_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("root")
    ap.add_argument("--per-class", type=int, default=20)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--duration-s", type=float, default=1.0)
    ap.add_argument("--rate", type=int, default=16000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    path = write_dataset(args.root, args.per_class, args.folds, args.duration_s, args.rate, args.seed)
    print(path)


if __name__ == "__main__":
    main()
