"""Write five simulated ETH/UCY-format scenes plus a manifest.

    python scripts/make_synthetic_eth_ucy.py data/ --duration 600 --seed 1
"""
import argparse

from sgsg.synthetic import make_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out_dir")
    p.add_argument("--duration", type=float, default=600.0, help="simulated seconds per scene")
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args()
    manifest = make_dataset(args.out_dir, args.duration, args.seed)
    print(manifest.read_text(), end="")
    print(f"manifest: {manifest}")


if __name__ == "__main__":
    main()
