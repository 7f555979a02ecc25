"""Message counts of the star graph vs a complete graph, plus parameter counts.

    python scripts/cost_accounting.py --manifest data/manifest.txt
    python scripts/cost_accounting.py --crowd 3 10 50
"""
import argparse

from sgsg.dataset import parse_scene
from sgsg.harness import cost_report, load_manifest
from sgsg.synthetic import crowd


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--manifest")
    p.add_argument("--crowd", type=int, nargs="*", default=[], help="synthetic crowd sizes")
    p.add_argument("--steps", type=int, default=20)
    args = p.parse_args()

    scenes = {}
    if args.manifest:
        scenes.update({n: parse_scene(e.annotations) for n, e in load_manifest(args.manifest).items()})
    scenes.update({f"crowd{n}": crowd(n, args.steps, seed=n) for n in args.crowd})
    if not scenes:
        p.error("give --manifest and/or --crowd")

    rep = cost_report(scenes)
    print(f"{'scene':>10} {'star':>10} {'complete':>12} {'ratio':>8}")
    for name in sorted(scenes):
        print(f"{name:>10} {rep.star_messages[name]:>10d} {rep.complete_messages[name]:>12d} "
              f"{rep.ratio(name):>8.4f}")
    print("\nparameters per module:")
    for mod, n in rep.param_counts.items():
        print(f"  {mod:<20} {n:>8d}")


if __name__ == "__main__":
    main()
