"""SVG rendering of prediction dumps, one file per scene."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import quoteattr

COLORS = {"obs": "#1f77b4", "gt": "#2ca02c", "pred": "#d62728"}


def read_dump(path) -> dict[str, dict]:
    """scene -> {(window, kind, sample): [(x, y), ...]} from a predictions CSV."""
    scenes: dict[str, dict] = defaultdict(lambda: defaultdict(list))
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["window"]), row["kind"], int(row["sample"]))
            scenes[row["scene"]][key].append((int(row["step"]), float(row["x"]), float(row["y"])))
    out = {}
    for scene, lines in scenes.items():
        out[scene] = {k: [(x, y) for _, x, y in sorted(v)] for k, v in lines.items()}
    return out


def render_svg(lines: dict, size: int = 600, margin: float = 10.0) -> str:
    pts = [p for line in lines.values() for p in line]
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, y0 = min(xs), min(ys)
    span = max(max(xs) - x0, max(ys) - y0, 1e-9)
    scale = (size - 2 * margin) / span

    def tx(x, y):
        # flip y so the plot reads like a map
        return margin + (x - x0) * scale, size - margin - (y - y0) * scale

    groups = {"obs": [], "gt": [], "pred": []}
    for (window, kind, sample), line in sorted(lines.items()):
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in (tx(x, y) for x, y in line))
        cls = f"w{window}" + ("" if sample < 0 else f" s{sample}")
        groups.setdefault(kind, []).append(f'<polyline class={quoteattr(cls)} points="{coords}"/>')
    names = {"obs": "observed", "gt": "ground_truth", "pred": "samples"}
    body = []
    for kind, items in groups.items():
        width = 1 if kind == "pred" else 2
        opacity = 0.4 if kind == "pred" else 1.0
        body.append(f'<g id="{names.get(kind, kind)}" fill="none" stroke="{COLORS.get(kind, "#000")}" '
                    f'stroke-width="{width}" stroke-opacity="{opacity}">')
        body += items
        body.append("</g>")
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">\n' + "\n".join(body) + "\n</svg>\n")


def plot_dump(dump_path, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for scene, lines in sorted(read_dump(dump_path).items()):
        path = out / f"{scene.replace('@', '_')}.svg"
        path.write_text(render_svg(lines))
        written.append(path)
    return written
