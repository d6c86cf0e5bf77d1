"""Static SVG figures for aggregated reports."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402

# fixed hash salt and metadata keep SVG output byte-stable between runs
plt.rcParams.update({
    "svg.hashsalt": "pollitrack",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
})
_META = {"Date": None, "Creator": None}

SPECIES_COLOURS = {
    "honeybee": "#d08c00",
    "syrphidae": "#3a7d44",
    "lepidoptera": "#7b4fa0",
    "vespidae": "#b03a2e",
}

BAR_PANELS = [
    ("tracks", "Tracks"),
    ("visits", "Flower visits"),
    ("visits_per_track", "Visits per track"),
    ("flowers", "Flowers"),
    ("flowers_fertilised", "Flowers at threshold"),
]


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_bars(rows: Sequence[dict], path: str | Path) -> None:
    """One small bar panel per quantity, locations along x."""
    locations = [r["location"] for r in rows]
    fig, axes = plt.subplots(1, len(BAR_PANELS), figsize=(2.2 * len(BAR_PANELS), 2.6))
    for ax, (key, title) in zip(axes, BAR_PANELS):
        ax.bar(range(len(rows)), [float(r[key]) for r in rows], color="#5f7f9f")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(locations, rotation=45, ha="right")
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_species(rows: Sequence[dict], path: str | Path) -> None:
    """Grouped bars: percentage of flowers visited per species, threshold share overlaid."""
    locations = sorted({r["location"] for r in rows})
    species = list(SPECIES_COLOURS)
    width = 0.8 / len(species)
    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(locations)), 3.0))
    lookup = {(r["location"], r["species"]): r for r in rows}
    for k, s in enumerate(species):
        xs = [i - 0.4 + width * (k + 0.5) for i in range(len(locations))]
        visited = [float(lookup.get((loc, s), {}).get("flowers_visited_pct", 0.0)) for loc in locations]
        fert = [float(lookup.get((loc, s), {}).get("flowers_fertilised_pct", 0.0)) for loc in locations]
        ax.bar(xs, visited, width, color=SPECIES_COLOURS[s], alpha=0.45, label=s)
        ax.bar(xs, fert, width, color=SPECIES_COLOURS[s], hatch="//", edgecolor="white")
    ax.set_xticks(range(len(locations)))
    ax.set_xticklabels(locations)
    ax.set_ylabel("% of flowers")
    ax.set_ylim(0, 100)
    ax.legend(frameon=False, fontsize=7, ncol=2)
    fig.tight_layout()
    _save(fig, path)


def plot_trajectories(points: Sequence[dict], flowers: Sequence[dict], path: str | Path) -> None:
    """Per-video trajectory panels coloured by species, flowers drawn as circles."""
    videos = sorted({p["video_id"] for p in points} | {f["video_id"] for f in flowers})
    if not videos:
        videos = [""]
    fig, axes = plt.subplots(1, len(videos), figsize=(4.0 * len(videos), 2.6), squeeze=False)
    lines = defaultdict(list)
    for p in points:
        lines[(p["video_id"], p["track_id"], p["species"])].append((float(p["x"]), float(p["y"])))
    for ax, vid in zip(axes[0], videos):
        for f in flowers:
            if f["video_id"] == vid:
                ax.add_patch(Circle((float(f["x"]), float(f["y"])), float(f["radius"]),
                                    fill=False, lw=0.8, color="#444444"))
        for (v, _, s), xy in sorted(lines.items()):
            if v != vid:
                continue
            xs, ys = zip(*xy)
            ax.plot(xs, ys, lw=0.7, color=SPECIES_COLOURS.get(s, "k"))
        ax.set_aspect("equal")
        ax.invert_yaxis()
        ax.set_title(vid)
    fig.tight_layout()
    _save(fig, path)
