"""Per-episode metrics, windowed success, CSV and SVG emission."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

CSV_HEADER = ("episode", "steps", "success", "return", "success_rate", "wall_ms")


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    success: int
    ret: float
    success_rate: float
    wall_ms: float = 0.0


@dataclass
class MetricsLog:
    window: int = 100
    rows: list[EpisodeRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def record(self, steps: int, success: bool, ret: float, wall_ms: float = 0.0) -> EpisodeRecord:
        """Append the next episode, computing its trailing-window success rate."""
        i = len(self.rows)
        lo = max(0, i - self.window + 1)
        hits = sum(r.success for r in self.rows[lo:]) + int(success)
        row = EpisodeRecord(i, steps, int(success), float(ret), hits / (i - lo + 1), float(wall_ms))
        self.rows.append(row)
        return row

    def append(self, row: EpisodeRecord) -> None:
        if row.episode != len(self.rows):
            raise ValueError(f"episode {row.episode} breaks contiguity (expected {len(self.rows)})")
        self.rows.append(row)

    @property
    def successes(self) -> np.ndarray:
        return np.array([r.success for r in self.rows], dtype=np.float64)

    @property
    def success_rate(self) -> np.ndarray:
        return np.array([r.success_rate for r in self.rows], dtype=np.float64)


def windowed_success(successes: Sequence[float] | MetricsLog, window: int = 100) -> np.ndarray:
    """Element i is the mean success over episodes max(0, i - window + 1) .. i."""
    if window < 1:
        raise ValueError("window must be >= 1")
    s = successes.successes if isinstance(successes, MetricsLog) else np.asarray(successes, dtype=np.float64)
    if s.size == 0:
        return np.zeros(0)
    csum = np.concatenate([[0.0], np.cumsum(s)])
    i = np.arange(len(s))
    lo = np.maximum(0, i - window + 1)
    return (csum[i + 1] - csum[lo]) / (i + 1 - lo)


def episodes_to_reach(rates: Sequence[float], level: float) -> int | None:
    """First episode index whose windowed rate is >= level, or None."""
    hits = np.nonzero(np.asarray(rates) >= level)[0]
    return int(hits[0]) if hits.size else None


def write_csv(log: MetricsLog, path: str | Path) -> None:
    if not log.rows:
        raise ValueError("refusing to write an empty metrics log")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in log.rows:
            w.writerow([r.episode, r.steps, r.success, repr(r.ret), repr(r.success_rate), repr(r.wall_ms)])


def read_csv(path: str | Path, window: int = 100) -> MetricsLog:
    log = MetricsLog(window=window)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            log.append(EpisodeRecord(int(row[0]), int(row[1]), int(row[2]), float(row[3]),
                                     float(row[4]), float(row[5])))
    return log


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def render_svg(series: dict[str, Sequence[float]], title: str = "Success rate by episodes",
               width: int = 640, height: int = 400) -> str:
    """Self-contained line chart: one polyline per series, episodes on x, success rate in [0, 1] on y."""
    if not series:
        raise ValueError("need at least one series")
    left, right, top, bottom = 60, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom
    n_max = max(max(len(v) for v in series.values()), 2)

    def sx(i: float) -> float:
        return left + pw * i / (n_max - 1)

    def sy(r: float) -> float:
        return top + ph * (1.0 - r)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for k in range(6):
        r = k / 5
        out.append(f'<text x="{left - 6}" y="{sy(r) + 4:.2f}" text-anchor="end" font-size="11">{r:.1f}</text>')
        out.append(f'<line x1="{left}" y1="{sy(r):.2f}" x2="{left + pw}" y2="{sy(r):.2f}" stroke="#ddd"/>')
    for k in range(5):
        i = (n_max - 1) * k / 4
        out.append(f'<text x="{sx(i):.2f}" y="{top + ph + 16}" text-anchor="middle" font-size="11">{int(round(i))}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle" font-size="13">episodes</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" font-size="13" '
               f'transform="rotate(-90 16 {top + ph / 2})">success rate</text>')
    for n, (name, values) in enumerate(series.items()):
        color = _PALETTE[n % len(_PALETTE)]
        pts = " ".join(f"{sx(i):.2f},{sy(float(v)):.2f}" for i, v in enumerate(values))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}">'
                   f'<title>{escape(name)}</title></polyline>')
        out.append(f'<text x="{left + 10}" y="{top + 14 + 14 * n}" font-size="11" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(series: dict[str, Sequence[float]], path: str | Path, **kwargs) -> None:
    Path(path).write_text(render_svg(series, **kwargs))
