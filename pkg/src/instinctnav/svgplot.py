"""Static SVG figures: trajectory plots, instinct action fields, fitness curves.

SVGs are assembled by hand with fixed number formatting and carry no
timestamps or generator metadata, so identical inputs produce byte-identical
files.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .agent import InstinctParams, PolicyParams
from .envsim import WorldConfig, observation_at

COLOR_HAZARD = "#f2b8b5"
COLOR_HAZARD_EDGE = "#c0392b"
COLOR_GOAL = "#1f77b4"
COLOR_EXPLORE = "#2a9d3c"
COLOR_DETERMINISTIC = "#7b2d8b"
COLOR_VIOLATION = "#ff8800"
COLOR_ARROW = "#333333"
COLOR_ARROW_POLICY = "#b0b0c8"

_CURVE_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


class SvgCanvas:
    """Minimal SVG builder mapping world coordinates to pixel space (y up)."""

    def __init__(self, world_lo: float, world_hi: float, size: int = 640, margin: int = 40):
        self.size = size
        self.margin = margin
        self.lo = world_lo
        self.hi = world_hi
        self._elems: list[str] = []

    def px(self, x: float) -> float:
        return self.margin + (x - self.lo) / (self.hi - self.lo) * (self.size - 2 * self.margin)

    def py(self, y: float) -> float:
        return self.size - self.margin - (y - self.lo) / (self.hi - self.lo) * (
            self.size - 2 * self.margin
        )

    def add(self, element: str):
        self._elems.append(element)

    def rect(self, xmin, ymin, xmax, ymax, fill, stroke=None, opacity=None):
        x, y = self.px(xmin), self.py(ymax)
        w, h = self.px(xmax) - self.px(xmin), self.py(ymin) - self.py(ymax)
        attrs = f'x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" height="{_fmt(h)}" fill="{fill}"'
        if stroke:
            attrs += f' stroke="{stroke}"'
        if opacity is not None:
            attrs += f' fill-opacity="{_fmt(opacity)}"'
        self.add(f"<rect {attrs}/>")

    def circle(self, x, y, r_px, fill, stroke=None):
        attrs = f'cx="{_fmt(self.px(x))}" cy="{_fmt(self.py(y))}" r="{_fmt(r_px)}" fill="{fill}"'
        if stroke:
            attrs += f' stroke="{stroke}"'
        self.add(f"<circle {attrs}/>")

    def polyline(self, points, stroke, width=1.5, opacity=None, cls=None):
        pts = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}" for x, y in points)
        attrs = f'points="{pts}" fill="none" stroke="{stroke}" stroke-width="{_fmt(width)}"'
        if opacity is not None:
            attrs += f' stroke-opacity="{_fmt(opacity)}"'
        if cls:
            attrs += f' class="{cls}"'
        self.add(f"<polyline {attrs}/>")

    def line(self, x1, y1, x2, y2, stroke, width=1.5, opacity=None, cls=None):
        attrs = (
            f'x1="{_fmt(self.px(x1))}" y1="{_fmt(self.py(y1))}" '
            f'x2="{_fmt(self.px(x2))}" y2="{_fmt(self.py(y2))}" '
            f'stroke="{stroke}" stroke-width="{_fmt(width)}"'
        )
        if opacity is not None:
            attrs += f' stroke-opacity="{_fmt(opacity)}"'
        if cls:
            attrs += f' class="{cls}"'
        self.add(f"<line {attrs}/>")

    def arrow(self, x, y, dx, dy, scale, stroke, width=1.2, cls=None):
        """Arrow from (x, y) along (dx, dy) * scale in world units."""
        x2, y2 = x + dx * scale, y + dy * scale
        self.line(x, y, x2, y2, stroke, width, cls=cls)
        norm = math.hypot(dx, dy)
        if norm > 0:
            ux, uy = dx / norm, dy / norm
            head = 0.35 * scale * norm
            left = (x2 - head * (ux - 0.5 * uy), y2 - head * (uy + 0.5 * ux))
            right = (x2 - head * (ux + 0.5 * uy), y2 - head * (uy - 0.5 * ux))
            self.polyline([left, (x2, y2), right], stroke, width, cls=cls)

    def text(self, x_px, y_px, content, size=13, fill="#222222"):
        self.add(
            f'<text x="{_fmt(x_px)}" y="{_fmt(y_px)}" font-family="sans-serif" '
            f'font-size="{size}" fill="{fill}">{content}</text>'
        )

    def to_string(self) -> str:
        header = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.size}" '
            f'height="{self.size}" viewBox="0 0 {self.size} {self.size}">'
        )
        return "\n".join([header, *self._elems, "</svg>"]) + "\n"

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_string())


def _draw_world(canvas: SvgCanvas, world: WorldConfig):
    canvas.rect(world.position_bounds[0], world.position_bounds[0],
                world.position_bounds[1], world.position_bounds[1],
                fill="#ffffff", stroke="#888888")
    for xmin, ymin, xmax, ymax in world.hazard_zones:
        canvas.rect(xmin, ymin, xmax, ymax, fill=COLOR_HAZARD, stroke=COLOR_HAZARD_EDGE)
    for gx, gy in world.goals:
        canvas.circle(gx, gy, 5.0, fill=COLOR_GOAL)


def emit_trajectory_plot(rows: list[dict], world: WorldConfig, out_path) -> None:
    """Trajectory figure from parsed trajectory-log rows.

    Episodes with non-negative ids are drawn as exploration paths, negative
    ids as deterministic evaluation paths; segments that end inside a hazard
    are overdrawn in the violation color. Every episode starts at the origin.
    """
    lo, hi = world.position_bounds
    canvas = SvgCanvas(lo, hi)
    _draw_world(canvas, world)

    episodes: dict[int, list[dict]] = {}
    for row in rows:
        episodes.setdefault(row["episode_id"], []).append(row)
    for ep_id in sorted(episodes):
        ep = sorted(episodes[ep_id], key=lambda r: r["step"])
        pts = [(0.0, 0.0)] + [(r["x"], r["y"]) for r in ep]
        deterministic = ep_id < 0
        color = COLOR_DETERMINISTIC if deterministic else COLOR_EXPLORE
        width = 2.5 if deterministic else 1.0
        opacity = None if deterministic else 0.45
        canvas.polyline(pts, color, width, opacity, cls="det" if deterministic else "explore")
        for i, r in enumerate(ep):
            if r["violation"]:
                canvas.line(
                    pts[i][0], pts[i][1], pts[i + 1][0], pts[i + 1][1],
                    COLOR_VIOLATION, width + 0.8, cls="violation",
                )
    canvas.text(10, 20, f"episodes: {len(episodes)}")
    canvas.write(out_path)


def emit_instinct_field_map(
    instinct: InstinctParams,
    world: WorldConfig,
    grid_resolution: int,
    out_path,
    policy: PolicyParams | None = None,
    arrow_scale: float = 2.0,
) -> None:
    """Arrow field of the suppressed instinct action (1 - s) * a_i on a grid.

    With a policy given, the suppressed policy mean s * a_mu is underlaid in
    gray for contrast. Rangefinder inputs are computed per grid position.
    """
    lo, hi = world.position_bounds
    canvas = SvgCanvas(lo, hi)
    _draw_world(canvas, world)
    xs = np.linspace(lo, hi, grid_resolution + 2)[1:-1]
    for gy in xs:
        for gx in xs:
            obs = observation_at(np.array([gx, gy]), world)
            s, a_i = instinct.forward(obs)
            vec = (1.0 - s) * a_i
            if policy is not None:
                mu = policy.actor.forward(obs)
                pvec = s * mu
                if np.hypot(pvec[0], pvec[1]) > 1e-12:
                    canvas.arrow(gx, gy, pvec[0], pvec[1], arrow_scale, COLOR_ARROW_POLICY, 1.0,
                                 cls="policy")
            if np.hypot(vec[0], vec[1]) > 1e-12:
                canvas.arrow(gx, gy, vec[0], vec[1], arrow_scale, COLOR_ARROW, cls="instinct")
            else:
                canvas.circle(gx, gy, 1.0, fill=COLOR_ARROW)
    canvas.write(out_path)


def emit_fitness_curves(series, out_path, size: int = 640) -> None:
    """Mean +- sd fitness curves; one color per (world, method) series."""
    if not series:
        raise ValueError("no curve series to plot")
    all_means = np.concatenate([np.asarray(s.mean_best) for s in series])
    all_sds = np.concatenate([np.asarray(s.sd_best) for s in series])
    y_lo = float((all_means - all_sds).min())
    y_hi = float((all_means + all_sds).max())
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    max_gen = max(max(s.generations) for s in series)
    if max_gen == 0:
        max_gen = 1

    margin = 50
    canvas = SvgCanvas(0.0, 1.0, size=size, margin=margin)

    def sx(gen):
        return margin + gen / max_gen * (size - 2 * margin)

    def sy(v):
        return size - margin - (v - y_lo) / (y_hi - y_lo) * (size - 2 * margin)

    canvas.add(
        f'<rect x="{margin}" y="{margin}" width="{size - 2 * margin}" '
        f'height="{size - 2 * margin}" fill="#ffffff" stroke="#888888"/>'
    )
    for idx, s in enumerate(series):
        color = _CURVE_COLORS[idx % len(_CURVE_COLORS)]
        mean = np.asarray(s.mean_best)
        sd = np.asarray(s.sd_best)
        upper = [(sx(g), sy(v)) for g, v in zip(s.generations, mean + sd)]
        lower = [(sx(g), sy(v)) for g, v in reversed(list(zip(s.generations, mean - sd)))]
        band = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in upper + lower)
        canvas.add(f'<polygon points="{band}" fill="{color}" fill-opacity="0.15"/>')
        pts = " ".join(f"{_fmt(sx(g))},{_fmt(sy(v))}" for g, v in zip(s.generations, mean))
        canvas.add(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        canvas.text(margin + 8, margin + 18 + 16 * idx, f"{s.world_name}/{s.method}", fill=color)
    canvas.text(size / 2 - 40, size - 12, "generation")
    canvas.write(out_path)
