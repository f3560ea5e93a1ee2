"""Hand-drawn sketch observation model for CSG2D scenes.

The scene's boolean geometry is built in vector form (circles as buffered
points, quads as rotated boxes) so its boundary comes out as clean paths.
Each boundary ring is redrawn the way a person would: corner points get
Gaussian jitter, straight edges pick up extra jittered points near their
50% and 75% marks, curved runs are resampled at uniform intervals with
jitter, and a Catmull-Rom spline is fit through the result.  Rings without
corners (circles) start and end at a random phase with a small gap so the
pen visibly lifts off.  Stroke thickness and darkness are randomized.

Same program + same seed => identical canvas; different seeds differ.
"""

from __future__ import annotations

import math

import numpy as np
from PIL import Image, ImageDraw
from shapely.affinity import rotate as shapely_rotate
from shapely.geometry import Point, Polygon, box

from .grammar import Node
from .render import SCALE, SIZE, angle_value, hex_value, interior

_CORNER_DEG = 25.0
_RESAMPLE_PX = 9.0


def csg_geometry(tree: Node):
    head = tree.head
    sub = interior(tree)
    if head == "binop":
        op = sub[0].children[0].token
        left, right = csg_geometry(sub[1]), csg_geometry(sub[2])
        return left.union(right) if op == "+" else left.difference(right)
    if head == "circle":
        r, x, y = (hex_value(n) for n in sub)
        if r == 0:
            return Polygon()
        return Point(x * SCALE, y * SCALE).buffer(r * SCALE, quad_segs=24)
    if head == "quad":
        x, y, w, h = (hex_value(n) for n in sub[:4])
        theta = angle_value(sub[4])
        if w == 0 or h == 0:
            return Polygon()
        cx, cy = x * SCALE, y * SCALE
        hw, hh = w * SCALE / 2.0, h * SCALE / 2.0
        quad = box(cx - hw, cy - hh, cx + hw, cy + hh)
        return shapely_rotate(quad, theta, origin=(cx, cy))
    raise ValueError(f"not a CSG2D node: {head!r}")


def _rings(geometry):
    if geometry.is_empty:
        return
    geoms = geometry.geoms if hasattr(geometry, "geoms") else [geometry]
    for g in geoms:
        if not isinstance(g, Polygon) or g.is_empty:
            continue
        yield np.asarray(g.exterior.coords)[:-1]
        for hole in g.interiors:
            yield np.asarray(hole.coords)[:-1]


def _corner_indices(ring: np.ndarray) -> list[int]:
    n = len(ring)
    corners = []
    for i in range(n):
        prev_v = ring[i] - ring[i - 1]
        next_v = ring[(i + 1) % n] - ring[i]
        na, nb = np.linalg.norm(prev_v), np.linalg.norm(next_v)
        if na < 1e-9 or nb < 1e-9:
            continue
        cosang = np.clip(np.dot(prev_v, next_v) / (na * nb), -1.0, 1.0)
        if math.degrees(math.acos(cosang)) > _CORNER_DEG:
            corners.append(i)
    return corners


def _arclength_resample(points: np.ndarray, spacing: float) -> np.ndarray:
    deltas = np.diff(points, axis=0)
    seglen = np.hypot(deltas[:, 0], deltas[:, 1])
    total = float(seglen.sum())
    if total < 1e-9:
        return points[:1]
    n = max(int(total / spacing), 2)
    targets = np.linspace(0.0, total, n + 1)
    cumulative = np.concatenate([[0.0], np.cumsum(seglen)])
    out = []
    for t in targets:
        i = int(np.searchsorted(cumulative, t, side="right")) - 1
        i = min(i, len(seglen) - 1)
        frac = (t - cumulative[i]) / seglen[i] if seglen[i] > 1e-12 else 0.0
        out.append(points[i] + frac * deltas[i])
    return np.asarray(out)


def _catmull_rom(points: np.ndarray, closed: bool, samples_per_seg: int = 8) -> np.ndarray:
    n = len(points)
    if n < 2:
        return points
    if closed:
        idx = lambda i: points[i % n]
        segs = n
    else:
        padded = np.vstack([points[0], points, points[-1]])
        idx = lambda i: padded[i + 1]
        segs = n - 1
    ts = np.linspace(0.0, 1.0, samples_per_seg, endpoint=False)
    out = []
    for i in range(segs):
        p0, p1, p2, p3 = idx(i - 1), idx(i), idx(i + 1), idx(i + 2)
        for t in ts:
            t2, t3 = t * t, t * t * t
            q = 0.5 * (
                2.0 * p1
                + (-p0 + p2) * t
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
                + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3
            )
            out.append(q)
    if not closed:
        out.append(points[-1])
    else:
        out.append(out[0])
    return np.asarray(out)


def _sketch_ring(ring: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    corners = _corner_indices(ring)
    strokes = []
    if not corners:
        # Closed smooth ring: redraw as one stroke with a pen-lift gap.
        phase = rng.integers(0, len(ring))
        rolled = np.roll(ring, -int(phase), axis=0)
        gap = max(1, int(len(rolled) * rng.uniform(0.02, 0.08)))
        open_run = np.vstack([rolled, rolled[:1]])[: len(rolled) + 1 - gap]
        pts = _arclength_resample(open_run, _RESAMPLE_PX)
        pts = pts + rng.normal(0.0, 0.8, pts.shape)
        strokes.append(_catmull_rom(pts, closed=False))
        return strokes
    # Split the ring into edges between consecutive corners; jitter each
    # corner once so adjacent edges keep meeting.
    n = len(ring)
    jittered_corners = {c: ring[c] + rng.normal(0.0, 1.3, 2) for c in corners}
    for k in range(len(corners)):
        a, b = corners[k], corners[(k + 1) % len(corners)]
        run = [a]
        i = a
        while i != b:
            i = (i + 1) % n
            run.append(i)
        pts = ring[run].astype(float)
        pts[0] = jittered_corners[a]
        pts[-1] = jittered_corners[b]
        if len(pts) <= 2:
            # Straight line: extra control points near 50% and 75%.
            start, end = pts[0], pts[-1]
            mids = []
            for frac in (0.5, 0.75):
                f = frac + rng.uniform(-0.05, 0.05)
                mids.append(start + f * (end - start) + rng.normal(0.0, 1.0, 2))
            pts = np.vstack([start, mids[0], mids[1], end])
        else:
            pts = _arclength_resample(pts, _RESAMPLE_PX)
            pts = pts + rng.normal(0.0, 0.7, pts.shape)
            pts[0] = jittered_corners[a]
            pts[-1] = jittered_corners[b]
        strokes.append(_catmull_rom(pts, closed=False))
    return strokes


def sketch_render(tree: Node, seed: int) -> np.ndarray:
    """Grayscale hand-drawn rendering of a CSG2D program's boundary."""
    rng = np.random.default_rng(seed)
    img = Image.new("L", (SIZE, SIZE), 255)
    draw = ImageDraw.Draw(img)
    geometry = csg_geometry(tree)
    for ring in _rings(geometry):
        for stroke in _sketch_ring(ring, rng):
            width = int(rng.integers(1, 3))
            shade = int(rng.integers(10, 70))
            xy = [(float(px), float(py)) for px, py in stroke]
            if len(xy) >= 2:
                draw.line(xy, fill=shade, width=width, joint="curve")
    return np.asarray(img, dtype=np.float32) / 255.0
