"""Rasterization of programs to 128x128 canvases, plus image metrics.

CSG2D renders to a binary single-channel occupancy canvas: `+` is pixelwise
max, `-` is A*(1-B), circles and rotated rectangles are evaluated per pixel
from their defining inequalities (hard edges, no antialiasing).  TinySVG
lays out sized boxes bottom-up: Arrange places two boxes along an axis
separated by a gap and centered on the cross axis, Move offsets a compound,
and the finished scene is centered on a white canvas with painter's-order
compositing (left/first argument painted first).

Grammar units map to pixels with a factor of 8 (16 units span 128 px).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .grammar import Leaf, Node

SIZE = 128
SCALE = 8

PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 0.5, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "purple": (0.5, 0.0, 0.5),
    "orange": (1.0, 0.65, 0.0),
    "black": (0.0, 0.0, 0.0),
    "white": (1.0, 1.0, 1.0),
}

_XX, _YY = np.meshgrid(np.arange(SIZE), np.arange(SIZE))


class RenderError(Exception):
    pass


def interior(node: Node) -> list[Node]:
    """Interior children in order (skips literal tokens)."""
    return [c for c in node.children if isinstance(c, Node)]


def token_of(node: Node) -> str:
    return node.children[0].token


def hex_value(node: Node) -> int:
    return int(token_of(node), 16)


def angle_value(node: Node) -> int:
    return int(token_of(node).split("_", 1)[1])


# -- CSG2D ---------------------------------------------------------------------------


def csg_mask(tree: Node) -> np.ndarray:
    head = tree.head
    sub = interior(tree)
    if head == "binop":
        op = token_of(sub[0])
        left, right = csg_mask(sub[1]), csg_mask(sub[2])
        return (left | right) if op == "+" else (left & ~right)
    if head == "circle":
        r, x, y = (hex_value(n) for n in sub)
        if r == 0:
            return np.zeros((SIZE, SIZE), bool)
        radius, cx, cy = r * SCALE, x * SCALE, y * SCALE
        return (_XX - cx) ** 2 + (_YY - cy) ** 2 <= radius * radius
    if head == "quad":
        x, y, w, h = (hex_value(n) for n in sub[:4])
        theta = angle_value(sub[4])
        if w == 0 or h == 0:
            return np.zeros((SIZE, SIZE), bool)
        cx, cy = x * SCALE, y * SCALE
        hw, hh = w * SCALE / 2.0, h * SCALE / 2.0
        rad = math.radians(theta)
        c, s = math.cos(rad), math.sin(rad)
        dx, dy = _XX - cx, _YY - cy
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (np.abs(u) <= hw) & (np.abs(v) <= hh)
    raise RenderError(f"not a CSG2D node: {head!r}")


def render_csg2d(tree: Node) -> np.ndarray:
    return csg_mask(tree).astype(np.float32)


# -- TinySVG / Rainbow -----------------------------------------------------------------


@dataclass
class _Paint:
    x: int
    y: int
    mask: np.ndarray
    color: tuple[float, float, float]


@dataclass
class _Box:
    w: int
    h: int
    paints: list[_Paint]


def _shifted(paints: list[_Paint], dx: int, dy: int) -> list[_Paint]:
    return [_Paint(p.x + dx, p.y + dy, p.mask, p.color) for p in paints]


def _primitive_box(head: str, w: int, h: int, fill: str, stroke: str, bw: int) -> _Box:
    if w == 0 or h == 0:
        return _Box(w, h, [])
    yy, xx = np.mgrid[0:h, 0:w]
    if head == "rect":
        inside = np.ones((h, w), bool)
        band = (xx < bw) | (xx >= w - bw) | (yy < bw) | (yy >= h - bw)
    else:
        ax, ay = w / 2.0, h / 2.0
        nx = (xx + 0.5 - ax) / ax
        ny = (yy + 0.5 - ay) / ay
        inside = nx * nx + ny * ny <= 1.0
        ix, iy = ax - bw, ay - bw
        if ix > 0 and iy > 0:
            inner = ((xx + 0.5 - ax) / ix) ** 2 + ((yy + 0.5 - ay) / iy) ** 2 <= 1.0
        else:
            inner = np.zeros((h, w), bool)
        band = inside & ~inner
    paints = []
    if fill != "none":
        paints.append(_Paint(0, 0, inside, PALETTE[fill]))
    if stroke != "none" and bw > 0:
        paints.append(_Paint(0, 0, band, PALETTE[stroke]))
    return _Box(w, h, paints)


def _layout(tree: Node) -> _Box:
    head = tree.head
    sub = interior(tree)
    if head in ("rect", "ellipse"):
        w, h = hex_value(sub[0]) * SCALE, hex_value(sub[1]) * SCALE
        return _primitive_box(head, w, h, token_of(sub[2]), token_of(sub[3]), hex_value(sub[4]))
    if head == "arrange":
        direction = token_of(sub[0])
        a, b = _layout(sub[1]), _layout(sub[2])
        gap = hex_value(sub[3]) * SCALE
        if direction == "h":
            w, h = a.w + gap + b.w, max(a.h, b.h)
            paints = _shifted(a.paints, 0, (h - a.h) // 2) + _shifted(
                b.paints, a.w + gap, (h - b.h) // 2
            )
        else:
            w, h = max(a.w, b.w), a.h + gap + b.h
            paints = _shifted(a.paints, (w - a.w) // 2, 0) + _shifted(
                b.paints, (w - b.w) // 2, a.h + gap
            )
        return _Box(w, h, paints)
    if head == "move":
        inner_box = _layout(sub[0])
        dx = hex_value(sub[2]) * SCALE * (1 if token_of(sub[1]) == "+" else -1)
        dy = hex_value(sub[4]) * SCALE * (1 if token_of(sub[3]) == "+" else -1)
        return _Box(inner_box.w, inner_box.h, _shifted(inner_box.paints, dx, dy))
    raise RenderError(f"not a TinySVG node: {head!r}")


def render_tinysvg(tree: Node) -> np.ndarray:
    box = _layout(tree)
    canvas = np.ones((SIZE, SIZE, 3), np.float32)
    ox, oy = (SIZE - box.w) // 2, (SIZE - box.h) // 2
    for p in box.paints:
        _blit(canvas, ox + p.x, oy + p.y, p.mask, p.color)
    return canvas


def _blit(canvas: np.ndarray, x: int, y: int, mask: np.ndarray, color) -> None:
    h, w = mask.shape
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, SIZE), min(y + h, SIZE)
    if x0 >= x1 or y0 >= y1:
        return
    sub = mask[y0 - y : y1 - y, x0 - x : x1 - x]
    canvas[y0:y1, x0:x1][sub] = color


# -- metrics ---------------------------------------------------------------------------


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary single-channel canvases.

    Both empty counts as 1.0 (identical programs are always solved).
    """
    if a.ndim != 2 or b.ndim != 2:
        raise RenderError("iou needs binary single-channel canvases")
    if a.shape != b.shape:
        raise RenderError(f"canvas shape mismatch: {a.shape} vs {b.shape}")
    am, bm = a > 0.5, b > 0.5
    union = int(np.logical_or(am, bm).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(am, bm).sum()) / union


def pixel_match_fraction(a: np.ndarray, b: np.ndarray, tol: float = 0.005) -> float:
    """Fraction of pixels whose max-channel absolute difference is <= tol."""
    if a.shape != b.shape:
        raise RenderError(f"canvas shape mismatch: {a.shape} vs {b.shape}")
    diff = np.abs(a.astype(np.float64) - b.astype(np.float64))
    if diff.ndim == 3:
        diff = diff.max(axis=2)
    return float((diff <= tol).mean())


# -- PNG round trip ----------------------------------------------------------------------


def to_uint8(canvas: np.ndarray) -> np.ndarray:
    return np.round(np.clip(canvas, 0.0, 1.0) * 255.0).astype(np.uint8)


def png_bytes(canvas: np.ndarray) -> bytes:
    arr = to_uint8(canvas)
    img = Image.fromarray(arr, mode="L" if arr.ndim == 2 else "RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def save_png(canvas: np.ndarray, path) -> None:
    with open(path, "wb") as f:
        f.write(png_bytes(canvas))


def load_png(source) -> np.ndarray:
    if isinstance(source, bytes):
        img = Image.open(io.BytesIO(source))
    else:
        img = Image.open(source)
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.float32) / 255.0
