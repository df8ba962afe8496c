"""Software rasteriser, tiling layout and PNG / SVG / OBJ export.

Pixel centres are point-sampled (no antialiasing).  Image rows run top to
bottom and texture rows likewise, so texel ``(0, 0)`` is the top-left of the
texture and is sampled by the top-left of the tile's UV box.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import geometry as geo
from .geometry import Isometry2
from .mesh import TriMesh
from .wallpaper import tiling_generators

DEFAULT_BACKGROUND = 1.0
SCHEMES = ("by-orientation", "random-palette", "uniform")

# distinguishable tints for the by-orientation scheme
PALETTE = (
    (0.894, 0.102, 0.110), (0.216, 0.494, 0.722), (0.302, 0.686, 0.290), (0.596, 0.306, 0.639),
    (1.000, 0.498, 0.000), (0.651, 0.337, 0.157), (0.969, 0.506, 0.749), (0.600, 0.600, 0.600),
    (0.651, 0.808, 0.890), (0.698, 0.875, 0.541), (0.984, 0.604, 0.600), (0.992, 0.749, 0.435),
)


class RenderError(RuntimeError):
    pass


@dataclass
class Texture:
    """``H x W x C`` texel grid with values in [0, 1] (C = 1 grey or 3 RGB)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or d.shape[2] not in (1, 3) or d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError(f"texture must be H x W x (1|3), got {np.shape(self.data)}")
        self.data = np.clip(d, 0.0, 1.0)

    @classmethod
    def constant(cls, width: int, height: int, value: float = 0.5, channels: int = 1) -> "Texture":
        return cls(np.full((height, width, channels), float(value)))

    @classmethod
    def load(cls, path, rgb: bool = False) -> "Texture":
        img = Image.open(path).convert("RGB" if rgb else "L")
        return cls(np.asarray(img, dtype=float) / 255.0)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def copy(self) -> "Texture":
        return Texture(self.data.copy())


@dataclass
class TexelSampling:
    """Bilinear taps of every covered pixel: 4 flat texel indices and weights."""

    pixels: np.ndarray     # flat pixel indices (row-major)
    taps: np.ndarray       # (k, 4) flat texel indices into H*W
    weights: np.ndarray    # (k, 4)


@dataclass
class RasterImage:
    width: int
    height: int
    channels: int
    values: np.ndarray                 # (height, width, channels)
    window: np.ndarray                 # [[xmin, ymin], [xmax, ymax]] in world units
    covered: np.ndarray = None         # (height, width) bool
    sampling: TexelSampling | None = field(default=None, repr=False)

    @property
    def world_to_pixel(self) -> np.ndarray:
        """3x3 affine map from world (x, y) to continuous pixel (column, row)."""
        (x0, y0), (x1, y1) = self.window
        sx, sy = self.width / (x1 - x0), self.height / (y1 - y0)
        return np.array([[sx, 0.0, -sx * x0], [0.0, -sy, sy * y1], [0.0, 0.0, 1.0]])

    def background_fraction(self) -> float:
        return float(1.0 - self.covered.mean())


@dataclass
class TilingLayout:
    copies: list[Isometry2]
    colors: list[tuple[float, float, float]]
    window: np.ndarray
    scheme: str = "uniform"

    def __len__(self) -> int:
        return len(self.copies)


def _resolution(resolution) -> tuple[int, int]:
    if np.isscalar(resolution):
        w = h = int(resolution)
    else:
        w, h = (int(r) for r in resolution)
    return w, h


def _positions(tile) -> np.ndarray:
    return np.asarray(tile.positions if hasattr(tile, "positions") else tile, dtype=float)


def _to_pixels(points: np.ndarray, window: np.ndarray, width: int, height: int) -> np.ndarray:
    (x0, y0), (x1, y1) = window
    px = (points[:, 0] - x0) * (width / (x1 - x0))
    py = (y1 - points[:, 1]) * (height / (y1 - y0))
    return np.stack([px, py], axis=1)


def rasterize_triangles(px: np.ndarray, triangles: np.ndarray, width: int, height: int):
    """Point-sample pixel centres against triangles given in pixel coordinates.

    Returns per-pixel triangle id (``-1`` when uncovered) and barycentric
    coordinates.  Points on a shared edge go to the lowest triangle id.
    """
    tri_id = np.full(height * width, -1, dtype=np.int64)
    bary = np.zeros((height * width, 3))
    a, b, c = px[triangles[:, 0]], px[triangles[:, 1]], px[triangles[:, 2]]
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    keep = np.abs(area) > 1e-300
    lo = np.minimum(np.minimum(a, b), c)
    hi = np.maximum(np.maximum(a, b), c)
    c0 = np.clip(np.ceil(lo[:, 0] - 0.5), 0, width).astype(np.int64)
    c1 = np.clip(np.floor(hi[:, 0] - 0.5), -1, width - 1).astype(np.int64)
    r0 = np.clip(np.ceil(lo[:, 1] - 0.5), 0, height).astype(np.int64)
    r1 = np.clip(np.floor(hi[:, 1] - 0.5), -1, height - 1).astype(np.int64)
    ncol = np.maximum(c1 - c0 + 1, 0)
    nrow = np.maximum(r1 - r0 + 1, 0)
    count = np.where(keep, ncol * nrow, 0)
    total = int(count.sum())
    if total == 0:
        return tri_id.reshape(height, width), bary.reshape(height, width, 3)
    t = np.repeat(np.arange(len(triangles)), count)
    start = np.repeat(np.cumsum(count) - count, count)
    local = np.arange(total) - start
    col = c0[t] + local % np.maximum(ncol[t], 1)
    row = r0[t] + local // np.maximum(ncol[t], 1)
    x, y = col + 0.5, row + 0.5
    l1 = ((c[t, 0] - b[t, 0]) * (y - b[t, 1]) - (c[t, 1] - b[t, 1]) * (x - b[t, 0])) / area[t]
    l2 = ((a[t, 0] - c[t, 0]) * (y - c[t, 1]) - (a[t, 1] - c[t, 1]) * (x - c[t, 0])) / area[t]
    l3 = 1.0 - l1 - l2
    inside = (l1 >= 0) & (l2 >= 0) & (l3 >= 0)
    pix = (row * width + col)[inside]
    t_in = t[inside]
    # lowest triangle id wins: write in descending order so the last write is the lowest
    order = np.argsort(-t_in, kind="stable")
    pix, t_in = pix[order], t_in[order]
    tri_id[pix] = t_in
    bary[pix] = np.stack([l1, l2, l3], axis=1)[inside][order]
    return tri_id.reshape(height, width), bary.reshape(height, width, 3)


def normalized_uvs(mesh: TriMesh) -> np.ndarray:
    """Mesh UVs scaled into [0, 1] by their bounding box (aspect ratio kept)."""
    uv = mesh.uvs
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    return (uv - lo) / float((hi - lo).max())


def bilinear_taps(uv: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Texel indices and weights for bilinear lookup; ``v = 1`` is the top texel row."""
    taps, ax, ay = _bilinear(uv, width, height)
    wts = np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay], axis=1)
    return taps, wts


def _bilinear(uv: np.ndarray, width: int, height: int):
    fx = np.clip(uv[:, 0], 0.0, 1.0) * width - 0.5
    fy = (1.0 - np.clip(uv[:, 1], 0.0, 1.0)) * height - 0.5
    x0, y0 = np.floor(fx), np.floor(fy)
    ax, ay = fx - x0, fy - y0
    x0i = np.clip(x0.astype(np.int64), 0, width - 1)
    x1i = np.clip(x0.astype(np.int64) + 1, 0, width - 1)
    y0i = np.clip(y0.astype(np.int64), 0, height - 1)
    y1i = np.clip(y0.astype(np.int64) + 1, 0, height - 1)
    taps = np.stack([y0i * width + x0i, y0i * width + x1i, y1i * width + x0i, y1i * width + x1i], axis=1)
    return taps, ax, ay


def _shade(tri_id, bary, triangles, uv, texture: Texture):
    covered = tri_id >= 0
    flat = np.nonzero(covered.reshape(-1))[0]
    t = tri_id.reshape(-1)[flat]
    l = bary.reshape(-1, 3)[flat]
    p_uv = (l[:, 0:1] * uv[triangles[t, 0]] + l[:, 1:2] * uv[triangles[t, 1]]
            + l[:, 2:3] * uv[triangles[t, 2]])
    taps, ax, ay = _bilinear(p_uv, texture.width, texture.height)
    wts = np.stack([(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay], axis=1)
    t = texture.data.reshape(-1, texture.channels)[taps]
    ax, ay = ax[:, None], ay[:, None]
    # nested lerps reproduce a constant texture exactly
    top = t[:, 0] + ax * (t[:, 1] - t[:, 0])
    bottom = t[:, 2] + ax * (t[:, 3] - t[:, 2])
    vals = top + ay * (bottom - top)
    return covered, flat, vals, TexelSampling(flat, taps, wts)


def default_window(points: np.ndarray, pad: float = 0.0) -> np.ndarray:
    lo, hi = points.min(axis=0), points.max(axis=0)
    d = pad * (hi - lo).max()
    return np.array([lo - d, hi + d])


def rasterize_tile(tile, mesh: TriMesh, texture: Texture, resolution=256, window=None,
                   background: float = DEFAULT_BACKGROUND) -> RasterImage:
    """Render one tile: pixel-centre triangle lookup, barycentric UV, bilinear texture."""
    width, height = _resolution(resolution)
    if width < 16 or height < 16:
        raise RenderError("resolution must be at least 16 pixels per side")
    pos = _positions(tile)
    if not np.all(np.isfinite(pos)):
        raise RenderError("tile positions are not finite")
    if np.any(geo.triangle_areas(pos, mesh.triangles) <= 0):
        raise RenderError("tile has inverted triangles")
    window = default_window(pos) if window is None else np.asarray(window, dtype=float)
    px = _to_pixels(pos, window, width, height)
    tri_id, bary = rasterize_triangles(px, mesh.triangles, width, height)
    covered, flat, vals, sampling = _shade(tri_id, bary, mesh.triangles, normalized_uvs(mesh), texture)
    out = np.full((height * width, texture.channels), float(background))
    out[flat] = vals
    return RasterImage(width, height, texture.channels, out.reshape(height, width, texture.channels),
                       window, covered, sampling)


def _box_corners(box: np.ndarray) -> np.ndarray:
    (x0, y0), (x1, y1) = box
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def _box_gap(h: Isometry2, corners: np.ndarray, lo: np.ndarray, hi: np.ndarray,
             tol: float = 1e-9) -> tuple[bool, float]:
    """Whether the image box of ``h`` overlaps the window with positive area, and how far it is.

    The distance is ``(euclidean gap, summed per-axis separation)`` so boxes
    merely touching the window still rank by how deep they reach into it.
    """
    c = geo.apply(h, corners)
    sep = np.maximum(lo - c.max(axis=0), c.min(axis=0) - hi)
    return bool(np.all(sep < -tol)), (float(np.linalg.norm(np.maximum(sep, 0.0))), float(sep.sum()))


def enumerate_copies(group: str, tile_box, window, scheme: str = "by-orientation", seed: int = 0,
                     max_depth: int = 64, generators=None, phi: float = 0.0) -> TilingLayout:
    """Group elements whose image of ``tile_box`` overlaps ``window``, with a colour per copy.

    Breadth-first over generators and inverses from the identity; copies are
    deduplicated on (linear, translation) rounded to 1e-9.  Copies outside the
    window are expanded only while they move closer to it, so a window away
    from the identity is still reached.  ``phi`` conjugates the generators by
    the global rotation so layouts match tiles solved with that rotation.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown colour scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")
    gens = tiling_generators(group) if generators is None else list(generators)
    if phi:
        rot = geo.rotation(phi)
        gens = [geo.compose(rot, geo.compose(g, geo.inverse(rot))) for g in gens]
    gens = gens + [geo.inverse(g) for g in gens]
    box = np.asarray(tile_box, dtype=float)
    window = np.asarray(window, dtype=float)
    lo, hi = window[0], window[1]
    corners = _box_corners(box)

    start = geo.IDENTITY
    seen = {start.key()}
    out = [start]   # the identity copy is always part of the layout
    hit, dist = _box_gap(start, corners, lo, hi)
    heap = [(0, 0, hit, dist, start)]
    counter = 1
    while heap:
        depth, _, phit, pdist, h = heapq.heappop(heap)
        for g in gens:
            c = geo.compose(h, g)
            k = c.key()
            if k in seen:
                continue
            chit, cdist = _box_gap(c, corners, lo, hi)
            if not chit and (phit or cdist >= pdist):
                continue
            seen.add(k)
            if depth + 1 > max_depth:
                raise RenderError(f"copy enumeration exceeded depth limit {max_depth}")
            if chit:
                out.append(c)
            heapq.heappush(heap, (depth + 1, counter, chit, cdist, c))
            counter += 1
    return TilingLayout(out, assign_colors(out, scheme, seed), window, scheme)


def tiling_layout(tile, group: str, window, scheme: str = "by-orientation", seed: int = 0,
                  max_depth: int = 64) -> TilingLayout:
    """Layout for a solved tile, using its bounding box and global rotation."""
    pos = _positions(tile)
    phi = float(tile.params.phi) if hasattr(tile, "params") else 0.0
    box = np.array([pos.min(axis=0), pos.max(axis=0)])
    return enumerate_copies(group, box, window, scheme, seed, max_depth, phi=phi)


def assign_colors(copies: list[Isometry2], scheme: str, seed: int = 0) -> list[tuple[float, float, float]]:
    if scheme == "uniform":
        return [(1.0, 1.0, 1.0)] * len(copies)
    if scheme == "random-palette":
        rng = np.random.default_rng(seed)
        return [tuple(float(v) for v in rng.uniform(0.35, 1.0, 3)) for _ in copies]
    if scheme == "by-orientation":
        classes: dict[tuple, int] = {}
        out = []
        for h in copies:
            key = tuple(np.round(h.linear, 6).ravel() + 0.0)
            idx = classes.setdefault(key, len(classes))
            out.append(PALETTE[idx % len(PALETTE)])
        return out
    raise ValueError(f"unknown colour scheme {scheme!r}")


def render_tiling(tile, mesh: TriMesh, texture: Texture, layout: TilingLayout, resolution=512,
                  background: float = DEFAULT_BACKGROUND) -> RasterImage:
    """Rasterise every copy in the layout, tinting texture values by the copy colour.

    A pixel keeps the first copy that covers it; valid tiles do not overlap,
    so only boundary pixels depend on the copy order.
    """
    width, height = _resolution(resolution)
    if width < 16 or height < 16:
        raise RenderError("resolution must be at least 16 pixels per side")
    pos = _positions(tile)
    uv = normalized_uvs(mesh)
    grey_tints = all(c[0] == c[1] == c[2] for c in layout.colors)
    channels = texture.channels if grey_tints else 3
    out = np.full((height * width, channels), float(background))
    taken = np.zeros(height * width, dtype=bool)
    for h, color in zip(layout.copies, layout.colors):
        px = _to_pixels(geo.apply(h, pos), layout.window, width, height)
        tri_id, bary = rasterize_triangles(px, mesh.triangles, width, height)
        covered, flat, vals, _ = _shade(tri_id, bary, mesh.triangles, uv, texture)
        fresh = ~taken[flat]
        flat, vals = flat[fresh], vals[fresh]
        tint = np.asarray(color, dtype=float)
        if channels == 1:
            out[flat] = vals * tint[0]
        else:
            out[flat] = (vals if vals.shape[1] == 3 else np.repeat(vals, 3, axis=1)) * tint
        taken[flat] = True
    return RasterImage(width, height, channels, out.reshape(height, width, channels),
                       np.asarray(layout.window, dtype=float), taken.reshape(height, width))


def _to_bytes(values: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def export_png(image: RasterImage, path) -> Path:
    """8-bit PNG, ``round(value * 255)`` with no gamma handling."""
    path = Path(path)
    data = _to_bytes(image.values)
    img = Image.fromarray(data[:, :, 0], mode="L") if image.channels == 1 else Image.fromarray(data, mode="RGB")
    try:
        img.save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write PNG {path}: {exc}") from exc
    return path


def _hex(color) -> str:
    r, g, b = (int(np.floor(np.clip(c, 0, 1) * 255 + 0.5)) for c in color)
    return f"#{r:02x}{g:02x}{b:02x}"


def export_svg(tile, mesh: TriMesh, layout: TilingLayout, path, stroke: str = "#000000",
               stroke_width: float = 0.002) -> Path:
    """One filled path per copy: the boundary polygon under that copy's isometry."""
    path = Path(path)
    pos = _positions(tile)
    poly = pos[mesh.boundary]
    (x0, y0), (x1, y1) = np.asarray(layout.window, dtype=float)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'viewBox="{x0:.6f} {-y1:.6f} {x1 - x0:.6f} {y1 - y0:.6f}">',
        '<g transform="scale(1,-1)">',
    ]
    for h, color in zip(layout.copies, layout.colors):
        p = geo.apply(h, poly)
        d = "M " + " L ".join(f"{x:.6f} {y:.6f}" for x, y in p) + " Z"
        lines.append(f'<path d="{d}" fill="{_hex(color)}" stroke="{stroke}" stroke-width="{stroke_width:g}"/>')
    lines += ["</g>", "</svg>", ""]
    try:
        path.write_text("\n".join(lines))
    except OSError as exc:
        raise OSError(f"cannot write SVG {path}: {exc}") from exc
    return path


def export_obj(tile, mesh: TriMesh, path) -> Path:
    """Wavefront OBJ with ``v``, ``vt`` and ``f`` records (1-based, 6 decimals)."""
    path = Path(path)
    pos = _positions(tile)
    uv = normalized_uvs(mesh)
    out = [f"v {x:.6f} {y:.6f} 0.000000" for x, y in pos]
    out += [f"vt {u:.6f} {v:.6f}" for u, v in uv]
    out += ["f " + " ".join(f"{i + 1}/{i + 1}" for i in tri) for tri in mesh.triangles]
    try:
        path.write_text("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write OBJ {path}: {exc}") from exc
    return path


def read_obj(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vertices (x, y), texture coordinates and 0-based faces of an OBJ written by :func:`export_obj`."""
    v, vt, f = [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            v.append([float(parts[1]), float(parts[2])])
        elif parts[0] == "vt":
            vt.append([float(parts[1]), float(parts[2])])
        elif parts[0] == "f":
            f.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
    return np.array(v), np.array(vt), np.array(f, dtype=np.int64)
