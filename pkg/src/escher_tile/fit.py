"""Fitting a tile to a target silhouette (and optionally a target image).

Geometry gradients come only from boundary samples: chamfer distance between
arc-length samples of the tile boundary and of the target outline, pulled back
to vertex positions through the linear interpolation weights and then to
``theta``/``phi`` through the adjoint solve.  The optional texture term is an
image-space MSE whose gradient reaches the texels only.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .autodiff import backward
from .mesh import TriMesh
from .render import RasterImage, Texture, rasterize_tile
from .tilesolve import SolvedTile, TileParams, solve_tile
from .validity import canonical_area, full_report
from .wallpaper import ConstraintSet

log = logging.getLogger(__name__)

MAX_TARGET_POINTS = 512


class FitError(RuntimeError):
    pass


@dataclass
class TargetShape:
    """Closed target outline (CCW, no repeated closing point)."""

    polygon: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.polygon, dtype=float).reshape(-1, 2)
        if len(p) > 1 and np.allclose(p[0], p[-1]):
            p = p[:-1]
        if len(p) < 3:
            raise ValueError("target polygon needs at least 3 points")
        if not np.all(np.isfinite(p)):
            raise ValueError("target polygon is not finite")
        if geo.polygon_area(p) < 0:
            p = p[::-1].copy()
        if not geo.polygon_is_simple(p):
            raise ValueError("target polygon is not simple")
        self.polygon = p

    @property
    def area(self) -> float:
        return float(geo.polygon_area(self.polygon))

    def samples(self, m: int) -> np.ndarray:
        return arclength_samples(self.polygon, m)[0]

    def check_area(self, group: str) -> None:
        ratio = self.area / canonical_area(group)
        if not 0.2 <= ratio <= 5.0:
            warnings.warn(f"target area is {ratio:.2f}x the basic tile area (expected 0.2-5)", RuntimeWarning,
                          stacklevel=2)

    @classmethod
    def ellipse(cls, center=(0.5, 0.5), axes=(1.2, 0.8), points: int = 256) -> "TargetShape":
        """Ellipse with full axis lengths ``axes``."""
        t = 2 * np.pi * np.arange(points) / points
        return cls(np.stack([center[0] + 0.5 * axes[0] * np.cos(t), center[1] + 0.5 * axes[1] * np.sin(t)], axis=1))


def load_target(path) -> TargetShape:
    """Target from a text point list (``x y`` per line) or the largest contour of a mask PNG."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"target file not found: {path}")
    if path.suffix.lower() == ".png":
        return target_from_mask(path)
    pts = []
    for k, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{k}: expected 'x y', got {line!r}")
        pts.append([float(parts[0]), float(parts[1])])
    return TargetShape(np.array(pts))


def target_from_mask(path, threshold: float = 0.5, max_points: int = MAX_TARGET_POINTS) -> TargetShape:
    """Largest marching-squares contour of a binary mask, in unit-square coordinates (y up)."""
    from PIL import Image
    from skimage.measure import approximate_polygon, find_contours

    img = np.asarray(Image.open(path).convert("L"), dtype=float) / 255.0
    h, w = img.shape
    padded = np.pad(img, 1)  # closes contours touching the border
    contours = find_contours(padded, threshold)
    if not contours:
        raise ValueError(f"mask {path} has no contour at level {threshold}")
    best = max(contours, key=lambda c: abs(geo.polygon_area(c[:, ::-1])))
    tol = 0.0
    poly = best
    while len(poly) - 1 > max_points:
        tol = 0.25 if tol == 0.0 else tol * 1.5
        poly = approximate_polygon(best, tolerance=tol)
    rows, cols = poly[:, 0] - 1.0, poly[:, 1] - 1.0
    scale = float(max(h, w))
    xy = np.stack([(cols + 0.5) / scale, (h - rows - 0.5) / scale], axis=1)
    return TargetShape(xy)


@dataclass
class BoundarySamples:
    points: np.ndarray   # (m, 2)
    edge: np.ndarray     # (m,) index k of boundary edge (loop[k], loop[k+1])
    t: np.ndarray        # (m,) position along that edge
    v0: np.ndarray       # (m,) vertex index at t = 0
    v1: np.ndarray       # (m,) vertex index at t = 1

    def weights(self) -> np.ndarray:
        """Interpolation weights on ``(v0, v1)``; each row sums to 1."""
        return np.stack([1.0 - self.t, self.t], axis=1)

    def pullback(self, grad_points: np.ndarray, num_vertices: int) -> np.ndarray:
        """Scatter per-sample gradients onto vertex positions."""
        out = np.zeros((num_vertices, 2))
        np.add.at(out, self.v0, (1.0 - self.t)[:, None] * grad_points)
        np.add.at(out, self.v1, self.t[:, None] * grad_points)
        return out


def arclength_samples(poly: np.ndarray, m: int, offset: float = 0.0):
    """``m`` points at arc lengths ``(k + offset) * P / m`` along a closed polyline."""
    if m < 1:
        raise ValueError("m must be positive")
    p = np.asarray(poly, dtype=float)
    seg = np.roll(p, -1, axis=0) - p
    length = np.hypot(seg[:, 0], seg[:, 1])
    total = float(length.sum())
    if not total > 0:
        raise FitError("boundary has zero length")
    cum = np.concatenate([[0.0], np.cumsum(length)])
    s = (np.arange(m) + offset) * (total / m)
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(p) - 1)
    # skip zero-length edges
    while np.any(length[k] == 0):
        bad = length[k] == 0
        k[bad] = (k[bad] + 1) % len(p)
    t = np.clip((s - cum[k]) / length[k], 0.0, 1.0)
    pts = p[k] + t[:, None] * seg[k]
    return pts, k, t


def sample_boundary(tile, mesh: TriMesh, m: int, offset: float = 0.0) -> BoundarySamples:
    """Arc-length-uniform samples of the tile boundary with their interpolation data."""
    pos = np.asarray(tile.positions if hasattr(tile, "positions") else tile, dtype=float)
    loop = mesh.boundary
    pts, k, t = arclength_samples(pos[loop], m, offset)
    return BoundarySamples(pts, k, t, loop[k], loop[(k + 1) % len(loop)])


def chamfer_loss(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Symmetric chamfer ``mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2`` and its gradient w.r.t. ``a``.

    Nearest-neighbour assignments are held fixed for the gradient.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer needs non-empty point sets")
    da, ia = cKDTree(b).query(a)
    db, ib = cKDTree(a).query(b)
    loss = float(np.mean(da ** 2) + np.mean(db ** 2))
    grad = 2.0 * (a - b[ia]) / len(a)
    np.add.at(grad, ib, 2.0 * (a[ib] - b) / len(b))
    return loss, grad


def texture_loss(render: RasterImage, target: np.ndarray, texture: Texture) -> tuple[float, np.ndarray]:
    """Mean squared error over covered pixels and its gradient w.r.t. the texels.

    ``render`` must come from :func:`rasterize_tile` (it carries the bilinear
    taps); geometry receives no gradient from this term.
    """
    tgt = np.asarray(target, dtype=float)
    if tgt.ndim == 2:
        tgt = tgt[:, :, None]
    if tgt.shape[:2] != (render.height, render.width):
        raise ValueError(f"target image is {tgt.shape[1]}x{tgt.shape[0]}, render is {render.width}x{render.height}")
    if tgt.shape[2] != render.channels:
        if tgt.shape[2] == 3 and render.channels == 1:
            tgt = tgt.mean(axis=2, keepdims=True)
        else:
            tgt = np.repeat(tgt, render.channels, axis=2)
    s = render.sampling
    if s is None:
        raise ValueError("render carries no texel sampling; use rasterize_tile")
    grad = np.zeros((texture.height * texture.width, texture.channels))
    if len(s.pixels) == 0:
        return 0.0, grad.reshape(texture.data.shape)
    vals = render.values.reshape(-1, render.channels)[s.pixels]
    diff = vals - tgt.reshape(-1, tgt.shape[2])[s.pixels]
    count = diff.size
    loss = float(np.sum(diff ** 2) / count)
    g_pix = 2.0 * diff / count
    for j in range(4):
        np.add.at(grad, s.taps[:, j], s.weights[:, j:j + 1] * g_pix)
    return loss, grad.reshape(texture.data.shape)


@dataclass
class FitConfig:
    iterations: int = 500
    lr_theta: float = 0.1
    lr_phi: float = 0.1
    lr_texture: float = 0.01
    samples: int = 256
    texture_weight: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    texture_size: int = 64
    render_resolution: int = 64
    check_validity: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("lr_theta", "lr_phi", "lr_texture"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.samples < 8:
            raise ValueError("chamfer sample count must be >= 8")


class Adam:
    """Adam with bias correction over a flat parameter vector."""

    def __init__(self, lr: np.ndarray | float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class FitTrace:
    losses: list[float]
    tile: SolvedTile
    texture: Texture
    final_loss: float
    invalid_iterates: int = 0
    chamfer: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.losses)


def optimize(mesh: TriMesh, cs: ConstraintSet, target: TargetShape, target_image=None,
             config: FitConfig | None = None, init: TileParams | None = None,
             texture: Texture | None = None, image_window=None) -> FitTrace:
    """Adam over ``(theta, phi[, texels])`` starting from the canonical tile.

    ``losses[i]`` is the loss of iterate ``i`` (before its update).  The
    target image, if given, covers ``image_window`` (default: the target's
    bounding box).
    """
    cfg = config or FitConfig()
    params = init.copy() if init is not None else TileParams.zeros(mesh)
    if texture is None:
        channels = 3 if target_image is not None and np.ndim(target_image) == 3 and np.shape(target_image)[2] == 3 else 1
        texture = Texture.constant(cfg.texture_size, cfg.texture_size, 0.5, channels)
    texture = texture.copy()
    use_image = target_image is not None and cfg.texture_weight > 0
    if use_image:
        target_image = np.asarray(target_image, dtype=float)
        image_window = (np.array([target.polygon.min(axis=0), target.polygon.max(axis=0)])
                        if image_window is None else np.asarray(image_window, dtype=float))
        resolution = (target_image.shape[1], target_image.shape[0])
    target_pts = target.samples(cfg.samples)

    ne = len(params.theta)
    geo_opt = Adam(np.concatenate([np.full(ne, cfg.lr_theta), [cfg.lr_phi]]), cfg.beta1, cfg.beta2, cfg.eps)
    tex_opt = Adam(cfg.lr_texture, cfg.beta1, cfg.beta2, cfg.eps)

    def evaluate(p: TileParams):
        tile = solve_tile(mesh, cs, p)
        samples = sample_boundary(tile, mesh, cfg.samples)
        cham, g_pts = chamfer_loss(samples.points, target_pts)
        loss, g_tex = cham, None
        if use_image:
            img = rasterize_tile(tile, mesh, texture, resolution, window=image_window)
            tl, g_tex = texture_loss(img, target_image, texture)
            loss += cfg.texture_weight * tl
            g_tex = cfg.texture_weight * g_tex
        return tile, samples, loss, cham, g_pts, g_tex

    losses, chamfers, invalid = [], [], 0
    for it in range(cfg.iterations):
        tile, samples, loss, cham, g_pts, g_tex = evaluate(params)
        if not np.isfinite(loss):
            raise FitError(f"iteration {it}: loss is {loss} (chamfer {cham}); aborting")
        if cfg.check_validity and not full_report(tile, mesh, cs).passed:
            invalid += 1
            log.warning("iteration %d: iterate failed validity", it)
        losses.append(float(loss))
        chamfers.append(float(cham))
        dldv = samples.pullback(g_pts, mesh.num_vertices)
        grad = backward(tile.system, tile, dldv)
        flat = np.concatenate([grad.theta, [grad.phi]])
        if not np.all(np.isfinite(flat)):
            raise FitError(f"iteration {it}: gradient is not finite; aborting")
        new = geo_opt.step(np.concatenate([params.theta, [params.phi]]), flat)
        params = TileParams(new[:ne], float(new[-1]))
        if use_image and cfg.lr_texture > 0:
            texture = Texture(np.clip(tex_opt.step(texture.data, g_tex), 0.0, 1.0))
        log.debug("iteration %d loss %.6g", it, loss)

    tile, _, final, _, _, _ = evaluate(params)
    if cfg.check_validity and not full_report(tile, mesh, cs).passed:
        invalid += 1
    return FitTrace(losses, tile, texture, float(final), invalid, chamfers)
