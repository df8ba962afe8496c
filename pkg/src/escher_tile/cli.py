"""``escher-tile`` command line: inspect groups, solve, fit, render, validate, gradcheck.

Exit codes follow sysexits: 0 success, 1 validity or convergence failure,
2 numerical error, 64 usage, 65 bad data, 66 missing input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import tomli

from . import render as rd
from .autodiff import gradcheck
from .balance import BalanceError
from .fit import FitConfig, FitError, load_target, optimize
from .mesh import TriMesh
from .tilesolve import SolvedTile, SolveError, TileParams, rotation_matrix, solve_tile
from .validity import full_report
from .wallpaper import GROUP_IDS, ConstraintSet, GroupError, build_tile, catalog

log = logging.getLogger("escher_tile")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_NUMERIC = 2
EXIT_USAGE = 64
EXIT_DATAERR = 65
EXIT_NOINPUT = 66

TILE_FORMAT = "escher-tile"
TILE_VERSION = 1
CONSISTENCY_TOL = 1e-8
GRADCHECK_TOL = 1e-4
MAX_BACKGROUND = 0.005


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- configuration -------------------------------------------------------------

@dataclass
class RunConfig:
    group: str = "O"
    n: int = 40
    seed: int = 0
    output: str = "out"
    target: str | None = None
    target_image: str | None = None
    theta: str | None = None
    phi: float = 0.0
    resolution: int = 512
    scheme: str = "by-orientation"
    iterations: int = 500
    lr_theta: float = 0.1
    lr_phi: float = 0.1
    lr_texture: float = 0.01
    samples: int = 256
    texture_weight: float = 1.0
    texture_size: int = 64
    render_resolution: int = 64
    check_validity: bool = True

    @classmethod
    def keys(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def load(cls, path) -> dict:
        """Parse a TOML file into a dict of known keys; unknown keys are an error."""
        path = Path(path)
        if not path.exists():
            raise CliError(f"config file not found: {path}", EXIT_NOINPUT)
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise CliError(f"{path}: {exc}", EXIT_DATAERR) from exc
        unknown = sorted(set(data) - cls.keys())
        if unknown:
            raise CliError(f"{path}: unknown config keys: {', '.join(unknown)}", EXIT_DATAERR)
        return data

    @classmethod
    def merge(cls, config: dict, flags: dict) -> "RunConfig":
        """Defaults, then config file values, then command-line flags."""
        values = dict(config)
        values.update({k: v for k, v in flags.items() if v is not None and k in cls.keys()})
        types = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, value in values.items():
            kind = types[key]
            try:
                if kind in ("int",):
                    if isinstance(value, bool) or int(value) != value:
                        raise ValueError
                    out[key] = int(value)
                elif kind == "float":
                    out[key] = float(value)
                elif kind == "bool":
                    if not isinstance(value, bool):
                        raise ValueError
                    out[key] = value
                else:
                    out[key] = None if value is None else str(value)
            except (TypeError, ValueError):
                raise CliError(f"config key {key!r}: bad value {value!r} (expected {kind})", EXIT_DATAERR) from None
        return cls(**out)

    def fit_config(self) -> FitConfig:
        return FitConfig(iterations=self.iterations, lr_theta=self.lr_theta, lr_phi=self.lr_phi,
                         lr_texture=self.lr_texture, samples=self.samples, texture_weight=self.texture_weight,
                         seed=self.seed, texture_size=self.texture_size,
                         render_resolution=self.render_resolution, check_validity=self.check_validity)


# -- tile files ----------------------------------------------------------------

@dataclass
class TileFile:
    group: str
    n: int
    theta: np.ndarray
    phi: float
    positions: np.ndarray
    version: int = TILE_VERSION

    @classmethod
    def from_tile(cls, tile: SolvedTile, n: int) -> "TileFile":
        return cls(tile.group, n, tile.params.theta.copy(), float(tile.params.phi), tile.positions.copy())

    def to_json(self) -> str:
        doc = {"format": TILE_FORMAT, "version": self.version, "group": self.group, "n": self.n,
               "phi": self.phi, "theta": self.theta.tolist(), "positions": self.positions.tolist()}
        return json.dumps(doc, indent=1) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def read(cls, path) -> "TileFile":
        """Parse and shape-check a tile file (no re-solve)."""
        path = Path(path)
        if not path.exists():
            raise CliError(f"tile file not found: {path}", EXIT_NOINPUT)
        try:
            doc = json.loads(path.read_text())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CliError(f"{path}: not JSON: {exc}", EXIT_DATAERR) from exc
        if not isinstance(doc, dict) or doc.get("format") != TILE_FORMAT:
            raise CliError(f"{path}: not an {TILE_FORMAT} file", EXIT_DATAERR)
        if doc.get("version") != TILE_VERSION:
            raise CliError(f"{path}: unsupported version {doc.get('version')!r}", EXIT_DATAERR)
        try:
            tf = cls(str(doc["group"]), int(doc["n"]), np.asarray(doc["theta"], dtype=float),
                     float(doc["phi"]), np.asarray(doc["positions"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(f"{path}: malformed tile file: {exc!r}", EXIT_DATAERR) from exc
        if tf.group not in GROUP_IDS:
            raise CliError(f"{path}: unknown group {tf.group!r}", EXIT_DATAERR)
        try:
            mesh, _ = build_tile(tf.group, tf.n)
        except GroupError as exc:
            raise CliError(f"{path}: {exc}", EXIT_DATAERR) from exc
        if tf.theta.shape != (len(mesh.directed_edges),) or tf.positions.shape != (mesh.num_vertices, 2):
            raise CliError(f"{path}: theta/positions do not match group {tf.group} at n={tf.n}", EXIT_DATAERR)
        if not (np.all(np.isfinite(tf.theta)) and np.all(np.isfinite(tf.positions)) and np.isfinite(tf.phi)):
            raise CliError(f"{path}: non-finite values", EXIT_DATAERR)
        return tf

    def solve(self) -> tuple[SolvedTile, TriMesh, ConstraintSet]:
        mesh, cs = build_tile(self.group, self.n)
        return solve_tile(mesh, cs, TileParams(self.theta, self.phi)), mesh, cs

    def deviation(self, tile: SolvedTile) -> float:
        return float(np.max(np.abs(tile.positions - self.positions)))

    @classmethod
    def load(cls, path) -> tuple["TileFile", SolvedTile, TriMesh, ConstraintSet]:
        """Read, re-solve from ``(group, n, theta, phi)`` and check the stored positions."""
        tf = cls.read(path)
        tile, mesh, cs = tf.solve()
        dev = tf.deviation(tile)
        if not dev <= CONSISTENCY_TOL:
            raise CliError(f"{path}: stored positions differ from the re-solve by {dev:.3e} "
                           f"(tol {CONSISTENCY_TOL:g})", EXIT_DATAERR)
        return tf, tile, mesh, cs


def read_theta(path, expected: int) -> np.ndarray:
    """Theta from a tile file, a JSON list, or whitespace-separated text."""
    path = Path(path)
    if not path.exists():
        raise CliError(f"theta file not found: {path}", EXIT_NOINPUT)
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(path.read_text())
            theta = np.asarray(doc["theta"] if isinstance(doc, dict) else doc, dtype=float)
        else:
            theta = np.loadtxt(path, dtype=float, ndmin=1)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"{path}: cannot read theta: {exc}", EXIT_DATAERR) from exc
    theta = theta.reshape(-1)
    if theta.shape != (expected,):
        raise CliError(f"{path}: expected {expected} theta values, got {theta.size}", EXIT_DATAERR)
    if not np.all(np.isfinite(theta)):
        raise CliError(f"{path}: theta is not finite", EXIT_DATAERR)
    return theta


def write_loss_csv(losses, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, loss in enumerate(losses):
            w.writerow([i, repr(float(loss))])
    return path


def _tile_or_exit(group: str, n: int):
    try:
        return build_tile(group, n)
    except GroupError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc


def _window(values) -> np.ndarray | None:
    if values is None:
        return None
    x0, y0, x1, y1 = values
    if not (x1 > x0 and y1 > y0):
        raise CliError("window must satisfy x0 < x1 and y0 < y1", EXIT_USAGE)
    return np.array([[x0, y0], [x1, y1]], dtype=float)


def tiling_window(tile: SolvedTile, copies: float = 3.0) -> np.ndarray:
    """Window centred on the tile, ``copies`` times its bounding box on each side."""
    lo, hi = tile.positions.min(axis=0), tile.positions.max(axis=0)
    c, half = 0.5 * (lo + hi), 0.5 * copies * (hi - lo)
    return np.array([c - half, c + half])


def write_tiling(tile: SolvedTile, mesh: TriMesh, texture: rd.Texture, prefix: Path, window=None,
                 scheme: str = "by-orientation", resolution: int = 512, seed: int = 0) -> rd.RasterImage:
    window = tiling_window(tile) if window is None else window
    layout = rd.tiling_layout(tile, tile.group, window, scheme=scheme, seed=seed)
    img = rd.render_tiling(tile, mesh, texture, layout, resolution=resolution)
    rd.export_png(img, prefix.with_suffix(".png"))
    rd.export_svg(tile, mesh, layout, prefix.with_suffix(".svg"))
    return img


# -- subcommands ---------------------------------------------------------------

def cmd_groups(args) -> int:
    rows = [s for s in catalog() if s.interesting or not args.interesting]
    print(f"{'group':<7}{'shape':<10}{'free':>6}{'twin':>6}{'online':>8}{'pinned':>8}  interesting   (n={args.n})")
    for spec in rows:
        _, cs = _tile_or_exit(spec.name, _compatible_n(spec, args.n))
        k = cs.boundary_kind_counts()
        print(f"{spec.name:<7}{spec.shape:<10}{k['Free']:>6}{k['TwinPair']:>6}{k['OnLine']:>8}{k['Pinned']:>8}  "
              f"{'yes' if spec.interesting else 'no'}")
    return EXIT_OK


def _compatible_n(spec, n: int) -> int:
    return n + (-n) % spec.divisor


def cmd_solve(args) -> int:
    cfg = RunConfig.merge(RunConfig.load(args.config) if args.config else {}, vars(args))
    mesh, cs = _tile_or_exit(cfg.group, cfg.n)
    if cfg.theta:
        params = TileParams(read_theta(cfg.theta, len(mesh.directed_edges)), cfg.phi)
    else:
        params = TileParams.random(mesh, np.random.default_rng(cfg.seed))
        params.phi = cfg.phi
    tile = solve_tile(mesh, cs, params)
    report = full_report(tile, mesh, cs, coverage=args.coverage, seed=cfg.seed)
    out = Path(args.out) if args.out else Path(cfg.output) / "tile.json"
    TileFile.from_tile(tile, cfg.n).save(out)
    print(report.summary())
    print(f"wrote {out}")
    return EXIT_OK if report.passed and (report.coverage is None or report.coverage.exact) else EXIT_FAIL


def cmd_fit(args) -> int:
    cfg = RunConfig.merge(RunConfig.load(args.config) if args.config else {}, vars(args))
    if not cfg.target:
        raise CliError("fit needs a target (config key 'target' or --target)", EXIT_USAGE)
    mesh, cs = _tile_or_exit(cfg.group, cfg.n)
    try:
        target = load_target(cfg.target)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_NOINPUT) from exc
    except (ValueError, OSError) as exc:
        raise CliError(f"{cfg.target}: {exc}", EXIT_DATAERR) from exc
    target.check_area(cfg.group)
    image = None
    if cfg.target_image:
        if not Path(cfg.target_image).exists():
            raise CliError(f"target image not found: {cfg.target_image}", EXIT_NOINPUT)
        image = rd.Texture.load(cfg.target_image, rgb=True).data
    try:
        trace = optimize(mesh, cs, target, target_image=image, config=cfg.fit_config())
    except FitError as exc:
        raise CliError(str(exc), EXIT_FAIL) from exc

    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    TileFile.from_tile(trace.tile, cfg.n).save(out / "tile.json")
    write_loss_csv(trace.losses, out / "loss.csv")
    rd.export_png(_texture_image(trace.texture), out / "texture.png")
    write_tiling(trace.tile, mesh, trace.texture, out / "tiling", scheme=cfg.scheme,
                 resolution=cfg.resolution, seed=cfg.seed)
    initial = trace.losses[0] if trace.losses else trace.final_loss
    ratio = trace.final_loss / initial if initial > 0 else 0.0
    print(f"final loss {trace.final_loss:.6g} (initial {initial:.6g}, ratio {ratio:.4f}); "
          f"invalid iterates {trace.invalid_iterates}")
    print(f"wrote {out}/tile.json loss.csv texture.png tiling.png tiling.svg")
    return EXIT_OK if trace.invalid_iterates == 0 else EXIT_FAIL


def _texture_image(texture: rd.Texture) -> rd.RasterImage:
    h, w, c = texture.data.shape
    return rd.RasterImage(w, h, c, texture.data, np.array([[0.0, 0.0], [1.0, 1.0]]), np.ones((h, w), bool))


def cmd_render(args) -> int:
    _, tile, mesh, _ = TileFile.load(args.tile)
    if args.texture:
        if not Path(args.texture).exists():
            raise CliError(f"texture not found: {args.texture}", EXIT_NOINPUT)
        texture = rd.Texture.load(args.texture, rgb=True)
    else:
        texture = rd.Texture.constant(2, 2, 0.85)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    img = write_tiling(tile, mesh, texture, prefix, window=_window(args.window), scheme=args.scheme,
                       resolution=args.resolution, seed=args.seed)
    bg = img.background_fraction()
    print(f"background {100 * bg:.3f}% ; wrote {prefix.with_suffix('.png')} {prefix.with_suffix('.svg')}")
    if bg > MAX_BACKGROUND:
        print(f"coverage check failed: background above {100 * MAX_BACKGROUND:g}%", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_validate(args) -> int:
    tf = TileFile.read(args.tile)
    tile, mesh, cs = tf.solve()
    report = full_report(tf.positions @ rotation_matrix(tf.phi), mesh, cs, coverage=args.coverage, seed=args.seed)
    dev = tf.deviation(tile)
    print(report.summary())
    print(f"re-solve deviation {dev:.3e} (tol {CONSISTENCY_TOL:g})")
    ok = report.passed and dev <= CONSISTENCY_TOL and (report.coverage is None or report.coverage.exact)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    _tile_or_exit(args.group, args.n)
    worst = 0.0
    for k in range(args.trials):
        r = gradcheck(args.group, args.n, seed=args.seed + k, h=args.h)
        print(f"{args.group} n={args.n} seed={args.seed + k}: relative error {r.rel_error:.3e}")
        worst = max(worst, r.rel_error)
    print(f"max relative error {worst:.3e} (tol {GRADCHECK_TOL:g})")
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_FAIL


# -- parser --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _group(value: str) -> str:
    if value not in GROUP_IDS:
        raise argparse.ArgumentTypeError(f"unknown group {value!r}; choose from {' '.join(GROUP_IDS)}")
    return value


def _positive(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="escher-tile", description="Differentiable tile shapes for all 17 wallpaper groups.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("groups", parents=[common], help="list the wallpaper groups")
    g.add_argument("--interesting", action="store_true", help="only groups with a deformable boundary")
    g.add_argument("--n", type=_positive, default=8, help="subdivision used for the constraint counts")
    g.set_defaults(func=cmd_groups)

    s = sub.add_parser("solve", parents=[common], help="solve a tile from random or given theta")
    s.add_argument("--config", help="TOML run config")
    s.add_argument("--group", type=_group)
    s.add_argument("--n", type=_positive)
    s.add_argument("--theta", help="theta file (tile JSON, JSON list or text)")
    s.add_argument("--phi", type=float)
    s.add_argument("--coverage", action="store_true", help="also run the Monte-Carlo coverage check")
    s.add_argument("--out", help="tile file to write (default <output>/tile.json)")
    s.set_defaults(func=cmd_solve)

    f = sub.add_parser("fit", parents=[common], help="fit a tile to a target silhouette")
    f.add_argument("config", nargs="?", help="TOML run config")
    f.add_argument("--group", type=_group)
    f.add_argument("--n", type=_positive)
    f.add_argument("--target")
    f.add_argument("--target-image", dest="target_image")
    f.add_argument("--output")
    f.add_argument("--iterations", type=int)
    f.add_argument("--lr-theta", dest="lr_theta", type=float)
    f.add_argument("--lr-phi", dest="lr_phi", type=float)
    f.add_argument("--lr-texture", dest="lr_texture", type=float)
    f.add_argument("--samples", type=int)
    f.add_argument("--resolution", type=_positive)
    f.add_argument("--scheme", choices=rd.SCHEMES)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("render", parents=[common], help="render a tiling from a tile file")
    r.add_argument("tile")
    r.add_argument("--texture", help="texture PNG (default flat grey)")
    r.add_argument("--window", type=float, nargs=4, metavar=("X0", "Y0", "X1", "Y1"))
    r.add_argument("--scheme", choices=rd.SCHEMES, default="by-orientation")
    r.add_argument("--resolution", type=_positive, default=512)
    r.add_argument("--out", default="tiling", help="output prefix for .png and .svg")
    r.set_defaults(func=cmd_render)

    v = sub.add_parser("validate", parents=[common], help="check a tile file")
    v.add_argument("tile")
    v.add_argument("--coverage", action="store_true")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("gradcheck", parents=[common], help="adjoint vs finite-difference gradients")
    c.add_argument("--group", type=_group, default="O")
    c.add_argument("--n", type=_positive, default=4)
    c.add_argument("--trials", type=_positive, default=1)
    c.add_argument("--h", type=float, default=1e-5)
    c.set_defaults(func=cmd_gradcheck)
    return p


def _thread_cap() -> None:
    value = os.environ.get("ESCHER_TILE_THREADS")
    if value is None:
        return
    if not value.isdigit() or int(value) < 1:
        raise CliError(f"ESCHER_TILE_THREADS must be a positive integer, got {value!r}", EXIT_USAGE)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if args.seed is None and args.command in ("render", "validate", "gradcheck"):
        args.seed = 0
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _thread_cap()
        return args.func(args)
    except CliError as exc:
        print(f"escher-tile: {exc}", file=sys.stderr)
        return exc.code
    except (SolveError, BalanceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"escher-tile: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GroupError as exc:
        print(f"escher-tile: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
