"""Tile shapes for the 17 wallpaper groups as a differentiable function of mesh Laplacian weights."""

import os as _os

# Cap BLAS/OpenMP threads before numpy loads.
_threads = _os.environ.get("ESCHER_TILE_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ[_var] = _threads

from .autodiff import ParamGradient, backward, gradcheck, loss_and_grad  # noqa: E402
from .fit import FitConfig, FitTrace, TargetShape, optimize  # noqa: E402
from .mesh import TriMesh  # noqa: E402
from .tilesolve import (SolvedTile, SolveError, TileParams, assemble, recover_theta,  # noqa: E402
                        solve_tile)
from .validity import ValidityReport, full_report  # noqa: E402
from .wallpaper import (GROUP_IDS, INTERESTING_GROUPS, REFLECTION_GROUPS, ConstraintSet,  # noqa: E402
                        GroupError, build_tile)

__version__ = "0.1.0"

__all__ = [
    "GROUP_IDS", "INTERESTING_GROUPS", "REFLECTION_GROUPS", "ConstraintSet", "FitConfig", "FitTrace",
    "GroupError", "ParamGradient", "SolveError", "SolvedTile", "TargetShape", "TileParams", "TriMesh",
    "ValidityReport", "assemble", "backward", "build_tile", "full_report", "gradcheck", "loss_and_grad",
    "optimize", "recover_theta", "solve_tile",
]
