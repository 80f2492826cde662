"""
spectrum: leading eigenpair of the discretized deformed generator.
"""

from pathlib import Path
from typing import List

from app.commands import CommandContext
from core.errors import ConfigError
from core.model import find_critical_points
from core.spectral import GridSpec, assemble, eigvec_rows, grid_for, leading_eigpair
from utils.csv_io import write_csv

SPECTRUM_HEADER = ["eps", "alpha", "lambda", "residual", "n", "box_lo", "box_hi"]


def spectrum_row(result) -> list:
    grid = result.grid
    return [
        result.eps, result.alpha, result.eigenvalue, result.residual, grid.n_per_dim,
        min(lo for lo, _ in grid.box), max(hi for _, hi in grid.box),
    ]


def run(ctx: CommandContext) -> List[Path]:
    params = ctx.params
    model = ctx.config.model.build()
    points = find_critical_points(model)

    explicit = (params.n, params.box_lo, params.box_hi)
    if all(v is not None for v in explicit):
        grid = GridSpec.cube(params.box_lo, params.box_hi, params.n, model.dim)
    elif any(v is not None for v in explicit):
        raise ConfigError("n, box_lo and box_hi must be given together")
    else:
        grid = grid_for(model, params.alpha, params.eps, params.points_per_width, points)

    op = assemble(model, params.alpha, params.eps, grid, points)
    result = leading_eigpair(op, params.tol, params.max_iter)

    meta = ctx.metadata(iterations=result.iterations, prediction=op.prediction)
    written = [write_csv(ctx.out_dir / "spectrum.csv", SPECTRUM_HEADER, [spectrum_row(result)], meta)]
    if params.dump_eigvec:
        header = [f"x{d + 1}" for d in range(model.dim)] + ["psi"]
        written.append(write_csv(ctx.out_dir / "eigvec.csv", header, eigvec_rows(result), meta))
    return written
