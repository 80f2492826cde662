"""
sweep: leading eigenvalue against the semiclassical limit for decreasing eps.
"""

from pathlib import Path
from typing import List

from app.commands import CommandContext
from app.commands.spectrum import SPECTRUM_HEADER, spectrum_row
from core.spectral import e_eps_sweep, errors_nonincreasing
from utils.csv_io import write_csv


def run(ctx: CommandContext) -> List[Path]:
    params = ctx.params
    model = ctx.config.model.build()
    sweep = e_eps_sweep(model, params.alpha, params.eps_list, params.points_per_width, threads=ctx.threads)

    rows = [spectrum_row(p.result) + [p.reference, p.error] for p in sweep]
    meta = ctx.metadata(errors_nonincreasing=errors_nonincreasing(sweep))
    return [write_csv(ctx.out_dir / "sweep.csv", SPECTRUM_HEADER + ["riccati", "error"], rows, meta)]
