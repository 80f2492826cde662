"""
admissible: (alpha, p) admissibility rasters, one file per (k_b, h_b) pair.
"""

from pathlib import Path
from typing import List

from app.commands import CommandContext
from core.ratefn import region_raster
from utils.csv_io import write_csv


def run(ctx: CommandContext) -> List[Path]:
    params = ctx.params
    written = []
    for index, (k_b, h_b) in enumerate(params.pairs):
        raster = region_raster(k_b, h_b, (params.alpha_min, params.alpha_max),
                               (params.p_min, params.p_max), params.resolution)
        rows = [
            [a, p, raster.mask[i, j]]
            for i, a in enumerate(raster.alphas)
            for j, p in enumerate(raster.ps)
        ]
        written.append(write_csv(
            ctx.out_dir / f"raster_{index}.csv", ["alpha", "p", "admissible"], rows,
            ctx.metadata(k_b=k_b, h_b=h_b),
        ))
    return written
