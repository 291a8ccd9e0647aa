"""Row-parallel drivers: run a per-row reconstruction over a HYBRID volume."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

from .operators import CoilMaps, adjoint_A
from .tensor import Axis, Domain, KTSlice2D, KTVolume, split_rows, stitch_rows

__all__ = ["map_rows", "zero_filled_volume"]


def map_rows(hybrid: KTVolume, maps: CoilMaps, fn, threads=1) -> KTVolume:
    """Apply ``fn(z_row, maps_row) -> (PE, TIME) image`` to every FE row.

    Rows are independent, so the result does not depend on ``threads`` or on
    completion order.
    """
    if hybrid.domain is not Domain.HYBRID:
        raise ValueError(f"expected a HYBRID volume, got {hybrid.domain.value}")
    if maps.shape[:2] != hybrid.extents[:2]:
        raise ValueError(f"maps {maps.shape[:2]} do not match volume (FE, PE) {hybrid.extents[:2]}")
    rows = split_rows(hybrid)

    def one(row: KTSlice2D) -> KTSlice2D:
        x = fn(row.data, maps.row(row.row_index))
        return KTSlice2D(x, (Axis.PE, Axis.TIME), row_index=row.row_index, domain=Domain.IMAGE)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(one, rows))
    else:
        out = [one(r) for r in rows]
    return stitch_rows(out)


def zero_filled_volume(hybrid: KTVolume, maps: CoilMaps, mask, threads=1) -> KTVolume:
    return map_rows(hybrid, maps, lambda z, s: adjoint_A(z, s, mask), threads)
