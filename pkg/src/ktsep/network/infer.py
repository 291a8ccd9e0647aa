"""Volume inference and the FE-direction smoothness post-process."""
from __future__ import annotations

import numpy as np

from ..operators import CoilMaps, _mask, coil_combine, coil_expand, fft1d, hybridize, ifft1d
from ..rows import map_rows
from ..tensor import Domain, IMAGE_AXES, KSPACE_AXES, KTVolume
from .model import NetworkParams, network_forward

__all__ = ["infer_volume", "sc_postprocess", "fe_smooth_step"]


def infer_volume(y: KTVolume, maps: CoilMaps, mask, params: NetworkParams, sc=False,
                 threads=1, sc_rounds=10, sc_weight=0.1) -> KTVolume:
    """Hybridize, reconstruct every FE row with the network, stitch.

    Each row is processed on its own, so ``threads`` never changes the result.
    """
    if y.domain is not Domain.KSPACE:
        raise ValueError("infer_volume needs a KSPACE volume")
    n_pe, n_time = y.extents[1], y.extents[3]
    meta = params.metadata
    if "n_pe" in meta and (meta["n_pe"], meta["n_time"]) != (n_pe, n_time):
        raise ValueError(f"network trained on (PE, TIME) = ({meta['n_pe']}, {meta['n_time']}), "
                         f"data has ({n_pe}, {n_time})")
    m = _mask(mask)
    out = map_rows(hybridize(y), maps,
                   lambda z, s: network_forward(z, s, m, params)[-1], threads)
    if sc:
        out = sc_postprocess(out, y, maps, m, sc_rounds, sc_weight)
    return out


def fe_smooth_step(x, weight):
    """``x - weight * D^H D x`` with D the forward difference along axis 0
    (replicate boundary, so the last difference is zero)."""
    dx = np.diff(x, axis=0)
    zero = np.zeros_like(x[:1])
    dtd = np.concatenate([zero, dx]) - np.concatenate([dx, zero])
    return x - weight * dtd


def sc_postprocess(x: KTVolume, y: KTVolume, maps: CoilMaps, mask, rounds=10, weight=0.1) -> KTVolume:
    """Alternate FE smoothing with a data-consistency blend over the whole volume.

    Blend in 2-D coil k-space: sampled positions become
    ``(y + weight * k) / (1 + weight)`` and unsampled positions keep ``k``,
    where ``k`` is the k-space of the smoothed image.
    """
    if x.domain is not Domain.IMAGE:
        raise ValueError("sc_postprocess needs an IMAGE volume")
    if y.domain is not Domain.KSPACE:
        raise ValueError("sc_postprocess needs KSPACE measurements")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if weight < 0 or 4 * weight >= 1:
        raise ValueError(f"weight must satisfy 0 <= weight < 0.25, got {weight}")
    x.expect_axes(*IMAGE_AXES)
    y.expect_axes(*KSPACE_AXES)
    m = _mask(mask)
    s = maps.data
    img = np.array(x.data)
    sampled = m[:, None, :]
    for _ in range(rounds):
        img = fe_smooth_step(img, weight)
        k = fft1d(fft1d(coil_expand(img, s), axis=0), axis=1)
        k = np.where(sampled, (y.data + weight * k) / (1.0 + weight), k)
        img = coil_combine(ifft1d(ifft1d(k, axis=1), axis=0), s)
    return KTVolume(img, IMAGE_AXES, domain=Domain.IMAGE)
