"""Cartesian multi-coil encoding: centered unitary FFTs, masks, coil maps.

Numeric routines work on plain arrays in a fixed axis order:

* image slices ``(..., PE, TIME)``
* coil images and k-t slices ``(..., PE, COIL, TIME)``
* coil maps ``(..., PE, COIL)``
* masks ``(PE, TIME)``

Any leading axes (FE rows, batch) broadcast. Labeled tensors are handled
by the volume-level helpers (:func:`hybridize`, :func:`encode_volume`).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Axis, ComplexTensor, Domain, KTVolume, KSPACE_AXES

__all__ = [
    "CoilMaps",
    "SamplingMask",
    "fft1d",
    "ifft1d",
    "apply_mask",
    "coil_expand",
    "coil_combine",
    "forward_A",
    "adjoint_A",
    "hybridize",
    "encode_volume",
    "adjoint_volume",
]

NORM_TOL = 1e-12


def fft1d(x, axis=-1):
    """Centered, unitary DFT along ``axis`` (DC at index ``n // 2``)."""
    x = np.asarray(x)
    return np.fft.fftshift(
        np.fft.fft(np.fft.ifftshift(x, axes=axis), axis=axis, norm="ortho"), axes=axis)


def ifft1d(x, axis=-1):
    """Inverse of :func:`fft1d`."""
    x = np.asarray(x)
    return np.fft.fftshift(
        np.fft.ifft(np.fft.ifftshift(x, axes=axis), axis=axis, norm="ortho"), axes=axis)


class CoilMaps:
    """Coil sensitivities of shape ``(..., PE, COIL)`` with sum |s_j|^2 == 1 per pixel.

    Use :meth:`normalized` to build maps from raw profiles.
    """

    def __init__(self, data, tol=NORM_TOL):
        data = np.array(data, dtype=np.complex128)
        if data.ndim < 2:
            raise ValueError("coil maps need at least (PE, COIL) axes")
        if not np.all(np.isfinite(data)):
            raise ValueError("coil maps contain non-finite values")
        ss = np.sum(np.abs(data) ** 2, axis=-1)
        err = np.max(np.abs(ss - 1.0))
        if err > tol:
            raise ValueError(f"coil maps are not normalized (max |sum|s|^2 - 1| = {err:.3g})")
        data.flags.writeable = False
        self.data = data

    @classmethod
    def normalized(cls, raw):
        raw = np.asarray(raw, dtype=np.complex128)
        rss = np.sqrt(np.sum(np.abs(raw) ** 2, axis=-1, keepdims=True))
        if np.any(rss == 0):
            raise ValueError("coil maps vanish at some pixel; cannot normalize")
        return cls(raw / rss)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_coils(self):
        return self.data.shape[-1]

    def row(self, m):
        """Maps of FE row ``m`` for volume-shaped ``(FE, PE, COIL)`` maps."""
        if self.data.ndim != 3:
            raise ValueError("row() needs (FE, PE, COIL) maps")
        return CoilMaps(self.data[m])

    def to_tensor(self) -> ComplexTensor:
        axes = (Axis.FE, Axis.PE, Axis.COIL) if self.data.ndim == 3 else (Axis.PE, Axis.COIL)
        return ComplexTensor(self.data, axes)

    @classmethod
    def from_tensor(cls, t: ComplexTensor):
        if t.axes not in ((Axis.FE, Axis.PE, Axis.COIL), (Axis.PE, Axis.COIL)):
            raise ValueError(f"coil map axes must be [FE,] PE, COIL; got {[a.name for a in t.axes]}")
        # stored maps are already normalized; re-normalizing would perturb the last bits
        return cls(t.data)


def _maps(maps) -> np.ndarray:
    if isinstance(maps, CoilMaps):
        return maps.data
    return CoilMaps(maps).data


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Boolean (PE, TIME) sampling pattern; FE is implicitly fully sampled."""

    data: np.ndarray
    af: float = 1.0
    pattern: str = "CUSTOM"
    seed: int = 0
    n_center: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.array(self.data, dtype=bool)
        if data.ndim != 2:
            raise ValueError("mask must be 2-D (PE, TIME)")
        if not np.all(data.any(axis=0)):
            empty = np.flatnonzero(~data.any(axis=0)).tolist()
            raise ValueError(f"frames {empty} have no sampled PE line")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    def metadata(self) -> dict:
        return {"pattern": self.pattern, "af": self.af, "seed": self.seed,
                "n_center": self.n_center, **self.extra}

    def to_tensor(self) -> ComplexTensor:
        return ComplexTensor(self.data, (Axis.PE, Axis.TIME))

    def __eq__(self, other):
        if not isinstance(other, SamplingMask):
            return NotImplemented
        return np.array_equal(self.data, other.data) and self.metadata() == other.metadata()

    __hash__ = None


def _mask(mask) -> np.ndarray:
    if isinstance(mask, SamplingMask):
        return mask.data
    arr = np.asarray(mask, dtype=bool)
    return SamplingMask(arr).data


def apply_mask(k, mask, coil_axis=True):
    """Zero unsampled (PE, TIME) positions, broadcasting over COIL and leading axes.

    ``k`` is ``(..., PE, COIL, TIME)`` when ``coil_axis`` else ``(..., PE, TIME)``.
    """
    m = _mask(mask)
    k = np.asarray(k)
    tail = k.shape[-3::2] if coil_axis else k.shape[-2:]
    if tuple(tail) != m.shape:
        raise ValueError(f"mask extents {m.shape} do not match data (PE, TIME) {tuple(tail)}")
    if coil_axis:
        m = m[:, None, :]
    return np.where(m, k, 0)


def coil_expand(x, maps):
    """S: (..., PE, TIME) image -> (..., PE, COIL, TIME) coil images."""
    s = _maps(maps)
    x = np.asarray(x)
    if x.shape[-2] != s.shape[-2]:
        raise ValueError(f"image PE extent {x.shape[-2]} does not match maps {s.shape[-2]}")
    return s[..., :, :, None] * x[..., :, None, :]


def coil_combine(y, maps):
    """S*: (..., PE, COIL, TIME) -> (..., PE, TIME), sum_j conj(s_j) y_j."""
    s = _maps(maps)
    y = np.asarray(y)
    if y.shape[-3:-1] != s.shape[-2:]:
        raise ValueError(f"coil data (PE, COIL) {y.shape[-3:-1]} does not match maps {s.shape[-2:]}")
    return np.sum(np.conj(s)[..., :, :, None] * y, axis=-2)


def forward_A(x, maps, mask):
    """A = U F_PE S for one FE row (or a stack of rows)."""
    return apply_mask(fft1d(coil_expand(x, maps), axis=-3), mask)


def adjoint_A(z, maps, mask):
    """A* = S* F_PE^-1 U."""
    return coil_combine(ifft1d(apply_mask(z, mask), axis=-3), maps)


def hybridize(y: KTVolume) -> KTVolume:
    """Inverse FFT along FE: KSPACE -> HYBRID."""
    if y.domain is not Domain.KSPACE:
        raise ValueError(f"hybridize needs a KSPACE volume, got {y.domain.value}")
    y.expect_axes(*KSPACE_AXES)
    return KTVolume(ifft1d(y.data, axis=0), KSPACE_AXES, domain=Domain.HYBRID)


def encode_volume(x, maps, mask) -> np.ndarray:
    """Full 3-D forward model U F_2D S on an (FE, PE, TIME) image array."""
    coil = coil_expand(x, maps)
    return apply_mask(fft1d(fft1d(coil, axis=0), axis=1), mask)


def adjoint_volume(y, maps, mask) -> np.ndarray:
    """Adjoint of :func:`encode_volume` on (FE, PE, COIL, TIME) k-space."""
    return coil_combine(ifft1d(ifft1d(apply_mask(y, mask), axis=1), axis=0), maps)
