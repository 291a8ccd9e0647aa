"""Variable-splitting reconstruction of one FE row with fixed priors.

Each iteration updates three variables:

* ``b``: temporal signals pushed toward a rank-r subspace estimated once
  from the zero-filled image (a null-space projector stands in for the
  annihilating filterbank),
* ``d``: spatial signals shrunk in a sparsifying transform,
* ``x``: the closed-form data-consistency blend of both.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .consistency import data_consistency
from .operators import CoilMaps, adjoint_A
from .rows import map_rows
from .tensor import KTVolume

__all__ = [
    "ClassicalConfig",
    "TemporalProjector",
    "soft_threshold",
    "haar_forward",
    "haar_inverse",
    "diff_frame_forward",
    "diff_frame_adjoint",
    "estimate_temporal_subspace",
    "b_update",
    "d_update",
    "x_update",
    "solve_classical",
    "solve_classical_volume",
]

HAAR_1D = "HAAR_1D"
DIFF_1D = "DIFF_1D"


@dataclass(frozen=True)
class ClassicalConfig:
    lambda1: float = 0.05
    lambda2: float = 0.01
    mu1: float = 1.0
    mu2: float = 1.0
    iterations: int = 50
    rank: int = 3
    transform: str = HAAR_1D
    # "none" rejects non power-of-two PE under HAAR_1D; "symmetric" pads and crops
    extension: str = "none"
    # "verbatim" is the first-order b step; "exact" solves the b sub-problem
    b_mode: str = "verbatim"

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularization weights must be >= 0")
        if self.mu1 <= 0 or self.mu2 <= 0:
            raise ValueError("penalty weights must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if 2 * self.lambda1 / self.mu1 > 1:
            raise ValueError("2 * lambda1 / mu1 must not exceed 1")
        if self.transform not in (HAAR_1D, DIFF_1D):
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.extension not in ("none", "symmetric"):
            raise ValueError(f"unknown extension mode {self.extension!r}")
        if self.b_mode not in ("verbatim", "exact"):
            raise ValueError(f"unknown b_mode {self.b_mode!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text_or_dict):
        d = json.loads(text_or_dict) if isinstance(text_or_dict, str) else dict(text_or_dict)
        return cls(**d)


@dataclass(frozen=True, eq=False)
class TemporalProjector:
    """Orthonormal temporal basis ``basis`` (T x r) of the signal subspace.

    Temporal signals are the rows of the (PE, TIME) Casorati matrix; the
    signal part of a row ``c`` is ``c @ V @ V^H``.
    """

    basis: np.ndarray
    deficient: bool = False

    def signal(self, x):
        v = self.basis
        return (x @ v) @ v.conj().T

    def null(self, x):
        return x - self.signal(x)


def soft_threshold(x, rho):
    """Complex soft-thresholding max(|x| - rho, 0) * x / |x| (0 at x = 0)."""
    x = np.asarray(x)
    mag = np.abs(x)
    scale = np.maximum(mag - rho, 0.0) / np.where(mag > 0, mag, 1.0)
    return x * scale


def _is_pow2(n):
    return n > 0 and n & (n - 1) == 0


def haar_forward(x, axis=0):
    """Orthonormal full-depth 1-D Haar transform along ``axis`` (length 2^k).

    Output layout: [approximation, coarsest detail, ..., finest detail].
    """
    x = np.moveaxis(np.asarray(x), axis, 0)
    n = x.shape[0]
    if not _is_pow2(n):
        raise ValueError(f"Haar transform needs a power-of-two length, got {n}")
    details = []
    a = x
    while a.shape[0] > 1:
        even, odd = a[0::2], a[1::2]
        details.append((even - odd) / np.sqrt(2.0))
        a = (even + odd) / np.sqrt(2.0)
    out = np.concatenate([a] + details[::-1], axis=0)
    return np.moveaxis(out, 0, axis)


def haar_inverse(c, axis=0):
    c = np.moveaxis(np.asarray(c), axis, 0)
    n = c.shape[0]
    if not _is_pow2(n):
        raise ValueError(f"Haar transform needs a power-of-two length, got {n}")
    a = c[:1]
    pos = 1
    while pos < n:
        det = c[pos:2 * pos]
        nxt = np.empty((2 * pos,) + c.shape[1:], dtype=np.result_type(c, float))
        nxt[0::2] = (a + det) / np.sqrt(2.0)
        nxt[1::2] = (a - det) / np.sqrt(2.0)
        a = nxt
        pos *= 2
    return np.moveaxis(a, 0, axis)


def diff_frame_forward(x, axis=0):
    """Undecimated one-level Haar frame: averages and forward differences.

    Circular boundary; returns an extra leading axis of size 2. The frame is
    Parseval (D^H D = I) for any length.
    """
    x = np.asarray(x)
    sx = np.roll(x, -1, axis=axis)
    return np.stack([(x + sx) / 2.0, (x - sx) / 2.0])


def diff_frame_adjoint(y, axis=0):
    a, d = y[0], y[1]
    return (a + np.roll(a, 1, axis=axis)) / 2.0 + (d - np.roll(d, 1, axis=axis)) / 2.0


def estimate_temporal_subspace(x0, rank, tol=1e-10) -> TemporalProjector:
    """Leading right singular vectors of the (PE, TIME) Casorati matrix ``x0``.

    When ``x0`` has fewer than ``rank`` significant singular values the SVD's
    orthonormal completion fills the basis and ``deficient`` is set.
    """
    x0 = np.asarray(x0)
    t = x0.shape[-1]
    if not 1 <= rank < t:
        raise ValueError(f"rank must satisfy 1 <= r < T={t}, got {rank}")
    _, sv, vh = np.linalg.svd(x0, full_matrices=True)
    basis = vh[:rank].conj().T
    sv = np.concatenate([sv, np.zeros(max(0, t - sv.size))])
    deficient = bool(sv[0] == 0 or sv[rank - 1] <= tol * sv[0])
    return TemporalProjector(np.ascontiguousarray(basis), deficient)


def b_update(x, proj: TemporalProjector, lambda1, mu1, mode="verbatim"):
    """Temporal step: ``v - (2 lambda1 / mu1) P_null v`` for every temporal signal.

    ``mode="exact"`` returns the minimizer ``(mu1 I + 2 lambda1 P_null)^-1 mu1 v``
    instead, i.e. ``P_sig v + mu1 / (mu1 + 2 lambda1) P_null v``.
    """
    null = proj.null(x)
    if mode == "exact":
        return x - null + (mu1 / (mu1 + 2.0 * lambda1)) * null
    return x - (2.0 * lambda1 / mu1) * null


def d_update(x, transform=HAAR_1D, lambda2=0.0, mu2=1.0, extension="none"):
    """Spatial step: ``D^H soft(D x_t; lambda2 / mu2)`` for every frame ``x_t``.

    ``x`` is (PE, TIME); ``D`` acts along PE.
    """
    if mu2 <= 0:
        raise ValueError("mu2 must be positive")
    rho = lambda2 / mu2
    x = np.asarray(x)
    if transform == DIFF_1D:
        return diff_frame_adjoint(soft_threshold(diff_frame_forward(x, axis=0), rho), axis=0)
    n = x.shape[0]
    if _is_pow2(n):
        return haar_inverse(soft_threshold(haar_forward(x, axis=0), rho), axis=0)
    if extension != "symmetric":
        raise ValueError(f"HAAR_1D needs a power-of-two PE extent (got {n}); "
                         "use DIFF_1D or extension='symmetric'")
    n2 = 1 << (n - 1).bit_length()
    pad = n2 - n
    xe = np.pad(x, ((pad // 2, pad - pad // 2), (0, 0)), mode="symmetric")
    y = haar_inverse(soft_threshold(haar_forward(xe, axis=0), rho), axis=0)
    return y[pad // 2:pad // 2 + n]


def x_update(z, b, d, maps, mask, mu1, mu2):
    """Data-consistency step (closed form in coil k-space)."""
    return data_consistency(z, b, d, maps, mask, mu1, mu2)


def solve_classical(z, maps, mask, cfg: ClassicalConfig = ClassicalConfig()):
    """Reconstruct one FE row from its k-t data ``z`` (PE, COIL, TIME)."""
    x = adjoint_A(z, maps, mask)
    proj = estimate_temporal_subspace(x, cfg.rank)
    for _ in range(cfg.iterations):
        b = b_update(x, proj, cfg.lambda1, cfg.mu1, mode=cfg.b_mode)
        d = d_update(x, cfg.transform, cfg.lambda2, cfg.mu2, cfg.extension)
        x = x_update(z, b, d, maps, mask, cfg.mu1, cfg.mu2)
    return x


def solve_classical_volume(hybrid: KTVolume, maps: CoilMaps, mask,
                           cfg: ClassicalConfig = ClassicalConfig(), threads=1) -> KTVolume:
    """Solve every FE row of a HYBRID volume independently and stitch."""
    return map_rows(hybrid, maps, lambda z, s: solve_classical(z, s, mask, cfg), threads)
