"""Closed-form data-consistency blend in coil k-space, with its reverse pass.

At sampled positions the coil k-space of the update is
``(z + mu1 F S b + mu2 F S d) / (1 + mu1 + mu2)``; elsewhere it is
``(mu1 F S b + mu2 F S d) / (mu1 + mu2)``. For a single unit coil this is
the exact minimizer of
``||z - A x||^2 + mu1 ||b - x||^2 + mu2 ||d - x||^2``.
"""
from __future__ import annotations

import numpy as np

from .operators import _mask, _maps, coil_combine, coil_expand, fft1d, ifft1d

__all__ = ["data_consistency", "data_consistency_backward"]


def _to_k(x, s):
    return fft1d(coil_expand(x, s), axis=-3)


def _from_k(k, s):
    return coil_combine(ifft1d(k, axis=-3), s)


def data_consistency(z, b, d, maps, mask, mu1, mu2, return_cache=False):
    """Blend measured data ``z`` with two image estimates ``b`` and ``d``.

    Shapes: ``z`` (..., PE, COIL, TIME); ``b``, ``d`` (..., PE, TIME).
    ``d`` may be ``None`` when ``mu2 == 0`` (and likewise ``b``).
    """
    mu1 = float(mu1)
    mu2 = float(mu2)
    if mu1 < 0 or mu2 < 0:
        raise ValueError(f"penalty weights must be non-negative, got {mu1}, {mu2}")
    if mu1 + mu2 <= 0:
        raise ValueError("mu1 + mu2 must be positive")
    s = _maps(maps)
    m = _mask(mask)[:, None, :]
    z = np.asarray(z)
    kb = _to_k(b, s) if b is not None else 0.0
    kd = _to_k(d, s) if d is not None else 0.0
    prior = mu1 * kb + mu2 * kd
    den = np.where(m, 1.0 + mu1 + mu2, mu1 + mu2)
    k = np.where(m, z + prior, prior) / den
    x = _from_k(k, s)
    if return_cache:
        return x, {"kb": kb, "kd": kd, "k": k, "den": den, "s": s, "m": m,
                   "mu1": mu1, "mu2": mu2}
    return x


def data_consistency_backward(gx, cache):
    """Gradients w.r.t. ``b``, ``d``, ``mu1``, ``mu2`` given dL/dx.

    Complex gradients use the convention g = dL/dRe + i dL/dIm, so a
    C-linear map M propagates g -> M^H g.
    """
    s, den = cache["s"], cache["den"]
    gk = _to_k(gx, s)  # adjoint of S* F^-1 is F S
    g_prior = gk / den
    gb = _from_k(cache["mu1"] * g_prior, s)
    gd = _from_k(cache["mu2"] * g_prior, s)
    k = cache["k"]
    gmu1 = float(np.sum(np.real(np.conj(g_prior) * (cache["kb"] - k))))
    gmu2 = float(np.sum(np.real(np.conj(g_prior) * (cache["kd"] - k))))
    return gb, gd, gmu1, gmu2
