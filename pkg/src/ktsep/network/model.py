"""The unrolled separable network: parameters, forward pass, loss, gradients.

One phase maps the current estimate ``x`` (batch, PE, TIME) to

    b = x - N1(x)                       temporal module, convs along TIME
    d = N3(soft(N2(x), theta))          spatial module, convs along PE
    x' = DC(z, b, d; mu1, mu2)          closed-form data consistency

with complex images carried as two real channels inside the convolution
stacks. ``x`` starts at the zero-filled image ``A* z``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..consistency import data_consistency, data_consistency_backward
from ..operators import _maps, _mask, adjoint_A
from .layers import (Conv1DLayer, sigmoid, soft_backward, soft_forward, softplus,
                     softplus_inverse, stack_backward, stack_forward)

__all__ = [
    "PhaseParams",
    "NetworkParams",
    "init_network",
    "count_parameters",
    "channels_of",
    "complex_of",
    "temporal_module",
    "spatial_module",
    "dc_module",
    "network_forward",
    "loss",
    "loss_and_grad",
    "backward",
    "kink_margin",
]

ESTIMATE = "ESTIMATE"
TEMPORAL_OUT = "TEMPORAL_OUT"
BOTH = "BOTH"
TEMPORAL_ONLY = "TEMPORAL"
SPATIAL_ONLY = "SPATIAL"


@dataclass(eq=False)
class PhaseParams:
    n1: list[Conv1DLayer]
    n2: list[Conv1DLayer]
    n3: list[Conv1DLayer]
    theta_raw: np.ndarray = field(default_factory=lambda: np.array(softplus_inverse(0.001)))
    mu1: np.ndarray = field(default_factory=lambda: np.array(1.0))
    mu2: np.ndarray = field(default_factory=lambda: np.array(1.0))

    def __post_init__(self):
        self.theta_raw = np.array(self.theta_raw, dtype=np.float64)
        self.mu1 = np.array(self.mu1, dtype=np.float64)
        self.mu2 = np.array(self.mu2, dtype=np.float64)

    @property
    def theta(self) -> float:
        return float(softplus(self.theta_raw))

    def set_theta(self, value):
        self.theta_raw[...] = softplus_inverse(value)

    def named_arrays(self, prefix=""):
        for stack in ("n1", "n2", "n3"):
            for i, layer in enumerate(getattr(self, stack)):
                yield f"{prefix}{stack}.{i}.kernel", layer.kernel
                yield f"{prefix}{stack}.{i}.bias", layer.bias
        yield f"{prefix}theta_raw", self.theta_raw
        yield f"{prefix}mu1", self.mu1
        yield f"{prefix}mu2", self.mu2

    def copy(self):
        return PhaseParams([l.copy() for l in self.n1], [l.copy() for l in self.n2],
                           [l.copy() for l in self.n3], self.theta_raw.copy(),
                           self.mu1.copy(), self.mu2.copy())


@dataclass(eq=False)
class NetworkParams:
    """All learnable weights of the K-phase network plus build metadata.

    ``spatial_input`` selects what feeds N2: the current estimate
    (``ESTIMATE``) or the N1 output (``TEMPORAL_OUT``). ``prior`` switches
    off one module for ablations (``TEMPORAL`` or ``SPATIAL`` only).
    """

    phases: list[PhaseParams]
    spatial_input: str = ESTIMATE
    prior: str = BOTH
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.phases:
            raise ValueError("need at least one phase")
        if self.spatial_input not in (ESTIMATE, TEMPORAL_OUT):
            raise ValueError(f"unknown spatial_input {self.spatial_input!r}")
        if self.prior not in (BOTH, TEMPORAL_ONLY, SPATIAL_ONLY):
            raise ValueError(f"unknown prior {self.prior!r}")
        if self.spatial_input == TEMPORAL_OUT and self.prior == SPATIAL_ONLY:
            raise ValueError("TEMPORAL_OUT feeds N1 output to N2 and needs the temporal module")
        sig = [self._signature(p) for p in self.phases]
        if any(s != sig[0] for s in sig):
            raise ValueError("all phases must share one layer structure")

    @staticmethod
    def _signature(p):
        return tuple(tuple((l.kernel.shape, l.has_relu) for l in getattr(p, s))
                     for s in ("n1", "n2", "n3"))

    @property
    def K(self):
        return len(self.phases)

    def named_arrays(self):
        for k, p in enumerate(self.phases):
            yield from p.named_arrays(f"phase{k}.")

    def copy(self):
        return NetworkParams([p.copy() for p in self.phases], self.spatial_input,
                             self.prior, dict(self.metadata))

    def layer_plan(self):
        """Per-stack list of (in, out, kernel_size, has_relu), shared by all phases."""
        p = self.phases[0]
        return {s: [[l.in_channels, l.out_channels, l.kernel.shape[2], l.has_relu]
                    for l in getattr(p, s)] for s in ("n1", "n2", "n3")}


def default_plan(filters=48, kernel_size=3, n1_layers=6, n2_layers=3, n3_layers=3):
    """Layer plan (in, out, k, relu) per stack.

    N1 goes 2 -> F -> ... -> 2 with a linear last layer. N2 goes 2 -> F -> F
    with a linear last layer so the threshold sees signed features. N3 goes
    F -> F -> 2 with a linear last layer.
    """
    f, k = filters, kernel_size

    def chain(c_in, c_out, n):
        widths = [c_in] + [f] * (n - 1) + [c_out]
        return [[widths[i], widths[i + 1], k, i < n - 1] for i in range(n)]

    return {"n1": chain(2, 2, n1_layers), "n2": chain(2, f, n2_layers), "n3": chain(f, 2, n3_layers)}


def init_network(K=10, filters=48, kernel_size=3, seed=0, plan=None, spatial_input=ESTIMATE,
                 prior=BOTH, theta0=0.001, mu0=1.0, **metadata) -> NetworkParams:
    plan = plan or default_plan(filters, kernel_size)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x6E6574])))
    phases = []
    for _ in range(K):
        stacks = {s: [Conv1DLayer.init(rng, ci, co, ks, relu) for ci, co, ks, relu in plan[s]]
                  for s in ("n1", "n2", "n3")}
        phases.append(PhaseParams(**stacks, theta_raw=softplus_inverse(theta0), mu1=mu0, mu2=mu0))
    meta = {"K": K, "filters": filters, "kernel_size": kernel_size, "precision": "float64",
            "seed": seed, "padding": "zero", "conv": "cross-correlation"}
    meta.update(metadata)
    return NetworkParams(phases, spatial_input, prior, meta)


def count_parameters(params: NetworkParams) -> int:
    """Kernel weights + biases + theta + mu1 + mu2 over all phases."""
    return sum(a.size for _, a in params.named_arrays())


# -- complex <-> two real channels -------------------------------------------------

def channels_of(x):
    """Complex (..., PE, TIME) -> real (2, ..., PE, TIME)."""
    x = np.asarray(x)
    return np.stack([x.real, x.imag])


def complex_of(c):
    c = np.asarray(c)
    if c.shape[0] != 2:
        raise ValueError(f"expected 2 channels, got {c.shape[0]}")
    return c[0] + 1j * c[1]


def _to_time_seq(c):
    # (C, B, N, T) -> (C, B*N, T)
    return c.reshape(c.shape[0], -1, c.shape[-1])


def _from_time_seq(s, b, n, t):
    return s.reshape(s.shape[0], b, n, t)


def _to_pe_seq(c):
    # (C, B, N, T) -> (C, B*T, N)
    ch, b, n, t = c.shape
    return np.ascontiguousarray(c.transpose(0, 1, 3, 2)).reshape(ch, b * t, n)


def _from_pe_seq(s, b, n, t):
    return s.reshape(s.shape[0], b, t, n).transpose(0, 1, 3, 2)


# -- modules --------------------------------------------------------------------

def _temporal_fwd(x, n1):
    bsz, n, t = x.shape
    h, caches = stack_forward(n1, _to_time_seq(channels_of(x)))
    proj = complex_of(_from_time_seq(h, bsz, n, t))
    return x - proj, proj, caches


def _temporal_bwd(n1, g_proj, caches):
    # g_proj: gradient w.r.t. the N1 output (complex); returns grad w.r.t. x via N1
    bsz, n, t = g_proj.shape
    gh = _to_time_seq(channels_of(g_proj))
    gin, grads = stack_backward(n1, gh, caches)
    return complex_of(_from_time_seq(gin, bsz, n, t)), grads


def _spatial_fwd(x, n2, theta, n3):
    bsz, n, t = x.shape
    g, c2 = stack_forward(n2, _to_pe_seq(channels_of(x)))
    u, active = soft_forward(g, theta)
    h, c3 = stack_forward(n3, u)
    if h.shape[0] != 2:
        raise ValueError(f"N3 must emit 2 channels, got {h.shape[0]}")
    d = complex_of(_from_pe_seq(h, bsz, n, t))
    return d, (g, active, c2, c3)


def _spatial_bwd(n2, n3, gd, cache):
    g, active, c2, c3 = cache
    bsz, n, t = gd.shape
    gh = _to_pe_seq(channels_of(gd))
    gu, grads3 = stack_backward(n3, gh, c3)
    gg, gtheta = soft_backward(gu, g, active)
    gin, grads2 = stack_backward(n2, gg, c2)
    return complex_of(_from_pe_seq(gin, bsz, n, t)), grads2, grads3, gtheta


def _batched(x):
    x = np.asarray(x)
    return (x[None], True) if x.ndim == 2 else (x, False)


def temporal_module(x, n1):
    """``x - N1(x)`` with N1 run along TIME at every PE position."""
    xb, single = _batched(x)
    b, _, _ = _temporal_fwd(xb, n1)
    return b[0] if single else b


def spatial_module(x, n2, theta, n3):
    """``N3(soft(N2(x), theta))`` with the stacks run along PE in every frame."""
    if theta < 0:
        raise ValueError("theta must be non-negative")
    xb, single = _batched(x)
    d, _ = _spatial_fwd(xb, n2, theta, n3)
    return d[0] if single else d


def dc_module(z, b, d, maps, mask, mu1, mu2):
    """Same blend as the classical x-update."""
    return data_consistency(z, b, d, maps, mask, mu1, mu2)


# -- network --------------------------------------------------------------------

def _prep(z, maps, mask):
    z = np.asarray(z, dtype=np.complex128)
    single = z.ndim == 3
    if single:
        z = z[None]
    s = _maps(maps)
    if s.ndim == 2:
        s = np.broadcast_to(s, (z.shape[0],) + s.shape)
    m = _mask(mask)
    return z, s, m, single


def _phase_forward(params: NetworkParams, p: PhaseParams, x, z, s, m):
    use_t = params.prior in (BOTH, TEMPORAL_ONLY)
    use_s = params.prior in (BOTH, SPATIAL_ONLY)
    cache = {}
    b = d = None
    if use_t:
        b, proj, cache["t"] = _temporal_fwd(x, p.n1)
    if use_s:
        sin = proj if params.spatial_input == TEMPORAL_OUT else x
        d, cache["s"] = _spatial_fwd(sin, p.n2, p.theta, p.n3)
    mu1 = float(p.mu1) if use_t else 0.0
    mu2 = float(p.mu2) if use_s else 0.0
    x_new, cache["dc"] = data_consistency(z, b, d, s, m, mu1, mu2, return_cache=True)
    return x_new, cache


def _phase_backward(params: NetworkParams, p: PhaseParams, gx_new, cache, grads, prefix):
    use_t = params.prior in (BOTH, TEMPORAL_ONLY)
    use_s = params.prior in (BOTH, SPATIAL_ONLY)
    gb, gd, gmu1, gmu2 = data_consistency_backward(gx_new, cache["dc"])
    gx = np.zeros_like(gx_new)
    g_proj = np.zeros_like(gx_new)
    if use_s:
        gsin, g2, g3, gtheta = _spatial_bwd(p.n2, p.n3, gd, cache["s"])
        _put(grads, prefix + "n2", g2)
        _put(grads, prefix + "n3", g3)
        grads[prefix + "theta_raw"] += gtheta * float(sigmoid(p.theta_raw))
        grads[prefix + "mu2"] += gmu2
        if params.spatial_input == TEMPORAL_OUT:
            g_proj += gsin
        else:
            gx += gsin
    if use_t:
        gx += gb
        g_proj -= gb
        gin, g1 = _temporal_bwd(p.n1, g_proj, cache["t"])
        gx += gin
        _put(grads, prefix + "n1", g1)
        grads[prefix + "mu1"] += gmu1
    return gx


def _put(grads, prefix, layer_grads):
    for i, (gk, gb) in enumerate(layer_grads):
        grads[f"{prefix}.{i}.kernel"] += gk
        grads[f"{prefix}.{i}.bias"] += gb


def _forward_all(z, s, m, params):
    x = adjoint_A(z, s, m)
    outs, caches = [], []
    for p in params.phases:
        x, cache = _phase_forward(params, p, x, z, s, m)
        outs.append(x)
        caches.append(cache)
    return outs, caches


def network_forward(z, maps, mask, params: NetworkParams):
    """Run all K phases from ``x0 = A* z``; returns the K intermediate images.

    ``z`` is one k-t slice (PE, COIL, TIME) or a batch (B, PE, COIL, TIME);
    ``maps`` is (PE, COIL) or per-sample (B, PE, COIL).
    """
    z, s, m, single = _prep(z, maps, mask)
    outs, _ = _forward_all(z, s, m, params)
    return [o[0] for o in outs] if single else outs


def loss(outputs, refs, reduction="mean"):
    """Mean over phases and samples of the squared l2 error.

    ``outputs`` is a list of K arrays (C, PE, TIME) or (PE, TIME).
    """
    refs = np.asarray(refs)
    k = len(outputs)
    c = refs.shape[0] if refs.ndim == 3 else 1
    total = 0.0
    for o in outputs:
        if np.shape(o) != refs.shape:
            raise ValueError(f"output shape {np.shape(o)} != reference shape {refs.shape}")
        total += float(np.sum(np.abs(o - refs) ** 2))
    if reduction == "sum":
        return total
    if reduction != "mean":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total / (k * c)


def loss_and_grad(z, maps, mask, params: NetworkParams, refs, reduction="mean", denom=None):
    """Loss and its gradient w.r.t. every named parameter array.

    ``denom`` overrides the 1/(K C) normalization (used when a mini-batch
    is split across workers).
    """
    z, s, m, single = _prep(z, maps, mask)
    refs = np.asarray(refs)
    if single:
        refs = refs[None]
    outs, caches = _forward_all(z, s, m, params)
    if denom is None:
        denom = params.K * z.shape[0] if reduction == "mean" else 1.0
    value = sum(float(np.sum(np.abs(o - refs) ** 2)) for o in outs) / denom
    grads = {name: np.zeros_like(a) for name, a in params.named_arrays()}
    gx = np.zeros_like(outs[-1])
    for k in range(params.K - 1, -1, -1):
        gx = gx + (2.0 / denom) * (outs[k] - refs)
        gx = _phase_backward(params, params.phases[k], gx, caches[k], grads, f"phase{k}.")
    return value, grads


def backward(z, maps, mask, params: NetworkParams, refs, reduction="mean"):
    """Gradient of :func:`loss` over all phases w.r.t. every parameter."""
    return loss_and_grad(z, maps, mask, params, refs, reduction)[1]


def kink_margin(z, maps, mask, params: NetworkParams):
    """Smallest distance of any ReLU input from 0 or soft-threshold input from +-theta."""
    z, s, m, _ = _prep(z, maps, mask)
    _, caches = _forward_all(z, s, m, params)
    margin = np.inf
    for p, cache in zip(params.phases, caches):
        for key in ("t", "s"):
            if key not in cache:
                continue
            layer_caches = cache[key] if key == "t" else cache[key][2] + cache[key][3]
            layers = p.n1 if key == "t" else p.n2 + p.n3
            for layer, (_, pre, _) in zip(layers, layer_caches):
                if layer.has_relu:
                    margin = min(margin, float(np.min(np.abs(pre))))
        if "s" in cache:
            margin = min(margin, float(np.min(np.abs(np.abs(cache["s"][0]) - p.theta))))
    return margin
