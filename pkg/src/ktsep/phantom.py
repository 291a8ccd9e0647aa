"""Pulsating-ellipse dynamic phantoms, simulated coil maps and acquisition."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .operators import CoilMaps, SamplingMask, apply_mask, coil_expand, fft1d, _mask
from .tensor import Domain, IMAGE_AXES, KSPACE_AXES, KTVolume

__all__ = [
    "Ellipse",
    "PhantomSpec",
    "cardiac_spec",
    "gen_phantom",
    "gen_coil_maps",
    "simulate_acquisition",
]


@dataclass(frozen=True)
class Ellipse:
    """An ellipse in normalized coordinates ([-1, 1] across each axis).

    ``center`` and ``semi_axes`` are (fe, pe) pairs. Each frame scales the
    semi-axes by ``1 + amplitude * sin(2 pi t / T + phase)``.
    """

    center: tuple[float, float]
    semi_axes: tuple[float, float]
    intensity: complex = 1.0
    amplitude: float = 0.0
    phase: float = 0.0

    def to_json(self):
        d = asdict(self)
        d["intensity"] = [complex(self.intensity).real, complex(self.intensity).imag]
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        inten = d.get("intensity", 1.0)
        if isinstance(inten, (list, tuple)):
            inten = complex(inten[0], inten[1])
        d["intensity"] = inten
        d["center"] = tuple(d["center"])
        d["semi_axes"] = tuple(d["semi_axes"])
        return cls(**d)


@dataclass(frozen=True)
class PhantomSpec:
    m: int
    n: int
    t: int
    j: int = 4
    features: tuple[Ellipse, ...] = field(default_factory=tuple)
    background: complex = 0.0
    noise_std: float = 0.0
    seed: int = 0
    # sub-pixels per axis for area-weighted edges
    supersample: int = 4

    def __post_init__(self):
        if self.supersample < 1:
            raise ValueError("supersample must be >= 1")
        if min(self.m, self.n) < 4:
            raise ValueError("spatial extents must be >= 4")
        if self.t < 1 or self.j < 1:
            raise ValueError("t and j must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        object.__setattr__(self, "features", tuple(self.features))
        for e in self.features:
            if min(e.semi_axes) <= 0:
                raise ValueError(f"degenerate ellipse {e}")
            if abs(e.amplitude) >= 1:
                raise ValueError(f"pulsation amplitude {e.amplitude} collapses the ellipse")

    def to_json(self) -> str:
        d = asdict(self)
        d["features"] = [e.to_json() for e in self.features]
        bg = complex(self.background)
        d["background"] = [bg.real, bg.imag]
        return json.dumps(d, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text_or_dict):
        d = json.loads(text_or_dict) if isinstance(text_or_dict, str) else dict(text_or_dict)
        d["features"] = tuple(Ellipse.from_json(e) for e in d.get("features", ()))
        bg = d.get("background", 0.0)
        if isinstance(bg, (list, tuple)):
            bg = complex(bg[0], bg[1])
        d["background"] = bg
        return cls(**d)


def cardiac_spec(m=32, n=32, t=8, j=4, seed=0, noise_std=0.0, jitter=True) -> PhantomSpec:
    """A torso / myocardium / blood-pool layout, randomly perturbed by ``seed``.

    With ``jitter=False`` the nominal layout is returned unchanged.
    """
    rng = np.random.default_rng(seed)

    def jit(v, s):
        return v + (rng.uniform(-s, s) if jitter else 0.0)

    hc = (jit(-0.05, 0.1), jit(0.1, 0.1))
    hr = jit(0.32, 0.05)
    amp = jit(0.12, 0.04)
    ph = jit(0.0, np.pi)
    features = (
        Ellipse((0.0, 0.0), (0.85, 0.72), jit(0.35, 0.05)),
        Ellipse((jit(0.35, 0.05), jit(-0.4, 0.05)), (0.28, 0.18), jit(0.25, 0.05)),
        Ellipse(hc, (hr, hr * jit(0.9, 0.1)), jit(0.45, 0.05), amp, ph),
        Ellipse(hc, (0.6 * hr, 0.6 * hr), jit(0.4, 0.05), 1.8 * amp, ph),
        Ellipse((jit(-0.45, 0.05), jit(0.45, 0.05)), (0.1, 0.12), jit(0.5, 0.1)),
    )
    return PhantomSpec(m, n, t, j, features, background=0.0, noise_std=noise_std, seed=seed)


def _subpixel_grid(n, ss):
    centers = np.linspace(-1.0, 1.0, n)
    step = centers[1] - centers[0]
    off = ((np.arange(ss) + 0.5) / ss - 0.5) * step
    return (centers[:, None] + off[None, :]).ravel()


def gen_phantom(spec: PhantomSpec) -> KTVolume:
    """Render the (FE, PE, TIME) image series.

    Pixel values are the area-weighted coverage of each ellipse, estimated
    on a ``supersample x supersample`` sub-pixel grid, times its intensity.
    """
    ss = spec.supersample
    fe = _subpixel_grid(spec.m, ss)[:, None]
    pe = _subpixel_grid(spec.n, ss)[None, :]
    out = np.full((spec.m, spec.n, spec.t), spec.background, dtype=np.complex128)
    for tau in range(spec.t):
        for e in spec.features:
            s = 1.0 + e.amplitude * np.sin(2 * np.pi * tau / spec.t + e.phase)
            a, b = e.semi_axes[0] * s, e.semi_axes[1] * s
            inside = ((fe - e.center[0]) / a) ** 2 + ((pe - e.center[1]) / b) ** 2 <= 1.0
            cover = inside.reshape(spec.m, ss, spec.n, ss).mean(axis=(1, 3))
            out[:, :, tau] += cover * complex(e.intensity)
    return KTVolume(out, IMAGE_AXES, domain=Domain.IMAGE)


def gen_coil_maps(m, n, j, seed=0, width=0.8) -> CoilMaps:
    """Smooth Gaussian-lobe coils placed around the field of view.

    Lobe centers sit on a circle of radius 1.3 (outside the unit square)
    with a seed-dependent rotation; each map carries a linear phase ramp.
    """
    rng = np.random.default_rng(seed)
    rot = rng.uniform(0, 2 * np.pi)
    fe = np.linspace(-1.0, 1.0, m)[:, None, None]
    pe = np.linspace(-1.0, 1.0, n)[None, :, None]
    ang = rot + 2 * np.pi * np.arange(j) / j
    cx, cy = 1.3 * np.cos(ang), 1.3 * np.sin(ang)
    dist2 = (fe - cx) ** 2 + (pe - cy) ** 2
    ramp = rng.uniform(-0.5, 0.5, size=(2, j))
    phase = ramp[0] * np.pi * fe + ramp[1] * np.pi * pe + ang
    raw = np.exp(-dist2 / (2 * width**2)) * np.exp(1j * phase)
    return CoilMaps.normalized(raw)


def simulate_acquisition(image: KTVolume, maps: CoilMaps, mask, noise_std=0.0, seed=0) -> KTVolume:
    """Coil k-space ``U (F_2D S x + noise)``.

    ``noise_std`` is relative to the peak noiseless k-space magnitude:
    complex Gaussian samples with E|n|^2 = (noise_std * peak)^2 are added
    at sampled positions only.
    """
    image.expect_axes(*IMAGE_AXES)
    m = _mask(mask)
    x = image.data
    s = maps.data if isinstance(maps, CoilMaps) else CoilMaps(maps).data
    if s.shape[:2] != x.shape[:2]:
        raise ValueError(f"maps {s.shape[:2]} and image {x.shape[:2]} spatial extents differ")
    if m.shape != x.shape[1:]:
        raise ValueError(f"mask {m.shape} does not match image (PE, TIME) {x.shape[1:]}")
    k = fft1d(fft1d(coil_expand(x, s), axis=0), axis=1)
    if noise_std > 0:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x6E6F])))
        sigma = noise_std * np.max(np.abs(k))
        noise = rng.standard_normal(k.shape + (2,)) @ np.array([1.0, 1j]) * (sigma / np.sqrt(2))
        k = k + noise
    return KTVolume(apply_mask(k, m), KSPACE_AXES, domain=Domain.KSPACE)
