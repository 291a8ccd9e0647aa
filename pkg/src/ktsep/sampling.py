"""k-t undersampling patterns (PE x TIME) and their audit.

All randomness comes from numpy's Philox 4x64 counter-based generator,
keyed by ``SeedSequence([seed, frame])``, so a given :class:`MaskSpec`
yields the same mask on every platform.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .operators import SamplingMask
from .tensor import Axis, ComplexTensor, load_tensor, save_tensor

__all__ = [
    "MaskSpec",
    "gen_random_kt",
    "gen_vista_like",
    "generate_mask",
    "audit_mask",
    "center_lines",
    "save_mask",
    "load_mask",
]

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
RANDOM_KT = "RANDOM_KT"
VISTA_LIKE = "VISTA_LIKE"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def default_n_center(n_pe: int) -> int:
    return max(1, _round_half_up(n_pe / 48))


@dataclass(frozen=True)
class MaskSpec:
    n_pe: int
    n_time: int
    af: float
    pattern: str = RANDOM_KT
    seed: int = 0
    n_center: int | None = None
    # VISTA_LIKE density p(k) ~ (1 + |k - kc| / sigma)^-power; sigma in PE lines,
    # None means n_pe / 8.
    sigma: float | None = None
    power: float = 1.0

    def __post_init__(self):
        if self.n_pe < 1 or self.n_time < 1:
            raise ValueError("n_pe and n_time must be positive")
        if not self.af >= 1:
            raise ValueError(f"acceleration factor must be >= 1, got {self.af}")
        if self.pattern not in (RANDOM_KT, VISTA_LIKE):
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.n_center is None:
            object.__setattr__(self, "n_center", default_n_center(self.n_pe))
        if self.n_center < 1:
            raise ValueError("n_center must be >= 1")
        if self.n_pe // self.af < self.n_center:
            raise ValueError(f"floor(n_pe / af) = {int(self.n_pe // self.af)} "
                             f"is smaller than n_center = {self.n_center}")

    @property
    def budget(self) -> int:
        """Lines per frame, round(n_pe / af)."""
        return min(self.n_pe, _round_half_up(self.n_pe / self.af))

    @property
    def density_sigma(self) -> float:
        return self.sigma if self.sigma is not None else self.n_pe / 8.0


def center_lines(n_pe: int, n_center: int) -> np.ndarray:
    c = n_pe // 2
    start = c - n_center // 2
    return np.arange(start, start + n_center)


def _frame_rng(seed: int, frame: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, frame])))


def _make(spec: MaskSpec, data: np.ndarray, **extra) -> SamplingMask:
    return SamplingMask(data, af=float(spec.af), pattern=spec.pattern, seed=spec.seed,
                        n_center=spec.n_center, extra=extra)


def gen_random_kt(spec: MaskSpec) -> SamplingMask:
    """Center lines plus uniformly drawn lines, independently per frame."""
    if spec.pattern != RANDOM_KT:
        spec = MaskSpec(**{**asdict(spec), "pattern": RANDOM_KT})
    budget = spec.budget
    center = center_lines(spec.n_pe, spec.n_center)
    rest = np.setdiff1d(np.arange(spec.n_pe), center)
    mask = np.zeros((spec.n_pe, spec.n_time), dtype=bool)
    for t in range(spec.n_time):
        picks = _frame_rng(spec.seed, t).choice(rest, size=budget - spec.n_center, replace=False)
        mask[center, t] = True
        mask[picks, t] = True
    return _make(spec, mask)


def _nearest_free(k: int, taken: np.ndarray, allowed: np.ndarray) -> int:
    # Search outward, lower index first on ties.
    n = len(taken)
    for r in range(n):
        for cand in (k - r, k + r):
            if 0 <= cand < n and allowed[cand] and not taken[cand]:
                return cand
    raise RuntimeError("no free PE line left")


def gen_vista_like(spec: MaskSpec) -> SamplingMask:
    """Variable-density pattern with golden-ratio shifted strata per frame.

    Each frame draws its non-center lines by inverting the CDF of
    ``p(k) ~ (1 + |k - kc| / sigma)^-power`` at stratified quantiles
    ``(i + phi_t) / m``, where ``phi_t`` advances by the golden ratio
    from frame to frame. Collisions move to the nearest free line.
    This approximates the behaviour of VISTA (uniform coverage over
    time, denser center) without its point-spread optimization.
    """
    if spec.pattern != VISTA_LIKE:
        spec = MaskSpec(**{**asdict(spec), "pattern": VISTA_LIKE})
    n, budget = spec.n_pe, spec.budget
    center = center_lines(n, spec.n_center)
    allowed = np.ones(n, dtype=bool)
    allowed[center] = False
    kc = n // 2
    p = (1.0 + np.abs(np.arange(n) - kc) / spec.density_sigma) ** (-spec.power)
    p[~allowed] = 0.0
    cdf = np.cumsum(p) / p.sum()
    m = budget - spec.n_center
    # frame key 2**32 - 1 is reserved for the global phase draw
    phi0 = _frame_rng(spec.seed, 2**32 - 1).random()
    mask = np.zeros((n, spec.n_time), dtype=bool)
    for t in range(spec.n_time):
        mask[center, t] = True
        if m == 0:
            continue
        phi = (phi0 + t * GOLDEN) % 1.0
        taken = np.zeros(n, dtype=bool)
        for i in range(m):
            q = (i + phi) / m
            k = int(np.searchsorted(cdf, q, side="right"))
            k = min(k, n - 1)
            k = _nearest_free(k, taken, allowed)
            taken[k] = True
        mask[taken, t] = True
    return _make(spec, mask, sigma=spec.density_sigma, power=spec.power)


def generate_mask(spec: MaskSpec) -> SamplingMask:
    if spec.pattern == RANDOM_KT:
        return gen_random_kt(spec)
    return gen_vista_like(spec)


def audit_mask(mask) -> dict:
    """Realized acceleration, per-frame line counts and adjacent-frame overlap."""
    data = mask.data if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=bool)
    n_pe, n_time = data.shape
    counts = data.sum(axis=0)
    total = int(counts.sum())
    budget = counts.max()
    if n_time > 1:
        inter = (data[:, 1:] & data[:, :-1]).sum(axis=0)
        overlap = float(np.mean(inter / budget))
    else:
        overlap = 1.0
    return {
        "realized_af": n_pe * n_time / total,
        "per_frame_counts": counts.astype(int).tolist(),
        "temporal_overlap_fraction": overlap,
    }


def save_mask(mask: SamplingMask, path) -> None:
    """Boolean KTB tensor at ``path`` plus a JSON sidecar ``<path>.json``."""
    save_tensor(mask.to_tensor(), path)
    Path(str(path) + ".json").write_text(json.dumps(mask.metadata(), sort_keys=True, indent=1))


def load_mask(path) -> SamplingMask:
    t = load_tensor(path)
    if t.axes != (Axis.PE, Axis.TIME) or t.data.dtype != np.bool_:
        raise ValueError(f"{path}: not a boolean (PE, TIME) mask")
    side = Path(str(path) + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    known = {k: meta.pop(k) for k in ("pattern", "af", "seed", "n_center") if k in meta}
    return SamplingMask(t.data, extra=meta, **known)
