"""Finite-difference audit of the network's reverse pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..operators import forward_A
from ..phantom import gen_coil_maps
from .model import NetworkParams, init_network, kink_margin, loss, loss_and_grad, network_forward

__all__ = ["GradcheckResult", "gradcheck", "gradcheck_problem"]


@dataclass
class GradcheckResult:
    worst_rel_error: float
    worst_param: str
    per_class: dict  # class name -> worst relative error
    n_checked: int
    margin: float
    seed: int

    @property
    def passed(self):
        return bool(self.worst_rel_error < 1e-4)


def _param_class(name):
    leaf = name.rsplit(".", 1)[-1]
    return {"theta_raw": "theta"}.get(leaf, leaf)


def gradcheck_problem(n_pe=6, n_time=4, n_coils=2, batch=2, seed=0):
    """A small random problem: smooth complex images, coil data, a sparse mask."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x6763])))
    pe = np.linspace(-1, 1, n_pe)[None, :, None]
    tt = np.arange(n_time)[None, None, :]
    amp = rng.uniform(0.5, 1.0, size=(batch, 1, 1))
    freq = rng.uniform(0.5, 2.0, size=(batch, 1, 1))
    truth = amp * np.exp(-pe**2) * (1 + 0.2 * np.sin(freq * tt + pe)) * np.exp(1j * 0.3 * pe)
    truth = truth + 0.05 * (rng.standard_normal(truth.shape) + 1j * rng.standard_normal(truth.shape))
    maps = gen_coil_maps(batch, n_pe, n_coils, seed=seed).data
    mask = np.zeros((n_pe, n_time), dtype=bool)
    mask[n_pe // 2] = True
    for t in range(n_time):
        mask[rng.choice(n_pe, size=max(1, n_pe // 3), replace=False), t] = True
    z = forward_A(truth, maps, mask)
    return z, maps, mask, truth


def gradcheck(params: NetworkParams | None = None, step=1e-5, min_margin=1e-4, max_tries=50,
              seed=0, floor=1e-6, **problem) -> GradcheckResult:
    """Compare every parameter gradient with central differences.

    Problems are re-drawn (``seed``, ``seed + 1``, ...) until every ReLU
    input and soft-threshold input sits at least ``min_margin`` away from
    its kink, so the difference quotients never straddle one. The relative
    error of an entry is ``|g - fd| / max(|g|, |fd|, floor * max(1, L))``;
    the floor keeps gradients below the round-off level of the difference
    quotient (about eps * L / step) from dominating the verdict.
    """
    if params is None:
        params = init_network(K=2, filters=8, seed=seed)
    params = params.copy()
    for attempt in range(max_tries):
        z, maps, mask, refs = gradcheck_problem(seed=seed + attempt, **problem)
        margin = kink_margin(z, maps, mask, params)
        if margin >= min_margin:
            break
    else:
        raise RuntimeError(f"no kink-free problem found in {max_tries} tries")
    value, grads = loss_and_grad(z, maps, mask, params, refs)
    floor = floor * max(1.0, value)

    def f():
        return loss(network_forward(z, maps, mask, params), refs)

    worst, worst_name, per_class, count = 0.0, "", {}, 0
    for name, arr in params.named_arrays():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        cls = _param_class(name)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            lp = f()
            flat[i] = old - step
            lm = f()
            flat[i] = old
            fd = (lp - lm) / (2 * step)
            rel = abs(g[i] - fd) / max(abs(g[i]), abs(fd), floor)
            count += 1
            per_class[cls] = max(per_class.get(cls, 0.0), rel)
            if rel > worst:
                worst, worst_name = rel, f"{name}[{i}]"
    per_class = {k: float(v) for k, v in per_class.items()}
    return GradcheckResult(float(worst), worst_name, per_class, count, float(margin), seed + attempt)
