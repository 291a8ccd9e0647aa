"""Separable training set construction and mini-batch training."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..operators import CoilMaps, SamplingMask, _mask, hybridize
from ..phantom import simulate_acquisition
from ..tensor import Domain, IMAGE_AXES, KTVolume
from .model import BOTH, SPATIAL_ONLY, TEMPORAL_ONLY, NetworkParams, loss, loss_and_grad, network_forward

__all__ = [
    "TrainConfig",
    "TrainingSet",
    "TrainingDiverged",
    "count_training_samples",
    "build_training_set",
    "train",
    "phase_losses",
    "write_loss_trace",
]

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    lr_decay: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    reduction: str = "mean"
    workers: int = 1
    mu_floor: float = 1e-4

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.workers < 1:
            raise ValueError("epochs, batch_size and workers must be positive")
        if self.learning_rate <= 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("learning_rate must be > 0 and lr_decay in (0, 1]")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {self.reduction!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text_or_dict):
        d = json.loads(text_or_dict) if isinstance(text_or_dict, str) else dict(text_or_dict)
        return cls(**d)


@dataclass(eq=False)
class TrainingSet:
    """Paired 2-D samples: k-t input ``z[c]`` with coil maps ``maps[c]`` and label ``labels[c]``.

    Every sample shares ``mask``. ``origin[c]`` is (volume index, FE row).
    """

    z: np.ndarray  # (C, PE, COIL, TIME)
    maps: np.ndarray  # (C, PE, COIL)
    labels: np.ndarray  # (C, PE, TIME)
    mask: SamplingMask
    origin: list = field(default_factory=list)

    def __len__(self):
        return self.z.shape[0]

    def __getitem__(self, i):
        return self.z[i], self.labels[i]

    def subset(self, idx):
        idx = np.asarray(idx)
        return TrainingSet(self.z[idx], self.maps[idx], self.labels[idx], self.mask,
                           [self.origin[i] for i in idx])


def count_training_samples(n_cases, n_slices, m, scheme="separable"):
    """Sample count of a training set: N_TC x N_slice (x M when separable)."""
    if scheme == "separable":
        return n_cases * n_slices * m
    if scheme == "direct":
        return n_cases * n_slices
    raise ValueError(f"unknown scheme {scheme!r}")


def build_training_set(volumes, maps, mask, noise_std=0.0, seed=0) -> TrainingSet:
    """Undersample each fully sampled volume, hybridize, and pair its FE rows with labels.

    ``volumes`` are (FE, PE, TIME) image volumes, ``maps`` one CoilMaps per
    volume. Total sample count is the sum of the volumes' FE extents.
    """
    if len(volumes) != len(maps):
        raise ValueError(f"{len(volumes)} volumes but {len(maps)} coil map sets")
    m = mask if isinstance(mask, SamplingMask) else SamplingMask(_mask(mask))
    zs, ss, labels, origin = [], [], [], []
    for v_idx, (vol, cm) in enumerate(zip(volumes, maps)):
        if not isinstance(vol, KTVolume):
            vol = KTVolume(vol, IMAGE_AXES, domain=Domain.IMAGE)
        y = simulate_acquisition(vol, cm, m, noise_std, seed=seed + v_idx)
        z = hybridize(y).data
        s = cm.data if isinstance(cm, CoilMaps) else CoilMaps(cm).data
        for row in range(vol.extents[0]):
            zs.append(z[row])
            ss.append(s[row])
            labels.append(vol.data[row])
            origin.append((v_idx, row))
    return TrainingSet(np.stack(zs), np.stack(ss), np.stack(labels), m, origin)


def _batch_grad(data: TrainingSet, idx, params, cfg: TrainConfig):
    denom = params.K * len(idx) if cfg.reduction == "mean" else 1.0
    if cfg.workers == 1:
        return loss_and_grad(data.z[idx], data.maps[idx], data.mask, params,
                             data.labels[idx], denom=denom)
    chunks = [c for c in np.array_split(idx, cfg.workers) if len(c)]

    def one(c):
        return loss_and_grad(data.z[c], data.maps[c], data.mask, params, data.labels[c],
                             denom=denom)

    with ThreadPoolExecutor(cfg.workers) as pool:
        parts = list(pool.map(one, chunks))
    # fixed reduction order: chunk 0, 1, 2, ...
    value = sum(p[0] for p in parts)
    grads = {k: sum(p[1][k] for p in parts) for k in parts[0][1]}
    return value, grads


def _frozen(params: NetworkParams):
    """Parameter names that do not exist in the active ablation."""
    out = set()
    for name, _ in params.named_arrays():
        stack = name.split(".")[1]
        if params.prior == TEMPORAL_ONLY and (stack in ("n2", "n3", "theta_raw", "mu2")):
            out.add(name)
        if params.prior == SPATIAL_ONLY and stack in ("n1", "mu1"):
            out.add(name)
    return out


def train(data: TrainingSet, cfg: TrainConfig, init: NetworkParams, validation=None):
    """Adam on the multi-phase loss; returns (params, trace).

    ``trace`` holds one dict per epoch with ``epoch``, ``loss`` (sample-
    weighted mean of batch losses) and ``lr``; when ``validation`` is given
    its mean loss is added as ``val_loss``. The learning rate for epoch e is
    ``learning_rate * lr_decay**e``. Penalty weights are clipped to
    ``mu_floor`` after each step so the blend stays well defined.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    params = init.copy()
    params.metadata.update({"n_pe": int(data.z.shape[1]), "n_time": int(data.z.shape[3]),
                            "training_seed": cfg.seed})
    names = [n for n, _ in params.named_arrays()]
    frozen = _frozen(params)
    m1 = {n: np.zeros_like(a) for n, a in params.named_arrays()}
    m2 = {n: np.zeros_like(a) for n, a in params.named_arrays()}
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, 0x74726E])))
    step = 0
    trace = []
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay**epoch
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(data), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            value, grads = _batch_grad(data, idx, params, cfg)
            if not np.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}, step {step}")
            total += value * len(idx)
            step += 1
            arrays = dict(params.named_arrays())
            for n in names:
                if n in frozen:
                    continue
                g = grads[n]
                m1[n] = cfg.beta1 * m1[n] + (1 - cfg.beta1) * g
                m2[n] = cfg.beta2 * m2[n] + (1 - cfg.beta2) * g * g
                mhat = m1[n] / (1 - cfg.beta1**step)
                vhat = m2[n] / (1 - cfg.beta2**step)
                arrays[n] -= lr * mhat / (np.sqrt(vhat) + cfg.eps)
            for p in params.phases:
                np.maximum(p.mu1, cfg.mu_floor, out=p.mu1)
                np.maximum(p.mu2, cfg.mu_floor, out=p.mu2)
        row = {"epoch": epoch, "loss": total / len(data), "lr": lr}
        if validation is not None:
            row["val_loss"] = float(np.mean(phase_losses(validation, params)[-1:]))
        trace.append(row)
        log.info("epoch %d loss %.6g lr %.3g", epoch, row["loss"], lr)
    return params, trace


def phase_losses(data: TrainingSet, params: NetworkParams, batch_size=64):
    """Mean squared error of every phase output over ``data`` (list of K floats)."""
    sums = np.zeros(params.K)
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        outs = network_forward(data.z[sl], data.maps[sl], data.mask, params)
        for k, o in enumerate(outs):
            sums[k] += loss([o], data.labels[sl], reduction="sum")
    return (sums / len(data)).tolist()


def write_loss_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss", "learning_rate"])
        for row in trace:
            w.writerow([row["epoch"], repr(float(row["loss"])), repr(float(row["lr"]))])
