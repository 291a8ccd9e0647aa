"""End-to-end phantom experiments: simulate, undersample, reconstruct, score.

A single global seed fans out to every stochastic component through
``component_seed(seed, name)``, a labeled hash, so adding a component never
shifts the random stream of another one.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classical import ClassicalConfig, solve_classical_volume
from .metrics import evaluate
from .network.infer import infer_volume
from .network.model import init_network
from .network.params_io import load_params, save_params
from .network.training import TrainConfig, build_training_set, train, write_loss_trace
from .operators import hybridize
from .phantom import PhantomSpec, cardiac_spec, gen_coil_maps, gen_phantom, simulate_acquisition
from .rows import zero_filled_volume
from .sampling import MaskSpec, generate_mask, save_mask
from .tensor import Domain, IMAGE_AXES, KSPACE_AXES, KTVolume, load_tensor, save_tensor

__all__ = [
    "METHODS",
    "CSV_COLUMNS",
    "component_seed",
    "ExperimentSpec",
    "desk_spec",
    "run_experiment",
    "write_pgm",
    "read_pgm",
    "emit_images",
    "load_volume",
    "desk_params_path",
]


ZERO_FILLED, CLASSICAL, NET, NET_SC = "ZERO_FILLED", "CLASSICAL", "NET", "NET_SC"
METHODS = (ZERO_FILLED, CLASSICAL, NET, NET_SC)
CSV_COLUMNS = ("volume", "method", "metric", "value", "pattern", "af", "seed", "n_center")


def component_seed(seed: int, name: str) -> int:
    """64-bit seed for component ``name``: first 8 bytes of sha256("seed:name")."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def load_volume(path, domain: Domain | None = None) -> KTVolume:
    """Load a KTB file as a KTVolume; 4-axis files default to KSPACE, 3-axis to IMAGE."""
    t = load_tensor(path)
    if domain is None:
        if t.axes == KSPACE_AXES:
            domain = Domain.KSPACE
        elif t.axes == IMAGE_AXES:
            domain = Domain.IMAGE
        else:
            raise ValueError(f"{path}: axes {[a.name for a in t.axes]} are not a k-t volume")
    return KTVolume(t.data, t.axes, domain=domain)


@dataclass
class ExperimentSpec:
    """Everything needed to rerun an experiment bit-for-bit.

    ``phantom`` is either ``cardiac_spec`` keywords (``m``, ``n``, ``t``,
    ``j``) or a full phantom document with a ``features`` list. ``mask``
    holds ``af`` and ``pattern`` plus optional ``n_center``, ``sigma``,
    ``power``; missing seeds are derived from ``seed``. ``network`` holds
    either ``{"params": path}`` or ``{"train": {...}}`` with keys
    ``volumes``, ``K``, ``filters``, ``kernel_size`` and any TrainConfig
    field.
    """

    seed: int = 0
    phantom: dict = field(default_factory=lambda: {"m": 32, "n": 32, "t": 8, "j": 4})
    mask: dict = field(default_factory=lambda: {"af": 4, "pattern": "RANDOM_KT"})
    noise_std: float = 0.0
    methods: list = field(default_factory=lambda: list(METHODS))
    classical: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    sc: dict = field(default_factory=lambda: {"rounds": 10, "weight": 0.1})
    output_dir: str = "experiment_out"
    images: bool = False
    pe_column: int | None = None

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if not self.methods:
            raise ValueError("at least one method is required")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        needs_net = {NET, NET_SC} & set(self.methods)
        if needs_net and not ("params" in self.network or "train" in self.network):
            raise ValueError("NET methods need network.params or network.train")
        ClassicalConfig(**self.classical)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text_or_dict):
        d = json.loads(text_or_dict) if isinstance(text_or_dict, str) else dict(text_or_dict)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment fields {sorted(unknown)}")
        return cls(**d)

    def phantom_spec(self, name="phantom") -> PhantomSpec:
        p = dict(self.phantom)
        if "features" in p:
            p.setdefault("seed", component_seed(self.seed, name))
            return PhantomSpec.from_json(p)
        return cardiac_spec(seed=component_seed(self.seed, name), **p)

    def mask_spec(self, n_pe, n_time) -> MaskSpec:
        m = dict(self.mask)
        m.setdefault("seed", component_seed(self.seed, "mask"))
        return MaskSpec(n_pe=n_pe, n_time=n_time, **m)


def desk_spec(output_dir="desk_study", seed=0) -> ExperimentSpec:
    """The desk-scale study: 32x32, 8 frames, 4 coils, random k-t at AF 4,
    six training phantoms and one held-out phantom, K=3 with 16 filters."""
    return ExperimentSpec(
        seed=seed,
        phantom={"m": 32, "n": 32, "t": 8, "j": 4},
        mask={"af": 4, "pattern": "RANDOM_KT"},
        network={"train": {"volumes": 6, "K": 3, "filters": 16, "kernel_size": 3,
                           "epochs": 200, "batch_size": 32}},
        output_dir=str(output_dir),
    )


def _train_network(spec: ExperimentSpec, ps: PhantomSpec, mask, out: Path):
    cfg = dict(spec.network["train"])
    n_vol = int(cfg.pop("volumes", 6))
    net_kw = {k: cfg.pop(k) for k in ("K", "filters", "kernel_size", "spatial_input", "prior")
              if k in cfg}
    cfg.setdefault("seed", component_seed(spec.seed, "train"))
    # gradient reduction stays serial so --threads never changes the weights
    tcfg = TrainConfig(**{**cfg, "workers": 1})
    vols, maps = [], []
    shape = {k: spec.phantom[k] for k in ("m", "n", "t", "j") if k in spec.phantom}
    shape = shape or {"m": ps.m, "n": ps.n, "t": ps.t, "j": ps.j}
    for i in range(n_vol):
        vs = cardiac_spec(seed=component_seed(spec.seed, f"train_volume{i}"), **shape)
        vols.append(gen_phantom(vs))
        maps.append(gen_coil_maps(vs.m, vs.n, vs.j, seed=component_seed(spec.seed, f"train_coils{i}")))
    data = build_training_set(vols, maps, mask, spec.noise_std,
                              seed=component_seed(spec.seed, "train_noise"))
    init = init_network(seed=component_seed(spec.seed, "init"), **net_kw)
    params, trace = train(data, tcfg, init)
    save_params(params, out / "params.ktp")
    write_loss_trace(trace, out / "loss_trace.csv")
    return params


def run_experiment(spec: ExperimentSpec, threads=1) -> dict:
    """Run every requested method and write tensors, reports and a CSV.

    Returns ``{method: MetricReport}``. Outputs in ``spec.output_dir``:
    ``reference.ktb``, ``coil_maps.ktb``, ``mask.ktb`` (+ sidecar),
    ``kspace.ktb``, ``recon_<method>.ktb``, ``report_<method>.json``,
    ``report.csv`` and, when a network is trained, ``params.ktp`` and
    ``loss_trace.csv``.
    """
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "experiment.json").write_text(spec.to_json())
    ps = spec.phantom_spec()
    ref = gen_phantom(ps)
    maps = gen_coil_maps(ps.m, ps.n, ps.j, seed=component_seed(spec.seed, "coils"))
    mask = generate_mask(spec.mask_spec(ps.n, ps.t))
    noise = spec.noise_std or ps.noise_std
    y = simulate_acquisition(ref, maps, mask, noise, seed=component_seed(spec.seed, "noise"))
    save_tensor(ref, out / "reference.ktb")
    save_tensor(maps.to_tensor(), out / "coil_maps.ktb")
    save_mask(mask, out / "mask.ktb")
    save_tensor(y, out / "kspace.ktb")

    hybrid = hybridize(y)
    params = None
    if {NET, NET_SC} & set(spec.methods):
        if "params" in spec.network:
            params = load_params(spec.network["params"])
        else:
            params = _train_network(spec, ps, mask, out)

    recons = {}
    for method in spec.methods:
        if method == ZERO_FILLED:
            recons[method] = zero_filled_volume(hybrid, maps, mask, threads)
        elif method == CLASSICAL:
            recons[method] = solve_classical_volume(hybrid, maps, mask,
                                                    ClassicalConfig(**spec.classical), threads)
        else:
            recons[method] = infer_volume(y, maps, mask, params, sc=method == NET_SC,
                                          threads=threads, sc_rounds=spec.sc["rounds"],
                                          sc_weight=spec.sc["weight"])

    reports = {}
    for method, rec in recons.items():
        save_tensor(rec, out / f"recon_{method.lower()}.ktb")
        rep = evaluate(rec, ref, reference="reference.ktb", reconstruction=method,
                       mask=mask.metadata())
        (out / f"report_{method.lower()}.json").write_text(rep.to_json())
        reports[method] = rep
        if spec.images:
            emit_images(rec, out / "images" / method.lower(), reference=ref,
                        pe_column=spec.pe_column)
    write_report_csv(reports, mask.metadata(), out / "report.csv")
    return reports


def write_report_csv(reports: dict, mask_meta: dict, path, volume="reference") -> None:
    """One row per (volume, method, metric); floats written with repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for method, rep in reports.items():
            for metric, value in rep.csv_rows():
                w.writerow([volume, method, metric, repr(float(value)), mask_meta["pattern"],
                            repr(float(mask_meta["af"])), mask_meta["seed"], mask_meta["n_center"]])


def write_pgm(img, path) -> None:
    """16-bit binary PGM (P5, maxval 65535, big-endian samples)."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("write_pgm needs a 2-D array")
    data = np.clip(np.rint(img), 0, 65535).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 65535:
        raise ValueError(f"{path}: not a 16-bit P5 file")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: 2 * w * h], dtype=">u2").reshape(h, w)


def _scaled(mag, peak):
    return mag * (65535.0 / peak) if peak > 0 else np.zeros_like(mag)


def emit_images(volume: KTVolume, directory, reference: KTVolume | None = None,
                pe_column: int | None = None) -> list:
    """Write per-frame magnitude images, x5 error maps and an FE-time profile.

    Magnitudes are scaled so the volume maximum maps to 65535. Error maps
    show ``5 |rec - ref|`` on the reference's scale, clipped. The profile is
    the FE x TIME magnitude at ``pe_column`` (default: the center column).
    Returns the written paths.
    """
    if not isinstance(volume, KTVolume) or volume.domain is not Domain.IMAGE:
        raise ValueError("emit_images needs an IMAGE-domain KTVolume")
    volume.expect_axes(*IMAGE_AXES)
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    mag = np.abs(volume.data)
    peak = float(mag.max())
    n_pe, n_t = mag.shape[1], mag.shape[2]
    col = n_pe // 2 if pe_column is None else int(pe_column)
    if not 0 <= col < n_pe:
        raise ValueError(f"pe_column {col} outside [0, {n_pe})")
    written = []
    for t in range(n_t):
        p = d / f"frame_{t:03d}.pgm"
        write_pgm(_scaled(mag[:, :, t], peak), p)
        written.append(p)
    if reference is not None:
        if reference.extents != volume.extents:
            raise ValueError("reference extents differ from the volume")
        err = 5.0 * np.abs(volume.data - reference.data)
        ref_peak = float(np.abs(reference.data).max())
        for t in range(n_t):
            p = d / f"error_{t:03d}.pgm"
            write_pgm(_scaled(err[:, :, t], ref_peak), p)
            written.append(p)
    p = d / f"profile_pe{col:03d}.pgm"
    write_pgm(_scaled(mag[:, col, :], peak), p)
    written.append(p)
    return written


def desk_params_path():
    """Path of the network trained by the desk study (seed 0) shipped with the package."""
    from importlib.resources import files

    return files("ktsep") / "data" / "desk_params.ktp"
