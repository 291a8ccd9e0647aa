"""Command-line front end: ``ktsep <subcommand> ...``.

Every failure prints exactly one line to stderr of the form
``error code=<name> exit=<n> message=<text>`` and exits with the code below.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .classical import ClassicalConfig, solve_classical_volume
from .metrics import evaluate
from .network.gradcheck import gradcheck
from .network.infer import infer_volume
from .network.model import ESTIMATE, BOTH, init_network
from .network.params_io import load_params, save_params
from .network.training import TrainConfig, TrainingDiverged, build_training_set, train, write_loss_trace
from .operators import CoilMaps, hybridize
from .phantom import PhantomSpec, cardiac_spec, gen_coil_maps, gen_phantom, simulate_acquisition
from .rows import zero_filled_volume
from .sampling import MaskSpec, audit_mask, generate_mask, load_mask, save_mask
from .tensor import Domain, TensorFormatError, load_tensor, save_tensor

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_INVALID_CONFIG = 4
EXIT_BAD_FORMAT = 5
EXIT_GRADCHECK_FAILED = 6
EXIT_DIVERGED = 7

EXIT_NAMES = {
    EXIT_INTERNAL: "internal",
    EXIT_USAGE: "usage",
    EXIT_MISSING_FILE: "missing_file",
    EXIT_INVALID_CONFIG: "invalid_config",
    EXIT_BAD_FORMAT: "bad_format",
    EXIT_GRADCHECK_FAILED: "gradcheck_failed",
    EXIT_DIVERGED: "training_diverged",
}

EPILOG = """exit codes:
  0  success
  1  internal error
  2  usage error (unknown subcommand or flag, bad flag value)
  3  missing input file
  4  invalid configuration (violated invariant, inconsistent shapes)
  5  malformed KTB/KTP1 file
  6  gradient check failed
  7  training diverged

errors are one line on stderr: error code=<name> exit=<n> message=<text>
"""


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, message)


def _fail(code, message) -> int:
    text = " ".join(str(message).split())
    print(f"error code={EXIT_NAMES[code]} exit={code} message={text}", file=sys.stderr)
    return code


def _need(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_MISSING_FILE, f"no such file: {path}")
    return p


def _json_arg(path):
    try:
        return json.loads(_need(path).read_text())
    except json.JSONDecodeError as e:
        raise CliError(EXIT_INVALID_CONFIG, f"{path}: invalid JSON: {e}") from e


def _load_maps(path) -> CoilMaps:
    return CoilMaps.from_tensor(load_tensor(_need(path)))


def _load_mask(path):
    return load_mask(_need(path))


def _load_volume(path, domain=None):
    return ex.load_volume(_need(path), domain)


# subcommands

def cmd_phantom(a):
    if a.spec:
        spec = PhantomSpec.from_json(_json_arg(a.spec))
    else:
        spec = cardiac_spec(a.m, a.n, a.t, a.j, seed=a.seed, noise_std=a.noise_std)
    save_tensor(gen_phantom(spec), a.out)
    if a.maps_out:
        coil_seed = a.seed if a.coil_seed is None else a.coil_seed
        save_tensor(gen_coil_maps(spec.m, spec.n, spec.j, seed=coil_seed).to_tensor(), a.maps_out)
    if a.spec_out:
        Path(a.spec_out).write_text(spec.to_json())


def cmd_mask(a):
    spec = MaskSpec(a.n_pe, a.n_time, a.af, a.pattern, a.seed, a.n_center, a.sigma, a.power)
    mask = generate_mask(spec)
    save_mask(mask, a.out)
    print(json.dumps(audit_mask(mask), sort_keys=True))


def cmd_acquire(a):
    image = _load_volume(a.image, Domain.IMAGE)
    y = simulate_acquisition(image, _load_maps(a.maps), _load_mask(a.mask), a.noise_std, a.seed)
    save_tensor(y, a.out)


def cmd_recon_classical(a):
    cfg = ClassicalConfig.from_json(_json_arg(a.config)) if a.config else ClassicalConfig()
    y = _load_volume(a.kspace, Domain.KSPACE)
    maps, mask = _load_maps(a.maps), _load_mask(a.mask)
    if a.zero_filled:
        x = zero_filled_volume(hybridize(y), maps, mask, a.threads)
    else:
        x = solve_classical_volume(hybridize(y), maps, mask, cfg, a.threads)
    save_tensor(x, a.out)


def cmd_train(a):
    if len(a.images) != len(a.maps):
        raise CliError(EXIT_INVALID_CONFIG, f"{len(a.images)} images but {len(a.maps)} map files")
    cfg = TrainConfig.from_json(_json_arg(a.config)) if a.config else TrainConfig()
    vols = [_load_volume(p, Domain.IMAGE) for p in a.images]
    maps = [_load_maps(p) for p in a.maps]
    data = build_training_set(vols, maps, _load_mask(a.mask), a.noise_std, a.noise_seed)
    init = init_network(K=a.K, filters=a.filters, kernel_size=a.kernel_size, seed=a.init_seed,
                        spatial_input=a.spatial_input, prior=a.prior)
    params, trace = train(data, cfg, init)
    save_params(params, a.out)
    if a.trace:
        write_loss_trace(trace, a.trace)
    print(json.dumps({"final_loss": trace[-1]["loss"], "epochs": len(trace)}))


def cmd_recon_net(a):
    params = load_params(_need(a.params))
    y = _load_volume(a.kspace, Domain.KSPACE)
    x = infer_volume(y, _load_maps(a.maps), _load_mask(a.mask), params, sc=a.sc,
                     threads=a.threads, sc_rounds=a.sc_rounds, sc_weight=a.sc_weight)
    save_tensor(x, a.out)


def cmd_eval(a):
    rec = _load_volume(a.rec, Domain.IMAGE)
    ref = _load_volume(a.ref, Domain.IMAGE)
    if rec.extents != ref.extents:
        raise CliError(EXIT_INVALID_CONFIG, f"extents differ: {rec.extents} vs {ref.extents}")
    rep = evaluate(rec, ref, reference=str(a.ref), reconstruction=str(a.rec))
    if a.json:
        Path(a.json).write_text(rep.to_json())
    if a.csv:
        Path(a.csv).write_text(rep.to_csv())
    print(json.dumps({"rlne": rep.rlne, "psnr_db": "inf" if rep.psnr_db == float("inf")
                      else rep.psnr_db, "ssim": rep.ssim}))


def cmd_gradcheck(a):
    params = load_params(_need(a.params)) if a.params else init_network(K=a.K, filters=a.filters,
                                                                          seed=a.seed)
    res = gradcheck(params, seed=a.seed)
    print(json.dumps({"worst_rel_error": res.worst_rel_error, "worst_param": res.worst_param,
                      "per_class": res.per_class, "n_checked": res.n_checked,
                      "passed": res.passed}, sort_keys=True))
    if not res.passed:
        raise CliError(EXIT_GRADCHECK_FAILED,
                       f"worst relative error {res.worst_rel_error:.3e} at {res.worst_param}")


def cmd_run_experiment(a):
    if a.desk:
        spec = ex.desk_spec(a.out or "desk_study", seed=a.seed)
    elif a.spec:
        spec = ex.ExperimentSpec.from_json(_json_arg(a.spec))
        if a.out:
            spec.output_dir = a.out
    else:
        raise CliError(EXIT_USAGE, "run-experiment needs --spec or --desk")
    if a.images:
        spec.images = True
    net_params = spec.network.get("params")
    if net_params:
        _need(net_params)
    reports = ex.run_experiment(spec, threads=a.threads)
    print(Path(spec.output_dir, "report.csv").read_text(), end="")
    return reports


def cmd_images(a):
    vol = _load_volume(a.volume, Domain.IMAGE)
    ref = _load_volume(a.ref, Domain.IMAGE) if a.ref else None
    for p in ex.emit_images(vol, a.out_dir, reference=ref, pe_column=a.pe_column):
        print(p)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ktsep", description="Dimension-reduced separable k-t reconstruction toolkit.",
                epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, fn, help_):
        s = sub.add_parser(name, help=help_, epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        s.set_defaults(fn=fn)
        return s

    s = add("phantom", cmd_phantom, "render a phantom image volume (and coil maps)")
    s.add_argument("--spec", help="PhantomSpec JSON; overrides the size flags")
    s.add_argument("--m", type=int, default=32)
    s.add_argument("--n", type=int, default=32)
    s.add_argument("--t", type=int, default=8)
    s.add_argument("--j", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise-std", type=float, default=0.0)
    s.add_argument("--coil-seed", type=int, help="coil map seed (default: --seed)")
    s.add_argument("--out", required=True, help="image KTB")
    s.add_argument("--maps-out", help="coil map KTB")
    s.add_argument("--spec-out", help="write the PhantomSpec JSON used")

    s = add("mask", cmd_mask, "generate a k-t sampling mask and print its audit")
    s.add_argument("--n-pe", type=int, required=True)
    s.add_argument("--n-time", type=int, required=True)
    s.add_argument("--af", type=float, required=True)
    s.add_argument("--pattern", choices=["RANDOM_KT", "VISTA_LIKE"], default="RANDOM_KT")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-center", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--power", type=float, default=1.0)
    s.add_argument("--out", required=True, help="mask KTB (sidecar JSON written next to it)")

    s = add("acquire", cmd_acquire, "simulate undersampled coil k-space")
    s.add_argument("--image", required=True)
    s.add_argument("--maps", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--noise-std", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = add("recon-classical", cmd_recon_classical, "row-wise classical reconstruction")
    s.add_argument("--kspace", required=True)
    s.add_argument("--maps", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--config", help="ClassicalConfig JSON")
    s.add_argument("--zero-filled", action="store_true", help="adjoint only")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", required=True)

    s = add("train", cmd_train, "train a network on fully sampled image volumes")
    s.add_argument("--images", nargs="+", required=True)
    s.add_argument("--maps", nargs="+", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--config", help="TrainConfig JSON")
    s.add_argument("--K", type=int, default=3)
    s.add_argument("--filters", type=int, default=16)
    s.add_argument("--kernel-size", type=int, default=3)
    s.add_argument("--init-seed", type=int, default=0)
    s.add_argument("--spatial-input", choices=["ESTIMATE", "TEMPORAL_OUT"], default=ESTIMATE)
    s.add_argument("--prior", choices=["BOTH", "TEMPORAL", "SPATIAL"], default=BOTH)
    s.add_argument("--noise-std", type=float, default=0.0)
    s.add_argument("--noise-seed", type=int, default=0)
    s.add_argument("--out", required=True, help="KTP1 parameter file")
    s.add_argument("--trace", help="loss trace CSV")

    s = add("recon-net", cmd_recon_net, "row-wise network reconstruction")
    s.add_argument("--kspace", required=True)
    s.add_argument("--maps", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--sc", action="store_true", help="apply the FE smoothness post-process")
    s.add_argument("--sc-rounds", type=int, default=10)
    s.add_argument("--sc-weight", type=float, default=0.1)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", required=True)

    s = add("eval", cmd_eval, "RLNE, PSNR and SSIM of a reconstruction")
    s.add_argument("--rec", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--json", help="write the full report as JSON")
    s.add_argument("--csv", help="write metric rows as CSV")

    s = add("gradcheck", cmd_gradcheck, "finite-difference check of every network gradient")
    s.add_argument("--params", help="KTP1 file to check (default: fresh K=2, 8-filter net)")
    s.add_argument("--K", type=int, default=2)
    s.add_argument("--filters", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)

    s = add("run-experiment", cmd_run_experiment, "phantom -> mask -> acquire -> recon -> eval")
    s.add_argument("--spec", help="ExperimentSpec JSON")
    s.add_argument("--desk", action="store_true", help="use the built-in desk-scale study")
    s.add_argument("--seed", type=int, default=0, help="global seed for --desk")
    s.add_argument("--out", help="output directory (overrides the spec)")
    s.add_argument("--images", action="store_true", help="also write PGM images")
    s.add_argument("--threads", type=int, default=1)

    s = add("images", cmd_images, "write magnitude, error and profile PGM images")
    s.add_argument("--volume", required=True)
    s.add_argument("--ref")
    s.add_argument("--pe-column", type=int)
    s.add_argument("--out-dir", required=True)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as e:
        return _fail(e.code, e)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    if getattr(args, "threads", 1) < 1:
        return _fail(EXIT_USAGE, "--threads must be >= 1")
    try:
        args.fn(args)
    except CliError as e:
        return _fail(e.code, e)
    except FileNotFoundError as e:
        return _fail(EXIT_MISSING_FILE, e)
    except TensorFormatError as e:
        return _fail(EXIT_BAD_FORMAT, e)
    except TrainingDiverged as e:
        return _fail(EXIT_DIVERGED, e)
    except (ValueError, TypeError, KeyError) as e:
        return _fail(EXIT_INVALID_CONFIG, e)
    except Exception as e:  # noqa: BLE001
        return _fail(EXIT_INTERNAL, f"{type(e).__name__}: {e}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
