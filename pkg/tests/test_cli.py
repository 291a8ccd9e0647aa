import json

import numpy as np
import pytest

from ktsep import cli
from ktsep.experiment import (ExperimentSpec, desk_params_path, emit_images, read_pgm,
                              run_experiment)
from ktsep.network.gradcheck import GradcheckResult
from ktsep.network.training import TrainingDiverged
from ktsep.tensor import IMAGE_AXES, Domain, KTVolume, load_tensor, save_tensor

from conftest import crandn


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def assert_error(code, err, expected):
    lines = err.strip().splitlines()
    assert code == expected
    assert len(lines) == 1
    assert lines[0].startswith(f"error code={cli.EXIT_NAMES[expected]} exit={expected} message=")


@pytest.fixture
def pipeline(tmp_path, capsys):
    """phantom -> mask -> acquire on an 8-row desk-shaped problem."""
    d = tmp_path
    assert run(capsys, "phantom", "--m", 8, "--seed", 3, "--out", d / "img.ktb",
               "--maps-out", d / "maps.ktb", "--spec-out", d / "ph.json")[0] == 0
    code, out, _ = run(capsys, "mask", "--n-pe", 32, "--n-time", 8, "--af", 4, "--seed", 1,
                       "--out", d / "mask.ktb")
    assert code == 0
    audit = json.loads(out)
    assert audit["per_frame_counts"] == [8] * 8
    assert run(capsys, "acquire", "--image", d / "img.ktb", "--maps", d / "maps.ktb",
               "--mask", d / "mask.ktb", "--out", d / "y.ktb")[0] == 0
    return d


def test_chained_subcommands(pipeline, capsys):
    d = pipeline
    assert run(capsys, "recon-classical", "--kspace", d / "y.ktb", "--maps", d / "maps.ktb",
               "--mask", d / "mask.ktb", "--zero-filled", "--out", d / "zf.ktb")[0] == 0
    assert run(capsys, "recon-net", "--kspace", d / "y.ktb", "--maps", d / "maps.ktb",
               "--mask", d / "mask.ktb", "--params", desk_params_path(), "--threads", 2,
               "--out", d / "net.ktb")[0] == 0
    code, out, _ = run(capsys, "eval", "--rec", d / "zf.ktb", "--ref", d / "img.ktb")
    zf = json.loads(out)
    code, out, _ = run(capsys, "eval", "--rec", d / "net.ktb", "--ref", d / "img.ktb",
                       "--json", d / "net.json", "--csv", d / "net.csv")
    net = json.loads(out)
    assert code == 0
    assert net["psnr_db"] > zf["psnr_db"] + 3
    assert json.loads((d / "net.json").read_text())["rlne"] == net["rlne"]
    assert (d / "net.csv").read_text().startswith("metric,value\n")


def test_eval_identical_volumes(pipeline, capsys):
    d = pipeline
    code, out, _ = run(capsys, "eval", "--rec", d / "img.ktb", "--ref", d / "img.ktb")
    rep = json.loads(out)
    assert code == 0
    assert rep == {"rlne": 0.0, "psnr_db": "inf", "ssim": pytest.approx(1.0, abs=1e-12)}


def test_phantom_spec_round_trip(pipeline, capsys):
    d = pipeline
    assert run(capsys, "phantom", "--spec", d / "ph.json", "--out", d / "img2.ktb")[0] == 0
    assert (d / "img2.ktb").read_bytes() == (d / "img.ktb").read_bytes()


def test_unknown_subcommand_and_flag(capsys):
    assert_error(*run(capsys, "frobnicate")[::2], cli.EXIT_USAGE)
    assert_error(*run(capsys, "mask", "--n-pe", 8, "--bogus")[::2], cli.EXIT_USAGE)


def test_missing_file(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--rec", tmp_path / "nope.ktb", "--ref", tmp_path / "x.ktb")
    assert_error(code, err, cli.EXIT_MISSING_FILE)


def test_bad_format(tmp_path, capsys):
    (tmp_path / "bad.ktb").write_bytes(b"XXXX" + bytes(20))
    code, _, err = run(capsys, "eval", "--rec", tmp_path / "bad.ktb", "--ref", tmp_path / "bad.ktb")
    assert_error(code, err, cli.EXIT_BAD_FORMAT)


def test_invalid_config(tmp_path, capsys):
    code, _, err = run(capsys, "mask", "--n-pe", 8, "--n-time", 4, "--af", 0.5,
                       "--out", tmp_path / "m.ktb")
    assert_error(code, err, cli.EXIT_INVALID_CONFIG)
    (tmp_path / "spec.json").write_text('{"seed": 0, "colour": 3}')
    code, _, err = run(capsys, "run-experiment", "--spec", tmp_path / "spec.json")
    assert_error(code, err, cli.EXIT_INVALID_CONFIG)


def test_eval_extent_mismatch(tmp_path, capsys, rng):
    save_tensor(KTVolume(crandn(rng, 2, 4, 3), IMAGE_AXES, domain=Domain.IMAGE), tmp_path / "a.ktb")
    save_tensor(KTVolume(crandn(rng, 2, 4, 2), IMAGE_AXES, domain=Domain.IMAGE), tmp_path / "b.ktb")
    code, _, err = run(capsys, "eval", "--rec", tmp_path / "a.ktb", "--ref", tmp_path / "b.ktb")
    assert_error(code, err, cli.EXIT_INVALID_CONFIG)


def test_gradcheck_exit_codes(capsys, monkeypatch):
    code, out, _ = run(capsys, "gradcheck", "--K", 1, "--filters", 3)
    assert code == 0 and json.loads(out)["passed"]
    bad = GradcheckResult(worst_rel_error=0.5, worst_param="phase0.mu1", per_class={"mu1": 0.5},
                          n_checked=1, margin=1.0, seed=0)
    monkeypatch.setattr(cli, "gradcheck", lambda *a, **k: bad)
    code, _, err = run(capsys, "gradcheck", "--K", 1, "--filters", 3)
    assert_error(code, err, cli.EXIT_GRADCHECK_FAILED)


def test_training_diverged_exit(pipeline, capsys, monkeypatch):
    d = pipeline

    def boom(*a, **k):
        raise TrainingDiverged("loss is nan at epoch 0")

    monkeypatch.setattr(cli, "train", boom)
    code, _, err = run(capsys, "train", "--images", d / "img.ktb", "--maps", d / "maps.ktb",
                       "--mask", d / "mask.ktb", "--out", d / "p.ktp")
    assert_error(code, err, cli.EXIT_DIVERGED)


def test_train_cli_writes_params(pipeline, capsys):
    d = pipeline
    (d / "cfg.json").write_text(json.dumps({"epochs": 2, "batch_size": 8}))
    code, out, _ = run(capsys, "train", "--images", d / "img.ktb", "--maps", d / "maps.ktb",
                       "--mask", d / "mask.ktb", "--config", d / "cfg.json", "--K", 1,
                       "--filters", 4, "--out", d / "p.ktp", "--trace", d / "trace.csv")
    assert code == 0
    assert json.loads(out)["epochs"] == 2
    assert (d / "trace.csv").read_text().count("\n") == 3
    assert run(capsys, "gradcheck", "--params", d / "p.ktp")[0] == 0


def test_help_lists_exit_codes(capsys):
    with pytest.raises(SystemExit):
        cli.main(["recon-net", "--help"])
    assert "training diverged" in capsys.readouterr().out


# run-experiment

def _small_spec(out):
    return ExperimentSpec(seed=5, phantom={"m": 6, "n": 32, "t": 8, "j": 4},
                          classical={"iterations": 5},
                          network={"params": str(desk_params_path())}, output_dir=str(out))


def test_run_experiment_cli_prints_csv(tmp_path, capsys):
    spec = _small_spec(tmp_path / "a")
    (tmp_path / "spec.json").write_text(spec.to_json())
    code, out, _ = run(capsys, "run-experiment", "--spec", tmp_path / "spec.json",
                       "--out", tmp_path / "b", "--threads", 2, "--images")
    assert code == 0
    assert out == (tmp_path / "b" / "report.csv").read_text()
    lines = out.splitlines()
    assert lines[0] == "volume,method,metric,value,pattern,af,seed,n_center"
    assert len(lines) == 1 + 4 * 3
    assert (tmp_path / "b" / "images" / "net_sc" / "profile_pe016.pgm").is_file()


def test_run_experiment_missing_params(tmp_path, capsys):
    spec = _small_spec(tmp_path / "a")
    spec.network = {"params": str(tmp_path / "none.ktp")}
    (tmp_path / "spec.json").write_text(spec.to_json())
    code, _, err = run(capsys, "run-experiment", "--spec", tmp_path / "spec.json")
    assert_error(code, err, cli.EXIT_MISSING_FILE)


def test_run_experiment_methods_and_files(tmp_path):
    spec = _small_spec(tmp_path)
    spec.methods = ["ZERO_FILLED", "CLASSICAL"]
    reps = run_experiment(spec)
    assert set(reps) == {"ZERO_FILLED", "CLASSICAL"}
    assert reps["CLASSICAL"].rlne < reps["ZERO_FILLED"].rlne
    ref = load_tensor(tmp_path / "reference.ktb")
    assert ref.extents == (6, 32, 8)
    assert ExperimentSpec.from_json((tmp_path / "experiment.json").read_text()) == spec


def test_experiment_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(methods=["MAGIC"])
    with pytest.raises(ValueError):
        ExperimentSpec(methods=["NET"])
    with pytest.raises(ValueError):
        ExperimentSpec(methods=[])


# images

def _vol(a):
    return KTVolume(a, IMAGE_AXES, domain=Domain.IMAGE)


def test_images_zero_volume_is_black(tmp_path):
    paths = emit_images(_vol(np.zeros((4, 5, 2), complex)), tmp_path)
    assert len(paths) == 3
    for p in paths:
        assert not read_pgm(p).any()


def test_images_scaling_and_error_maps(tmp_path, rng):
    a = crandn(rng, 6, 5, 3)
    paths = emit_images(_vol(a), tmp_path, reference=_vol(a), pe_column=1)
    names = sorted(p.name for p in paths)
    assert names == ["error_000.pgm", "error_001.pgm", "error_002.pgm", "frame_000.pgm",
                     "frame_001.pgm", "frame_002.pgm", "profile_pe001.pgm"]
    frames = np.stack([read_pgm(tmp_path / f"frame_{t:03d}.pgm") for t in range(3)], -1)
    assert frames.shape == (6, 5, 3)
    assert frames.max() == 65535
    t_max = np.unravel_index(np.argmax(np.abs(a)), a.shape)
    assert frames[t_max] == 65535
    for t in range(3):
        assert not read_pgm(tmp_path / f"error_{t:03d}.pgm").any()
    prof = read_pgm(tmp_path / "profile_pe001.pgm")
    assert prof.shape == (6, 3)
    assert np.array_equal(prof, frames[:, 1, :])


def test_pgm_header_bytes(tmp_path):
    emit_images(_vol(np.ones((2, 3, 1), complex)), tmp_path)
    raw = (tmp_path / "frame_000.pgm").read_bytes()
    assert raw == b"P5\n3 2\n65535\n" + b"\xff\xff" * 6


def test_images_cli_and_bad_column(tmp_path, capsys, rng):
    save_tensor(_vol(crandn(rng, 4, 4, 2)), tmp_path / "v.ktb")
    code, out, _ = run(capsys, "images", "--volume", tmp_path / "v.ktb", "--out-dir", tmp_path / "o")
    assert code == 0 and len(out.splitlines()) == 3
    code, _, err = run(capsys, "images", "--volume", tmp_path / "v.ktb", "--pe-column", 9,
                       "--out-dir", tmp_path / "o")
    assert_error(code, err, cli.EXIT_INVALID_CONFIG)


def test_shipped_params_phase_losses_non_increasing():
    from ktsep.experiment import component_seed, desk_spec
    from ktsep.network.params_io import load_params
    from ktsep.network.training import build_training_set, phase_losses
    from ktsep.phantom import cardiac_spec, gen_coil_maps, gen_phantom
    from ktsep.sampling import generate_mask

    params = load_params(desk_params_path())
    mask = generate_mask(desk_spec().mask_spec(32, 8))
    vols = [gen_phantom(cardiac_spec(seed=component_seed(0, f"validation_volume{i}")))
            for i in range(2)]
    maps = [gen_coil_maps(32, 32, 4, seed=component_seed(0, f"validation_coils{i}"))
            for i in range(2)]
    losses = phase_losses(build_training_set(vols, maps, mask), params)
    assert len(losses) == 3
    assert all(b <= a for a, b in zip(losses, losses[1:]))
