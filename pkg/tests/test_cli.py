import json
import os

import numpy as np
import pytest

from phasedecoder.cli import main
from phasedecoder.config import load_config
from phasedecoder.io import read_loss_csv, read_pfm

SMALL = """\
seed: 4
grid: {width: 32, height: 32, pixel_size: 0.25}
defocus_um: [1, 2, 4]
target: {kind: disk-array, feature_scale: 3}
decoder: {channels: 4, seed_side: 8, layers: 3}
optimizer: {iterations: 40, log_every: 10}
wirtinger: {iterations: 200}
"""


@pytest.fixture
def workdir(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(SMALL)
    return tmp_path, str(cfg)


def _simulate(tmp_path, cfg):
    ds = str(tmp_path / "ds")
    assert main(["simulate", "--config", cfg, "--out", ds]) == 0
    return ds


def test_simulate_default_config(tmp_path, capsys):
    out = tmp_path / "default"
    assert main(["simulate", "--out", str(out)]) == 0
    names = sorted(os.listdir(out))
    assert names == ["amp_000.pfm", "amp_001.pfm", "amp_002.pfm", "amp_003.pfm", "config.yaml",
                     "stack.json", "truth_phase.pfm", "truth_zernike.csv"]
    assert read_pfm(out / "amp_000.pfm").shape == (128, 128)
    line = capsys.readouterr().out
    assert "N=4" in line and "128x128" in line and "4, 8, 16, 32" in line


def test_simulate_eight_plane_schedule(tmp_path, workdir):
    _, cfg = workdir
    text = SMALL.replace("defocus_um: [1, 2, 4]", "defocus_um: [0, 1, 2, 4, 8, 16, 32, 64]")
    (tmp_path / "eight.yaml").write_text(text)
    out = tmp_path / "p"
    assert main(["simulate", "--config", str(tmp_path / "eight.yaml"), "--out", str(out)]) == 0
    assert len([n for n in os.listdir(out) if n.startswith("amp_")]) == 8


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("target: {contrast: -1}\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    bad.write_text("grid: {widht: 32}\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "grid.widht" in capsys.readouterr().err


def test_io_errors_exit_3(tmp_path, workdir):
    _, cfg = workdir
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml"),
                 "--out", str(tmp_path / "x")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--config", cfg, "--out", str(blocker / "sub")]) == 3
    assert main(["reconstruct", str(tmp_path / "nothing"), "--config", cfg,
                 "--out", str(tmp_path / "r")]) == 3


def test_wf_reconstruct_and_compare(tmp_path, workdir, capsys):
    _, cfg = workdir
    ds = _simulate(tmp_path, cfg)
    res = str(tmp_path / "wf")
    assert main(["reconstruct", ds, "--method", "wf", "--config", cfg, "--out", res]) == 0
    for name in ("phase.pfm", "phase.png", "loss.csv", "config.yaml", "run.json"):
        assert os.path.exists(os.path.join(res, name))
    amps = np.stack([read_pfm(os.path.join(ds, f"amp_{n:03d}.pfm")) for n in range(3)])
    _, losses = read_loss_csv(os.path.join(res, "loss.csv"))
    assert losses[-1] < 1e-6 * np.sum(amps ** 2)
    capsys.readouterr()
    assert main(["compare", res, ds]) == 0
    table = capsys.readouterr().out
    assert "rmse_offset_free" in table and "psnr" in table
    metrics = json.loads(open(os.path.join(res, "metrics.json")).read())
    assert set(metrics) == {"rmse_offset_free", "psnr", "zernike_error", "loss_final"}
    assert metrics["loss_final"] == losses[-1]


def test_wf_without_known_pupils_exit_4(tmp_path, workdir, capsys):
    _, cfg = workdir
    ds = _simulate(tmp_path, cfg)
    meta = json.loads(open(os.path.join(ds, "stack.json")).read())
    meta["defocus_um"] = None
    with open(os.path.join(ds, "stack.json"), "w") as f:
        json.dump(meta, f)
    assert main(["reconstruct", ds, "--method", "wf", "--config", cfg,
                 "--out", str(tmp_path / "r")]) == 4
    assert "baseline requires known aberrations" in capsys.readouterr().err


def test_dpd_outputs_and_determinism(tmp_path, workdir):
    _, cfg = workdir
    ds = _simulate(tmp_path, cfg)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["reconstruct", ds, "--method", "dpd", "--config", cfg, "--out", a]) == 0
    assert main(["reconstruct", ds, "--method", "dpd", "--config", cfg, "--out", b]) == 0
    expected = {"phase.pfm", "phase.png", "loss.csv", "loss.png", "zernike.csv", "config.yaml",
                "run.json", "weights.bin", "pupil_phase_000.png", "pupil_phase_001.png",
                "pupil_phase_002.png"}
    assert expected <= set(os.listdir(a))
    for name in expected - {"run.json"}:
        with open(os.path.join(a, name), "rb") as fa, open(os.path.join(b, name), "rb") as fb:
            assert fa.read() == fb.read(), name
    phase = read_pfm(os.path.join(a, "phase.pfm"))
    assert np.all(phase > 0) and np.all(phase < 2 * np.pi)
    assert load_config(os.path.join(a, "config.yaml")) == load_config(cfg)


def test_overrides_change_run(tmp_path, workdir):
    _, cfg = workdir
    ds = _simulate(tmp_path, cfg)
    out = str(tmp_path / "o")
    assert main(["reconstruct", ds, "--config", cfg, "--out", out,
                 "--seed", "11", "--iterations", "5"]) == 0
    its, _ = read_loss_csv(os.path.join(out, "loss.csv"))
    assert its[-1] == 5
    snap = load_config(os.path.join(out, "config.yaml"))
    assert snap.data["seed"] == 11 and snap.data["optimizer"]["iterations"] == 5


def test_compare_self_and_missing_truth(tmp_path, workdir, capsys):
    _, cfg = workdir
    ds = _simulate(tmp_path, cfg)
    fake = tmp_path / "fake"
    fake.mkdir()
    (fake / "phase.pfm").write_bytes(open(os.path.join(ds, "truth_phase.pfm"), "rb").read())
    assert main(["compare", str(fake), ds]) == 0
    assert json.loads((fake / "metrics.json").read_text())["rmse_offset_free"] == 0
    os.remove(os.path.join(ds, "truth_phase.pfm"))
    assert main(["compare", str(fake), ds]) == 4
    assert "truth" in capsys.readouterr().err


def test_decoder_not_fitting_dataset_is_config_error(tmp_path, workdir):
    _, cfg = workdir
    ds = _simulate(tmp_path, cfg)
    bad = tmp_path / "bad.yaml"
    bad.write_text(SMALL.replace("grid: {width: 32, height: 32, pixel_size: 0.25}",
                                 "grid: {width: 64, height: 64, pixel_size: 0.25}")
                   .replace("layers: 3", "layers: 2"))
    assert main(["reconstruct", ds, "--config", str(bad), "--out", str(tmp_path / "r")]) == 2


def test_divergence_exit_5(tmp_path, workdir, monkeypatch):
    import phasedecoder.cli as cli
    from phasedecoder.solvers import DivergenceError
    _, cfg = workdir
    ds = _simulate(tmp_path, cfg)

    def boom(*args, **kwargs):
        raise DivergenceError(7)

    monkeypatch.setattr(cli, "solve_dpd", boom)
    assert main(["reconstruct", ds, "--config", cfg, "--out", str(tmp_path / "r")]) == 5
