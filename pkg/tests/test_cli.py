import json

import numpy as np
import pytest

from linn.checkpoint import save_checkpoint
from linn.cli import main
from linn.data import load_wav, save_wav, write_pose_file
from linn.model import BinauralRenderer
from linn.probe import ProbeGrid, probe, read_csv

from conftest import moving_track, small_config


@pytest.fixture
def ckpt(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, BinauralRenderer(small_config(), seed=1))
    return path


@pytest.fixture
def clip(tmp_path, rng):
    mono = tmp_path / "mono.wav"
    pose = tmp_path / "pose.txt"
    save_wav(mono, (0.1 * rng.standard_normal((1, 9600))).astype(np.float32))
    write_pose_file(pose, moving_track(0.2))
    return mono, pose


def test_synth_train_render_eval(tmp_path, capsys):
    data = tmp_path / "ds"
    assert main(["synth-data", str(data), "--n-items", "3", "--duration", "0.25", "--seed", "2"]) == 0
    out = tmp_path / "model.ckpt"
    rc = main(["train", str(data), str(out), "--epochs", "2", "--hidden", "8",
               "--chunk-len", "9600", "--batch-size", "2"])
    assert rc == 0, capsys.readouterr().err
    log = [json.loads(l) for l in out.with_suffix(".log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1, 2]
    assert out.with_suffix(".best.ckpt").exists()
    item = data / "item_002"
    y = tmp_path / "y.wav"
    assert main(["render", str(item / "mono.wav"), str(item / "pose.txt"), str(out), str(y)]) == 0
    assert load_wav(y).samples.shape == (2, 12000)
    capsys.readouterr()
    assert main(["eval", str(y), str(item / "binaural.wav"), "--json", str(tmp_path / "r.json")]) == 0
    text = capsys.readouterr().out
    keys = [l.split("=")[0] for l in text.splitlines()]
    assert keys[:4] == ["wave_l2", "amplitude_l2", "phase_l2", "ipd_l2"]
    assert json.loads((tmp_path / "r.json").read_text())["wave_l2"] >= 0


def test_eval_self_is_zero(tmp_path, capsys, rng):
    p = tmp_path / "s.wav"
    save_wav(p, rng.standard_normal((2, 4800)).astype(np.float32))
    assert main(["eval", str(p), str(p)]) == 0
    vals = dict(l.split("=", 1) for l in capsys.readouterr().out.splitlines())
    assert all(float(vals[k]) == 0 for k in ("wave_l2", "amplitude_l2", "phase_l2", "ipd_l2"))


def test_render_modes_agree(tmp_path, ckpt, clip):
    mono, pose = clip
    a, b = tmp_path / "a.wav", tmp_path / "b.wav"
    assert main(["render", str(mono), str(pose), str(ckpt), str(a), "--block", "2048"]) == 0
    assert main(["render", str(mono), str(pose), str(ckpt), str(b), "--whole"]) == 0
    assert np.abs(load_wav(a).samples - load_wav(b).samples).max() < 1e-5


def test_render_no_ibc(tmp_path, ckpt, clip):
    mono, pose = clip
    out = tmp_path / "o.wav"
    assert main(["render", str(mono), str(pose), str(ckpt), str(out), "--no-ibc"]) == 0
    m = BinauralRenderer(small_config(), seed=1)
    x = load_wav(mono).samples[0]
    y0 = m.warp(x, moving_track(0.2))
    diff = np.abs(load_wav(out).samples - y0)[:, 512:-512].max()
    assert diff < 1e-4 * np.abs(y0).max()


def test_render_short_pose_fails(tmp_path, ckpt, capsys, rng):
    mono = tmp_path / "long.wav"
    save_wav(mono, rng.standard_normal((1, 48000)).astype(np.float32))
    pose = tmp_path / "p.txt"
    write_pose_file(pose, moving_track(0.2))
    rc = main(["render", str(mono), str(pose), str(ckpt), str(tmp_path / "o.wav")])
    err = capsys.readouterr().err.strip().splitlines()
    assert rc == 1 and len(err) == 1
    assert err[0].startswith("error: DataError:") and "audio needs" in err[0]


def test_bad_checkpoint_exit_code(tmp_path, capsys, clip):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    mono, pose = clip
    assert main(["render", str(mono), str(pose), str(bad), str(tmp_path / "o.wav")]) == 1
    assert capsys.readouterr().err.startswith("error: CheckpointError:")


def test_bench(tmp_path, ckpt, capsys):
    assert main(["bench", str(ckpt), "--seconds", "0.5", "--repetitions", "1",
                 "--json", str(tmp_path / "b.json")]) == 0
    vals = dict(l.split("=", 1) for l in capsys.readouterr().out.splitlines())
    assert int(vals["param_count"]) == BinauralRenderer(small_config()).param_count()
    assert float(vals["rtf"]) > 0 and vals["threads_single"] == "1"
    assert "basis" in json.loads((tmp_path / "b.json").read_text())
    assert main(["bench", str(ckpt), "--seconds", "0.2", "--repetitions", "1",
                 "--no-tdw-neural"]) == 0
    vals = dict(l.split("=", 1) for l in capsys.readouterr().out.splitlines())
    assert float(vals["warp_macs_per_second"]) == 0


def test_probe_cli(tmp_path, ckpt):
    out = tmp_path / "p.csv"
    assert main(["probe", str(ckpt), str(out), "--axis", "lateral", "--start", "-2",
                 "--stop", "2", "--points", "5"]) == 0
    rows = read_csv(out)
    assert len(rows) == 10 and {r["ear"] for r in rows} == {"left", "right"}


def test_probe_zero_weights():
    m = BinauralRenderer(small_config())
    for p in m.params():
        p.value[...] = 0
    rows = probe(m, ProbeGrid("azimuth", -90, 90, 7))
    assert len(rows) == 14
    assert all(r["mean_delta_logA"] == 0 and r["mean_delta_phi"] == 0 for r in rows)
    with pytest.raises(ValueError):
        probe(m, ProbeGrid(points=0))


def test_threads_env(monkeypatch):
    from linn.cli import build_parser
    monkeypatch.setenv("LINN_THREADS", "3")
    args = build_parser().parse_args(["render", "a", "b", "c", "d"])
    assert args.threads == 3
