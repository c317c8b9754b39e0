"""End-to-end tests for the command-line surface and dataset persistence."""

import csv
import hashlib

import numpy as np
import pytest
from scipy.io import wavfile

from sstda import cli, data
from sstda.autodiff import save_checkpoint
from sstda.config import RunConfig, parse_flat_config, sampler_from_config
from sstda.tracker import CrnnModel, toy_config

CONFIG_TEXT = """
# tiny end-to-end run configuration
model.preset = toy

source.duration_s = 2.0,2.0
source.rt60 = 0.2,0.3
source.max_order = 2
source.noise = spatially-white
source.seed = 7

validation.duration_s = 2.0,2.0
validation.rt60 = 0.2,0.3
validation.max_order = 2
validation.noise = spatially-white
validation.seed = 8
validation.base_seed = 100

target.duration_s = 2.0,2.0
target.rt60 = 0.6,0.8
target.max_order = 2
target.noise = spatially-white
target.seed = 9
target.base_seed = 200

paths.source_train = source_train
paths.source_val = source_val
paths.target_train = target_train
paths.target_val = source_val
paths.checkpoint = pretrain/pretrained.ckpt

pretrain.epochs = 1
pretrain.batch = 2
pretrain.lr = 1e-4

adapt.epochs = 1
adapt.batch = 2
adapt.lr = 1e-4
adapt.warmup = 0
adapt.patience = 5
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Config + simulated datasets + a one-epoch pretrain checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "run.cfg"
    cfg_path.write_text(CONFIG_TEXT)
    run = ["--config", str(cfg_path)]
    assert cli.main(["simulate", *run, "--domain", "source", "--count", "2",
                     "--out", str(root / "source_train")]) == 0
    assert cli.main(["simulate", *run, "--domain", "validation", "--count", "1",
                     "--out", str(root / "source_val")]) == 0
    assert cli.main(["simulate", *run, "--domain", "target", "--count", "2",
                     "--out", str(root / "target_train")]) == 0
    assert cli.main(["pretrain", *run, "--out", str(root / "pretrain")]) == 0
    return root


# -- simulate --------------------------------------------------------


def test_simulate_outputs_and_manifest(workspace):
    d = workspace / "source_train"
    assert (d / "manifest.txt").exists()
    records = data.load_manifest(d)
    assert [r.record_id for r in records] == ["scene000000", "scene000001"]
    for r in records:
        assert r.wav_path.exists() and r.annotation_path.exists()
        assert r.meta["domain"] == "source"
        rate, samples = wavfile.read(r.wav_path)
        assert rate == 16000 and samples.shape[1] == 9


def test_simulate_deterministic(workspace, tmp_path):
    cfg_path = workspace / "run.cfg"
    assert cli.main(["simulate", "--config", str(cfg_path), "--domain", "source",
                     "--count", "2", "--out", str(tmp_path / "again")]) == 0
    a = (workspace / "source_train" / "manifest.txt").read_text()
    b = (tmp_path / "again" / "manifest.txt").read_text()
    assert a == b  # identical content checksums for identical seeds


def test_manifest_detects_corruption(workspace, tmp_path):
    src = workspace / "source_train"
    d = tmp_path / "corrupt"
    d.mkdir()
    for p in src.iterdir():
        (d / p.name).write_bytes(p.read_bytes())
    ann = d / "scene000001.ann.txt"
    ann.write_text(ann.read_text().replace("0 ", "1 ", 1))
    with pytest.raises(ValueError, match="scene000001"):
        data.load_manifest(d)


def test_manifest_detects_missing_file(workspace, tmp_path):
    src = workspace / "source_train"
    d = tmp_path / "missing"
    d.mkdir()
    for p in src.iterdir():
        (d / p.name).write_bytes(p.read_bytes())
    (d / "scene000000.meta.txt").unlink()
    with pytest.raises(FileNotFoundError, match="scene000000"):
        data.load_manifest(d)


def test_annotation_round_trip(workspace):
    rec = data.load_manifest(workspace / "source_train")[0]
    audio, track = data.read_scene_record(rec)
    assert audio.num_samples == 32000
    assert len(track) == 99
    assert track.azimuth_rad.min() >= 0.0 and track.azimuth_rad.max() < np.pi


# -- pretrain --------------------------------------------------------


def test_pretrain_artifacts(workspace):
    out = workspace / "pretrain"
    assert (out / "pretrained.ckpt").exists()
    with open(out / "pretrain_metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert rows[0].keys() == {"epoch", "split", "loss", "mae_deg", "acc_pct", "wall_s"}
    assert {r["split"] for r in rows} == {"train", "val"}
    val = [r for r in rows if r["split"] == "val"]
    assert all(float(r["mae_deg"]) >= 0 for r in val)


def test_pretrain_resume(workspace, tmp_path):
    cfg_path = workspace / "run.cfg"
    out = tmp_path / "resumed"
    rc = cli.main(["pretrain", "--config", str(cfg_path),
                   "--resume", str(workspace / "pretrain" / "pretrained.ckpt"),
                   "--out", str(out)])
    assert rc == 0
    with open(out / "pretrain_metrics.csv") as f:
        rows = list(csv.DictReader(f))
    # resumed run continues the epoch count instead of restarting at 0
    assert int(rows[0]["epoch"]) == 1


# -- adapt -----------------------------------------------------------


@pytest.mark.parametrize("mode", ["so", "da", "iwda"])
def test_adapt_modes(workspace, tmp_path, mode):
    out = tmp_path / mode
    rc = cli.main(["adapt", "--config", str(workspace / "run.cfg"),
                   "--mode", mode, "--out", str(out)])
    assert rc == 0
    assert (out / f"adapted_{mode}.ckpt").exists()
    with open(out / f"adapt_{mode}_log.csv") as f:
        header = csv.DictReader(f).fieldnames
    assert ("l_w" in header) == (mode == "iwda")
    assert {"step", "l_sst", "l_da", "lambda"} <= set(header)


def test_adapt_so_ignores_target_path(workspace, tmp_path):
    """Source-only mode must not read target training audio at all."""
    cfg = (workspace / "run.cfg").read_text()
    for key in ("source_train", "source_val", "checkpoint"):
        cfg = cfg.replace(f"paths.{key} = ", f"paths.{key} = {workspace}/")
    cfg = cfg.replace("paths.target_val = source_val",
                      f"paths.target_val = {workspace}/source_val")
    cfg = cfg.replace("paths.target_train = target_train",
                      "paths.target_train = does_not_exist")
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(cfg)
    assert cli.main(["adapt", "--config", str(cfg_path), "--mode", "so",
                     "--out", str(tmp_path / "so")]) == 0
    # the adversarial modes do need it
    assert cli.main(["adapt", "--config", str(cfg_path), "--mode", "da",
                     "--out", str(tmp_path / "da")]) == 2


# -- evaluate --------------------------------------------------------


def _write_constant_dataset(d, azimuth_deg, n_frames=49, channels=9, seed=0):
    """Hand-rolled record: noise wav + constant-azimuth annotation."""
    d.mkdir()
    rng = np.random.default_rng(seed)
    n_samples = 320 * (n_frames - 1) + 512
    wavfile.write(d / "rec.wav", 16000,
                  (0.1 * rng.standard_normal((n_samples, channels))).astype(np.float32))
    ann = "\n".join(f"{i} {azimuth_deg:.6f} 1" for i in range(n_frames)) + "\n"
    (d / "rec.ann.txt").write_text(ann)
    (d / "rec.meta.txt").write_text("record_id = rec\n")

    def sha(p):
        return hashlib.sha256(p.read_bytes()).hexdigest()

    (d / "manifest.txt").write_text(
        f"rec rec.wav {sha(d / 'rec.wav')} rec.ann.txt {sha(d / 'rec.ann.txt')} "
        f"rec.meta.txt {sha(d / 'rec.meta.txt')}\n")


def test_evaluate_identity_on_hardwired_model(tmp_path):
    """A model pinned to always output the 90-degree likelihood bump scores
    MAE 0 / Acc 100 on a dataset annotated at a constant 90 degrees."""
    from sstda.features import DoaTrack, encode_likelihood

    _write_constant_dataset(tmp_path / "dataset", 90.0)
    cfg = toy_config()
    model = CrnnModel(cfg, rng=np.random.default_rng(0))
    bump = encode_likelihood(DoaTrack(azimuth_rad=np.array([np.pi / 2]),
                                      active=np.array([True])))[0]
    bump = np.clip(bump, 1e-6, 1.0 - 1e-6)
    model.params["e.fc2.w"].data[:] = 0.0
    model.params["e.fc2.b"].data[:] = np.log(bump / (1.0 - bump))
    ckpt = tmp_path / "pinned.ckpt"
    save_checkpoint(ckpt, model.state_arrays(),
                    {"version": 1, "architecture": cfg.to_dict(), "seed": 0})
    out = tmp_path / "eval"
    assert cli.main(["evaluate", "--checkpoint", str(ckpt),
                     "--data", str(tmp_path / "dataset"), "--out", str(out)]) == 0
    with open(out / "metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1
    assert float(rows[0]["mae_deg"]) == 0.0
    assert float(rows[0]["acc_pct"]) == 100.0
    assert (out / "boxplot.json").exists()


# -- exit codes ------------------------------------------------------


def test_usage_error_exit_code_1():
    with pytest.raises(SystemExit) as e:
        cli.main(["adapt", "--mode", "so", "--out", "x"])  # missing --config
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["adapt", "--config", "c", "--mode", "bogus", "--out", "x"])
    assert e.value.code == 1


def test_runtime_error_exit_code_2(tmp_path):
    rc = cli.main(["evaluate", "--checkpoint", str(tmp_path / "nope.ckpt"),
                   "--data", str(tmp_path), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_gradcheck_command_exit_code_0(capsys):
    assert cli.main(["gradcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


# -- config parsing --------------------------------------------------


def test_parse_flat_config():
    kv = parse_flat_config("a.b = 1\n# comment\n\nc.d = x,y # trailing\n")
    assert kv == {"a.b": "1", "c.d": "x,y"}
    with pytest.raises(ValueError, match="line 1"):
        parse_flat_config("not a key value line")


def test_run_config_accessors(tmp_path):
    p = tmp_path / "r.cfg"
    p.write_text("a.i = 3\na.f = 2.5\na.fs = 1,2.5\npaths.d = rel\n")
    cfg = RunConfig.from_file(p)
    assert cfg.get_int("a.i", 0) == 3
    assert cfg.get_float("a.f", 0.0) == 2.5
    assert cfg.get_floats("a.fs", ()) == (1.0, 2.5)
    assert cfg.get_int("missing", 7) == 7
    assert cfg.path("paths.d") == tmp_path / "rel"
    with pytest.raises(KeyError):
        cfg.path("paths.missing")


def test_sampler_from_config_overrides():
    kv = parse_flat_config(CONFIG_TEXT)
    s = sampler_from_config(kv, "target")
    assert s.rt60_range == (0.6, 0.8)
    assert s.noise_model == "spatially-white"
    assert s.seed == 9
    assert s.room_min == (3.0, 3.0, 2.5)  # defaults survive
