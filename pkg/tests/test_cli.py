import csv

import numpy as np
import pytest

from catpan.cli.config import RunConfig
from catpan.cli.main import cmd_adapt, cmd_eval, cmd_synth, main
from catpan.cli.report import dumps, loads, read_report
from catpan.core import tensor_read
from catpan.errors import ValidationError

SMALL_CFG = """
[backbone]
latent = 8
blocks = 1
[pretrain]
epochs = 2
[adapt]
n_patches = 2
epochs = 1
"""


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "run.ini").write_text(SMALL_CFG)
    assert main(["synth", "--seed", "3", "--count", "2", "--size", "128", "--out-dir", str(tmp_path / "data")]) == 0
    return tmp_path


# ----------------------------------------------------------------- config


def test_config_defaults_roundtrip():
    cfg = RunConfig()
    assert cfg.adapt.n_patches == 8 and cfg.sensor.ratio == 4 and cfg.pretrain["epochs"] == 200
    back = RunConfig.from_text(cfg.to_text())
    assert back.sections() == cfg.sections()


def test_config_parses_sections():
    cfg = RunConfig.from_text("""
[sensor]
mtf_gain = 0.15
radiometric_gamma = 1.15
[adapt]
preset = simulated
[run]
crop_to_multiple = true
preview_bands = 3,2,1
""")
    assert cfg.sensor.mtf_gain == (0.15,) * 4 and cfg.sensor.radiometric_gamma == 1.15
    assert cfg.adapt.eta == (10.0, 100.0, 10000.0)
    assert cfg.run["crop_to_multiple"] is True and cfg.run["preview_bands"] == (3, 2, 1)


def test_config_pan_weights_change_band_count():
    cfg = RunConfig.from_text("[sensor]\npan_weights = 0.5,0.3,0.2\n")
    assert cfg.sensor.bands == 3 and cfg.backbone_config().bands == 3


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n", "[adapt]\nnope = 1\n", "[adapt]\nepochs = ten\n", "[backbone]\nlatent = 2\n",
    "[run]\ncrop_to_multiple = maybe\n",
])
def test_config_errors(text):
    with pytest.raises(ValidationError):
        RunConfig.from_text(text)


def test_report_roundtrip():
    sections = {"a": {"x": 0.1 + 0.2, "n": 3, "s": "word", "l": [1.5, 2.0], "none": None, "b": True}}
    assert loads(dumps(sections)) == sections


# --------------------------------------------------------------- commands


def test_synth_deterministic_and_guarded(tmp_path):
    cmd_synth(5, 1, 64, tmp_path / "a")
    cmd_synth(5, 1, 64, tmp_path / "b")
    for name in ("gt", "lrms", "pan"):
        assert tensor_read(tmp_path / "a/scene_000" / f"{name}.catt") == tensor_read(tmp_path / "b/scene_000" / f"{name}.catt")
    with pytest.raises(ValidationError):
        cmd_synth(5, 1, 64, tmp_path / "a")
    cmd_synth(6, 1, 64, tmp_path / "a", force=True)
    assert read_report(tmp_path / "a/manifest.txt")["manifest"]["seed"] == 6


def test_end_to_end_commands(workspace):
    w = workspace
    ini = str(w / "run.ini")
    assert main(["pretrain", "--data-dir", str(w / "data"), "--config", ini, "--out", str(w / "w.catw"),
                 "--report", str(w / "pre.txt")]) == 0
    pre = read_report(w / "pre.txt")
    assert len(pre["series"]["epoch_loss"]) == 2 and pre["config.pretrain"]["epochs"] == 2

    scene = w / "data/scene_000"
    args = ["adapt", "--lrms", str(scene / "lrms.catt"), "--pan", str(scene / "pan.catt"), "--weights",
            str(w / "w.catw"), "--config", ini]
    assert main(args + ["--out", str(w / "f.catt"), "--report", str(w / "ad.txt"), "--preview", str(w / "f.ppm")]) == 0
    rep = read_report(w / "ad.txt")
    assert rep["timing"]["adapt_seconds"] > 0 and rep["timing"]["infer_seconds"] > 0
    assert rep["config.adapt"]["n_patches"] == 2 and rep["run"]["mode"] == "cat"
    assert (w / "f.ppm").read_bytes().startswith(b"P6\n128 128\n255\n")

    assert main(args + ["--out", str(w / "b.catt"), "--no-cat"]) == 0
    (w / "zero.ini").write_text(SMALL_CFG.replace("epochs = 1", "epochs = 0"))
    zero = ["adapt", "--lrms", str(scene / "lrms.catt"), "--pan", str(scene / "pan.catt"), "--weights",
            str(w / "w.catw"), "--config", str(w / "zero.ini"), "--out", str(w / "z.catt")]
    assert main(zero) == 0
    assert tensor_read(w / "b.catt") == tensor_read(w / "z.catt")

    q = cmd_eval(w / "f.catt", scene / "lrms.catt", scene / "pan.catt", gt=scene / "gt.catt",
                 report=w / "ev.txt")
    ev = read_report(w / "ev.txt")["quality"]
    assert np.isclose(ev["hqnr"], q.hqnr) and ev["sam"] is not None and 0 <= q.hqnr <= 1


def test_adapt_shape_error_names_relation(workspace, capsys):
    scene = workspace / "data/scene_000"
    code = main(["adapt", "--lrms", str(scene / "lrms.catt"), "--pan", str(scene / "lrms.catt"),
                 "--out", str(workspace / "x.catt")])
    assert code == 1
    assert "H_pan = 4 * H_lrms" in capsys.readouterr().err


def test_adapt_crop_to_multiple(tmp_path):
    cmd_synth(1, 1, 80, tmp_path / "d")
    (tmp_path / "c.ini").write_text("[backbone]\nlatent = 8\nblocks = 1\n[adapt]\nn_patches = 1\nepochs = 1\n"
                                    "[run]\ncrop_to_multiple = true\n")
    s = tmp_path / "d/scene_000"
    cmd_adapt(s / "lrms.catt", s / "pan.catt", tmp_path / "f.catt", config=tmp_path / "c.ini")
    assert tensor_read(tmp_path / "f.catt").shape == (4, 64, 64)
    with pytest.raises(Exception, match="crop-to-multiple"):
        cmd_adapt(s / "lrms.catt", s / "pan.catt", tmp_path / "g.catt")
    (tmp_path / "n.ini").write_text("[backbone]\nlatent = 8\nblocks = 1\n[adapt]\nn_patches = 1\nepochs = 1\n")
    assert main(["adapt", "--lrms", str(s / "lrms.catt"), "--pan", str(s / "pan.catt"), "--config",
                 str(tmp_path / "n.ini"), "--crop-to-multiple", "--out", str(tmp_path / "h.catt")]) == 0
    assert tensor_read(tmp_path / "h.catt").shape == (4, 64, 64)


def test_io_error_exit_code(tmp_path):
    assert main(["eval", "--fused", str(tmp_path / "missing"), "--lrms", "a", "--pan", "b"]) == 2


def test_sweep_and_bench_csv(workspace):
    w = workspace
    ini = str(w / "run.ini")
    scene = w / "data/scene_000"
    assert main(["sweep", "--param", "n_patches", "--values", "1,2", "--config", ini, "--lrms",
                 str(scene / "lrms.catt"), "--pan", str(scene / "pan.catt"), "--out", str(w / "s.csv")]) == 0
    rows = list(csv.reader(open(w / "s.csv")))
    assert rows[0] == ["value", "hqnr", "adapt_seconds"] and [r[0] for r in rows[1:]] == ["1", "2"]
    assert main(["bench", "--config", ini, "--sizes", "64,128", "--workers", "1", "--out", str(w / "b.csv")]) == 0
    rows = list(csv.reader(open(w / "b.csv")))
    assert rows[0] == ["size", "workers", "adapt_s", "infer_s", "total_s"]
    assert rows[1][2] == "FAILED" and float(rows[2][4]) > 0
    assert main(["sweep", "--param", "patch_size", "--values", "30", "--config", ini, "--out", str(w / "t.csv")]) == 1


# --------------------------------------------------------- worked examples


def test_synth_examples(tmp_path):
    cmd_synth(0, 1, 256, tmp_path / "a")
    cmd_synth(0, 1, 256, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    assert tensor_read(tmp_path / "a/scene_000/lrms.catt").shape == (4, 64, 64)
    cmd_synth(4, 3, 64, tmp_path / "c")
    scenes = read_report(tmp_path / "c/manifest.txt")["scenes"]
    assert sorted(scenes) == ["scene_000", "scene_001", "scene_002"] and len(set(scenes.values())) == 3


def test_pretrain_examples(workspace):
    from catpan.backbone import Backbone

    w = workspace
    (w / "p0.ini").write_text(SMALL_CFG.replace("epochs = 2", "epochs = 0"))
    main(["pretrain", "--data-dir", str(w / "data"), "--config", str(w / "p0.ini"), "--out", str(w / "z.catw")])
    cfg = RunConfig.load(w / "p0.ini").backbone_config()
    init = Backbone.init(cfg, 0).state()
    assert all(np.array_equal(Backbone.load(w / "z.catw", cfg).state()[k], init[k]) for k in init)
    (w / "p5.ini").write_text(SMALL_CFG.replace("epochs = 2", "epochs = 5"))
    for name in ("a", "b"):
        main(["pretrain", "--data-dir", str(w / "data"), "--config", str(w / "p5.ini"), "--out",
              str(w / f"{name}.catw"), "--report", str(w / f"{name}.txt")])
    assert (w / "a.catw").read_bytes() == (w / "b.catw").read_bytes()
    rep = read_report(w / "a.txt")["pretrain"]
    assert rep["final_loss"] < rep["first_loss"]


@pytest.mark.slow
def test_eval_report_consistent_and_beats_upsample(pretrained, tmp_path):
    from catpan.core import tensor_write
    from catpan.resample import upsample

    cmd_synth(21, 1, 256, tmp_path / "d")
    s = tmp_path / "d/scene_000"
    pretrained.backbone.save(tmp_path / "w.catw")
    cmd_adapt(s / "lrms.catt", s / "pan.catt", tmp_path / "f.catt", weights=tmp_path / "w.catw")
    tensor_write(upsample(tensor_read(s / "lrms.catt").as_f64(), 4), tmp_path / "u.catt")
    qf = cmd_eval(tmp_path / "f.catt", s / "lrms.catt", s / "pan.catt", report=tmp_path / "ev.txt")
    qu = cmd_eval(tmp_path / "u.catt", s / "lrms.catt", s / "pan.catt")
    ev = read_report(tmp_path / "ev.txt")["quality"]
    assert ev["hqnr"] == (1 - ev["d_lambda"]) * (1 - ev["d_s"])
    assert qf.hqnr > qu.hqnr


def test_sweep_examples(workspace):
    from catpan.cli.main import cmd_sweep

    w = workspace
    (w / "sw.ini").write_text(SMALL_CFG.replace("epochs = 1", "epochs = 2") + "[run]\nscene_size = 256\n")
    rows = cmd_sweep("n_patches", [1], w / "one.csv", config=w / "sw.ini")
    assert len(rows) == 1 and len(open(w / "one.csv").read().splitlines()) == 2
    rows = cmd_sweep("n_patches", [1, 2, 4, 8, 16], w / "n.csv", config=w / "sw.ini")
    secs = [r[2] for r in rows]
    assert all(b > a for a, b in zip(secs, secs[1:]))


def test_bench_per_pixel_time_roughly_constant(workspace):
    from catpan.cli.main import cmd_bench

    rows = cmd_bench([128, 256], [1], workspace / "b.csv", config=workspace / "run.ini")
    per_px = [r[3] / r[0] ** 2 for r in rows]
    assert max(per_px) / min(per_px) < 3.0


@pytest.mark.skipif(len(__import__("os").sched_getaffinity(0)) < 2, reason="needs more than one usable CPU core")
def test_bench_more_workers_faster(workspace):
    from catpan.cli.main import cmd_bench

    rows = cmd_bench([256], [1, 4], workspace / "b.csv", config=workspace / "run.ini")
    assert rows[1][3] < rows[0][3]
