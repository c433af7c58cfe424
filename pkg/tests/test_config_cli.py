import dataclasses
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jigsawhsi import cli, graph, hsi_io
from jigsawhsi.config import load_config, parse_config, serialize_config
from jigsawhsi.errors import ValidationError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

IP_TEXT = """
[data]
cube = ip.hdr
labels = ip_gt.hdr

[preprocess]
window_size = 27
decomposition = FA
input_channels = 9

[network]
hsi_filters = none
filter_size = 9

[training]
optimizer = Adadelta
learning_rate = 0.1
batch_size = 106
max_epochs = 500
patience = 20
"""


def test_ip_config_echoed():
    cfg = parse_config(IP_TEXT)
    assert (cfg.window_size, cfg.decomposition, cfg.input_channels) == (27, "FA", 9)
    assert cfg.hsi_filters is None and cfg.filter_size == 9
    assert (cfg.optimizer, cfg.learning_rate, cfg.batch_size, cfg.max_epochs, cfg.patience) == ("adadelta", 0.1, 106, 500, 20)
    assert cfg.seed == 1337


def test_pu_config_accepted():
    text = (IP_TEXT.replace("window_size = 27", "window_size = 25").replace("FA", "SVD")
            .replace("hsi_filters = none", "hsi_filters = 512").replace("106", "120").replace("patience = 20", "patience = 40"))
    cfg = parse_config(text)
    assert (cfg.decomposition, cfg.hsi_filters, cfg.batch_size, cfg.patience) == ("TSVD", 512, 120, 40)


@pytest.mark.parametrize("name", ["ip", "pu", "sa", "synthetic"])
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / f"{name}.ini")
    assert cfg.base_dir == CONFIGS


def test_comments_and_case_insensitive_keys():
    cfg = parse_config(IP_TEXT.replace("batch_size = 106", "Batch_Size = 50  ; inline\n# full line"))
    assert cfg.batch_size == 50


@pytest.mark.parametrize("old,new,msg", [
    ("window_size = 27", "window_size = 26", "window_size must be odd"),
    ("filter_size = 9", "filter_size = 29", "exceeds window_size"),
    ("optimizer = Adadelta", "optimizer = rmsprop", "optimizer"),
    ("decomposition = FA", "decomposition = ICA", "ICA"),
    ("patience = 20", "patence = 20", "unknown key 'patence'"),
    ("[network]", "[netwerk]", "unknown section"),
    ("input_channels = 9\n", "", "input_channels"),
    ("batch_size = 106", "batch_size = lots", "batch_size"),
])
def test_config_errors(old, new, msg):
    with pytest.raises(ValidationError, match=msg):
        parse_config(IP_TEXT.replace(old, new))


def test_malformed_line_reports_line_number():
    text = IP_TEXT.replace("patience = 20", "patience 20")
    lineno = text.splitlines().index("patience 20") + 1
    with pytest.raises(ValidationError, match=f"line {lineno}"):
        parse_config(text)


def test_serialize_round_trip():
    cfg = parse_config(IP_TEXT.replace("hsi_filters = none", "hsi_filters = 8\nmodule_a = 4, 2\ncrop = no"))
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert parse_config(serialize_config(again)) == again


@given(st.integers(0, 20).map(lambda v: 2 * v + 1), st.floats(0.05, 0.95), st.sampled_from(["sgd", "adam", "adadelta"]),
       st.integers(0, 2**31 - 1), st.booleans())
def test_round_trip_property(window, frac, opt, seed, stratified):
    text = (IP_TEXT.replace("window_size = 27", f"window_size = {window}").replace("filter_size = 9", "filter_size = 1")
            .replace("Adadelta", opt) + f"seed = {seed}\ntrain_frac = {frac!r}\nstratified = {stratified}\n")
    cfg = parse_config(text)
    assert parse_config(serialize_config(cfg)) == cfg


# ---------------------------------------------------------------- commands

SCENE_INI = """
[data]
cube = scene.hdr
labels = scene_gt.hdr
output_dir = out

[preprocess]
window_size = 5
decomposition = PCA
input_channels = 4

[network]
filter_size = 3
branch_units = 4
dense_units = 16, 8

[training]
optimizer = Adam
learning_rate = 0.003
batch_size = 32
max_epochs = 4
patience = 3
"""


@pytest.fixture
def workdir(tmp_path):
    cube, labels = hsi_io.generate_synthetic_scene(20, 20, 8, 3, 6, 0.05, seed=1)
    hsi_io.write_cube(cube, tmp_path / "scene.hdr")
    hsi_io.write_labels(labels, tmp_path / "scene_gt.hdr")
    (tmp_path / "run.ini").write_text(SCENE_INI)
    return tmp_path


def test_train_writes_artifacts_and_is_deterministic(workdir, capsys):
    assert cli.main(["train", "-c", str(workdir / "run.ini")]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("OA: ") and "Kappa: " in line and "AA: " in line
    out = workdir / "out"
    for name in (cli.CHECKPOINT, cli.DECOMPOSER, cli.HISTORY, cli.REPORT, cli.CONFUSION):
        assert (out / name).is_file()
    first = {p.name: p.read_bytes() for p in out.iterdir()}

    assert cli.main(["train", "-c", str(workdir / "run.ini")]) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    assert first == second


def test_evaluate_and_predict(workdir, capsys):
    ini = str(workdir / "run.ini")
    assert cli.main(["train", "-c", ini]) == 0
    trained = capsys.readouterr().out.strip()
    out = workdir / "out"
    assert cli.main(["evaluate", "-m", str(out / "model.ckpt"), "-d", str(out / "decomp.bin"), "-c", ini]) == 0
    assert capsys.readouterr().out.strip() == trained
    assert (out / "eval_report.txt").read_text() == (out / "report.txt").read_text()

    args = ["predict", "-m", str(out / "model.ckpt"), "-d", str(out / "decomp.bin"),
            "-i", str(workdir / "scene.hdr"), "-o", str(workdir / "maps" / "scene")]
    assert cli.main(args + ["-l", str(workdir / "scene_gt.hdr")]) == 0
    full = hsi_io.read_class_map(workdir / "maps" / "scene_full.hdr")
    masked = hsi_io.read_class_map(workdir / "maps" / "scene_masked.hdr")
    gt = hsi_io.read_labels(workdir / "scene_gt.hdr").labels
    assert full.labels.shape == gt.shape
    assert np.all(masked.labels[gt == 0] == 0)
    assert np.array_equal(masked.labels[gt > 0], full.labels[gt > 0])
    assert (workdir / "maps" / "scene_full.pgm").is_file()


def test_missing_labels_exit_2(workdir, capsys):
    (workdir / "scene_gt.hdr").unlink()
    assert cli.main(["train", "-c", str(workdir / "run.ini")]) == 2
    assert "scene_gt.hdr" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path):
    assert cli.main(["train", "-c", str(tmp_path / "nope.ini")]) == 2


def test_bad_config_exit_3(workdir, capsys):
    (workdir / "run.ini").write_text(SCENE_INI.replace("window_size = 5", "window_size = 4"))
    assert cli.main(["train", "-c", str(workdir / "run.ini")]) == 3
    assert "window_size must be odd" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["fly"], ["train"], ["evaluate", "-m", "x", "-c", "y"]])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 1


def test_checkpoint_mismatch_exit_3(workdir, capsys):
    ini = workdir / "run.ini"
    assert cli.main(["train", "-c", str(ini)]) == 0
    ini.write_text(SCENE_INI.replace("branch_units = 4", "branch_units = 5"))
    out = workdir / "out"
    code = cli.main(["evaluate", "-m", str(out / "model.ckpt"), "-d", str(out / "decomp.bin"), "-c", str(ini)])
    assert code == 3
    assert "branch_units" in capsys.readouterr().err


def test_thread_cap(workdir, monkeypatch):
    from threadpoolctl import threadpool_info

    seen = []
    real = cli.run_train

    def spy(cfg, quiet=False):
        seen.extend(info["num_threads"] for info in threadpool_info())
        return real(cfg, quiet)

    monkeypatch.setattr(cli, "run_train", spy)
    monkeypatch.setenv("JIGSAWHSI_THREADS", "1")
    assert cli.main(["train", "-c", str(workdir / "run.ini")]) == 0
    assert seen and all(n == 1 for n in seen)
    monkeypatch.setenv("JIGSAWHSI_THREADS", "zero")
    assert cli.main(["train", "-c", str(workdir / "run.ini")]) == 3


def test_config_echo_matches_checkpoint_spec(workdir):
    cfg = load_config(workdir / "run.ini")
    cli.run_train(cfg, quiet=True)
    spec = graph.read_checkpoint_spec(workdir / "out" / "model.ckpt")
    assert spec == cfg.network_spec(3)
    assert dataclasses.replace(spec, branch_units=9) != spec
