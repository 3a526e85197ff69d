import json
from importlib import resources

import numpy as np
import pytest
from filelock import FileLock

from cxrcascade.cli import main
from cxrcascade.config import DEFAULTS, load_config
from cxrcascade.exceptions import ConfigError
from cxrcascade.models import load_checkpoint

MINI = ["--synth.count", "40", "--synth.side", "16", "--geometry.full_side", "16",
        "--geometry.patch_side", "8", "--geometry.stride", "4", "--geometry.input_side", "8",
        "--patchnet.base_channels", "2", "--patchnet.blocks", "1",
        "--fusionnet.base_channels", "2", "--fusionnet.blocks", "1",
        "--fusionnet.heatmap_channels", "2", "--train.stage1_epochs", "2",
        "--train.stage2_epochs", "2", "--train.batch_size", "8"]


def run(tmp_path, *args, out="out"):
    return main([*args, "-q", "--run.output_dir", str(tmp_path / out)])


def one_line(capsys):
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1
    return err


def test_compare_readers_bundled(tmp_path, capsys):
    assert run(tmp_path, "compare-readers") == 0
    out = capsys.readouterr().out
    assert "human_acc" in out
    kv = (tmp_path / "out" / "reports" / "readers.kv").read_text()
    assert "human_acc=0.72\n" in kv and "model_acc=0.92\n" in kv and "union_acc=1.0\n" in kv
    assert "disagreements=1,2,5,6,16,17,20,22,24\n" in kv
    manifest = json.loads((tmp_path / "out" / "runs" / "compare-readers.json").read_text())
    assert manifest["command"] == "compare-readers"
    assert set(manifest) >= {"config_hash", "seed", "artifacts", "timestamp"}


def test_unknown_command(tmp_path, capsys):
    assert run(tmp_path, "fly") == 2
    assert "unknown command" in one_line(capsys)


def test_unknown_override(tmp_path, capsys):
    assert run(tmp_path, "synth", "--geometry.bogus", "1") == 2
    assert "bogus" in one_line(capsys)
    assert run(tmp_path, "synth", "positional") == 2


@pytest.mark.parametrize("flags", [["--geometry.stride", "3"], ["--geometry.patch_side", "80"],
                                   ["--geometry.input_side", "24"], ["--patchnet.blocks", "6"]])
def test_bad_geometry_rejected_before_compute(tmp_path, capsys, flags):
    assert run(tmp_path, "synth", *flags) == 2
    one_line(capsys)
    assert not (tmp_path / "out").exists()


def test_missing_prerequisites(tmp_path, capsys):
    assert run(tmp_path, "train-fusion") == 3
    assert "stage-1 checkpoint" in one_line(capsys)
    assert run(tmp_path, "train-patch") == 3
    assert "training manifest" in one_line(capsys)
    assert run(tmp_path, "compare-readers", "--readers.path", str(tmp_path / "none.tsv")) == 3


def test_synth_count_zero(tmp_path):
    assert run(tmp_path, "synth", "--synth.count", "0") == 0
    text = (tmp_path / "out" / "data" / "train.tsv").read_text()
    assert text == "#cxr-manifest v1 side=64\n"


def test_bad_manifest_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("#cxr-manifest v1 side=16\nx\tmissing.pgm\t1\tpneumonia\t\n")
    assert run(tmp_path, "train-patch", "--data.train_manifest", str(bad)) == 4
    one_line(capsys)


def test_bad_reader_file(tmp_path, capsys):
    bad = tmp_path / "r.tsv"
    bad.write_text("id\ttruth\thuman\tmodel\tcategory\n1\t1\t0\t1\tnormal\n")
    assert run(tmp_path, "compare-readers", "--readers.path", str(bad)) == 4
    assert ":2:" in one_line(capsys)


def test_locked_output_dir(tmp_path, capsys):
    (tmp_path / "out").mkdir()
    with FileLock(str(tmp_path / "out" / ".lock")):
        assert run(tmp_path, "compare-readers") == 2
    assert "locked" in one_line(capsys)


def test_nonfinite_loss_exit_code(tmp_path, capsys):
    assert run(tmp_path, "synth", *MINI) == 0
    assert run(tmp_path, "train-patch", *MINI, "--train.base_lr", "1e38",
               "--train.stage1_epochs", "4") == 5
    assert "non-finite" in one_line(capsys)


def test_config_file_and_overrides(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nseed = 9\n[geometry]\nstride = 4\n")
    cfg = load_config(ini, ["train.batch_size=4"])
    assert cfg.seed == 9 and cfg.grid.grid_side == 9
    assert cfg.train(1).batch_size == 4
    assert cfg.digest() != load_config(ini).digest()
    assert cfg.output_dir == tmp_path / "runs" / "desk"
    ini.write_text("[nope]\na = 1\n")
    with pytest.raises(ConfigError):
        load_config(ini)


def test_bundled_configs_validate():
    base = resources.files("cxrcascade") / "resources"
    with resources.as_file(base / "desk.ini") as path:
        desk = load_config(path).validate()
    assert desk.raw == DEFAULTS
    with resources.as_file(base / "full.ini") as path:
        full = load_config(path).validate()
    assert full.grid.grid_side == 17
    assert full.patchnet().conv_layer_count == 13
    assert full.train(1).schedule.base_lr == 1e-5


def pipeline(tmp_path, out):
    for cmd in ("synth", "train-patch", "heatmaps", "train-fusion", "eval"):
        assert run(tmp_path, cmd, *MINI, out=out) == 0, cmd
    return tmp_path / out


def artifact_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and "runs" not in p.relative_to(root).parts and p.name != ".lock"}


def test_mini_pipeline_replays_byte_identical(tmp_path, capsys):
    a = pipeline(tmp_path, "a")
    b = pipeline(tmp_path, "b")
    fa, fb = artifact_bytes(a), artifact_bytes(b)
    assert fa.keys() == fb.keys()
    assert [k for k in fa if fa[k] != fb[k]] == []
    for name in ("checkpoints/stage1.ckpt", "checkpoints/stage2.ckpt", "history/stage1.tsv",
                 "history/stage2.tsv", "reports/eval.txt", "reports/eval.kv",
                 "heatmaps/index.json"):
        assert name in fa
    kv = (a / "reports" / "eval.kv").read_text()
    for key in ("auroc=", "f1=", "region.apex_y=0,0.2", "strata.review_area.n=",
                "localization.fraction="):
        assert key in kv
    assert load_checkpoint(a / "checkpoints" / "stage2.ckpt").metadata["seed"] == 7
    runs = json.loads((a / "runs" / "eval.json").read_text())
    assert "reports/eval.kv" in runs["artifacts"]


def test_predict_and_cache_checks(tmp_path, capsys):
    root = pipeline(tmp_path, "p")
    capsys.readouterr()
    test_manifest = root / "data" / "test.tsv"
    assert run(tmp_path, "predict", *MINI, "--predict.input", str(test_manifest), out="p") == 0
    rows = (root / "predictions" / "test" / "predictions.tsv").read_text().splitlines()
    assert rows[0] == "id\tprobability\tdiagnosis" and len(rows) == 9
    first = rows[1].split("\t")[0]
    assert (root / "predictions" / "test" / "heatmaps" / f"{first}.bits.txt").exists()
    image = root / "data" / "images" / f"{first}.pgm"
    capsys.readouterr()
    assert run(tmp_path, "predict", *MINI, "--predict.input", str(image), out="p") == 0
    line = capsys.readouterr().out.strip().split("\t")
    assert line[0] == first and line[1:] == rows[1].split("\t")[1:]
    # the cache records its grid; a different stride must not reuse it
    assert run(tmp_path, "train-fusion", *MINI, "--geometry.stride", "8", out="p") == 2
    assert "heatmap cache" in one_line(capsys)
    assert run(tmp_path, "predict", *MINI, out="p") == 2
    one_line(capsys)


def test_augmented_training_set(tmp_path):
    flags = MINI + ["--train.augment_target", "40"]
    assert run(tmp_path, "synth", *flags) == 0
    assert run(tmp_path, "train-patch", *flags) == 0
    aug = (tmp_path / "out" / "data" / "augmented" / "manifest.tsv").read_text().splitlines()
    assert len(aug) == 41 and any("aug0" in line for line in aug)
    assert run(tmp_path, "heatmaps", *flags) == 0
    assert run(tmp_path, "train-fusion", *flags) == 0
    assert run(tmp_path, "train-patch", *MINI, "--train.augment_target", "5") == 2
