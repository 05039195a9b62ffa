import numpy as np
import pytest

from trailnet import cli
from trailnet.nn.layers import Tanh


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("gen")
    assert cli.main(["gen-data", "--seed", "42", "--count", "300", "--out", str(root / "a")]) == 0
    return root / "a"


def test_gen_data_balanced_and_reproducible(data_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "gen-data", "--seed", "42", "--count", "300", "--out", str(tmp_path / "b"))
    assert code == 0
    assert out.splitlines()[0] == "seed\t42"
    assert "left=100\tcenter=100\tright=100" in out
    a = (data_dir / "manifest.tsv").read_text()
    assert a == (tmp_path / "b" / "manifest.tsv").read_text()
    assert len(a.splitlines()) == 301
    first = a.splitlines()[1].split("\t")[0]
    assert (data_dir / first).read_bytes() == (tmp_path / "b" / first).read_bytes()


def test_train_outputs(data_dir, tmp_path, capsys):
    out_w = tmp_path / "m.tnnw"
    code, out, _ = run(capsys, "train", "--model", "dnn", "--data", str(data_dir), "--epochs", "1",
                       "--out", str(out_w), "--seed", "3")
    assert code == 0
    assert out.splitlines()[0] == "seed\t3"
    assert "split\ttrain=192\tval=48\ttest=60" in out
    assert out_w.exists()
    hist = out_w.with_suffix(".history.tsv").read_text().splitlines()
    assert hist[0] == "epoch\ttrain_loss\tval_accuracy" and len(hist) == 2
    assert "summary\taccuracy=" in out

    code, out, _ = run(capsys, "eval", "--weights", str(out_w), "--data", str(data_dir), "--split", "test",
                       "--seed", "3")
    assert code == 0 and "n=60" in out


def test_xfer_eval_reports_balanced_baseline(data_dir, tmp_path, capsys):
    from trailnet.models import ModelSpec, TrailModel
    from trailnet.trainer import save_checkpoint

    save_checkpoint(TrailModel.create(ModelSpec("rnn"), 0), tmp_path / "r.tnnw")
    code, out, _ = run(capsys, "xfer-eval", "--weights", str(tmp_path / "r.tnnw"),
                       "--data-shifted", str(data_dir), "--per-class", "20")
    assert code == 0
    assert "n=60" in out and "balanced_baseline\t0.3333" in out


def test_row_order_rejected_for_cnn(data_dir, tmp_path, capsys):
    code, _, err = run(capsys, "train", "--model", "cnn", "--row-order", "bottom-to-top",
                       "--data", str(data_dir), "--out", str(tmp_path / "x.tnnw"))
    assert code == 1 and "row-order" in err
    assert not (tmp_path / "x.tnnw").exists()


def test_unknown_flag_exits_one(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["train", "--bogus"])
    assert info.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_missing_data_dir_is_input_error(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--weights", str(tmp_path / "none.tnnw"), "--data", str(tmp_path))
    assert code == 2 and err


def test_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seeds", "1")
    assert code == 0
    assert out.startswith("seed\t0\nchecks\t") and "failed\t0" in out


def test_gradcheck_detects_broken_backward(monkeypatch, capsys):
    good = Tanh.backward
    monkeypatch.setattr(Tanh, "backward", lambda self, g: 1.01 * good(self, g))
    code, out, _ = run(capsys, "gradcheck", "--seeds", "1")
    assert code == 1
    fails = [l for l in out.splitlines() if l.startswith("FAIL")]
    assert fails and all("seed=0" in l and "index=" in l for l in fails)
    assert any("tanh" in l.lower() for l in fails)


def test_drive_refuses_training_world(data_dir, capsys):
    code, _, err = run(capsys, "drive", "--world-seed", "42", "--oracle", "--data", str(data_dir), "--ticks", "5")
    assert code == 1 and "42" in err


def test_drive_oracle(tmp_path, capsys):
    code, out, _ = run(capsys, "drive", "--world-seed", "7", "--oracle", "--ticks", "2000",
                       "--trajectory-out", str(tmp_path / "t.tsv"), "--metrics-out", str(tmp_path / "m.tsv"))
    assert code == 0 and out.splitlines()[0] == "seed\t7"
    header, values = (tmp_path / "m.tsv").read_text().splitlines()
    row = dict(zip(header.split("\t"), values.split("\t")))
    assert float(row["on_trail_fraction"]) > 0.99
    assert len((tmp_path / "t.tsv").read_text().splitlines()) == 2001


def test_drive_needs_one_source(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["drive", "--world-seed", "7"])
    assert info.value.code == 1
