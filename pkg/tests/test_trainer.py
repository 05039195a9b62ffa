import numpy as np
import pytest

from trailnet import trainer
from trailnet.datapipe import Dataset
from trailnet.errors import ConfigurationError, FormatError, TrainingDiverged
from trailnet.models import ModelSpec, TrailModel
from trailnet.trainer import EvalReport, TrainConfig


def toy_set(n=50, seed=0):
    """Linearly separable: the label is whichever third of the image is bright."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 3
    images = rng.random((n, 100, 100, 3), dtype=np.float32) * 0.2
    for i, lab in enumerate(labels):
        images[i, :, lab * 33 : lab * 33 + 33] += 0.8
    return Dataset(images, labels.astype(np.int64))


@pytest.fixture(scope="module")
def toy():
    return toy_set(), toy_set(30, seed=1)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(ModelSpec("dnn"), epochs=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(ModelSpec("dnn"), batch_size=0)
    cfg = TrainConfig(ModelSpec("cnn"))
    assert (cfg.epochs, cfg.batch_size, cfg.lr) == (50, 128, 0.001)


def test_one_epoch_one_entry():
    small = toy_set(10)
    _, hist = trainer.train(TrainConfig(ModelSpec("rnn"), epochs=1), small, small)
    assert len(hist.records) == 1


def test_toy_loss_drops(toy):
    train_set, val_set = toy
    model, hist = trainer.train(TrainConfig(ModelSpec("rnn"), epochs=6, batch_size=16), train_set, val_set)
    assert hist.train_loss[-1] < hist.train_loss[0]
    assert trainer.evaluate(model, val_set).accuracy > 0.9


def test_best_epoch_selected(toy):
    train_set, val_set = toy
    model, hist = trainer.train(TrainConfig(ModelSpec("dnn"), epochs=3, batch_size=16), train_set, val_set)
    acc = trainer.evaluate(model, val_set).accuracy
    assert acc == max(hist.val_accuracy)
    assert hist.val_accuracy[hist.best_epoch - 1] == acc


def test_training_deterministic(toy):
    train_set, val_set = toy
    cfg = TrainConfig(ModelSpec("dnn"), epochs=2, batch_size=16, seed=5)
    a, ha = trainer.train(cfg, train_set, val_set)
    b, hb = trainer.train(cfg, train_set, val_set)
    assert a.to_bytes() == b.to_bytes()
    assert ha.to_tsv() == hb.to_tsv()


def test_nan_aborts_with_batch_and_seed(toy):
    train_set, val_set = toy
    bad = Dataset(train_set.images.copy(), train_set.labels)
    bad.images[:] = np.nan
    with pytest.raises(TrainingDiverged, match=r"batch 0.*seed 3"):
        trainer.train(TrainConfig(ModelSpec("dnn"), epochs=1, seed=3), bad, val_set)


def test_periodic_checkpoints(tmp_path, toy):
    train_set, val_set = toy
    cfg = TrainConfig(ModelSpec("rnn"), epochs=2, batch_size=32, checkpoint_interval=1,
                      checkpoint_dir=str(tmp_path))
    trainer.train(cfg, train_set, val_set)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch001.tnnw", "epoch002.tnnw"]


def test_eval_report_properties():
    rep = EvalReport(trainer.confusion_matrix([0, 0, 1, 2, 2, 2], [0, 1, 1, 2, 2, 0]))
    assert rep.total == 6
    assert rep.accuracy == pytest.approx(4 / 6)
    assert rep.confusion.sum(axis=1).tolist() == [2, 1, 3]
    np.testing.assert_allclose(rep.recall, [0.5, 1.0, 2 / 3])
    assert rep.baseline == 0.5
    lines = rep.to_tsv().splitlines()
    assert lines[0] == "true\\pred\tleft\tcenter\tright"
    assert lines[-1].startswith("summary\taccuracy=0.6667")


def test_perfect_predictions():
    rep = EvalReport(trainer.confusion_matrix([0, 1, 2, 1], [0, 1, 2, 1]))
    assert rep.accuracy == 1.0
    assert np.count_nonzero(rep.confusion - np.diag(np.diag(rep.confusion))) == 0


def test_majority_baseline():
    # class shares 35.25 / 31.85 / 32.90 percent
    labels = np.repeat([0, 1, 2], [3525, 3185, 3290])
    assert trainer.majority_baseline(labels) == pytest.approx(0.3525)
    assert trainer.majority_baseline(np.arange(300) % 3) == pytest.approx(1 / 3)
    assert trainer.majority_baseline(np.ones(7, np.int64)) == 1.0


def test_checkpoint_roundtrip(tmp_path, toy):
    train_set, val_set = toy
    model = TrailModel.create(ModelSpec("cnn", crop=0.5), 2)
    trainer.save_checkpoint(model, tmp_path / "c.tnnw")
    back = trainer.load_checkpoint(tmp_path / "c.tnnw")
    a, b = trainer.evaluate(model, val_set), trainer.evaluate(back, val_set)
    assert np.array_equal(a.confusion, b.confusion)
    raw = bytearray((tmp_path / "c.tnnw").read_bytes())
    raw[0] ^= 0xFF
    (tmp_path / "bad.tnnw").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="offset 0"):
        trainer.load_checkpoint(tmp_path / "bad.tnnw")


def test_ablation_requires_rnn(toy):
    with pytest.raises(ConfigurationError):
        trainer.ablate_row_order(TrainConfig(ModelSpec("cnn")), *toy, toy[1])


def test_ablation_pair(toy):
    train_set, val_set = toy
    res = trainer.ablate_row_order(TrainConfig(ModelSpec("rnn"), epochs=1, batch_size=32),
                                   train_set, val_set, val_set)
    assert res.param_counts[0] == res.param_counts[1]
    for rep in (res.top_to_bottom, res.bottom_to_top):
        assert rep.total == len(val_set)
