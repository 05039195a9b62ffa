import numpy as np
import pytest

from trailnet import CENTER, LEFT
from trailnet.errors import ConfigurationError, FormatError, InputError
from trailnet.models import (
    ModelSpec,
    Prediction,
    TrailModel,
    build_cnn,
    build_dnn,
    build_rnn,
    crop_rows,
    image_to_sequence,
)
from trailnet.nn.weights import HEADER, decode_weights, encode_weights, expected_size

# Layer-by-layer sum: 30000*256+256 + 256*128+128 + 128*64+64 + 64*3+3
DNN_PARAMS = 7_680_256 + 32_896 + 8_256 + 195


@pytest.fixture(scope="module")
def image():
    return np.random.default_rng(0).random((100, 100, 3), dtype=np.float32)


def test_dnn_param_count():
    assert DNN_PARAMS == 7_721_603
    assert build_dnn().param_count() == 0  # params exist only after init
    model = TrailModel.create(ModelSpec("dnn"), 0)
    assert model.param_count() == DNN_PARAMS


def test_dnn_input_contract(image):
    model = TrailModel.create(ModelSpec("dnn"), 0)
    assert model.predict(image).probs.sum() == pytest.approx(1, abs=1e-6)
    with pytest.raises(InputError):
        model.predict(np.zeros((50, 50, 3), np.float32))


def test_predict_rejects_unnormalized(image):
    model = TrailModel.create(ModelSpec("rnn"), 0)
    with pytest.raises(InputError):
        model.predict(image * 255)


def test_cnn_shape_chain():
    shapes = build_cnn().shapes((100, 100, 3))
    pools = [s[0] for s, name in zip(shapes, build_cnn().names) if name.startswith("pool")]
    assert pools == [50, 25, 12, 6]
    names = build_cnn().names
    assert shapes[names.index("flatten")] == (1152,)


def test_cnn_kernel_shapes(image):
    model = TrailModel.create(ModelSpec("cnn"), 0)
    params = dict(model.graph.named_tensors())
    assert params["conv1.W"].shape == (4, 4, 3, 32)
    for i in (2, 3, 4):
        assert params[f"conv{i}.W"].shape == (4, 4, 32, 32)
    assert model.predict(image).probs.sum() == pytest.approx(1, abs=1e-6)


def test_image_to_sequence():
    const = np.full((100, 100, 3), 0.25)
    assert np.all(image_to_sequence(const) == 0.25)
    img = np.random.default_rng(1).random((100, 100, 3))
    down = image_to_sequence(img, "top-to-bottom")
    up = image_to_sequence(img, "bottom-to-top")
    assert down.shape == (100, 300)
    np.testing.assert_array_equal(up, down[::-1])
    assert down[7, 100 + 3] == img[7, 3, 1]


def test_rnn_shapes(image):
    model = TrailModel.create(ModelSpec("rnn"), 0)
    params = dict(model.graph.named_tensors())
    assert params["gru1.W"].shape[0] == 300
    assert params["gru2.W"].shape[0] == 32
    assert model.predict(image).probs.sum() == pytest.approx(1, abs=1e-6)


@pytest.mark.parametrize("frac,rows", [(1.0, 100), (2 / 3, 67), (0.5, 50)])
def test_crop_arithmetic(frac, rows):
    assert crop_rows(frac) == rows
    seq = build_rnn(crop=frac).shapes((100, 100, 3))[1]
    assert seq == (rows, 300)
    flat = build_dnn(crop=frac).shapes((100, 100, 3))[1]
    assert flat == (rows * 300,)
    assert build_cnn(crop=frac).shapes((100, 100, 3))[-1] == (3,)


def test_row_order_param_counts_equal():
    a = TrailModel.create(ModelSpec("rnn", "top-to-bottom"), 0)
    b = TrailModel.create(ModelSpec("rnn", "bottom-to-top"), 0)
    assert a.param_count() == b.param_count()


def test_row_order_only_for_rnn():
    with pytest.raises(ConfigurationError):
        ModelSpec("cnn", "bottom-to-top")
    with pytest.raises(ConfigurationError):
        ModelSpec("mlp")


def test_prediction_tie_break():
    assert Prediction.from_probs([0.2, 0.5, 0.3]).label == CENTER
    assert Prediction.from_probs([0.4, 0.4, 0.2]).label == LEFT


def test_predict_deterministic(image):
    a = TrailModel.create(ModelSpec("cnn"), 3).predict(image)
    b = TrailModel.create(ModelSpec("cnn"), 3).predict(image)
    assert a.label == b.label and np.array_equal(a.probs, b.probs)


def test_weights_roundtrip_and_size(tmp_path, image):
    model = TrailModel.create(ModelSpec("rnn", "bottom-to-top", 0.5), 1)
    path = tmp_path / "m.tnnw"
    model.save(path)
    tensors = [("options", model.options_tensor())] + model.graph.named_tensors()
    assert path.stat().st_size == expected_size(tensors)
    back = TrailModel.load(path)
    assert back.spec == model.spec
    assert np.array_equal(back.forward(image[None]), model.forward(image[None]))


def test_weights_size_accounting():
    t = [("a", np.zeros((2, 3), np.float32)), ("bb", np.zeros(4, np.float32))]
    # header 8 | 1+1+1+8+24 | 1+2+1+4+16
    assert expected_size(t) == HEADER.size + 35 + 24 == len(encode_weights(2, t))


def test_weights_corruption_errors():
    buf = bytearray(encode_weights(1, [("w", np.ones((2, 2), np.float32))]))
    bad = bytes(b"X" + buf[1:])
    with pytest.raises(FormatError, match="offset 0"):
        decode_weights(bad)
    ver = bytearray(buf)
    ver[4] = 9
    with pytest.raises(FormatError, match="offset 4"):
        decode_weights(bytes(ver))
    with pytest.raises(FormatError, match="offset"):
        decode_weights(bytes(buf[:-3]))
    with pytest.raises(FormatError, match="trailing"):
        decode_weights(bytes(buf) + b"\0")


def test_load_rejects_wrong_tensor_shape():
    model = TrailModel.create(ModelSpec("rnn"), 0)
    tensors = [("options", model.options_tensor())] + [
        (q, np.zeros((1, 1), np.float32)) if q == "output.W" else (q, a)
        for q, a in model.graph.named_tensors()
    ]
    with pytest.raises(FormatError, match="output.W"):
        TrailModel.from_bytes(encode_weights(2, tensors))
