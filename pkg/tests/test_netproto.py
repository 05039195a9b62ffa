import socket
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from trailnet import netproto, simloop
from trailnet.errors import NetworkError, ProtocolError, ReplyTimeout
from trailnet.models import ModelSpec, Prediction, TrailModel
from trailnet.netproto import FRAME_SIZE, PredictionClient, PredictionServer
from trailnet.scenegen import generate_world, get_style

GOLDEN = Path(__file__).parent / "golden"


def golden_image():
    r, c, ch = np.meshgrid(np.arange(100), np.arange(100), np.arange(3), indexing="ij")
    return ((r * 7 + c * 3 + ch * 101) % 256).astype(np.uint8)


@pytest.fixture(scope="module")
def model():
    return TrailModel.create(ModelSpec("rnn"), 0)


# codec

def test_zero_frame_layout():
    buf = netproto.encode_frame(np.zeros((100, 100, 3), np.uint8), 7)
    assert len(buf) == 30014 == FRAME_SIZE
    assert buf[:4] == b"TRLF" and buf[4] == 1
    assert buf[5:9] == b"\x00\x00\x00\x07"
    assert buf[9:14] == b"\x00\x64\x00\x64\x03"
    assert buf[14:] == bytes(30000)


def test_frame_golden():
    want = (GOLDEN / "frame_12345.bin").read_bytes()
    assert netproto.encode_frame(golden_image(), 12345) == want
    image, fid = netproto.decode_frame(want)
    assert fid == 12345 and np.array_equal(image, golden_image())


def test_prediction_golden():
    want = (GOLDEN / "prediction_deadbeef.bin").read_bytes()
    pred = Prediction(np.array([0.1, 0.7, 0.2], np.float32), 1)
    assert netproto.encode_prediction(pred, 0xDEADBEEF) == want
    back, fid = netproto.decode_prediction(want)
    assert fid == 0xDEADBEEF and back.label == 1
    np.testing.assert_array_equal(back.probs, pred.probs)


@pytest.mark.parametrize("fid", [0, 1, 2**31, 2**32 - 1])
def test_frame_roundtrip_ids(fid):
    img = np.random.default_rng(fid % 97).integers(0, 256, (100, 100, 3), dtype=np.uint8)
    back, got = netproto.decode_frame(netproto.encode_frame(img, fid))
    assert got == fid and np.array_equal(back, img)


@pytest.mark.parametrize(
    "mutate, reason",
    [
        (lambda b: b[:-1], "truncated/oversized"),
        (lambda b: b + b"\x00", "truncated/oversized"),
        (lambda b: b"XXXX" + b[4:], "foreign packet"),
        (lambda b: b[:4] + b"\x02" + b[5:], "unsupported version"),
        (lambda b: b[:9] + b"\x00\x65" + b[11:], "bad dimensions"),
        (lambda b: b"", "foreign packet"),
    ],
)
def test_frame_rejections(mutate, reason):
    buf = netproto.encode_frame(np.zeros((100, 100, 3), np.uint8), 3)
    with pytest.raises(ProtocolError) as info:
        netproto.decode_frame(mutate(buf))
    assert info.value.reason == reason


def test_encode_rejects_wrong_image():
    with pytest.raises(ProtocolError):
        netproto.encode_frame(np.zeros((100, 100, 3), np.float32), 0)
    with pytest.raises(ProtocolError):
        netproto.encode_frame(np.zeros((50, 100, 3), np.uint8), 0)


def test_prediction_rejections():
    good = (GOLDEN / "prediction_deadbeef.bin").read_bytes()
    wrong_arg = good[:-1] + b"\x00"
    bad_sum = good[:10] + bytes.fromhex("3F800000") + good[14:]
    for buf in (wrong_arg, bad_sum, good[:-1]):
        with pytest.raises(ProtocolError):
            netproto.decode_prediction(buf)


# client against scripted peers

class ScriptedPeer:
    """UDP endpoint that answers each frame with a scripted list of datagrams."""

    def __init__(self, script):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.settimeout(1.0)
        self.script = script
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    @property
    def address(self):
        return self.sock.getsockname()

    def _run(self):
        try:
            data, addr = self.sock.recvfrom(65535)
        except socket.timeout:
            return
        _, fid = netproto.decode_frame(data)
        for reply in self.script(fid):
            self.sock.sendto(reply, addr)

    def close(self):
        self.thread.join()
        self.sock.close()


def _pred(label):
    probs = np.full(3, 0.1, np.float32)
    probs[label] = 0.8
    return Prediction(probs, label)


def test_stale_reply_discarded_then_matching_accepted():
    peer = ScriptedPeer(lambda fid: [
        netproto.encode_prediction(_pred(0), fid - 1),
        b"junk",
        netproto.encode_prediction(_pred(2), fid),
    ])
    with PredictionClient(peer.address, timeout=0.5) as client:
        got = client.request(np.zeros((100, 100, 3), np.uint8), 41)
    peer.close()
    assert got.label == 2
    assert client.stale == 1 and client.invalid == 1


def test_timeout_without_service():
    probe = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    probe.bind(("127.0.0.1", 0))
    addr = probe.getsockname()
    probe.close()
    t0 = time.monotonic()
    with pytest.raises(ReplyTimeout):
        netproto.request_prediction(addr, np.zeros((100, 100, 3), np.uint8), 1, timeout=0.05)
    elapsed = time.monotonic() - t0
    assert 0.045 <= elapsed < 0.5


# server

def test_server_echoes_id_and_matches_in_process(model):
    img = golden_image()
    with PredictionServer(model) as server:
        got = netproto.request_prediction(server.address, img, 99, timeout=1.0)
    want = netproto.classify_frame(model, img)
    assert got.label == want.label
    np.testing.assert_allclose(got.probs, want.probs, atol=1e-7)
    assert server.stats.served == 1


def test_server_drops_garbage_and_counts(model):
    with PredictionServer(model) as server:
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        s.settimeout(0.2)
        s.sendto(b"hello", server.address)
        s.sendto(netproto.encode_frame(np.zeros((100, 100, 3), np.uint8), 5)[:-1], server.address)
        with pytest.raises(socket.timeout):
            s.recv(100)
        # still serving afterwards
        s.sendto(netproto.encode_frame(np.zeros((100, 100, 3), np.uint8), 6), server.address)
        _, fid = netproto.decode_prediction(s.recv(100))
        s.close()
        dump = server.stop()
    assert fid == 6
    assert server.stats.rejected == {"foreign packet": 1, "truncated/oversized": 1}
    assert "received\t3" in dump and "served\t1" in dump


def test_bind_failure(model):
    with PredictionServer(model) as server:
        with pytest.raises(NetworkError):
            PredictionServer(model, server.address)


# remote driving

class DropProxy:
    """Forwards frames to `target`, silently dropping the frame ids in `drop`."""

    def __init__(self, target, drop):
        self.target, self.drop = target, drop
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.settimeout(0.1)
        self.up = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.up.settimeout(1.0)
        self.stop = threading.Event()
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    @property
    def address(self):
        return self.sock.getsockname()

    def _run(self):
        while not self.stop.is_set():
            try:
                data, addr = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            _, fid = netproto.decode_frame(data)
            if self.drop(fid):
                continue
            self.up.sendto(data, self.target)
            self.sock.sendto(self.up.recv(100), addr)

    def close(self):
        self.stop.set()
        self.thread.join()
        self.sock.close()
        self.up.close()


@pytest.fixture(scope="module")
def world7():
    return generate_world(7)


STYLE = get_style("alpine-a")


def test_remote_episode_matches_in_process(model, world7):
    start = simloop.start_pose(world7)
    local = simloop.run_episode(world7, STYLE, model, start, 40)
    with PredictionServer(model) as server:
        remote = simloop.run_episode_remote(world7, STYLE, server.address, start, 40, timeout=1.0)
    assert remote.trajectory_tsv() == local.trajectory_tsv()
    assert remote.metrics.timeouts == 0


def test_single_dropped_frame_repeats_previous_command(model, world7):
    start = simloop.start_pose(world7)
    local = simloop.run_episode(world7, STYLE, model, start, 30)
    with PredictionServer(model) as server:
        proxy = DropProxy(server.address, lambda fid: fid == 10)
        remote = simloop.run_episode_remote(world7, STYLE, proxy.address, start, 30, timeout=0.2)
        proxy.close()
    assert remote.metrics.timeouts == 1
    labels = [r.label for r in remote.trajectory]
    assert labels[10] == labels[9]
    # identical up to the drop; afterwards the robot is served normally again
    assert remote.trajectory_tsv().splitlines()[:11] == local.trajectory_tsv().splitlines()[:11]
    assert remote.metrics.ticks == 30


def test_all_frames_dropped_drives_straight_then_aborts(world7):
    start = simloop.start_pose(world7)
    probe = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    probe.bind(("127.0.0.1", 0))
    dead = probe.getsockname()
    probe.close()
    with pytest.raises(NetworkError, match="30 consecutive") as info:
        simloop.run_episode_remote(world7, STYLE, dead, start, 200, timeout=0.01)
    rows = info.value.episode.trajectory
    assert len(rows) == 29
    assert all(r.label == 1 for r in rows)
