"""UDP request/reply protocol between a camera client and a classifier service.

Frame datagram (big-endian): "TRLF", version u8, frame id u32, width u16,
height u16, channels u8, then width*height*channels raw RGB bytes.
Prediction datagram: "TRLP", version u8, frame id u32, three f32
probabilities (left, center, right), argmax u8.
"""
from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .datapipe import normalize
from .errors import NetworkError, ProtocolError, ReplyTimeout
from .models import Prediction, TrailModel

log = logging.getLogger(__name__)

VERSION = 1
FRAME_MAGIC = b"TRLF"
PRED_MAGIC = b"TRLP"
FRAME_HEADER = struct.Struct(">4sBIHHB")
PRED_STRUCT = struct.Struct(">4sBI3fB")
FRAME_SHAPE = (100, 100, 3)
FRAME_SIZE = FRAME_HEADER.size + int(np.prod(FRAME_SHAPE))
PRED_SIZE = PRED_STRUCT.size
DEFAULT_TIMEOUT = 0.05

FOREIGN = "foreign packet"
VERSION_MISMATCH = "unsupported version"
BAD_LENGTH = "truncated/oversized"
BAD_DIMS = "bad dimensions"
BAD_PROBS = "inconsistent probabilities"


def encode_frame(image: np.ndarray, frame_id: int) -> bytes:
    image = np.asarray(image)
    if image.shape != FRAME_SHAPE or image.dtype != np.uint8:
        raise ProtocolError(BAD_DIMS, f"frame must be a 100x100x3 uint8 image, got {image.shape} {image.dtype}")
    h, w, c = FRAME_SHAPE
    head = FRAME_HEADER.pack(FRAME_MAGIC, VERSION, frame_id & 0xFFFFFFFF, w, h, c)
    return head + np.ascontiguousarray(image).tobytes()


def _check_head(buf: bytes, magic: bytes, size: int):
    if buf[:4] != magic:
        raise ProtocolError(FOREIGN, f"magic {bytes(buf[:4])!r}")
    if len(buf) < 5 or buf[4] != VERSION:
        raise ProtocolError(VERSION_MISMATCH, f"version {buf[4] if len(buf) > 4 else None}")
    if len(buf) != size:
        raise ProtocolError(BAD_LENGTH, f"{len(buf)} bytes, expected {size}")


def decode_frame(buf: bytes) -> tuple[np.ndarray, int]:
    _check_head(buf, FRAME_MAGIC, FRAME_SIZE)
    _, _, frame_id, w, h, c = FRAME_HEADER.unpack_from(buf)
    if (h, w, c) != FRAME_SHAPE:
        raise ProtocolError(BAD_DIMS, f"{w}x{h}x{c}")
    image = np.frombuffer(buf, dtype=np.uint8, offset=FRAME_HEADER.size).reshape(FRAME_SHAPE)
    return image.copy(), frame_id


def encode_prediction(prediction: Prediction, frame_id: int) -> bytes:
    probs = np.asarray(prediction.probs, dtype=">f4")
    if probs.shape != (3,):
        raise ProtocolError(BAD_DIMS, f"expected 3 probabilities, got {probs.shape}")
    return PRED_STRUCT.pack(PRED_MAGIC, VERSION, frame_id & 0xFFFFFFFF, *probs.tolist(), int(np.argmax(probs)))


def decode_prediction(buf: bytes) -> tuple[Prediction, int]:
    _check_head(buf, PRED_MAGIC, PRED_SIZE)
    _, _, frame_id, p0, p1, p2, arg = PRED_STRUCT.unpack(buf)
    probs = np.array([p0, p1, p2], dtype=np.float32)
    if not np.all(np.isfinite(probs)) or abs(float(probs.sum(dtype=np.float64)) - 1) > 1e-5:
        raise ProtocolError(BAD_PROBS, f"probabilities {probs.tolist()}")
    if arg != int(np.argmax(probs)):
        raise ProtocolError(BAD_PROBS, f"argmax byte {arg} disagrees with {probs.tolist()}")
    return Prediction(probs, arg), frame_id


def classify_frame(model: TrailModel, image: np.ndarray) -> Prediction:
    """Shared preprocessing for the service and in-process driving."""
    return model.predict(normalize(image))


@dataclass
class ServiceStats:
    received: int = 0
    served: int = 0
    rejected: Counter = field(default_factory=Counter)
    busy_seconds: float = 0.0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def mean_latency(self) -> float:
        return self.busy_seconds / self.served if self.served else 0.0

    def dump(self) -> str:
        lines = [f"received\t{self.received}", f"served\t{self.served}"]
        lines += [f"rejected[{k}]\t{v}" for k, v in sorted(self.rejected.items())]
        lines.append(f"mean_service_ms\t{1000 * self.mean_latency:.3f}")
        return "\n".join(lines) + "\n"


class PredictionServer:
    """Sequential UDP classifier service."""

    def __init__(self, model: TrailModel, bind: tuple[str, int] = ("127.0.0.1", 0)):
        self.model = model
        self.stats = ServiceStats()
        self._stop = threading.Event()
        self._thread = None
        try:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 20)
            self.sock.bind(bind)
        except OSError as exc:
            raise NetworkError(f"cannot bind {bind[0]}:{bind[1]}: {exc}") from exc
        self.sock.settimeout(0.1)

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def handle(self, data: bytes) -> bytes | None:
        """Reply datagram for one request, or None when it is rejected."""
        with self.stats._lock:
            self.stats.received += 1
        try:
            image, frame_id = decode_frame(data)
        except ProtocolError as exc:
            with self.stats._lock:
                self.stats.rejected[exc.reason] += 1
            log.debug("rejected datagram: %s", exc)
            return None
        return encode_prediction(classify_frame(self.model, image), frame_id)

    def serve_forever(self):
        while not self._stop.is_set():
            try:
                data, addr = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                if self._stop.is_set():
                    break
                raise
            t0 = time.perf_counter()
            try:
                reply = self.handle(data)
                if reply is not None:
                    self.sock.sendto(reply, addr)
                    with self.stats._lock:
                        self.stats.served += 1
                        self.stats.busy_seconds += time.perf_counter() - t0
            except Exception:  # one bad packet must never stop the service
                log.exception("error while serving %s", addr)
                with self.stats._lock:
                    self.stats.rejected["internal error"] += 1

    def start(self) -> "PredictionServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> str:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        self.sock.close()
        return self.stats.dump()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(bind: tuple[str, int], model: TrailModel, stop: threading.Event | None = None) -> ServiceStats:
    """Run the service in the calling thread until interrupted or `stop` is set."""
    server = PredictionServer(model, bind)
    if stop is not None:
        server._stop = stop
    log.info("serving on %s:%d", *server.address)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server._stop.set()
        server.sock.close()
    return server.stats


class PredictionClient:
    """Synchronous client; one frame in flight at a time."""

    def __init__(self, address: tuple[str, int], timeout: float = DEFAULT_TIMEOUT):
        self.address = address
        self.timeout = timeout
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.stale = 0
        self.invalid = 0

    def request(self, image: np.ndarray, frame_id: int) -> Prediction:
        try:
            self.sock.sendto(encode_frame(image, frame_id), self.address)
        except OSError as exc:
            raise NetworkError(f"send to {self.address} failed: {exc}") from exc
        deadline = time.monotonic() + self.timeout
        while True:
            left = deadline - time.monotonic()
            if left <= 0:
                raise ReplyTimeout(f"no reply for frame {frame_id} within {1000 * self.timeout:.0f} ms")
            self.sock.settimeout(left)
            try:
                data = self.sock.recv(65535)
            except socket.timeout:
                continue
            except ConnectionRefusedError:
                # ICMP port unreachable on loopback; keep waiting out the deadline
                continue
            try:
                pred, reply_id = decode_prediction(data)
            except ProtocolError:
                self.invalid += 1
                continue
            if reply_id != frame_id & 0xFFFFFFFF:
                self.stale += 1
                continue
            return pred

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def request_prediction(address, image, frame_id: int, timeout: float = DEFAULT_TIMEOUT) -> Prediction:
    with PredictionClient(address, timeout) as client:
        return client.request(image, frame_id)
