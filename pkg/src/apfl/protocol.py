"""Wire messages and binary framing for the one-shot federated round.

Frame layout: u32 little-endian payload length, u8 message tag, payload.
All matrices travel as row-major little-endian float64 so theorem-level
tolerances survive transport bit-exactly. Payload layouts:

    hello         u32 client_id
    config        u16 version, u32 d_p, u32 d_r, u32 num_classes,
                  u32 num_clients, u64 seed_p, u64 seed_r,
                  u8 act_p, u8 act_r, f64 gamma, f64 beta, f64 lambda
    upload        u32 client_id, u32 n_samples, u32 d_p, u32 c,
                  d_p*d_p f64 (auto-correlation), d_p*c f64 (local stream)
    global_model  u32 d_p, u32 c, d_p*c f64
    error         u32 code, u32 text length, utf-8 text
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import FramingError, ProtocolError
from .features import Activation
from .linalg import as_matrix, symmetry_defect

PROTOCOL_VERSION = 1
HEADER_SIZE = 5  # u32 payload length + u8 tag
UPLOAD_SYMMETRY_RTOL = 1e-12

TAG_HELLO = 1
TAG_CONFIG = 2
TAG_UPLOAD = 3
TAG_GLOBAL_MODEL = 4
TAG_ERROR = 5

ERR_UNKNOWN_CLIENT = 1
ERR_DUPLICATE_UPLOAD = 2
ERR_ROUND_TIMEOUT = 3
ERR_BAD_MESSAGE = 4


@dataclass(frozen=True)
class Hello:
    client_id: int

    tag = TAG_HELLO
    type_name = "hello"


@dataclass(frozen=True)
class Config:
    """Run parameters the server publishes; identical for every client."""

    gamma: float
    beta: float
    lam: float
    d_p: int
    d_r: int
    seed_p: int
    seed_r: int
    act_p: Activation
    act_r: Activation
    num_classes: int
    num_clients: int
    version: int = PROTOCOL_VERSION

    tag = TAG_CONFIG
    type_name = "config"


@dataclass(frozen=True)
class Upload:
    """One client's complete contribution to the round."""

    client_id: int
    a: np.ndarray  # (d_p, d_p) symmetric
    g_local: np.ndarray  # (d_p, c)
    n_samples: int

    tag = TAG_UPLOAD
    type_name = "upload"

    def __post_init__(self):
        a = as_matrix(self.a, "a")
        g = as_matrix(self.g_local, "g_local")
        if a.shape[0] != a.shape[1]:
            raise ProtocolError(f"auto-correlation matrix must be square, got {a.shape}")
        if g.shape[0] != a.shape[0]:
            raise ProtocolError(
                f"local stream has {g.shape[0]} rows, expected {a.shape[0]}"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "g_local", g)


@dataclass(frozen=True)
class GlobalModel:
    g: np.ndarray  # (d_p, c)

    tag = TAG_GLOBAL_MODEL
    type_name = "global_model"

    def __post_init__(self):
        object.__setattr__(self, "g", as_matrix(self.g, "g"))


@dataclass(frozen=True)
class ErrorMsg:
    code: int
    text: str

    tag = TAG_ERROR
    type_name = "error"


Message = Hello | Config | Upload | GlobalModel | ErrorMsg


def _matrix_bytes(m: np.ndarray) -> bytes:
    return np.ascontiguousarray(m, dtype="<f8").tobytes()


def _encode_payload(msg: Message) -> bytes:
    if isinstance(msg, Hello):
        return struct.pack("<I", msg.client_id)
    if isinstance(msg, Config):
        return struct.pack(
            "<HIIIIQQBBddd",
            msg.version,
            msg.d_p,
            msg.d_r,
            msg.num_classes,
            msg.num_clients,
            msg.seed_p,
            msg.seed_r,
            int(msg.act_p),
            int(msg.act_r),
            msg.gamma,
            msg.beta,
            msg.lam,
        )
    if isinstance(msg, Upload):
        d_p, c = msg.g_local.shape
        head = struct.pack("<IIII", msg.client_id, msg.n_samples, d_p, c)
        return head + _matrix_bytes(msg.a) + _matrix_bytes(msg.g_local)
    if isinstance(msg, GlobalModel):
        d_p, c = msg.g.shape
        return struct.pack("<II", d_p, c) + _matrix_bytes(msg.g)
    if isinstance(msg, ErrorMsg):
        text = msg.text.encode("utf-8")
        return struct.pack("<II", msg.code, len(text)) + text
    raise ProtocolError(f"cannot encode object of type {type(msg).__name__}")


def encode(msg: Message) -> bytes:
    """Serialize one message into a complete frame."""
    payload = _encode_payload(msg)
    return struct.pack("<IB", len(payload), msg.tag) + payload


def _need(payload: bytes, offset: int, count: int, what: str) -> None:
    if len(payload) < offset + count:
        raise FramingError(
            f"payload truncated: {what} needs bytes [{offset}, {offset + count}) "
            f"but payload has {len(payload)}"
        )


def _read_matrix(payload: bytes, offset: int, rows: int, cols: int, what: str) -> np.ndarray:
    n = rows * cols
    _need(payload, offset, 8 * n, what)
    flat = np.frombuffer(payload, dtype="<f8", count=n, offset=offset)
    m = flat.astype(np.float64).reshape(rows, cols)
    if not np.isfinite(m).all():
        raise ProtocolError(f"{what} contains non-finite values")
    return m


def _decode_hello(payload: bytes) -> Hello:
    _need(payload, 0, 4, "hello client_id")
    (client_id,) = struct.unpack_from("<I", payload, 0)
    return Hello(client_id=client_id)


def _decode_config(payload: bytes) -> Config:
    fmt = "<HIIIIQQBBddd"
    _need(payload, 0, struct.calcsize(fmt), "config fields")
    (
        version,
        d_p,
        d_r,
        num_classes,
        num_clients,
        seed_p,
        seed_r,
        act_p,
        act_r,
        gamma,
        beta,
        lam,
    ) = struct.unpack_from(fmt, payload, 0)
    try:
        act_p = Activation(act_p)
        act_r = Activation(act_r)
    except ValueError as exc:
        raise ProtocolError(f"config carries unknown activation code: {exc}") from None
    return Config(
        gamma=gamma,
        beta=beta,
        lam=lam,
        d_p=d_p,
        d_r=d_r,
        seed_p=seed_p,
        seed_r=seed_r,
        act_p=act_p,
        act_r=act_r,
        num_classes=num_classes,
        num_clients=num_clients,
        version=version,
    )


def _decode_upload(payload: bytes) -> Upload:
    _need(payload, 0, 16, "upload fields")
    client_id, n_samples, d_p, c = struct.unpack_from("<IIII", payload, 0)
    if d_p < 1 or c < 1:
        raise ProtocolError(f"upload declares degenerate dimensions d_p={d_p}, c={c}")
    expected = 16 + 8 * (d_p * d_p + d_p * c)
    if len(payload) != expected:
        raise FramingError(
            f"upload payload must be {expected} bytes for d_p={d_p}, c={c}, "
            f"got {len(payload)}"
        )
    a = _read_matrix(payload, 16, d_p, d_p, "auto-correlation matrix")
    g = _read_matrix(payload, 16 + 8 * d_p * d_p, d_p, c, "local stream")
    defect = symmetry_defect(a)
    if defect > UPLOAD_SYMMETRY_RTOL:
        raise ProtocolError(
            f"uploaded auto-correlation matrix is asymmetric "
            f"(relative defect {defect:.3e} > {UPLOAD_SYMMETRY_RTOL:.0e})"
        )
    return Upload(client_id=client_id, a=a, g_local=g, n_samples=n_samples)


def _decode_global_model(payload: bytes) -> GlobalModel:
    _need(payload, 0, 8, "global model dimensions")
    d_p, c = struct.unpack_from("<II", payload, 0)
    if d_p < 1 or c < 1:
        raise ProtocolError(f"global model declares degenerate shape ({d_p}, {c})")
    expected = 8 + 8 * d_p * c
    if len(payload) != expected:
        raise FramingError(
            f"global model payload must be {expected} bytes, got {len(payload)}"
        )
    return GlobalModel(g=_read_matrix(payload, 8, d_p, c, "global model"))


def _decode_error(payload: bytes) -> ErrorMsg:
    _need(payload, 0, 8, "error fields")
    code, length = struct.unpack_from("<II", payload, 0)
    _need(payload, 8, length, "error text")
    return ErrorMsg(code=code, text=payload[8 : 8 + length].decode("utf-8"))


_DECODERS = {
    TAG_HELLO: _decode_hello,
    TAG_CONFIG: _decode_config,
    TAG_UPLOAD: _decode_upload,
    TAG_GLOBAL_MODEL: _decode_global_model,
    TAG_ERROR: _decode_error,
}


def decode(frame: bytes) -> Message:
    """Parse exactly one complete frame back into a message."""
    if len(frame) < HEADER_SIZE:
        raise FramingError(
            f"frame truncated: {len(frame)} bytes, header alone needs {HEADER_SIZE}"
        )
    length, tag = struct.unpack_from("<IB", frame, 0)
    if len(frame) != HEADER_SIZE + length:
        raise FramingError(
            f"frame declares {length} payload bytes but carries "
            f"{len(frame) - HEADER_SIZE}"
        )
    decoder = _DECODERS.get(tag)
    if decoder is None:
        raise ProtocolError(f"unknown message tag {tag}")
    return decoder(frame[HEADER_SIZE:])


@dataclass
class TransportStats:
    """Server-side accounting of a round's traffic. Counters only grow."""

    bytes_sent: int = 0
    bytes_received: int = 0
    messages_sent: Counter = field(default_factory=Counter)
    messages_received: Counter = field(default_factory=Counter)
    bytes_by_type: Counter = field(default_factory=Counter)

    def record_sent(self, msg: Message, frame: bytes) -> None:
        self.bytes_sent += len(frame)
        self.messages_sent[msg.type_name] += 1
        self.bytes_by_type[msg.type_name] += len(frame)

    def record_received(self, msg: Message, frame: bytes) -> None:
        self.bytes_received += len(frame)
        self.messages_received[msg.type_name] += 1
        self.bytes_by_type[msg.type_name] += len(frame)

    def to_dict(self) -> dict:
        return {
            "bytes_sent": self.bytes_sent,
            "bytes_received": self.bytes_received,
            "messages_sent": dict(self.messages_sent),
            "messages_received": dict(self.messages_received),
            "bytes_by_type": dict(self.bytes_by_type),
        }


def upload_frame_size(d_p: int, c: int) -> int:
    """Exact frame size of an upload: header, four u32 fields, two matrices."""
    return HEADER_SIZE + 16 + 8 * (d_p * d_p + d_p * c)


UPLOAD_FIXED_OVERHEAD = HEADER_SIZE + 16
