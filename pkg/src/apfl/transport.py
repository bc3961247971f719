"""Protocol actors and the two interchangeable round transports.

A round is one-shot: every client speaks to the server exactly once in each
direction (one upload in, one global model out). The simulated transport
runs all parties in one thread with deterministic turn-taking; the socket
transport speaks the same frames over TCP with one blocking connection per
client. Both funnel every message through encode/decode, so numerics and
byte accounting are identical across transports.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .client import (
    LocalKnowledge,
    PersonalModel,
    compute_local_primary,
    compute_refinement,
)
from .data import one_hot
from .errors import DuplicateClientError, FramingError, ProtocolError, RoundError
from .features import activate, make_head
from .linalg import as_matrix
from .seeding import derive_seed
from .protocol import (
    ERR_DUPLICATE_UPLOAD,
    ERR_ROUND_TIMEOUT,
    ERR_UNKNOWN_CLIENT,
    HEADER_SIZE,
    Config,
    ErrorMsg,
    GlobalModel,
    Hello,
    Message,
    TransportStats,
    Upload,
    decode,
    encode,
)
from .server import FusionState, finalize, fuse, init_fusion


@dataclass
class RoundResult:
    """Outcome of one completed federated round."""

    models: dict[int, PersonalModel]
    g_global: np.ndarray
    stats: TransportStats


class FederatedClient:
    """One client's protocol state machine over its private training shard.

    The refinement head is shared across clients by default (everyone
    derives it from the published seed); ``private_refine_head`` switches a
    client to its own seed-derived refinement projection, which is purely
    local and never leaves the client.
    """

    def __init__(
        self,
        client_id: int,
        backbone_out,
        labels,
        num_classes: int,
        private_refine_head: bool = False,
    ):
        self.client_id = int(client_id)
        self._x = as_matrix(backbone_out, "backbone_out")
        self._y = one_hot(labels, num_classes)
        self.num_classes = int(num_classes)
        self.private_refine_head = private_refine_head
        self._cfg: Config | None = None
        self._heads = None
        self._phi = None

    def hello(self) -> Hello:
        return Hello(client_id=self.client_id)

    def handle_config(self, cfg: Config) -> Upload:
        """Build the heads, train the local primary stream, emit the upload."""
        if cfg.num_classes != self.num_classes:
            raise ProtocolError(
                f"config declares {cfg.num_classes} classes, client has {self.num_classes}"
            )
        in_dim = self._x.shape[1]
        primary = make_head(cfg.seed_p, in_dim, cfg.d_p, cfg.act_p)
        refine_seed = cfg.seed_r
        if self.private_refine_head:
            refine_seed = derive_seed(cfg.seed_r, f"client-{self.client_id}")
        refine = make_head(refine_seed, in_dim, cfg.d_r, cfg.act_r)
        phi = activate(primary, self._x)
        knowledge = compute_local_primary(phi, self._y, cfg.gamma, self.client_id)
        self._cfg = cfg
        self._heads = (primary, refine)
        self._phi = phi
        return Upload(
            client_id=self.client_id,
            a=knowledge.a,
            g_local=knowledge.g_local,
            n_samples=knowledge.n_samples,
        )

    def handle_global_model(self, msg: GlobalModel) -> PersonalModel:
        """Fit the refinement stream against the received primary stream."""
        if self._cfg is None or self._phi is None:
            raise ProtocolError("received a global model before config/upload")
        primary, refine = self._heads
        psi = activate(refine, self._x)
        p_refine = compute_refinement(psi, self._phi, self._y, msg.g, self._cfg.beta)
        model = PersonalModel(
            g_global=msg.g,
            p_refine=p_refine,
            lam=self._cfg.lam,
            primary_head=primary,
            refine_head=refine,
        )
        self._phi = None  # feature matrices are not retained after training
        return model


class FusionServer:
    """Server actor: admits one upload per expected client, then finalizes.

    Upload handling is serialized by a lock; arrival order does not affect
    the finalized model beyond roundoff.
    """

    def __init__(self, config: Config, expected_clients):
        ids = [int(i) for i in expected_clients]
        if len(set(ids)) != len(ids):
            raise ValueError("expected_clients contains duplicates")
        if config.num_clients != len(ids):
            raise ValueError(
                f"config declares {config.num_clients} clients but "
                f"{len(ids)} ids were given"
            )
        self.config = config
        self.expected = frozenset(ids)
        self._lock = threading.Lock()
        self._fused_cond = threading.Condition(self._lock)
        self._state: FusionState | None = None
        self._g: np.ndarray | None = None
        self._completed = False
        self._finished = threading.Event()

    @property
    def fused_count(self) -> int:
        with self._lock:
            return 0 if self._state is None else self._state.clients_fused

    def missing_clients(self) -> list[int]:
        with self._lock:
            seen = set() if self._state is None else set(self._state.client_ids)
        return sorted(self.expected - seen)

    def config_for(self, hello: Hello) -> Config | ErrorMsg:
        if hello.client_id not in self.expected:
            return ErrorMsg(
                ERR_UNKNOWN_CLIENT,
                f"client {hello.client_id} is not part of this round",
            )
        return self.config

    def accept_upload(self, upload: Upload) -> ErrorMsg | None:
        """Fuse one arrival; returns an error message instead of raising."""
        if upload.client_id not in self.expected:
            return ErrorMsg(
                ERR_UNKNOWN_CLIENT,
                f"client {upload.client_id} is not part of this round",
            )
        knowledge = LocalKnowledge(
            client_id=upload.client_id,
            a=upload.a,
            g_local=upload.g_local,
            n_samples=upload.n_samples,
        )
        with self._fused_cond:
            try:
                if self._state is None:
                    self._state = init_fusion(knowledge, self.config.gamma)
                else:
                    self._state = fuse(self._state, knowledge)
            except DuplicateClientError as exc:
                return ErrorMsg(ERR_DUPLICATE_UPLOAD, str(exc))
            if self._state.clients_fused == len(self.expected):
                self._g = finalize(self._state, len(self.expected))
                self._completed = True
                self._finished.set()
            self._fused_cond.notify_all()
        return None

    def wait_fused(self, count: int, timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        with self._fused_cond:
            while (0 if self._state is None else self._state.clients_fused) < count:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._fused_cond.wait(remaining)
        return True

    def abort(self) -> None:
        self._finished.set()

    def global_model(self, timeout: float | None = None) -> GlobalModel:
        finished = self._finished.wait(timeout)
        if not finished or not self._completed:
            raise RoundError(
                f"round incomplete: missing uploads from clients {self.missing_clients()}"
            )
        return GlobalModel(g=self._g)


def parse_address(address: str) -> tuple[str, int]:
    """Split a ``host:port`` string; port 0 requests an ephemeral port."""
    host, sep, port = address.rpartition(":")
    if not sep or not host:
        raise ValueError(f"address must look like host:port, got {address!r}")
    try:
        port_num = int(port)
    except ValueError:
        raise ValueError(f"port in {address!r} is not an integer") from None
    if not 0 <= port_num <= 65535:
        raise ValueError(f"port {port_num} outside [0, 65535]")
    return host, port_num


def run_round(
    server: FusionServer,
    clients: list[FederatedClient],
    transport: str = "simulated",
    timeout: float = 30.0,
    address: str = "127.0.0.1:0",
) -> RoundResult:
    """Drive one complete federated round over the chosen transport."""
    if transport == "simulated":
        return _run_simulated(server, clients, timeout)
    if transport == "socket":
        host, port = parse_address(address)
        return _run_socket(server, clients, timeout, host, port)
    raise ValueError(f"unknown transport {transport!r}; expected 'simulated' or 'socket'")


# ---------------------------------------------------------------------------
# Simulated transport: one thread, deterministic turn-taking
# ---------------------------------------------------------------------------


def _run_simulated(server, clients, timeout) -> RoundResult:
    stats = TransportStats()

    def pass_through(msg: Message, record) -> Message:
        frame = encode(msg)
        out = decode(frame)
        record(out, frame)
        return out

    for cl in clients:
        hello = pass_through(cl.hello(), stats.record_received)
        reply = pass_through(server.config_for(hello), stats.record_sent)
        if isinstance(reply, ErrorMsg):
            raise RoundError(f"server rejected client {cl.client_id}: {reply.text}")
        upload = pass_through(cl.handle_config(reply), stats.record_received)
        err = server.accept_upload(upload)
        if err is not None:
            pass_through(err, stats.record_sent)
            raise RoundError(
                f"server rejected upload from client {cl.client_id}: {err.text}"
            )
    gm = server.global_model(timeout=0)
    models: dict[int, PersonalModel] = {}
    for cl in clients:
        delivered = pass_through(gm, stats.record_sent)
        models[cl.client_id] = cl.handle_global_model(delivered)
    return RoundResult(models=models, g_global=gm.g, stats=stats)


# ---------------------------------------------------------------------------
# Socket transport: TCP, one blocking connection per client
# ---------------------------------------------------------------------------


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise FramingError(f"connection closed after {len(buf)} of {n} bytes")
        buf += chunk
    return buf


def read_frame(sock: socket.socket) -> bytes:
    header = _recv_exact(sock, HEADER_SIZE)
    length, _ = struct.unpack("<IB", header)
    return header + _recv_exact(sock, length)


class _SocketRoundServer:
    """Listener plus per-connection handler threads for one round."""

    def __init__(
        self,
        server: FusionServer,
        stats: TransportStats,
        host: str,
        port: int,
        timeout: float,
    ):
        self.server = server
        self.stats = stats
        self.timeout = timeout
        self._stats_lock = threading.Lock()
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.1)
        self.address = self._listener.getsockname()
        self._shutdown = threading.Event()
        self._threads: list[threading.Thread] = []
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self):
        while not self._shutdown.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._handle, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _recv_msg(self, conn) -> Message:
        frame = read_frame(conn)
        msg = decode(frame)
        with self._stats_lock:
            self.stats.record_received(msg, frame)
        return msg

    def _send_msg(self, conn, msg: Message) -> None:
        frame = encode(msg)
        with self._stats_lock:
            self.stats.record_sent(msg, frame)
        conn.sendall(frame)

    def _handle(self, conn: socket.socket):
        try:
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn.settimeout(self.timeout)
            hello = self._recv_msg(conn)
            if not isinstance(hello, Hello):
                self._send_msg(conn, ErrorMsg(ERR_UNKNOWN_CLIENT, "expected hello"))
                return
            reply = self.server.config_for(hello)
            self._send_msg(conn, reply)
            if isinstance(reply, ErrorMsg):
                return
            upload = self._recv_msg(conn)
            if not isinstance(upload, Upload):
                self._send_msg(conn, ErrorMsg(ERR_UNKNOWN_CLIENT, "expected upload"))
                return
            err = self.server.accept_upload(upload)
            if err is not None:
                self._send_msg(conn, err)
                return
            try:
                gm = self.server.global_model(timeout=self.timeout)
            except RoundError as exc:
                self._send_msg(conn, ErrorMsg(ERR_ROUND_TIMEOUT, str(exc)))
                return
            self._send_msg(conn, gm)
        except (OSError, FramingError, ProtocolError):
            pass  # peer went away or spoke garbage; the runner reports the round outcome
        finally:
            conn.close()

    def shutdown(self):
        self._shutdown.set()
        self._listener.close()
        self._accept_thread.join(timeout=2.0)
        for t in self._threads:
            t.join(timeout=2.0)


def _socket_client(address, client: FederatedClient, timeout: float) -> PersonalModel:
    with socket.create_connection(address, timeout=timeout) as sock:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.sendall(encode(client.hello()))
        reply = decode(read_frame(sock))
        if isinstance(reply, ErrorMsg):
            raise RoundError(f"client {client.client_id} rejected: {reply.text}")
        if not isinstance(reply, Config):
            raise ProtocolError(f"expected config, got {reply.type_name}")
        sock.sendall(encode(client.handle_config(reply)))
        final = decode(read_frame(sock))
        if isinstance(final, ErrorMsg):
            raise RoundError(f"client {client.client_id} got error: {final.text}")
        if not isinstance(final, GlobalModel):
            raise ProtocolError(f"expected global model, got {final.type_name}")
        return client.handle_global_model(final)


def _run_socket(server, clients, timeout, host, port) -> RoundResult:
    stats = TransportStats()
    round_server = _SocketRoundServer(server, stats, host, port, timeout)
    models: dict[int, PersonalModel] = {}
    client_errors: list[tuple[int, Exception]] = []
    threads: list[threading.Thread] = []

    def run_client(cl: FederatedClient):
        try:
            models[cl.client_id] = _socket_client(round_server.address, cl, timeout)
        except Exception as exc:  # surfaced below as a RoundError
            client_errors.append((cl.client_id, exc))

    deadline = time.monotonic() + timeout

    def remaining() -> float:
        return max(0.0, deadline - time.monotonic())

    try:
        # Staggered starts: fusion order equals client list order, making
        # socket rounds bit-identical to simulated ones.
        for i, cl in enumerate(clients):
            t = threading.Thread(target=run_client, args=(cl,), daemon=True)
            t.start()
            threads.append(t)
            if not server.wait_fused(i + 1, remaining()):
                break
        try:
            gm = server.global_model(timeout=remaining())
        except RoundError:
            server.abort()
            raise
        for t in threads:
            t.join(remaining() + 1.0)
        if client_errors:
            details = "; ".join(f"client {cid}: {exc}" for cid, exc in client_errors)
            raise RoundError(f"round failed on the client side: {details}")
        return RoundResult(models=models, g_global=gm.g, stats=stats)
    finally:
        server.abort()
        round_server.shutdown()
