"""Length-prefixed binary protocol for remote guidance providers.

Frame layout (little-endian):

    magic "TGRW" | u16 version | u8 kind | u32 payload length | payload

Kinds: 0 handshake, 1 request, 2 response, 3 error.

Handshake payload: u16 version, u8 capability bitmask (1 = per-view
image editing, 2 = joint multi-view), u32 max image height, u32 max
image width.  Request payload: prompt and description as u32-prefixed
UTF-8, f32 noise level, u64 seed, 4 poses of 12 f32 ([R|t] row-major),
then 4 rendered + 4 original image blocks, then the provider config as a
u32 pair count followed by u32-prefixed key/value strings.  An image
block is u32 H, u32 W, then 3 float32 planes of H*W row-major.
Response payload: 4 residual image blocks.  Error payload: u16 code plus
a UTF-8 message.
"""

from __future__ import annotations

import socket
import struct
import threading

import numpy as np

from .errors import ProtocolError, TransportError
from .guidance import (CAP_IMAGE_EDIT, CAP_MULTI_VIEW, GuidanceProvider,
                       GuidanceRequest, GuidanceResponse, VIEWS_PER_REQUEST)

MAGIC = b"TGRW"
PROTOCOL_VERSION = 1

KIND_HANDSHAKE = 0
KIND_REQUEST = 1
KIND_RESPONSE = 2
KIND_ERROR = 3

ERR_VERSION_MISMATCH = 1
ERR_CAPABILITY_MISMATCH = 2
ERR_MALFORMED = 3
ERR_IMAGE_TOO_LARGE = 4
ERR_INTERNAL = 5

_CAP_BITS = {CAP_IMAGE_EDIT: 1, CAP_MULTI_VIEW: 2}
DEFAULT_MAX_IMAGE = 4096


def _caps_to_bits(caps) -> int:
    bits = 0
    for c in caps:
        bits |= _CAP_BITS[c]
    return bits


def _bits_to_caps(bits: int) -> frozenset:
    return frozenset(c for c, b in _CAP_BITS.items() if bits & b)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ProtocolError("payload truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def string(self) -> str:
        (n,) = self.unpack("I")
        return self.take(n).decode("utf-8")

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ProtocolError(
                f"{len(self.data) - self.pos} trailing bytes in payload")


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_image(img: np.ndarray) -> bytes:
    arr = np.asarray(img, dtype=np.float32)
    h, w, _ = arr.shape
    planar = np.ascontiguousarray(arr.transpose(2, 0, 1))
    return struct.pack("<II", h, w) + planar.tobytes()


def _read_image(r: _Reader) -> np.ndarray:
    h, w = r.unpack("II")
    raw = r.take(4 * 3 * h * w)
    planar = np.frombuffer(raw, dtype="<f4").reshape(3, h, w)
    return np.ascontiguousarray(planar.transpose(1, 2, 0))


def encode_handshake(version: int, capabilities, max_h: int, max_w: int) -> bytes:
    return struct.pack("<HBII", version, _caps_to_bits(capabilities),
                       max_h, max_w)


def decode_handshake(payload: bytes):
    r = _Reader(payload)
    version, bits, max_h, max_w = r.unpack("HBII")
    r.done()
    return version, _bits_to_caps(bits), max_h, max_w


def encode_request(req: GuidanceRequest) -> bytes:
    parts = [_pack_string(req.prompt), _pack_string(req.description),
             struct.pack("<fQ", req.noise_level, req.noise_seed),
             np.asarray(req.poses, dtype="<f4").tobytes()]
    for img in req.rendered_views:
        parts.append(_pack_image(img))
    for img in req.original_views:
        parts.append(_pack_image(img))
    cfg = req.provider_config
    parts.append(struct.pack("<I", len(cfg)))
    for key in cfg:
        parts.append(_pack_string(str(key)))
        parts.append(_pack_string(str(cfg[key])))
    return b"".join(parts)


def decode_request(payload: bytes) -> GuidanceRequest:
    r = _Reader(payload)
    prompt = r.string()
    description = r.string()
    noise_level, seed = r.unpack("fQ")
    poses = np.frombuffer(r.take(4 * 12 * VIEWS_PER_REQUEST), dtype="<f4")
    poses = poses.reshape(VIEWS_PER_REQUEST, 3, 4).astype(np.float64)
    rendered = [_read_image(r) for _ in range(VIEWS_PER_REQUEST)]
    original = [_read_image(r) for _ in range(VIEWS_PER_REQUEST)]
    (n_cfg,) = r.unpack("I")
    config = {}
    for _ in range(n_cfg):
        key = r.string()
        config[key] = r.string()
    r.done()
    return GuidanceRequest(
        rendered_views=rendered, original_views=original, poses=poses,
        noise_level=float(np.float32(noise_level)), noise_seed=seed,
        prompt=prompt, description=description, provider_config=config)


def encode_response(resp: GuidanceResponse) -> bytes:
    return b"".join(_pack_image(img) for img in resp.residuals)


def decode_response(payload: bytes) -> GuidanceResponse:
    r = _Reader(payload)
    residuals = [_read_image(r) for _ in range(VIEWS_PER_REQUEST)]
    r.done()
    return GuidanceResponse(residuals)


def encode_error(code: int, message: str) -> bytes:
    return struct.pack("<H", code) + message.encode("utf-8")


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 2:
        raise ProtocolError("error payload truncated")
    (code,) = struct.unpack("<H", payload[:2])
    return code, payload[2:].decode("utf-8", errors="replace")


def write_frame(sock, kind: int, payload: bytes,
                version: int = PROTOCOL_VERSION) -> None:
    header = MAGIC + struct.pack("<HBI", version, kind, len(payload))
    try:
        sock.sendall(header + payload)
    except OSError as exc:
        raise TransportError(f"send failed: {exc}") from exc


def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        try:
            chunk = sock.recv(remaining)
        except socket.timeout as exc:
            raise TransportError("receive timed out") from exc
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock) -> tuple[int, int, bytes]:
    """Read one frame; returns (version, kind, payload)."""
    header = _recv_exact(sock, 11)
    if header[:4] != MAGIC:
        raise ProtocolError(f"bad frame magic {header[:4]!r}")
    version, kind, length = struct.unpack("<HBI", header[4:])
    payload = _recv_exact(sock, length) if length else b""
    return version, kind, payload


class RemoteGuidanceProvider(GuidanceProvider):
    """Client for a remote guidance backend speaking the TGRW protocol.

    ``connect`` performs the handshake, checking protocol version and that
    the backend offers the required capability.  At most one request is in
    flight per connection.
    """

    name = "remote"

    def __init__(self, sock, capabilities, max_h, max_w):
        self._sock = sock
        self.capabilities = capabilities
        self.max_h = max_h
        self.max_w = max_w
        self._lock = threading.Lock()

    @classmethod
    def connect(cls, address, required_capability: str = CAP_IMAGE_EDIT,
                timeout: float = 30.0) -> "RemoteGuidanceProvider":
        if isinstance(address, str):
            host, _, port = address.rpartition(":")
            address = (host or "127.0.0.1", int(port))
        try:
            sock = socket.create_connection(address, timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach {address}: {exc}") from exc
        try:
            write_frame(sock, KIND_HANDSHAKE, encode_handshake(
                PROTOCOL_VERSION, (CAP_IMAGE_EDIT, CAP_MULTI_VIEW),
                DEFAULT_MAX_IMAGE, DEFAULT_MAX_IMAGE))
            version, kind, payload = read_frame(sock)
            if kind == KIND_ERROR:
                code, msg = decode_error(payload)
                if code == ERR_VERSION_MISMATCH:
                    raise ProtocolError(f"protocol version mismatch: {msg}")
                raise ProtocolError(f"handshake rejected (code {code}): {msg}")
            if kind != KIND_HANDSHAKE:
                raise ProtocolError(f"expected handshake reply, got kind {kind}")
            srv_version, caps, max_h, max_w = decode_handshake(payload)
            if srv_version != PROTOCOL_VERSION:
                raise ProtocolError(
                    f"protocol version mismatch: server speaks {srv_version}, "
                    f"client speaks {PROTOCOL_VERSION}")
            if required_capability not in caps:
                raise ProtocolError(
                    f"server lacks required capability "
                    f"{required_capability!r} (offers {sorted(caps)})")
        except Exception:
            sock.close()
            raise
        return cls(sock, caps, max_h, max_w)

    def guide(self, request: GuidanceRequest) -> GuidanceResponse:
        for img in list(request.rendered_views) + list(request.original_views):
            h, w = img.shape[:2]
            if h > self.max_h or w > self.max_w:
                raise ProtocolError(
                    f"image {h}x{w} exceeds negotiated maximum "
                    f"{self.max_h}x{self.max_w}")
        with self._lock:
            write_frame(self._sock, KIND_REQUEST, encode_request(request))
            version, kind, payload = read_frame(self._sock)
        if kind == KIND_ERROR:
            code, msg = decode_error(payload)
            raise ProtocolError(f"server error (code {code}): {msg}")
        if kind != KIND_RESPONSE:
            raise ProtocolError(f"expected response frame, got kind {kind}")
        resp = decode_response(payload)
        resp.validate_against(request)
        return resp

    def close(self) -> None:
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class GuidanceServer:
    """Serves any in-process provider over the wire protocol.

    Primarily a loopback conformance harness: start it around a provider,
    point a RemoteGuidanceProvider at ``server.address``, and the full
    request/response cycle runs through real sockets.
    """

    def __init__(self, provider: GuidanceProvider, host: str = "127.0.0.1",
                 port: int = 0, version: int = PROTOCOL_VERSION,
                 capabilities=None, max_h: int = DEFAULT_MAX_IMAGE,
                 max_w: int = DEFAULT_MAX_IMAGE):
        self.provider = provider
        self.version = version
        self.capabilities = frozenset(
            capabilities if capabilities is not None
            else provider.capabilities)
        self.max_h = max_h
        self.max_w = max_w
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(4)
        self._threads: list[threading.Thread] = []
        self._running = False

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()[:2]

    def start(self) -> "GuidanceServer":
        self._running = True
        accept = threading.Thread(target=self._accept_loop, daemon=True)
        accept.start()
        self._threads.append(accept)
        return self

    def stop(self) -> None:
        self._running = False
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _accept_loop(self) -> None:
        while self._running:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            worker = threading.Thread(
                target=self._serve_connection, args=(conn,), daemon=True)
            worker.start()
            self._threads.append(worker)

    def _serve_connection(self, conn) -> None:
        with conn:
            try:
                version, kind, payload = read_frame(conn)
                if kind != KIND_HANDSHAKE:
                    write_frame(conn, KIND_ERROR, encode_error(
                        ERR_MALFORMED, "expected handshake"), self.version)
                    return
                client_version, _, _, _ = decode_handshake(payload)
                if version != self.version or client_version != self.version:
                    write_frame(conn, KIND_ERROR, encode_error(
                        ERR_VERSION_MISMATCH,
                        f"server speaks version {self.version}"), self.version)
                    return
                write_frame(conn, KIND_HANDSHAKE, encode_handshake(
                    self.version, self.capabilities, self.max_h, self.max_w),
                    self.version)
                while True:
                    _, kind, payload = read_frame(conn)
                    if kind != KIND_REQUEST:
                        write_frame(conn, KIND_ERROR, encode_error(
                            ERR_MALFORMED, f"unexpected kind {kind}"),
                            self.version)
                        return
                    self._handle_request(conn, payload)
            except TransportError:
                return
            except ProtocolError as exc:
                try:
                    write_frame(conn, KIND_ERROR,
                                encode_error(ERR_MALFORMED, str(exc)),
                                self.version)
                except TransportError:
                    pass

    def _handle_request(self, conn, payload: bytes) -> None:
        try:
            request = decode_request(payload)
            for img in request.rendered_views:
                if img.shape[0] > self.max_h or img.shape[1] > self.max_w:
                    write_frame(conn, KIND_ERROR, encode_error(
                        ERR_IMAGE_TOO_LARGE,
                        f"image exceeds {self.max_h}x{self.max_w}"),
                        self.version)
                    return
            response = self.provider.guide(request)
            response.validate_against(request)
        except ProtocolError as exc:
            write_frame(conn, KIND_ERROR,
                        encode_error(ERR_MALFORMED, str(exc)), self.version)
            return
        except Exception as exc:
            write_frame(conn, KIND_ERROR,
                        encode_error(ERR_INTERNAL, str(exc)), self.version)
            return
        write_frame(conn, KIND_RESPONSE, encode_response(response),
                    self.version)


class EchoProvider(GuidanceProvider):
    """Returns the rendered views themselves as residuals; used to verify
    byte-exact protocol round trips."""

    name = "echo"

    def guide(self, request: GuidanceRequest) -> GuidanceResponse:
        return GuidanceResponse([v.copy() for v in request.rendered_views])
