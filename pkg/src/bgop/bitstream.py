"""Real bitstreams: serialize encoded GOPs through the range-coder backend.

The coder itself lives in the sibling `rangecoder` package (a small node
process). We talk to it over stdin/stdout with length-prefixed binary
messages; it performs pmf quantization, range coding and the normative
container layout. This module owns the mapping between EncodedGop records
and streams of (symbols, per-element pmf tables).

Per chunk the layout is: one hyper stream coded under the fixed unit
Laplace prior, then the main stream coded under the Laplace parameters
produced by running the hyper decoder on the decoded hyper symbols. Both
sides therefore derive identical tables, which is what makes the decode
bit-exact.

Wire protocol (all integers big-endian, one u32 length prefix per message):
    request  = opcode u8 + body
    response = status i32 (+ payload if 0, else detail u32)
    opcodes: 0 ping, 1 encode, 2 decode, 3 quantize_pmf,
             4 write_container, 5 read_container
"""

from __future__ import annotations

import os
import shutil
import struct
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .codec import VideoCodec
from .entropy import LaplaceParams, build_pmf_tables
from .errors import DecodeError, EnvironmentUnavailableError
from .gop import EncodedGop, EncodedUnit, LatentStream, UnitKind, coding_schedule

OP_PING = 0
OP_ENCODE = 1
OP_DECODE = 2
OP_QUANTIZE = 3
OP_WRITE_CONTAINER = 4
OP_READ_CONTAINER = 5

STATUS_MESSAGES = {
    -1: "malformed request",
    -2: "capacity exceeded",
    -3: "symbol out of range",
    -4: "corrupt or truncated coded stream",
    -5: "invalid pmf",
    -6: "container error",
}

KIND_INTRA = 0
KIND_FLOW = 1
KIND_RESIDUAL = 2


def _default_server() -> Path:
    override = os.environ.get("BGOP_RANGECODER")
    if override:
        return Path(override)
    return Path(__file__).resolve().parents[2] / "rangecoder" / "dist" / "server.js"


def backend_available() -> bool:
    return shutil.which("node") is not None and _default_server().is_file()


class CoderBackend:
    """One persistent range-coder process, restarted on demand."""

    _shared: "CoderBackend | None" = None

    def __init__(self, server: Path | None = None):
        self.server = server or _default_server()
        node = shutil.which("node")
        if node is None:
            raise EnvironmentUnavailableError("range coder backend needs node on PATH")
        if not self.server.is_file():
            raise EnvironmentUnavailableError(
                f"range coder backend not built: {self.server} missing "
                "(run npm install && npm run build in rangecoder/)"
            )
        self.node = node
        self.proc: subprocess.Popen | None = None

    @classmethod
    def shared(cls) -> "CoderBackend":
        if cls._shared is None:
            cls._shared = CoderBackend()
        return cls._shared

    def _ensure_running(self):
        if self.proc is None or self.proc.poll() is not None:
            self.proc = subprocess.Popen(
                [self.node, str(self.server)],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )

    def close(self):
        if self.proc is not None and self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.wait(timeout=10)
        self.proc = None

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            block = self.proc.stdout.read(remaining)
            if not block:
                raise EnvironmentUnavailableError("range coder backend exited unexpectedly")
            chunks.append(block)
            remaining -= len(block)
        return b"".join(chunks)

    def request(self, body: bytes) -> bytes:
        self._ensure_running()
        try:
            self.proc.stdin.write(struct.pack(">I", len(body)) + body)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise EnvironmentUnavailableError("range coder backend pipe closed") from None
        (length,) = struct.unpack(">I", self._read_exact(4))
        payload = self._read_exact(length)
        (status,) = struct.unpack(">i", payload[:4])
        if status != 0:
            (detail,) = struct.unpack(">I", payload[4:8]) if len(payload) >= 8 else (0,)
            msg = STATUS_MESSAGES.get(status, f"backend status {status}")
            raise DecodeError(f"{msg} (detail {detail})")
        return payload[4:]

    # --- coder operations -------------------------------------------------

    def encode_symbols(self, symbols: np.ndarray, sym_min: int, sym_max: int,
                       probs: np.ndarray) -> bytes:
        count = symbols.size
        head = struct.pack(">BIhh", OP_ENCODE, count, sym_min, sym_max)
        return self.request(head + symbols.astype(">i2").tobytes() + probs.astype(">f8").tobytes())

    def decode_symbols(self, payload: bytes, sym_min: int, sym_max: int,
                       probs: np.ndarray, count: int) -> np.ndarray:
        head = struct.pack(">BIhhI", OP_DECODE, count, sym_min, sym_max, len(payload))
        out = self.request(head + payload + probs.astype(">f8").tobytes())
        return np.frombuffer(out, dtype=">i2").astype(np.int32)

    def quantize_pmf(self, probs: np.ndarray) -> np.ndarray:
        """16-bit cumulative frequency table (len+1 entries, last = 65536)."""
        body = struct.pack(">BI", OP_QUANTIZE, probs.size) + probs.astype(">f8").tobytes()
        return np.frombuffer(self.request(body), dtype=">u4").astype(np.int64)

    def write_container(self, header: "StreamHeader", chunks: list["Chunk"]) -> bytes:
        body = [struct.pack(">BHHBBI", OP_WRITE_CONTAINER, header.width, header.height,
                            header.gop_size, header.model_id, header.frame_count),
                struct.pack(">I", len(chunks))]
        for c in chunks:
            body.append(struct.pack(">BIIhhhh", c.kind, len(c.main_payload), len(c.hyper_payload),
                                    c.main_min, c.main_max, c.hyper_min, c.hyper_max))
            body.append(c.main_payload)
            body.append(c.hyper_payload)
        return self.request(b"".join(body))

    def read_container(self, blob: bytes) -> tuple["StreamHeader", list["Chunk"]]:
        out = self.request(struct.pack(">B", OP_READ_CONTAINER) + blob)
        width, height, gop_size, model_id, frame_count, chunk_count = struct.unpack(">HHBBII", out[:14])
        header = StreamHeader(width=width, height=height, gop_size=gop_size,
                              model_id=model_id, frame_count=frame_count)
        chunks = []
        offset = 14
        for _ in range(chunk_count):
            kind, main_len, hyper_len, m0, m1, h0, h1 = struct.unpack(">BIIhhhh", out[offset:offset + 17])
            offset += 17
            main = out[offset : offset + main_len]
            offset += main_len
            hyper = out[offset : offset + hyper_len]
            offset += hyper_len
            chunks.append(Chunk(kind, m0, m1, h0, h1, main, hyper))
        return header, chunks


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    gop_size: int
    model_id: int
    frame_count: int


@dataclass(frozen=True)
class Chunk:
    kind: int
    main_min: int
    main_max: int
    hyper_min: int
    hyper_max: int
    main_payload: bytes
    hyper_payload: bytes


def _flat_probs(params: LaplaceParams, sym_min: int, sym_max: int) -> np.ndarray:
    table = build_pmf_tables(params, sym_min, sym_max)
    return table.probs.reshape(-1, sym_max - sym_min + 1).numpy()


def _span(symbols: np.ndarray) -> tuple[int, int]:
    return int(symbols.min()), int(symbols.max())


@torch.no_grad()
def _encode_stream(backend: CoderBackend, latent_codec, stream: LatentStream) -> Chunk:
    z = stream.hyper_symbols.numpy().reshape(-1)
    h0, h1 = _span(z)
    hyper_probs = _flat_probs(LaplaceParams.unit(stream.hyper_symbols.shape, torch.float64), h0, h1)
    hyper_payload = backend.encode_symbols(z, h0, h1, hyper_probs)

    z_hat = stream.hyper_symbols.to(torch.float32)
    params = latent_codec.params_from_hyper(z_hat)
    y = stream.main_symbols.numpy().reshape(-1)
    m0, m1 = _span(y)
    main_probs = _flat_probs(params, m0, m1)
    main_payload = backend.encode_symbols(y, m0, m1, main_probs)
    return Chunk(0, m0, m1, h0, h1, main_payload, hyper_payload)


@torch.no_grad()
def _decode_stream(backend: CoderBackend, latent_codec, chunk: Chunk,
                   height: int, width: int) -> LatentStream:
    cfg = latent_codec.config
    ds = cfg.downsample_factor
    hs = ds * 2 ** cfg.hyper_down_layers
    main_shape = (1, cfg.latent_channels, height // ds, width // ds)
    hyper_shape = (1, cfg.hyper_width, height // hs, width // hs)

    hyper_count = int(np.prod(hyper_shape))
    hyper_probs = _flat_probs(LaplaceParams.unit(hyper_shape, torch.float64),
                              chunk.hyper_min, chunk.hyper_max)
    z = backend.decode_symbols(chunk.hyper_payload, chunk.hyper_min, chunk.hyper_max,
                               hyper_probs, hyper_count)
    z_sym = torch.from_numpy(z.reshape(hyper_shape).copy())

    params = latent_codec.params_from_hyper(z_sym.to(torch.float32))
    main_count = int(np.prod(main_shape))
    main_probs = _flat_probs(params, chunk.main_min, chunk.main_max)
    y = backend.decode_symbols(chunk.main_payload, chunk.main_min, chunk.main_max,
                               main_probs, main_count)
    y_sym = torch.from_numpy(y.reshape(main_shape).copy())
    return LatentStream(main_symbols=y_sym, hyper_symbols=z_sym)


_KIND_TO_COMPONENT = {
    KIND_INTRA: "image_codec",
    KIND_FLOW: "flow_codec",
    KIND_RESIDUAL: "residual_codec",
}


def write_stream(encoded_gops: list[EncodedGop], codec: VideoCodec,
                 backend: CoderBackend | None = None) -> bytes:
    """Serialize a chained GOP list into one container blob."""
    backend = backend or CoderBackend.shared()
    first = encoded_gops[0]
    if first.left_key_skipped:
        raise DecodeError("first GOP of a stream must carry its own key frame")
    for i, gop in enumerate(encoded_gops):
        if gop.batch != 1:
            raise DecodeError("containers hold single-sequence (batch 1) streams")
        if (gop.height, gop.width, gop.gop_size) != (first.height, first.width, first.gop_size):
            raise DecodeError(f"GOP {i} geometry differs from the stream header")
        if i > 0 and not gop.left_key_skipped:
            raise DecodeError(f"GOP {i} must chain off the previous key frame")
    chunks = []
    for gop in encoded_gops:
        for unit in gop.units:
            if unit.kind is UnitKind.INTRA:
                chunk = _encode_stream(backend, codec.image_codec, unit.streams["image"])
                chunks.append(Chunk(KIND_INTRA, chunk.main_min, chunk.main_max,
                                    chunk.hyper_min, chunk.hyper_max,
                                    chunk.main_payload, chunk.hyper_payload))
            else:
                flow = _encode_stream(backend, codec.flow_codec, unit.streams["flow"])
                chunks.append(Chunk(KIND_FLOW, flow.main_min, flow.main_max,
                                    flow.hyper_min, flow.hyper_max,
                                    flow.main_payload, flow.hyper_payload))
                res = _encode_stream(backend, codec.residual_codec, unit.streams["residual"])
                chunks.append(Chunk(KIND_RESIDUAL, res.main_min, res.main_max,
                                    res.hyper_min, res.hyper_max,
                                    res.main_payload, res.hyper_payload))
    header = StreamHeader(
        width=first.width,
        height=first.height,
        gop_size=first.gop_size,
        model_id=first.model_id,
        frame_count=first.gop_size * len(encoded_gops) + 1,
    )
    return backend.write_container(header, chunks)


def read_stream(blob: bytes, codec: VideoCodec,
                backend: CoderBackend | None = None) -> list[EncodedGop]:
    """Parse a container blob back into chained EncodedGop records."""
    backend = backend or CoderBackend.shared()
    header, chunks = backend.read_container(blob)
    if header.model_id != codec.config.model_id:
        raise DecodeError(
            f"model id mismatch: stream {header.model_id}, codec {codec.config.model_id}"
        )
    if (header.frame_count - 1) % header.gop_size:
        raise DecodeError(f"frame count {header.frame_count} does not fit GOP size {header.gop_size}")
    gop_count = (header.frame_count - 1) // header.gop_size
    schedule = coding_schedule(header.gop_size).schedule
    cursor = 0

    def take(expected_kind: int) -> Chunk:
        nonlocal cursor
        if cursor >= len(chunks):
            raise DecodeError("container ends before all scheduled units", unit_index=cursor)
        chunk = chunks[cursor]
        if chunk.kind != expected_kind:
            raise DecodeError(
                f"chunk {cursor}: expected kind {expected_kind}, found {chunk.kind}",
                unit_index=cursor,
            )
        cursor += 1
        return chunk

    gops = []
    for g in range(gop_count):
        skip_left = g > 0
        units = []
        for unit in schedule:
            if unit.target_index == 0 and skip_left:
                continue
            if unit.kind is UnitKind.INTRA:
                stream = _decode_stream(backend, codec.image_codec, take(KIND_INTRA),
                                        header.height, header.width)
                units.append(EncodedUnit(unit.target_index, unit.kind, None, None,
                                         {"image": stream}))
            else:
                flow = _decode_stream(backend, codec.flow_codec, take(KIND_FLOW),
                                      header.height, header.width)
                res = _decode_stream(backend, codec.residual_codec, take(KIND_RESIDUAL),
                                     header.height, header.width)
                units.append(EncodedUnit(unit.target_index, unit.kind, unit.left_ref,
                                         unit.right_ref, {"flow": flow, "residual": res}))
        gops.append(EncodedGop(
            batch=1,
            height=header.height,
            width=header.width,
            gop_size=header.gop_size,
            model_id=header.model_id,
            left_key_skipped=skip_left,
            units=units,
        ))
    if cursor != len(chunks):
        raise DecodeError(f"{len(chunks) - cursor} trailing chunk(s) after the last scheduled unit")
    return gops
