"""On-disk formats: named-tensor checkpoints, frame sequences, flat config files.

Byte layouts are documented in ``docs/formats.md``. All multi-byte integers
and tensor payloads are little-endian.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"FCKPT\x00\r\n"
VERSION = 1
DIGEST_SIZE = 32

DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i8"): 3,
    np.dtype("<i4"): 4,
    np.dtype("u1"): 5,
    np.dtype("bool"): 6,
    np.dtype("<f2"): 7,
}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}


class FormatError(ValueError):
    pass


class ChecksumError(FormatError):
    pass


def _as_numpy(value) -> np.ndarray:
    if hasattr(value, "detach"):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    dtype = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    # astype keeps 0-d arrays 0-d, unlike ascontiguousarray
    return arr.astype(dtype, order="C", copy=False)


def encode_checkpoint(tensors: Mapping[str, object], config: Mapping | None = None) -> bytes:
    config_bytes = json.dumps(dict(config or {}), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(config_bytes)), config_bytes,
             struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = _as_numpy(value)
        if arr.dtype not in DTYPE_CODES:
            raise FormatError(f"unsupported dtype {arr.dtype} for {name!r}")
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<BB", DTYPE_CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        payload = arr.tobytes(order="C")
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(data: bytes) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    if len(data) < len(MAGIC) + 12 + DIGEST_SIZE:
        raise FormatError("file too short to be a checkpoint")
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic bytes")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum mismatch (corrupted or truncated file)")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise FormatError("unexpected end of data")
        chunk = body[pos: pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (config_len,) = struct.unpack("<I", take(4))
    config = json.loads(take(config_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in CODE_DTYPES:
            raise FormatError(f"unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        (nbytes,) = struct.unpack("<Q", take(8))
        dtype = CODE_DTYPES[code]
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise FormatError(f"payload size mismatch for {name!r}")
        tensors[name] = np.frombuffer(take(nbytes), dtype=dtype).reshape(shape).copy()
    if pos != len(body):
        raise FormatError("trailing bytes after tensor table")
    return config, tensors


def save_checkpoint(path, tensors: Mapping[str, object], config: Mapping | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(tensors, config))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    return decode_checkpoint(Path(path).read_bytes())


def save_model(path, model, extra: Mapping | None = None) -> Path:
    config = {"unet": model.config.to_dict(), **(extra or {})}
    return save_checkpoint(path, model.state_dict(), config)


def load_model(path):
    import torch

    from .unet import UNetConfig, VideoUNet

    config, tensors = load_checkpoint(path)
    model = VideoUNet(UNetConfig.from_dict(config["unet"]))
    dtype = next(iter(tensors.values())).dtype if tensors else np.float32
    if dtype == np.float64:
        model = model.double()
    model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    return model, config


# frame sequences

def frame_name(i: int) -> str:
    return f"frame_{i:04d}.ppm"


def _quantize(video: np.ndarray, lo: float, hi: float) -> np.ndarray:
    scaled = (np.clip(video, lo, hi) - lo) / (hi - lo)
    return np.floor(scaled * 255.0 + 0.5).astype(np.uint8)


def encode_ppm(frame_hwc: np.ndarray) -> bytes:
    h, w, c = frame_hwc.shape
    if c != 3:
        raise FormatError("binary pixmaps need 3 channels")
    return f"P6\n{w} {h}\n255\n".encode("ascii") + frame_hwc.astype(np.uint8).tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated pixmap header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P6":
        raise FormatError(f"not a binary pixmap (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError("malformed pixmap header") from exc
    if maxval != 255 or w < 1 or h < 1:
        raise FormatError("only 8-bit pixmaps are supported")
    raster = data[pos:]
    if len(raster) != w * h * 3:
        raise FormatError(f"expected {w * h * 3} raster bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)


def write_video(path, video, fps: int = 8, value_range=(0.0, 1.0)) -> Path:
    """Write ``[N, 3, H, W]`` values as ``frame_XXXX.ppm`` files plus ``manifest.json``.

    Values are clipped to ``value_range`` and rounded to the nearest of 256 levels.
    """
    video = _as_numpy(video).astype(np.float64)
    if video.ndim != 4 or video.shape[1] != 3:
        raise FormatError(f"expected [N, 3, H, W], got {video.shape}")
    lo, hi = (float(v) for v in value_range)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    q = _quantize(video, lo, hi)
    for i, frame in enumerate(q):
        (path / frame_name(i)).write_bytes(encode_ppm(frame.transpose(1, 2, 0)))
    manifest = {
        "format": "ppm-sequence",
        "version": 1,
        "frame_count": int(video.shape[0]),
        "fps": int(fps),
        "height": int(video.shape[2]),
        "width": int(video.shape[3]),
        "value_range": [lo, hi],
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_video(path) -> tuple[np.ndarray, dict]:
    """Return ``([N, 3, H, W] float32 array, manifest)``."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    count = int(manifest["frame_count"])
    files = sorted(path.glob("frame_*.ppm"))
    if len(files) != count:
        raise FormatError(f"manifest lists {count} frames but {len(files)} files exist")
    lo, hi = manifest["value_range"]
    frames = []
    for i in range(count):
        f = path / frame_name(i)
        if not f.exists():
            raise FormatError(f"missing frame {f.name}")
        frames.append(decode_ppm(f.read_bytes()).transpose(2, 0, 1))
    q = np.stack(frames).astype(np.float64)
    return (lo + q / 255.0 * (hi - lo)).astype(np.float32), manifest


# config files

def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"line {lineno}: empty key")
        values[key.replace("-", "_")] = value
    return values


def read_config(path) -> dict:
    return parse_config_text(Path(path).read_text())
