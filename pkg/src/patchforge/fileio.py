"""On-disk artifact formats.

- Images: binary PPM (P6), 8-bit, maxval 255.
- Parameter blocks: a one-line JSON header followed by length-prefixed
  little-endian float32 blocks (uint32 element count, then the elements),
  one block per tensor in declaration order.
- Manifests: JSON with the config hash, seed, input/output artifact
  hashes and tool version. No timestamps, so reruns are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ArtifactIOError

TOOL_VERSION = "patchforge 0.1.0"


def write_ppm(path: Path | str, image: np.ndarray) -> None:
    """image: (3, H, W) or (1, 3, H, W) float array in [0, 1]."""
    arr = np.asarray(image)
    if arr.ndim == 4:
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ArtifactIOError(f"expected (3,H,W) image, got {arr.shape}")
    h, w = arr.shape[1], arr.shape[2]
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.transpose(1, 2, 0).tobytes())


def read_ppm(path: Path | str) -> np.ndarray:
    """Returns a (3, H, W) float32 array in [0, 1]."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        if pos >= len(raw):
            raise ArtifactIOError(f"{path}: truncated PPM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            pos = raw.index(b"\n", pos) + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            fields.append(raw[pos:end])
            pos = end
    if fields[0] != b"P6":
        raise ArtifactIOError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ArtifactIOError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos)
    if pixels.size != w * h * 3:
        raise ArtifactIOError(f"{path}: truncated pixel data")
    return (pixels.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32) / 255.0)


def write_blocks(path: Path | str, header: dict, blocks: list[np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for arr in blocks:
            flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
            f.write(struct.pack("<I", flat.size))
            f.write(flat.tobytes())


def read_blocks(path: Path | str) -> tuple[dict, list[np.ndarray]]:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    nl = raw.find(b"\n")
    if nl < 0:
        raise ArtifactIOError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactIOError(f"{path}: bad JSON header: {exc}") from exc
    blocks = []
    pos = nl + 1
    while pos < len(raw):
        if pos + 4 > len(raw):
            raise ArtifactIOError(f"{path}: truncated block length")
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        end = pos + 4 * count
        if end > len(raw):
            raise ArtifactIOError(f"{path}: truncated block data")
        blocks.append(np.frombuffer(raw, dtype="<f4", count=count, offset=pos).copy())
        pos = end
    return header, blocks


def sha256_file(path: Path | str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path: Path | str, command: str, config_hash: str, seed: int,
                   inputs: dict[str, str], outputs: dict[str, str],
                   extra: dict | None = None) -> None:
    doc = {
        "tool_version": TOOL_VERSION,
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "inputs": dict(sorted(inputs.items())),
        "outputs": dict(sorted(outputs.items())),
    }
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
