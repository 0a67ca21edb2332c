"""Binary portable-pixmap IO: P6 for RGB, P5 for grayscale masks.

Images are numpy float64 arrays of shape (height, width, channels) with
values in [0, 1]; channels is 1 or 3. Byte values scale as v = byte / 255,
and write(read(f)) reproduces f byte-exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_MAGIC_BY_CHANNELS = {1: b"P5", 3: b"P6"}


def _parse_header(data: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Return (magic, width, height, maxval, payload_offset).

    Header tokens are whitespace-separated; '#' starts a comment that runs
    to end of line.
    """
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary portable pixmap (bad magic)")
    magic = data[:2]
    tokens: list[int] = []
    i = 2
    while len(tokens) < 3:
        if i >= len(data):
            raise ValueError(f"{path}: truncated header")
        c = data[i : i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isdigit():
            j = i
            while j < len(data) and data[j : j + 1].isdigit():
                j += 1
            tokens.append(int(data[i:j]))
            i = j
        else:
            raise ValueError(f"{path}: unexpected byte {c!r} in header")
    if i >= len(data) or not data[i : i + 1].isspace():
        raise ValueError(f"{path}: header not terminated by whitespace")
    width, height, maxval = tokens
    return magic, width, height, maxval, i + 1


def read_ppm(path) -> np.ndarray:
    """Read a P6 (RGB) or P5 (grayscale) file into a float array in [0, 1]."""
    data = Path(path).read_bytes()
    magic, width, height, maxval, offset = _parse_header(data, path)
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval} (only 255)")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    payload = data[offset : offset + expected]
    if len(payload) < expected:
        raise ValueError(
            f"{path}: truncated payload: expected {expected} bytes, found {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(height, width, channels)


def write_ppm(image: np.ndarray, path) -> None:
    """Write a float image in [0, 1] as a maxval-255 binary pixmap."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"expected (h, w, 1|3) image, got shape {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    height, width, channels = image.shape
    magic = _MAGIC_BY_CHANNELS[channels]
    header = magic + f"\n{width} {height}\n255\n".encode("ascii")
    payload = np.rint(image * 255.0).astype(np.uint8).tobytes()
    Path(path).write_bytes(header + payload)
