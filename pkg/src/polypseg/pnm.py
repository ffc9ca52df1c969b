"""Binary PNM image files: P6 (color) for images, P5 (grayscale) for masks.

Values are stored as maxval-255 bytes. Readers return floats in [0, 1]
(value / 255); writers quantize with round(value * 255) after clipping.
Malformed files raise FormatError carrying the byte offset of the problem.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError, ValidationError

_WHITESPACE = b" \t\n\r\x0b\x0c"


class _Scanner:
    """Tokenizer for the PNM header: whitespace-separated tokens, with
    '#' comments running to end of line."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def skip_separators(self) -> None:
        while self.pos < len(self.blob):
            byte = self.blob[self.pos:self.pos + 1]
            if byte in (b"#",):
                eol = self.blob.find(b"\n", self.pos)
                self.pos = len(self.blob) if eol < 0 else eol + 1
            elif byte and byte in _WHITESPACE:
                self.pos += 1
            else:
                return

    def token(self, what: str) -> bytes:
        self.skip_separators()
        start = self.pos
        while self.pos < len(self.blob) and self.blob[self.pos:self.pos + 1] not in _WHITESPACE:
            if self.blob[self.pos:self.pos + 1] == b"#":
                break
            self.pos += 1
        if self.pos == start:
            raise FormatError(f"expected {what}, found end of header", offset=start)
        return self.blob[start:self.pos]

    def integer(self, what: str) -> int:
        start_after_skip = None
        self.skip_separators()
        start_after_skip = self.pos
        tok = self.token(what)
        try:
            return int(tok)
        except ValueError:
            raise FormatError(f"expected integer {what}, got {tok!r}", offset=start_after_skip) from None


def _read_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(magic):
        raise FormatError(f"bad magic, expected {magic.decode()}", offset=0)
    sc = _Scanner(blob)
    sc.pos = len(magic)
    width = sc.integer("width")
    if width < 1:
        raise FormatError(f"width must be >= 1, got {width}", offset=len(magic))
    height = sc.integer("height")
    if height < 1:
        raise FormatError(f"height must be >= 1, got {height}", offset=len(magic))
    maxval_at = sc.pos
    maxval = sc.integer("maxval")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}", offset=maxval_at)
    # exactly one whitespace byte separates the header from the payload
    if sc.pos >= len(blob) or blob[sc.pos:sc.pos + 1] not in _WHITESPACE:
        raise FormatError("missing whitespace after maxval", offset=sc.pos)
    payload_start = sc.pos + 1
    expected = width * height * channels
    payload = blob[payload_start:]
    if len(payload) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, found {len(payload)}",
            offset=payload_start + len(payload))
    if len(payload) > expected:
        raise FormatError(
            f"trailing bytes after payload: expected {expected} bytes, found {len(payload)}",
            offset=payload_start + expected)
    raw = np.frombuffer(payload, dtype=np.uint8, count=expected)
    if channels == 1:
        arr = raw.reshape(height, width)[None]
    else:
        arr = raw.reshape(height, width, channels).transpose(2, 0, 1)
    return arr.astype(np.float32) / 255.0


def _quantize(arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValidationError("image contains non-finite values")
    return np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_ppm(path) -> np.ndarray:
    """P6 file -> (3, H, W) float32 in [0, 1]."""
    return _read_pnm(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    """P5 file -> (1, H, W) float32 in [0, 1]."""
    return _read_pnm(path, b"P5", 1)


def write_ppm(path, image: np.ndarray) -> None:
    """(3, H, W) floats in [0, 1] -> P6 file."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValidationError(f"expected (3, H, W) image, got shape {image.shape}")
    q = _quantize(image)
    h, w = image.shape[1], image.shape[2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(q.transpose(1, 2, 0).tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    """(1, H, W) or (H, W) floats in [0, 1] -> P5 file."""
    gray = np.asarray(gray)
    if gray.ndim == 3 and gray.shape[0] == 1:
        gray = gray[0]
    if gray.ndim != 2:
        raise ValidationError(f"expected (1, H, W) or (H, W) image, got shape {gray.shape}")
    q = _quantize(gray)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(q.tobytes())
