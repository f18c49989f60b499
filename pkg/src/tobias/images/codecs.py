"""Binary PPM (P6) codec, plus optional PNG reading through Pillow."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from tobias.errors import ParseError, TobiasIOError

_WHITESPACE = b" \t\n\r\v\f"


def _read_token(data: bytes, pos: int):
    """Next header token starting at ``pos``, skipping whitespace and comments."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c in _WHITESPACE:
            pos += 1
        elif c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    if pos >= n:
        raise ParseError("unexpected end of header", pos)
    start = pos
    while pos < n and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    return data[start:pos], start, pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a binary P6 pixmap into an ``(H, W, 3)`` uint8 array."""
    if data[:2] != b"P6":
        raise ParseError(f"bad magic {data[:2]!r}, expected b'P6'", 0)
    pos = 2
    values, starts = [], []
    for field in ("width", "height", "maxval"):
        token, start, pos = _read_token(data, pos)
        if not token.isdigit():
            raise ParseError(f"{field} is not a decimal integer: {token!r}", start)
        values.append(int(token))
        starts.append(start)
    width, height, maxval = values
    if width < 1 or height < 1:
        raise ParseError(f"non-positive image size {width}x{height}", starts[0])
    if not 0 < maxval < 256:
        raise ParseError(f"unsupported maxval {maxval} (only 8-bit pixmaps)", starts[2])
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise ParseError("missing whitespace after maxval", pos)
    pos += 1
    need = width * height * 3
    if len(data) - pos < need:
        raise ParseError(f"truncated raster: need {need} bytes, have {len(data) - pos}", len(data))
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(height, width, 3).copy()


def encode_ppm(img: np.ndarray) -> bytes:
    img = as_uint8(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"P6 needs an (H, W, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def as_uint8(img: np.ndarray) -> np.ndarray:
    """Float images in [0, 1] are scaled and rounded; uint8 passes through."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    return np.clip(np.rint(img.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def to_float(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img.astype(np.float32) / 255.0
    return img.astype(np.float32, copy=False)


def load_image(path) -> np.ndarray:
    """Read a P6 pixmap (or, with Pillow installed, a PNG) as uint8 ``(H, W, 3)``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise TobiasIOError(f"cannot read {path}: {exc}") from exc
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _load_png(path)
    return decode_ppm(data)


def _load_png(path: Path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError:
        raise TobiasIOError(f"{path}: PNG support needs Pillow (pip install Pillow)") from None
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_image(path, img: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError:
            raise TobiasIOError("writing PNG needs Pillow; use a .ppm path instead") from None
        Image.fromarray(as_uint8(img)).save(path)
    else:
        path.write_bytes(encode_ppm(img))
    return path
