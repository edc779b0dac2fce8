"""Image decoding, dataset directory loading, and the train/val/test split.

Supported payloads: binary PGM (P5), binary PPM (P6), both with maxval up to
255, and non-interlaced 8-bit PNG in grayscale or RGB.  Color is collapsed to
one channel with luma weights 0.299/0.587/0.114 and everything is scaled into
[0, 1].

Dataset directories follow <root>/pos/*.{pgm,ppm,png} and <root>/neg/*.
Splits are produced by a Fisher-Yates shuffle driven by the splitmix64
generator in :mod:`pecas.rng`, then sliced 60/20/20 (train gets floor(0.6*N),
validation floor(0.2*N), test the remainder).
"""

from __future__ import annotations

import struct
import sys
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DecodeError, LayoutError
from .rng import SplitMix64

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
IMAGE_SUFFIXES = (".pgm", ".ppm", ".png")

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class LabeledImage:
    """One labeled sample: (1, H, W) pixels in [0, 1] plus a binary label.

    Pixels may be held in memory or re-decoded from disk on every access
    (``loader``), so a corpus of tens of thousands of images never needs to
    be resident at once - training touches one batch at a time.
    """

    def __init__(self, pixels: np.ndarray | None = None, label: int = 0,
                 source_path: str = "", loader=None):
        if pixels is None and loader is None:
            raise ValueError("LabeledImage needs pixels or a loader")
        self._pixels = pixels
        self._loader = loader
        self.label = label
        self.source_path = source_path

    @property
    def pixels(self) -> np.ndarray:
        if self._pixels is not None:
            return self._pixels
        return self._loader()

    def __repr__(self):
        kind = "in-memory" if self._pixels is not None else "lazy"
        return f"LabeledImage(label={self.label}, {kind}, {self.source_path!r})"


@dataclass
class DatasetSplit:
    train: list[LabeledImage]
    validation: list[LabeledImage]
    test: list[LabeledImage]
    seed: int


# --- netpbm ---------------------------------------------------------------

def _pnm_tokens(data: bytes, count: int, what: str) -> tuple[list[int], int]:
    """Read `count` whitespace-separated integers, honoring # comments.

    Returns the values and the offset of the first pixel byte (one whitespace
    byte past the last token).
    """
    tokens: list[int] = []
    pos = 2  # past the magic
    current = b""
    while len(tokens) < count:
        if pos >= len(data):
            raise DecodeError(f"truncated {what} header")
        ch = data[pos : pos + 1]
        pos += 1
        if ch == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            if current:
                tokens.append(int(current))
                current = b""
        elif ch.isdigit():
            current += ch
        else:
            raise DecodeError(f"unexpected byte {ch!r} in {what} header")
    return tokens, pos


def _decode_pnm(data: bytes, channels: int, what: str) -> np.ndarray:
    header, offset = _pnm_tokens(data, 3, what)
    width, height, maxval = header
    if width <= 0 or height <= 0:
        raise DecodeError(f"{what} has non-positive dimensions {width}x{height}")
    if not 1 <= maxval <= 255:
        raise DecodeError(f"{what} maxval {maxval} unsupported (only 8-bit, 1..255)")
    need = width * height * channels
    raw = data[offset : offset + need]
    if len(raw) < need:
        raise DecodeError(f"truncated {what} payload: {len(raw)} of {need} bytes")
    pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / maxval
    if channels == 1:
        return pixels.reshape(1, height, width)
    return pixels.reshape(height, width, 3)


# --- PNG ------------------------------------------------------------------

def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter_png(raw: bytes, height: int, stride: int, bpp: int) -> bytearray:
    """Undo per-row PNG filtering (types 0-4) on the decompressed stream."""
    expected = height * (stride + 1)
    if len(raw) != expected:
        raise DecodeError(f"PNG pixel stream is {len(raw)} bytes, expected {expected}")
    out = bytearray(height * stride)
    prev_start = None
    for y in range(height):
        ftype = raw[y * (stride + 1)]
        line = bytearray(raw[y * (stride + 1) + 1 : (y + 1) * (stride + 1)])
        start = y * stride
        if ftype == 0:
            pass
        elif ftype == 1:  # sub
            for x in range(bpp, stride):
                line[x] = (line[x] + line[x - bpp]) & 0xFF
        elif ftype == 2:  # up
            if prev_start is not None:
                for x in range(stride):
                    line[x] = (line[x] + out[prev_start + x]) & 0xFF
        elif ftype == 3:  # average
            for x in range(stride):
                left = line[x - bpp] if x >= bpp else 0
                up = out[prev_start + x] if prev_start is not None else 0
                line[x] = (line[x] + (left + up) // 2) & 0xFF
        elif ftype == 4:  # paeth
            for x in range(stride):
                left = line[x - bpp] if x >= bpp else 0
                up = out[prev_start + x] if prev_start is not None else 0
                ul = out[prev_start + x - bpp] if (prev_start is not None and x >= bpp) else 0
                line[x] = (line[x] + _paeth(left, up, ul)) & 0xFF
        else:
            raise DecodeError(f"PNG row {y} uses unknown filter type {ftype}")
        out[start : start + stride] = line
        prev_start = start
    return out


def _decode_png(data: bytes) -> np.ndarray:
    pos = len(_PNG_SIGNATURE)
    header = None
    idat = bytearray()
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        ctype = data[pos + 4 : pos + 8]
        body = data[pos + 8 : pos + 8 + length]
        if len(body) < length:
            raise DecodeError("truncated PNG chunk")
        pos += 12 + length  # skip CRC
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"IDAT":
            idat += body
        elif ctype == b"IEND":
            break
    if header is None:
        raise DecodeError("PNG missing IHDR chunk")
    width, height, depth, color, _comp, _filt, interlace = header
    if depth != 8:
        raise DecodeError(f"PNG bit depth {depth} unsupported (only 8)")
    if color not in (0, 2):
        raise DecodeError(f"PNG color type {color} unsupported (only grayscale or RGB)")
    if interlace != 0:
        raise DecodeError("interlaced PNG unsupported")
    if not idat:
        raise DecodeError("PNG has no IDAT data")
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise DecodeError(f"PNG zlib stream corrupt: {exc}") from exc
    bpp = 1 if color == 0 else 3
    stride = width * bpp
    flat = _unfilter_png(raw, height, stride, bpp)
    pixels = np.frombuffer(bytes(flat), dtype=np.uint8).astype(np.float64) / 255.0
    if color == 0:
        return pixels.reshape(1, height, width)
    return pixels.reshape(height, width, 3)


# --- public API -----------------------------------------------------------

def decode_image(data: bytes) -> np.ndarray:
    """Decode PGM/PPM/PNG bytes into a (1, H, W) array of floats in [0, 1]."""
    if data[:2] == b"P5":
        decoded = _decode_pnm(data, 1, "PGM")
    elif data[:2] == b"P6":
        decoded = _decode_pnm(data, 3, "PPM")
    elif data[: len(_PNG_SIGNATURE)] == _PNG_SIGNATURE:
        decoded = _decode_png(data)
    elif data[:1] == b"P":
        raise DecodeError(f"unsupported netpbm format {data[:2]!r} (only binary P5/P6)")
    else:
        raise DecodeError("unrecognized image format (expected PGM, PPM, or PNG)")
    if decoded.ndim == 3 and decoded.shape[-1] == 3:  # RGB -> luma
        r, g, b = LUMA_WEIGHTS
        gray = r * decoded[:, :, 0] + g * decoded[:, :, 1] + b * decoded[:, :, 2]
        decoded = gray[None, :, :]
    return np.clip(decoded, 0.0, 1.0)


def encode_pgm(pixels: np.ndarray) -> bytes:
    """Write a (1,H,W) or (H,W) array of floats in [0,1] as binary PGM, maxval 255."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[0]
    values = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = values.shape
    return b"P5\n%d %d\n255\n" % (w, h) + values.tobytes()


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resize of a (C, H, W) array to (C, *size*)."""
    img = np.asarray(img, dtype=np.float64)
    c, h, w = img.shape
    h2, w2 = size
    if h2 < 1 or w2 < 1:
        raise ValueError(f"target size must be positive, got {size}")
    if (h, w) == (h2, w2):
        return img.copy()
    ys = np.linspace(0.0, h - 1, h2) if h2 > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, w2) if w2 > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bottom = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bottom * wy


def list_image_files(directory: Path) -> list[Path]:
    """Image files under a directory in lexicographic name order."""
    return sorted(
        (p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )


def _read_resized(path: Path, resize_to: tuple[int, int]) -> np.ndarray:
    pixels = decode_image(path.read_bytes())
    return np.clip(resize_bilinear(pixels, resize_to), 0.0, 1.0)


def load_dataset_dir(root, resize_to: tuple[int, int],
                     keep_in_memory: bool = True) -> list[LabeledImage]:
    """Load <root>/pos (label 1) then <root>/neg (label 0), resized to resize_to.

    Every file is decoded once up front so undecodable ones can be skipped
    with a warning line on stderr.  With ``keep_in_memory=False`` the decoded
    pixels are dropped again and re-read on each access, so a full-size
    corpus never has to fit in memory at once.
    """
    root = Path(root)
    images: list[LabeledImage] = []
    for sub, label in (("pos", 1), ("neg", 0)):
        directory = root / sub
        if not directory.is_dir():
            raise LayoutError(f"missing dataset subdirectory {directory}")
        for path in list_image_files(directory):
            try:
                pixels = _read_resized(path, resize_to)
            except (DecodeError, OSError) as exc:
                print(f"warning: skipping {path}: {exc}", file=sys.stderr)
                continue
            if keep_in_memory:
                images.append(LabeledImage(pixels=pixels, label=label,
                                           source_path=str(path)))
            else:
                images.append(LabeledImage(
                    label=label, source_path=str(path),
                    loader=lambda p=path: _read_resized(p, resize_to)))
    return images


def split_dataset(images: list[LabeledImage], seed: int) -> DatasetSplit:
    """Shuffle with splitmix64(seed) and slice 60/20/20.

    Sizes are floor(0.6*N) / floor(0.2*N) / remainder, computed in integer
    arithmetic so every N lands exactly.
    """
    n = len(images)
    if n < 5:
        raise ValueError(f"need at least 5 images to split, got {n}")
    order = list(range(n))
    SplitMix64(seed).shuffle(order)
    n_train = (6 * n) // 10
    n_val = (2 * n) // 10
    train = [images[i] for i in order[:n_train]]
    val = [images[i] for i in order[n_train : n_train + n_val]]
    test = [images[i] for i in order[n_train + n_val :]]
    return DatasetSplit(train=train, validation=val, test=test, seed=seed)
