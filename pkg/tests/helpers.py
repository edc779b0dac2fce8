"""Shared test oracles and encoders, written independently of the package.

The reference implementations here are deliberately naive (literal loops,
recounts from scratch) so they stay independent of the vectorized paths they
check.
"""

import struct
import zlib

import numpy as np


def conv2d_reference(x, kernels, bias, stride, padding):
    """Quadruple-loop convolution: channel-major, then kernel row-major."""
    f, c, kh, kw = kernels.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    _, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    out = np.zeros((f, oh, ow))
    for fi in range(f):
        for oy in range(oh):
            for ox in range(ow):
                acc = 0.0
                for ci in range(c):
                    for ky in range(kh):
                        for kx in range(kw):
                            acc += xp[ci, oy * stride + ky, ox * stride + kx] * kernels[fi, ci, ky, kx]
                out[fi, oy, ox] = acc + bias[fi]
    return out


def maxpool2_reference(x):
    """Window-by-window 2x2 max with explicit loops."""
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ci in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ci, i, j] = max(
                    x[ci, 2 * i, 2 * j], x[ci, 2 * i, 2 * j + 1],
                    x[ci, 2 * i + 1, 2 * j], x[ci, 2 * i + 1, 2 * j + 1],
                )
    return out


def iou_reference(a, b):
    """(x, y, w, h) boxes; intersection over union from first principles."""
    ax2, ay2 = a[0] + a[2], a[1] + a[3]
    bx2, by2 = b[0] + b[2], b[1] + b[3]
    iw = min(ax2, bx2) - max(a[0], b[0])
    ih = min(ay2, by2) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def nms_reference(boxes, scores, threshold):
    """Greedy NMS by literal definition: keep the best remaining, drop overlaps.

    Returns the kept indices in the order they were kept.
    """
    remaining = list(range(len(boxes)))
    kept = []
    while remaining:
        best = remaining[0]
        for i in remaining[1:]:
            if scores[i] > scores[best]:
                best = i
        kept.append(best)
        remaining = [
            i for i in remaining
            if i != best and iou_reference(boxes[i], boxes[best]) <= threshold
        ]
    return kept


def average_precision_reference(ranked, npos):
    """AP by recounting every prefix of the ranked TP/FP list from scratch.

    ranked: list of booleans (True = TP) in rank order.  Interpolated
    precision at each rank is the max precision over that rank's suffix.
    """
    n = len(ranked)
    precisions = []
    recalls = []
    for k in range(1, n + 1):
        tp = sum(1 for hit in ranked[:k] if hit)
        precisions.append(tp / k)
        recalls.append(tp / npos if npos else 0.0)
    ap = 0.0
    prev = 0.0
    for k in range(n):
        if ranked[k]:
            interp = max(precisions[k:])
            ap += (recalls[k] - prev) * interp
            prev = recalls[k]
    return ap


def central_difference(fn, tensor, idx, epsilon=1e-6):
    """(f(x+eps) - f(x-eps)) / 2eps for one flat index of an array."""
    flat = tensor.reshape(-1)
    saved = flat[idx]
    flat[idx] = saved + epsilon
    hi = fn()
    flat[idx] = saved - epsilon
    lo = fn()
    flat[idx] = saved
    return (hi - lo) / (2 * epsilon)


# --- minimal PNG writer -----------------------------------------------------

def _png_chunk(ctype, body):
    crc = zlib.crc32(ctype)
    crc = zlib.crc32(body, crc)
    return struct.pack(">I", len(body)) + ctype + body + struct.pack(">I", crc)


def _filter_row(ftype, row, prev, bpp):
    """Apply a PNG filter to a raw row (what an encoder stores in the stream)."""
    out = bytearray(len(row))
    for x in range(len(row)):
        left = row[x - bpp] if x >= bpp else 0
        up = prev[x] if prev is not None else 0
        ul = prev[x - bpp] if (prev is not None and x >= bpp) else 0
        if ftype == 0:
            pred = 0
        elif ftype == 1:
            pred = left
        elif ftype == 2:
            pred = up
        elif ftype == 3:
            pred = (left + up) // 2
        else:  # paeth
            p = left + up - ul
            pa, pb, pc = abs(p - left), abs(p - up), abs(p - ul)
            pred = left if pa <= pb and pa <= pc else (up if pb <= pc else ul)
        out[x] = (row[x] - pred) & 0xFF
    return bytes(out)


def write_png(pixels, color_type=0, filters=None, bit_depth=8, interlace=0):
    """Encode a uint8 array as PNG: (H,W) grayscale or (H,W,3) RGB.

    filters picks the per-row filter type (default all 0); the decoder under
    test must undo whatever is applied here.
    """
    pixels = np.asarray(pixels, dtype=np.uint8)
    if color_type == 2:
        h, w, _ = pixels.shape
        rows = [pixels[y].reshape(-1).tobytes() for y in range(h)]
        bpp = 3
    else:
        h, w = pixels.shape
        rows = [pixels[y].tobytes() for y in range(h)]
        bpp = 1
    if filters is None:
        filters = [0] * h
    stream = bytearray()
    prev = None
    for y in range(h):
        stream.append(filters[y])
        stream += _filter_row(filters[y], rows[y], prev, bpp)
        prev = rows[y]
    ihdr = struct.pack(">IIBBBBB", w, h, bit_depth, color_type, 0, 0, interlace)
    return (b"\x89PNG\r\n\x1a\n" + _png_chunk(b"IHDR", ihdr)
            + _png_chunk(b"IDAT", zlib.compress(bytes(stream)))
            + _png_chunk(b"IEND", b""))
