"""Synthetic fixture imagery: separable bar patterns and planted detector frames.

The real corpora behind the two classifiers are not redistributable, so the
repo ships generators instead.  Positives are vertical-stripe patterns,
negatives horizontal stripes (plus flat frames for the pedestrian class, so
empty roads score low).  Everything is driven by splitmix64, making each
fixture a pure function of its seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import DatasetSplit, LabeledImage, encode_pgm
from .detection import BBox
from .rng import SplitMix64

PEDESTRIAN_SHAPE = (128, 64)
EYE_SHAPE = (24, 24)


def noise_field(h: int, w: int, amplitude: float, rng: SplitMix64) -> np.ndarray:
    """Uniform noise in [-amplitude, amplitude], 8 bytes per generator draw."""
    n = h * w
    raw = bytearray()
    for _ in range((n + 7) // 8):
        raw += rng.next_u64().to_bytes(8, "little")
    field = np.frombuffer(bytes(raw[:n]), dtype=np.uint8).astype(np.float64)
    return (field / 255.0 - 0.5) * 2.0 * amplitude


def bar_image(shape: tuple[int, int], vertical: bool, rng: SplitMix64,
              noise: float = 0.06) -> np.ndarray:
    """One stripe-pattern image with randomized period, phase, and contrast."""
    h, w = shape
    half_period = 2 + rng.randrange(3)  # stripe width 2..4 px
    phase = rng.randrange(2)
    lo = rng.uniform(0.0, 0.15)
    hi = rng.uniform(0.8, 1.0)
    idx = np.arange(w if vertical else h)
    stripe = (idx // half_period + phase) % 2
    line = np.where(stripe == 1, hi, lo)
    img = np.tile(line, (h, 1)) if vertical else np.tile(line[:, None], (1, w))
    img = img + noise_field(h, w, noise, rng).reshape(h, w)
    return np.clip(img, 0.0, 1.0)[None, :, :]


def flat_image(shape: tuple[int, int], rng: SplitMix64, noise: float = 0.04) -> np.ndarray:
    """Featureless frame at a random level; a pedestrian-class negative.

    One draw in four is exactly black and noise-free so trained models treat
    empty frames as negatives.
    """
    h, w = shape
    if rng.randrange(4) == 0:
        return np.zeros((1, h, w))
    level = rng.uniform(0.0, 0.7)
    img = level + noise_field(h, w, noise, rng).reshape(h, w)
    return np.clip(img, 0.0, 1.0)[None, :, :]


def separable_images(count: int, shape: tuple[int, int], seed: int,
                     flat_negatives: bool = False) -> list[LabeledImage]:
    """Alternating positive (vertical bars) and negative images."""
    rng = SplitMix64(seed)
    images = []
    for i in range(count):
        label = 1 - (i % 2)
        if label == 1:
            pixels = bar_image(shape, vertical=True, rng=rng)
        elif flat_negatives and (i // 2) % 3 == 2:
            pixels = flat_image(shape, rng=rng)
        else:
            pixels = bar_image(shape, vertical=False, rng=rng)
        images.append(LabeledImage(pixels=pixels, label=label, source_path=f"synthetic:{i}"))
    return images


def separable_split(n_train: int = 200, n_val: int = 50, n_test: int = 50,
                    shape: tuple[int, int] = EYE_SHAPE, seed: int = 7,
                    flat_negatives: bool = False) -> DatasetSplit:
    """Pre-sliced balanced fixture split (train/val/test of the stated sizes)."""
    images = separable_images(n_train + n_val + n_test, shape, seed, flat_negatives)
    return DatasetSplit(
        train=images[:n_train],
        validation=images[n_train : n_train + n_val],
        test=images[n_train + n_val :],
        seed=seed,
    )


def planted_frame(plant_x: int, rng: SplitMix64,
                  frame_shape: tuple[int, int] = (128, 80)) -> tuple[np.ndarray, BBox]:
    """A flat frame with one vertical-stripe pedestrian window planted at plant_x.

    The frame is one window tall, so with stride 16 every candidate window
    overlaps the plant heavily; the detector should report exactly one box.
    """
    h, w = frame_shape
    ph, pw = PEDESTRIAN_SHAPE
    if plant_x < 0 or plant_x + pw > w:
        raise ValueError(f"plant_x {plant_x} puts the pattern outside the {w}px frame")
    frame = flat_image(frame_shape, rng)
    frame[:, 0:ph, plant_x : plant_x + pw] = bar_image(PEDESTRIAN_SHAPE, vertical=True, rng=rng)
    return frame, BBox(plant_x, 0, pw, ph)


def planted_frames(count: int = 20, seed: int = 11) -> list[tuple[np.ndarray, BBox]]:
    rng = SplitMix64(seed)
    return [planted_frame(plant_x=16 * (i % 2), rng=rng) for i in range(count)]


def driver_frame(eyes_open: bool, rng: SplitMix64,
                 frame_shape: tuple[int, int] = (64, 64),
                 rect: tuple[int, int, int, int] = (20, 20, 24, 24)) -> np.ndarray:
    """Driver-camera frame with an eye patch (open = vertical bars) at rect."""
    x, y, w, h = rect
    frame = flat_image(frame_shape, rng)
    frame[:, y : y + h, x : x + w] = bar_image((h, w), vertical=eyes_open, rng=rng)
    return frame


def write_dataset_dir(images: list[LabeledImage], root) -> None:
    """Write a pos/ + neg/ dataset tree of PGM files, one per image."""
    root = Path(root)
    counters = {0: 0, 1: 0}
    for sub in ("pos", "neg"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for img in images:
        sub = "pos" if img.label == 1 else "neg"
        k = counters[img.label]
        counters[img.label] += 1
        (root / sub / f"img_{k:04d}.pgm").write_bytes(encode_pgm(img.pixels))


def write_stream_dir(frames: list[np.ndarray], root) -> None:
    """Write a frame sequence as frame_0000.pgm, frame_0001.pgm, ..."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(frames):
        (root / f"frame_{k:04d}.pgm").write_bytes(encode_pgm(frame))
