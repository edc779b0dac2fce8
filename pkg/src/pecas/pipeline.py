"""Dual-stream replay, staggered scheduling, eye-ROI cropping, and score fusion.

Frames replay from two directories standing in for the outward and driver
cameras.  Acquisition is staggered: outward frames are scheduled at even
multiples of dt, driver frames at odd multiples, so at most one inference
runs per slot.  Every new score is fused with the most recent score from the
other stream (0.0 before a stream has produced anything); the alarm fires
when the product of the two scores strictly exceeds the threshold.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .data import decode_image, list_image_files, resize_bilinear
from .detection import detect, frame_score
from .errors import ConfigError, ContractError, DecodeError, RoiError
from .models import ModelWeights, predict

DEFAULT_THRESHOLD = 0.2
DEFAULT_FPS = 30.0
DEFAULT_DT = 1.0 / 30.0
EYE_INPUT = (24, 24)
LOG_DECIMALS = 9  # alarm-log floats are rounded so logs are stable across machines


class Stream(str, Enum):
    OUTWARD = "outward"
    DRIVER = "driver"


@dataclass
class FrameEvent:
    stream: Stream
    timestamp: float
    frame: np.ndarray  # (1, H, W)
    sequence: int


@dataclass
class ScheduledFrame:
    scheduled_t: float
    event: FrameEvent


@dataclass
class RoiConfig:
    """Where the eye region lives: one fixed rectangle or a per-frame file.

    The annotation file is a JSON object mapping frame sequence numbers to
    [x, y, w, h] rectangles, e.g. {"5": [10, 10, 48, 48]}.
    """

    mode: str  # "fixed_rect" | "annotation_file"
    rect: tuple[int, int, int, int] | None = None
    annotations: str | None = None
    _table: dict[int, tuple[int, int, int, int]] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode == "fixed_rect":
            if self.rect is None:
                raise ConfigError("fixed_rect mode requires a rect")
        elif self.mode == "annotation_file":
            if self.annotations is None:
                raise ConfigError("annotation_file mode requires an annotations path")
        else:
            raise ConfigError(f"unknown ROI mode {self.mode!r}")

    def rect_for(self, sequence: int) -> tuple[int, int, int, int]:
        if self.mode == "fixed_rect":
            return self.rect
        if self._table is None:
            raw = json.loads(Path(self.annotations).read_text())
            self._table = {int(k): tuple(v) for k, v in raw.items()}
        if sequence not in self._table:
            raise RoiError(f"no ROI annotation for frame sequence {sequence}")
        return self._table[sequence]


@dataclass
class AlarmEvent:
    timestamp: float
    pedestrian_score: float
    drowsiness_score: float
    product: float
    alarm: bool


def stream_from_dir(directory, stream: Stream, fps: float = DEFAULT_FPS) -> list[FrameEvent]:
    """Replay a directory of frames at a fixed rate; frame k lands at k/fps.

    Files come in lexicographic order; undecodable ones are skipped with a
    warning and do not consume a timestamp slot.
    """
    if fps <= 0:
        raise ValueError(f"fps must be > 0, got {fps}")
    directory = Path(directory)
    events: list[FrameEvent] = []
    if not directory.is_dir():
        return events
    for path in list_image_files(directory):
        try:
            frame = decode_image(path.read_bytes())
        except (DecodeError, OSError) as exc:
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
            continue
        k = len(events)
        events.append(FrameEvent(stream=stream, timestamp=k / fps, frame=frame, sequence=k))
    return events


def _nearest(events: list[FrameEvent], t: float) -> int | None:
    """Index of the frame whose timestamp is closest to t; ties pick the earlier."""
    if not events:
        return None
    return min(range(len(events)), key=lambda i: (abs(events[i].timestamp - t), i))


def staggered_schedule(outward: list[FrameEvent], driver: list[FrameEvent],
                       dt: float) -> list[ScheduledFrame]:
    """Alternate outward (even slots) and driver (odd slots) every dt seconds.

    Each slot emits the source frame nearest to its scheduled time, at most
    once per frame; a slot whose nearest frame was already taken emits
    nothing.  A stream is finished once the slot time has passed its last
    frame and that frame is consumed; the schedule ends when both are.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    sources = {Stream.OUTWARD: outward, Stream.DRIVER: driver}
    taken = {s: [False] * len(ev) for s, ev in sources.items()}

    def finished(stream: Stream, t: float) -> bool:
        events = sources[stream]
        if not events:
            return True
        if t < events[-1].timestamp:
            return False
        idx = _nearest(events, t)
        return taken[stream][idx]

    result: list[ScheduledFrame] = []
    slot = 0
    while True:
        stream = Stream.OUTWARD if slot % 2 == 0 else Stream.DRIVER
        t = slot * dt
        idx = _nearest(sources[stream], t)
        if idx is not None and not taken[stream][idx]:
            taken[stream][idx] = True
            result.append(ScheduledFrame(scheduled_t=t, event=sources[stream][idx]))
        next_outward = (slot + 1 if slot % 2 else slot + 2) * dt
        next_driver = (slot + 2 if slot % 2 else slot + 1) * dt
        if finished(Stream.OUTWARD, next_outward) and finished(Stream.DRIVER, next_driver):
            return result
        slot += 1


def extract_eye_roi(frame: np.ndarray, config: RoiConfig,
                    sequence: int | None = None) -> np.ndarray:
    """Crop the configured eye rectangle and resize it to the eye net's input."""
    x, y, w, h = (int(v) for v in config.rect_for(sequence))
    _, fh, fw = frame.shape
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > fw or y + h > fh:
        raise RoiError(f"ROI rect ({x},{y},{w},{h}) outside {fw}x{fh} frame")
    crop = frame[:, y : y + h, x : x + w]
    return np.clip(resize_bilinear(crop, EYE_INPUT), 0.0, 1.0)


def fuse(pedestrian_score: float, drowsiness_score: float,
         threshold: float = DEFAULT_THRESHOLD, timestamp: float = 0.0) -> AlarmEvent:
    """Combine the two scores; the alarm fires iff their product exceeds threshold."""
    for name, score in (("pedestrian", pedestrian_score), ("drowsiness", drowsiness_score)):
        if not 0.0 <= score <= 1.0:
            raise ContractError(f"{name} score {score} outside [0, 1]")
    product = pedestrian_score * drowsiness_score
    return AlarmEvent(
        timestamp=timestamp,
        pedestrian_score=pedestrian_score,
        drowsiness_score=drowsiness_score,
        product=product,
        alarm=product > threshold,
    )


def run_pipeline(ped_weights: ModelWeights, eye_weights: ModelWeights,
                 outward_dir, driver_dir, roi: RoiConfig,
                 threshold: float = DEFAULT_THRESHOLD, dt: float = DEFAULT_DT,
                 fps: float = DEFAULT_FPS, score_floor: float = 0.5,
                 nms_iou: float = 0.5) -> list[AlarmEvent]:
    """Replay both streams through the full detect-crop-classify-fuse loop.

    Outward frames yield a pedestrian score (best detection, 0 when none);
    driver frames yield a drowsiness score (closed-eye probability).  Each
    new score fuses with the other stream's most recent value, which starts
    at 0 so nothing can alarm before both streams have reported.
    """
    if ped_weights.spec.name != "pedestrian":
        raise ConfigError(f"outward model is {ped_weights.spec.name!r}, need 'pedestrian'")
    if eye_weights.spec.name != "eye":
        raise ConfigError(f"driver model is {eye_weights.spec.name!r}, need 'eye'")

    outward = stream_from_dir(outward_dir, Stream.OUTWARD, fps=fps)
    driver = stream_from_dir(driver_dir, Stream.DRIVER, fps=fps)

    held = {Stream.OUTWARD: 0.0, Stream.DRIVER: 0.0}
    events: list[AlarmEvent] = []
    for item in staggered_schedule(outward, driver, dt):
        frame_event = item.event
        if frame_event.stream is Stream.OUTWARD:
            detections = detect(ped_weights, frame_event.frame,
                                score_floor=score_floor, nms_iou=nms_iou)
            held[Stream.OUTWARD] = frame_score(detections)
        else:
            try:
                crop = extract_eye_roi(frame_event.frame, roi, frame_event.sequence)
            except RoiError as exc:
                print(f"warning: driver frame {frame_event.sequence} skipped: {exc}",
                      file=sys.stderr)
                continue
            held[Stream.DRIVER] = float(predict(eye_weights, crop)[0])
        events.append(
            fuse(held[Stream.OUTWARD], held[Stream.DRIVER],
                 threshold=threshold, timestamp=item.scheduled_t)
        )
    return events


def alarm_log_lines(events: list[AlarmEvent]) -> str:
    """JSON lines {t, ped, drowsy, product, alarm}, floats rounded for stable bytes."""
    lines = []
    for ev in events:
        lines.append(json.dumps({
            "t": round(ev.timestamp, LOG_DECIMALS),
            "ped": round(ev.pedestrian_score, LOG_DECIMALS),
            "drowsy": round(ev.drowsiness_score, LOG_DECIMALS),
            "product": round(ev.product, LOG_DECIMALS),
            "alarm": ev.alarm,
        }))
    return "\n".join(lines) + ("\n" if lines else "")
