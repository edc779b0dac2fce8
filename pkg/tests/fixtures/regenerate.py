"""Regenerate every committed artifact under tests/fixtures/golden/.

Produces the two trained fixture models, the dual-stream frame directories,
and the golden alarm log (written by the CLI itself so the byte format is
exactly what `pecas run` emits).  Everything is seeded, so rerunning this
script on the same platform reproduces the files bit for bit.

Usage: python tests/fixtures/regenerate.py
"""

from pathlib import Path

from pecas.cli import dispatch
from pecas.fixtures import (PEDESTRIAN_SHAPE, driver_frame, flat_image,
                            planted_frame, separable_split, write_stream_dir)
from pecas.models import build_eye_net, build_pedestrian_net, save_model
from pecas.rng import SplitMix64
from pecas.training import TrainConfig, train

GOLDEN = Path(__file__).parent / "golden"

PED_FIXTURE_SEED = 5
EYE_FIXTURE_SEED = 7
TRAIN_SEED = 42
STREAM_SEED = 99
ROI_RECT = "20,20,24,24"


def train_models() -> None:
    ped_split = separable_split(120, 30, 30, shape=PEDESTRIAN_SHAPE,
                                seed=PED_FIXTURE_SEED, flat_negatives=True)
    ped, records = train(build_pedestrian_net(), ped_split,
                         TrainConfig(epochs=8, seed=TRAIN_SEED))
    print(f"pedestrian fixture model: val accuracy {records[-1].val_accuracy}")
    save_model(ped, GOLDEN / "pedestrian.pecas")

    eye_split = separable_split(200, 50, 50, seed=EYE_FIXTURE_SEED)
    eye, records = train(build_eye_net(), eye_split,
                         TrainConfig(epochs=30, seed=TRAIN_SEED))
    print(f"eye fixture model: val accuracy {records[-1].val_accuracy}")
    save_model(eye, GOLDEN / "eye.pecas")


def write_streams() -> None:
    rng = SplitMix64(STREAM_SEED)
    outward = []
    for i in range(8):
        if 2 <= i <= 5:  # pedestrian present on the middle frames
            frame, _ = planted_frame(plant_x=16 * (i % 2), rng=rng)
        else:
            frame = flat_image((128, 80), rng)
        outward.append(frame)
    driver = [driver_frame(eyes_open=(i >= 4), rng=rng) for i in range(8)]
    write_stream_dir(outward, GOLDEN / "outward")
    write_stream_dir(driver, GOLDEN / "driver")


def write_golden_log() -> None:
    code = dispatch([
        "run",
        "--ped-model", str(GOLDEN / "pedestrian.pecas"),
        "--eye-model", str(GOLDEN / "eye.pecas"),
        "--outward", str(GOLDEN / "outward"),
        "--driver", str(GOLDEN / "driver"),
        "--roi", ROI_RECT,
        "--log", str(GOLDEN / "alarms.jsonl"),
    ])
    if code != 0:
        raise SystemExit(f"golden run failed with exit code {code}")
    print(f"golden log: {(GOLDEN / 'alarms.jsonl').read_text().count(chr(10))} events")


if __name__ == "__main__":
    GOLDEN.mkdir(parents=True, exist_ok=True)
    train_models()
    write_streams()
    write_golden_log()
