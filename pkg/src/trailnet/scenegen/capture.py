"""Three-camera capture rig and automatic dataset collection along a trail."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import CENTER, LABELS, LEFT, RIGHT, datapipe
from ..errors import InputError
from .ppm import write_ppm
from .render import CAMERA, Camera, render
from .styles import StylePack
from .world import Pose, TrailWorld

log = logging.getLogger(__name__)

STEP_LENGTH = 0.25
START_OFFSET = 1.0
END_MARGIN = 1.0
MANIFEST = "manifest.tsv"
MANIFEST_COLUMNS = ("path", "label", "world_seed", "style", "step", "yaw_offset")


def rig_yaw_offsets(fov_deg: float = 80.0, coverage_deg: float = 180.0) -> dict[int, float]:
    """Camera yaw offsets (degrees, CCW positive) for a left/center/right rig.

    The center camera spans [-fov/2, fov/2]; each side camera reaches the
    edge of the combined coverage.
    """
    side = coverage_deg / 2 - fov_deg / 2
    return {LEFT: side, CENTER: 0.0, RIGHT: -side}


def rig_overlap(fov_deg: float = 80.0, coverage_deg: float = 180.0) -> float:
    side = rig_yaw_offsets(fov_deg, coverage_deg)[LEFT]
    return fov_deg / 2 - (side - fov_deg / 2)


RIG = rig_yaw_offsets()


@dataclass
class LabeledSample:
    image: np.ndarray  # (100, 100, 3) uint8
    label: int
    world_seed: int = 0
    style: str = ""
    step: int = 0
    yaw_offset: float = 0.0


def capture_rig(
    world: TrailWorld,
    pose: Pose,
    style: StylePack,
    step: int = 0,
    camera: Camera = CAMERA,
    full_resolution: bool = False,
) -> list[LabeledSample]:
    """Render the three rig cameras; the label is the source camera.

    With full_resolution the samples carry the raw camera frames instead of
    the 100x100 downsampled images.
    """
    where = world.closest_on_trail((pose.x, pose.y))
    if where.distance >= world.half_width:
        raise InputError(
            f"capture pose ({pose.x:.2f}, {pose.y:.2f}) is {where.distance:.2f} m off the trail"
        )
    out = []
    for label in (LEFT, CENTER, RIGHT):
        frame = render(world, pose, style, camera, RIG[label])
        image = frame if full_resolution else datapipe.resize_400_to_100(frame)
        out.append(LabeledSample(image, label, world.seed, style.name, step, RIG[label]))
    return out


def plan_poses(world: TrailWorld, count: int, step_length: float = STEP_LENGTH) -> list[float]:
    """Arc positions for `count` images (three per pose), capped by trail length."""
    wanted = count // 3
    usable = world.main.length - START_OFFSET - END_MARGIN
    available = int(np.floor(usable / step_length)) + 1 if usable >= 0 else 0
    n = min(wanted, available)
    return [START_OFFSET + k * step_length for k in range(n)]


@dataclass
class Collection:
    samples: list[LabeledSample]
    requested: int
    elapsed: float
    truncated: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def images_per_minute(self) -> float:
        return 60.0 * len(self.samples) / self.elapsed if self.elapsed > 0 else float("inf")

    def class_counts(self) -> list[int]:
        counts = [0, 0, 0]
        for s in self.samples:
            counts[s.label] += 1
        return counts


def collect_dataset(
    world: TrailWorld,
    style: StylePack,
    count: int,
    step_length: float = STEP_LENGTH,
) -> Collection:
    """Walk the main trail in fixed arc steps facing along the tangent and
    capture the rig at every step."""
    positions = plan_poses(world, count, step_length)
    notes = []
    truncated = 3 * len(positions) < count - count % 3
    if count % 3:
        notes.append(f"count {count} truncated to {count - count % 3} (three images per pose)")
    if truncated:
        notes.append(
            f"trail of {world.main.length:.1f} m yields only {3 * len(positions)} images "
            f"at {step_length} m steps"
        )
    for n in notes:
        log.warning(n)
    samples = []
    t0 = time.perf_counter()
    for k, s in enumerate(positions):
        x, y, tangent = world.main.point_at(s)
        samples.extend(capture_rig(world, Pose(x, y, tangent).normalized(), style, step=k))
    elapsed = time.perf_counter() - t0
    return Collection(samples, count, elapsed, truncated, notes)


def write_dataset(root, samples: list[LabeledSample]) -> Path:
    """Write <root>/{left,center,right}/<step>.ppm plus manifest.tsv."""
    root = Path(root)
    for name in LABELS:
        (root / name).mkdir(parents=True, exist_ok=True)
    with open(root / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for s in samples:
            rel = f"{LABELS[s.label]}/{s.step:06d}.ppm"
            write_ppm(root / rel, s.image)
            writer.writerow([rel, LABELS[s.label], s.world_seed, s.style, s.step, f"{s.yaw_offset:g}"])
    return root / MANIFEST
