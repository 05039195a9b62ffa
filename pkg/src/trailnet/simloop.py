"""Closed-loop driving: a kinematic robot steered by per-frame classifications."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import CENTER, LABELS, LEFT, RIGHT
from .datapipe import resize_400_to_100
from .errors import ConfigurationError, InputError, NetworkError, ReplyTimeout
from .models import TrailModel
from .netproto import DEFAULT_TIMEOUT, PredictionClient, classify_frame
from .scenegen.render import CAMERA, Camera, render
from .scenegen.styles import StylePack
from .scenegen.world import Pose, TrailWorld, wrap_angle

log = logging.getLogger(__name__)

V_FORWARD = 1.5  # m/s
V_SLOW = 0.5
TURN_RATE = math.radians(30.0)  # rad/s
DT = 1.0 / 30.0
ON_TRAIL_MARGIN = 0.5
EXIT_DISTANCE = 5.0  # metres beyond the trail edge
MAX_TIMEOUTS = 30


@dataclass(frozen=True)
class RobotState:
    pose: Pose
    speed: float = V_FORWARD
    tick: int = 0
    last_command: int = CENTER


def control_step(state: RobotState, label: int, dt: float = DT) -> RobotState:
    """Left turns right (yaw decreases), Right turns left, Center goes straight."""
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    x, y, yaw = state.pose
    if label == CENTER:
        speed = V_FORWARD
    elif label == LEFT:
        speed, yaw = V_SLOW, yaw - TURN_RATE * dt
    elif label == RIGHT:
        speed, yaw = V_SLOW, yaw + TURN_RATE * dt
    else:
        raise InputError(f"unknown control label {label}")
    pose = Pose(x + speed * dt * math.cos(yaw), y + speed * dt * math.sin(yaw), yaw)
    return RobotState(pose, speed, state.tick + 1, label)


class Policy:
    needs_image = False

    def decide(self, state: RobotState, image: np.ndarray | None) -> int:
        raise NotImplementedError


class ModelPolicy(Policy):
    needs_image = True

    def __init__(self, model: TrailModel):
        self.model = model

    def decide(self, state, image):
        return classify_frame(self.model, image).label


class OraclePolicy(Policy):
    """Steers toward a point a fixed arc length ahead on the true centerline."""

    def __init__(self, world: TrailWorld, lookahead: float = 2.0, deadband_deg: float = 3.0):
        self.world = world
        self.lookahead = lookahead
        self.deadband = math.radians(deadband_deg)

    def decide(self, state, image):
        x, y, yaw = state.pose
        curve = self.world.main
        s = curve.closest((x, y)).s
        tx, ty, _ = curve.point_at(min(s + self.lookahead, curve.length))
        bearing = wrap_angle(math.atan2(ty - y, tx - x) - yaw)
        if bearing > self.deadband:
            return RIGHT  # target on the left: turn left
        if bearing < -self.deadband:
            return LEFT
        return CENTER


class RandomPolicy(Policy):
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def decide(self, state, image):
        return int(self.rng.integers(3))


@dataclass
class TrajectoryRow:
    tick: int
    x: float
    y: float
    yaw: float
    label: int
    cross_track: float


@dataclass
class EpisodeMetrics:
    ticks: int
    max_ticks: int
    on_trail_ticks: int
    mean_cross_track: float
    progress: float  # metres made good along the trail while on it
    obstacle_ticks: int = 0
    termination: str = "max ticks"
    timeouts: int = 0

    @property
    def on_trail_fraction(self) -> float:
        """On-trail ticks over the requested tick budget; an early exit counts
        every remaining tick as off-trail."""
        return self.on_trail_ticks / self.max_ticks if self.max_ticks else 0.0

    def to_tsv(self) -> str:
        keys = ("ticks", "max_ticks", "on_trail_fraction", "mean_cross_track", "progress",
                "obstacle_ticks", "timeouts", "termination")
        vals = [getattr(self, k) for k in keys]
        fmt = [f"{v:.6f}" if isinstance(v, float) else str(v) for v in vals]
        return "\t".join(keys) + "\n" + "\t".join(fmt) + "\n"


@dataclass
class Episode:
    trajectory: list[TrajectoryRow] = field(default_factory=list)
    metrics: EpisodeMetrics | None = None

    def trajectory_tsv(self) -> str:
        lines = ["tick\tx\ty\tyaw\tlabel\tcross_track"]
        lines += [
            f"{r.tick}\t{r.x:.6f}\t{r.y:.6f}\t{r.yaw:.6f}\t{LABELS[r.label]}\t{r.cross_track:.6f}"
            for r in self.trajectory
        ]
        return "\n".join(lines) + "\n"

    def write(self, trajectory_path=None, metrics_path=None):
        if trajectory_path:
            Path(trajectory_path).write_text(self.trajectory_tsv())
        if metrics_path:
            Path(metrics_path).write_text(self.metrics.to_tsv())


def start_pose(world: TrailWorld, s: float = 20.0) -> Pose:
    x, y, tangent = world.main.point_at(s)
    return Pose(x, y, tangent)


def _obstacle_hit(world: TrailWorld, x: float, y: float) -> bool:
    obs = world.obstacles
    if len(obs) == 0:
        return False
    return bool(np.any(np.hypot(obs[:, 0] - x, obs[:, 1] - y) < obs[:, 2]))


def _drive(world, style, start, max_ticks, decide, camera, needs_image, episode=None):
    """Shared sense-decide-act loop. `decide(state, image)` returns a label.

    Rows are appended to `episode` as they happen, so a caller still has the
    partial trajectory when `decide` raises.
    """
    if max_ticks < 1:
        raise ConfigurationError(f"max_ticks must be >= 1, got {max_ticks}")
    first = world.closest_on_trail((start.x, start.y))
    if first.distance >= world.half_width + ON_TRAIL_MARGIN or not world.in_bounds(start.x, start.y):
        raise InputError(f"start ({start.x:.2f}, {start.y:.2f}) is {first.distance:.2f} m from the trail")
    state = RobotState(start.normalized())
    episode = episode if episode is not None else Episode()
    on, obstacle, errors, progress = 0, 0, [], 0.0
    termination = "max ticks"
    while state.tick < max_ticks:
        image = None
        if needs_image:
            image = resize_400_to_100(render(world, state.pose, style, camera))
        label = decide(state, image)
        state = control_step(state, label)
        x, y, yaw = state.pose
        where = world.closest_on_trail((x, y))
        errors.append(where.distance)
        episode.trajectory.append(TrajectoryRow(state.tick, x, y, yaw, label, where.lateral))
        if where.distance < world.half_width + ON_TRAIL_MARGIN:
            on += 1
            progress += max(0.0, state.speed * DT * math.cos(yaw - where.tangent))
        obstacle += _obstacle_hit(world, x, y)
        if not world.in_bounds(x, y):
            termination = "left world"
            break
        if where.distance > world.half_width + EXIT_DISTANCE:
            termination = "left trail"
            break
    episode.metrics = EpisodeMetrics(
        ticks=state.tick,
        max_ticks=max_ticks,
        on_trail_ticks=on,
        mean_cross_track=float(np.mean(errors)),
        progress=progress,
        obstacle_ticks=int(obstacle),
        termination=termination,
    )
    return episode


def run_episode(
    world: TrailWorld,
    style: StylePack,
    policy: Policy | TrailModel,
    start: Pose,
    max_ticks: int = 2000,
    camera: Camera = CAMERA,
) -> Episode:
    if isinstance(policy, TrailModel):
        policy = ModelPolicy(policy)
    return _drive(world, style, start, max_ticks, policy.decide, camera, policy.needs_image)


def run_episode_remote(
    world: TrailWorld,
    style: StylePack,
    address: tuple[str, int],
    start: Pose,
    max_ticks: int = 2000,
    camera: Camera = CAMERA,
    timeout: float = DEFAULT_TIMEOUT,
    client: PredictionClient | None = None,
) -> Episode:
    """As run_episode, with predictions from a remote service. A missed reply
    repeats the previous command; MAX_TIMEOUTS in a row abort the episode."""
    own = client is None
    client = client or PredictionClient(address, timeout)
    streak, total = 0, 0

    def decide(state: RobotState, image):
        nonlocal streak, total
        try:
            label = client.request(image, state.tick).label
            streak = 0
            return label
        except ReplyTimeout:
            streak += 1
            total += 1
            if streak >= MAX_TIMEOUTS:
                raise NetworkError(
                    f"{MAX_TIMEOUTS} consecutive reply timeouts from {address[0]}:{address[1]}"
                ) from None
            return state.last_command

    episode = Episode()
    try:
        _drive(world, style, start, max_ticks, decide, camera, True, episode)
    except NetworkError as exc:
        exc.episode = episode
        raise
    finally:
        if own:
            client.close()
    episode.metrics = replace(episode.metrics, timeouts=total)
    return episode
