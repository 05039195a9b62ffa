import math

import numpy as np
import pytest

from trailnet import CENTER, LEFT, RIGHT, simloop
from trailnet.errors import ConfigurationError, InputError
from trailnet.scenegen import Pose, generate_world, get_style
from trailnet.simloop import DT, TURN_RATE, V_FORWARD, V_SLOW, RobotState, control_step

STYLE = get_style("alpine-a")


def test_center_step():
    s = control_step(RobotState(Pose(0.0, 0.0, 0.0)), CENTER)
    assert s.pose.x == pytest.approx(V_FORWARD * DT) and s.pose.y == 0 and s.pose.yaw == 0
    assert s.speed == V_FORWARD and s.tick == 1 and s.last_command == CENTER


def test_left_turns_right_and_slows():
    s = control_step(RobotState(Pose(0.0, 0.0, 0.0)), LEFT)
    assert s.speed == V_SLOW
    assert s.pose.yaw == pytest.approx(-TURN_RATE * DT)
    assert s.pose.y < 0


def test_left_then_right_net_zero():
    s = RobotState(Pose(1.0, 2.0, 0.3))
    s = control_step(control_step(s, LEFT), RIGHT)
    assert s.pose.yaw == pytest.approx(0.3, abs=1e-15)


def test_quarter_turn_takes_three_seconds():
    s = RobotState(Pose(0.0, 0.0, 0.0))
    for _ in range(90):  # 3 s at 30 Hz
        s = control_step(s, LEFT)
    assert s.pose.yaw == pytest.approx(-math.pi / 2, abs=1e-9)


def test_kinematic_consistency():
    rng = np.random.default_rng(0)
    s = RobotState(Pose(0.0, 0.0, 0.0))
    for label in rng.integers(0, 3, 50):
        nxt = control_step(s, int(label))
        step = math.hypot(nxt.pose.x - s.pose.x, nxt.pose.y - s.pose.y)
        assert step == pytest.approx(nxt.speed * DT, abs=1e-12)
        assert nxt.tick == s.tick + 1
        s = nxt


def test_bad_dt_and_label():
    with pytest.raises(ConfigurationError):
        control_step(RobotState(Pose(0.0, 0.0, 0.0)), CENTER, dt=0)
    with pytest.raises(InputError):
        control_step(RobotState(Pose(0.0, 0.0, 0.0)), 7)


def test_single_left_step_reduces_cross_track(flat_world):
    start = Pose(150.0, 200.5, 0.0)  # 0.5 m left of an eastbound trail
    before = flat_world.closest_on_trail(start[:2]).distance
    after = control_step(RobotState(start), LEFT).pose
    assert flat_world.closest_on_trail(after[:2]).distance < before


def test_single_right_step_reduces_cross_track_from_right(flat_world):
    start = Pose(150.0, 199.5, 0.0)
    after = control_step(RobotState(start), RIGHT).pose
    assert flat_world.closest_on_trail(after[:2]).distance < 0.5


@pytest.fixture(scope="module")
def world7():
    return generate_world(7)


def test_oracle_stays_on_trail(world7):
    ep = simloop.run_episode(world7, STYLE, simloop.OraclePolicy(world7), simloop.start_pose(world7), 2000)
    m = ep.metrics
    assert m.ticks == 2000 and m.on_trail_fraction > 0.99
    assert 0 <= m.progress <= V_FORWARD * DT * m.ticks


def test_random_controller_mostly_off_trail(world7):
    start = simloop.start_pose(world7)
    fracs = [simloop.run_episode(world7, STYLE, simloop.RandomPolicy(s), start, 2000).metrics.on_trail_fraction
             for s in range(5)]
    assert np.mean(fracs) < 0.5


def test_episode_deterministic_and_tsv(world7, tmp_path):
    start = simloop.start_pose(world7, 100.0)
    a = simloop.run_episode(world7, STYLE, simloop.RandomPolicy(1), start, 60)
    b = simloop.run_episode(world7, STYLE, simloop.RandomPolicy(1), start, 60)
    assert a.trajectory_tsv() == b.trajectory_tsv()
    a.write(tmp_path / "t.tsv", tmp_path / "m.tsv")
    rows = (tmp_path / "t.tsv").read_text().splitlines()
    assert rows[0] == "tick\tx\ty\tyaw\tlabel\tcross_track" and len(rows) == a.metrics.ticks + 1
    assert (tmp_path / "m.tsv").read_text().startswith("ticks\tmax_ticks\ton_trail_fraction")


def test_start_off_trail_rejected(world7):
    x, y, t = world7.main.point_at(50.0)
    off = Pose(x + 10 * math.sin(t), y - 10 * math.cos(t), t)
    with pytest.raises(InputError):
        simloop.run_episode(world7, STYLE, simloop.OraclePolicy(world7), off, 10)


def test_model_policy_runs(world7):
    from trailnet.models import ModelSpec, TrailModel

    model = TrailModel.create(ModelSpec("rnn"), 0)
    ep = simloop.run_episode(world7, STYLE, model, simloop.start_pose(world7), 5)
    assert ep.metrics.ticks == 5
    assert all(r.label in (LEFT, CENTER, RIGHT) for r in ep.trajectory)
