import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from parkourpy.commands import (
    Command,
    CommandRanges,
    CurriculumState,
    Stage,
    assign_environments,
    auto_command,
    curriculum_update,
    sample_command,
    sample_commands,
)
from parkourpy.dynamics import EpisodeStats
from parkourpy.errors import DomainError
from parkourpy.terrain import TrackLayout


def episode(distance, success, fall):
    n = len(distance)
    return EpisodeStats(
        np.asarray(distance, dtype=float),
        np.asarray(success, dtype=bool),
        np.asarray(fall, dtype=bool),
        np.full(n, 100, dtype=np.int64),
    )


def test_sample_commands_within_ranges():
    cmds = sample_commands(np.random.default_rng(0), 10_000)
    ranges = CommandRanges()
    assert all(ranges.contains(Command(*row)) for row in cmds)
    assert abs(cmds[:, 0].mean() - 0.6) < 0.05


def test_sample_command_parkour_moves_forward():
    cmds = sample_commands(np.random.default_rng(1), 2000, Stage.PARKOUR)
    assert cmds[:, 0].min() >= 0.0
    assert cmds[:, 1].min() < 0.0


def test_sample_command_deterministic_and_degenerate():
    assert sample_command(5) == sample_command(5)
    point = CommandRanges(vx=(0.5, 0.5), vy=(0.0, 0.0), yaw_rate=(0.2, 0.2))
    assert sample_command(9, ranges=point) == Command(0.5, 0.0, 0.2)


def test_parkour_stage_clamps_backward_ranges():
    backward = CommandRanges(vx=(-1.0, -0.5))
    cmd = sample_command(3, Stage.PARKOUR, backward)
    assert cmd.vx == 0.0


def test_empty_range():
    with pytest.raises(DomainError, match="vy range"):
        CommandRanges(vy=(1.0, 0.0))


def test_auto_command_examples():
    base = np.array([1.2, 0.3, 0.0])
    assert np.array_equal(auto_command(0.7, 0.7, base), [1.2, 0.3, 0.0])
    backward = auto_command(math.pi, 0.0, base)
    assert backward[0] == 0.0 and backward[1] == 0.3 and backward[2] == 1.0
    assert np.allclose(auto_command(0.5, 0.0, base), [1.2, 0.3, 0.5])


def test_auto_command_wraps_error():
    cmd = auto_command(-3.0, 3.0, [1.0, 0.0, 0.0])
    assert cmd[2] == pytest.approx(2 * math.pi - 6.0)
    assert cmd[0] == 1.0


def test_auto_command_is_odd(rng):
    errors = rng.uniform(-3.0, 3.0, size=200)
    base = np.tile([1.0, 0.0, 0.0], (200, 1))
    plus = auto_command(errors, 0.0, base, alpha_yaw=0.3)
    minus = auto_command(-errors, 0.0, base, alpha_yaw=0.3)
    assert np.allclose(plus[:, 2], -minus[:, 2])
    assert np.array_equal(plus[:, 0], minus[:, 0])


def test_curriculum_examples():
    state = CurriculumState([2, 2, 2], [0, 1, 2], rows=5)
    out = curriculum_update(state, episode([3.7, 2.3, 3.0], [True, False, False], [False, True, True]), 4.8)
    assert out.row.tolist() == [3, 1, 2]
    assert out.col.tolist() == [0, 1, 2]
    assert state.row.tolist() == [2, 2, 2]


def test_curriculum_skips_non_forward_and_other_envs():
    state = CurriculumState([2, 2], [0, 1], rows=5)
    stats = episode([4.8, 4.8], [True, True], [False, False])
    assert curriculum_update(state, stats, 4.8, forward_command=[0.0, 1.0]).row.tolist() == [2, 3]
    assert curriculum_update(state, stats, 4.8, envs=[0]).row.tolist() == [3, 2]
    assert curriculum_update(state, stats, 4.8, envs=[]).row.tolist() == [2, 2]


def test_curriculum_timeout_is_not_demoted():
    state = CurriculumState([3], [0], rows=5)
    out = curriculum_update(state, episode([1.0], [False], [False]), 4.8)
    assert out.row.tolist() == [3]


def test_curriculum_saturates():
    top = CurriculumState([4], [0], rows=5)
    win = episode([4.8], [True], [False])
    assert curriculum_update(top, win, 4.8).row.tolist() == [4]
    bottom = CurriculumState([0], [0], rows=5)
    assert curriculum_update(bottom, episode([0.1], [False], [True]), 4.8).row.tolist() == [0]
    resampled = curriculum_update(top, win, 4.8, resample_at_max=True, rng=np.random.default_rng(0))
    assert 0 <= resampled.row[0] < 5


def test_always_successful_agent_reaches_top():
    rows = 10
    state = CurriculumState([0], [0], rows=rows)
    win = episode([4.8], [True], [False])
    for k in range(rows - 1):
        assert state.row[0] == k
        state = curriculum_update(state, win, 4.8)
    assert state.row[0] == rows - 1


def test_curriculum_state_validation():
    with pytest.raises(DomainError, match="one entry per environment"):
        CurriculumState([0, 1], [0], rows=3)
    with pytest.raises(DomainError, match="rows must lie"):
        CurriculumState([3], [0], rows=3)


def test_assign_environments():
    state, yaw = assign_environments(40, TrackLayout(2, 40), seed=3)
    assert sorted(state.col.tolist()) == list(range(40))
    assert np.all(state.row == 0)
    assert state.rows == 2
    assert np.all((yaw > -math.pi) & (yaw <= math.pi))
    again, yaw_again = assign_environments(40, TrackLayout(2, 40), seed=3)
    assert np.array_equal(yaw, yaw_again)


@pytest.mark.slow
def test_initial_yaw_is_uniform():
    _, yaw = assign_environments(10_000, TrackLayout(1, 4), seed=0)
    result = scipy_stats.kstest((yaw + math.pi) / (2 * math.pi), "uniform")
    assert result.pvalue > 0.001
