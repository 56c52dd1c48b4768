import logging
import math
from dataclasses import dataclass
from enum import Enum, unique
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from parkourpy.commands import (
    CurriculumState,
    Stage,
    assign_environments,
    auto_command,
    curriculum_update,
    sample_commands,
)
from parkourpy.config import RunConfig
from parkourpy.dynamics import (
    NUM_JOINTS,
    DomainRandomization,
    EpisodeStats,
    JointConfig,
    LatencyBuffer,
    check_termination,
    initial_state,
    proprioception,
    rotation_matrices,
    sample_domain_randomization,
    step,
)
from parkourpy.errors import InputError, SimulationError, TimerError
from parkourpy.logger import get_logger, show_logger_message
from parkourpy.neural.policy import Observation
from parkourpy.perception import BasePose, sample_scandots_batch
from parkourpy.rewards import TERM_NAMES, RewardBreakdown, compute_reward_terms, total_reward
from parkourpy.sim import Sim
from parkourpy.terrain import Track, build_track, height_at
from parkourpy.timers.timer import Timer
from parkourpy.utils import cd, env_rng, repr_function_call

FloatArray = NDArray[np.float64]

COMMAND_STREAM = 2
TERRAIN_GRID = 0
ENV_GRID = 1


@unique
class State(Enum):
    UNINITIALIZED = 1
    INITIALIZED = 2


@dataclass(frozen=True)
class _Variable:
    getter: Callable[[], NDArray[Any]]
    grid: int
    units: str
    settable: bool = False


class ParkourSim(Sim):
    """Batched parkour environments behind the BMI.

    Next to the BMI, it offers the vectorized-environment calls used by the
    trainers: :meth:`reset` and :meth:`step`. Every kernel call is timed
    when ``timing`` is set and logged at DEBUG level.

    ```
    In [1]: from parkourpy import ParkourSim

    In [2]: sim = ParkourSim(num_envs=4, logger_level="DEBUG")

    In [3]: sim.initialize("run.toml")
    DEBUG:parkour-sim: execute function: _initialize('run.toml') returned None

    In [4]: sim.set_value("action", np.zeros((4, 19)))

    In [5]: sim.update()
    DEBUG:parkour-sim: execute function: _prepare_time_step(0.02) returned None
    DEBUG:parkour-sim: execute function: _do_time_step() returned None
    DEBUG:parkour-sim: execute function: _finalize_time_step() returned None

    In [6]: sim.get_value("reward")
    Out[6]: array([0.61, 0.58, 0.63, 0.60])
    ```

    Parameters
    ----------
    config : RunConfig, optional
        Run configuration; replaced by the file given to :meth:`initialize`.
    num_envs : int, optional
        Batch size, default ``config.ppo.num_envs``.
    working_directory : str or Path, optional
        Directory relative configuration paths are resolved against, by
        default the current directory.
    track : Track, optional
        Fixed track to run on instead of the configured layout. All
        environments start at the beginning of its first cell and succeed
        on reaching its end; the curriculum is off.
    auto_reset : bool, optional
        Reset finished environments at the end of each step, default True.
    timing : bool, optional
        Whether timing should be activated, by default False
    logger_level : str, int, optional
        Logger level, default 0 ("NOTSET").
    """

    def __init__(
        self,
        config: Optional[RunConfig] = None,
        num_envs: Optional[int] = None,
        working_directory: Union[str, Path, None] = None,
        track: Optional[Track] = None,
        auto_reset: bool = True,
        timing: bool = False,
        logger_level: Union[str, int] = 0,
    ):
        self._state = State.UNINITIALIZED
        self.name = "parkour-sim"
        self.logger = get_logger(self.name, logger_level)
        self.config = config or RunConfig()
        self._num_envs = num_envs
        self._fixed_track = track
        self.auto_reset = auto_reset

        if working_directory:
            self.working_directory = Path(working_directory)
        else:
            self.working_directory = Path().cwd()
        self.timing = timing

        if self.timing:
            self.timer = Timer(
                name=self.name,
                text="Elapsed time for {name}.{fn_name}: {seconds:0.4f} seconds",
            )

    def report_timing_totals(self) -> float:
        if self.timing:
            total = self.timer.report_totals(unit="env-steps")
            with show_logger_message(self.logger):
                self.logger.info(
                    "Total elapsed time for %s: %0.4f seconds", self.name, total
                )
            return total
        else:
            raise TimerError("Timing not activated")

    def get_env_count(self) -> int:
        self._check_initialized()
        return self.num_envs

    # ===========================
    # lifecycle
    # ===========================
    def initialize(self, config_file: str = "") -> None:
        if self._state == State.UNINITIALIZED:
            with cd(self.working_directory):
                self._execute_function(self._initialize, config_file)
                self._state = State.INITIALIZED
        else:
            raise SimulationError("The simulator is already initialized")

    def _initialize(self, config_file: str) -> None:
        if config_file:
            self.config = RunConfig.from_file(config_file)
        cfg = self.config
        self.num_envs = self._num_envs or cfg.ppo.num_envs
        self.stage = cfg.commands.stage_enum()
        self.params = cfg.dynamics.params()
        self.joints = JointConfig.h1()
        self.weights = cfg.rewards.weights()
        self.scandot_layout = cfg.perception.scandot_layout()

        n = self.num_envs
        if self._fixed_track is not None:
            self.track = self._fixed_track
        else:
            layout = (
                cfg.terrain.training_layout()
                if self.stage is Stage.PARKOUR
                else cfg.terrain.plane_layout()
            )
            self.track = build_track(
                layout,
                cfg.seed,
                cfg.terrain.cell_size,
                cfg.terrain.trench_depth,
                cfg.terrain.noise_amplitude,
                cfg.terrain.noise_octaves,
                cfg.terrain.noise_wavelength,
            )
        self.use_curriculum = self._fixed_track is None and self.stage is Stage.PARKOUR
        self.curriculum, spawn_yaw = assign_environments(n, self.track.layout, cfg.seed)
        self.curriculum = CurriculumState(
            self.curriculum.row,
            self.curriculum.col,
            self.curriculum.rows,
            cfg.commands.promote_fraction,
            cfg.commands.demote_fraction,
        )
        if self._fixed_track is not None:
            spawn_yaw = np.zeros(n)
        self.dr = (
            sample_domain_randomization(cfg.seed, n)
            if cfg.dynamics.randomize
            else DomainRandomization.nominal(n)
        )
        self.rngs = [env_rng(cfg.seed, k, COMMAND_STREAM) for k in range(n)]
        self.max_steps = int(round(cfg.dynamics.episode_length_s / self.params.control_dt))

        self.action = np.zeros((n, NUM_JOINTS))
        self.last_action = np.zeros_like(self.action)
        self.base_command = np.zeros((n, 3))
        self.command = np.zeros((n, 3))
        self.reward = np.zeros(n)
        self.done = np.zeros(n, dtype=bool)
        self.timeout = np.zeros(n, dtype=bool)
        self.resets = np.ones(n, dtype=bool)
        self.track_start = np.zeros(n)
        self.stats = EpisodeStats.zeros(n)
        self.last_breakdown: Optional[RewardBreakdown] = None
        self.time = 0.0
        self.steps = 0
        self.proprio_buffers = [
            LatencyBuffer[FloatArray](float(lat)) for lat in self.dr.proprio_latency
        ]
        self._metric_sums: Dict[str, float] = {}
        self._metric_steps = 0
        self._finished_lengths: List[int] = []
        self._finished_success: List[bool] = []

        xy = np.array([self._spawn_xy(k) for k in range(n)])
        self.state = initial_state(self.track.field, xy, spawn_yaw, self.params)
        self.prev_state = self.state.copy()
        self._new_episode(np.arange(n))
        self._refresh_observation()
        self.logger.info(
            "initialized %d %s environments on a %dx%d track",
            n,
            self.stage.value,
            self.track.layout.rows,
            self.track.layout.cols,
        )

    def update(self) -> None:
        self._check_initialized()
        self.prepare_time_step(self.params.control_dt)
        self.do_time_step()
        self.finalize_time_step()

    def update_until(self, time: float) -> None:
        self._check_initialized()
        while self.time + 0.5 * self.params.control_dt < time:
            self.update()

    def finalize(self) -> None:
        if self._state == State.INITIALIZED:
            self._execute_function(self._finalize)
            self._state = State.UNINITIALIZED
        else:
            raise SimulationError("The simulator is not initialized yet")

    def _finalize(self) -> None:
        self.logger.info("finalized after %d control steps", self.steps)

    # ===========================
    # vectorized environment
    # ===========================
    def reset(self) -> Observation:
        """Start new episodes everywhere and return the first observation."""
        self._check_initialized()
        self.reset_envs(np.arange(self.num_envs))
        self._refresh_observation()
        return self.observation

    def step(self, actions: ArrayLike) -> Tuple[Observation, FloatArray, NDArray[np.bool_]]:
        """Apply one batch of actions; returns observation, rewards and dones."""
        self.set_value("action", np.asarray(actions, dtype=np.float64))
        self.update()
        return self.observation, self.reward.copy(), self.done.copy()

    def metrics(self) -> Dict[str, float]:
        """Means since the previous call: reward terms, episode length, curriculum row."""
        self._check_initialized()
        out = {
            f"reward_{name}": value / max(self._metric_steps, 1)
            for name, value in self._metric_sums.items()
        }
        finished = bool(self._finished_lengths)
        out["episode_length"] = float(np.mean(self._finished_lengths)) if finished else math.nan
        out["success_rate"] = float(np.mean(self._finished_success)) if finished else math.nan
        out["curriculum_row"] = float(np.mean(self.curriculum.row))
        self._metric_sums = {}
        self._metric_steps = 0
        self._finished_lengths = []
        self._finished_success = []
        return out

    @property
    def metric_names(self) -> List[str]:
        return [f"reward_{name}" for name in (*TERM_NAMES, "total")]

    def reset_envs(self, envs: ArrayLike) -> None:
        self._check_initialized()
        idx = np.asarray(envs, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            return
        if self._fixed_track is not None:
            yaw = np.zeros(idx.size)
        else:
            yaw = np.array([math.pi - 2.0 * math.pi * self.rngs[k].random() for k in idx])
        xy = np.array([self._spawn_xy(int(k)) for k in idx])
        fresh = initial_state(self.track.field, xy, yaw, self.params)
        self.state.assign(idx, fresh)
        self.prev_state.assign(idx, fresh)
        self._new_episode(idx)

    def _spawn_xy(self, env: int) -> Tuple[float, float]:
        return self.track.spawn_point(int(self.curriculum.row[env]), int(self.curriculum.col[env]))

    def _new_episode(self, idx: NDArray[np.int64]) -> None:
        for k in idx:
            self.base_command[k] = sample_commands(self.rngs[k], 1, self.stage)[0]
            self.proprio_buffers[k].clear()
        rows = self.curriculum.row[idx]
        cols = self.curriculum.col[idx]
        self.track_start[idx] = [self.track.cell_origin(int(r), int(c))[0] for r, c in zip(rows, cols)]
        self.stats.reset(idx)
        self.action[idx] = 0.0
        self.last_action[idx] = 0.0
        self.resets[idx] = True

    @property
    def goal_length(self) -> float:
        if self._fixed_track is not None:
            return self.track.layout.track_length
        if self.stage is Stage.PARKOUR:
            return self.track.layout.subtrack_length
        return math.inf

    # ===========================
    # control step phases
    # ===========================
    def prepare_time_step(self, dt: float) -> None:
        self._check_initialized()
        self._execute_function(self._prepare_time_step, dt)

    def _prepare_time_step(self, dt: float) -> None:
        if not math.isclose(dt, self.params.control_dt):
            raise InputError(f"control step must be {self.params.control_dt} s, got {dt}")
        if self.stage is Stage.PARKOUR:
            self.command[:] = auto_command(
                0.0, self.state.base_rpy[:, 2], self.base_command, self.config.commands.alpha_yaw
            )
        else:
            self.command[:] = self.base_command

    def do_time_step(self) -> None:
        self._check_initialized()
        self._execute_function(self._do_time_step, items=self.num_envs)

    def _do_time_step(self) -> None:
        self.prev_state = self.state
        self.state = step(
            self.state,
            self.action,
            self.track.field,
            self.dr,
            params=self.params,
            joints=self.joints,
        )

    def finalize_time_step(self) -> None:
        self._check_initialized()
        self._execute_function(self._finalize_time_step)

    def _finalize_time_step(self) -> None:
        n = self.num_envs
        xs, ys = self.state.base_pos[:, 0], self.state.base_pos[:, 1]
        obstacles = [self.track.obstacles_at(float(x), float(y)) for x, y in zip(xs, ys)]
        targets = [self.track.targets_at(float(x), float(y)) for x, y in zip(xs, ys)]
        terms = compute_reward_terms(
            self.state,
            self.prev_state,
            self.action,
            self.last_action,
            self.command,
            self.joints,
            obstacles,
            targets,
            dt=self.params.control_dt,
            contact_threshold=self.config.rewards.contact_threshold,
            params=self.params,
        )
        breakdown = total_reward(terms, self.weights)
        self.last_breakdown = breakdown
        self.reward = breakdown.total.copy()
        for name, value in breakdown.means().items():
            self._metric_sums[name] = self._metric_sums.get(name, 0.0) + value
        self._metric_steps += 1

        self.stats = check_termination(
            self.state, self.track.field, self.stats, self.track_start, self.goal_length, self.params
        )
        self.timeout = self.stats.steps >= self.max_steps
        self.done = self.stats.done | self.timeout
        self.last_action = self.action.copy()
        self.resets = np.zeros(n, dtype=bool)
        self.time += self.params.control_dt
        self.steps += 1

        finished = np.flatnonzero(self.done)
        if finished.size:
            self._finished_lengths.extend(int(s) for s in self.stats.steps[finished])
            self._finished_success.extend(bool(s) for s in self.stats.success[finished])
            if self.use_curriculum:
                self.curriculum = curriculum_update(
                    self.curriculum,
                    self.stats,
                    self.track.layout.subtrack_length,
                    forward_command=self.base_command[:, 0],
                    envs=finished,
                    resample_at_max=self.config.commands.resample_at_max,
                    rng=self.rngs[int(finished[0])],
                )
            if self.auto_reset:
                self.reset_envs(finished)
        self._refresh_observation()

    # ===========================
    # observations
    # ===========================
    def body_velocity(self) -> FloatArray:
        rot = rotation_matrices(self.state.base_rpy)
        return np.einsum("nji,nj->ni", rot, self.state.base_linvel)  # type: ignore[no-any-return]

    def scandots(self) -> FloatArray:
        values = sample_scandots_batch(
            self.track.field, self.state.base_pos, self.state.base_rpy[:, 2], self.scandot_layout
        )
        return values.reshape(self.num_envs, -1)

    def pose(self, env: int) -> BasePose:
        return self.state.pose(env)

    def _refresh_observation(self) -> None:
        fresh = proprioception(self.state)
        delayed = np.empty_like(fresh)
        for k, buffer in enumerate(self.proprio_buffers):
            buffer.push(self.time, fresh[k])
            delayed[k] = buffer.read(self.time)
        self.proprio = delayed
        self.observation = Observation(
            proprio=delayed[None],
            last_action=self.last_action[None].copy(),
            command=self._observed_command()[None],
            resets=self.resets[None].copy(),
            scandots=self.scandots()[None],
            velocity=self.body_velocity()[None],
        )

    def _observed_command(self) -> FloatArray:
        if self.stage is Stage.PARKOUR:
            return auto_command(  # type: ignore[no-any-return]
                0.0, self.state.base_rpy[:, 2], self.base_command, self.config.commands.alpha_yaw
            )
        return self.base_command.copy()

    # ===========================
    # BMI variables
    # ===========================
    def _variables(self) -> Dict[str, _Variable]:
        return {
            "action": _Variable(lambda: self.action, ENV_GRID, "1", settable=True),
            "command": _Variable(lambda: self.base_command, ENV_GRID, "m s-1", settable=True),
            "base_position": _Variable(lambda: self.state.base_pos, ENV_GRID, "m", settable=True),
            "base_rpy": _Variable(lambda: self.state.base_rpy, ENV_GRID, "rad"),
            "base_velocity": _Variable(self.body_velocity, ENV_GRID, "m s-1"),
            "proprio": _Variable(lambda: self.proprio, ENV_GRID, "1"),
            "scandots": _Variable(self.scandots, ENV_GRID, "m"),
            "reward": _Variable(lambda: self.reward, ENV_GRID, "1"),
            "done": _Variable(lambda: self.done, ENV_GRID, "1"),
            "episode_distance": _Variable(lambda: self.stats.distance, ENV_GRID, "m"),
            "curriculum_row": _Variable(lambda: self.curriculum.row, ENV_GRID, "1"),
            "terrain_height": _Variable(lambda: self.track.field.heights, TERRAIN_GRID, "m"),
        }

    def _variable(self, name: str) -> _Variable:
        self._check_initialized()
        try:
            return self._variables()[name]
        except KeyError:
            raise InputError(f"Unknown variable {name!r}") from None

    def get_component_name(self) -> str:
        return "parkourpy surrogate humanoid"

    def get_version(self) -> str:
        import parkourpy

        return parkourpy.__version__

    def get_input_item_count(self) -> int:
        return len(self.get_input_var_names())

    def get_output_item_count(self) -> int:
        return len(self.get_output_var_names())

    def get_input_var_names(self) -> Tuple[str, ...]:
        return tuple(name for name, var in self._variables().items() if var.settable)

    def get_output_var_names(self) -> Tuple[str, ...]:
        return tuple(name for name, var in self._variables().items() if not var.settable)

    def get_var_grid(self, name: str) -> int:
        return self._variable(name).grid

    def get_var_type(self, name: str) -> str:
        return str(self._variable(name).getter().dtype)

    # strictly speaking not BMI...
    def get_var_shape(self, name: str) -> NDArray[np.int32]:
        return np.array(self._variable(name).getter().shape, dtype=np.int32)

    def get_var_rank(self, name: str) -> int:
        return int(self._variable(name).getter().ndim)

    def get_var_units(self, name: str) -> str:
        return self._variable(name).units

    def get_var_itemsize(self, name: str) -> int:
        return int(self._variable(name).getter().itemsize)

    def get_var_nbytes(self, name: str) -> int:
        return int(self._variable(name).getter().nbytes)

    def get_var_location(self, name: str) -> str:
        self._variable(name)
        return "node"

    def get_current_time(self) -> float:
        return self.time

    def get_start_time(self) -> float:
        return 0.0

    def get_end_time(self) -> float:
        return math.inf

    def get_time_units(self) -> str:
        return "s"

    def get_time_step(self) -> float:
        return self.config.dynamics.sim_dt * self.config.dynamics.decimation

    def get_value(self, name: str, dest: Optional[NDArray[Any]] = None) -> NDArray[Any]:
        src = self._variable(name).getter()
        if dest is None:
            return src.copy()
        if not dest.flags["C"]:
            raise InputError("Array should have C layout")
        if dest.size != src.size:
            raise InputError(f"{name}: destination holds {dest.size} values, need {src.size}")
        dest.reshape(-1)[:] = src.reshape(-1)
        return dest

    def get_value_ptr(self, name: str) -> NDArray[Any]:
        """Reference to the internal array; state arrays are replaced every step."""
        return self._variable(name).getter()

    def get_value_at_indices(
        self, name: str, dest: NDArray[Any], inds: NDArray[np.int32]
    ) -> NDArray[Any]:
        src = self._variable(name).getter().reshape(-1)
        dest[:] = src[np.asarray(inds)]
        return dest

    def set_value(self, name: str, values: NDArray[Any]) -> None:
        var = self._variable(name)
        if not var.settable:
            raise InputError(f"{name} is an output variable")
        if not values.flags["C"]:
            raise InputError("Array should have C layout")
        target = var.getter()
        if values.size != target.size:
            raise InputError(f"{name}: got {values.size} values, need {target.size}")
        if name == "base_position":
            self._teleport(values.reshape(target.shape))
        else:
            target.reshape(-1)[:] = values.reshape(-1)

    def set_value_at_indices(
        self, name: str, inds: NDArray[Any], src: NDArray[Any]
    ) -> None:
        var = self._variable(name)
        if not var.settable:
            raise InputError(f"{name} is an output variable")
        flat = var.getter().copy().reshape(-1)
        flat[np.asarray(inds)] = src
        self.set_value(name, flat.reshape(var.getter().shape))

    def _teleport(self, positions: FloatArray) -> None:
        """Move robots, feet included, and leave them level and at rest."""
        shift = positions - self.state.base_pos
        rpy = self.state.base_rpy.copy()
        rpy[:, :2] = 0.0
        self.state.base_rpy = rpy
        self.state.base_linvel = np.zeros_like(self.state.base_linvel)
        self.state.base_angvel = np.zeros_like(self.state.base_angvel)
        self.state.qd = np.zeros_like(self.state.qd)
        self.state.base_pos = positions.astype(np.float64).copy()
        self.state.foot_pos = self.state.foot_pos + shift[:, None, :]

    # ===========================
    # grids: terrain (0) and environment points (1)
    # ===========================
    def _check_grid(self, grid: int) -> None:
        self._check_initialized()
        if grid not in (TERRAIN_GRID, ENV_GRID):
            raise InputError(f"Unknown grid {grid}")

    def get_grid_rank(self, grid: int) -> int:
        self._check_grid(grid)
        return 2 if grid == TERRAIN_GRID else 3

    def get_grid_size(self, grid: int) -> int:
        self._check_grid(grid)
        return int(self.track.field.heights.size) if grid == TERRAIN_GRID else self.num_envs

    def get_grid_type(self, grid: int) -> str:
        self._check_grid(grid)
        return "uniform_rectilinear" if grid == TERRAIN_GRID else "points"

    def get_grid_shape(self, grid: int, shape: NDArray[np.int32]) -> NDArray[np.int32]:
        self._check_grid(grid)
        if grid != TERRAIN_GRID:
            raise InputError("only the terrain grid is structured")
        shape[:] = self.track.field.heights.shape
        return shape

    def get_grid_spacing(self, grid: int, spacing: NDArray[np.float64]) -> NDArray[np.float64]:
        self._check_grid(grid)
        if grid != TERRAIN_GRID:
            raise InputError("only the terrain grid is structured")
        spacing[:] = self.track.field.cell_size
        return spacing

    def get_grid_origin(self, grid: int, origin: NDArray[np.float64]) -> NDArray[np.float64]:
        self._check_grid(grid)
        if grid != TERRAIN_GRID:
            raise InputError("only the terrain grid is structured")
        origin[:] = self.track.field.origin
        return origin

    def get_grid_x(self, grid: int, x: NDArray[np.float64]) -> NDArray[np.float64]:
        self._check_grid(grid)
        if grid == TERRAIN_GRID:
            f = self.track.field
            x[:] = f.origin[0] + f.cell_size * np.arange(f.length)
        else:
            x[:] = self.state.base_pos[:, 0]
        return x

    def get_grid_y(self, grid: int, y: NDArray[np.float64]) -> NDArray[np.float64]:
        self._check_grid(grid)
        if grid == TERRAIN_GRID:
            f = self.track.field
            y[:] = f.origin[1] + f.cell_size * np.arange(f.width)
        else:
            y[:] = self.state.base_pos[:, 1]
        return y

    def get_grid_z(self, grid: int, z: NDArray[np.float64]) -> NDArray[np.float64]:
        self._check_grid(grid)
        if grid == TERRAIN_GRID:
            raise InputError("terrain heights are the terrain_height variable")
        z[:] = self.state.base_pos[:, 2]
        return z

    def get_grid_node_count(self, grid: int) -> int:
        return self.get_grid_size(grid)

    def get_grid_edge_count(self, grid: int) -> int:
        raise NotImplementedError

    def get_grid_face_count(self, grid: int) -> int:
        raise NotImplementedError

    def get_grid_edge_nodes(self, grid: int, edge_nodes: NDArray[np.int32]) -> NDArray[np.int32]:
        raise NotImplementedError

    def get_grid_face_edges(self, grid: int, face_edges: NDArray[np.int32]) -> NDArray[np.int32]:
        raise NotImplementedError

    def get_grid_face_nodes(self, grid: int, face_nodes: NDArray[np.int32]) -> NDArray[np.int32]:
        raise NotImplementedError

    def get_grid_nodes_per_face(
        self, grid: int, nodes_per_face: NDArray[np.int32]
    ) -> NDArray[np.int32]:
        raise NotImplementedError

    def terrain_height(self, x: ArrayLike, y: ArrayLike) -> FloatArray:
        self._check_initialized()
        return height_at(self.track.field, x, y)

    def _check_initialized(self) -> None:
        if self._state != State.INITIALIZED:
            raise SimulationError("The simulator is not initialized yet")

    def _execute_function(
        self, function: Callable[..., Any], *args: Any, items: int = 0
    ) -> None:
        """
        Utility function to execute a kernel phase with timing and debug logging
        """

        if self.timing:
            self.timer.start(function.__name__)

        try:
            result = function(*args)

            if self.logger.isEnabledFor(logging.DEBUG):
                self.logger.debug(
                    "execute function: %s returned %s",
                    repr_function_call(function.__name__, *args),
                    result,
                )
        except (ArithmeticError, ValueError, IndexError) as err:
            msg = "kernel exception in " + repr_function_call(function.__name__, *args)
            raise SimulationError(f"{msg}: {err}") from err

        finally:
            if self.timing:
                self.timer.stop(function.__name__, items)
