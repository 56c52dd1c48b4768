"""Run configuration.

One TOML file configures a whole run. Every table corresponds to a section
dataclass below; every key has a default, and unknown tables or keys are
rejected. Two environment variables override the file:

``PARKOUR_EXCHANGE_DIR``
    Root directory of the trainer/collector exchange.
``PARKOUR_SEED``
    Global seed.
"""

__all__ = [
    "CommandsConfig",
    "DistillConfig",
    "DynamicsConfig",
    "OrchestrationConfig",
    "PerceptionConfig",
    "RewardsConfig",
    "RunConfig",
    "TerrainConfig",
    "TrainConfig",
]

import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Type, TypeVar, Union

from parkourpy.commands import Stage
from parkourpy.dynamics import DynamicsParams
from parkourpy.errors import ConfigurationError
from parkourpy.learning.ppo import PpoConfig
from parkourpy.neural.policy import PolicyDims
from parkourpy.perception import DepthNoise, ScandotLayout
from parkourpy.rewards import RewardWeights
from parkourpy.terrain import ObstacleKind, TrackLayout

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

EXCHANGE_ENV = "PARKOUR_EXCHANGE_DIR"
SEED_ENV = "PARKOUR_SEED"

S = TypeVar("S")


@dataclass(frozen=True)
class TerrainConfig:
    rows: int = 10
    cols: int = 40
    kinds: Tuple[str, ...] = tuple(kind.value for kind in ObstacleKind)
    num_treads: int = 5
    cell_size: float = 0.05
    subtrack_length: float = 4.8
    start_plane_length: float = 1.6
    subtrack_width: float = 1.6
    trench_depth: float = 3.0
    noise_amplitude: float = 0.05
    noise_octaves: int = 3
    noise_wavelength: float = 0.4

    def obstacle_kinds(self) -> Tuple[ObstacleKind, ...]:
        try:
            return tuple(ObstacleKind(name) for name in self.kinds)
        except ValueError as err:
            raise ConfigurationError(f"terrain.kinds: {err}") from None

    def geometry(self) -> Dict[str, float]:
        return {
            "subtrack_length": self.subtrack_length,
            "start_plane_length": self.start_plane_length,
            "subtrack_width": self.subtrack_width,
        }

    def training_layout(self) -> TrackLayout:
        return TrackLayout.training_grid(
            self.rows, self.cols, self.obstacle_kinds(), self.num_treads, **self.geometry()
        )

    def plane_layout(self) -> TrackLayout:
        return TrackLayout.plane(self.rows, self.cols, **self.geometry())


@dataclass(frozen=True)
class PerceptionConfig:
    scandots_lateral: int = 11
    scandots_forward: int = 19
    near_clip: float = 0.2
    far_clip: float = 3.0
    render_resolution: Tuple[int, int] = (480, 640)
    policy_resolution: Tuple[int, int] = (48, 64)
    pixel_std: float = 0.02
    frame_std: float = 0.01
    max_artifacts: int = 4
    artifact_size: int = 8
    vision_hz: float = 10.0

    def scandot_layout(self) -> ScandotLayout:
        return ScandotLayout(lateral=self.scandots_lateral, forward=self.scandots_forward)

    def depth_noise(self) -> DepthNoise:
        return DepthNoise(self.pixel_std, self.frame_std, self.max_artifacts, self.artifact_size)


@dataclass(frozen=True)
class DynamicsConfig:
    sim_dt: float = 0.005
    decimation: int = 4
    action_scale: float = 0.25
    randomize: bool = True
    episode_length_s: float = 20.0

    def params(self) -> DynamicsParams:
        return DynamicsParams(
            sim_dt=self.sim_dt, decimation=self.decimation, action_scale=self.action_scale
        )


@dataclass(frozen=True)
class RewardsConfig:
    lin_vel: float = RewardWeights.lin_vel
    ang_vel: float = RewardWeights.ang_vel
    orientation: float = RewardWeights.orientation
    energy: float = RewardWeights.energy
    dof_vel: float = RewardWeights.dof_vel
    dof_acc: float = RewardWeights.dof_acc
    weighted_torques: float = RewardWeights.weighted_torques
    contact_forces: float = RewardWeights.contact_forces
    collision: float = RewardWeights.collision
    action_rate: float = RewardWeights.action_rate
    arm_dof: float = RewardWeights.arm_dof
    waist_dof: float = RewardWeights.waist_dof
    hip_yaw_dof: float = RewardWeights.hip_yaw_dof
    feet_away: float = RewardWeights.feet_away
    penetration: float = RewardWeights.penetration
    footstep: float = RewardWeights.footstep
    contact_threshold: float = 400.0

    def weights(self) -> RewardWeights:
        values = dataclasses.asdict(self)
        values.pop("contact_threshold")
        return RewardWeights(**values)


@dataclass(frozen=True)
class CommandsConfig:
    stage: str = Stage.PLANE.value
    alpha_yaw: float = 1.0
    promote_fraction: float = 0.75
    demote_fraction: float = 0.5
    resample_at_max: bool = False

    def stage_enum(self) -> Stage:
        try:
            return Stage(self.stage)
        except ValueError:
            raise ConfigurationError(f"commands.stage must be one of {[s.value for s in Stage]}") from None


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    checkpoint_every: int = 100
    metrics_file: str = "metrics.csv"
    checkpoint_dir: str = "checkpoints"


@dataclass(frozen=True)
class DistillConfig:
    lr: float = 1e-4
    num_envs: int = 8
    steps_per_file: int = 100
    init_from_teacher: bool = True
    train_estimator: bool = True
    max_grad_norm: float = 1.0
    publish_every: int = 50
    max_updates: int = 0
    teacher_snapshot: str = "oracle.pkp"


@dataclass(frozen=True)
class OrchestrationConfig:
    exchange_dir: str = "exchange"
    collectors: int = 3
    poll_interval: float = 0.1
    retry_attempts: int = 5
    retry_backoff: float = 0.2
    stall_timeout: float = 0.5
    run_seconds: float = 0.0
    log_file: str = ""


_SECTIONS: Dict[str, Type[Any]] = {
    "terrain": TerrainConfig,
    "perception": PerceptionConfig,
    "dynamics": DynamicsConfig,
    "rewards": RewardsConfig,
    "commands": CommandsConfig,
    "policy": PolicyDims,
    "ppo": PpoConfig,
    "train": TrainConfig,
    "distill": DistillConfig,
    "orchestration": OrchestrationConfig,
}


def _build_section(cls: Type[S], section: str, values: Mapping[str, Any]) -> S:
    fields = {f.name: f for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
    unknown = set(values) - set(fields)
    if unknown:
        raise ConfigurationError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    kwargs: Dict[str, Any] = {}
    for name, value in values.items():
        default = getattr(cls(), name)
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigurationError(f"[{section}] {name} must be an array")
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigurationError(f"[{section}] {name} must be true or false")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigurationError(f"[{section}] {name} must be a number")
            value = float(value)
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigurationError(f"[{section}] {name} must be an integer")
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigurationError(f"[{section}] {name} must be a string")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigurationError(f"[{section}] {err}") from None


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigurationError(f"cannot write {value!r} to TOML")


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a run, one section per component."""

    seed: int = 0
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    rewards: RewardsConfig = field(default_factory=RewardsConfig)
    commands: CommandsConfig = field(default_factory=CommandsConfig)
    policy: PolicyDims = field(default_factory=PolicyDims)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    orchestration: OrchestrationConfig = field(default_factory=OrchestrationConfig)

    @classmethod
    def from_dict(
        cls, data: Mapping[str, Any], environ: Optional[Mapping[str, str]] = None
    ) -> "RunConfig":
        """Build from parsed TOML, then apply the environment overrides.

        Raises
        ------
        ConfigurationError
            On an unknown table or key, a mistyped value or a malformed
            override.
        """
        unknown = set(data) - set(_SECTIONS) - {"seed"}
        if unknown:
            raise ConfigurationError(f"unknown configuration sections: {', '.join(sorted(unknown))}")
        kwargs: Dict[str, Any] = {}
        for name, section_cls in _SECTIONS.items():
            table = data.get(name, {})
            if not isinstance(table, dict):
                raise ConfigurationError(f"[{name}] must be a table")
            kwargs[name] = _build_section(section_cls, name, table)
        seed = data.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigurationError(f"seed must be a nonnegative integer, got {seed!r}")
        config = cls(seed=seed, **kwargs)
        return config.with_environment(os.environ if environ is None else environ)

    @classmethod
    def from_file(
        cls, path: Union[str, Path], environ: Optional[Mapping[str, str]] = None
    ) -> "RunConfig":
        try:
            with Path(path).open("rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigurationError(f"configuration file {path} not found") from None
        except tomllib.TOMLDecodeError as err:
            raise ConfigurationError(f"{path}: {err}") from None
        logger.debug("loaded configuration from %s", path)
        return cls.from_dict(data, environ)

    def with_environment(self, environ: Mapping[str, str]) -> "RunConfig":
        config = self
        if environ.get(EXCHANGE_ENV):
            orchestration = dataclasses.replace(self.orchestration, exchange_dir=environ[EXCHANGE_ENV])
            config = dataclasses.replace(config, orchestration=orchestration)
        if environ.get(SEED_ENV):
            try:
                seed = int(environ[SEED_ENV])
            except ValueError:
                raise ConfigurationError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}") from None
            if seed < 0:
                raise ConfigurationError(f"{SEED_ENV} must be nonnegative")
            config = dataclasses.replace(config, seed=seed)
        return config

    def to_toml(self) -> str:
        """A complete configuration file reproducing this config."""
        lines: List[str] = [f"seed = {self.seed}"]
        for name in _SECTIONS:
            lines.append("")
            lines.append(f"[{name}]")
            for key, value in dataclasses.asdict(getattr(self, name)).items():
                lines.append(f"{key} = {_toml_value(value)}")
        return "\n".join(lines) + "\n"

    @property
    def exchange_dir(self) -> Path:
        return Path(self.orchestration.exchange_dir)
