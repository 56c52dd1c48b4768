import sys

import pytest

from parkourpy.commands import Stage
from parkourpy.config import RunConfig
from parkourpy.errors import ConfigurationError
from parkourpy.terrain import ObstacleKind

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def test_defaults():
    config = RunConfig.from_dict({}, environ={})
    assert config == RunConfig()
    assert config.seed == 0
    assert config.rewards.contact_threshold == 400.0
    assert config.dynamics.episode_length_s == 20.0
    assert config.perception.scandot_layout().lateral == 11
    assert config.commands.stage_enum() is Stage.PLANE
    assert config.terrain.obstacle_kinds() == tuple(ObstacleKind)


def test_sections_build_components(small_config):
    assert small_config.seed == 7
    assert small_config.policy.actor_mlp == (16, 8)
    layout = small_config.terrain.training_layout()
    assert (layout.rows, layout.cols) == (2, 2)
    assert small_config.dynamics.params().decimation == 4
    weights = small_config.rewards.weights()
    assert weights.footstep == small_config.rewards.footstep


def test_unknown_section_and_key():
    with pytest.raises(ConfigurationError, match="unknown configuration sections: bogus"):
        RunConfig.from_dict({"bogus": {}}, environ={})
    with pytest.raises(ConfigurationError, match=r"\[ppo\] unknown keys: gama"):
        RunConfig.from_dict({"ppo": {"gama": 0.9}}, environ={})
    with pytest.raises(ConfigurationError, match=r"\[ppo\] must be a table"):
        RunConfig.from_dict({"ppo": 3}, environ={})


@pytest.mark.parametrize(
    "section,key,value,message",
    [
        ("ppo", "clip", "wide", "must be a number"),
        ("ppo", "epochs", 2.5, "must be an integer"),
        ("ppo", "epochs", True, "must be an integer"),
        ("dynamics", "randomize", 1, "must be true or false"),
        ("policy", "actor_mlp", 16, "must be an array"),
        ("train", "metrics_file", 3, "must be a string"),
    ],
)
def test_mistyped_values(section, key, value, message):
    with pytest.raises(ConfigurationError, match=message):
        RunConfig.from_dict({section: {key: value}}, environ={})


def test_integer_promoted_to_float():
    config = RunConfig.from_dict({"ppo": {"clip": 1}}, environ={})
    assert config.ppo.clip == 1.0
    assert isinstance(config.ppo.clip, float)


def test_bad_seed():
    with pytest.raises(ConfigurationError, match="nonnegative integer"):
        RunConfig.from_dict({"seed": -1}, environ={})


def test_bad_enums():
    config = RunConfig.from_dict(
        {"commands": {"stage": "swim"}, "terrain": {"kinds": ["lava"]}}, environ={}
    )
    with pytest.raises(ConfigurationError, match="commands.stage must be one of"):
        config.commands.stage_enum()
    with pytest.raises(ConfigurationError, match="terrain.kinds"):
        config.terrain.obstacle_kinds()


def test_environment_overrides(tmp_path):
    environ = {"PARKOUR_EXCHANGE_DIR": str(tmp_path), "PARKOUR_SEED": "42"}
    config = RunConfig.from_dict({"seed": 3}, environ=environ)
    assert config.seed == 42
    assert config.exchange_dir == tmp_path


def test_empty_environment_values_ignored():
    config = RunConfig.from_dict({"seed": 3}, environ={"PARKOUR_SEED": ""})
    assert config.seed == 3


@pytest.mark.parametrize("value,message", [("many", "must be an integer"), ("-2", "must be nonnegative")])
def test_bad_seed_override(value, message):
    with pytest.raises(ConfigurationError, match=message):
        RunConfig.from_dict({}, environ={"PARKOUR_SEED": value})


def test_from_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('seed = 5\n[commands]\nstage = "parkour"\n')
    config = RunConfig.from_file(path, environ={})
    assert config.seed == 5
    assert config.commands.stage_enum() is Stage.PARKOUR


def test_from_file_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        RunConfig.from_file(tmp_path / "missing.toml", environ={})
    broken = tmp_path / "broken.toml"
    broken.write_text("seed = = 1\n")
    with pytest.raises(ConfigurationError, match="broken.toml"):
        RunConfig.from_file(broken, environ={})


def test_to_toml_reproduces_config(small_config):
    text = small_config.to_toml()
    assert "[orchestration]" in text
    assert RunConfig.from_dict(tomllib.loads(text), environ={}) == small_config
