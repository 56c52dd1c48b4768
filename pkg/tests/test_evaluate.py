import csv

import numpy as np
import pytest

from parkourpy import ParkourSim
from parkourpy.neural.policy import OraclePolicy, StudentPolicy
from parkourpy.neural.snapshot import load_snapshot, save_snapshot
from parkourpy.orchestration.evaluate import (
    DISTANCE_HEADER,
    SUCCESS_HEADER,
    FallingAgent,
    PolicyAgent,
    TeleportAgent,
    TerrainResult,
    evaluate,
    format_table,
    policy_from_snapshot,
    write_results_csv,
)
from parkourpy.terrain import ObstacleKind


def test_teleport_baseline_clears_every_subtrack(small_config):
    kinds = [ObstacleKind.JUMP_UP, ObstacleKind.LEAP]
    results = evaluate(TeleportAgent(), small_config, episodes=2, kinds=kinds)
    assert [r.terrain for r in results] == ["jump_up", "leap"]
    for result in results:
        assert result.episodes == 2
        assert result.success_rate == 100.0
        assert result.average_distance == pytest.approx(3 * 4.8)


def test_falling_baseline_never_succeeds(small_config):
    results = evaluate(FallingAgent(), small_config, episodes=2, kinds=[ObstacleKind.SLOPE])
    assert results[0].success_rate == 0.0
    assert results[0].average_distance < 1.0


def test_fewer_subtracks_shorten_the_track(small_config):
    results = evaluate(TeleportAgent(), small_config, episodes=1, kinds=[ObstacleKind.JUMP_DOWN], subtracks=1)
    assert results[0].average_distance == pytest.approx(4.8)


def test_student_agent_refreshes_embedding_at_vision_rate(small_config, policies):
    sim = ParkourSim(small_config, num_envs=2)
    sim.initialize()
    try:
        agent = PolicyAgent(policies.student, small_config, vision_every=5)
        agent.reset(sim)
        embeddings = []
        for _ in range(6):
            action = agent.act(sim)
            assert action.shape == (2, policies.dims.action)
            assert np.all(np.isfinite(action))
            embeddings.append(agent.embedding.copy())
            sim.step(action)
    finally:
        sim.finalize()
    assert all(np.array_equal(e, embeddings[0]) for e in embeddings[1:5])
    assert agent.ticks == 6


def test_student_agent_waits_out_depth_latency(small_config, policies):
    sim = ParkourSim(small_config, num_envs=2)
    sim.initialize()
    try:
        sim.dr.depth_latency[:] = 0.15
        agent = PolicyAgent(policies.student, small_config, vision_every=5)
        agent.reset(sim)
        embeddings = []
        for _ in range(14):
            action = agent.act(sim)
            embeddings.append(agent.embedding.copy())
            sim.step(action)
    finally:
        sim.finalize()
    # the frame rendered at 0.10 s becomes usable at 0.25 s
    assert all(np.array_equal(e, embeddings[0]) for e in embeddings[1:13])
    assert not np.array_equal(embeddings[13], embeddings[0])


def test_policy_from_snapshot(policies, tmp_path):
    oracle = policy_from_snapshot(load_snapshot(save_snapshot(tmp_path / "o.pkp", policies.oracle, 0)), policies.dims)
    student = policy_from_snapshot(load_snapshot(save_snapshot(tmp_path / "s.pkp", policies.student, 0)), policies.dims)
    assert isinstance(oracle, OraclePolicy)
    assert isinstance(student, StudentPolicy)


RESULTS = {
    "oracle": [TerrainResult("leap", 10, 90.0, 13.125), TerrainResult("hurdle", 10, 70.0, 11.5)],
    "falling": [TerrainResult("leap", 10, 0.0, 0.8)],
}


def test_format_table():
    table = format_table(RESULTS).splitlines()
    assert "leap" in table[0] and "hurdle" in table[0]
    assert table[1].startswith("Policy")
    assert table[1].count(SUCCESS_HEADER) == 2
    assert table[1].count(DISTANCE_HEADER) == 2
    assert set(table[2]) == {"-"}
    oracle = [cell.strip() for cell in table[3].split("|")]
    assert oracle == ["oracle", "90.0", "13.12", "70.0", "11.50"]
    falling = [cell.strip() for cell in table[4].split("|")]
    assert falling == ["falling", "0.0", "0.80", "-", "-"]
    assert format_table({}) == ""


def test_write_results_csv(tmp_path):
    path = write_results_csv(tmp_path / "eval.csv", RESULTS)
    with path.open(newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 3
    assert rows[0] == {
        "policy": "oracle",
        "terrain": "leap",
        "episodes": "10",
        "success_rate": "90.0",
        "average_distance": "13.125",
    }
    assert rows[2]["policy"] == "falling"
