from parkourpy.orchestration.deploy import DeploymentScheduler, VisionPipeline, arm_override
from parkourpy.orchestration.distill import (
    Collector,
    ExchangeLayout,
    Trainer,
    collector_loop,
    install_teacher,
    run_distributed,
    run_single,
    trainer_loop,
)
from parkourpy.orchestration.evaluate import (
    FallingAgent,
    PolicyAgent,
    TeleportAgent,
    TerrainResult,
    evaluate,
    format_table,
)
from parkourpy.orchestration.exchange import SnapshotExchange
from parkourpy.orchestration.trajectory import read_trajectory, write_trajectory

__all__ = [
    "Collector",
    "DeploymentScheduler",
    "ExchangeLayout",
    "FallingAgent",
    "PolicyAgent",
    "SnapshotExchange",
    "TeleportAgent",
    "TerrainResult",
    "Trainer",
    "VisionPipeline",
    "arm_override",
    "collector_loop",
    "evaluate",
    "format_table",
    "install_teacher",
    "read_trajectory",
    "run_distributed",
    "run_single",
    "trainer_loop",
    "write_trajectory",
]
