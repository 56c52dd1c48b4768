"""Training checkpoints.

A checkpoint is a zip archive holding a ``manifest.json`` and one member per
component: policy and value snapshots in the binary snapshot format,
optimizer moments and the curriculum state as ``.npz`` arrays.
"""

__all__ = ["Checkpoint", "load_checkpoint", "save_checkpoint"]

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from numpy.typing import NDArray

from parkourpy.commands import CurriculumState
from parkourpy.errors import DataCorruptionError
from parkourpy.neural.layers import Module
from parkourpy.neural.optim import Adam
from parkourpy.neural.snapshot import Snapshot, parse_snapshot, snapshot_bytes
from parkourpy.utils import atomic_write_bytes

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "parkourpy-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    policy: Snapshot
    value: Optional[Snapshot]
    optimizer: Dict[str, NDArray[np.float64]]
    curriculum: Optional[CurriculumState]
    manifest: Dict[str, Any] = field(default_factory=dict)

    @property
    def iteration(self) -> int:
        return int(self.manifest.get("iteration", 0))

    @property
    def stage(self) -> str:
        return str(self.manifest.get("stage", ""))


def _npz_bytes(arrays: Dict[str, NDArray[Any]]) -> bytes:
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)  # type: ignore[arg-type]
    return buffer.getvalue()


def save_checkpoint(
    path: Union[str, Path],
    policy: Module,
    value_net: Optional[Module],
    optimizer: Optional[Adam],
    iteration: int,
    stage: str,
    curriculum: Optional[CurriculumState] = None,
) -> Path:
    """Write a checkpoint archive atomically and return its path."""
    members: Dict[str, bytes] = {"policy.pkp": snapshot_bytes(policy.state_dict(), iteration)}
    if value_net is not None:
        members["value.pkp"] = snapshot_bytes(value_net.state_dict(), iteration)
    if optimizer is not None:
        members["optimizer.npz"] = _npz_bytes(optimizer.state_dict())
    if curriculum is not None:
        members["curriculum.npz"] = _npz_bytes(
            {
                "row": curriculum.row,
                "col": curriculum.col,
                "rows": np.array([curriculum.rows]),
                "fractions": np.array([curriculum.promote_fraction, curriculum.demote_fraction]),
            }
        )
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "iteration": iteration,
        "policy_version": iteration,
        "stage": stage,
        "members": sorted(members),
    }
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_DEFLATED) as archive:
        archive.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        for name, payload in members.items():
            archive.writestr(name, payload)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    out = atomic_write_bytes(path, buffer.getvalue())
    logger.info("saved %s checkpoint at iteration %d to %s", stage, iteration, out)
    return out


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint archive.

    Raises
    ------
    DataCorruptionError
        If the archive is unreadable, its manifest is foreign or a listed
        member is missing or damaged.
    """
    try:
        with zipfile.ZipFile(path) as archive:
            manifest = json.loads(archive.read("manifest.json"))
            if manifest.get("format") != CHECKPOINT_FORMAT:
                raise DataCorruptionError(f"{path} is not a parkourpy checkpoint")
            listed = set(manifest.get("members", []))
            missing = listed - set(archive.namelist())
            if missing or "policy.pkp" not in listed:
                raise DataCorruptionError(f"{path} lacks members {sorted(missing or {'policy.pkp'})}")
            policy = parse_snapshot(archive.read("policy.pkp"))
            value = parse_snapshot(archive.read("value.pkp")) if "value.pkp" in listed else None
            optimizer: Dict[str, NDArray[np.float64]] = {}
            if "optimizer.npz" in listed:
                with np.load(io.BytesIO(archive.read("optimizer.npz"))) as data:
                    optimizer = {key: data[key] for key in data.files}
            curriculum = None
            if "curriculum.npz" in listed:
                with np.load(io.BytesIO(archive.read("curriculum.npz"))) as data:
                    promote, demote = data["fractions"]
                    curriculum = CurriculumState(
                        data["row"], data["col"], int(data["rows"][0]), float(promote), float(demote)
                    )
    except (zipfile.BadZipFile, KeyError, ValueError) as err:
        raise DataCorruptionError(f"{path}: damaged checkpoint ({err})") from None
    return Checkpoint(policy, value, optimizer, curriculum, manifest)
