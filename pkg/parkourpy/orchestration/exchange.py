"""Versioned policy snapshots shared through a directory.

Every publication writes ``policy_<version>.pkp`` and then rewrites the
``LATEST`` pointer, each with an atomic rename, so a reader sees either the
previous or the new version but never a partial file.
"""

__all__ = ["SnapshotExchange"]

import logging
import time
from pathlib import Path
from typing import List, Optional, Union

from parkourpy.errors import DataCorruptionError, InputError
from parkourpy.neural.layers import Module
from parkourpy.neural.snapshot import Snapshot, parse_snapshot, snapshot_bytes
from parkourpy.utils import atomic_write_bytes

logger = logging.getLogger(__name__)

LATEST = "LATEST"


class SnapshotExchange:
    """Publisher and reader side of the policy exchange.

    Parameters
    ----------
    directory : str or Path
        Exchange subdirectory holding the snapshots; created if missing.
    keep : int, optional
        Number of most recent snapshot files retained, default 3.
    """

    def __init__(self, directory: Union[str, Path], keep: int = 3) -> None:
        if keep < 1:
            raise InputError(f"keep must be positive, got {keep}")
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.keep = keep
        self._seen = -1

    def path_for(self, version: int) -> Path:
        return self.directory / f"policy_{version:08d}.pkp"

    def latest_version(self) -> Optional[int]:
        """Version named by the pointer, None before the first publication."""
        try:
            text = (self.directory / LATEST).read_text().strip()
        except FileNotFoundError:
            return None
        try:
            return int(text)
        except ValueError:
            raise DataCorruptionError(f"{self.directory / LATEST} holds {text!r}") from None

    def publish(self, module: Module, version: Optional[int] = None) -> int:
        """Publish the module's parameters; versions must strictly increase."""
        latest = self.latest_version()
        if version is None:
            version = 0 if latest is None else latest + 1
        if latest is not None and version <= latest:
            raise InputError(f"snapshot version {version} does not exceed published {latest}")
        atomic_write_bytes(self.path_for(version), snapshot_bytes(module.state_dict(), version))
        atomic_write_bytes(self.directory / LATEST, f"{version}\n".encode())
        self._prune()
        logger.info("published policy version %d", version)
        return version

    def read_latest(self) -> Optional[Snapshot]:
        """The newest snapshot, or None if nothing newer than the last one read.

        Raises
        ------
        DataCorruptionError
            If the pointer or the snapshot it names cannot be read.
        """
        version = self.latest_version()
        if version is None or version <= self._seen:
            return None
        try:
            snapshot = parse_snapshot(self.path_for(version).read_bytes())
        except FileNotFoundError:
            raise DataCorruptionError(f"snapshot {version} vanished before it was read") from None
        if snapshot.version != version:
            raise DataCorruptionError(
                f"{self.path_for(version).name} carries version {snapshot.version}"
            )
        self._seen = version
        return snapshot

    def wait_latest(self, attempts: int, backoff: float) -> Snapshot:
        """Read the newest snapshot, retrying with exponential backoff.

        Raises
        ------
        DataCorruptionError
            If no readable snapshot appears within ``attempts`` tries.
        """
        delay = backoff
        last_error: Optional[Exception] = None
        for attempt in range(1, attempts + 1):
            try:
                snapshot = self.read_latest()
                if snapshot is not None:
                    return snapshot
            except (DataCorruptionError, OSError) as err:
                last_error = err
                logger.warning("snapshot read failed (attempt %d of %d): %s", attempt, attempts, err)
            if attempt < attempts:
                time.sleep(delay)
                delay *= 2.0
        raise DataCorruptionError(f"no readable policy snapshot in {self.directory}: {last_error}")

    @property
    def seen_version(self) -> int:
        return self._seen

    def versions(self) -> List[int]:
        return sorted(int(p.stem.split("_")[1]) for p in self.directory.glob("policy_*.pkp"))

    def _prune(self) -> None:
        for version in self.versions()[: -self.keep]:
            self.path_for(version).unlink(missing_ok=True)
