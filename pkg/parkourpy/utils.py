import errno
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Generator, Iterator, Union

import numpy as np
from numpy.typing import NDArray


@contextmanager
def cd(newdir: Path) -> Generator[None, None, None]:
    prevdir = Path().cwd()
    os.chdir(newdir)
    try:
        yield
    finally:
        os.chdir(prevdir)


def repr_function_call(function: str, *args: Any) -> str:
    """Return a descriptive kernel call for debug logging.

    Parameters
    ----------
    function : str
        Name of function.
    *args : tuple
        Zero or more arguments. Arrays are summarized by dtype and shape,
        dataclass-like records by their class name.
    """

    def format_arg(arg: Any) -> str:
        if isinstance(arg, np.ndarray):
            shape = "x".join(str(n) for n in arg.shape) or "scalar"
            return f"ndarray<{arg.dtype.str}_{shape}>"
        elif isinstance(arg, (np.floating, np.integer)):
            return repr(arg.item())
        elif hasattr(arg, "__dataclass_fields__"):
            return f"{arg.__class__.__name__}(...)"
        else:
            return repr(arg)

    items = [format_arg(arg) for arg in args]
    return f"{function}({', '.join(items)})"


def wrap_to_pi(angle: Union[float, NDArray[np.float64]]) -> Any:
    """Wrap angles to the half-open interval (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(angle, dtype=np.float64), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def env_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Random stream of one environment, derived from (global seed, env index).

    Distinct ``stream`` values give independent generators for the same
    environment, one per purpose such as randomization or spawn yaw.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index), int(stream)]))


def atomic_write_bytes(path: Union[str, Path], payload: bytes) -> Path:
    """Write ``payload`` to ``path`` so readers never observe a partial file.

    The bytes go to a temporary sibling named ``.<name>.tmp-*`` which is
    renamed over the destination once flushed. On disk-full the temporary
    file is removed before the error propagates.
    """
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except OSError as err:
        Path(tmp_name).unlink(missing_ok=True)
        if err.errno == errno.ENOSPC:
            raise OSError(errno.ENOSPC, f"disk full while writing {path}") from err
        raise
    return path


def iter_temp_files(directory: Union[str, Path]) -> Iterator[Path]:
    """Temporary files left behind by interrupted atomic writes."""
    yield from Path(directory).glob(".*.tmp-*")
