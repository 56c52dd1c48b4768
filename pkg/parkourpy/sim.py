from abc import abstractmethod

from bmipy import Bmi
from numpy.typing import ArrayLike


class Sim(Bmi):
    """
    This class extends the CSDMS Basic Model Interface for batched robot
    simulation

    The extension to the BMI is twofold:

    - the control step is split into its prepare, integrate and finalize
      phases, so a caller can inject commands or read intermediate state
      between them

    - the model holds a batch of independent environments that share the
      time stepping but reset individually

    Since it only extends the BMI, simulators implementing this interface
    are compatible with BMI

    """

    @abstractmethod
    def prepare_time_step(self, dt: float) -> None:
        """Prepare a single control step.

        Validate the action targets set through ``set_value("action", ...)``
        and compute the commands in force for this step.

        Parameters
        ----------
        dt : float
            Control step length in seconds.
        """
        ...

    @abstractmethod
    def do_time_step(self) -> None:
        """Integrate the dynamics of every environment over the control step."""
        ...

    @abstractmethod
    def finalize_time_step(self) -> None:
        """Finalize the control step.

        Evaluate rewards and termination, advance the curriculum, reset the
        finished environments and refresh the observations.
        """
        ...

    @abstractmethod
    def get_env_count(self) -> int:
        """Get the number of environments in the batch.

        Returns
        -------
        int
          The number of environments.
        """
        ...

    @abstractmethod
    def reset_envs(self, envs: ArrayLike) -> None:
        """Start new episodes in the given environments.

        Parameters
        ----------
        envs : array_like of int
            Environment indices.
        """
        ...

    @abstractmethod
    def get_version(self) -> str:
        """Get the version of the simulator."""
        ...

    @abstractmethod
    def report_timing_totals(self) -> float:
        """Logs and returns total time spent

        Returns
        -------
        float
            Total time spent

        Raises
        ------
        TimerError
            Raised if timing is not activated
        """
        ...
