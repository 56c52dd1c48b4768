from parkourpy.timers.timer import Timer
from parkourpy.timers.timers import Timers

__all__ = ["Timer", "Timers"]
