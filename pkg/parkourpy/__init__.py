"""
Package for training and distilling a vision-based humanoid parkour policy.
It provides the abstract simulator interface `Sim`, as well as the batched
surrogate simulator `ParkourSim`
"""

# exports
from bmipy.bmi import Bmi

from parkourpy.sim import Sim
from parkourpy.simwrapper import ParkourSim

__all__ = ["Bmi", "ParkourSim", "Sim"]

__version__ = "0.1.0"
