"""Dictionary-like structure with timings and processed item counts.
Based on https://pypi.org/project/codetiming/"""

import collections
import math
import statistics
from typing import TYPE_CHECKING, Any, Callable, Dict, List

# Annotate generic UserDict
if TYPE_CHECKING:
    UserDict = collections.UserDict[str, float]  # pragma: no cover
else:
    UserDict = collections.UserDict


class Timers(UserDict):
    """Total seconds per section, plus the items (rays, steps, transitions)
    each section processed"""

    def __init__(self, *args: Any, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self._timings: Dict[str, List[float]] = collections.defaultdict(list)
        self._items: Dict[str, int] = collections.defaultdict(int)

    def add(self, name: str, value: float, items: int = 0) -> None:
        """Add a timing value, and the number of items processed, to a section"""
        self._timings[name].append(value)
        self._items[name] += items
        self.data.setdefault(name, 0)
        self.data[name] += value

    def clear(self) -> None:
        self.data.clear()
        self._timings.clear()
        self._items.clear()

    def __setitem__(self, name: str, value: float) -> None:
        raise TypeError(
            f"{self.__class__.__name__!r} does not support item assignment. "
            "Use '.add()' to update values."
        )

    def apply(self, func: Callable[[List[float]], float], name: str) -> float:
        """Apply a function to the results of one named section"""
        if name in self._timings:
            return func(self._timings[name])
        raise KeyError(name)

    def count(self, name: str) -> float:
        return self.apply(len, name=name)

    def total(self, name: str) -> float:
        return self.apply(sum, name=name)

    def items_processed(self, name: str) -> int:
        if name in self._timings:
            return self._items[name]
        raise KeyError(name)

    def rate(self, name: str) -> float:
        """Items per second over all timings of a section"""
        total = self.total(name)
        return self.items_processed(name) / total if total > 0 else math.nan

    def mean(self, name: str) -> float:
        return self.apply(lambda values: statistics.mean(values or [0]), name=name)

    def median(self, name: str) -> float:
        return self.apply(lambda values: statistics.median(values or [0]), name=name)

    def stdev(self, name: str) -> float:
        if name in self._timings:
            value = self._timings[name]
            return statistics.stdev(value) if len(value) >= 2 else math.nan
        raise KeyError(name)
