"""Definition of Timer

Based on https://pypi.org/project/codetiming/.
"""

import logging
import math
import time
from typing import Dict, Optional

from parkourpy.errors import TimerError
from parkourpy.timers.timers import Timers

logger = logging.getLogger(__name__)


class Timer:
    """Time named sections of a run and count the items they process.

    ``text`` is formatted with ``name``, ``fn_name``, ``seconds``,
    ``milliseconds`` and ``items`` when a section stops.
    """

    def __init__(self, name: str, text: str):
        self.name = name
        self.timers = Timers()
        self._start_time: Dict[str, float] = {}
        self.text = text
        self.last = math.nan

    def start(self, fn_name: str) -> None:
        if fn_name in self._start_time:
            raise TimerError(
                f"Timer for {fn_name} is already running. Use .stop() to stop it"
            )

        self._start_time[fn_name] = time.perf_counter()

    def stop(self, fn_name: str, items: int = 0) -> float:
        """Stop the section timer, record ``items`` processed, return seconds"""
        if fn_name not in self._start_time:
            raise TimerError(
                f"Timer for {fn_name} is not running yet. Use .start() to start it"
            )

        self.last = time.perf_counter() - self._start_time.pop(fn_name)

        attributes = {
            "name": self.name,
            "fn_name": fn_name,
            "milliseconds": self.last * 1000,
            "seconds": self.last,
            "items": items,
        }
        logger.debug(self.text.format(**attributes))
        self.timers.add(fn_name, self.last, items)

        return self.last

    def rate(self, fn_name: str) -> float:
        return self.timers.rate(fn_name)

    def report_totals(self, unit: Optional[str] = None) -> float:
        """Log totals per section, slowest last, and return the grand total.

        With ``unit`` (e.g. ``"rays"``), the throughput of each section that
        counted items is logged too.
        """
        totals = {fn_name: self.timers.total(fn_name) for fn_name in self.timers}

        total = 0.0
        for fn_name, seconds in sorted(totals.items(), key=lambda item: item[1]):
            message = f"Total elapsed time for {self.name}.{fn_name}: {seconds:0.4f} seconds"
            items = self.timers.items_processed(fn_name)
            if unit and items:
                message += f" ({self.timers.rate(fn_name):0.1f} {unit}/s)"
            logger.info(message)
            total += seconds
        return total
