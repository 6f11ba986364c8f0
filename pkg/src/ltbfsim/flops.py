"""Complex-operation tallies for kernel complexity measurements.

Counters are scoped with :func:`counting` and live in a context variable, so
every thread or worker process keeps its own tally and nothing is shared.
A unit is one complex multiply-add.
"""
from __future__ import annotations

import contextlib
import contextvars
from collections import Counter

_active: contextvars.ContextVar = contextvars.ContextVar("ltbfsim_flops",
                                                         default=None)


class FlopTally(Counter):
    """Counter of complex multiply-adds keyed by kernel label."""

    @property
    def total(self) -> int:
        return sum(self.values())


def add(n: int, label: str = "misc") -> None:
    tally = _active.get()
    if tally is not None:
        tally[label] += int(n)


@contextlib.contextmanager
def counting():
    """Collect flops issued inside the block.

    Nested blocks each receive the flops of their own scope, and those flops
    are also credited to the enclosing block on exit.
    """
    outer = _active.get()
    tally = FlopTally()
    token = _active.set(tally)
    try:
        yield tally
    finally:
        _active.reset(token)
        if outer is not None:
            outer.update(tally)


def current_total() -> int:
    """Total of the innermost active tally, 0 when not counting."""
    tally = _active.get()
    return 0 if tally is None else tally.total
