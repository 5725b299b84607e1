"""Multiply-accumulate tallies for the dense ops.

Only convolutions, matrix multiplies, and selective-scan recurrences are
counted; normalizations, elementwise gates, and Fourier transforms are not.
The same convention backs the analytic cost model, so instrumented and
closed-form counts are directly comparable.
"""

from __future__ import annotations

import contextlib

_STACK: list[dict[str, int]] = []


@contextlib.contextmanager
def mac_tally():
    """Collect per-kind MAC counts for every counted op run inside the block."""
    tally: dict[str, int] = {}
    _STACK.append(tally)
    try:
        yield tally
    finally:
        _STACK.remove(tally)


def add(kind: str, macs: int) -> None:
    if _STACK:
        n = int(macs)
        for tally in _STACK:
            tally[kind] = tally.get(kind, 0) + n


def total(tally: dict[str, int]) -> int:
    return sum(tally.values())
