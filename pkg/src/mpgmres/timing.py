"""Scoped wall-clock attribution of kernel time inside a solve.

A solver activates a :class:`KernelTimer` for the duration of a run; the
dense and sparse kernels then bin their elapsed time into one of the named
categories. Anything not attributed to a kernel (small dense work, vector
updates, residual refreshes done outside the kernel layer) lands in
``Other`` when the breakdown is read, so the five categories always
partition the measured solve time.
"""

from __future__ import annotations

import threading
import time
from contextlib import contextmanager

SPMV = "SpMV"
GEMV_TRANS = "GemvTrans"
NORM = "Norm"
GEMV_NOTRANS = "GemvNoTrans"
OTHER = "Other"

KERNEL_CATEGORIES = (SPMV, GEMV_TRANS, NORM, GEMV_NOTRANS)
CATEGORIES = KERNEL_CATEGORIES + (OTHER,)

_state = threading.local()


class KernelTimer:
    """Accumulates total solve time plus per-kernel-category time."""

    def __init__(self) -> None:
        self.binned = dict.fromkeys(KERNEL_CATEGORIES, 0.0)
        self.total = 0.0
        self._t0: float | None = None

    def start(self) -> None:
        self._t0 = time.perf_counter()

    def stop(self) -> None:
        if self._t0 is not None:
            self.total += time.perf_counter() - self._t0
            self._t0 = None

    def add(self, category: str, seconds: float) -> None:
        self.binned[category] += seconds

    def breakdown(self) -> dict[str, float]:
        """Seconds per category; unattributed time goes to ``Other``."""
        out = dict(self.binned)
        out[OTHER] = max(self.total - sum(self.binned.values()), 0.0)
        return out


def _current() -> KernelTimer | None:
    return getattr(_state, "timer", None)


@contextmanager
def active(timer: KernelTimer | None):
    """Make ``timer`` the binning target (and run its total clock) in this block."""
    prev = _current()
    _state.timer = timer
    if timer is not None:
        timer.start()
    try:
        yield timer
    finally:
        if timer is not None:
            timer.stop()
        _state.timer = prev


@contextmanager
def suspended():
    """Temporarily stop binning kernel time; the total clock keeps running.

    Used for high-precision refinement work whose cost is reported under
    ``Other`` rather than under the kernel that happens to implement it.
    """
    prev = _current()
    _state.timer = None
    try:
        yield
    finally:
        _state.timer = prev


def tick() -> float | None:
    """Start of a kernel timing scope; returns None when no timer is active."""
    return time.perf_counter() if _current() is not None else None


def tock(category: str, t0: float | None) -> None:
    """End of a kernel timing scope opened by :func:`tick`."""
    timer = _current()
    if t0 is not None and timer is not None:
        timer.add(category, time.perf_counter() - t0)
