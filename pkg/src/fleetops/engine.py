"""Deterministic discrete-event loop.

Events execute in (time, sequence) order; the sequence number is assigned
at scheduling time, so two events at the same simulated instant run in
the order they were scheduled. Given identical inputs the loop processes
an identical event sequence, which is what the reproducibility guarantees
of the whole simulator rest on.
"""

from __future__ import annotations

from heapq import heappop, heappush


class SchedulingError(Exception):
    pass


class EventLoop:
    __slots__ = ("now", "_heap", "_seq", "processed")

    def __init__(self) -> None:
        self.now = 0.0
        self._heap: list[tuple[float, int, object, object]] = []
        self._seq = 0
        self.processed = 0

    def schedule(self, at: float, fn, arg=None) -> None:
        """Schedule fn(arg) at simulated time `at` (>= now)."""
        if at < self.now:
            raise SchedulingError(f"cannot schedule at {at} < now {self.now}")
        self._seq += 1
        heappush(self._heap, (at, self._seq, fn, arg))

    def run_until(self, t_end: float) -> None:
        """Process every event with time <= t_end, then set now = t_end."""
        heap = self._heap
        n = 0
        while heap and heap[0][0] <= t_end:
            t, _, fn, arg = heappop(heap)
            self.now = t
            fn(arg)
            n += 1
        self.processed += n
        if t_end > self.now:
            self.now = t_end

    def pending(self) -> int:
        return len(self._heap)
