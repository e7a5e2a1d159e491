"""Token period, fair-delivery delay and request intervals.

All durations are seconds.  ``derive_params`` fixes the request interval at a
full round trip plus processing, ``tau_r = 2*delta_n + x + p``; with that
reading the delivery delay ``delta_n + k_r*tau_r`` is the same number as the
closed-form token period ``(1 + 2*k_r)*delta_n + k_r*(x + p)``.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass


@dataclass(frozen=True)
class TimingParams:
    delta_n: float
    k_r: int
    x: float
    p: float
    tau_r: float
    tau_t: float
    delta_a: float
    delta_a_override: bool = False

    def validate(self) -> None:
        for name in ("delta_n", "x", "p", "tau_r", "tau_t", "delta_a"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.k_r < 0:
            raise ValueError("k_r must be non-negative")
        # small slack: the fields are sums of floats
        eps = 1e-12 * max(1.0, self.tau_t, self.tau_r)
        if self.tau_r + eps < 2 * self.delta_n + self.x + self.p:
            raise ValueError("tau_r must cover a request round trip (2*delta_n + x + p)")
        if self.delta_a_override:
            # an explicit delay only has to outlast the network budget; zero
            # means release on commit, with no fairness guarantee
            if self.delta_a != 0 and self.delta_a + eps < self.delta_n:
                raise ValueError("delta_a must be at least delta_n")
            return
        if self.delta_a + eps < self.delta_n:
            raise ValueError("delta_a must be at least delta_n")
        if self.tau_t + eps < self.delta_a:
            raise ValueError("tau_t must be at least delta_a")

    def with_delta_a(self, delta_a: float) -> "TimingParams":
        return TimingParams(self.delta_n, self.k_r, self.x, self.p, self.tau_r,
                            self.tau_t, delta_a, delta_a_override=True)


def token_period(delta_n: float, k_r: int, x: float, p: float) -> float:
    if min(delta_n, x, p) < 0 or k_r < 0:
        raise ValueError("timing inputs must be non-negative")
    return (1 + 2 * k_r) * delta_n + k_r * (x + p)


def derive_params(delta_n: float, k_r: int, x: float, p: float) -> TimingParams:
    tau_t = token_period(delta_n, k_r, x, p)
    tau_r = 2 * delta_n + x + p
    return TimingParams(delta_n, k_r, x, p, tau_r=tau_r, tau_t=tau_t, delta_a=tau_t)


def remulticast_time(ack_timestamp: float, delta_a: float) -> float:
    return ack_timestamp + delta_a


def token_deadline(token_num: int, epoch: float, tau_t: float, delta_n: float) -> tuple[float, float]:
    """(scheduled, late_at) for token ``token_num`` of a ring started at ``epoch``."""
    if token_num < 1:
        raise ValueError("token numbers start at 1")
    scheduled = epoch + token_num * tau_t
    return scheduled, scheduled + delta_n


def give_up_time(scheduled: float, params: TimingParams) -> float:
    """When a receiver still missing token ``scheduled`` declares the system inoperable."""
    return scheduled + params.delta_n + params.k_r * params.tau_r


class ReleaseQueue:
    """Batches waiting for their simultaneous remulticast instant."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int]] = []

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, ack_timestamp: float, delta_a: float, token_num: int) -> float:
        at = remulticast_time(ack_timestamp, delta_a)
        heapq.heappush(self._heap, (at, token_num))
        return at

    def due(self, now: float) -> list[int]:
        out = []
        while self._heap and self._heap[0][0] <= now:
            out.append(heapq.heappop(self._heap)[1])
        return out
