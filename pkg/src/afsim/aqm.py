"""RED and the two-level RIO queue used at the bottleneck ingress."""

from __future__ import annotations

import enum
import random
from collections import deque
from dataclasses import dataclass, field

from .core import Packet, PacketColor


@dataclass(frozen=True)
class RedParams:
    min_th: float
    max_th: float
    max_p: float
    wq: float = 0.002

    def __post_init__(self) -> None:
        if not 0 <= self.min_th < self.max_th:
            raise ValueError(f"need 0 <= min_th < max_th, got {self.min_th}, {self.max_th}")
        if not 0 < self.max_p <= 1:
            raise ValueError(f"max_p must be in (0, 1], got {self.max_p}")
        if not 0 < self.wq < 1:
            raise ValueError(f"wq must be in (0, 1), got {self.wq}")


DEFAULT_IN = RedParams(40, 70, 0.02)
DEFAULT_OUT = RedParams(10, 30, 0.20)


def red_drop_prob(avg: float, params: RedParams) -> float:
    if avg < params.min_th:
        return 0.0
    if avg >= params.max_th:
        return 1.0
    return params.max_p * (avg - params.min_th) / (params.max_th - params.min_th)


class Decision(enum.Enum):
    ENQUEUE = "enqueue"
    DROP = "drop"
    ENQUEUE_ECN_MARKED = "enqueue_ecn_marked"


@dataclass
class RioState:
    """Dual-average RED queue.

    ``avg_in`` tracks in-profile occupancy and is updated on green arrivals;
    ``avg_total`` tracks the whole queue and is updated on every arrival.
    While the link is idle both averages decay as if packets of
    ``idle_tx_time`` seconds had been served.
    """

    in_params: RedParams = DEFAULT_IN
    out_params: RedParams = DEFAULT_OUT
    capacity: int = 100
    ecn: bool = False
    penalty_coupling: bool = False
    random_red_drop: float = 0.0
    idle_tx_time: float = 0.0012
    rng: random.Random = field(default_factory=lambda: random.Random(0))

    avg_in: float = 0.0
    avg_total: float = 0.0
    queue: deque = field(default_factory=deque)
    green_in_queue: int = 0
    idle_since: float | None = 0.0

    arrivals: int = 0
    departures: int = 0
    drop_count: dict = field(default_factory=lambda: {PacketColor.GREEN: 0, PacketColor.RED: 0})
    overflow_drops: int = 0
    ecn_mark_count: int = 0
    coupling_marks: int = 0

    def __post_init__(self) -> None:
        if self.out_params.min_th > self.in_params.min_th or self.out_params.max_th > self.in_params.max_th:
            raise ValueError("out-profile thresholds must not exceed in-profile thresholds")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0 <= self.random_red_drop <= 1:
            raise ValueError("random_red_drop must be in [0, 1]")

    def __len__(self) -> int:
        return len(self.queue)

    def _decay_idle(self, now: float) -> None:
        if self.idle_since is None:
            return
        m = (now - self.idle_since) / self.idle_tx_time
        if m > 0:
            self.avg_in *= (1.0 - self.in_params.wq) ** m
            self.avg_total *= (1.0 - self.out_params.wq) ** m
        # Still idle until pop(): a dropped arrival must not stop the decay.
        self.idle_since = now

    def pop(self, now: float) -> Packet:
        pkt = self.queue.popleft()
        self.idle_since = None
        if pkt.color is PacketColor.GREEN:
            self.green_in_queue -= 1
        self.departures += 1
        return pkt

    def link_idle(self, now: float) -> None:
        self.idle_since = now


def rio_enqueue(state: RioState, pkt: Packet, now: float) -> Decision:
    state.arrivals += 1
    state._decay_idle(now)
    green = pkt.color is PacketColor.GREEN
    if green:
        state.avg_in += state.in_params.wq * (state.green_in_queue - state.avg_in)
    state.avg_total += state.out_params.wq * (len(state.queue) - state.avg_total)

    if len(state.queue) >= state.capacity:
        state.overflow_drops += 1
        return _drop(state, pkt)

    if green:
        avg, params = state.avg_in, state.in_params
    else:
        avg, params = state.avg_total, state.out_params
        if state.random_red_drop and state.rng.random() < state.random_red_drop:
            return _drop(state, pkt)

    decision = Decision.ENQUEUE
    p = red_drop_prob(avg, params)
    if p > 0 and (p >= 1 or state.rng.random() < p):
        if state.ecn and pkt.ecn_capable and avg < params.max_th:
            pkt.ecn_marked = True
            state.ecn_mark_count += 1
            decision = Decision.ENQUEUE_ECN_MARKED
        else:
            return _drop(state, pkt)

    state.queue.append(pkt)
    if green:
        state.green_in_queue += 1
    return decision


def _drop(state: RioState, pkt: Packet) -> Decision:
    state.drop_count[pkt.color] += 1
    if state.penalty_coupling:
        penalty_ecn_couple(state, pkt)
    return Decision.DROP


def penalty_ecn_couple(state: RioState, dropped: Packet) -> int:
    """On an out-of-profile drop, ECN-mark every queued green ECN-capable packet."""
    if dropped.color is not PacketColor.RED or not state.green_in_queue:
        return 0
    marked = 0
    for pkt in state.queue:
        if pkt.color is PacketColor.GREEN and pkt.ecn_capable and not pkt.ecn_marked:
            pkt.ecn_marked = True
            marked += 1
    state.coupling_marks += marked
    state.ecn_mark_count += marked
    return marked
