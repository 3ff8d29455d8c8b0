"""Edge traffic conditioners: markers and the delay-penalty shaper.

Each scheme exists twice: as a plain function over a small state record
(``token_bucket_mark``, ``tsw3cm_mark`` ...) and as a conditioner object the
simulator drives through four hooks:

``on_packet(pkt, now) -> delay``
    colors ``pkt`` in place and returns extra holding time before the
    packet enters the access link (0 for pure markers);
``on_feedback(signal, now)``
    ECN feedback aggregated over one reporting interval;
``on_epoch(measurement, now)``
    per-flow measurements tapped from the simulator;
``on_tcp_event(event, now)``
    TCP state changes from the sending endpoint.
"""

from __future__ import annotations

import enum
import logging
import math
import random
from dataclasses import dataclass
from typing import Sequence

from . import analytic
from .core import Packet, PacketColor

log = logging.getLogger(__name__)

GREEN, YELLOW, RED = PacketColor.GREEN, PacketColor.YELLOW, PacketColor.RED


# ---------------------------------------------------------------- signals


@dataclass(frozen=True)
class CongestionSignal:
    ecn_marked_count: int
    total_feedback: int
    at: float

    def __post_init__(self) -> None:
        if not 0 <= self.ecn_marked_count <= self.total_feedback:
            raise ValueError("need 0 <= ecn_marked_count <= total_feedback")

    @property
    def fraction(self) -> float:
        return self.ecn_marked_count / self.total_feedback if self.total_feedback else 0.0


class TcpStateEvent(enum.Enum):
    FLOW_START = "flow_start"
    RTO_FIRED = "rto_fired"
    TRIPLE_DUP_ACK = "triple_dup_ack"


@dataclass(frozen=True)
class FlowMeasurement:
    """What the simulator reports to a conditioner at the end of an epoch."""

    sent: int = 0
    lost: int = 0
    red_sent: int = 0
    red_lost: int = 0
    rtt: float | None = None
    rto: float | None = None
    # Loss events (first loss per RTT) seen so far in the flow's life.
    loss_events: int = 0

    # Drops can land in a later epoch than their sends; rates are capped at 1.
    @property
    def loss_rate(self) -> float:
        return min(1.0, self.lost / self.sent) if self.sent else float(self.lost > 0)

    @property
    def red_loss_rate(self) -> float:
        return min(1.0, self.red_lost / self.red_sent) if self.red_sent else float(self.red_lost > 0)


# ---------------------------------------------------------------- token buckets


@dataclass
class TokenBucketState:
    rate: float  # bits/s
    depth: float  # bytes
    tokens: float | None = None
    last_update: float = 0.0

    def __post_init__(self) -> None:
        if self.rate < 0 or self.depth < 0:
            raise ValueError("token bucket rate and depth must be >= 0")
        if self.tokens is None:
            self.tokens = float(self.depth)

    def refill(self, now: float) -> None:
        if now < self.last_update:
            raise ValueError(f"time went backwards: {now} < {self.last_update}")
        self.tokens = min(self.depth, self.tokens + self.rate / 8.0 * (now - self.last_update))
        self.last_update = now


def token_bucket_mark(state: TokenBucketState, pkt: Packet, now: float) -> PacketColor:
    state.refill(now)
    if state.tokens >= pkt.size:
        state.tokens -= pkt.size
        return GREEN
    return RED


def trtcm_mark(cir_bucket: TokenBucketState, pir_bucket: TokenBucketState,
               pkt: Packet, now: float) -> PacketColor:
    """Color-blind two-rate three-color marking (RFC 2698 order)."""
    if pir_bucket.rate < cir_bucket.rate:
        raise ValueError("PIR must be >= CIR")
    cir_bucket.refill(now)
    pir_bucket.refill(now)
    if pir_bucket.tokens < pkt.size:
        return RED
    pir_bucket.tokens -= pkt.size
    if cir_bucket.tokens < pkt.size:
        return YELLOW
    cir_bucket.tokens -= pkt.size
    return GREEN


# ---------------------------------------------------------------- time sliding window


@dataclass
class TswState:
    window: float
    avg_rate: float = 0.0
    last_arrival: float = 0.0

    def __post_init__(self) -> None:
        if self.window <= 0:
            raise ValueError("TSW window must be positive")


def tsw_update(state: TswState, pkt_size: int, now: float) -> float:
    if now < state.last_arrival:
        raise ValueError(f"time went backwards: {now} < {state.last_arrival}")
    bits_in_window = state.avg_rate * state.window + 8.0 * pkt_size
    state.avg_rate = bits_in_window / (state.window + now - state.last_arrival)
    state.last_arrival = now
    return state.avg_rate


def three_color_probabilities(avg: float, cir: float, pir: float) -> tuple[float, float, float]:
    """(green, yellow, red) marking probabilities for a TSW rate estimate."""
    if pir < cir:
        raise ValueError("PIR must be >= CIR")
    if avg <= cir:
        probs = (1.0, 0.0, 0.0)
    elif avg <= pir:
        yellow = (avg - cir) / avg
        probs = (1.0 - yellow, yellow, 0.0)
    else:
        red = (avg - pir) / avg
        yellow = (pir - cir) / avg
        probs = (cir / avg, yellow, red)
    _assert_distribution(probs)
    return probs


def _assert_distribution(probs: Sequence[float]) -> None:
    assert all(-1e-12 <= p <= 1 + 1e-12 for p in probs), probs
    assert abs(math.fsum(probs) - 1.0) < 1e-9, probs


def _draw(probs: tuple[float, float, float], rng: random.Random) -> PacketColor:
    u = rng.random()
    green, yellow, _ = probs
    if u < green:
        return GREEN
    if u < green + yellow:
        return YELLOW
    return RED


def tsw3cm_mark(state: TswState, cir: float, pir: float, pkt: Packet, now: float,
                rng: random.Random) -> PacketColor:
    avg = tsw_update(state, pkt.size, now)
    return _draw(three_color_probabilities(avg, cir, pir), rng)


@dataclass
class MemoryState:
    tsw: TswState
    history: float | None = None
    gain: float = 0.1
    w_min: float = 0.5
    w_max: float = 2.0


def memory_probabilities(avg: float, history: float, cir: float, pir: float,
                         w_min: float = 0.5, w_max: float = 2.0) -> tuple[float, float, float]:
    """TSW3CM probabilities with the out-of-profile mass scaled by history/avg."""
    green, yellow, red = three_color_probabilities(avg, cir, pir)
    w = min(w_max, max(w_min, history / avg)) if avg > 0 else 1.0
    if w == 1.0:
        return green, yellow, red
    red = min(1.0, w * red)
    yellow = min(1.0 - red, w * yellow)
    probs = (max(0.0, 1.0 - red - yellow), yellow, red)
    _assert_distribution(probs)
    return probs


def memory_mark(state: MemoryState, cir: float, pir: float, pkt: Packet, now: float,
                rng: random.Random) -> PacketColor:
    avg = tsw_update(state.tsw, pkt.size, now)
    if state.history is None:
        state.history = avg
    probs = memory_probabilities(avg, state.history, cir, pir, state.w_min, state.w_max)
    state.history += state.gain * (avg - state.history)
    return _draw(probs, rng)


# ---------------------------------------------------------------- adaptive target


@dataclass
class AdaptiveTargetState:
    m: float
    r_as: float
    peak_rate: float
    measured_rate: float = 0.0
    epsilon: float = math.inf
    epoch: float = 1.0
    gain: float = 0.25

    def __post_init__(self) -> None:
        if not 0 <= self.m <= self.peak_rate:
            raise ValueError("need 0 <= m <= peak_rate")


def yeom_state(b: float, m: float, epsilon: float, r_as: float) -> int:
    """Which of the three adaptive-marking regimes a flow is in.

    1: b <= 3m/4 + eps < r_as   (in-profile losses, shrink m)
    2: 3m/4 + eps < b < r_as    (below target, grow m)
    3: r_as <= b                (target met, shrink m)

    The printed predicates leave b < r_as <= 3m/4 + eps uncovered; that
    region is treated as regime 2 since the flow is under target and shows
    no sign of an oversubscribed network.
    """
    model = 0.75 * m + epsilon
    if r_as <= b:
        return 3
    if b <= model < r_as:
        return 1
    return 2


def yeom_adapt(state: AdaptiveTargetState, now: float | None = None) -> float:
    b, m, eps = state.measured_rate, state.m, state.epsilon
    regime = yeom_state(b, m, eps, state.r_as)
    if regime == 1:
        m = min(m, 4.0 / 3.0 * max(0.0, b - eps))
    elif regime == 2:
        m = m + state.gain * (state.r_as - b)
    else:
        m = m - state.gain * (b - state.r_as)
    state.m = min(state.peak_rate, max(0.0, m))
    return state.m


# ---------------------------------------------------------------- ECN-driven targets


@dataclass
class ParkChoiAdjuster:
    """Common scale factor on all marking targets, driven by the ECN-marked fraction."""

    base_targets: list[float]
    bottleneck: float
    beta: float = 0.5
    f_lo: float = 0.02
    f_hi: float = 0.10
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if self.bottleneck <= 0:
            raise ValueError("bottleneck must be positive")
        self.gamma = min(self.gamma, self._gamma_cap())

    def _gamma_cap(self) -> float:
        total = math.fsum(self.base_targets)
        return self.bottleneck / total if total > 0 else math.inf

    @property
    def targets(self) -> list[float]:
        return [self.gamma * r for r in self.base_targets]

    def adjust(self, signal: CongestionSignal) -> list[float]:
        if signal.total_feedback == 0:
            return self.targets
        f = signal.fraction
        if f > self.f_hi:
            self.gamma *= 1.0 - self.beta * f
        elif f < self.f_lo:
            self.gamma *= 1.0 + self.beta * (self.f_lo - f)
        self.gamma = max(0.0, min(self.gamma, self._gamma_cap()))
        return self.targets


def park_choi_adjust(states: Sequence[AdaptiveTargetState], signal: CongestionSignal,
                     bottleneck: float, adjuster: ParkChoiAdjuster | None = None) -> list[float]:
    """Functional form: rescale ``states[i].m`` from their contracted rates."""
    if adjuster is None:
        adjuster = ParkChoiAdjuster([s.r_as for s in states], bottleneck)
    targets = adjuster.adjust(signal)
    for s, t in zip(states, targets):
        s.m = t
    return targets


# ---------------------------------------------------------------- delay penalty


@dataclass
class PenaltyState:
    increase_step: float = 0.010
    decrease_slope: float = 0.002  # seconds of penalty removed per second
    penalty: float = 0.0
    congested: bool = False
    last_update: float = 0.0
    last_release: float = 0.0

    def decay(self, now: float) -> None:
        dt = now - self.last_update
        if dt < 0:
            raise ValueError(f"time went backwards: {now} < {self.last_update}")
        self.penalty = max(0.0, self.penalty - self.decrease_slope * dt)
        self.last_update = now


def penalty_feedback(state: PenaltyState, signal: CongestionSignal, measured_rate: float,
                     target: float) -> float:
    """Additive increase when congestion is reported and the flow runs above target."""
    state.decay(signal.at)
    state.congested = signal.ecn_marked_count > 0
    if state.congested and measured_rate > target:
        state.penalty += state.increase_step
    return state.penalty


def penalty_shape(state: PenaltyState, now: float) -> float:
    """Holding time for a packet arriving at ``now``; never reorders."""
    state.decay(now)
    release = max(now + state.penalty, state.last_release)
    state.last_release = release
    return release - now


# ---------------------------------------------------------------- conditioner objects


class Conditioner:
    """Base conditioner: everything Red, no delay (plain best effort)."""

    kind = "none"
    #: Seconds between ``on_epoch`` calls; None disables them.
    epoch: float | None = None
    #: ECN-capable transport for green / red packets of this flow.
    ecn_green = False
    ecn_red = False
    #: The edge consumes ECN echoes instead of passing them to the host.
    consumes_ecn = False

    def on_packet(self, pkt: Packet, now: float) -> float:
        pkt.set_color(RED)
        return 0.0

    def on_feedback(self, signal: CongestionSignal, now: float) -> None:
        pass

    def on_epoch(self, measurement: FlowMeasurement, now: float) -> None:
        pass

    def on_tcp_event(self, event: TcpStateEvent, now: float) -> None:
        pass

    def marking_rate(self) -> float:
        return 0.0


class TokenBucketMarker(Conditioner):
    kind = "token_bucket"

    def __init__(self, rate: float, depth: float):
        self.bucket = TokenBucketState(rate, depth)

    def on_packet(self, pkt, now):
        pkt.set_color(token_bucket_mark(self.bucket, pkt, now))
        return 0.0

    def set_rate(self, rate: float, now: float) -> None:
        self.bucket.refill(now)
        self.bucket.rate = rate

    def marking_rate(self):
        return self.bucket.rate


class TrtcmMarker(Conditioner):
    kind = "trtcm"

    def __init__(self, cir: float, pir: float, cbs: float, pbs: float):
        self.cir_bucket = TokenBucketState(cir, cbs)
        self.pir_bucket = TokenBucketState(pir, pbs)

    def on_packet(self, pkt, now):
        pkt.set_color(trtcm_mark(self.cir_bucket, self.pir_bucket, pkt, now))
        return 0.0

    def marking_rate(self):
        return self.cir_bucket.rate


class Tsw3cmMarker(Conditioner):
    kind = "tsw3cm"

    def __init__(self, cir: float, pir: float, window: float, rng: random.Random):
        self.cir, self.pir = cir, pir
        self.tsw = TswState(window)
        self.rng = rng

    def on_packet(self, pkt, now):
        pkt.set_color(tsw3cm_mark(self.tsw, self.cir, self.pir, pkt, now, self.rng))
        return 0.0

    def marking_rate(self):
        return self.cir


class MemoryMarker(Conditioner):
    kind = "memory"

    def __init__(self, cir: float, pir: float, window: float, rng: random.Random,
                 gain: float = 0.1, w_min: float = 0.5, w_max: float = 2.0):
        self.cir, self.pir = cir, pir
        self.state = MemoryState(TswState(window), gain=gain, w_min=w_min, w_max=w_max)
        self.rng = rng

    def on_packet(self, pkt, now):
        pkt.set_color(memory_mark(self.state, self.cir, self.pir, pkt, now, self.rng))
        return 0.0

    def marking_rate(self):
        return self.cir


class YeomMarker(TokenBucketMarker):
    """Token bucket whose rate follows the three-regime adaptive rule once per epoch."""

    kind = "yeom"

    def __init__(self, target: float, peak: float, depth: float, packet_size: int,
                 window: float = 1.0, gain: float = 0.25, epoch: float = 1.0):
        super().__init__(target, depth)
        self.state = AdaptiveTargetState(m=target, r_as=target, peak_rate=peak,
                                         epoch=epoch, gain=gain)
        self.packet_size = packet_size
        self.tsw = TswState(window)
        self.epoch = epoch
        self._lost = self._sent = 0.0
        self._rtt: float | None = None
        self.history: list[tuple[float, int, float]] = []

    def on_packet(self, pkt, now):
        tsw_update(self.tsw, pkt.size, now)
        return super().on_packet(pkt, now)

    def on_epoch(self, measurement, now):
        s = self.state
        # Decay the estimate to ``now`` without adding a packet.
        elapsed = now - self.tsw.last_arrival
        s.measured_rate = self.tsw.avg_rate * self.tsw.window / (self.tsw.window + elapsed)
        # Loss and RTT are smoothed over the estimator window, like b.
        keep = math.exp(-s.epoch / self.tsw.window)
        self._lost = keep * self._lost + measurement.lost
        self._sent = keep * self._sent + measurement.sent
        if measurement.rtt:
            self._rtt = measurement.rtt if self._rtt is None else keep * self._rtt + (1 - keep) * measurement.rtt
        if self._lost > 0 and self._sent > 0 and self._rtt:
            p = min(1.0, self._lost / self._sent)
            s.epsilon = analytic.yeom_epsilon(self.packet_size, self._rtt, p)
        else:
            s.epsilon = math.inf
        regime = yeom_state(s.measured_rate, s.m, s.epsilon, s.r_as)
        self.set_rate(yeom_adapt(s, now), now)
        self.history.append((now, regime, s.m))


class EquationMarker(Conditioner):
    """Marks a fraction of packets Red so out-of-profile loss tracks the model optimum.

    Until a first usable epoch (and whenever the model inversion fails) the
    flow is conditioned by a plain token bucket at its target.
    """

    kind = "equation"

    def __init__(self, target: float, depth: float, packet_size: int, rng: random.Random,
                 wmax: float = 64, b_ack: int = 1, epoch: float = 1.0):
        self.target = target
        self.epoch = epoch
        self.packet_size = packet_size
        self.wmax, self.b_ack = wmax, b_ack
        self.rng = rng
        self.fallback = TokenBucketMarker(target, depth)
        self.fallback_count = 0
        self.p_star: float | None = None
        self.out_fraction: float | None = None

    def on_packet(self, pkt, now):
        if self.out_fraction is None:
            return self.fallback.on_packet(pkt, now)
        pkt.set_color(RED if self.rng.random() < self.out_fraction else GREEN)
        return 0.0

    def on_epoch(self, measurement, now):
        if measurement.loss_events == 0 or not measurement.rtt or not measurement.rto:
            return
        try:
            inv = analytic.invert_padhye(self.target, self.wmax, measurement.rtt,
                                         measurement.rto, self.packet_size, self.b_ack)
        except (analytic.TargetUnreachableError, ValueError) as exc:
            log.debug("equation marker fallback: %s", exc)
            self.fallback_count += 1
            self.out_fraction = None
            return
        self.p_star = inv.p
        p_net = measurement.red_loss_rate
        if p_net > 0:
            self.out_fraction = min(1.0, max(0.0, inv.p / p_net))
        else:
            self.out_fraction = inv.p

    def marking_rate(self):
        return self.target


class ParkChoiMarker(TokenBucketMarker):
    """Per-flow token bucket whose rate is set by a shared ParkChoiAdjuster."""

    kind = "park_choi"
    ecn_green = ecn_red = True

    def __init__(self, target: float, depth: float, adjuster: ParkChoiAdjuster, index: int):
        super().__init__(adjuster.targets[index], depth)
        self.adjuster = adjuster
        self.index = index

    def apply(self, now: float) -> None:
        self.set_rate(self.adjuster.targets[self.index], now)


class PenaltyShaper(TokenBucketMarker):
    """Token-bucket marking plus an AIMD delay penalty for opportunist flows."""

    kind = "penalty"
    ecn_green = True
    consumes_ecn = True

    def __init__(self, target: float, depth: float, window: float = 1.0,
                 increase_step: float = 0.010, decrease_slope: float = 0.002):
        super().__init__(target, depth)
        self.target = target
        self.tsw = TswState(window)
        self.penalty = PenaltyState(increase_step, decrease_slope)
        self.trace: list[tuple[float, float]] = []

    def on_packet(self, pkt, now):
        tsw_update(self.tsw, pkt.size, now)
        super().on_packet(pkt, now)
        return penalty_shape(self.penalty, now)

    def on_feedback(self, signal, now):
        before = self.penalty.penalty
        penalty_feedback(self.penalty, signal, self.tsw.avg_rate, self.target)
        if self.penalty.penalty != before:
            self.trace.append((now, self.penalty.penalty))


class MelliaMarker(TokenBucketMarker):
    """Token bucket that forces the next ``protect`` packets Green after TCP trouble."""

    kind = "mellia"

    def __init__(self, target: float, depth: float, protect: int = 8):
        super().__init__(target, depth)
        self.protect = protect
        self.budget = 0

    def on_tcp_event(self, event, now):
        self.budget = self.protect

    def on_packet(self, pkt, now):
        if self.budget > 0:
            self.budget -= 1
            self.bucket.refill(now)
            pkt.set_color(GREEN)
            return 0.0
        return super().on_packet(pkt, now)


def mellia_mark(marker: MelliaMarker, event_or_pkt: TcpStateEvent | Packet,
                now: float) -> PacketColor | None:
    if isinstance(event_or_pkt, TcpStateEvent):
        marker.on_tcp_event(event_or_pkt, now)
        return None
    marker.on_packet(event_or_pkt, now)
    return event_or_pkt.marked_color


KINDS = ("none", "token_bucket", "trtcm", "tsw3cm", "yeom", "memory", "equation",
         "park_choi", "penalty", "mellia")
