"""Deterministic packet-level dumbbell simulator.

Topology: every flow has its own edge conditioner and access link
(FIFO serializer plus propagation delay) feeding one RIO queue in front of
the bottleneck link. The reverse path is uncongested: ACKs reach the
sender after the one-way propagation delay of bottleneck plus access link.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from . import conditioner as cond
from .aqm import Decision, RioState, rio_enqueue
from .conditioner import CongestionSignal, FlowMeasurement, TcpStateEvent
from .config import ScenarioConfig
from .core import FlowSpec, Packet, PacketColor, PacketKind, Transport, classify_provisioning

ACK_SIZE = 40
DELAYED_ACK_TIMEOUT = 0.1
MAX_RTO = 60.0


def child_rng(seed: int, label: str) -> random.Random:
    """Independent stream per component; string seeds hash deterministically."""
    return random.Random(f"{seed}:{label}")


class EventLoop:
    def __init__(self) -> None:
        self.now = 0.0
        self._heap: list[tuple[float, int, Callable, Any]] = []
        self._seq = 0
        self.processed = 0

    def at(self, t: float, fn: Callable, arg: Any = None) -> None:
        if t < self.now:
            raise ValueError(f"cannot schedule in the past: {t} < {self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn, arg))

    def run(self, until: float) -> None:
        heap = self._heap
        pop = heapq.heappop
        while heap and heap[0][0] <= until:
            t, _, fn, arg = pop(heap)
            self.now = t
            fn(arg)
            self.processed += 1
        self.now = until

    def pending(self, fn: Callable) -> int:
        return sum(1 for e in self._heap if e[2] == fn)


# ---------------------------------------------------------------- TCP Reno


SLOW_START, CONGESTION_AVOIDANCE, FAST_RECOVERY = "SlowStart", "CongestionAvoidance", "FastRecovery"


@dataclass
class TcpRenoState:
    cwnd: float = 1.0
    ssthresh: float = 1e9
    state: str = SLOW_START
    srtt: float | None = None
    rttvar: float = 0.0
    rto: float = 1.0
    dup_acks: int = 0
    snd_next: int = 0
    snd_una: int = 0
    snd_max: int = 0
    recover: int = 0
    timer: float | None = None


def tcp_rtt_sample(s: TcpRenoState, sample: float, rto_min: float) -> None:
    if s.srtt is None:
        s.srtt = sample
        s.rttvar = sample / 2.0
    else:
        s.rttvar += 0.25 * (abs(s.srtt - sample) - s.rttvar)
        s.srtt += 0.125 * (sample - s.srtt)
    s.rto = min(MAX_RTO, max(rto_min, s.srtt + 4.0 * s.rttvar))


def tcp_on_ack(s: TcpRenoState, ackno: int) -> str | None:
    """Window update for a cumulative ACK.

    Returns "retransmit" when the third duplicate triggers fast retransmit,
    else None. Plain Reno: any new ACK ends fast recovery.
    """
    if ackno > s.snd_una:
        newly = ackno - s.snd_una
        s.snd_una = ackno
        if s.snd_next < ackno:
            s.snd_next = ackno
        s.dup_acks = 0
        if s.state == FAST_RECOVERY:
            s.cwnd = s.ssthresh
            s.state = CONGESTION_AVOIDANCE
            return None
        for _ in range(newly):
            if s.cwnd < s.ssthresh:
                s.cwnd += 1.0
                s.state = SLOW_START if s.cwnd < s.ssthresh else CONGESTION_AVOIDANCE
            else:
                s.cwnd += 1.0 / s.cwnd
                s.state = CONGESTION_AVOIDANCE
        return None
    if ackno == s.snd_una and s.snd_max > s.snd_una:
        s.dup_acks += 1
        if s.state == FAST_RECOVERY:
            s.cwnd += 1.0
        elif s.dup_acks == 3 and s.snd_una >= s.recover:
            tcp_on_loss(s)
            return "retransmit"
    return None


def tcp_on_loss(s: TcpRenoState) -> None:
    """Triple duplicate ACK: halve, retransmit, enter fast recovery."""
    s.ssthresh = max(s.cwnd / 2.0, 2.0)
    s.cwnd = s.ssthresh + 3.0
    s.state = FAST_RECOVERY
    s.recover = s.snd_max


def tcp_on_rto(s: TcpRenoState) -> None:
    s.ssthresh = max(s.cwnd / 2.0, 2.0)
    s.cwnd = 1.0
    s.state = SLOW_START
    s.dup_acks = 0
    s.recover = s.snd_max
    s.snd_next = s.snd_una
    s.rto = min(MAX_RTO, 2.0 * s.rto)


class TcpSender:
    def __init__(self, sim: "Simulation", flow: "FlowRuntime", tcp_cfg: dict):
        self.sim, self.flow = sim, flow
        self.rwnd = tcp_cfg["rwnd"]
        self.rto_min = tcp_cfg["rto_min"]
        self.ecn_reaction = tcp_cfg["ecn_reaction"]
        self.s = TcpRenoState(rto=tcp_cfg["rto_init"])
        self.timer_event: float | None = None
        self.last_ecn_cut = -math.inf
        self.retransmits = 0
        self.timeouts = 0
        self.fast_retransmits = 0
        self.max_cwnd_trace: list[tuple[float, float]] = []

    def start(self, _=None) -> None:
        self.flow.conditioner_event(TcpStateEvent.FLOW_START)
        self.pump()

    def window(self) -> float:
        return min(self.s.cwnd, float(self.rwnd))

    def pump(self) -> None:
        s = self.s
        now = self.sim.loop.now
        limit = s.snd_una + int(self.window())
        while s.snd_next < limit:
            self.transmit(s.snd_next, now)
            s.snd_next += 1
            if s.snd_next > s.snd_max:
                s.snd_max = s.snd_next
        if s.snd_max > s.snd_una and s.timer is None:
            self.arm(now)

    def transmit(self, seq: int, now: float) -> None:
        retx = seq < self.s.snd_max
        if retx:
            self.retransmits += 1
        pkt = Packet(self.flow.spec.flow_id, seq, self.flow.spec.packet_size, sent_at=now,
                     retransmit=retx)
        self.sim.edge_send(self.flow, pkt)

    def arm(self, now: float) -> None:
        self.s.timer = now + self.s.rto
        if self.timer_event is None or self.timer_event > self.s.timer:
            self.timer_event = self.s.timer
            self.sim.loop.at(self.s.timer, self.on_timer)

    def on_timer(self, _=None) -> None:
        now = self.sim.loop.now
        if self.timer_event is not None and now < self.timer_event:
            return  # superseded by an earlier-scheduled check
        self.timer_event = None
        s = self.s
        if s.timer is None:
            return
        if now < s.timer:
            self.timer_event = s.timer
            self.sim.loop.at(s.timer, self.on_timer)
            return
        s.timer = None
        self.timeouts += 1
        self.flow.loss_events += 1
        tcp_on_rto(s)
        self.flow.conditioner_event(TcpStateEvent.RTO_FIRED)
        self.pump()

    def on_ack(self, ack: Packet) -> None:
        now = self.sim.loop.now
        s = self.s
        flow = self.flow
        flow.ack_count += 1
        if ack.ecn_marked:
            flow.ecn_echo_count += 1
            flow.window_counter(now)[6] += 1
        sample = now - ack.sent_at
        advanced = ack.seq > s.snd_una
        if advanced:
            tcp_rtt_sample(s, sample, self.rto_min)
            flow.rtt_sum += sample
            flow.rtt_n += 1
            w = flow.window_counter(now)
            w[7] += sample
            w[8] += 1
        before = s.cwnd
        action = tcp_on_ack(s, ack.seq)
        if action == "retransmit":
            self.fast_retransmits += 1
            flow.loss_events += 1
            self.max_cwnd_trace.append((now, before))
            flow.conditioner_event(TcpStateEvent.TRIPLE_DUP_ACK)
            self.transmit(s.snd_una, now)
            self.arm(now)
        elif (ack.ecn_marked and self.ecn_reaction and not flow.conditioner.consumes_ecn
              and s.state != FAST_RECOVERY and now - self.last_ecn_cut >= (s.srtt or 0.0)):
            self.last_ecn_cut = now
            s.ssthresh = max(s.cwnd / 2.0, 2.0)
            s.cwnd = s.ssthresh
            s.state = CONGESTION_AVOIDANCE
        if advanced:
            if s.snd_una >= s.snd_max:
                s.timer = None
            else:
                s.timer = now + s.rto
                if self.timer_event is None:
                    self.arm(now)
        self.pump()


class TcpReceiver:
    def __init__(self, delayed_ack: bool):
        self.next_expected = 0
        self.out_of_order: set[int] = set()
        self.delayed_ack = delayed_ack
        self.unacked = 0
        self.held_seq = -1

    def on_data(self, pkt: Packet) -> tuple[int, int]:
        """Returns (ack number or -1 for a held ACK, newly delivered in-order segments)."""
        seq = pkt.seq
        delivered = 0
        in_order = seq == self.next_expected
        if in_order:
            self.next_expected += 1
            delivered = 1
            while self.next_expected in self.out_of_order:
                self.out_of_order.discard(self.next_expected)
                self.next_expected += 1
                delivered += 1
        elif seq > self.next_expected:
            self.out_of_order.add(seq)
        if self.delayed_ack and in_order and delivered == 1 and not pkt.ecn_marked:
            self.unacked += 1
            if self.unacked < 2:
                self.held_seq = seq
                return -1, delivered
        self.unacked = 0
        return self.next_expected, delivered


class CbrSource:
    def __init__(self, sim: "Simulation", flow: "FlowRuntime"):
        self.sim, self.flow = sim, flow
        self.interval = flow.spec.packet_size * 8.0 / flow.spec.cbr_rate
        self.seq = 0

    def start(self, _=None) -> None:
        self.flow.conditioner_event(TcpStateEvent.FLOW_START)
        self.tick()

    def tick(self, _=None) -> None:
        now = self.sim.loop.now
        pkt = Packet(self.flow.spec.flow_id, self.seq, self.flow.spec.packet_size, sent_at=now)
        self.seq += 1
        self.sim.edge_send(self.flow, pkt)
        self.sim.loop.at(now + self.interval, self.tick)


# ---------------------------------------------------------------- per-flow runtime

# Window counter layout.
DELIVERED, GREEN_SENT, RED_SENT, YELLOW_SENT, GREEN_DROP, RED_DROP, ECN_FB, RTT_SUM, RTT_N = range(9)


class FlowRuntime:
    def __init__(self, sim: "Simulation", spec: FlowSpec, conditioner: cond.Conditioner):
        self.sim = sim
        self.spec = spec
        self.conditioner = conditioner
        self.access_free = 0.0
        self.access_tx = spec.packet_size * 8.0 / sim.cfg.access_rate
        self.one_way = spec.access_delay + sim.cfg.bottleneck_delay
        self.windows: dict[int, list[float]] = {}
        self.injected = 0
        self.sink_arrivals = 0
        self.delivered_bytes = 0
        self.dropped = 0
        self.loss_events = 0
        self.ack_count = 0
        self.ecn_echo_count = 0
        self.rtt_sum = 0.0
        self.rtt_n = 0
        self.color_sent = {PacketColor.GREEN: 0, PacketColor.YELLOW: 0, PacketColor.RED: 0}
        self.color_dropped = {PacketColor.GREEN: 0, PacketColor.RED: 0}
        # Snapshot of counters at the previous epoch / feedback tick.
        self._epoch_base = (0, 0, 0, 0, 0.0, 0)
        self._fb_base = (0, 0)
        if spec.transport is Transport.TCP_RENO:
            self.sender: TcpSender | CbrSource = TcpSender(sim, self, sim.cfg.tcp)
            self.receiver: TcpReceiver | None = TcpReceiver(sim.cfg.tcp["delayed_ack"])
        else:
            self.sender = CbrSource(sim, self)
            self.receiver = None

    def window_counter(self, t: float) -> list[float]:
        idx = int(t / self.sim.cfg.metrics_tick)
        w = self.windows.get(idx)
        if w is None:
            w = self.windows[idx] = [0] * 7 + [0.0, 0]
        return w

    def conditioner_event(self, event: TcpStateEvent) -> None:
        self.conditioner.on_tcp_event(event, self.sim.loop.now)

    def measurement(self) -> FlowMeasurement:
        red_sent = self.color_sent[PacketColor.RED] + self.color_sent[PacketColor.YELLOW]
        cur = (self.injected, self.dropped, red_sent, self.color_dropped[PacketColor.RED],
               self.rtt_sum, self.rtt_n)
        base = self._epoch_base
        self._epoch_base = cur
        n = cur[5] - base[5]
        rto = self.sender.s.rto if isinstance(self.sender, TcpSender) else None
        return FlowMeasurement(sent=cur[0] - base[0], lost=cur[1] - base[1],
                               red_sent=cur[2] - base[2], red_lost=cur[3] - base[3],
                               rtt=(cur[4] - base[4]) / n if n else None, rto=rto,
                               loss_events=self.loss_events)

    def feedback(self, now: float) -> CongestionSignal:
        cur = (self.ecn_echo_count, self.ack_count)
        base = self._fb_base
        self._fb_base = cur
        return CongestionSignal(cur[0] - base[0], cur[1] - base[1], now)


# ---------------------------------------------------------------- results


@dataclass(frozen=True)
class MetricsRecord:
    flow_id: int
    window_start: float
    window_end: float
    achieved_rate: float
    green_sent: int
    red_sent: int
    green_dropped: int
    red_dropped: int
    ecn_feedback: int
    rtt_sample_mean: float | None
    yellow_sent: int = 0


@dataclass
class FlowSummary:
    flow_id: int
    target: float
    achieved: float
    rtt_mean: float | None
    green_sent: int
    yellow_sent: int
    red_sent: int
    green_dropped: int
    red_dropped: int
    timeouts: int = 0
    fast_retransmits: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def attainment(self) -> float:
        return self.achieved / self.target if self.target > 0 else math.inf

    @property
    def excess(self) -> float:
        return max(0.0, self.achieved - self.target)

    @property
    def deficit(self) -> float:
        return max(0.0, self.target - self.achieved)

    @property
    def red_loss_rate(self) -> float:
        sent = self.red_sent + self.yellow_sent
        return self.red_dropped / sent if sent else 0.0


@dataclass
class RunResult:
    records: list[MetricsRecord]
    flows: list[FlowSummary]
    regime: str
    fairness: float
    counters: dict[str, int]
    events: int

    def flow(self, flow_id: int) -> FlowSummary:
        for f in self.flows:
            if f.flow_id == flow_id:
                return f
        raise KeyError(flow_id)


def jain_index(xs: list[float]) -> float:
    xs = [x for x in xs if math.isfinite(x)]
    if not xs:
        return math.nan
    sq = math.fsum(x * x for x in xs)
    return math.fsum(xs) ** 2 / (len(xs) * sq) if sq > 0 else 1.0


def excess_deficit(achieved: float, target: float) -> tuple[float, float]:
    return max(0.0, achieved - target), max(0.0, target - achieved)


# ---------------------------------------------------------------- simulation


class Simulation:
    def __init__(self, cfg: ScenarioConfig, seed: int | None = None):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.loop = EventLoop()
        self.link_tx_per_byte = 8.0 / cfg.bottleneck_rate
        mean_size = sum(f.packet_size for f in cfg.flows) / len(cfg.flows)
        self.rio = RioState(
            in_params=cfg.in_params, out_params=cfg.out_params, capacity=cfg.aqm["capacity"],
            ecn=cfg.aqm["ecn"], penalty_coupling=cfg.aqm["penalty_coupling"],
            random_red_drop=cfg.aqm["random_red_drop"],
            idle_tx_time=mean_size * self.link_tx_per_byte, rng=child_rng(self.seed, "aqm"))
        self.link_busy = False
        self.in_service: Packet | None = None
        self.departed = 0
        self.delivered = 0
        self.bottleneck_arrivals = 0
        self.park_choi: cond.ParkChoiAdjuster | None = None
        self.flows = [FlowRuntime(self, spec, c) for spec, c in zip(cfg.flows, self._build_conditioners())]

    # -- construction

    def _build_conditioners(self) -> list[cond.Conditioner]:
        cfg = self.cfg
        if cfg.aggregate:
            spec = cfg.flows[0]
            total = sum(f.target_rate for f in cfg.flows)
            peak = sum(f.peak_rate for f in cfg.flows)
            shared = self._make(cfg.conditioner, spec, total, peak, "aggregate", None)
            return [shared] * len(cfg.flows)
        pc_flows = [f for f in cfg.flows if cfg.conditioner_for(f.flow_id).kind == "park_choi"]
        if pc_flows:
            p = cfg.conditioner_for(pc_flows[0].flow_id).params
            self.park_choi = cond.ParkChoiAdjuster(
                [f.target_rate * p["target_scale"] for f in pc_flows], cfg.bottleneck_rate,
                beta=p["beta"], f_lo=p["f_lo"], f_hi=p["f_hi"])
        pc_index = {f.flow_id: i for i, f in enumerate(pc_flows)}
        return [self._make(cfg.conditioner_for(f.flow_id), f, f.target_rate, f.peak_rate,
                           f"cond:{f.flow_id}", pc_index.get(f.flow_id)) for f in cfg.flows]

    def _make(self, cc, spec: FlowSpec, target: float, peak: float, label: str,
              pc_index: int | None) -> cond.Conditioner:
        p = cc.params
        scale = p["target_scale"]
        rate, peak = target * scale, peak * scale
        depth = p["depth_packets"] * spec.packet_size
        rng = child_rng(self.seed, label)
        kind = cc.kind
        if kind == "none":
            return cond.Conditioner()
        if kind == "token_bucket":
            return cond.TokenBucketMarker(rate, depth)
        if kind == "trtcm":
            return cond.TrtcmMarker(rate, peak, depth, p["pbs_packets"] * spec.packet_size)
        if kind == "tsw3cm":
            return cond.Tsw3cmMarker(rate, peak, p["window"], rng)
        if kind == "memory":
            return cond.MemoryMarker(rate, peak, p["window"], rng, p["gain"], p["w_min"], p["w_max"])
        if kind == "yeom":
            return cond.YeomMarker(rate, peak, depth, spec.packet_size, p["window"], p["gain"], p["epoch"])
        if kind == "equation":
            wmax = p["wmax"] if p["wmax"] is not None else self.cfg.tcp["rwnd"]
            b = p["b_ack"] if p["b_ack"] is not None else (2 if self.cfg.tcp["delayed_ack"] else 1)
            return cond.EquationMarker(rate, depth, spec.packet_size, rng, wmax, b, p["epoch"])
        if kind == "park_choi":
            return cond.ParkChoiMarker(rate, depth, self.park_choi, pc_index)
        if kind == "penalty":
            return cond.PenaltyShaper(rate, depth, p["window"], p["increase_step"], p["decrease_slope"])
        if kind == "mellia":
            return cond.MelliaMarker(rate, depth, p["protect"])
        raise ValueError(f"unknown conditioner kind {kind!r}")

    # -- data path

    def edge_send(self, flow: FlowRuntime, pkt: Packet) -> None:
        now = self.loop.now
        c = flow.conditioner
        hold = c.on_packet(pkt, now)
        pkt.ecn_capable = c.ecn_green if pkt.color is PacketColor.GREEN else c.ecn_red
        flow.injected += 1
        flow.color_sent[pkt.marked_color] += 1
        w = flow.window_counter(now)
        if pkt.marked_color is PacketColor.GREEN:
            w[GREEN_SENT] += 1
        else:
            w[RED_SENT] += 1
            if pkt.marked_color is PacketColor.YELLOW:
                w[YELLOW_SENT] += 1
        start = max(now + hold, flow.access_free)
        flow.access_free = start + flow.access_tx
        self.loop.at(flow.access_free + flow.spec.access_delay, self.bottleneck_arrival, pkt)

    def bottleneck_arrival(self, pkt: Packet) -> None:
        now = self.loop.now
        self.bottleneck_arrivals += 1
        decision = rio_enqueue(self.rio, pkt, now)
        if decision is Decision.DROP:
            flow = self.flows_by_id[pkt.flow_id]
            flow.dropped += 1
            flow.color_dropped[pkt.color] += 1
            flow.window_counter(now)[GREEN_DROP if pkt.color is PacketColor.GREEN else RED_DROP] += 1
            return
        if not self.link_busy:
            self._serve(now)

    def _serve(self, now: float) -> None:
        pkt = self.rio.pop(now)
        self.in_service = pkt
        self.link_busy = True
        self.loop.at(now + pkt.size * self.link_tx_per_byte, self.departure, pkt)

    def departure(self, pkt: Packet) -> None:
        now = self.loop.now
        self.in_service = None
        self.departed += 1
        arrive = now + self.cfg.bottleneck_delay
        if arrive <= self.cfg.duration:
            self._sink(pkt, arrive)
        if self.rio.queue:
            self._serve(now)
        else:
            self.link_busy = False
            self.rio.link_idle(now)

    def _sink(self, pkt: Packet, t: float) -> None:
        # Sink state depends only on this flow's FIFO arrivals, so it is
        # updated at departure time with the true arrival stamp ``t``.
        flow = self.flows_by_id[pkt.flow_id]
        self.delivered += 1
        flow.sink_arrivals += 1
        if flow.receiver is None:
            flow.delivered_bytes += pkt.size
            flow.window_counter(t)[DELIVERED] += pkt.size
            return
        ackno, new = flow.receiver.on_data(pkt)
        if new:
            flow.delivered_bytes += new * pkt.size
            flow.window_counter(t)[DELIVERED] += new * pkt.size
        if ackno >= 0:
            self._ack(flow, pkt, ackno, t)
        elif flow.receiver.unacked == 1:
            self.loop.at(t + DELAYED_ACK_TIMEOUT, self._flush_ack, (flow, pkt))

    def _ack(self, flow: FlowRuntime, pkt: Packet, ackno: int, t: float) -> None:
        ack = Packet(pkt.flow_id, ackno, ACK_SIZE, ecn_capable=pkt.ecn_capable,
                     ecn_marked=pkt.ecn_marked, sent_at=pkt.sent_at, kind=PacketKind.ACK)
        self.loop.at(t + flow.one_way, flow.sender.on_ack, ack)

    def _flush_ack(self, arg: tuple[FlowRuntime, Packet]) -> None:
        flow, pkt = arg
        rcv = flow.receiver
        if rcv.unacked and rcv.held_seq == pkt.seq:
            rcv.unacked = 0
            self._ack(flow, pkt, rcv.next_expected, self.loop.now)

    # -- control plane

    def control_tick(self, tick: int) -> None:
        now = self.loop.now
        interval = self.cfg.feedback_interval
        pc_total = pc_marked = 0
        for flow in self.flows:
            signal = flow.feedback(now)
            c = flow.conditioner
            c.on_feedback(signal, now)
            if isinstance(c, cond.ParkChoiMarker):
                pc_total += signal.total_feedback
                pc_marked += signal.ecn_marked_count
            if c.epoch:
                every = max(1, round(c.epoch / interval))
                if tick % every == 0:
                    c.on_epoch(flow.measurement(), now)
        if self.park_choi is not None:
            self.park_choi.adjust(CongestionSignal(pc_marked, pc_total, now))
            for flow in self.flows:
                if isinstance(flow.conditioner, cond.ParkChoiMarker):
                    flow.conditioner.apply(now)
        self.loop.at(now + interval, self.control_tick, tick + 1)

    # -- run

    def run(self) -> RunResult:
        cfg = self.cfg
        self.flows_by_id = {f.spec.flow_id: f for f in self.flows}
        for flow in self.flows:
            self.loop.at(flow.spec.start_time, flow.sender.start)
        self.loop.at(cfg.feedback_interval, self.control_tick, 1)
        self.loop.run(cfg.duration)
        return self._result()

    def counters(self) -> dict[str, int]:
        injected = sum(f.injected for f in self.flows)
        dropped = sum(f.dropped for f in self.flows)
        in_access = injected - self.bottleneck_arrivals
        in_queue = len(self.rio.queue)
        in_service = 1 if self.in_service is not None else 0
        in_propagation = self.departed - self.delivered
        return {
            "injected": injected,
            "delivered": self.delivered,
            "dropped": dropped,
            "in_flight": in_access + in_queue + in_service + in_propagation,
            "in_access": in_access,
            "in_access_events": self.loop.pending(self.bottleneck_arrival),
            "in_queue": in_queue,
            "in_service": in_service,
            "in_propagation": in_propagation,
            "queue_arrivals": self.rio.arrivals,
            "queue_departures": self.rio.departures,
            "green_dropped": self.rio.drop_count[PacketColor.GREEN],
            "red_dropped": self.rio.drop_count[PacketColor.RED],
            "overflow_drops": self.rio.overflow_drops,
            "ecn_marks": self.rio.ecn_mark_count,
            "coupling_marks": self.rio.coupling_marks,
        }

    def _result(self) -> RunResult:
        cfg = self.cfg
        tick = cfg.metrics_tick
        nwin = math.ceil(cfg.duration / tick - 1e-9)
        records = []
        for flow in self.flows:
            for idx in range(nwin):
                w = flow.windows.get(idx) or [0] * 7 + [0.0, 0]
                start = idx * tick
                end = min(cfg.duration, start + tick)
                records.append(MetricsRecord(
                    flow.spec.flow_id, start, end, w[DELIVERED] * 8.0 / (end - start),
                    w[GREEN_SENT], w[RED_SENT], w[GREEN_DROP], w[RED_DROP], w[ECN_FB],
                    w[RTT_SUM] / w[RTT_N] if w[RTT_N] else None, w[YELLOW_SENT]))
        warm = cfg.duration / 3.0
        summaries = []
        for flow in self.flows:
            mine = [r for r in records if r.flow_id == flow.spec.flow_id and r.window_start >= warm - 1e-9]
            span = sum(r.window_end - r.window_start for r in mine)
            achieved = sum(r.achieved_rate * (r.window_end - r.window_start) for r in mine) / span if span else 0.0
            rtt_n = sum(flow.windows.get(int(r.window_start / tick), [0] * 9)[RTT_N] for r in mine)
            rtt_s = sum(flow.windows.get(int(r.window_start / tick), [0] * 9)[RTT_SUM] for r in mine)
            sender = flow.sender
            extra: dict[str, Any] = {}
            c = flow.conditioner
            if isinstance(c, cond.EquationMarker):
                extra["fallback_count"] = c.fallback_count
            if isinstance(c, cond.PenaltyShaper):
                extra["final_penalty"] = c.penalty.penalty
                extra["max_penalty"] = max((p for _, p in c.trace), default=0.0)
            if isinstance(c, cond.TokenBucketMarker):
                extra["final_marking_rate"] = c.marking_rate()
            if isinstance(sender, TcpSender):
                extra["final_rto"] = sender.s.rto
            summaries.append(FlowSummary(
                flow.spec.flow_id, flow.spec.target_rate, achieved, rtt_s / rtt_n if rtt_n else None,
                flow.color_sent[PacketColor.GREEN], flow.color_sent[PacketColor.YELLOW],
                flow.color_sent[PacketColor.RED], flow.color_dropped[PacketColor.GREEN],
                flow.color_dropped[PacketColor.RED],
                timeouts=getattr(sender, "timeouts", 0),
                fast_retransmits=getattr(sender, "fast_retransmits", 0), extra=extra))
        regime = classify_provisioning([f.target_rate for f in cfg.flows], cfg.as_capacity)
        fairness = jain_index([s.attainment for s in summaries if s.target > 0])
        return RunResult(records, summaries, regime.value, fairness, self.counters(), self.loop.processed)


def run_scenario(config: ScenarioConfig, seed: int | None = None) -> RunResult:
    return Simulation(config, seed).run()
