"""Shared vocabulary: colors, packets, flow contracts, provisioning regimes.

Units are fixed across the package: rates in bits/s, durations and instants
in seconds, sizes in bytes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

EXACT_RTOL = 1e-9


class PacketColor(enum.Enum):
    GREEN = "green"
    YELLOW = "yellow"
    RED = "red"

    @property
    def in_profile(self) -> bool:
        # Yellow is out-of-profile at a two-level RIO queue.
        return self is PacketColor.GREEN


class PacketKind(enum.Enum):
    DATA = "data"
    ACK = "ack"


class Transport(enum.Enum):
    TCP_RENO = "tcp_reno"
    UDP_CBR = "udp_cbr"


class ProvisioningRegime(enum.Enum):
    OVER = "Over"
    EXACT = "Exact"
    UNDER = "Under"


def check_rate(value: float, name: str = "rate") -> float:
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
    return float(value)


def check_duration(value: float, name: str = "duration") -> float:
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
    return float(value)


@dataclass(slots=True)
class Packet:
    """A packet in flight.

    Mutable on purpose: the edge sets ``color`` once, the core may set
    ``ecn_marked``. For ACKs, ``seq`` is the cumulative ack number and
    ``ecn_marked`` carries the echoed congestion mark.
    """

    flow_id: int
    seq: int
    size: int
    color: PacketColor = PacketColor.RED
    ecn_capable: bool = False
    ecn_marked: bool = False
    sent_at: float = 0.0
    kind: PacketKind = PacketKind.DATA
    # Three-color markers keep their raw verdict here for reporting.
    marked_color: PacketColor | None = None
    retransmit: bool = False

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError("packet size must be positive")
        if self.ecn_marked and not self.ecn_capable:
            raise ValueError("ecn_marked requires ecn_capable")

    def set_color(self, color: PacketColor) -> None:
        if self.marked_color is not None:
            raise RuntimeError(f"packet {self.flow_id}:{self.seq} already colored")
        self.marked_color = color
        # RIO is two-level: yellow travels as red.
        self.color = PacketColor.GREEN if color is PacketColor.GREEN else PacketColor.RED


@dataclass(frozen=True)
class FlowSpec:
    flow_id: int
    transport: Transport = Transport.TCP_RENO
    target_rate: float = 0.0
    peak_rate: float | None = None
    access_delay: float = 0.01
    packet_size: int = 1500
    start_time: float = 0.0
    cbr_rate: float = 0.0

    def __post_init__(self) -> None:
        check_rate(self.target_rate, "target_rate")
        if self.peak_rate is None:
            object.__setattr__(self, "peak_rate", 2.0 * self.target_rate)
        check_rate(self.peak_rate, "peak_rate")
        if self.peak_rate < self.target_rate:
            raise ValueError(
                f"flow {self.flow_id}: peak_rate {self.peak_rate} < target_rate {self.target_rate}"
            )
        if self.packet_size <= 0:
            raise ValueError(f"flow {self.flow_id}: packet_size must be positive")
        check_duration(self.access_delay, "access_delay")
        check_duration(self.start_time, "start_time")
        check_rate(self.cbr_rate, "cbr_rate")


def classify_provisioning(targets: Iterable[float], as_capacity: float) -> ProvisioningRegime:
    """Compare the sum of assured rates against the assured-service capacity."""
    targets = [check_rate(t, "target") for t in targets]
    if not (as_capacity > 0 and math.isfinite(as_capacity)):
        raise ValueError("as_capacity must be positive")
    total = math.fsum(targets)
    if math.isclose(total, as_capacity, rel_tol=EXACT_RTOL, abs_tol=0.0):
        return ProvisioningRegime.EXACT
    return ProvisioningRegime.OVER if total < as_capacity else ProvisioningRegime.UNDER
