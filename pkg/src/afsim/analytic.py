"""Closed-form TCP throughput models and provisioning relations.

Every function here is pure. Inputs follow the package units (bytes,
seconds, bits/s); models written in segments convert through the segment
size at the boundary.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

MATHIS_C = math.sqrt(1.5)
DOVROLIS_C = 1.5 * math.sqrt(1.0 / 3.0)
P_MIN = 1e-8


class UnboundedRateError(ValueError):
    """Raised when a loss-driven model is evaluated at zero loss."""


class TargetUnreachableError(ValueError):
    """Raised when no loss probability yields the requested rate."""


def _check_p(p: float, name: str = "p") -> None:
    if p == 0:
        raise UnboundedRateError(f"unbounded model rate: {name} = 0")
    if not (0 < p <= 1):
        raise ValueError(f"{name} must be in (0, 1], got {p!r}")


def _check_positive(value: float, name: str) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class PadhyeParams:
    p: float
    wmax: float
    rtt: float
    rto: float
    mss: int
    b_ack: int = 2

    def __post_init__(self) -> None:
        _check_p(self.p)
        if not self.wmax >= 1:
            raise ValueError(f"wmax must be >= 1, got {self.wmax!r}")
        _check_positive(self.rtt, "rtt")
        _check_positive(self.rto, "rto")
        _check_positive(self.mss, "mss")
        if int(self.b_ack) != self.b_ack or self.b_ack < 1:
            raise ValueError(f"b_ack must be a positive integer, got {self.b_ack!r}")


@dataclass(frozen=True)
class YeomParams:
    m: float
    k: int
    rtt: float
    p: float

    def __post_init__(self) -> None:
        if not (self.m >= 0 and math.isfinite(self.m)):
            raise ValueError(f"m must be >= 0, got {self.m!r}")
        _check_positive(self.k, "k")
        _check_positive(self.rtt, "rtt")
        _check_p(self.p)


def mathis_rate(mss: float, rtt: float, p: float) -> float:
    """Square-root-p throughput, sqrt(3/2) * MSS / (RTT * sqrt(p)), in bits/s."""
    _check_p(p)
    _check_positive(mss, "mss")
    _check_positive(rtt, "rtt")
    return 8.0 * MATHIS_C * mss / (rtt * math.sqrt(p))


def dovrolis_bound(k: float, rtt: float, p: float) -> float:
    """Upper bound on a flow's rate used for proportional differentiation (bits/s)."""
    _check_p(p)
    _check_positive(k, "k")
    _check_positive(rtt, "rtt")
    return 8.0 * DOVROLIS_C * k / (rtt * math.sqrt(p))


def proportional_drop_ratio(r1: float, r2: float) -> float:
    """Ratio d1/d2 of per-flow drop rates; inversely proportional to target rate."""
    if not (r1 > 0 and r2 > 0):
        raise ValueError("target rates must be positive")
    return r2 / r1


def ineffectiveness_threshold(rtt: float, p_out: float) -> float:
    """Target rate (segments/s) below which a token bucket does not matter."""
    _check_positive(rtt, "rtt")
    if p_out == 0:
        return math.inf
    _check_p(p_out, "p_out")
    return math.sqrt(3.0 / (2.0 * p_out)) / rtt


def marker_ineffective(target: float, rtt: float, p_out: float, mss: float) -> bool:
    """True when a token-bucket target of ``target`` bits/s has no effect.

    ``target`` is converted to segments/s through ``mss``. With ``p_out == 0``
    the threshold is infinite; the result is True and a RuntimeWarning is
    issued because the condition was only derived for p_out > 0.
    """
    _check_positive(mss, "mss")
    if target < 0:
        raise ValueError("target must be >= 0")
    if p_out == 0:
        warnings.warn("p_out = 0: ineffectiveness threshold is unbounded", RuntimeWarning, stacklevel=2)
        return True
    segments = target / (8.0 * mss)
    return segments < ineffectiveness_threshold(rtt, p_out)


def yeom_epsilon(k: float, rtt: float, p: float, *, validate: bool = True) -> float:
    """Elastic part of the adaptive-marker TCP model, in bits/s."""
    if validate:
        _check_p(p)
        _check_positive(k, "k")
        _check_positive(rtt, "rtt")
    elif p == 0:
        raise UnboundedRateError("unbounded model rate: p = 0")
    return (3.0 * 8.0 * k / (4.0 * rtt)) * math.sqrt(2.0 / p)


def yeom_rate(params: YeomParams) -> float:
    """Throughput predicted for marker target ``m``: 3m/4 + epsilon."""
    return 0.75 * params.m + yeom_epsilon(params.k, params.rtt, params.p)


# Full steady-state Reno model with timeouts and a window cap.


def padhye_W(p: float, b_ack: int = 2) -> float:
    _check_p(p)
    if b_ack < 1:
        raise ValueError("b_ack must be >= 1")
    a = (2.0 + b_ack) / (3.0 * b_ack)
    return a + math.sqrt(8.0 * (1.0 - p) / (3.0 * b_ack * p) + a * a)


def _one_minus_pow(q_log: float, n: float) -> float:
    """1 - (1-p)**n given q_log = log(1-p), without cancellation."""
    if q_log == -math.inf:
        return 1.0
    return -math.expm1(n * q_log)


def padhye_Q(p: float, w: float) -> float:
    """Probability that a loss in a window of ``w`` segments ends in a timeout."""
    _check_p(p)
    if not w >= 1:
        raise ValueError(f"w must be >= 1, got {w!r}")
    q_log = math.log1p(-p) if p < 1 else -math.inf
    # (1-p)^3 (1 - (1-p)^(w-3)) rewritten as (1-p)^3 - (1-p)^w; the same
    # quantity, but defined at p = 1 for w < 3.
    qw = 1.0 - _one_minus_pow(q_log, w)
    q3 = 1.0 - _one_minus_pow(q_log, 3.0)
    num = _one_minus_pow(q_log, 3.0) * (1.0 + q3 - qw)
    den = _one_minus_pow(q_log, w)
    return min(1.0, num / den)


def padhye_F(p: float) -> float:
    if not (0 <= p <= 1):
        raise ValueError(f"p must be in [0, 1], got {p!r}")
    return 1 + p + 2 * p**2 + 4 * p**3 + 8 * p**4 + 16 * p**5 + 32 * p**6


def padhye_rate(params: PadhyeParams) -> float:
    """Steady-state Reno throughput in bits/s.

    Uses the W(p) branch while the unconstrained window is below ``wmax``,
    the window-limited branch otherwise. At p = 1 both branches are
    evaluated in their limit, MSS / (F(1) * RTO).
    """
    p, b, wmax = params.p, params.b_ack, params.wmax
    mss_bits = 8.0 * params.mss
    if p == 1.0:
        return mss_bits / (padhye_F(1.0) * params.rto)
    w = padhye_W(p, b)
    loss_term = (1.0 - p) / p
    if w < wmax:
        q = padhye_Q(p, w)
        num = loss_term + w + q / (1.0 - p)
        den = params.rtt * (b / 2.0 * w + 1.0) + q * padhye_F(p) * params.rto / (1.0 - p)
    else:
        q = padhye_Q(p, wmax)
        num = loss_term + wmax + q / (1.0 - p)
        den = (params.rtt * (b / 8.0 * wmax + loss_term / wmax + 2.0)
               + q * padhye_F(p) * params.rto / (1.0 - p))
    return mss_bits * num / den


def padhye_crossover(wmax: float, b_ack: int = 2) -> float:
    """Loss probability at which W(p) equals ``wmax`` (closed form)."""
    a = (2.0 + b_ack) / (3.0 * b_ack)
    if wmax <= 2 * a:
        # W(1) = 2a is the smallest value W takes.
        return 1.0
    x = (wmax - a) ** 2 - a * a  # = 8(1-p) / (3 b p)
    c = 8.0 / (3.0 * b_ack)
    return c / (x + c)


class Inversion(NamedTuple):
    p: float
    saturated: bool


def invert_padhye(target: float, wmax: float, rtt: float, rto: float, mss: int,
                  b_ack: int = 2, *, p_min: float = P_MIN, max_iter: int = 200) -> Inversion:
    """Loss probability at which the Reno model yields ``target`` bits/s.

    Bisection on log(p) over [log(p_min), 0]. Targets above the model rate at
    ``p_min`` raise TargetUnreachableError; targets below the rate at p = 1
    return p = 1 with ``saturated`` set.
    """
    _check_positive(target, "target")

    def rate(p: float) -> float:
        return padhye_rate(PadhyeParams(p, wmax, rtt, rto, mss, b_ack))

    top = rate(p_min)
    if target > top:
        raise TargetUnreachableError(
            f"target exceeds model capacity: {target:.6g} > {top:.6g} bits/s at p={p_min:g}")
    if target <= rate(1.0):
        return Inversion(1.0, True)
    lo, hi = math.log(p_min), 0.0  # rate(lo) >= target > rate(hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if rate(math.exp(mid)) >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return Inversion(math.exp(0.5 * (lo + hi)), False)
