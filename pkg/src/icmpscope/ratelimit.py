"""Rcv measurement bursts and rate-limiter implementation classification.

A measurement sends n probe packets (optionally with m spoofed-source noise
packets interleaved evenly among them) and counts how many matching replies
the prober gets back. Comparing the count with and without noise is what
distinguishes global, strict, loose, and unclassifiable rate limiting.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from ipaddress import IPv6Address
from typing import Sequence

from icmpscope.model import DataPair, IcmpKind, ProbePacket
from icmpscope.simnet.config import RateLimitClass
from icmpscope.transport import CollectWindow, ObservationFilter, SendPlan

DEFAULT_SPACING_MS = 1
DEFAULT_BURST_GAP_MS = 2000


@dataclass(frozen=True, slots=True)
class RcvSample:
    """Replies counted for one burst."""

    rcv: int
    n_sent: int
    with_noise: bool
    m_noise: int
    t: int


@dataclass(frozen=True, slots=True)
class NoiseSpec:
    m: int
    spoof_src: IPv6Address


class BurstPacer:
    """Enforces a minimum quiet gap between bursts aimed at the same node."""

    def __init__(self, transport, gap_ms: int = DEFAULT_BURST_GAP_MS) -> None:
        self._transport = transport
        self._gap = gap_ms
        self._last_end: dict[IPv6Address, int] = {}

    def pace(self, key: IPv6Address) -> None:
        last = self._last_end.get(key)
        if last is not None:
            earliest = last + self._gap
            now = self._transport.now()
            if now < earliest:
                self._transport.wait(earliest - now)

    def mark(self, key: IPv6Address) -> None:
        self._last_end[key] = self._transport.now()


def interleave_pattern(n_probe: int, m_noise: int) -> list[bool]:
    """Slot layout of a burst: True marks a probe packet.

    Noise is spread evenly and leads each probe, so at m/n = 2 the burst runs
    noise, noise, probe, repeated.
    """
    slots: list[bool] = []
    for i in range(n_probe):
        noise_here = m_noise * (i + 1) // n_probe - m_noise * i // n_probe
        slots.extend([False] * noise_here)
        slots.append(True)
    return slots


def _burst_spacing(transport, total_packets: int, requested_ms: int) -> int:
    """Widen packet spacing when a burst would exceed the transport's
    per-prefix rate cap (the transport rejects rather than reshapes)."""
    cap = getattr(transport, "max_pps_per_prefix", None)
    if cap and total_packets > cap:
        return max(requested_ms, math.ceil(1000 / cap))
    return requested_ms


def measure_rcv(
    rvp_target: IPv6Address,
    kind: IcmpKind,
    n: int,
    noise: NoiseSpec | None,
    transport,
    *,
    expect_origin: IPv6Address | None = None,
    receive_window_ms: int = 1000,
    spacing_ms: int = DEFAULT_SPACING_MS,
) -> RcvSample:
    """One burst toward ``rvp_target``; returns the matched reply count.

    For error kinds the target is an unreachable address and replies are
    matched on (kind, origin, quoted target, probe id); for echo replies the
    target is the responder itself. Zero replies is a result, not an error.
    """
    m = noise.m if noise is not None else 0
    spacing = _burst_spacing(transport, n + m, spacing_ms)
    pids = itertools.count(1)
    probe_ids: set[int] = set()
    entries: list[tuple[int, ProbePacket]] = []
    for slot, is_probe in enumerate(interleave_pattern(n, m)):
        pid = next(pids)
        if is_probe:
            src = transport.source_address
            probe_ids.add(pid)
        else:
            src = noise.spoof_src  # type: ignore[union-attr]
        entries.append((slot * spacing, ProbePacket(src=src, dst=rvp_target, probe_id=pid)))

    plan = SendPlan(tuple(entries))
    window = CollectWindow(
        duration_ms=plan.span_ms + receive_window_ms,
        obs_filter=ObservationFilter(
            kinds=frozenset({kind}),
            origin=expect_origin,
            quoted_dst=rvp_target if kind.is_error else None,
            probe_ids=frozenset(probe_ids),
        ),
    )
    t0 = transport.now()
    observations = transport.execute(plan, window)
    return RcvSample(rcv=len(observations), n_sent=n, with_noise=noise is not None, m_noise=m, t=t0)


def classify(rcv1_avg: float, rcv2_avg: float, n: int, lam: float) -> RateLimitClass:
    """Classify a rate limiter from its no-noise and with-noise reply averages.

    Strict and loose are disjoint bands checked first; global requires the
    noise to visibly depress the replies. A silent node (rcv1 = 0) cannot be
    told apart from filtering, so it stays unclassified.
    """
    if rcv1_avg <= 0:
        return RateLimitClass.UNCLASSIFIED
    if 0.95 <= rcv1_avg <= 1.05:
        return RateLimitClass.STRICT
    if rcv2_avg >= 0.95 * n:
        return RateLimitClass.LOOSE
    if rcv2_avg < lam * rcv1_avg:
        return RateLimitClass.GLOBAL
    return RateLimitClass.UNCLASSIFIED


def observability(rcv_before: float, rcv_after: float) -> float:
    """Fractional decline in replies caused by noise, clamped to [0, 1]."""
    if rcv_before <= 0:
        raise ValueError("rcv_before must be positive")
    return min(1.0, max(0.0, 1.0 - rcv_after / rcv_before))


def split_counts(total: int, mn_ratio: float) -> tuple[int, int]:
    """Derive (m_noise, n_probe) from a packet budget and a noise/probe ratio."""
    n = round(total / (1.0 + mn_ratio))
    n = max(1, min(total, n))
    return total - n, n


@dataclass(frozen=True, slots=True)
class MeasureTarget:
    """What to aim a burst at: the address probed and the reply expected."""

    target: IPv6Address
    origin: IPv6Address | None
    kind: IcmpKind

    @classmethod
    def from_pair(cls, pair: DataPair) -> MeasureTarget:
        return cls(target=pair.target, origin=pair.periphery, kind=pair.error_kind)


def _measure_phase(
    targets: Sequence[MeasureTarget],
    n: int,
    noise_builder,
    transport,
    pacer: BurstPacer,
    receive_window_ms: int,
) -> list[RcvSample]:
    samples = []
    for mt in targets:
        key = mt.origin if mt.origin is not None else mt.target
        pacer.pace(key)
        sample = measure_rcv(
            mt.target,
            mt.kind,
            n,
            noise_builder(mt),
            transport,
            expect_origin=mt.origin,
            receive_window_ms=receive_window_ms,
        )
        pacer.mark(key)
        samples.append(sample)
    return samples


def sufficiency_sweep(
    targets: Sequence[MeasureTarget],
    totals: Sequence[int],
    decline_thresholds: Sequence[float],
    transport,
    *,
    mn_ratio: float = 2.0,
    noise_src_for=None,
    receive_window_ms: int = 1000,
    burst_gap_ms: int = DEFAULT_BURST_GAP_MS,
) -> dict[tuple[int, float], float]:
    """Fraction of targets whose rate limiting stays unobservable per budget.

    For every packet budget, measures the reply decline noise causes at each
    target and marks the target insufficient when the decline falls short of
    the threshold (or when the target never replies at all).
    """
    if not totals:
        raise ValueError("totals must be non-empty")
    noise_src_for = noise_src_for or (lambda mt: transport.source_address)
    pacer = BurstPacer(transport, burst_gap_ms)
    declines: dict[int, list[float | None]] = {}
    for total in totals:
        m, n = split_counts(total, mn_ratio)
        before = _measure_phase(targets, n, lambda mt: None, transport, pacer, receive_window_ms)
        after = _measure_phase(
            targets,
            n,
            lambda mt: NoiseSpec(m, noise_src_for(mt)),
            transport,
            pacer,
            receive_window_ms,
        )
        declines[total] = [
            observability(b.rcv, a.rcv) if b.rcv > 0 else None
            for b, a in zip(before, after)
        ]

    table: dict[tuple[int, float], float] = {}
    for total in totals:
        for threshold in decline_thresholds:
            bad = sum(1 for d in declines[total] if d is None or d < threshold)
            table[(total, threshold)] = bad / len(targets)
    return table


@dataclass(frozen=True, slots=True)
class RatioSweepRow:
    mn_ratio: float
    m_noise: int
    n_probe: int
    mean_observability: float


def ratio_sweep(
    targets: Sequence[MeasureTarget],
    total: int,
    ratios: Sequence[float],
    transport,
    *,
    noise_src_for=None,
    receive_window_ms: int = 1000,
    burst_gap_ms: int = DEFAULT_BURST_GAP_MS,
) -> list[RatioSweepRow]:
    """Mean observability over targets for each noise/probe split of a fixed
    packet budget."""
    noise_src_for = noise_src_for or (lambda mt: transport.source_address)
    pacer = BurstPacer(transport, burst_gap_ms)
    rows = []
    for ratio in ratios:
        m, n = split_counts(total, ratio)
        before = _measure_phase(targets, n, lambda mt: None, transport, pacer, receive_window_ms)
        after = _measure_phase(
            targets,
            n,
            lambda mt: NoiseSpec(m, noise_src_for(mt)),
            transport,
            pacer,
            receive_window_ms,
        )
        values = [observability(b.rcv, a.rcv) for b, a in zip(before, after) if b.rcv > 0]
        mean = sum(values) / len(values) if values else 0.0
        rows.append(RatioSweepRow(mn_ratio=ratio, m_noise=m, n_probe=n, mean_observability=mean))
    return rows
