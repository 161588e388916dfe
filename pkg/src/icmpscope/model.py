"""Core domain types shared by every measurement engine.

Addresses and prefixes are the stdlib ``ipaddress`` types: ``IPv6Address``
already guarantees the canonical lowercase, zero-compressed text form we
persist, and ``IPv6Network`` enforces that no host bits are set below the
prefix length. Timestamps are integer milliseconds on whatever clock the
transport provides (simulated or wall). All types here are immutable values.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from ipaddress import IPv6Address, IPv6Network

DEFAULT_HOP_LIMIT = 64

# Spoofed sources share these prefix lengths with the real addresses: the
# local spoof must stay routable toward our network, the target-side spoof
# must fall inside the same small subnet as the remote router.
LOCAL_SPOOF_PREFIX_LEN = 80
TARGET_SPOOF_PREFIX_LEN = 124


class IcmpKind(Enum):
    """ICMPv6 message kinds the engines care about."""

    ECHO_REQUEST = "echo_request"
    ECHO_REPLY = "echo_reply"
    DEST_UNREACHABLE = "destination_unreachable"
    TIME_EXCEEDED = "time_exceeded"

    @property
    def is_error(self) -> bool:
        return self in _ERROR_KINDS


_ERROR_KINDS = frozenset({IcmpKind.DEST_UNREACHABLE, IcmpKind.TIME_EXCEEDED})
ERROR_KINDS = _ERROR_KINDS


def parse_address(text: str) -> IPv6Address:
    return IPv6Address(text.strip())


def parse_prefix(text: str) -> IPv6Network:
    """Parse a CIDR string, rejecting bases with bits below the prefix."""
    return IPv6Network(text.strip(), strict=True)


def prefix_contains(prefix: IPv6Network, addr: IPv6Address) -> bool:
    return addr in prefix


@dataclass(frozen=True, slots=True)
class DataPair:
    """A <target, periphery> pair: probing the unreachable target elicits
    ICMP errors from the periphery, which is the usable remote vantage point.
    """

    target: IPv6Address
    periphery: IPv6Address
    error_kind: IcmpKind = IcmpKind.DEST_UNREACHABLE
    discovered_at: int = 0

    def __post_init__(self) -> None:
        if not self.error_kind.is_error:
            raise ValueError(f"data pair requires an error kind, got {self.error_kind}")


@dataclass(frozen=True, slots=True)
class ProbePacket:
    """An emitted ICMPv6 echo request; ``src`` may be spoofed.

    ``probe_id`` is a correlation token carried in the echo payload and echoed
    back in replies and in the quoted portion of error messages, which lets a
    stateless receiver match responses to its own probes even when sources
    are spoofed.
    """

    src: IPv6Address
    dst: IPv6Address
    kind: IcmpKind = IcmpKind.ECHO_REQUEST
    hop_limit: int = DEFAULT_HOP_LIMIT
    probe_id: int | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.hop_limit <= 255:
            raise ValueError(f"hop_limit out of range: {self.hop_limit}")


@dataclass(frozen=True, slots=True)
class IcmpObservation:
    """One ICMP message received by the local prober.

    ``quoted_dst`` is the destination of the invoking packet and is present
    exactly for error kinds (error messages quote the packet that triggered
    them). ``probe_id`` is the echoed correlation token when recoverable.
    """

    kind: IcmpKind
    origin: IPv6Address
    quoted_dst: IPv6Address | None = None
    received_at: int = 0
    probe_id: int | None = None

    def __post_init__(self) -> None:
        if self.kind.is_error and self.quoted_dst is None:
            raise ValueError("error observations must carry quoted_dst")


@dataclass(frozen=True, slots=True)
class MeasurementParams:
    """Knobs shared by the rcv-counting engines.

    n_probe: probe packets per burst (the replies we count).
    m_noise: noise packets interleaved into a burst to load the limiter.
    lam: decision ratio; a < b is only trusted when a < lam * b.
    repeats: bursts averaged per verdict.
    receive_window_ms: how long to collect after a burst starts.
    """

    n_probe: int = 50
    m_noise: int = 100
    lam: float = 0.6
    repeats: int = 10
    receive_window_ms: int = 1000

    def __post_init__(self) -> None:
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lambda must be in (0,1), got {self.lam}")
        if self.n_probe < 1:
            raise ValueError("n_probe must be >= 1")
        if self.m_noise < 0:
            raise ValueError("m_noise must be >= 0")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.receive_window_ms <= 0:
            raise ValueError("receive_window_ms must be positive")


def _randomize_low_bits(addr: IPv6Address, keep_prefix_len: int, rng: random.Random) -> IPv6Address:
    """Random address sharing the top ``keep_prefix_len`` bits, never the input itself."""
    low_bits = 128 - keep_prefix_len
    base = (int(addr) >> low_bits) << low_bits
    while True:
        candidate = base | rng.getrandbits(low_bits)
        if candidate != int(addr):
            return IPv6Address(candidate)


def spoof_sources(
    local_vp: IPv6Address, rvp: IPv6Address, rng: random.Random
) -> tuple[IPv6Address, IPv6Address]:
    """Pick the two spoofed noise sources for one remote vantage point.

    Returns ``(local_spoof, target_spoof)``: the first shares the local
    prober's /80, the second shares the RVP's /124, and neither equals the
    address it was derived from. Deterministic for a given rng state.
    """
    local_spoof = _randomize_low_bits(local_vp, LOCAL_SPOOF_PREFIX_LEN, rng)
    target_spoof = _randomize_low_bits(rvp, TARGET_SPOOF_PREFIX_LEN, rng)
    return local_spoof, target_spoof
