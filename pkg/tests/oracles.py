"""Independent reference implementations used to derive expected values.

These deliberately use different algorithms from the library code they check:
the token-bucket replay walks the placement schedule one token at a time
instead of computing whole-interval refills in closed form.
"""

from __future__ import annotations


def replay_token_bucket(
    times: list[int], capacity: int, interval_ms: int, anchor_ms: int
) -> list[bool]:
    """Grant sequence for requests at ``times``, replayed token by token.

    Tokens are placed one interval apart while the bucket drains; a bucket
    that is full at a request has its next placement rescheduled one interval
    after that request (placements into a full bucket are wasted and the
    interval clock restarts with consumption). Starts full at the anchor.
    """
    tokens = capacity
    next_token = anchor_ms + interval_ms
    grants = []
    for t in times:
        placed = 0
        while next_token <= t and tokens < capacity:
            tokens += 1
            next_token += interval_ms
            placed += 1
        if tokens == capacity and (placed > 0 or next_token <= t):
            # the bucket (re)filled: the placement clock pauses while full and
            # restarts with the consumption happening now
            next_token = t + interval_ms
        if tokens >= 1:
            tokens -= 1
            grants.append(True)
        else:
            grants.append(False)
    return grants


def burst_probe_grants(
    slots: list[bool], spacing_ms: int, capacity: int, interval_ms: int
) -> int:
    """Expected probe replies for one fresh-bucket burst.

    ``slots`` marks which packets in the arrival order are probes (the rest
    are noise); every packet competes for the same budget, but only probe
    grants produce replies the prober counts.
    """
    times = [i * spacing_ms for i in range(len(slots))]
    grants = replay_token_bucket(times, capacity, interval_ms, anchor_ms=times[0])
    return sum(1 for is_probe, granted in zip(slots, grants) if is_probe and granted)
