"""icmpscope: ICMP rate-limiting side-channel measurement toolkit for IPv6.

Turns remote routers into usable vantage points: discover <target, periphery>
data pairs, infer inbound source-address-validation deployment, infer
reachability between remote nodes, and classify rate-limiter implementations,
all validated against a deterministic simulated internet with ground truth.
"""

__version__ = "0.1.0"
