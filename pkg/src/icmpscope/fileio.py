"""Readers and writers for the line-delimited record files the CLI exchanges.

Records are JSON lines with sorted keys so identical campaigns produce
byte-identical files; summaries are tab-separated tables.
"""

from __future__ import annotations

import json
from ipaddress import IPv6Address, IPv6Network
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from icmpscope.model import DataPair, IcmpKind, IcmpObservation, parse_address, parse_prefix
from icmpscope.ratelimit import RatioSweepRow
from icmpscope.reach import CoordinateMap


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def append_jsonl(path: str | Path, record: dict) -> None:
    with Path(path).open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_tsv(path: str | Path, header: list[str], rows: Iterable[Iterable]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(cell) for cell in row) + "\n")


# -- prefix lists and maps ----------------------------------------------


def read_prefix_list(path: str | Path) -> list[IPv6Network]:
    """One CIDR per line; '#' starts a comment."""
    prefixes = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            prefixes.append(parse_prefix(line))
    return prefixes


def write_prefix_list(path: str | Path, prefixes: Iterable[IPv6Network]) -> None:
    Path(path).write_text("".join(f"{p}\n" for p in prefixes))


def read_address_list(path: str | Path) -> list[IPv6Address]:
    addresses = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            addresses.append(parse_address(line))
    return addresses


def write_address_list(path: str | Path, addresses: Iterable[IPv6Address]) -> None:
    Path(path).write_text("".join(f"{a}\n" for a in addresses))


def read_as_map(path: str | Path) -> dict[IPv6Network, int]:
    """Two columns per line: prefix and AS number."""
    mapping: dict[IPv6Network, int] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        prefix_text, asn_text = line.split()
        mapping[parse_prefix(prefix_text)] = int(asn_text)
    return mapping


def write_as_map(path: str | Path, mapping: Mapping[IPv6Network, int]) -> None:
    Path(path).write_text("".join(f"{p} {asn}\n" for p, asn in mapping.items()))


# -- data pairs ----------------------------------------------------------


def pair_record(prefix: IPv6Network, pair: DataPair) -> dict:
    return {
        "prefix": str(prefix),
        "target": str(pair.target),
        "periphery": str(pair.periphery),
        "error_kind": pair.error_kind.value,
        "t_ms": pair.discovered_at,
    }


def write_pairs(path: str | Path, pairs: Mapping[IPv6Network, list[DataPair]]) -> None:
    write_jsonl(
        path,
        (pair_record(prefix, pair) for prefix, plist in pairs.items() for pair in plist),
    )


def read_pairs(path: str | Path) -> dict[IPv6Network, list[DataPair]]:
    out: dict[IPv6Network, list[DataPair]] = {}
    for record in read_jsonl(path):
        pair = DataPair(
            target=parse_address(record["target"]),
            periphery=parse_address(record["periphery"]),
            error_kind=IcmpKind(record.get("error_kind", IcmpKind.DEST_UNREACHABLE.value)),
            discovered_at=int(record.get("t_ms", 0)),
        )
        out.setdefault(parse_prefix(record["prefix"]), []).append(pair)
    return out


# -- coordinates ----------------------------------------------------------


def read_coords(path: str | Path) -> CoordinateMap:
    entries = []
    for record in read_jsonl(path):
        key = record["address_or_prefix"]
        net = parse_prefix(key) if "/" in key else IPv6Network((int(parse_address(key)), 128))
        entries.append((net, float(record["lat"]), float(record["lon"])))
    return CoordinateMap(entries)


def write_coords(path: str | Path, entries: Iterable[tuple[IPv6Network, float, float]]) -> None:
    write_jsonl(
        path,
        (
            {
                "address_or_prefix": str(net[0]) if net.prefixlen == 128 else str(net),
                "lat": lat,
                "lon": lon,
            }
            for net, lat, lon in entries
        ),
    )


# -- event traces and sweep tables ------------------------------------------


def write_observations(path: str | Path, observations: Iterable[IcmpObservation]) -> None:
    """Export an observation stream as line-delimited records."""
    write_jsonl(
        path,
        (
            {
                "t_ms": o.received_at,
                "kind": o.kind.value,
                "origin": str(o.origin),
                "quoted_dst": str(o.quoted_dst) if o.quoted_dst is not None else None,
            }
            for o in observations
        ),
    )


def write_sufficiency_table(
    path: str | Path, table: Mapping[tuple[int, float], float]
) -> None:
    """Budget-versus-threshold grid of unobservable-target fractions."""
    rows = sorted(table.items())
    write_tsv(
        path,
        ["total_packets", "decline_threshold", "insufficient_fraction"],
        ((total, threshold, f"{fraction:.4f}") for (total, threshold), fraction in rows),
    )


def write_ratio_table(path: str | Path, rows: Iterable[RatioSweepRow]) -> None:
    write_tsv(
        path,
        ["mn_ratio", "m_noise", "n_probe", "mean_observability"],
        ((r.mn_ratio, r.m_noise, r.n_probe, f"{r.mean_observability:.4f}") for r in rows),
    )


# -- ground truth ----------------------------------------------------------


def write_isav_truth(path: str | Path, truth: Mapping[IPv6Network, bool]) -> None:
    write_jsonl(
        path, ({"prefix": str(p), "isav_deployed": v} for p, v in truth.items())
    )


def read_reach_truth(path: str | Path) -> dict[IPv6Address, bool]:
    return {
        parse_address(r["target"]): bool(r["unconnected"]) for r in read_jsonl(path)
    }


def write_reach_truth(path: str | Path, truth: Mapping[IPv6Address, bool]) -> None:
    write_jsonl(
        path, ({"target": str(t), "unconnected": v} for t, v in truth.items())
    )


def write_rl_truth(path: str | Path, truth: Mapping[IPv6Address, str]) -> None:
    write_jsonl(
        path, ({"address": str(a), "classification": c} for a, c in truth.items())
    )
