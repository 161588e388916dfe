"""Campaign orchestration CLI.

Subcommands: simulate | discover | isav | reach | rl-classify | report.
Configuration comes from an optional JSON file plus flag overrides; every
engine writes line-delimited records, a resume manifest, and a summary table
into the output directory. Runs on the simulated backend reproduce byte
for byte under a fixed seed.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from ipaddress import IPv6Network
from pathlib import Path

from icmpscope import fileio
from icmpscope.discovery import DiscoveryCaps, run_discovery
from icmpscope.isav import (
    IsavCategory,
    aggregate_as,
    run_isav_campaign,
    run_supplemental_echo,
    select_rvp,
)
from icmpscope.model import MeasurementParams, parse_address, spoof_sources
from icmpscope.ratelimit import BurstPacer, NoiseSpec, classify, measure_rcv
from icmpscope.reach import evaluate, run_reach_campaign
from icmpscope.simnet.config import SimConfig, oracle_rl_class
from icmpscope.simnet import scenarios
from icmpscope.transport import RawTransport, SimTransport, TransportError

EVAL_LAMBDAS = [0.5, 0.6, 0.7, 0.8, 0.9]


class CliError(Exception):
    """Configuration or input problem; maps to a nonzero exit."""


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"config file is not valid JSON: {exc}") from exc


def _setting(config: dict, args: argparse.Namespace, key: str, default=None):
    value = getattr(args, key, None)
    if value is not None:
        return value
    return config.get(key, default)


def _build_params(config: dict, args: argparse.Namespace, section: str, defaults: dict) -> MeasurementParams:
    merged = dict(defaults)
    merged.update(config.get("params", {}))
    merged.update(config.get(section, {}))
    for flag, key in (
        ("n_probe", "n_probe"),
        ("m_noise", "m_noise"),
        ("lam", "lambda"),
        ("repeats", "repeats"),
        ("window_ms", "receive_window_ms"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = value
    try:
        return MeasurementParams(
            n_probe=int(merged.get("n_probe", 50)),
            m_noise=int(merged.get("m_noise", 100)),
            lam=float(merged.get("lambda", 0.6)),
            repeats=int(merged.get("repeats", 10)),
            receive_window_ms=int(merged.get("receive_window_ms", 1000)),
        )
    except ValueError as exc:
        raise CliError(f"invalid measurement parameters: {exc}") from exc


def _input_path(config: dict, args: argparse.Namespace, name: str, required: bool) -> Path | None:
    value = getattr(args, name, None)
    if value is None:
        value = config.get("inputs", {}).get(name)
    if value is None:
        if required:
            raise CliError(f"missing required input: {name}")
        return None
    path = Path(value)
    if not path.is_file():
        raise CliError(f"input file not found: {path}")
    return path


def _make_transport(config: dict, args: argparse.Namespace):
    backend = _setting(config, args, "backend", "sim")
    if backend == "sim":
        sim_path = _setting(config, args, "sim_config", None)
        if sim_path is None:
            raise CliError("sim backend needs --sim-config (or 'sim_config' in the config file)")
        if not Path(sim_path).is_file():
            raise CliError(f"sim config not found: {sim_path}")
        cfg = SimConfig.load(sim_path)
        rate = config.get("rate_cap", {})
        return SimTransport(
            cfg,
            max_pps_per_prefix=int(rate.get("max_pps_per_prefix", 200)),
            pacing_prefix_len=int(rate.get("pacing_prefix_len", 48)),
        )
    if backend == "raw":
        # Spoofed traffic is inherent to these measurements, so a raw run is
        # refused outright without the explicit acknowledgment flag.
        if not getattr(args, "acknowledge_spoofing", False):
            raise CliError(
                "raw backend emits spoofed packets; pass --acknowledge-spoofing "
                "to confirm you are authorized to do that"
            )
        interface = _setting(config, args, "interface", None)
        source = _setting(config, args, "source_address", None)
        if interface is None or source is None:
            raise CliError("raw backend needs an interface and a source address")
        return RawTransport(interface, parse_address(source), allow_spoofing=True)
    raise CliError(f"unknown backend: {backend}")


def _out_dir(config: dict, args: argparse.Namespace) -> Path:
    out = Path(_setting(config, args, "out_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest_load(path: Path) -> set[str]:
    if not path.is_file():
        return set()
    return {record["unit"] for record in fileio.read_jsonl(path)}


def _containing_48(addr) -> "IPv6Network":
    return IPv6Network((int(addr) & ~((1 << 80) - 1), 48))


# -- simulate ------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    out = _out_dir(config, args)
    seed = int(_setting(config, args, "seed", 0) or 0)
    loss = args.loss if args.loss is not None else 0.0
    jitter = args.jitter if args.jitter is not None else 0.0

    if args.preset == "demo":
        bundle = scenarios.build_demo(seed, loss=loss, jitter=jitter)
    elif args.preset == "isav":
        bundle = scenarios.build_isav_population(
            args.count or 200, seed, loss=loss, jitter=jitter
        )
    elif args.preset == "rl":
        bundle = scenarios.build_rl_population(args.count or 100, seed, loss=loss, jitter=jitter)
    elif args.preset == "reach":
        bundle = scenarios.build_reach_population(
            args.count or 1000, args.cut or 149, seed, loss=loss, jitter=jitter
        )
    elif args.preset == "discovery":
        bundle = scenarios.build_discovery_demo(seed)
    elif args.preset == "supplemental":
        bundle = scenarios.build_supplemental_demo(args.count or 4, seed)
    else:  # pragma: no cover - argparse restricts choices
        raise CliError(f"unknown preset {args.preset}")

    sim_path = out / "simconfig.json"
    bundle.cfg.save(sim_path)
    campaign: dict = {
        "backend": "sim",
        "seed": seed,
        "out_dir": str(out),
        "sim_config": str(sim_path),
        "inputs": {},
    }

    if bundle.pairs:
        fileio.write_pairs(out / "pairs.jsonl", bundle.pairs)
        campaign["inputs"]["pairs"] = str(out / "pairs.jsonl")
    if bundle.scan_prefixes:
        fileio.write_prefix_list(out / "prefixes.txt", bundle.scan_prefixes)
        campaign["inputs"]["prefixes"] = str(out / "prefixes.txt")
    if bundle.as_map:
        fileio.write_as_map(out / "as_map.txt", bundle.as_map)
        campaign["inputs"]["as_map"] = str(out / "as_map.txt")
    if bundle.coords:
        fileio.write_coords(out / "coords.jsonl", bundle.coords)
        campaign["inputs"]["coords"] = str(out / "coords.jsonl")
    if bundle.reach_targets:
        fileio.write_address_list(out / "targets.txt", bundle.reach_targets)
        campaign["inputs"]["targets"] = str(out / "targets.txt")
    if bundle.proxy_rvps:
        rvp_pairs: dict = {}
        for pair in bundle.proxy_rvps:
            rvp_pairs.setdefault(_containing_48(pair.target), []).append(pair)
        fileio.write_pairs(out / "proxy_rvps.jsonl", rvp_pairs)
        campaign["inputs"]["proxy_rvps"] = str(out / "proxy_rvps.jsonl")
    if bundle.reach_truth:
        fileio.write_reach_truth(out / "truth_reach.jsonl", bundle.reach_truth)
        campaign["inputs"]["reach_truth"] = str(out / "truth_reach.jsonl")
    if bundle.hitlist:
        fileio.write_jsonl(
            out / "hitlist.jsonl",
            (
                {"prefix": str(p), "address": str(a)}
                for p, addrs in bundle.hitlist.items()
                for a in addrs
            ),
        )
        campaign["inputs"]["hitlist"] = str(out / "hitlist.jsonl")

    isav_truth = {
        r.served_prefix: r.isav_ingress for r in bundle.cfg.routers
    }
    if isav_truth:
        fileio.write_isav_truth(out / "truth_isav.jsonl", isav_truth)
        campaign["inputs"]["isav_truth"] = str(out / "truth_isav.jsonl")
    rl_truth = {
        r.address: oracle_rl_class(bundle.cfg, r.address, r.error_kind).value
        for r in bundle.cfg.routers
    }
    if rl_truth:
        fileio.write_rl_truth(out / "truth_rl.jsonl", rl_truth)
        campaign["inputs"]["rl_truth"] = str(out / "truth_rl.jsonl")

    (out / "campaign.json").write_text(json.dumps(campaign, indent=2, sort_keys=True) + "\n")
    print(f"scenario '{args.preset}' written to {out}")
    print(f"  routers={len(bundle.cfg.routers)} hosts={len(bundle.cfg.hosts)} "
          f"links={len(bundle.cfg.links)} cuts={len(bundle.cfg.unreachable_pairs)}")
    print(f"  campaign config: {out / 'campaign.json'}")
    return 0


# -- discover ------------------------------------------------------------


def cmd_discover(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    out = _out_dir(config, args)
    transport = _make_transport(config, args)
    prefixes = fileio.read_prefix_list(_input_path(config, args, "prefixes", required=True))
    if not prefixes:
        raise CliError("prefix list is empty")
    disco = config.get("discovery", {})
    caps = DiscoveryCaps(
        pair_cap=int(args.pair_cap if args.pair_cap is not None else disco.get("pair_cap", 50)),
        probe_cap=int(
            args.probe_cap if args.probe_cap is not None else disco.get("probe_cap", 1_000_000)
        ),
    )
    seed = int(_setting(config, args, "seed", 0) or 0)

    result = run_discovery(prefixes, caps, transport, seed)
    fileio.write_pairs(out / "discovered_pairs.jsonl", result.pairs)
    fileio.write_tsv(
        out / "discovery_summary.tsv",
        ["prefix", "sent", "pairs", "done"],
        (
            (prefix, st.sent, len(st.pairs_found), st.done)
            for prefix, st in result.states.items()
        ),
    )
    total = sum(len(v) for v in result.pairs.values())
    print(f"discovered {total} data pairs across {len(prefixes)} prefixes"
          + (" (aborted, partial results)" if result.aborted else ""))
    print(f"  pairs: {out / 'discovered_pairs.jsonl'}")
    return 1 if result.aborted else 0


# -- isav ----------------------------------------------------------------


def _isav_verdict_record(prefix, triple, verdict) -> dict:
    return {
        "prefix": str(prefix),
        "avg1": triple.avg1,
        "avg2": triple.avg2,
        "avg3": triple.avg3,
        "verdict": verdict.category.value,
        "rule": verdict.rule,
        "ratio_3_to_1": verdict.ratio_3_to_1,
        "ratio_2_to_3": verdict.ratio_2_to_3,
        "k": len(triple.samples1),
        "mode_consistency": triple.mode_consistency,
    }


def cmd_isav(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    out = _out_dir(config, args)
    transport = _make_transport(config, args)
    params = _build_params(config, args, "isav", {})
    seed = int(_setting(config, args, "seed", 0) or 0)
    pairs = fileio.read_pairs(_input_path(config, args, "pairs", required=True))

    verdict_path = out / "isav_verdicts.jsonl"
    manifest_path = out / "isav_manifest.jsonl"
    done_units = _manifest_load(manifest_path) if args.resume else set()
    if not args.resume:
        verdict_path.unlink(missing_ok=True)
        manifest_path.unlink(missing_ok=True)

    candidates_per_prefix = int(args.rvp_candidates or config.get("isav", {}).get("rvp_candidates", 3))
    prefix_rvps = {}
    no_rvp = []
    pacer = BurstPacer(transport)
    for prefix, plist in pairs.items():
        if str(prefix) in done_units:
            continue
        scored = []
        for pair in plist[:candidates_per_prefix]:
            pacer.pace(pair.periphery)
            sample = measure_rcv(
                pair.target,
                pair.error_kind,
                params.n_probe,
                None,
                transport,
                expect_origin=pair.periphery,
                receive_window_ms=params.receive_window_ms,
            )
            pacer.mark(pair.periphery)
            scored.append((pair, float(sample.rcv)))
        chosen = select_rvp(scored, params.n_probe)
        if chosen is None:
            no_rvp.append(prefix)
        else:
            prefix_rvps[prefix] = chosen

    campaign = run_isav_campaign(
        prefix_rvps, params, transport, transport.source_address, seed=seed
    )
    results = dict(campaign.results)

    if args.supplemental:
        hitlist_path = _input_path(config, args, "hitlist", required=False)
        hitlist: dict = {}
        if hitlist_path is not None:
            for record in fileio.read_jsonl(hitlist_path):
                hitlist.setdefault(fileio.parse_prefix(record["prefix"]), []).append(
                    parse_address(record["address"])
                )
        uncertain = {
            prefix: prefix_rvps.get(prefix)
            for prefix, (_t, v) in results.items()
            if v.category is IsavCategory.UNCERTAIN
        }
        # Prefixes that never produced a data pair are undecidable by the
        # error-based campaign; the hitlist is their only way in.
        for prefix in hitlist:
            if prefix not in results and prefix not in pairs and str(prefix) not in done_units:
                uncertain[prefix] = None
        if uncertain:
            updates = run_supplemental_echo(
                uncertain, hitlist, params, transport, transport.source_address, seed=seed
            )
            results.update(updates)

    for prefix, (triple, verdict) in results.items():
        fileio.append_jsonl(verdict_path, _isav_verdict_record(prefix, triple, verdict))
        fileio.append_jsonl(manifest_path, {"unit": str(prefix)})
    for prefix in no_rvp:
        fileio.append_jsonl(
            verdict_path,
            {
                "prefix": str(prefix),
                "avg1": 0.0,
                "avg2": 0.0,
                "avg3": 0.0,
                "verdict": IsavCategory.UNCERTAIN.value,
                "rule": "no_rvp",
                "ratio_3_to_1": None,
                "ratio_2_to_3": None,
                "k": 0,
                "mode_consistency": 0.0,
            },
        )
        fileio.append_jsonl(manifest_path, {"unit": str(prefix)})

    categories = {prefix: v.category for prefix, (_t, v) in results.items()}
    for prefix in no_rvp:
        categories[prefix] = IsavCategory.UNCERTAIN
    counts = {c: sum(1 for v in categories.values() if v is c) for c in IsavCategory}
    decided = counts[IsavCategory.VULNERABLE] + counts[IsavCategory.DEPLOYED]
    rows = []
    for cat in (IsavCategory.VULNERABLE, IsavCategory.DEPLOYED):
        pct = 100.0 * counts[cat] / decided if decided else 0.0
        rows.append((cat.value, counts[cat], f"{pct:.2f}%"))
    rows.append((IsavCategory.UNCERTAIN.value, counts[IsavCategory.UNCERTAIN], ""))
    rows.append(("total", len(categories), ""))
    fileio.write_tsv(out / "isav_prefix_summary.tsv", ["category", "prefixes", "pct_of_decided"], rows)

    as_map_path = _input_path(config, args, "as_map", required=False)
    if as_map_path is not None:
        as_map = fileio.read_as_map(as_map_path)
        mapped = {p: c for p, c in categories.items() if p in as_map}
        skipped = len(categories) - len(mapped)
        if skipped:
            print(f"  note: {skipped} prefixes missing from the AS map were not aggregated")
        as_verdicts = aggregate_as(mapped, as_map)
        as_counts: dict[str, int] = {}
        for verdict in as_verdicts.values():
            as_counts[verdict.category.value] = as_counts.get(verdict.category.value, 0) + 1
        total_as = len(as_verdicts)
        fileio.write_tsv(
            out / "isav_as_summary.tsv",
            ["category", "ases", "pct"],
            [
                (
                    name,
                    as_counts.get(name, 0),
                    f"{100.0 * as_counts.get(name, 0) / total_as:.2f}%" if total_as else "",
                )
                for name in ("vulnerable", "deployed", "inconsistent")
            ]
            + [("total", total_as, "")],
        )

    print(f"isav: {len(categories)} prefixes -> "
          + ", ".join(f"{c.value}={counts[c]}" for c in IsavCategory))
    print(f"  verdicts: {verdict_path}")
    return 0


# -- reach ----------------------------------------------------------------


def cmd_reach(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    out = _out_dir(config, args)
    transport = _make_transport(config, args)
    params = _build_params(config, args, "reach", {"repeats": 6, "lambda": 0.7})
    seed = int(_setting(config, args, "seed", 0) or 0)

    targets = fileio.read_address_list(_input_path(config, args, "targets", required=True))
    rvp_path = _input_path(config, args, "proxy_rvps", required=False)
    if rvp_path is None:
        rvp_path = _input_path(config, args, "pairs", required=True)
    pairs = fileio.read_pairs(rvp_path)
    all_pairs = [pair for plist in pairs.values() for pair in plist]
    rvp_count = int(args.rvp_count or config.get("reach", {}).get("rvp_count", 3))
    proxy_rvps = all_pairs[:rvp_count]
    if not proxy_rvps:
        raise CliError("pairs file holds no usable proxy RVPs")
    geo = fileio.read_coords(_input_path(config, args, "coords", required=True))

    verdict_path = out / "reach_verdicts.jsonl"
    manifest_path = out / "reach_manifest.jsonl"
    done_units = _manifest_load(manifest_path) if args.resume else set()
    if not args.resume:
        verdict_path.unlink(missing_ok=True)
        manifest_path.unlink(missing_ok=True)
    pending = [t for t in targets if str(t) not in done_units]

    reach_cfg = config.get("reach", {})
    result = run_reach_campaign(
        pending,
        proxy_rvps,
        params,
        transport,
        geo=geo,
        seed=seed,
        rotation_gap_ms=int(reach_cfg.get("rotation_gap_ms", 300_000)),
        baseline_refresh=int(reach_cfg.get("baseline_refresh", 20)),
    )
    for target, record in result.records.items():
        verdict = record.verdict
        assert verdict is not None
        fileio.append_jsonl(
            verdict_path,
            {
                "target": str(target),
                "avg1": verdict.avg1,
                "avg2": verdict.avg2,
                "ratio": verdict.ratio,
                "verdict": verdict.category.value,
                "k": verdict.k,
            },
        )
        fileio.append_jsonl(manifest_path, {"unit": str(target)})

    verdicts = result.verdicts()
    counts: dict[str, int] = {}
    for v in verdicts.values():
        counts[v.category.value] = counts.get(v.category.value, 0) + 1
    print("reach: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))

    truth_path = _input_path(config, args, "reach_truth", required=False)
    if truth_path is not None:
        truth = fileio.read_reach_truth(truth_path)
        scorable = {t: v for t, v in truth.items() if t in verdicts}
        report = evaluate(verdicts, scorable, EVAL_LAMBDAS, primary_lam=params.lam)
        fileio.write_tsv(
            out / "reach_eval.tsv",
            ["lambda", "precision", "recall", "accuracy", "f_score"],
            (
                (m.lam, f"{m.precision:.3f}", f"{m.recall:.3f}", f"{m.accuracy:.3f}", f"{m.f_score:.3f}")
                for m in report.per_lambda
            ),
        )
        fileio.write_tsv(
            out / "reach_roc.tsv",
            ["fpr", "tpr"],
            ((f"{x:.6f}", f"{y:.6f}") for x, y in report.roc_points),
        )
        print(
            f"  eval @ lambda={params.lam}: precision={report.precision:.3f} "
            f"recall={report.recall:.3f} accuracy={report.accuracy:.3f} auc={report.auc:.3f}"
        )
    print(f"  verdicts: {verdict_path}")
    return 0


# -- rl-classify -----------------------------------------------------------


def cmd_rl_classify(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    out = _out_dir(config, args)
    transport = _make_transport(config, args)
    params = _build_params(config, args, "rl_classify", {"repeats": 1})
    seed = int(_setting(config, args, "seed", 0) or 0)
    pairs = fileio.read_pairs(_input_path(config, args, "pairs", required=True))
    flat = [(prefix, pair) for prefix, plist in pairs.items() for pair in plist]

    rng = random.Random(seed)
    pacer = BurstPacer(transport)
    sums1: dict[int, float] = {}
    sums2: dict[int, float] = {}
    for _round in range(params.repeats):
        for phase in (1, 2):
            for i, (_prefix, pair) in enumerate(flat):
                noise = None
                if phase == 2:
                    local_spoof, _ = spoof_sources(
                        transport.source_address, pair.periphery, rng
                    )
                    noise = NoiseSpec(params.m_noise, local_spoof)
                pacer.pace(pair.periphery)
                sample = measure_rcv(
                    pair.target,
                    pair.error_kind,
                    params.n_probe,
                    noise,
                    transport,
                    expect_origin=pair.periphery,
                    receive_window_ms=params.receive_window_ms,
                )
                pacer.mark(pair.periphery)
                bucket = sums1 if phase == 1 else sums2
                bucket[i] = bucket.get(i, 0.0) + sample.rcv

    records = []
    class_counts: dict[str, dict[str, int]] = {}
    for i, (_prefix, pair) in enumerate(flat):
        avg1 = sums1.get(i, 0.0) / params.repeats
        avg2 = sums2.get(i, 0.0) / params.repeats
        cls = classify(avg1, avg2, params.n_probe, params.lam)
        kind = pair.error_kind.value
        records.append(
            {
                "address": str(pair.periphery),
                "target": str(pair.target),
                "kind": kind,
                "rcv1_avg": avg1,
                "rcv2_avg": avg2,
                "n": params.n_probe,
                "classification": cls.value,
            }
        )
        class_counts.setdefault(kind, {}).setdefault(cls.value, 0)
        class_counts[kind][cls.value] += 1

    fileio.write_jsonl(out / "rl_classes.jsonl", records)
    rows = []
    for kind, counts in sorted(class_counts.items()):
        total = sum(counts.values())
        for name in ("global", "strict", "loose", "unclassified"):
            c = counts.get(name, 0)
            rows.append((kind, name, c, f"{100.0 * c / total:.2f}%"))
    fileio.write_tsv(out / "rl_summary.tsv", ["kind", "classification", "count", "pct"], rows)
    print(f"rl-classify: {len(records)} targets")
    for row in rows:
        print("  " + "\t".join(str(c) for c in row))
    return 0


# -- report -----------------------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    out = Path(args.results_dir)
    if not out.is_dir():
        raise CliError(f"results directory not found: {out}")
    found = False

    verdicts = out / "isav_verdicts.jsonl"
    if verdicts.is_file():
        found = True
        counts: dict[str, int] = {}
        for record in fileio.read_jsonl(verdicts):
            counts[record["verdict"]] = counts.get(record["verdict"], 0) + 1
        print("ISAV verdicts:")
        for name, count in sorted(counts.items()):
            print(f"  {name}: {count}")

    reach = out / "reach_verdicts.jsonl"
    if reach.is_file():
        found = True
        counts = {}
        for record in fileio.read_jsonl(reach):
            counts[record["verdict"]] = counts.get(record["verdict"], 0) + 1
        print("Reachability verdicts:")
        for name, count in sorted(counts.items()):
            print(f"  {name}: {count}")

    for table in ("reach_eval.tsv", "rl_summary.tsv", "isav_as_summary.tsv",
                  "isav_prefix_summary.tsv", "discovery_summary.tsv"):
        path = out / table
        if path.is_file():
            found = True
            print(f"{table}:")
            for line in path.read_text().splitlines():
                print("  " + line)

    if not found:
        raise CliError(f"no campaign outputs found in {out}")
    return 0


# -- entry point -------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON campaign config file")
    parser.add_argument("--seed", type=int, help="campaign seed")
    parser.add_argument("--backend", choices=["sim", "raw"], help="packet substrate")
    parser.add_argument("--out", dest="out_dir", help="output directory")
    parser.add_argument("--sim-config", dest="sim_config", help="simulated world JSON")
    parser.add_argument(
        "--acknowledge-spoofing",
        action="store_true",
        help="required to run the raw backend, which emits spoofed packets",
    )


def _add_params(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-probe", dest="n_probe", type=int)
    parser.add_argument("--m-noise", dest="m_noise", type=int)
    parser.add_argument("--lambda", dest="lam", type=float)
    parser.add_argument("--repeats", dest="repeats", type=int)
    parser.add_argument("--window-ms", dest="window_ms", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icmpscope",
        description="ICMP rate-limiting side-channel measurements over a simulated IPv6 internet",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a scenario and its ground truth files")
    _add_common(p)
    p.add_argument("--preset", choices=["demo", "isav", "rl", "reach", "discovery", "supplemental"],
                   default="demo")
    p.add_argument("--count", type=int, help="population size (meaning depends on preset)")
    p.add_argument("--cut", type=int, help="unconnected targets (reach preset)")
    p.add_argument("--loss", type=float, help="per-link loss probability")
    p.add_argument("--jitter", type=float, help="per-link jitter fraction")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("discover", help="find data pairs across announced prefixes")
    _add_common(p)
    p.add_argument("--prefixes", help="prefix list file (one CIDR per line)")
    p.add_argument("--pair-cap", dest="pair_cap", type=int)
    p.add_argument("--probe-cap", dest="probe_cap", type=int)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("isav", help="infer inbound source address validation per prefix")
    _add_common(p)
    _add_params(p)
    p.add_argument("--pairs", help="data-pair file")
    p.add_argument("--as-map", dest="as_map", help="prefix to AS number map")
    p.add_argument("--supplemental", action="store_true",
                   help="retry uncertain prefixes through echo-reply limiting")
    p.add_argument("--hitlist", help="extra responder addresses for the supplemental pass")
    p.add_argument("--rvp-candidates", dest="rvp_candidates", type=int)
    p.add_argument("--resume", action="store_true", help="skip prefixes already in the manifest")
    p.set_defaults(func=cmd_isav)

    p = sub.add_parser("reach", help="infer reachability between targets and the RVP site")
    _add_common(p)
    _add_params(p)
    p.add_argument("--targets", help="target address list")
    p.add_argument("--pairs", help="data-pair file supplying proxy RVPs")
    p.add_argument("--coords", help="coordinates file")
    p.add_argument("--reach-truth", dest="reach_truth", help="ground truth for evaluation")
    p.add_argument("--rvp-count", dest="rvp_count", type=int)
    p.add_argument("--resume", action="store_true", help="skip targets already in the manifest")
    p.set_defaults(func=cmd_reach)

    p = sub.add_parser("rl-classify", help="classify rate-limiter implementations")
    _add_common(p)
    _add_params(p)
    p.add_argument("--pairs", help="data-pair file")
    p.set_defaults(func=cmd_rl_classify)

    p = sub.add_parser("report", help="summarize campaign outputs in a directory")
    p.add_argument("results_dir")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, TransportError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
