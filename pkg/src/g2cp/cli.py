"""Command-line entry point: load, run, replay, verify, bench.

Exit codes: 0 success, 1 usage, 2 input parse failure, 3 verification
failure (any MISMATCH or a non-Grounded verdict), 4 scenario expectation
failure. Reports are line oriented; ``--format=table`` aligns columns.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TextIO

from .agents import Scenario, check_expectations, default_roster, fixture_dir, run_scenario
from .audit import AuditLog, Claim, ProvenanceTrace, replay, verify_claim
from .errors import BrokenChain, CorruptEntry, G2CPError
from .graph import load_graph_file, parse_ts
from .protocol import EdgeRef
from .stats import bench_traversal, compute_stats, format_rows
from .traversal import ExecutionLimits

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_VERIFY, EXIT_SCENARIO = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class ClaimFile:
    claim: Claim
    trace: tuple[int, ...]

    @classmethod
    def load(cls, path: Path) -> "ClaimFile":
        """JSON object with ``nodes`` (ids), ``edges`` ([source, type, target]
        or [source, type, target, ts]) and ``trace`` (audit seqs)."""
        d = json.loads(path.read_text(encoding="utf-8"))
        edges = []
        for e in d.get("edges", []):
            ref = EdgeRef(e[0], e[1], e[2]) if len(e) == 3 else EdgeRef(e[0], e[1], e[2], parse_ts(e[3]))
            edges.append(ref)
        return cls(Claim(frozenset(d.get("nodes", [])), frozenset(edges)), tuple(d["trace"]))


def _resolve(path: str) -> Path:
    """Paths that do not exist as given are looked up under the fixture root."""
    p = Path(path)
    if p.exists():
        return p
    alt = fixture_dir() / path
    if alt.exists():
        return alt
    raise UsageError(f"no such file: {path}")


def _limits(args) -> ExecutionLimits:
    base = ExecutionLimits()
    return ExecutionLimits(
        timeout_ms=args.limits_timeout_ms or base.timeout_ms,
        max_result_nodes=args.limits_max_nodes or base.max_result_nodes,
        frontier_cap=args.limits_frontier_cap or base.frontier_cap,
        max_effective_depth=base.max_effective_depth,
    )


def _table(rows: list[tuple], style: str) -> str:
    rows = [tuple(str(c) for c in r) for r in rows]
    if style == "table" and rows:
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        return "".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n" for r in rows)
    return "".join("\t".join(r) + "\n" for r in rows)


# ---------------------------------------------------------------- commands

def cmd_load(args, out: TextIO) -> int:
    g = load_graph_file(_resolve(args.graph))
    s = compute_stats(g)
    rows = [("nodes", s.node_count), ("edges", s.edge_count), ("avg_out_degree", round(s.avg_degree, 4)),
            ("avg_total_degree", round(s.total_degree, 4)), ("density", round(s.density, 6)),
            ("diameter", s.diameter_label), ("version", g.version), ("digest", g.digest())]
    out.write(_table(rows, args.format))
    return EXIT_OK


def cmd_run(args, out: TextIO) -> int:
    sc = Scenario.load(_resolve(args.scenario))
    run = run_scenario(sc, _limits(args))
    out.write(f"scenario\t{sc.name}\n")
    if run.rejection is not None:
        err = run.rejection.operation
        out.write(f"rejected\t{err.code}\t{err.detail}\n")
    for item in run.transcript:
        out.write(f"--- message {item.seq}\n{item.body if item.message is not None else item.envelope}")
    out.write(_table([("seq", "tokens")] + list(run.tokens.per_message), args.format))
    out.write(f"tokens_total\t{run.tokens.total_inter_agent}\n")
    out.write(f"tokens_excluded\tquery={run.tokens.excluded[0]}\tresponse={run.tokens.excluded[1]}\n")
    for c in run.ledger:
        out.write(f"commitment\t{c.id}\t{c.debtor}->{c.creditor}\t{c.kind.value}\t{c.state.value}\n")
    out.write(f"claim_nodes\t{','.join(sorted(run.claim.nodes))}\n")
    out.write(f"response\t{run.response}\n")
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            run.bus.log.dump(fh)
    problems = check_expectations(run)
    for p in problems:
        out.write(f"FAIL\t{p}\n")
    return EXIT_SCENARIO if problems else EXIT_OK


def cmd_replay(args, out: TextIO) -> int:
    log = AuditLog.load_file(_resolve(args.log))
    graph = load_graph_file(_resolve(args.graph))
    try:
        report = replay(log, graph, default_roster(graph, args.key_seed.encode()), _limits(args))
    except (BrokenChain, CorruptEntry) as exc:
        out.write(f"BROKEN\t{exc}\n")
        return EXIT_VERIFY
    rows = [(c.seq, c.status, "; ".join(c.reasons)) for c in report.checks]
    out.write(_table(rows, args.format))
    return EXIT_OK if report.all_match else EXIT_VERIFY


def cmd_verify(args, out: TextIO) -> int:
    cf = ClaimFile.load(_resolve(args.claim))
    log = AuditLog.load_file(_resolve(args.log))
    graph = load_graph_file(_resolve(args.graph))
    try:
        verdict = verify_claim(cf.claim, ProvenanceTrace(cf.claim, cf.trace), log, graph,
                               default_roster(graph, args.key_seed.encode()), _limits(args))
    except (BrokenChain, CorruptEntry) as exc:
        out.write(f"BROKEN\t{exc}\n")
        return EXIT_VERIFY
    out.write(f"verdict\t{verdict.name}\n")
    for field in ("missing_nodes", "missing_edges", "reasons"):
        for item in sorted(map(str, getattr(verdict, field, ()))):
            out.write(f"{field}\t{item}\n")
    return EXIT_OK if verdict.name == "Grounded" else EXIT_VERIFY


def cmd_bench(args, out: TextIO) -> int:
    rows = list(bench_traversal(args.sizes, args.degrees, args.depths, args.via, args.seed))
    out.write(format_rows(rows, args.format))
    return EXIT_OK if all(r.within_bound for r in rows) else EXIT_VERIFY


# ---------------------------------------------------------------- parsing

def _ints(text: str) -> list[int]:
    try:
        return [int(float(x)) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--limits-timeout-ms", type=int, default=None)
    common.add_argument("--limits-max-nodes", type=int, default=None)
    common.add_argument("--limits-frontier-cap", type=int, default=None)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--key-seed", default="g2cp", help="seed the agent keys were derived from")
    common.add_argument("--format", choices=("plain", "table"), default="plain")

    p = _Parser(prog="g2cp", description="Graph-grounded agent protocol runtime.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("load", parents=[common], help="load a graph file and print statistics")
    s.add_argument("graph")
    s = sub.add_parser("run", parents=[common], help="run a scenario file")
    s.add_argument("scenario")
    s.add_argument("--log", help="write the audit log to this path")
    s = sub.add_parser("replay", parents=[common], help="replay an audit log against its initial graph")
    s.add_argument("log")
    s.add_argument("graph")
    s = sub.add_parser("verify", parents=[common], help="verify a claim file against an audit log")
    s.add_argument("claim")
    s.add_argument("log")
    s.add_argument("graph")
    s = sub.add_parser("bench", parents=[common], help="traversal complexity benchmark")
    s.add_argument("--sizes", type=_ints, default=[1_000, 10_000, 100_000])
    s.add_argument("--degrees", type=_ints, default=[2, 4, 8])
    s.add_argument("--depths", type=_ints, default=[1, 2, 3])
    s.add_argument("--via", type=int, default=1)
    return p


COMMANDS = {"load": cmd_load, "run": cmd_run, "replay": cmd_replay, "verify": cmd_verify, "bench": cmd_bench}


def main(argv: Sequence[str] | None = None, out: TextIO | None = None, err: TextIO | None = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        for name in ("limits_timeout_ms", "limits_max_nodes", "limits_frontier_cap"):
            value = getattr(args, name)
            if value is not None and value <= 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        err.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except (G2CPError, json.JSONDecodeError, KeyError, IndexError, ValueError) as exc:
        err.write(f"input error: {type(exc).__name__}: {exc}\n")
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
