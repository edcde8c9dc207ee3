"""Acceptance criteria at full counts. Each test prints one PASS/FAIL line,
collected again in the terminal summary."""

import math
import random
import time
from datetime import datetime, timedelta, timezone

import pytest

from g2cp.agents import (
    DIAGNOSTIC, DISPATCHER, INGESTION, PROCEDURAL, SYNTHESIS, Bus, Scenario, check_expectations,
    count_scenario_tokens, default_roster, discover_patterns, fixture_dir, load_ftma, run_scenario,
    scenario_paths,
)
from g2cp.audit import (
    AuditLog, Claim, Fabricated, FalsifiedTrace, Grounded, ProvenanceTrace, replay, trace_support, verify_claim,
)
from g2cp.cli import ClaimFile
from g2cp.commitment import rebuild
from g2cp.errors import ParseError, UnknownSender, ValidationFailed
from g2cp.graph import Edge, ExplicitIds, GraphDelta, load_graph_file
from g2cp.protocol import (
    ConversationContext, EdgeRef, Message, Performative, Result, ReturnFormat, Traverse, Update,
)
from g2cp.security import HumanReview, SignedEnvelope, TrustState, sign, update_trust, verify_signature
from g2cp.stats import bench_traversal
from g2cp.traversal import NO_LIMITS, ExecutionLimits, traverse
from g2cp.update import apply_update, provenance_for

from oracles import (
    MUTABLE_FIELDS, SetState, detected, mutate_entry, oracle_cooccurrence, oracle_reach, oracle_scores,
    oracle_subgraph_edges, random_delta, random_graph, random_scenario_run, random_sources, random_via, rechain,
    synthetic_history,
)

PLANT = load_graph_file(fixture_dir() / "turbomatic_mini.jsonl")
GOLDEN = ("worked_example", "case_study")
NOW = datetime(2025, 1, 1, tzinfo=timezone.utc)


def load_scenario(name):
    return Scenario.load(fixture_dir() / "scenarios" / f"{name}.json")


def golden_log(name):
    return AuditLog.load_file(fixture_dir() / "golden" / f"{name}.log.jsonl")


def test_c01_determinism(verdict):
    rng = random.Random(1)
    start = time.perf_counter()
    pairs = mismatches = 0
    for gi in range(1000):
        g = random_graph(rng, 200)
        permuted = g.permuted(gi)
        for _ in range(10):
            src, via, h = random_sources(rng, g), random_via(rng), rng.randint(0, 4)
            fmt = rng.choice(list(ReturnFormat))
            cap = rng.choice((None, 3, 10))
            limits = ExecutionLimits(frontier_cap=cap, max_result_nodes=cap * 4) if cap else NO_LIMITS
            first = traverse(src, via, h, fmt, g, limits).canonical()
            again = traverse(src, via, h, fmt, g, limits).canonical()
            moved = traverse(list(reversed(src)), via, h, fmt, permuted, limits).canonical()
            mismatches += not (first == again == moved)
            pairs += 1
    elapsed = time.perf_counter() - start
    ok = pairs == 10_000 and mismatches == 0 and elapsed < 60
    assert verdict(1, "determinism", ok, f"{pairs} pairs, {mismatches} mismatches, {elapsed:.1f}s")


def test_c02_traversal_oracle(verdict):
    rng = random.Random(2)
    bad = 0
    for _ in range(1000):
        g = random_graph(rng, 50)
        src, via = random_sources(rng, g), random_via(rng)
        edges = list(g.edges.values())
        for h in range(5):
            r = traverse(src, via, h, ReturnFormat.SUBGRAPH, g, NO_LIMITS)
            dist = oracle_reach(edges, src, via, h)
            best, conv = oracle_scores(edges, sorted(set(src)), via, set(dist), h)
            good = (r.nodes == dist and r.edges == oracle_subgraph_edges(edges, set(dist), via)
                    and r.convergence == conv and r.confidence.keys() == best.keys()
                    and all(math.isclose(r.confidence[v], best[v], rel_tol=1e-12) for v in best))
            bad += not good
    assert verdict(2, "traversal oracle", bad == 0, f"5000 traversals, {bad} disagreements")


def test_c03_update_oracle(verdict):
    rng = random.Random(3)
    prov = provenance_for("A_I", "msg", 1.0, NOW)
    bad = 0
    for _ in range(500):
        g = random_graph(rng, 15)
        state, counter, applied = SetState(g), [0], []
        ok = True
        for _ in range(rng.randint(1, 12)):
            delta, valid = random_delta(rng, state, counter)
            try:
                apply_update(g, delta, prov)
                ok &= valid
                state.fold(delta)
                applied.append(delta)
            except ValidationFailed:
                ok &= not valid
            ok &= state.matches(g)
        k = rng.randint(0, g.version)
        replayed = g.base()
        for d in applied[:k]:
            apply_update(replayed, d, prov)
        ok &= g.state_at(k) == replayed
        g.rollback(k, timestamp=NOW)
        ok &= g == replayed
        bad += not ok
    assert verdict(3, "update oracle", bad == 0, f"500 sequences, {bad} failures")


def test_c04_audit(verdict):
    rng = random.Random(4)
    all_match, missed, total = True, 0, 0
    for name in GOLDEN:
        roster = default_roster(PLANT)
        entries = list(golden_log(name))
        all_match &= replay(entries, PLANT, roster).all_match
        for _ in range(100):
            i = rng.randrange(len(entries))
            mutated = entries[:i] + [mutate_entry(rng, entries[i], rng.choice(MUTABLE_FIELDS))] + entries[i + 1:]
            missed += not detected(mutated, PLANT, roster)
            total += 1
    ok = all_match and missed == 0
    assert verdict(4, "audit replay and tamper detection", ok, f"all MATCH={all_match}, {total - missed}/{total} detected")


def _inject(rng, claim, trace, entries, support_nodes, support_edges):
    """One fabricated claim or falsified log built from an honest claim."""
    kind = rng.randrange(4)
    log = AuditLog()
    log.entries = list(entries)
    if kind == 0:  # node absent from the graph
        claim = Claim(claim.nodes | {f"Fault:invented_{rng.randrange(10**6)}"}, claim.edges)
    elif kind == 1:  # real node the trace never returned
        outside = sorted(set(PLANT.nodes) - support_nodes)
        claim = Claim(claim.nodes | {rng.choice(outside)}, claim.edges)
    elif kind == 2:  # edge the trace never returned
        outside = sorted(e.id for e in PLANT.edges.values() if EdgeRef.of(e) not in support_edges)
        e = PLANT.edges[rng.choice(outside)]
        claim = Claim(claim.nodes, claim.edges | {EdgeRef.of(e)})
    else:  # a cited entry rewritten, with or without re-hashing the chain
        seq = rng.choice(trace)
        field = rng.choice(("envelope", "outcome", "result_digest", "state_digest"))
        edited = list(entries)
        edited[seq - 1] = mutate_entry(rng, entries[seq - 1], field)
        log.entries = rechain(edited) if rng.random() < 0.5 else edited
    return claim, log


def test_c05_hallucination(verdict):
    rng = random.Random(5)
    honest, caught = 0, 0
    cases = []
    for name in GOLDEN:
        cf = ClaimFile.load(fixture_dir() / "golden" / f"{name}_claim.json")
        log = golden_log(name)
        roster = default_roster(PLANT)
        v = verify_claim(cf.claim, ProvenanceTrace(cf.claim, cf.trace), log, PLANT, roster)
        honest += v == Grounded()
        sn, se = trace_support(replay(log, PLANT, roster), cf.trace)
        cases.append((cf, list(log), sn, se, roster))
    for i in range(200):
        cf, entries, sn, se, roster = cases[i % 2]
        claim, log = _inject(rng, cf.claim, cf.trace, entries, sn, se)
        v = verify_claim(claim, ProvenanceTrace(claim, cf.trace), log, PLANT, roster)
        caught += isinstance(v, (Fabricated, FalsifiedTrace))
    ok = honest == 2 and caught == 200
    assert verdict(5, "hallucination detection", ok, f"honest Grounded {honest}/2, caught {caught}/200")


def test_c06_worked_example(verdict):
    we = run_scenario(load_scenario("worked_example"))
    diag = next(m.operation for m in we.messages if m.sender == DIAGNOSTIC)
    conf_ok = len(diag.confidence) == 3 and all(
        abs(a - b) <= 1e-9 for a, b in zip(diag.confidence, [0.91, 0.84, 0.72]))
    cs = run_scenario(load_scenario("case_study"))
    cs_diag = next(m.operation for m in cs.messages if m.sender == DIAGNOSTIC)
    ok = (len(we.messages) == 5 and conf_ok and check_expectations(we) == []
          and cs_diag.ranked[0] == "Fault:bearing_wear_B4521" and check_expectations(cs) == [])
    assert verdict(6, "worked example and case study", ok,
                   f"{len(we.messages)} messages, confidences {list(diag.confidence)}, top {cs_diag.ranked[0]}")


def test_c07_tokens(verdict):
    ratios = {}
    for path in scenario_paths():
        sc = Scenario.load(path)
        if sc.ftma is None or sc.name == "case_study":
            continue
        run = run_scenario(sc)
        ratios[sc.name] = run.tokens.total_inter_agent / count_scenario_tokens(load_ftma(sc.ftma)).total_inter_agent
    ok = len(ratios) == 5 and all(r <= 0.40 for r in ratios.values())
    assert verdict(7, "token ratio", ok, ", ".join(f"{k}={v:.3f}" for k, v in sorted(ratios.items())))


@pytest.mark.slow
def test_c08_complexity(verdict):
    start = time.perf_counter()
    rows = list(bench_traversal())
    elapsed = time.perf_counter() - start
    by_key = {}
    for row in rows:
        by_key.setdefault((row.r, row.h), set()).add(row.expanded_nodes)
    ok = (len(rows) == 27 and all(r.within_bound for r in rows)
          and all(len(v) == 1 for v in by_key.values()) and elapsed < 300)
    assert verdict(8, "traversal complexity", ok, f"{len(rows)} rows within bound, {elapsed:.1f}s")


def test_c09_security(verdict):
    rng = random.Random(9)
    bus = Bus(PLANT.copy())
    op = Traverse(ExplicitIds(frozenset({"Component:HC-3"})), frozenset({"has_symptom"}), 1, ReturnFormat.SUBGRAPH)
    agents = sorted(bus.identities)
    tamper_caught = 0
    for i in range(200):
        msg = Message(DISPATCHER, DIAGNOSTIC, Performative.REQUEST, op, ConversationContext(f"t{i}"))
        env = sign(msg, bus.identities[DISPATCHER], i + 1)
        text = env.signed_text
        j = rng.randrange(len(text))
        c = rng.choice([ch for ch in "abcXYZ019:-_ ." if ch != text[j]])
        tampered = text[:j] + c + text[j + 1:] + env.text[len(text):]
        try:
            tamper_caught += not verify_signature(SignedEnvelope.from_text(tampered), bus.roster)
        except (ParseError, UnknownSender):
            tamper_caught += 1
    forged_caught = 0
    for i in range(100):
        claimed, signer = rng.sample(agents, 2)
        msg = Message(claimed, DIAGNOSTIC if claimed != DIAGNOSTIC else PROCEDURAL, Performative.REQUEST, op,
                      ConversationContext(f"f{i}"))
        before = len(bus.events)
        bus.post(sign(msg, bus.identities[signer], 10_000 + i).text, msg.receiver)
        bus.pump()
        forged_caught += [e.kind for e in bus.events[before:]] == ["bad-signature"]
    g = PLANT.copy()
    upd_bus = Bus(g)
    delta = GraphDelta(add_edges=(Edge("Fault:seal_degradation", "Symptom:pressure_drop", "causes"),))
    upd_bus.send(Message(DIAGNOSTIC, INGESTION, Performative.UPDATE, Update(delta), ConversationContext("u")))
    upd_bus.pump()
    reply = upd_bus.transcript[-1].message
    denied = (g.version == 0 and reply.performative is Performative.REJECT
              and reply.operation.code == "UNAUTHORIZED")
    trust = TrustState()
    trust_ok = trust.score(DIAGNOSTIC) == 1.0
    for k in range(1, 8):
        s = update_trust(trust, DIAGNOSTIC, False)
        trust_ok &= abs(s - 0.9 ** k) <= 1e-12 and bool(trust.events) == (s < 0.5)
    trust_ok &= trust.events == [HumanReview(DIAGNOSTIC, trust.score(DIAGNOSTIC))]
    ok = tamper_caught == 200 and forged_caught == 100 and denied and trust_ok
    assert verdict(9, "security", ok, f"tamper {tamper_caught}/200, forged {forged_caught}/100, "
                   f"A_D update denied={denied}, trust {trust.score(DIAGNOSTIC):.6f}")


def test_c10_synthesis(verdict):
    proposals = discover_patterns(load_graph_file(fixture_dir() / "synthesis_partx.jsonl"))
    fixture_ok = len(proposals) == 1 and proposals[0].confidence == 0.75
    rng = random.Random(10)
    window = timedelta(hours=48)
    bad = 0
    for _ in range(200):
        g, orders, observations = synthetic_history(rng)
        expected = {}
        for f, times in orders.items():
            for c, obs in observations.items():
                n = oracle_cooccurrence(times, obs, window) if obs else 0
                if n >= 5 and n / len(times) >= 0.6:
                    expected[(f, c)] = (n, len(times))
        got = {(p.fault, p.condition): (p.count, p.total) for p in discover_patterns(g, window)}
        bad += got != expected
    ok = fixture_ok and bad == 0
    assert verdict(10, "pattern synthesis", ok, f"fixture proposals {len(proposals)}, 200 random, {bad} mismatches")


def test_c11_commitments(verdict):
    bad = 0
    runs = [run_scenario(Scenario.load(p)) for p in scenario_paths()]
    runs += [random_scenario_run(seed, PLANT) for seed in range(100)]
    for r in runs:
        report = replay(r.bus.log, r.initial, r.bus.roster)
        bad += bool(r.ledger.pending()) or rebuild(r.bus.log, report) != r.ledger
    ok = bad == 0
    assert verdict(11, "commitment closure", ok, f"{len(runs)} runs, {bad} with pending or divergent ledgers")
