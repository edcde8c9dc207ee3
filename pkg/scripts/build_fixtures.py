"""Regenerate the graph fixtures under src/g2cp/fixtures.

The shared maintenance graph carries every scenario: the HC-3 pressure-drop
diagnosis, the grinding-noise case, the HC-3/HC-7 shared-fault question,
a spec lookup and a failure prediction for pump P-101. The synthesis graph
holds twenty Part X work orders for co-occurrence mining.

    python scripts/build_fixtures.py
"""

from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "g2cp" / "fixtures"

NODE_TYPES = ["Component", "Symptom", "Fault", "Procedure", "Part", "SafetyProtocol", "WorkOrder",
              "Sensor", "Spec", "Environment"]
SIGNATURES = [
    ("Component", "has_symptom", "Symptom"),
    ("Symptom", "indicates", "Fault"), ("Symptom", "causes", "Fault"),
    ("Fault", "causes", "Fault"), ("Fault", "causes", "Symptom"), ("Fault", "leads_to", "Fault"),
    ("Fault", "correlates_with", "Sensor"), ("Fault", "correlates_with", "Environment"),
    ("Part", "correlates_with", "Environment"),
    ("Fault", "located_in", "Part"), ("Fault", "located_in", "Component"),
    ("Fault", "addressed_by", "Procedure"), ("Part", "addressed_by", "Procedure"),
    ("Procedure", "requires", "Part"), ("Procedure", "precedes", "Procedure"),
    ("Fault", "requires_part", "Part"), ("Procedure", "requires_part", "Part"),
    ("Fault", "has_safety_protocol", "SafetyProtocol"), ("Procedure", "has_safety_protocol", "SafetyProtocol"),
    ("Fault", "occurred_in", "WorkOrder"), ("Component", "occurred_in", "WorkOrder"),
    ("Part", "occurred_in", "WorkOrder"), ("Part", "replaced_in", "WorkOrder"),
    ("Component", "failed_after", "Fault"), ("Fault", "failed_after", "Fault"),
    ("Component", "has_spec", "Spec"), ("Component", "has_sensor", "Sensor"),
    ("Component", "part_of", "Component"), ("Part", "part_of", "Component"),
    ("Part", "risk_indicator", "Sensor"), ("Fault", "risk_indicator", "Sensor"),
    ("Part", "risk_indicator", "Environment"), ("Fault", "risk_indicator", "Environment"),
    ("Sensor", "observed_at", "Component"), ("Environment", "observed_at", "Component"),
]
EDGE_TYPES = sorted({s[1] for s in SIGNATURES})


def ts(dt: datetime) -> str:
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


class Builder:
    def __init__(self):
        self.nodes: list[dict] = []
        self.edges: list[dict] = []

    def node(self, nid: str, name: str, **attrs):
        rec = {"kind": "node", "id": nid, "type": nid.split(":", 1)[0], "name": name}
        if attrs:
            rec["attrs"] = attrs
        self.nodes.append(rec)

    def edge(self, src: str, type_: str, dst: str, weight: float = 1.0, at: datetime | None = None):
        rec = {"kind": "edge", "from": src, "to": dst, "type": type_, "weight": weight}
        if at is not None:
            rec["ts"] = ts(at)
        self.edges.append(rec)

    def write(self, path: Path):
        schema = {"kind": "schema", "node_types": NODE_TYPES, "edge_types": EDGE_TYPES,
                  "signatures": [list(s) for s in SIGNATURES]}
        with path.open("w", encoding="utf-8") as fh:
            for rec in [schema] + self.nodes + self.edges:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def turbomatic_mini() -> Builder:
    b = Builder()
    # components and sensors
    b.node("Component:HC-3", "hydraulic circuit HC-3")
    b.node("Component:HC-7", "hydraulic circuit HC-7")
    b.node("Component:P-101", "pump P-101", kind="centrifugal")
    b.node("Component:HP-2", "hydraulic press HP-2")
    b.node("Sensor:PT-31", "pressure transducer PT-31")
    b.node("Sensor:FT-32", "flow meter FT-32")
    b.node("Sensor:TS-33", "temperature sensor TS-33")
    b.node("Spec:P-101_rated_pressure", "P-101 rated pressure spec", value=160, unit="bar")
    # symptoms
    b.node("Symptom:pressure_drop", "pressure drop")
    b.node("Symptom:flow_reduction", "flow reduction")
    b.node("Symptom:cavitation_noise", "cavitation noise")
    b.node("Symptom:grinding_1200RPM", "grinding noise at 1200 RPM")
    b.node("Symptom:pressure_fluctuation", "pressure fluctuations")
    b.node("Symptom:temp_85C", "85°C oil temperature")
    # faults
    b.node("Fault:seal_degradation", "seal degradation")
    b.node("Fault:valve_blockage", "valve blockage")
    b.node("Fault:pump_cavitation", "pump cavitation")
    b.node("Fault:bearing_wear_B4521", "bearing wear B-4521")
    b.node("Fault:lubrication_failure", "lubrication failure")
    b.node("Fault:shaft_misalignment", "shaft misalignment")
    b.node("Fault:impeller_wear", "impeller wear")
    b.node("Fault:motor_overload", "motor overload")
    # procedures, parts, safety
    b.node("Procedure:P-118", "seal kit replacement procedure P-118")
    b.node("Procedure:P-205", "bearing replacement procedure P-205")
    b.node("Part:SK-12", "seal kit SK-12")
    b.node("Part:B-4521", "Bearing B-4521", serial="SN-9042", install_date="2021-03-15")
    b.node("Part:GR-7", "grease cartridge GR-7")
    b.node("SafetyProtocol:LOTO-3", "lockout tagout LOTO-3")
    b.node("SafetyProtocol:PPE-2", "hydraulic PPE protocol PPE-2")
    # HC-3 incident history: seven work orders over eighteen months
    hc3_orders = []
    start = datetime(2023, 1, 10, 8, tzinfo=timezone.utc)
    for i in range(7):
        wid = f"WorkOrder:WO-23{i + 1:02d}"
        at = start + timedelta(days=78 * i)
        b.node(wid, f"work order WO-23{i + 1:02d}", ts={"ts": ts(at)})
        hc3_orders.append(wid)
    p101_orders = []
    for i in range(2):
        wid = f"WorkOrder:WO-11{i + 1:02d}"
        b.node(wid, f"work order WO-11{i + 1:02d}", ts={"ts": ts(datetime(2024, 2 + 4 * i, 3, tzinfo=timezone.utc))})
        p101_orders.append(wid)

    # worked example
    b.edge("Component:HC-3", "has_symptom", "Symptom:pressure_drop", 1.0)
    b.edge("Component:HC-3", "has_symptom", "Symptom:flow_reduction", 1.0)
    b.edge("Symptom:pressure_drop", "indicates", "Fault:seal_degradation", 0.91)
    b.edge("Symptom:pressure_drop", "indicates", "Fault:pump_cavitation", 0.72)
    b.edge("Symptom:flow_reduction", "indicates", "Fault:valve_blockage", 0.84)
    b.edge("Fault:seal_degradation", "addressed_by", "Procedure:P-118", 0.95)
    b.edge("Fault:seal_degradation", "requires_part", "Part:SK-12", 0.9)
    b.edge("Procedure:P-118", "requires_part", "Part:SK-12", 1.0)
    b.edge("Procedure:P-118", "has_safety_protocol", "SafetyProtocol:PPE-2", 1.0)
    for wid in hc3_orders:
        b.edge("Fault:seal_degradation", "occurred_in", wid)
        b.edge("Component:HC-3", "occurred_in", wid)
    for sid in ("Sensor:PT-31", "Sensor:FT-32", "Sensor:TS-33"):
        b.edge("Component:HC-3", "has_sensor", sid)
    # shared faults of HC-3 and HC-7
    b.edge("Component:HC-7", "has_symptom", "Symptom:flow_reduction", 1.0)
    b.edge("Component:HC-7", "has_symptom", "Symptom:cavitation_noise", 1.0)
    b.edge("Symptom:cavitation_noise", "indicates", "Fault:pump_cavitation", 0.8)
    # grinding-noise case
    b.edge("Symptom:grinding_1200RPM", "indicates", "Fault:bearing_wear_B4521", 0.94)
    b.edge("Symptom:pressure_fluctuation", "indicates", "Fault:bearing_wear_B4521", 0.88)
    b.edge("Symptom:pressure_fluctuation", "indicates", "Fault:shaft_misalignment", 0.41)
    b.edge("Symptom:temp_85C", "causes", "Fault:lubrication_failure", 0.9)
    b.edge("Fault:lubrication_failure", "causes", "Fault:bearing_wear_B4521", 0.9)
    b.edge("Fault:lubrication_failure", "leads_to", "Fault:bearing_wear_B4521", 0.9)
    b.edge("Fault:bearing_wear_B4521", "located_in", "Part:B-4521", 1.0)
    b.edge("Fault:bearing_wear_B4521", "addressed_by", "Procedure:P-205", 0.96)
    b.edge("Fault:bearing_wear_B4521", "requires_part", "Part:B-4521", 1.0)
    b.edge("Fault:bearing_wear_B4521", "requires_part", "Part:GR-7", 1.0)
    b.edge("Fault:bearing_wear_B4521", "has_safety_protocol", "SafetyProtocol:LOTO-3", 1.0)
    b.edge("Fault:shaft_misalignment", "located_in", "Component:HP-2", 1.0)
    # replacing the bearing
    b.edge("Part:B-4521", "addressed_by", "Procedure:P-205", 1.0)
    b.edge("Part:B-4521", "part_of", "Component:HP-2", 1.0)
    b.edge("Procedure:P-205", "requires_part", "Part:B-4521", 1.0)
    b.edge("Procedure:P-205", "requires_part", "Part:GR-7", 1.0)
    b.edge("Procedure:P-205", "has_safety_protocol", "SafetyProtocol:LOTO-3", 1.0)
    # pump P-101
    b.edge("Component:P-101", "has_spec", "Spec:P-101_rated_pressure", 1.0)
    b.edge("Component:P-101", "part_of", "Component:HC-7", 1.0)
    for wid in p101_orders:
        b.edge("Component:P-101", "occurred_in", wid)
    b.edge("Component:P-101", "failed_after", "Fault:impeller_wear", 0.6)
    b.edge("Fault:impeller_wear", "failed_after", "Fault:motor_overload", 0.7)
    return b


def synthesis_partx() -> Builder:
    """Part X failed in twenty work orders, ten days apart. temp_anomaly was
    observed within 48 h of fifteen of them (one exactly at +48 h), humidity
    near eight, vibration near four."""
    b = Builder()
    b.node("Part:X", "Part X")
    b.node("Component:press_line", "press line")
    b.node("Sensor:temp_anomaly", "temperature anomaly")
    b.node("Sensor:vibration_spike", "vibration spike")
    b.node("Environment:high_humidity", "high humidity")
    start = datetime(2024, 1, 1, 6, tzinfo=timezone.utc)
    orders = []
    for i in range(20):
        at = start + timedelta(days=10 * i)
        wid = f"WorkOrder:WO-X{i + 1:02d}"
        b.node(wid, f"work order WO-X{i + 1:02d}", ts={"ts": ts(at)})
        orders.append(at)
    for i, at in enumerate(orders):
        b.edge("Part:X", "occurred_in", f"WorkOrder:WO-X{i + 1:02d}")
    for i in range(15):
        offset = timedelta(hours=48) if i == 0 else timedelta(hours=-(3 * i))
        b.edge("Sensor:temp_anomaly", "observed_at", "Component:press_line", 1.0, orders[i] + offset)
    # just outside the window for order 16
    b.edge("Sensor:temp_anomaly", "observed_at", "Component:press_line", 1.0,
           orders[15] + timedelta(hours=48, seconds=1))
    for i in range(8):
        b.edge("Environment:high_humidity", "observed_at", "Component:press_line", 1.0,
               orders[2 * i] + timedelta(hours=12))
    for i in range(4):
        b.edge("Sensor:vibration_spike", "observed_at", "Component:press_line", 1.0,
               orders[5 * i] - timedelta(hours=1))
    return b


def eid(src: str, type_: str, dst: str) -> str:
    return f"{src}-[{type_}]->{dst}@1970-01-01T00:00:00Z"


D, AD, AP, AS = "Dispatcher", "A_D", "A_P", "A_S"

SCENARIOS = [
    {
        "name": "worked_example", "category": "diagnostic", "conversation_id": "conv_042",
        "graph": "../turbomatic_mini.jsonl", "ftma": "../ftma/worked_example.txt",
        "query": "What causes pressure drops in hydraulic circuit HC-3?",
        "expected": {
            "messages": 5,
            "skeleton": [[D, AD, "REQUEST"], [AD, D, "INFORM"], [D, AP, "REQUEST"],
                         [AP, AS, "QUERY"], [AS, AP, "CONFIRM"]],
            "ranked": ["Fault:seal_degradation", "Fault:valve_blockage", "Fault:pump_cavitation"],
            "confidence": [0.91, 0.84, 0.72],
            "claim_nodes": ["Fault:seal_degradation", "Procedure:P-118", "Part:SK-12"]
                           + [f"WorkOrder:WO-23{i:02d}" for i in range(1, 8)],
            "claim_edges": [eid("Fault:seal_degradation", "addressed_by", "Procedure:P-118"),
                            eid("Fault:seal_degradation", "requires_part", "Part:SK-12"),
                            eid("Procedure:P-118", "requires_part", "Part:SK-12")],
            "verdict": "Grounded",
        },
    },
    {
        "name": "case_study", "category": "diagnostic", "conversation_id": "conv_077",
        "graph": "../turbomatic_mini.jsonl", "ftma": "../ftma/case_study.txt",
        "query": "The hydraulic press is making grinding noise at 1200 RPM with pressure fluctuations "
                 "and 85°C oil temperature. What's wrong and how do I fix it?",
        "expected": {
            "messages": 4,
            "skeleton": [[D, AD, "REQUEST"], [AD, D, "INFORM"], [D, AP, "REQUEST"], [AP, D, "INFORM"]],
            "top_fault": "Fault:bearing_wear_B4521", "convergence": 3,
            "claim_nodes": ["Fault:bearing_wear_B4521", "Part:B-4521", "Part:GR-7", "Procedure:P-205",
                            "SafetyProtocol:LOTO-3"],
            "claim_edges": [eid("Fault:bearing_wear_B4521", "addressed_by", "Procedure:P-205"),
                            eid("Fault:bearing_wear_B4521", "has_safety_protocol", "SafetyProtocol:LOTO-3"),
                            eid("Fault:bearing_wear_B4521", "requires_part", "Part:B-4521"),
                            eid("Fault:bearing_wear_B4521", "requires_part", "Part:GR-7"),
                            eid("Part:B-4521", "addressed_by", "Procedure:P-205"),
                            eid("Procedure:P-205", "has_safety_protocol", "SafetyProtocol:LOTO-3"),
                            eid("Procedure:P-205", "requires_part", "Part:B-4521"),
                            eid("Procedure:P-205", "requires_part", "Part:GR-7")],
            "verdict": "Grounded",
        },
    },
    {
        "name": "factoid_rated_pressure", "category": "factoid", "conversation_id": "conv_101",
        "graph": "../turbomatic_mini.jsonl", "ftma": "../ftma/factoid_rated_pressure.txt",
        "query": "What is the rated pressure of pump P-101?",
        "expected": {
            "messages": 2, "skeleton": [[D, AP, "REQUEST"], [AP, D, "INFORM"]],
            "claim_nodes": ["Component:P-101", "Spec:P-101_rated_pressure", "Component:HC-7"],
            "claim_edges": [eid("Component:P-101", "has_spec", "Spec:P-101_rated_pressure"),
                            eid("Component:P-101", "part_of", "Component:HC-7")],
            "verdict": "Grounded",
        },
    },
    {
        "name": "procedural_replace_bearing", "category": "procedural", "conversation_id": "conv_102",
        "graph": "../turbomatic_mini.jsonl", "ftma": "../ftma/procedural_replace_bearing.txt",
        "query": "How do I replace bearing B-4521?",
        "expected": {
            "messages": 2, "skeleton": [[D, AP, "REQUEST"], [AP, D, "INFORM"]],
            "claim_nodes": ["Part:B-4521", "Procedure:P-205", "Part:GR-7", "SafetyProtocol:LOTO-3"],
            "claim_edges": [eid("Part:B-4521", "addressed_by", "Procedure:P-205"),
                            eid("Procedure:P-205", "has_safety_protocol", "SafetyProtocol:LOTO-3"),
                            eid("Procedure:P-205", "requires_part", "Part:B-4521"),
                            eid("Procedure:P-205", "requires_part", "Part:GR-7")],
            "verdict": "Grounded",
        },
    },
    {
        "name": "relational_shared_faults", "category": "relational", "conversation_id": "conv_103",
        "graph": "../turbomatic_mini.jsonl", "ftma": "../ftma/relational_shared_faults.txt",
        "query": "Which faults affect both circuit HC-3 and HC-7?",
        "expected": {
            "messages": 2, "skeleton": [[D, AD, "REQUEST"], [AD, D, "INFORM"]],
            "claim_nodes": ["Fault:pump_cavitation", "Fault:valve_blockage"],
            "claim_edges": [],
            "verdict": "Grounded",
        },
    },
    {
        "name": "predictive_p101", "category": "predictive", "conversation_id": "conv_104",
        "graph": "../turbomatic_mini.jsonl", "ftma": "../ftma/predictive_p101.txt",
        "query": "Predict next likely failure for pump P-101",
        "expected": {
            "messages": 2, "skeleton": [[D, AS, "REQUEST"], [AS, D, "INFORM"]],
            "claim_nodes": ["Component:P-101", "Fault:impeller_wear", "Fault:motor_overload",
                            "WorkOrder:WO-1101", "WorkOrder:WO-1102"],
            "claim_edges": [eid("Component:P-101", "failed_after", "Fault:impeller_wear"),
                            eid("Component:P-101", "occurred_in", "WorkOrder:WO-1101"),
                            eid("Component:P-101", "occurred_in", "WorkOrder:WO-1102"),
                            eid("Fault:impeller_wear", "failed_after", "Fault:motor_overload")],
            "verdict": "Grounded",
        },
    },
    {
        "name": "empty_graph", "category": "factoid", "conversation_id": "conv_105",
        "graph": "../empty.jsonl",
        "query": "What is the rated pressure of pump P-101?",
        "expected": {"messages": 0, "rejection": "NO_ENTITIES", "claim_nodes": [], "claim_edges": [],
                     "verdict": "Grounded"},
    },
]

# Step 1 of the HC-3 worked example, verbatim
STEP1 = """Dispatcher TO A_D
PERFORMATIVE: REQUEST
CONVERSATION: conv_042
OPERATION:
  TRAVERSE
    FROM: {Component:HC-3}
    VIA: {has_symptom}
    DEPTH: 1
    RETURN: SUBGRAPH
"""

def write_golden_runs(golden: Path) -> None:
    """Audit logs and final claims of the two narrated scenarios, for the
    replay and verify commands. Needs the package importable."""
    from g2cp.agents import Scenario, run_scenario

    for name in ("worked_example", "case_study"):
        run = run_scenario(Scenario.load(OUT / "scenarios" / f"{name}.json"))
        assert set(run.claim.nodes) == set(run.scenario.expected["claim_nodes"]), name
        with (golden / f"{name}.log.jsonl").open("w", encoding="utf-8") as fh:
            run.bus.log.dump(fh)
        write_json(golden / f"{name}_claim.json", {
            "nodes": sorted(run.claim.nodes),
            "edges": sorted([e.source, e.type, e.target] for e in run.claim.edges),
            "trace": list(run.trace.entries),
        })


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    turbomatic_mini().write(OUT / "turbomatic_mini.jsonl")
    synthesis_partx().write(OUT / "synthesis_partx.jsonl")
    Builder().write(OUT / "empty.jsonl")
    (OUT / "scenarios").mkdir(exist_ok=True)
    for sc in SCENARIOS:
        write_json(OUT / "scenarios" / f"{sc['name']}.json", sc)
    (OUT / "golden").mkdir(exist_ok=True)
    (OUT / "golden" / "worked_example_step1.txt").write_text(STEP1, encoding="utf-8")
    write_golden_runs(OUT / "golden")
    print(f"wrote fixtures to {OUT}")
