import io
import json

import pytest

from g2cp.agents import fixture_dir
from g2cp.cli import main

GOLDEN = fixture_dir() / "golden"


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def test_load_prints_stats():
    code, out, _ = call("load", "turbomatic_mini.jsonl")
    assert code == 0
    assert out.startswith("nodes\t") and "digest\t" in out


def test_load_table_format():
    code, out, _ = call("load", "turbomatic_mini.jsonl", "--format=table")
    assert code == 0 and "\t" not in out


@pytest.mark.parametrize("name", ["worked_example", "case_study", "empty_graph"])
def test_run_scenarios(name, tmp_path):
    log = tmp_path / "log.jsonl"
    code, out, _ = call("run", f"scenarios/{name}.json", "--log", str(log))
    assert code == 0, out
    assert "FAIL" not in out and "tokens_total" in out
    if name != "empty_graph":
        assert log.read_text() == (GOLDEN / f"{name}.log.jsonl").read_text()


def test_run_reports_expectation_failure(tmp_path):
    sc = json.loads((fixture_dir() / "scenarios" / "worked_example.json").read_text())
    sc["graph"] = str(fixture_dir() / "turbomatic_mini.jsonl")
    sc["ftma"] = None
    sc["expected"]["messages"] = 6
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(sc))
    code, out, _ = call("run", str(path))
    assert code == 4 and "FAIL\texpected 6 messages" in out


def test_replay_golden():
    code, out, _ = call("replay", "golden/worked_example.log.jsonl", "turbomatic_mini.jsonl")
    assert code == 0
    assert all(line.split("\t")[1] == "MATCH" for line in out.splitlines())


def test_replay_tampered_log(tmp_path):
    lines = (GOLDEN / "worked_example.log.jsonl").read_text().splitlines()
    entry = json.loads(lines[1])
    entry["envelope"] = entry["envelope"].replace("0.91", "0.99")
    lines[1] = json.dumps(entry)
    path = tmp_path / "log.jsonl"
    path.write_text("\n".join(lines) + "\n")
    code, out, _ = call("replay", str(path), "turbomatic_mini.jsonl")
    assert code == 3 and ("MISMATCH" in out or "BROKEN" in out)


def test_verify_honest_and_fabricated(tmp_path):
    args = ("golden/worked_example.log.jsonl", "turbomatic_mini.jsonl")
    code, out, _ = call("verify", "golden/worked_example_claim.json", *args)
    assert (code, out.splitlines()[0]) == (0, "verdict\tGrounded")
    claim = json.loads((GOLDEN / "worked_example_claim.json").read_text())
    claim["nodes"].append("Fault:ghost")
    path = tmp_path / "claim.json"
    path.write_text(json.dumps(claim))
    code, out, _ = call("verify", str(path), *args)
    assert code == 3 and "verdict\tFabricated" in out and "missing_nodes\tFault:ghost" in out


def test_bench_small():
    code, out, _ = call("bench", "--sizes", "200,400", "--degrees", "2", "--depths", "1,2")
    assert code == 0 and len(out.splitlines()) == 5


@pytest.mark.parametrize("argv", [
    [], ["frobnicate"], ["load"], ["load", "no/such/file.jsonl"],
    ["load", "turbomatic_mini.jsonl", "--limits-max-nodes", "0"], ["bench", "--sizes", "x"],
])
def test_usage_errors(argv):
    code, _, err = call(*argv)
    assert code == 1 and err.startswith("usage error")


def test_parse_errors(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"kind": "node", "id": "A:x"\n')
    assert call("load", str(bad))[0] == 2
    dangling = tmp_path / "dangling.jsonl"
    dangling.write_text('{"kind": "edge", "source": "A:x", "target": "A:y", "type": "r"}\n')
    assert call("load", str(dangling))[0] == 2
    sc = tmp_path / "sc.json"
    sc.write_text("{not json")
    assert call("run", str(sc))[0] == 2
