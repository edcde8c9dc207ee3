"""Run every fixture scenario and report messages, token ratio against the
free-text transcript, claim verdict and expectation check."""

import argparse
from dataclasses import dataclass

from g2cp.agents import (
    Scenario, check_expectations, count_scenario_tokens, load_ftma, run_scenario, scenario_paths, verify_run,
)
from g2cp.traversal import ExecutionLimits


@dataclass
class RunConfig:
    frontier_cap: int = ExecutionLimits().frontier_cap
    max_result_nodes: int = ExecutionLimits().max_result_nodes


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--frontier-cap", type=int, default=RunConfig.frontier_cap)
    args = p.parse_args()
    cfg = RunConfig(frontier_cap=args.frontier_cap)
    limits = ExecutionLimits(frontier_cap=cfg.frontier_cap, max_result_nodes=cfg.max_result_nodes)
    header = ("scenario", "category", "messages", "tokens", "ftma", "ratio", "verdict", "check")
    print("\t".join(header))
    for path in scenario_paths():
        sc = Scenario.load(path)
        run = run_scenario(sc, limits)
        ftma = count_scenario_tokens(load_ftma(sc.ftma)).total_inter_agent if sc.ftma else 0
        ratio = f"{run.tokens.total_inter_agent / ftma:.3f}" if ftma else "-"
        problems = check_expectations(run)
        print("\t".join(map(str, (sc.name, sc.category, len(run.messages), run.tokens.total_inter_agent,
                                  ftma or "-", ratio, verify_run(run).name, "ok" if not problems else "FAIL"))))
        for prob in problems:
            print(f"  {prob}")


if __name__ == "__main__":
    main()
