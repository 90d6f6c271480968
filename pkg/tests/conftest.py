import json
import sys
from pathlib import Path

import pytest

from debate_forge.backend import ScriptedBackend
from debate_forge.core import Proposition

DATA = Path(__file__).parent / "data"
ROOT = Path(__file__).parent.parent
DEMO_FIXTURES = ROOT / "fixtures" / "demo"
DEMO_TOPICS = ROOT / "fixtures" / "topics.jsonl"

sys.path.insert(0, str(Path(__file__).parent))

MUSEUMS = Proposition("museums", "We should make all museums free of charge", "culture")

POOL = [
    ("A museum employee", "Making museums free would lead to budget cuts."),
    ("An art collector", "Free admission would bring congestion."),
    ("A taxpayer", "Free admission would raise taxes."),
    ("A historian", "Free museums cannot maintain artifacts."),
    ("A community organizer", "Fees exclude low-income communities."),
    ("A museum donor", "Free admission deters donations."),
]


def pool_reply(n=6, ids=None):
    ids = ids if ids is not None else range(n)
    return "\n".join(
        json.dumps({"agent_id": i, "description": POOL[k][0], "claim": POOL[k][1]})
        for k, i in zip(range(n), ids)
    )


def selection_reply(ids=(0, 2, 5)):
    return "\n".join(
        json.dumps({"agent_id": i, "description": POOL[i][0], "claim": POOL[i][1], "reason": f"reason {i}"})
        for i in ids
    )


def verdict(team, critic):
    return json.dumps({"team_satisfied": team, "critic_persuaded": critic, "rationale": "r"})


def read(name):
    return (DATA / name).read_text(encoding="utf-8")


def debate_rules(verdicts=(verdict(True, True),), plan="1. Only point", essay="Essay.", pool=None, selection=None):
    """Rules for a full persona-debate pipeline with deterministic replies."""
    return [
        {"match": r"## Candidate list:", "response": selection or selection_reply()},
        {"match": r"create a pool of 5 to 10", "response": pool or pool_reply()},
        {"match": r"Speak now as (Agent [A-Z]|Planner)\.", "responses": ["team says something"], "pick": "hash"},
        {"match": r"Speak now as Critic\.", "response": "critic objects"},
        {"match": r"Decide whether the debate can stop", "responses": list(verdicts)},
        {"match": r"write the final counterargument plan|Write a high-level counterargument plan", "response": plan},
        {"match": r"- Counterargumentative essay:", "response": essay},
    ]


@pytest.fixture
def museums():
    return MUSEUMS


@pytest.fixture
def scripted_pipeline():
    def make(**kwargs):
        return ScriptedBackend(rules=debate_rules(**kwargs))

    return make


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
    if "test_acceptance" in sys.modules and 8 not in results:
        terminalreporter.write_line("[SKIP] AC8 live directional check: needs DEBATE_FORGE_API_KEY and DEBATE_FORGE_ACCEPTANCE_TOPICS")
