import pytest
from conftest import POOL, read, verdict
from hypothesis import given
from hypothesis import strategies as st

from debate_forge.backend import ScriptedBackend
from debate_forge.core import (
    ArgumentPlan,
    DebateTranscript,
    InvalidInput,
    ParseError,
    Persona,
    PlanPoint,
    TeamAssignment,
    Turn,
)
from debate_forge.debate import (
    DebateConfig,
    parse_plan,
    parse_verdict,
    render_plan,
    run_debate,
    synthesize_plan,
)
from debate_forge.prompts import PromptSet


def team(ids=(0, 2, 5)):
    return TeamAssignment(tuple(Persona(i, POOL[i][0], POOL[i][1], "r") for i in ids))


def debate_backend(*verdicts):
    return ScriptedBackend(
        rules=[
            {"match": r"Speak now as (Agent [A-Z])\.", "response": "team says something"},
            {"match": r"Speak now as Critic\.", "response": "critic objects"},
            {"match": r"Decide whether the debate can stop", "responses": list(verdicts)},
        ]
    )


MUSEUMS_PLAN = ArgumentPlan(
    (
        PlanPoint(
            "Financial Sustainability and Conservation",
            (
                "Entrance fees are crucial for funding museum upkeep and conservation efforts.",
                "Alternative funding sources and sponsorships can supplement revenue without hindering accessibility.",
            ),
        ),
        PlanPoint(
            "Local Community Impact",
            ("Implement a tiered pricing system to ensure locals have free or discounted access.",),
        ),
        PlanPoint(
            "Visitor Engagement and Value",
            (
                "A nominal fee can encourage visitors to engage more deeply with museum experiences.",
                "Thoughtful pricing strategies can enhance the overall value perception for visitors.",
            ),
        ),
    ),
    "Recognize the value of free admission in promoting accessibility and attracting tourists.",
)


class TestDebateLoop:
    def test_consensus_after_one_round(self, museums):
        transcript = run_debate(museums, team(), DebateConfig(), debate_backend(verdict(True, True)))
        assert len(transcript.turns) == 5
        assert transcript.terminated_by == "consensus"
        assert [t.speaker_id for t in transcript.turns] == ["Agent A", "Agent B", "Agent C", "Critic", "Moderator"]
        assert [t.role for t in transcript.turns][-2:] == ["critic", "moderator"]

    def test_round_cap(self, museums):
        backend = debate_backend(verdict(False, True))
        transcript = run_debate(museums, team(), DebateConfig(round_cap=2), backend)
        assert transcript.terminated_by == "round_cap"
        assert transcript.rounds == 2
        assert len(transcript.turns) == 10
        assert transcript.violations(round_cap=2, team_size=3) == []

    def test_consensus_needs_both_sides(self, museums):
        backend = debate_backend(verdict(True, False), verdict(False, True), verdict(True, True))
        transcript = run_debate(museums, team(), DebateConfig(), backend)
        assert transcript.rounds == 3
        assert transcript.terminated_by == "consensus"

    def test_check_cadence(self, museums):
        backend = debate_backend(verdict(True, True))
        transcript = run_debate(museums, team(), DebateConfig(consensus_check_every=2), backend)
        assert [t.round for t in transcript.turns if t.role == "moderator"] == [2]

    @pytest.mark.parametrize("size", [0, 1])
    def test_team_too_small(self, size):
        with pytest.raises(InvalidInput):
            DebateConfig(team_size=size)

    def test_team_size_must_match(self, museums):
        with pytest.raises(InvalidInput):
            run_debate(museums, team((0, 1)), DebateConfig(), debate_backend())

    def test_team_of_four(self, museums):
        transcript = run_debate(museums, team((0, 1, 2, 3)), DebateConfig(team_size=4), debate_backend(verdict(True, True)))
        assert [t.speaker_id for t in transcript.turns][:5] == ["Agent A", "Agent B", "Agent C", "Agent D", "Critic"]

    def test_unparseable_verdict_keeps_going(self, museums, caplog):
        backend = debate_backend("I think they agree", "no idea", verdict(True, True))
        transcript = run_debate(museums, team(), DebateConfig(), backend)
        assert transcript.rounds == 2
        assert transcript.turns[4].content == "no idea"
        assert "unparseable" in caplog.text

    def test_deterministic(self, museums):
        first = run_debate(museums, team(), DebateConfig(round_cap=3), debate_backend(verdict(False, False)))
        second = run_debate(museums, team(), DebateConfig(round_cap=3), debate_backend(verdict(False, False)))
        assert first == second

    @given(st.integers(1, 5), st.integers(2, 4), st.lists(st.booleans(), min_size=1, max_size=6))
    def test_length_bound(self, cap, size, flags):
        from conftest import MUSEUMS

        backend = debate_backend(*[verdict(f, f) for f in flags])
        transcript = run_debate(MUSEUMS, team(tuple(range(size))), DebateConfig(team_size=size, round_cap=cap), backend)
        assert len(transcript.turns) <= cap * (size + 2)
        assert transcript.violations(round_cap=cap, team_size=size) == []


class TestRoles:
    def requests(self, museums):
        backend = debate_backend(verdict(True, True))
        run_debate(museums, team(), DebateConfig(), backend)
        return backend.requests

    def test_member_sees_own_persona_and_team_block(self, museums):
        first = self.requests(museums)[0]
        system = first.messages[0].content
        assert "You are Agent A." in system
        assert "A museum employee: Making museums free would lead to budget cuts." in system
        assert "A Main Team of three members: Agent A, Agent B, and Agent C" in system
        critic_block = PromptSet.default()["debate_critic"]
        assert critic_block not in system

    def test_critic_does_not_get_team_block(self, museums):
        critic = self.requests(museums)[3]
        system = critic.messages[0].content
        assert "You are the Critic." in system
        assert PromptSet.default()["debate_critic"] in system
        assert "You are Agent" not in system

    def test_later_speakers_see_earlier_turns(self, museums):
        reqs = self.requests(museums)
        assert "(no discussion yet)" in reqs[0].messages[-1].content
        assert "Agent A: team says something" in reqs[1].messages[-1].content
        assert "Moderator" not in reqs[4].messages[-1].content


class TestVerdict:
    def test_embedded_json(self):
        v = parse_verdict('Verdict: {"team_satisfied": true, "critic_persuaded": "false", "rationale": "x"}')
        assert not v.consensus
        assert v.team_satisfied

    @pytest.mark.parametrize("text", ["yes", "{not json}", '{"team_satisfied": 1, "critic_persuaded": true}'])
    def test_rejects(self, text):
        with pytest.raises(ParseError):
            parse_verdict(text)


class TestPlanParser:
    def test_canonical_museums_plan(self):
        text = read("museums_plan.txt")
        plan = parse_plan(text)
        assert plan == MUSEUMS_PLAN
        assert render_plan(plan) == text.rstrip("\n")

    def test_circled_layout_matches(self):
        assert parse_plan(read("museums_plan_circled.txt")) == MUSEUMS_PLAN

    def test_single_point(self):
        assert parse_plan("1. Only point") == ArgumentPlan((PlanPoint("Only point"),))

    def test_sample_with_blank_lines(self):
        plan = parse_plan(read("age_limit_plan.txt"))
        assert plan.acknowledgment is None
        assert [p.heading for p in plan.main_points][:3] == [
            "Age Should Not Determine Government Service",
            "Embracing Diversity of Perspectives",
            "Individual Assessment Over Arbitrary Age Limits",
        ]
        assert plan.main_points[0].sub_points[1].startswith("Subpoint: Capability Is Timeless")

    def test_markdown_and_parens(self):
        plan = parse_plan("Here is the plan\n**1) Cost**\n   * fees fund upkeep\n(2) Access\n• tiered pricing")
        assert plan == ArgumentPlan((PlanPoint("Cost", ("fees fund upkeep",)), PlanPoint("Access", ("tiered pricing",))))

    def test_bullet_fallback(self):
        plan = parse_plan("- Cost\n  - fees fund upkeep\n- Access")
        assert plan == ArgumentPlan((PlanPoint("Cost", ("fees fund upkeep",)), PlanPoint("Access")))

    def test_no_points(self):
        with pytest.raises(ParseError):
            parse_plan("I cannot help with that.")

    def test_only_acknowledgment_is_not_a_plan(self):
        with pytest.raises(ParseError):
            parse_plan("1. Acknowledgment:\n  - fair point")


line = st.text(alphabet=st.characters(blacklist_categories=("Cc", "Cs", "Zl", "Zp")), min_size=1, max_size=40).map(str.strip).filter(
    lambda s: s and not s.startswith(("-", "*", "•", "–", "●", "#", "(")) and not s[0].isdigit() and s[0] not in "①②③④⑤⑥⑦⑧⑨⑩⑪⑫⑬⑭⑮⑯⑰⑱⑲⑳"
    and not s.lower().startswith("acknowledg") and "**" not in s
)


@given(
    st.lists(st.builds(PlanPoint, line, st.lists(line, max_size=3).map(tuple)), min_size=1, max_size=5),
    st.none() | st.lists(line, min_size=1, max_size=2).map("\n".join),
)
def test_render_parse_round_trip(points, ack):
    plan = ArgumentPlan(tuple(points), ack)
    assert parse_plan(render_plan(plan)) == plan


class TestSynthesis:
    def transcript(self):
        return DebateTranscript((Turn("Agent A", "main_team_member", 1, "fees matter"), Turn("Critic", "critic", 1, "why")), "round_cap")

    def test_empty_transcript(self, museums):
        with pytest.raises(InvalidInput):
            synthesize_plan(museums, DebateTranscript((), "round_cap"), ScriptedBackend())

    def test_prompt_carries_transcript(self, museums):
        backend = ScriptedBackend(queue=[read("museums_plan.txt")])
        plan = synthesize_plan(museums, self.transcript(), backend)
        assert plan == MUSEUMS_PLAN
        prompt = backend.requests[0].messages[-1].content
        assert "Agent A: fees matter" in prompt and "Critic: why" in prompt

    def test_truncates_long_plans(self, museums, caplog):
        text = "\n".join(f"{i}. Point {i}" for i in range(1, 8))
        plan = synthesize_plan(museums, self.transcript(), ScriptedBackend(queue=[text]))
        assert len(plan.main_points) == 5
        assert "keeping the first 5" in caplog.text

    def test_retries_then_fails(self, museums):
        backend = ScriptedBackend(queue=["nope"] * 3)
        with pytest.raises(ParseError):
            synthesize_plan(museums, self.transcript(), backend)
        assert len(backend.requests) == 3
