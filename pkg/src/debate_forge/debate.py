"""Debate among the main team and a critic, and synthesis of the argument plan."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Any, Optional, Sequence

from .backend import DEFAULT_TEMPERATURE, ChatRequest, Message, chat_until, user_request
from .core import (
    DEFAULT_TEAM_SIZE,
    ArgumentPlan,
    DebateTranscript,
    InvalidInput,
    ParseError,
    PlanPoint,
    Proposition,
    TeamAssignment,
    Turn,
)
from .prompts import PromptSet, number_word

log = logging.getLogger(__name__)

NEUTRAL_SYSTEM = "You are a helpful assistant."
CRITIC_ID = "Critic"
MODERATOR_ID = "Moderator"
PLANNER_ID = "Planner"
PLAN_RETRIES = 2
PLAN_REMINDER = (
    'Write the plan as a numbered list of main points, with each sub-point on its own line '
    'starting with "- ". Title an acknowledgment point "Acknowledgment:".'
)
VERDICT_REMINDER = (
    'Answer with a single json object with boolean keys "team_satisfied" and '
    '"critic_persuaded" and a text key "rationale".'
)


@dataclass(frozen=True)
class DebateConfig:
    team_size: int = DEFAULT_TEAM_SIZE
    round_cap: int = 6
    consensus_check_every: int = 1
    plan_max_main_points: int = 5
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        if self.team_size < 2:
            raise InvalidInput(f"team_size must be >= 2, got {self.team_size}")
        if self.round_cap < 1:
            raise InvalidInput(f"round_cap must be >= 1, got {self.round_cap}")
        if self.consensus_check_every < 1:
            raise InvalidInput("consensus_check_every must be >= 1")
        if self.plan_max_main_points < 1:
            raise InvalidInput("plan_max_main_points must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "team_size": self.team_size,
            "round_cap": self.round_cap,
            "consensus_check_every": self.consensus_check_every,
            "plan_max_main_points": self.plan_max_main_points,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DebateConfig":
        return cls(**data)


@dataclass(frozen=True)
class ConsensusVerdict:
    team_satisfied: bool
    critic_persuaded: bool
    rationale: str = ""

    @property
    def consensus(self) -> bool:
        return self.team_satisfied and self.critic_persuaded


@dataclass(frozen=True)
class Speaker:
    """One debating agent: its transcript id, role and system preamble."""

    speaker_id: str
    role: str
    system_prompt: str


def agent_label(index: int) -> str:
    return f"Agent {chr(ord('A') + index)}"


def _join_names(names: Sequence[str]) -> str:
    if len(names) <= 2:
        return " and ".join(names)
    return ", ".join(names[:-1]) + ", and " + names[-1]


def _persona_slot(description: str, claim: str) -> str:
    return f"{description.rstrip('.:; ')}: {claim.rstrip(';')}"


def team_roster(team: TeamAssignment) -> str:
    return "\n".join(
        f"\t- {agent_label(i)}: {_persona_slot(m.description, m.claim)};" for i, m in enumerate(team.members)
    )


def team_speakers(team: TeamAssignment, prompts: PromptSet) -> list[Speaker]:
    """Main-team members in team order, followed by the critic."""
    labels = [agent_label(i) for i in range(len(team))]
    background = prompts["debate_background"]
    team_block = prompts.render(
        "debate_main_team",
        {
            "##team_size": number_word(len(team)),
            "##member_names": _join_names(labels),
            "##member_personas": team_roster(team),
        },
    )
    speakers = [
        Speaker(label, "main_team_member", f"{background}\n\n{team_block}\n\nYou are {label}.")
        for label in labels
    ]
    roster = "\n".join(
        f"- {agent_label(i)}: {_persona_slot(m.description, m.claim)}" for i, m in enumerate(team.members)
    )
    critic_prompt = f"{background}\n\n## Main Team members:\n{roster}\n\n{prompts['debate_critic']}\n\nYou are the Critic."
    speakers.append(Speaker(CRITIC_ID, "critic", critic_prompt))
    return speakers


def planner_speakers(prompts: PromptSet) -> list[Speaker]:
    background = prompts["debate_background"]
    return [
        Speaker(PLANNER_ID, "main_team_member", f"{background}\n\n{prompts['debate_planner']}\n\nYou are the Planner."),
        Speaker(CRITIC_ID, "critic", f"{background}\n\n{prompts['debate_critic']}\n\nYou are the Critic."),
    ]


def format_transcript(turns: Sequence[Turn]) -> str:
    spoken = [t for t in turns if t.role != "moderator"]
    if not spoken:
        return "(no discussion yet)"
    return "\n\n".join(f"{t.speaker_id}: {t.content.strip()}" for t in spoken)


def parse_verdict(text: str) -> ConsensusVerdict:
    start, end = text.find("{"), text.rfind("}")
    if start == -1 or end <= start:
        raise ParseError("verdict is not a json object")
    try:
        obj = json.loads(text[start : end + 1])
    except ValueError as exc:
        raise ParseError(f"verdict is not valid json: {exc}") from exc
    flags = []
    for key in ("team_satisfied", "critic_persuaded"):
        value = obj.get(key)
        if isinstance(value, str) and value.strip().lower() in ("true", "false"):
            value = value.strip().lower() == "true"
        if not isinstance(value, bool):
            raise ParseError(f"verdict field {key!r} is not a boolean")
        flags.append(value)
    return ConsensusVerdict(flags[0], flags[1], str(obj.get("rationale", "")))


def _moderate(
    proposition: Proposition, turns: Sequence[Turn], backend: Any, prompts: PromptSet, temperature: float
) -> tuple[str, ConsensusVerdict]:
    prompt = prompts.render(
        "debate_moderator",
        {"##input_proposition": proposition.statement, "##transcript": format_transcript(turns)},
    )
    request = user_request(prompt, system=NEUTRAL_SYSTEM, model_id=backend.model_id, temperature=temperature)
    replies: list[str] = []

    def parse(text: str) -> ConsensusVerdict:
        replies.append(text)
        return parse_verdict(text)

    try:
        verdict = chat_until(backend, request, parse, VERDICT_REMINDER, retries=1)
    except ParseError as exc:
        log.warning("moderator verdict unparseable (%s); continuing the debate", exc)
        verdict = ConsensusVerdict(False, False, "unparseable verdict")
    return replies[-1], verdict


def debate_loop(
    proposition: Proposition,
    speakers: Sequence[Speaker],
    config: DebateConfig,
    backend: Any,
    prompts: PromptSet,
) -> DebateTranscript:
    """Each round every speaker talks once, in order; then a moderator may stop the debate."""
    turns: list[Turn] = []
    for round_no in range(1, config.round_cap + 1):
        for speaker in speakers:
            prompt = prompts.render(
                "debate_turn",
                {
                    "##input_proposition": proposition.statement,
                    "##transcript": format_transcript(turns),
                    "##speaker": speaker.speaker_id,
                },
            )
            request = ChatRequest(
                (Message("system", speaker.system_prompt), Message("user", prompt)),
                model_id=backend.model_id,
                temperature=config.temperature,
            )
            content = backend.chat(request)
            turns.append(Turn(speaker.speaker_id, speaker.role, round_no, content))
        if round_no % config.consensus_check_every == 0:
            raw, verdict = _moderate(proposition, turns, backend, prompts, config.temperature)
            turns.append(Turn(MODERATOR_ID, "moderator", round_no, raw))
            if verdict.consensus:
                return DebateTranscript(tuple(turns), "consensus")
    return DebateTranscript(tuple(turns), "round_cap")


def run_debate(
    proposition: Proposition,
    team: TeamAssignment,
    config: DebateConfig,
    backend: Any,
    prompts: Optional[PromptSet] = None,
) -> DebateTranscript:
    if len(team) != config.team_size:
        raise InvalidInput(f"team has {len(team)} members, config expects {config.team_size}")
    prompts = prompts or PromptSet.default()
    return debate_loop(proposition, team_speakers(team, prompts), config, backend, prompts)


_NUMBERED = re.compile(r"^(?:\d{1,2}[.)]|\(\d{1,2}\)|[①-⑳])\s*(.*)$")
_BULLET = re.compile(r"^(?:[-*•–]|●)\s+(.*)$")
_ACK = re.compile(r"^acknowledge?ments?\b\s*:?\s*(.*)$", re.IGNORECASE)


def _clean(line: str) -> str:
    line = line.strip()
    line = re.sub(r"^#+\s*", "", line)
    if line.startswith("**") and "**" in line[2:]:
        line = line.replace("**", "", 2)
    return line.strip()


def parse_plan(text: str) -> ArgumentPlan:
    """Parse a numbered outline into an :class:`ArgumentPlan`.

    Numbered lines (``1.``, ``1)``, ``(1)``, circled digits) start main points
    and dash or bullet lines add sub-points to the current one. A main point
    titled ``Acknowledgment`` fills the acknowledgment field instead. Lines
    before the first main point are ignored. When nothing is numbered,
    unindented bullets become main points and indented bullets their sub-points.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    has_numbers = any(_NUMBERED.match(_clean(line)) for line in lines)
    points: list[tuple[str, list[str]]] = []
    for line in lines:
        cleaned = _clean(line)
        indented = line[: len(line) - len(line.lstrip())] != ""
        numbered = _NUMBERED.match(cleaned)
        bullet = _BULLET.match(cleaned)
        if numbered and (has_numbers or not indented):
            points.append((numbered.group(1).strip(), []))
        elif bullet and not has_numbers and not indented:
            points.append((bullet.group(1).strip(), []))
        elif bullet and points:
            points[-1][1].append(bullet.group(1).strip())

    main_points = []
    ack_parts: list[str] = []
    for heading, subs in points:
        ack = _ACK.match(heading)
        if ack:
            if ack_parts:
                log.warning("plan has more than one acknowledgment point; merging them")
            ack_parts.extend(part for part in [ack.group(1).strip(), *subs] if part)
        elif heading:
            main_points.append(PlanPoint(heading, tuple(subs)))
    if not main_points:
        raise ParseError("plan has no main points")
    return ArgumentPlan(tuple(main_points), "\n".join(ack_parts) if ack_parts else None)


def render_plan(plan: ArgumentPlan) -> str:
    """Inverse of :func:`parse_plan`: numbered points with two-space-indented sub-points."""
    lines = []
    number = 1
    if plan.acknowledgment:
        lines.append(f"{number}. Acknowledgment:")
        lines.extend(f"  - {part}" for part in plan.acknowledgment.split("\n"))
        number += 1
    for point in plan.main_points:
        lines.append(f"{number}. {point.heading}")
        lines.extend(f"  - {sub}" for sub in point.sub_points)
        number += 1
    return "\n".join(lines)


def _plan_parser(max_points: Optional[int]):
    def parse(text: str) -> ArgumentPlan:
        plan = parse_plan(text)
        if max_points is not None and len(plan.main_points) > max_points:
            log.warning("plan has %d main points; keeping the first %d", len(plan.main_points), max_points)
            plan = ArgumentPlan(plan.main_points[:max_points], plan.acknowledgment)
        return plan

    return parse


def request_plan(
    prompt: str, backend: Any, temperature: float, max_points: Optional[int] = None, retries: int = PLAN_RETRIES
) -> ArgumentPlan:
    request = user_request(prompt, system=NEUTRAL_SYSTEM, model_id=backend.model_id, temperature=temperature)
    return chat_until(backend, request, _plan_parser(max_points), PLAN_REMINDER, retries)


def synthesize_plan(
    proposition: Proposition,
    transcript: DebateTranscript,
    backend: Any,
    prompts: Optional[PromptSet] = None,
    config: Optional[DebateConfig] = None,
) -> ArgumentPlan:
    if not transcript.turns:
        raise InvalidInput("cannot synthesize a plan from an empty transcript")
    prompts = prompts or PromptSet.default()
    config = config or DebateConfig()
    prompt = prompts.render(
        "plan_synthesis",
        {"##input_proposition": proposition.statement, "##transcript": format_transcript(transcript.turns)},
    )
    return request_plan(prompt, backend, config.temperature, config.plan_max_main_points)
