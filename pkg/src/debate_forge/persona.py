"""Persona pool creation and team selection."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Any, Optional

from .backend import DEFAULT_TEMPERATURE, chat_until, user_request
from .core import (
    DEFAULT_POOL_MAX,
    DEFAULT_POOL_MIN,
    DEFAULT_TEAM_SIZE,
    InvalidInput,
    ParseError,
    Persona,
    PersonaPool,
    Proposition,
    TeamAssignment,
)
from .prompts import PromptSet, number_word

log = logging.getLogger(__name__)

FORMAT_RETRIES = 2
POOL_REMINDER = (
    'Output between {lo} and {hi} lines, each a single json object with keys '
    '"agent_id", "description" and "claim", and nothing else.'
)
SELECT_REMINDER = (
    'Output exactly {n} lines, each a single json object with keys "agent_id", '
    '"description", "claim" and "reason". Only use agent_ids from the candidate list.'
)

# "- Agent A - A museum employee: Making museums free would ..."
_AGENT_LINE = re.compile(r"^[-*•]?\s*Agent\s+([A-Za-z]|\d+)\s*[-–—:]\s*(.+?):\s+(.+)$")


@dataclass(frozen=True)
class PersonaLine:
    raw: str
    parsed: Persona
    reason: Optional[str] = None


def _agent_index(label: str) -> int:
    if label.isdigit():
        return int(label)
    return ord(label.upper()) - ord("A")


def _from_object(obj: dict[str, Any]) -> tuple[Persona, Optional[str]]:
    try:
        agent_id = int(obj["agent_id"])
        description = str(obj["description"]).strip()
        claim = str(obj["claim"]).strip()
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"persona object missing or bad field: {exc}") from exc
    reason = obj.get("reason")
    reason = str(reason).strip() if reason is not None else None
    try:
        return Persona(agent_id, description, claim), reason
    except InvalidInput as exc:
        raise ParseError(str(exc)) from exc


def parse_persona_line(raw: str) -> Optional[PersonaLine]:
    """Parse one persona line, or return None if the line holds no persona.

    Accepts a json object (optionally with a ``reason`` key) or the
    ``Agent A - description: claim`` layout.
    """
    line = raw.strip().rstrip(",")
    if not line:
        return None
    start, end = line.find("{"), line.rfind("}")
    if start != -1 and end > start:
        try:
            obj = json.loads(line[start : end + 1])
        except ValueError:
            obj = None
        if isinstance(obj, dict) and "agent_id" in obj:
            persona, reason = _from_object(obj)
            return PersonaLine(raw, persona, reason)
    match = _AGENT_LINE.match(line)
    if match:
        label, description, claim = match.groups()
        persona = Persona(_agent_index(label), description.strip(), claim.strip().rstrip(";"))
        return PersonaLine(raw, persona)
    return None


def parse_persona_lines(text: str, strict: bool = False) -> list[PersonaLine]:
    """Parse every persona line in ``text``; other lines are skipped with a warning."""
    lines = []
    for raw in text.splitlines():
        stripped = raw.strip()
        if not stripped or stripped.startswith("```") or stripped == "...":
            continue
        try:
            parsed = parse_persona_line(raw)
        except ParseError:
            if strict:
                raise
            parsed = None
        if parsed is None:
            if strict:
                raise ParseError(f"not a persona line: {stripped[:80]!r}")
            log.warning("skipping non-persona line: %.80s", stripped)
            continue
        lines.append(parsed)
    return lines


def format_candidate_list(pool: PersonaPool) -> str:
    return "\n".join(
        json.dumps({"agent_id": p.agent_id, "description": p.description, "claim": p.claim}, ensure_ascii=False)
        for p in pool.personas
    )


def _pool_parser(proposition_id: str, lo: int, hi: int, strict: bool):
    def parse(text: str) -> PersonaPool:
        personas = [line.parsed for line in parse_persona_lines(text, strict=strict)]
        if not lo <= len(personas) <= hi:
            raise ParseError(f"got {len(personas)} personas, expected {lo} to {hi}")
        ids = [p.agent_id for p in personas]
        if len(set(ids)) != len(ids):
            log.warning("duplicate agent_ids %s; reindexing 0..%d", ids, len(ids) - 1)
            personas = [Persona(i, p.description, p.claim) for i, p in enumerate(personas)]
        return PersonaPool(proposition_id, tuple(personas))

    return parse


def create_persona_pool(
    proposition: Proposition,
    backend: Any,
    prompts: Optional[PromptSet] = None,
    pool_min: int = DEFAULT_POOL_MIN,
    pool_max: int = DEFAULT_POOL_MAX,
    retries: int = FORMAT_RETRIES,
    strict: bool = False,
    temperature: float = DEFAULT_TEMPERATURE,
) -> PersonaPool:
    prompts = prompts or PromptSet.default()
    prompt = prompts.render("persona_pool", {"##input_proposition": proposition.statement})
    request = user_request(prompt, model_id=backend.model_id, temperature=temperature)
    return chat_until(
        backend,
        request,
        _pool_parser(proposition.id, pool_min, pool_max, strict),
        POOL_REMINDER.format(lo=pool_min, hi=pool_max),
        retries,
    )


def _team_parser(pool: PersonaPool, team_size: int, strict: bool):
    def parse(text: str) -> TeamAssignment:
        chosen: list[Persona] = []
        for line in parse_persona_lines(text, strict=strict):
            source = pool.get(line.parsed.agent_id)
            if source is None:
                raise ParseError(f"selected agent_id {line.parsed.agent_id} is not in the candidate list")
            if any(m.agent_id == source.agent_id for m in chosen):
                continue
            if not (line.reason or "").strip():
                raise ParseError(f"selection of agent_id {source.agent_id} has no reason")
            chosen.append(Persona(source.agent_id, source.description, source.claim, line.reason))
        if len(chosen) < team_size:
            raise ParseError(f"got {len(chosen)} distinct selections, expected {team_size}")
        if len(chosen) > team_size:
            log.warning("model selected %d personas; keeping the first %d", len(chosen), team_size)
        return TeamAssignment(tuple(chosen[:team_size]))

    return parse


def select_team(
    pool: PersonaPool,
    proposition: Proposition,
    backend: Any,
    team_size: int = DEFAULT_TEAM_SIZE,
    prompts: Optional[PromptSet] = None,
    retries: int = FORMAT_RETRIES,
    strict: bool = False,
    temperature: float = DEFAULT_TEMPERATURE,
) -> TeamAssignment:
    if team_size < 1:
        raise InvalidInput("team size must be positive")
    if len(pool) < team_size:
        raise InvalidInput(f"pool of {len(pool)} personas cannot supply a team of {team_size}")
    prompts = prompts or PromptSet.default()
    prompt = prompts.render(
        "persona_select",
        {
            "##input_proposition": proposition.statement,
            "###candidate_list": format_candidate_list(pool),
            "##team_size": number_word(team_size),
        },
    )
    request = user_request(prompt, model_id=backend.model_id, temperature=temperature)
    return chat_until(
        backend, request, _team_parser(pool, team_size, strict), SELECT_REMINDER.format(n=team_size), retries
    )
