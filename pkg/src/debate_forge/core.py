"""Domain types shared by every stage of the pipeline.

All types are frozen dataclasses holding tuples, so values can be shared
between threads. Each type encodes to a plain JSON object via ``to_dict`` and
decodes with ``from_dict``; field names are the snake_case names below.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Optional

FORMAT_VERSION = 1

METHODS = ("persona_debate", "llm_e2e", "llm_plan", "agent_debate")
PLAN_METHODS = frozenset({"persona_debate", "llm_plan", "agent_debate"})
DEBATE_METHODS = frozenset({"persona_debate", "agent_debate"})
PERSONA_METHODS = frozenset({"persona_debate"})

ROLES = ("main_team_member", "critic", "moderator")
TERMINATIONS = ("consensus", "round_cap")

# Defaults; overridable through configuration.
DEFAULT_TEAM_SIZE = 3
DEFAULT_POOL_MIN = 5
DEFAULT_POOL_MAX = 10


class DebateForgeError(Exception):
    """Base class for errors raised by this package."""


class InvalidInput(DebateForgeError, ValueError):
    """A precondition on an operation's input was violated."""


class ParseError(DebateForgeError):
    """Model output could not be parsed into the expected structure."""


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def _encode_time(value: datetime) -> str:
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc).isoformat()


def _decode_time(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


@dataclass(frozen=True)
class Proposition:
    id: str
    statement: str
    domain_tag: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.statement or not self.statement.strip():
            raise InvalidInput("proposition statement is empty")

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "statement": self.statement, "domain_tag": self.domain_tag}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Proposition":
        return cls(id=data["id"], statement=data["statement"], domain_tag=data.get("domain_tag"))


@dataclass(frozen=True)
class Persona:
    agent_id: int
    description: str
    claim: str
    selection_reason: Optional[str] = None

    def __post_init__(self) -> None:
        if not isinstance(self.agent_id, int) or self.agent_id < 0:
            raise InvalidInput(f"agent_id must be a non-negative integer, got {self.agent_id!r}")
        if not self.description.strip():
            raise InvalidInput("persona description is empty")
        if not self.claim.strip():
            raise InvalidInput("persona claim is empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "agent_id": self.agent_id,
            "description": self.description,
            "claim": self.claim,
            "selection_reason": self.selection_reason,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Persona":
        return cls(
            agent_id=int(data["agent_id"]),
            description=data["description"],
            claim=data["claim"],
            selection_reason=data.get("selection_reason"),
        )


@dataclass(frozen=True)
class PersonaPool:
    proposition_id: str
    personas: tuple[Persona, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "personas", tuple(self.personas))
        ids = [p.agent_id for p in self.personas]
        if len(set(ids)) != len(ids):
            raise InvalidInput(f"duplicate agent_ids in pool: {ids}")

    def __len__(self) -> int:
        return len(self.personas)

    def get(self, agent_id: int) -> Optional[Persona]:
        for persona in self.personas:
            if persona.agent_id == agent_id:
                return persona
        return None

    def check_size(self, lo: int = DEFAULT_POOL_MIN, hi: int = DEFAULT_POOL_MAX) -> None:
        if not lo <= len(self.personas) <= hi:
            raise InvalidInput(f"pool size {len(self.personas)} outside [{lo}, {hi}]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "proposition_id": self.proposition_id,
            "personas": [p.to_dict() for p in self.personas],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PersonaPool":
        return cls(
            proposition_id=data["proposition_id"],
            personas=tuple(Persona.from_dict(p) for p in data["personas"]),
        )


@dataclass(frozen=True)
class TeamAssignment:
    members: tuple[Persona, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(self.members))
        ids = [m.agent_id for m in self.members]
        if len(set(ids)) != len(ids):
            raise InvalidInput(f"duplicate agent_ids in team: {ids}")
        for member in self.members:
            if not (member.selection_reason or "").strip():
                raise InvalidInput(f"team member {member.agent_id} has no selection_reason")

    def __len__(self) -> int:
        return len(self.members)

    def to_dict(self) -> dict[str, Any]:
        return {"members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TeamAssignment":
        return cls(members=tuple(Persona.from_dict(m) for m in data["members"]))


@dataclass(frozen=True)
class Turn:
    speaker_id: str
    role: str
    round: int
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise InvalidInput(f"unknown turn role {self.role!r}")
        if self.round < 1:
            raise InvalidInput(f"round must be positive, got {self.round}")

    def to_dict(self) -> dict[str, Any]:
        return {"speaker_id": self.speaker_id, "role": self.role, "round": self.round, "content": self.content}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Turn":
        return cls(speaker_id=data["speaker_id"], role=data["role"], round=int(data["round"]), content=data["content"])


@dataclass(frozen=True)
class DebateTranscript:
    turns: tuple[Turn, ...]
    terminated_by: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        if self.terminated_by not in TERMINATIONS:
            raise InvalidInput(f"unknown termination {self.terminated_by!r}")

    @property
    def rounds(self) -> int:
        return max((t.round for t in self.turns), default=0)

    def violations(self, round_cap: Optional[int] = None, team_size: Optional[int] = None) -> list[str]:
        problems = []
        if self.rounds >= 1 and not any(t.role == "critic" for t in self.turns):
            problems.append("transcript has no critic turn")
        rounds = [t.round for t in self.turns]
        if any(b < a for a, b in zip(rounds, rounds[1:])):
            problems.append("transcript round numbers decrease")
        if round_cap is not None and team_size is not None:
            if len(self.turns) > round_cap * (team_size + 2):
                problems.append("transcript longer than round_cap * (N + 2)")
        return problems

    def to_dict(self) -> dict[str, Any]:
        return {"turns": [t.to_dict() for t in self.turns], "terminated_by": self.terminated_by}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DebateTranscript":
        return cls(turns=tuple(Turn.from_dict(t) for t in data["turns"]), terminated_by=data["terminated_by"])


@dataclass(frozen=True)
class PlanPoint:
    heading: str
    sub_points: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "sub_points", tuple(self.sub_points))
        if not self.heading.strip():
            raise InvalidInput("plan heading is empty")

    def to_dict(self) -> dict[str, Any]:
        return {"heading": self.heading, "sub_points": list(self.sub_points)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PlanPoint":
        return cls(heading=data["heading"], sub_points=tuple(data.get("sub_points", ())))


@dataclass(frozen=True)
class ArgumentPlan:
    main_points: tuple[PlanPoint, ...]
    acknowledgment: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "main_points", tuple(self.main_points))
        if not self.main_points:
            raise InvalidInput("plan has no main points")

    def to_dict(self) -> dict[str, Any]:
        return {"main_points": [p.to_dict() for p in self.main_points], "acknowledgment": self.acknowledgment}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ArgumentPlan":
        return cls(
            main_points=tuple(PlanPoint.from_dict(p) for p in data["main_points"]),
            acknowledgment=data.get("acknowledgment"),
        )


@dataclass(frozen=True)
class GenerationRecord:
    proposition_id: str
    method: str
    sample_index: int
    essay: str
    model_id: str
    created_at: datetime = field(default_factory=utc_now)
    plan: Optional[ArgumentPlan] = None
    transcript: Optional[DebateTranscript] = None
    team: Optional[TeamAssignment] = None
    pool: Optional[PersonaPool] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "proposition_id": self.proposition_id,
            "method": self.method,
            "sample_index": self.sample_index,
            "essay": self.essay,
            "model_id": self.model_id,
            "created_at": _encode_time(self.created_at),
            "plan": self.plan.to_dict() if self.plan else None,
            "transcript": self.transcript.to_dict() if self.transcript else None,
            "team": self.team.to_dict() if self.team else None,
            "pool": self.pool.to_dict() if self.pool else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GenerationRecord":
        version = data.get("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ParseError(f"unsupported format_version {version}")
        return cls(
            proposition_id=data["proposition_id"],
            method=data["method"],
            sample_index=int(data["sample_index"]),
            essay=data["essay"],
            model_id=data["model_id"],
            created_at=_decode_time(data["created_at"]),
            plan=ArgumentPlan.from_dict(data["plan"]) if data.get("plan") else None,
            transcript=DebateTranscript.from_dict(data["transcript"]) if data.get("transcript") else None,
            team=TeamAssignment.from_dict(data["team"]) if data.get("team") else None,
            pool=PersonaPool.from_dict(data["pool"]) if data.get("pool") else None,
        )


def validate_record(record: GenerationRecord, samples: Optional[int] = None) -> list[str]:
    """Return every invariant the record violates; an empty list means valid.

    ``samples`` (M) enables the ``sample_index < M`` check.
    """
    problems: list[str] = []
    if record.method not in METHODS:
        problems.append(f"unknown method {record.method!r}")
    if not record.essay.strip():
        problems.append("essay empty")
    if record.sample_index < 0 or (samples is not None and record.sample_index >= samples):
        problems.append(f"sample_index {record.sample_index} out of range")
    if not record.model_id:
        problems.append("model_id empty")

    wants_plan = record.method in PLAN_METHODS
    if record.plan is not None and not wants_plan:
        problems.append("plan present for plan-free method")
    if record.plan is None and wants_plan:
        problems.append("plan missing for planning method")

    wants_transcript = record.method in DEBATE_METHODS
    if record.transcript is not None and not wants_transcript:
        problems.append("transcript present for debate-free method")
    if record.transcript is None and wants_transcript:
        problems.append("transcript missing for debate method")
    if record.transcript is not None:
        problems.extend(record.transcript.violations())

    wants_team = record.method in PERSONA_METHODS
    if record.team is not None and not wants_team:
        problems.append("team present for persona-free method")
    if record.team is None and wants_team:
        problems.append("team missing for persona method")
    if record.pool is not None and not wants_team:
        problems.append("pool present for persona-free method")
    if record.team is not None and record.pool is not None:
        for member in record.team.members:
            source = record.pool.get(member.agent_id)
            if source is None or (source.description, source.claim) != (member.description, member.claim):
                problems.append(f"team member {member.agent_id} not drawn from pool")
    return problems
