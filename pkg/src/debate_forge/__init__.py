"""Persona-based multi-agent debate for argumentative essay writing."""

from .backend import CachedBackend, ChatRequest, EmbeddingVector, Message, OpenAIBackend, ScriptedBackend, cached
from .core import (
    ArgumentPlan,
    DebateTranscript,
    GenerationRecord,
    Persona,
    PersonaPool,
    PlanPoint,
    Proposition,
    TeamAssignment,
    Turn,
    validate_record,
)
from .debate import ConsensusVerdict, DebateConfig, parse_plan, render_plan, run_debate, synthesize_plan
from .metrics import judge, perspective_diversity, self_bleu, self_emb
from .persona import create_persona_pool, select_team
from .pipelines import RunConfig, run_experiment, write_argument
from .store import RunStore, aggregate_report, load_topics

__version__ = "0.1.0"

__all__ = [
    "ArgumentPlan",
    "CachedBackend",
    "ChatRequest",
    "ConsensusVerdict",
    "DebateConfig",
    "DebateTranscript",
    "EmbeddingVector",
    "GenerationRecord",
    "Message",
    "OpenAIBackend",
    "Persona",
    "PersonaPool",
    "PlanPoint",
    "Proposition",
    "RunConfig",
    "RunStore",
    "ScriptedBackend",
    "TeamAssignment",
    "Turn",
    "aggregate_report",
    "cached",
    "create_persona_pool",
    "judge",
    "load_topics",
    "parse_plan",
    "perspective_diversity",
    "render_plan",
    "run_debate",
    "run_experiment",
    "select_team",
    "self_bleu",
    "self_emb",
    "synthesize_plan",
    "validate_record",
    "write_argument",
]
