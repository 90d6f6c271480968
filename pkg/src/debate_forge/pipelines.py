"""Generation methods: persona debate and the three baselines, plus the essay writer."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Optional, Sequence

from .backend import DEFAULT_CHAT_MODEL, DEFAULT_TEMPERATURE, chat_until, user_request
from .core import (
    METHODS,
    ArgumentPlan,
    DebateForgeError,
    GenerationRecord,
    InvalidInput,
    ParseError,
    Proposition,
    utc_now,
)
from .debate import DebateConfig, debate_loop, planner_speakers, render_plan, request_plan, run_debate, synthesize_plan
from .persona import create_persona_pool, select_team
from .prompts import PromptSet

log = logging.getLogger(__name__)

WRITE_RETRIES = 1


class StageError(DebateForgeError):
    """A pipeline stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    method: str = "persona_debate"
    samples_per_topic: int = 7
    model_id: str = DEFAULT_CHAT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    debate: DebateConfig = field(default_factory=DebateConfig)

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise InvalidInput(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        if self.samples_per_topic < 1:
            raise InvalidInput("samples_per_topic must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "samples_per_topic": self.samples_per_topic,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "debate": self.debate.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        data = dict(data)
        data["debate"] = DebateConfig.from_dict(data.get("debate", {}))
        return cls(**data)


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self) -> None:
        return None

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc is not None and isinstance(exc, Exception) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _essay_parser(text: str) -> str:
    if not text or not text.strip():
        raise ParseError("empty completion")
    return text


def write_argument(
    proposition: Proposition,
    plan: ArgumentPlan,
    backend: Any,
    prompts: Optional[PromptSet] = None,
    temperature: float = DEFAULT_TEMPERATURE,
) -> str:
    prompts = prompts or PromptSet.default()
    prompt = prompts.render("surface_writing", {"{proposition}": proposition.statement, "{plan}": render_plan(plan)})
    request = user_request(prompt, model_id=backend.model_id, temperature=temperature)
    return chat_until(backend, request, _essay_parser, "Write the essay now.", WRITE_RETRIES)


def _record(proposition: Proposition, method: str, sample_index: int, essay: str, backend: Any,
            clock: Callable[[], datetime], **provenance: Any) -> GenerationRecord:
    return GenerationRecord(
        proposition_id=proposition.id,
        method=method,
        sample_index=sample_index,
        essay=essay,
        model_id=backend.model_id,
        created_at=clock(),
        **provenance,
    )


def _require_method(config: RunConfig, method: str) -> None:
    if config.method != method:
        raise InvalidInput(f"config.method is {config.method!r}, expected {method!r}")


def run_persona_debate(
    proposition: Proposition,
    config: RunConfig,
    backend: Any,
    prompts: Optional[PromptSet] = None,
    sample_index: int = 0,
    clock: Callable[[], datetime] = utc_now,
) -> GenerationRecord:
    _require_method(config, "persona_debate")
    prompts = prompts or PromptSet.default()
    temperature = config.temperature
    with _Stage("persona_pool"):
        pool = create_persona_pool(proposition, backend, prompts, temperature=temperature)
    with _Stage("persona_selection"):
        team = select_team(pool, proposition, backend, config.debate.team_size, prompts, temperature=temperature)
    with _Stage("debate"):
        transcript = run_debate(proposition, team, config.debate, backend, prompts)
    with _Stage("plan"):
        plan = synthesize_plan(proposition, transcript, backend, prompts, config.debate)
    with _Stage("writing"):
        essay = write_argument(proposition, plan, backend, prompts, temperature)
    return _record(proposition, "persona_debate", sample_index, essay, backend, clock,
                   plan=plan, transcript=transcript, team=team, pool=pool)


def run_llm_e2e(
    proposition: Proposition,
    config: RunConfig,
    backend: Any,
    prompts: Optional[PromptSet] = None,
    sample_index: int = 0,
    clock: Callable[[], datetime] = utc_now,
) -> GenerationRecord:
    _require_method(config, "llm_e2e")
    prompts = prompts or PromptSet.default()
    with _Stage("writing"):
        prompt = prompts.render("e2e_writing", {"{proposition}": proposition.statement})
        request = user_request(prompt, model_id=backend.model_id, temperature=config.temperature)
        essay = chat_until(backend, request, _essay_parser, "Write the essay now.", WRITE_RETRIES)
    return _record(proposition, "llm_e2e", sample_index, essay, backend, clock)


def run_llm_plan(
    proposition: Proposition,
    config: RunConfig,
    backend: Any,
    prompts: Optional[PromptSet] = None,
    sample_index: int = 0,
    clock: Callable[[], datetime] = utc_now,
) -> GenerationRecord:
    _require_method(config, "llm_plan")
    prompts = prompts or PromptSet.default()
    with _Stage("plan"):
        prompt = prompts.render("plan_direct", {"##input_proposition": proposition.statement})
        plan = request_plan(prompt, backend, config.temperature, config.debate.plan_max_main_points)
    with _Stage("writing"):
        essay = write_argument(proposition, plan, backend, prompts, config.temperature)
    return _record(proposition, "llm_plan", sample_index, essay, backend, clock, plan=plan)


def run_agent_debate(
    proposition: Proposition,
    config: RunConfig,
    backend: Any,
    prompts: Optional[PromptSet] = None,
    sample_index: int = 0,
    clock: Callable[[], datetime] = utc_now,
) -> GenerationRecord:
    _require_method(config, "agent_debate")
    prompts = prompts or PromptSet.default()
    with _Stage("debate"):
        transcript = debate_loop(proposition, planner_speakers(prompts), config.debate, backend, prompts)
    with _Stage("plan"):
        plan = synthesize_plan(proposition, transcript, backend, prompts, config.debate)
    with _Stage("writing"):
        essay = write_argument(proposition, plan, backend, prompts, config.temperature)
    return _record(proposition, "agent_debate", sample_index, essay, backend, clock, plan=plan, transcript=transcript)


RUNNERS = {
    "persona_debate": run_persona_debate,
    "llm_e2e": run_llm_e2e,
    "llm_plan": run_llm_plan,
    "agent_debate": run_agent_debate,
}


def generate(
    proposition: Proposition,
    config: RunConfig,
    backend: Any,
    prompts: Optional[PromptSet] = None,
    sample_index: int = 0,
    clock: Callable[[], datetime] = utc_now,
) -> GenerationRecord:
    return RUNNERS[config.method](proposition, config, backend, prompts, sample_index, clock)


def run_experiment(
    topics: Sequence[Proposition],
    config: RunConfig,
    backend: Any,
    store: Any,
    prompts: Optional[PromptSet] = None,
    concurrency: int = 4,
    clock: Callable[[], datetime] = utc_now,
    run_id: Optional[str] = None,
) -> str:
    """Generate ``samples_per_topic`` records per topic and persist them.

    Samples run concurrently; results are persisted in (topic, sample) order so
    the run directory does not depend on scheduling. A failing sample becomes a
    ``failed`` manifest entry and does not stop the run.
    """
    if not topics:
        raise InvalidInput("no topics to run")
    prompts = prompts or PromptSet.default()
    run_id = store.create_run(config, prompts.digests(), topics, run_id=run_id)
    jobs = [(topic, k) for topic in topics for k in range(config.samples_per_topic)]

    def work(job: tuple[Proposition, int]) -> GenerationRecord:
        topic, k = job
        return generate(topic, config, backend, prompts, k, clock)

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        futures = [pool.submit(work, job) for job in jobs]
        for (topic, k), future in zip(jobs, futures):
            try:
                record = future.result()
            except Exception as exc:
                log.warning("sample %s/%d failed: %s", topic.id, k, exc)
                store.record_failure(run_id, topic.id, k, f"{type(exc).__name__}: {exc}")
            else:
                store.persist_record(run_id, record)
    return run_id
