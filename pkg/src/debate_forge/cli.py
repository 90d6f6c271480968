"""Command line interface: ``debate-forge {personas,plan,write,run,eval,report}``.

Settings resolve as built-in defaults, then a TOML ``--config`` file, then
flags. ``--backend scripted:<dir>`` runs fully offline from fixture files.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import tomli

from .backend import (
    DEFAULT_CHAT_MODEL,
    DEFAULT_EMBEDDING_MODEL,
    CachedBackend,
    ConfigurationError,
    OpenAIBackend,
    ScriptedBackend,
)
from .core import METHODS, ArgumentPlan, DebateForgeError, Proposition, utc_now
from .debate import DebateConfig, format_transcript, parse_plan, render_plan, run_debate, synthesize_plan
from .persona import create_persona_pool, select_team
from .pipelines import RunConfig, StageError, run_experiment, write_argument
from .prompts import PromptSet
from .store import RunStore, aggregate_report, evaluate_run, load_topics

log = logging.getLogger("debate_forge")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(DebateForgeError):
    pass


@dataclass(frozen=True)
class CliConfig:
    backend: str = "live"
    base_url: Optional[str] = None
    model_id: str = DEFAULT_CHAT_MODEL
    embedding_model_id: str = DEFAULT_EMBEDDING_MODEL
    temperature: float = 1.0
    team_size: int = 3
    round_cap: int = 6
    samples: int = 7
    prompt_dir: Optional[str] = None
    cache_mode: str = "on"
    cache_dir: Optional[str] = None
    concurrency: int = 4
    store: str = "."

    def __post_init__(self) -> None:
        if self.cache_mode not in ("off", "on", "replay"):
            raise ConfigurationError(f"cache_mode must be off, on or replay, got {self.cache_mode!r}")
        if self.concurrency < 1:
            raise ConfigurationError("concurrency must be >= 1")
        if self.samples < 1:
            raise ConfigurationError("samples must be >= 1")
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")
        if self.team_size < 2:
            raise ConfigurationError(f"team_size must be >= 2, got {self.team_size}")
        if self.round_cap < 1:
            raise ConfigurationError("round_cap must be >= 1")

    @property
    def scripted(self) -> bool:
        return self.backend.startswith("scripted:")

    def debate_config(self) -> DebateConfig:
        return DebateConfig(team_size=self.team_size, round_cap=self.round_cap, temperature=self.temperature)


def load_config(args: argparse.Namespace) -> CliConfig:
    values: dict[str, Any] = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                data = tomli.load(fh)
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        data = data.get("debate_forge", data)
        known = {f.name for f in fields(CliConfig)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(data)
    for f in fields(CliConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    try:
        return CliConfig(**values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def fixed_clock() -> Callable[[], datetime]:
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    moment = datetime.fromtimestamp(epoch, timezone.utc)
    return lambda: moment


def build_backend(config: CliConfig) -> Any:
    if config.scripted:
        backend: Any = ScriptedBackend.from_dir(config.backend.split(":", 1)[1])
    elif config.backend == "live":
        backend = OpenAIBackend(
            base_url=config.base_url,
            model_id=config.model_id,
            embedding_model_id=config.embedding_model_id,
            concurrency=config.concurrency,
        )
    else:
        raise ConfigurationError(f"backend must be 'live' or 'scripted:<dir>', got {config.backend!r}")
    if config.cache_mode == "off":
        return backend
    cache_dir = config.cache_dir or os.path.join(config.store, "cache")
    return CachedBackend(backend, cache_dir, mode=config.cache_mode)


def _topics(args: argparse.Namespace) -> list[Proposition]:
    if getattr(args, "topic", None):
        return [Proposition("t000", args.topic)]
    path = getattr(args, "topics", None)
    if not path:
        raise UsageError("give a topics file or --topic")
    try:
        return load_topics(path)
    except OSError as exc:
        raise UsageError(f"cannot read topics file: {exc}") from exc


def _out(text: str = "") -> None:
    sys.stdout.write(text + "\n")


def _describe_persona(p: Any) -> str:
    line = f"  [{p.agent_id}] {p.description}: {p.claim}"
    if p.selection_reason:
        line += f"\n      reason: {p.selection_reason}"
    return line


def cmd_personas(args: argparse.Namespace, config: CliConfig, backend: Any, prompts: PromptSet) -> int:
    for topic in _topics(args):
        try:
            pool = create_persona_pool(topic, backend, prompts, temperature=config.temperature)
        except DebateForgeError as exc:
            raise StageError("persona_pool", exc) from exc
        try:
            team = select_team(pool, topic, backend, config.team_size, prompts, temperature=config.temperature)
        except DebateForgeError as exc:
            raise StageError("persona_selection", exc) from exc
        _out(f"Topic {topic.id}: {topic.statement}")
        _out(f"Persona pool ({len(pool)}):")
        for persona in pool.personas:
            _out(_describe_persona(persona))
        _out(f"Selected team ({len(team)}):")
        for member in team.members:
            _out(_describe_persona(member))
    return EXIT_OK


def cmd_plan(args: argparse.Namespace, config: CliConfig, backend: Any, prompts: PromptSet) -> int:
    topic = _topics(args)[0]
    debate = config.debate_config()
    stage = "persona_pool"
    try:
        pool = create_persona_pool(topic, backend, prompts, temperature=config.temperature)
        stage = "persona_selection"
        team = select_team(pool, topic, backend, config.team_size, prompts, temperature=config.temperature)
        stage = "debate"
        transcript = run_debate(topic, team, debate, backend, prompts)
        stage = "plan"
        plan = synthesize_plan(topic, transcript, backend, prompts, debate)
    except DebateForgeError as exc:
        raise StageError(stage, exc) from exc
    _out(f"Topic {topic.id}: {topic.statement}")
    _out(f"Debate ({transcript.rounds} rounds, ended by {transcript.terminated_by}):")
    _out(format_transcript(transcript.turns))
    _out()
    _out("Argument plan:")
    _out(render_plan(plan))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        (out / "transcript.jsonl").write_text(
            "".join(json.dumps(t.to_dict(), ensure_ascii=False) + "\n" for t in transcript.turns), encoding="utf-8"
        )
    return EXIT_OK


def _read_plan(path: str) -> ArgumentPlan:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read plan file: {exc}") from exc
    if text.lstrip().startswith("{"):
        try:
            return ArgumentPlan.from_dict(json.loads(text))
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"plan file is not a valid plan: {exc}") from exc
    try:
        return parse_plan(text)
    except DebateForgeError as exc:
        raise UsageError(f"plan file is not a valid plan: {exc}") from exc


def cmd_write(args: argparse.Namespace, config: CliConfig, backend: Any, prompts: PromptSet) -> int:
    topic = _topics(args)[0]
    plan = _read_plan(args.plan)
    try:
        essay = write_argument(topic, plan, backend, prompts, config.temperature)
    except DebateForgeError as exc:
        raise StageError("writing", exc) from exc
    _out(essay)
    return EXIT_OK


def _store(config: CliConfig) -> RunStore:
    if config.scripted:
        return RunStore(config.store, clock=fixed_clock(), seed=0)
    return RunStore(config.store)


def cmd_run(args: argparse.Namespace, config: CliConfig, backend: Any, prompts: PromptSet) -> int:
    topics = _topics(args)
    if not topics:
        raise UsageError("topics file is empty")
    run_config = RunConfig(
        method=args.method,
        samples_per_topic=config.samples,
        model_id=backend.model_id,
        temperature=config.temperature,
        debate=config.debate_config(),
    )
    clock = fixed_clock() if config.scripted else utc_now
    store = _store(config)
    run_id = run_experiment(
        topics, run_config, backend, store, prompts, concurrency=config.concurrency, clock=clock, run_id=args.run_id
    )
    entries = store.manifest(run_id)["entries"]
    failed = sum(1 for e in entries if e["status"] != "ok")
    if failed:
        log.warning("%d of %d samples failed; see manifest.json", failed, len(entries))
    _out(run_id)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: CliConfig, backend: Any, prompts: PromptSet) -> int:
    store = _store(config)
    metrics = evaluate_run(store, args.run_id, backend, prompts, with_judge=not args.no_judge)
    for warning in metrics["warnings"]:
        sys.stderr.write(f"warning: {warning}\n")
    summary = metrics["summary"]
    _out(f"run {args.run_id} ({metrics['method']})")
    for key, label in (("rel", "Rel"), ("qual", "Qual"), ("s_bleu", "S-BLEU"), ("s_emb", "S-Emb"), ("pers", "Pers")):
        value = summary.get(key)
        _out(f"  {label:<7}{'' if value is None else f'{value:.2f}'}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace, config: CliConfig, backend: Any, prompts: PromptSet) -> int:
    store = _store(config)
    table = aggregate_report(store, args.run_ids, backend, prompts, recompute=args.recompute)
    _out(table.to_text())
    if args.csv:
        Path(args.csv).write_text(table.to_csv(), encoding="utf-8")
    return EXIT_OK


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with settings (flags take precedence)")
    common.add_argument("--backend", help="'live' (default) or 'scripted:<fixture dir>'")
    common.add_argument("--base-url", dest="base_url", help="OpenAI-compatible base URL (env DEBATE_FORGE_BASE_URL)")
    common.add_argument("--model", dest="model_id", help=f"chat model (default {DEFAULT_CHAT_MODEL})")
    common.add_argument("--embedding-model", dest="embedding_model_id")
    common.add_argument("--temperature", type=float)
    common.add_argument("--team-size", dest="team_size", type=_positive_int)
    common.add_argument("--round-cap", dest="round_cap", type=_positive_int)
    common.add_argument("--samples", type=_positive_int, help="outputs per topic (default 7)")
    common.add_argument("--prompt-dir", dest="prompt_dir", help="directory overriding the prompt templates")
    common.add_argument("--cache-mode", dest="cache_mode", choices=("off", "on", "replay"))
    common.add_argument("--cache-dir", dest="cache_dir")
    common.add_argument("--concurrency", type=_positive_int)
    common.add_argument("--store", help="store root holding runs/ (default .)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="debate-forge", description="Persona-based multi-agent argument writing.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("personas", parents=[common], help="create a persona pool and select a team")
    p.add_argument("topics", nargs="?", help="JSONL topics file")
    p.add_argument("--topic", help="a single proposition")
    p.set_defaults(func=cmd_personas)

    p = sub.add_parser("plan", parents=[common], help="debate one topic and print the transcript and plan")
    p.add_argument("topics", nargs="?")
    p.add_argument("--topic")
    p.add_argument("--out", help="directory for plan.json and transcript.jsonl")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("write", parents=[common], help="write an essay from a plan file")
    p.add_argument("topics", nargs="?")
    p.add_argument("--topic")
    p.add_argument("--plan", required=True, help="plan as JSON or as a numbered outline")
    p.set_defaults(func=cmd_write)

    p = sub.add_parser("run", parents=[common], help="generate samples for every topic")
    p.add_argument("topics", help="JSONL topics file")
    p.add_argument("--method", choices=METHODS, default="persona_debate")
    p.add_argument("--run-id", dest="run_id")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", parents=[common], help="compute metrics.json for a run")
    p.add_argument("run_id")
    p.add_argument("--no-judge", action="store_true", help="skip LLM judge scores")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="print a comparison table over runs")
    p.add_argument("run_ids", nargs="+")
    p.add_argument("--csv", help="also write the table as CSV")
    p.add_argument("--recompute", action="store_true", help="ignore existing metrics.json")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = load_config(args)
        prompts = PromptSet.from_dir(config.prompt_dir)
        backend = build_backend(config)
    except DebateForgeError as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_USAGE
    try:
        return args.func(args, config, backend, prompts)
    except (UsageError, ConfigurationError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except StageError as exc:
        sys.stderr.write(f"error in stage {exc.stage}: {exc.cause}\n")
        return EXIT_RUNTIME
    except (DebateForgeError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
