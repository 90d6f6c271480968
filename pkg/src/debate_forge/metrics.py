"""Automatic evaluation: lexical, semantic and perspective diversity, plus LLM judging.

All diversity scores are on a x100 scale and lower means more diverse. Sums go
through :func:`math.fsum`, which is exactly rounded, so every score is
invariant under reordering of its inputs.
"""

from __future__ import annotations

import logging
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from itertools import groupby
from typing import Any, Optional, Sequence

from .backend import DEFAULT_TEMPERATURE, chat_until, user_request
from .core import DebateForgeError, InvalidInput, ParseError, Proposition
from .prompts import PromptSet

log = logging.getLogger(__name__)

BLEU_ORDER = 4
SMOOTHING_EPSILON = 1e-9
JUDGE_ASPECTS = ("relevance", "quality")

class MetricError(DebateForgeError):
    pass


def _char_class(ch: str) -> str:
    # Combining marks stay inside words; \w alone would split them off.
    if ch.isalnum() or ch == "_" or unicodedata.category(ch) in ("Mn", "Mc"):
        return "word"
    return "space" if ch.isspace() else "punct"


def tokenize(text: str) -> list[str]:
    """Lowercase, split punctuation from words, then split on whitespace."""
    tokens: list[str] = []
    for kind, run in groupby(text.lower(), key=_char_class):
        if kind == "word":
            tokens.append("".join(run))
        elif kind == "punct":
            tokens.extend(run)
    return tokens


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(hypothesis: Sequence[str], references: Sequence[Sequence[str]], order: int = BLEU_ORDER) -> float:
    """BLEU of one tokenized hypothesis against several references, in [0, 1].

    Uniform weights over 1..``order``-grams, counts clipped by the maximum
    count in any reference, brevity penalty against the closest reference
    length (shorter wins ties). A zero match count for some order is replaced
    by ``SMOOTHING_EPSILON``.
    """
    if not hypothesis:
        raise InvalidInput("hypothesis is empty")
    if not references:
        raise InvalidInput("BLEU needs at least one reference")
    log_precision = []
    for n in range(1, order + 1):
        hyp = ngram_counts(hypothesis, n)
        max_ref: Counter = Counter()
        for ref in references:
            max_ref |= ngram_counts(ref, n)
        matches = sum(min(count, max_ref[gram]) for gram, count in hyp.items())
        total = max(sum(hyp.values()), 1)
        log_precision.append(math.log((matches if matches else SMOOTHING_EPSILON) / total))
    c = len(hypothesis)
    r = min((len(ref) for ref in references), key=lambda length: (abs(length - c), length))
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(math.fsum(log_precision) / order)


def _require_outputs(outputs: Sequence[str], what: str = "outputs") -> None:
    if len(outputs) < 2:
        raise InvalidInput(f"need at least 2 {what}, got {len(outputs)}")
    for text in outputs:
        if not text or not text.strip():
            raise InvalidInput(f"{what} must be non-empty")


def self_bleu_scores(outputs: Sequence[str]) -> list[float]:
    """Per-output BLEU (x100) against all other outputs as references."""
    _require_outputs(outputs)
    tokens = [tokenize(text) for text in outputs]
    return [
        100.0 * sentence_bleu(hyp, [ref for j, ref in enumerate(tokens) if j != i])
        for i, hyp in enumerate(tokens)
    ]


def self_bleu(outputs: Sequence[str]) -> float:
    scores = self_bleu_scores(outputs)
    return math.fsum(scores) / len(scores)


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    """Cosine similarity clamped to [-1, 1]; exactly 1.0 for a vector with itself."""
    if len(u) != len(v):
        raise InvalidInput(f"vector lengths differ: {len(u)} vs {len(v)}")
    uu = math.fsum(a * a for a in u)
    vv = math.fsum(b * b for b in v)
    if uu == 0.0 or vv == 0.0:
        raise InvalidInput("cosine similarity of a zero vector")
    dot = math.fsum(a * b for a, b in zip(u, v))
    return max(-1.0, min(1.0, dot / math.sqrt(uu * vv)))


def _values(vectors: Sequence[Any]) -> list[tuple[float, ...]]:
    return [tuple(getattr(v, "values", v)) for v in vectors]


def pairwise_mean_cosine(vectors: Sequence[Sequence[float]]) -> float:
    vals = _values(vectors)
    sims = [cosine(vals[i], vals[j]) for i in range(len(vals)) for j in range(i + 1, len(vals))]
    return math.fsum(sims) / len(sims)


def self_emb(outputs: Sequence[str], backend: Any) -> float:
    _require_outputs(outputs)
    return 100.0 * pairwise_mean_cosine(backend.embed(list(outputs)))


@dataclass(frozen=True)
class OpinionPointSet:
    argument_index: int
    points: tuple[str, ...]
    extraction_failed: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "argument_index": self.argument_index,
            "points": list(self.points),
            "extraction_failed": self.extraction_failed,
        }


_POINT = re.compile(r"^\s*(?:[-*•–●]|\d{1,2}[.)])\s+(.+?)\s*$")


def parse_points(text: str) -> list[str]:
    points = []
    for line in text.splitlines():
        match = _POINT.match(line)
        if match:
            point = match.group(1).strip().strip("*").strip()
            if point:
                points.append(point)
    return points


def extract_opinion_points(
    essay: str,
    backend: Any,
    argument_index: int = 0,
    prompts: Optional[PromptSet] = None,
    temperature: float = DEFAULT_TEMPERATURE,
) -> OpinionPointSet:
    if not essay or not essay.strip():
        raise InvalidInput("essay is empty")
    prompts = prompts or PromptSet.default()
    prompt = prompts.render("opinion_extraction", {"{essay}": essay})
    request = user_request(prompt, model_id=backend.model_id, temperature=temperature)

    def parse(text: str) -> list[str]:
        points = parse_points(text)
        if not points:
            raise ParseError("no bullet points found")
        return points

    try:
        points = chat_until(backend, request, parse, "Answer with one bullet line per opinion point.", retries=1)
    except ParseError:
        log.warning("no opinion points extracted from argument %d", argument_index)
        return OpinionPointSet(argument_index, (), extraction_failed=True)
    return OpinionPointSet(argument_index, tuple(points))


@dataclass(frozen=True)
class PerspectiveBreakdown:
    per_point_max_sim: tuple[tuple[float, ...], ...]
    per_argument_score: tuple[Optional[float], ...]
    aggregate: float
    point_sets: tuple[OpinionPointSet, ...] = ()

    @property
    def excluded(self) -> list[int]:
        return [i for i, score in enumerate(self.per_argument_score) if score is None]

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_point_max_sim": [list(s) for s in self.per_point_max_sim],
            "per_argument_score": list(self.per_argument_score),
            "aggregate": self.aggregate,
            "excluded_arguments": self.excluded,
            "points": [p.to_dict() for p in self.point_sets],
        }


def perspective_from_points(point_vectors: Sequence[Sequence[Sequence[float]]]) -> PerspectiveBreakdown:
    """Score arguments given the embedding of each of their opinion points.

    Each point takes its maximum cosine against every point of the other
    arguments; an argument scores the mean over its points, and the aggregate
    is the mean over arguments that have at least one point, x100.
    """
    if len(point_vectors) < 2:
        raise InvalidInput("need at least 2 arguments")
    vectors = [_values(group) for group in point_vectors]
    per_point: list[tuple[float, ...]] = []
    per_argument: list[Optional[float]] = []
    for m, own in enumerate(vectors):
        others = [v for j, group in enumerate(vectors) if j != m for v in group]
        if not own:
            per_point.append(())
            per_argument.append(None)
            continue
        if not others:
            raise MetricError(f"argument {m} has points but no other argument does")
        sims = tuple(max(cosine(p, q) for q in others) for p in own)
        per_point.append(sims)
        per_argument.append(math.fsum(sims) / len(sims))
    scored = [s for s in per_argument if s is not None]
    if not scored:
        raise MetricError("no argument yielded any opinion point")
    return PerspectiveBreakdown(tuple(per_point), tuple(per_argument), 100.0 * math.fsum(scored) / len(scored))


def perspective_diversity(
    arguments: Sequence[str],
    backend: Any,
    prompts: Optional[PromptSet] = None,
    point_sets: Optional[Sequence[OpinionPointSet]] = None,
) -> PerspectiveBreakdown:
    """Perspective diversity of ``arguments`` generated for one input.

    Pass ``point_sets`` to reuse opinion points already extracted.
    """
    _require_outputs(arguments, "arguments")
    if point_sets is None:
        point_sets = [extract_opinion_points(text, backend, i, prompts) for i, text in enumerate(arguments)]
    if len(point_sets) != len(arguments):
        raise InvalidInput("one point set per argument required")
    unique = sorted({p for s in point_sets for p in s.points})
    if not unique:
        raise MetricError("all arguments yielded zero opinion points")
    table = dict(zip(unique, _values(backend.embed(unique))))
    breakdown = perspective_from_points([[table[p] for p in s.points] for s in point_sets])
    return PerspectiveBreakdown(
        breakdown.per_point_max_sim, breakdown.per_argument_score, breakdown.aggregate, tuple(point_sets)
    )


@dataclass(frozen=True)
class JudgeRubric:
    """A judge prompt with ``{proposition}``, ``{essay}``, ``{scale_min}`` and ``{scale_max}`` slots."""

    template: str
    scale_min: float = 1.0
    scale_max: float = 5.0

    @classmethod
    def default(cls, aspect: str, prompts: Optional[PromptSet] = None) -> "JudgeRubric":
        if aspect not in JUDGE_ASPECTS:
            raise InvalidInput(f"unknown judge aspect {aspect!r}")
        return cls((prompts or PromptSet.default())[f"judge_{aspect}"])


_LABELED = re.compile(r"score\s*(?:is)?\s*[:=]?\s*\**\s*(-?\d+(?:\.\d+)?)", re.IGNORECASE)
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


def parse_score(text: str) -> float:
    match = _LABELED.search(text) or _NUMBER.search(text)
    if not match:
        raise ParseError("no numeric score in judge output")
    return float(match.group(1) if match.re is _LABELED else match.group(0))


def judge(
    essay: str,
    proposition: Proposition,
    aspect: str,
    backend: Any,
    rubric: Optional[JudgeRubric] = None,
    temperature: float = 0.0,
) -> float:
    if aspect not in JUDGE_ASPECTS:
        raise InvalidInput(f"unknown judge aspect {aspect!r}")
    rubric = rubric or JudgeRubric.default(aspect)
    lo, hi = rubric.scale_min, rubric.scale_max
    prompt = rubric.template
    for key, value in (
        ("{proposition}", proposition.statement),
        ("{essay}", essay),
        ("{scale_min}", f"{lo:g}"),
        ("{scale_max}", f"{hi:g}"),
    ):
        prompt = prompt.replace(key, value)
    request = user_request(prompt, model_id=backend.model_id, temperature=temperature)

    def parse(text: str) -> float:
        score = parse_score(text)
        if not lo <= score <= hi:
            raise ParseError(f"score {score:g} outside [{lo:g}, {hi:g}]")
        return score

    return chat_until(backend, request, parse, f'Reply with "Score: <number>" between {lo:g} and {hi:g}.', retries=1)


@dataclass(frozen=True)
class DiversityReport:
    self_bleu: float
    self_emb: float
    perspective: float
    breakdowns: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "self_bleu": self.self_bleu,
            "self_emb": self.self_emb,
            "perspective": self.perspective,
            "breakdowns": self.breakdowns,
        }


def diversity_report(arguments: Sequence[str], backend: Any, prompts: Optional[PromptSet] = None) -> DiversityReport:
    bleu = self_bleu_scores(arguments)
    persp = perspective_diversity(arguments, backend, prompts)
    return DiversityReport(
        self_bleu=math.fsum(bleu) / len(bleu),
        self_emb=self_emb(arguments, backend),
        perspective=persp.aggregate,
        breakdowns={"self_bleu": bleu, "perspective": persp.to_dict()},
    )
