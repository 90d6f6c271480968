"""Prompt templates shipped as editable text assets.

Templates use literal placeholder tokens, either ``##name`` / ``###name`` or
``{name}``. :func:`render` substitutes them in a single pass, so text inserted
for one placeholder is never re-scanned for another.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

from .core import DebateForgeError

log = logging.getLogger(__name__)

TEMPLATE_NAMES = (
    "persona_pool",
    "persona_select",
    "debate_background",
    "debate_main_team",
    "debate_critic",
    "debate_planner",
    "debate_turn",
    "debate_moderator",
    "plan_synthesis",
    "plan_direct",
    "surface_writing",
    "e2e_writing",
    "opinion_extraction",
    "judge_relevance",
    "judge_quality",
)

NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten")


class MissingTemplate(DebateForgeError):
    pass


def number_word(n: int) -> str:
    return NUMBER_WORDS[n] if 0 <= n < len(NUMBER_WORDS) else str(n)


def render(template: str, values: Mapping[str, str]) -> str:
    if not values:
        return template
    keys = sorted(values, key=len, reverse=True)
    pattern = re.compile("|".join(re.escape(k) for k in keys))
    return pattern.sub(lambda m: values[m.group(0)], template)


def _read_default(name: str) -> str:
    return resources.files("debate_forge").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptSet:
    templates: Mapping[str, str]

    @classmethod
    def default(cls) -> "PromptSet":
        return cls({name: _read_default(name).rstrip("\n") for name in TEMPLATE_NAMES})

    @classmethod
    def from_dir(cls, directory: Optional[str | Path]) -> "PromptSet":
        """Load ``<name>.txt`` files from ``directory``; absent files keep the default."""
        if directory is None:
            return cls.default()
        root = Path(directory)
        if not root.is_dir():
            raise MissingTemplate(f"prompt directory {root} does not exist")
        templates = {}
        for name in TEMPLATE_NAMES:
            path = root / f"{name}.txt"
            if path.exists():
                templates[name] = path.read_text(encoding="utf-8").rstrip("\n")
            else:
                log.warning("prompt dir %s has no %s.txt; using the default", root, name)
                templates[name] = _read_default(name).rstrip("\n")
        return cls(templates)

    def __getitem__(self, name: str) -> str:
        try:
            return self.templates[name]
        except KeyError:
            raise MissingTemplate(f"no prompt template named {name!r}") from None

    def render(self, name: str, values: Mapping[str, str]) -> str:
        return render(self[name], values)

    def digests(self) -> dict[str, str]:
        return {
            name: hashlib.sha256(text.encode("utf-8")).hexdigest()
            for name, text in sorted(self.templates.items())
        }
