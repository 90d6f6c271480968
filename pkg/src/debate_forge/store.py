"""Run persistence and report aggregation.

Layout under the store root::

    runs/<run_id>/manifest.json
    runs/<run_id>/generations.jsonl
    runs/<run_id>/transcripts/<proposition_id>_<k>.jsonl
    runs/<run_id>/metrics.json
    runs/<run_id>/report.csv
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import random
import tempfile
import threading
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

from .core import FORMAT_VERSION, DebateForgeError, GenerationRecord, ParseError, Proposition, utc_now
from .metrics import (
    JudgeRubric,
    MetricError,
    judge,
    perspective_diversity,
    self_bleu,
    self_emb,
)
from .prompts import PromptSet

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("Rel", "Qual", "S-BLEU", "S-Emb", "Pers")


class StoreError(DebateForgeError):
    pass


class UnknownRun(StoreError):
    pass


def load_topics(path: str | os.PathLike) -> list[Proposition]:
    """Read propositions from JSONL; missing ids become ``t000``, ``t001``, ..."""
    topics = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: invalid json: {exc}") from exc
            if not isinstance(obj, dict) or not str(obj.get("statement") or "").strip():
                raise ParseError(f"{path}:{lineno}: missing statement")
            topic_id = str(obj.get("id") or f"t{len(topics):03d}")
            if topic_id in seen:
                raise ParseError(f"{path}:{lineno}: duplicate id {topic_id!r}")
            seen.add(topic_id)
            topics.append(Proposition(topic_id, obj["statement"].strip(), obj.get("domain_tag")))
    return topics


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


class RunStore:
    """File-backed store of experiment runs rooted at ``root``.

    One lock serialises manifest rewrites and generation appends, so a store
    may be shared by worker threads.
    """

    def __init__(self, root: str | os.PathLike, clock: Callable[[], datetime] = utc_now, seed: Optional[int] = None):
        self.root = Path(root)
        self.runs_dir = self.root / "runs"
        self._clock = clock
        self._rng = random.Random(seed)
        self._lock = threading.Lock()

    def run_dir(self, run_id: str) -> Path:
        path = self.runs_dir / run_id
        if not (path / "manifest.json").exists():
            raise UnknownRun(f"unknown run {run_id!r} under {self.root}")
        return path

    def _new_run_id(self) -> str:
        stamp = self._clock().strftime("%Y%m%dT%H%M%SZ")
        while True:
            run_id = f"{stamp}-{self._rng.getrandbits(24):06x}"
            if not (self.runs_dir / run_id).exists():
                return run_id

    def create_run(
        self,
        config: Any,
        prompt_digests: dict[str, str],
        topics: Sequence[Proposition] = (),
        run_id: Optional[str] = None,
    ) -> str:
        with self._lock:
            try:
                self.runs_dir.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise StoreError(f"store root {self.root} is not writable: {exc}") from exc
            run_id = run_id or self._new_run_id()
            path = self.runs_dir / run_id
            try:
                path.mkdir()
            except FileExistsError:
                raise StoreError(f"run {run_id!r} already exists") from None
            (path / "transcripts").mkdir()
            (path / "generations.jsonl").touch()
            manifest = {
                "format_version": FORMAT_VERSION,
                "run_id": run_id,
                "config": config.to_dict() if hasattr(config, "to_dict") else config,
                "prompt_digests": dict(prompt_digests),
                "topics": {t.id: t.statement for t in topics},
                "entries": [],
            }
            _atomic_write(path / "manifest.json", _dump(manifest))
        return run_id

    def manifest(self, run_id: str) -> dict[str, Any]:
        return json.loads((self.run_dir(run_id) / "manifest.json").read_text(encoding="utf-8"))

    def _add_entry(self, path: Path, entry: dict[str, Any]) -> None:
        manifest_path = path / "manifest.json"
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        manifest["entries"].append(entry)
        _atomic_write(manifest_path, _dump(manifest))

    def persist_record(self, run_id: str, record: GenerationRecord) -> None:
        path = self.run_dir(run_id)
        line = json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True) + "\n"
        with self._lock:
            with open(path / "generations.jsonl", "a", encoding="utf-8") as fh:
                fh.write(line)
            if record.transcript is not None:
                turns = "".join(
                    json.dumps(t.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for t in record.transcript.turns
                )
                name = f"{record.proposition_id}_{record.sample_index}.jsonl"
                _atomic_write(path / "transcripts" / name, turns)
            self._add_entry(
                path,
                {"proposition_id": record.proposition_id, "sample_index": record.sample_index, "status": "ok", "error": None},
            )

    def record_failure(self, run_id: str, proposition_id: str, sample_index: int, error: str) -> None:
        path = self.run_dir(run_id)
        with self._lock:
            self._add_entry(
                path, {"proposition_id": proposition_id, "sample_index": sample_index, "status": "failed", "error": error}
            )

    def load_records(self, run_id: str) -> list[GenerationRecord]:
        path = self.run_dir(run_id) / "generations.jsonl"
        records = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(GenerationRecord.from_dict(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise StoreError(f"{path}:{lineno}: corrupt record: {exc}") from exc
        return records

    def write_json(self, run_id: str, name: str, obj: Any) -> Path:
        path = self.run_dir(run_id) / name
        _atomic_write(path, _dump(obj))
        return path

    def read_json(self, run_id: str, name: str) -> Optional[Any]:
        path = self.run_dir(run_id) / name
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))


def _mean(values: Iterable[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return math.fsum(present) / len(present) if present else None


def evaluate_run(
    store: RunStore,
    run_id: str,
    backend: Any,
    prompts: Optional[PromptSet] = None,
    rubrics: Optional[dict[str, JudgeRubric]] = None,
    with_judge: bool = True,
) -> dict[str, Any]:
    """Score every topic of a run and write ``metrics.json``.

    Topics with fewer than two records get judge scores only. Run-level
    numbers are macro-averages over topics.
    """
    prompts = prompts or PromptSet.default()
    rubrics = rubrics or {aspect: JudgeRubric.default(aspect, prompts) for aspect in ("relevance", "quality")}
    manifest = store.manifest(run_id)
    records = store.load_records(run_id)
    by_topic: dict[str, list[GenerationRecord]] = defaultdict(list)
    for record in records:
        by_topic[record.proposition_id].append(record)
    statements = manifest.get("topics", {})

    topics: dict[str, Any] = {}
    warnings: list[str] = []
    for topic_id in sorted(by_topic):
        group = sorted(by_topic[topic_id], key=lambda r: r.sample_index)
        essays = [r.essay for r in group]
        proposition = Proposition(topic_id, statements.get(topic_id) or topic_id)
        row: dict[str, Any] = {"samples": len(group)}
        if with_judge:
            for aspect, key in (("relevance", "rel"), ("quality", "qual")):
                row[key] = _mean(judge(e, proposition, aspect, backend, rubrics[aspect]) for e in essays)
        if len(essays) >= 2:
            row["s_bleu"] = self_bleu(essays)
            row["s_emb"] = self_emb(essays, backend)
            try:
                breakdown = perspective_diversity(essays, backend, prompts)
                row["pers"] = breakdown.aggregate
                row["perspective_breakdown"] = breakdown.to_dict()
            except MetricError as exc:
                warnings.append(f"{topic_id}: perspective diversity unavailable: {exc}")
                row["pers"] = None
        else:
            message = f"{topic_id}: only {len(essays)} sample(s); diversity metrics skipped"
            log.warning(message)
            warnings.append(message)
            row.update({"s_bleu": None, "s_emb": None, "pers": None})
        topics[topic_id] = row

    summary = {
        key: _mean(t.get(key) for t in topics.values()) for key in ("rel", "qual", "s_bleu", "s_emb", "pers")
    }
    metrics = {
        "format_version": FORMAT_VERSION,
        "run_id": run_id,
        "method": manifest["config"].get("method"),
        "summary": summary,
        "topics": topics,
        "warnings": warnings,
    }
    store.write_json(run_id, "metrics.json", metrics)
    return metrics


@dataclass(frozen=True)
class ReportRow:
    run_id: str
    method: str
    values: tuple[Optional[float], ...]


@dataclass(frozen=True)
class ReportTable:
    rows: tuple[ReportRow, ...]

    def to_text(self) -> str:
        header = ("Method", "Run", *REPORT_COLUMNS)
        body = [
            (row.method, row.run_id, *("" if v is None else f"{v:.2f}" for v in row.values)) for row in self.rows
        ]
        widths = [max(len(str(line[i])) for line in [header, *body]) for i in range(len(header))]
        lines = []
        for line in [header, *body]:
            cells = [str(c).ljust(w) if i < 2 else str(c).rjust(w) for i, (c, w) in enumerate(zip(line, widths))]
            lines.append("  ".join(cells).rstrip())
        return "\n".join(lines)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["method", "run_id", *REPORT_COLUMNS])
        for row in self.rows:
            writer.writerow([row.method, row.run_id, *("" if v is None else f"{v:.4f}" for v in row.values)])
        return buffer.getvalue()


def aggregate_report(
    store: RunStore,
    run_ids: Sequence[str],
    backend: Any,
    prompts: Optional[PromptSet] = None,
    rubrics: Optional[dict[str, JudgeRubric]] = None,
    recompute: bool = False,
) -> ReportTable:
    """One row per run with columns Rel, Qual, S-BLEU, S-Emb, Pers.

    Uses each run's ``metrics.json`` when present, otherwise evaluates the run
    first. Also writes each run's row to its ``report.csv``.
    """
    rows = []
    for run_id in run_ids:
        metrics = None if recompute else store.read_json(run_id, "metrics.json")
        if metrics is None:
            metrics = evaluate_run(store, run_id, backend, prompts, rubrics)
        summary = metrics["summary"]
        row = ReportRow(
            run_id,
            metrics.get("method") or "?",
            tuple(summary.get(k) for k in ("rel", "qual", "s_bleu", "s_emb", "pers")),
        )
        _atomic_write(store.run_dir(run_id) / "report.csv", ReportTable((row,)).to_csv())
        rows.append(row)
    return ReportTable(tuple(rows))
