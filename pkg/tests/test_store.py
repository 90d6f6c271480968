import json
import threading
from datetime import datetime, timezone

import pytest
from conftest import MUSEUMS

from debate_forge.backend import ScriptedBackend
from debate_forge.core import GenerationRecord, ParseError, Proposition
from debate_forge.pipelines import RunConfig
from debate_forge.store import (
    RunStore,
    StoreError,
    UnknownRun,
    aggregate_report,
    evaluate_run,
    load_topics,
)

WHEN = datetime(2024, 5, 1, tzinfo=timezone.utc)


def record(topic="museums", k=0, essay=None, method="llm_e2e"):
    return GenerationRecord(topic, method, k, essay or f"Essay {topic} {k}.", "m", WHEN)


def write_jsonl(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows), encoding="utf-8")
    return path


class TestLoadTopics:
    def test_sixty_four(self, tmp_path):
        path = write_jsonl(tmp_path / "t.jsonl", [{"statement": f"Claim {i}"} for i in range(64)])
        topics = load_topics(path)
        assert len(topics) == 64
        assert topics[0].id == "t000" and topics[63].id == "t063"

    def test_keeps_ids_and_tags(self, tmp_path):
        path = write_jsonl(tmp_path / "t.jsonl", [{"id": "museums", "statement": " Free museums ", "domain_tag": "culture"}, ""])
        assert load_topics(path) == [Proposition("museums", "Free museums", "culture")]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text("")
        assert load_topics(path) == []

    def test_missing_statement_names_line(self, tmp_path):
        path = write_jsonl(tmp_path / "t.jsonl", [{"statement": "ok"}, {"id": "x"}])
        with pytest.raises(ParseError, match=":2: missing statement"):
            load_topics(path)

    def test_invalid_json(self, tmp_path):
        path = write_jsonl(tmp_path / "t.jsonl", ["{nope"])
        with pytest.raises(ParseError, match=":1: invalid json"):
            load_topics(path)

    def test_duplicate_ids(self, tmp_path):
        path = write_jsonl(tmp_path / "t.jsonl", [{"id": "a", "statement": "x"}, {"id": "a", "statement": "y"}])
        with pytest.raises(ParseError, match="duplicate"):
            load_topics(path)


class TestRunStore:
    def test_round_trip(self, tmp_path):
        store = RunStore(tmp_path)
        run_id = store.create_run(RunConfig("llm_e2e"), {"x": "digest"}, [MUSEUMS])
        records = [record(k=k) for k in range(4)]
        for r in records:
            store.persist_record(run_id, r)
        assert store.load_records(run_id) == records
        manifest = store.manifest(run_id)
        assert manifest["run_id"] == run_id
        assert manifest["prompt_digests"] == {"x": "digest"}
        assert [e["status"] for e in manifest["entries"]] == ["ok"] * 4

    def test_run_id_format_and_seeded(self, tmp_path):
        first = RunStore(tmp_path / "a", clock=lambda: WHEN, seed=0).create_run(RunConfig(), {})
        second = RunStore(tmp_path / "b", clock=lambda: WHEN, seed=0).create_run(RunConfig(), {})
        assert first == second
        assert first.startswith("20240501T000000Z-") and len(first) == len("20240501T000000Z-") + 6

    def test_explicit_run_id_collision(self, tmp_path):
        store = RunStore(tmp_path)
        store.create_run(RunConfig(), {}, run_id="r")
        with pytest.raises(StoreError, match="already exists"):
            store.create_run(RunConfig(), {}, run_id="r")

    def test_unknown_run(self, tmp_path):
        with pytest.raises(UnknownRun):
            RunStore(tmp_path).load_records("nope")

    def test_corrupt_line(self, tmp_path):
        store = RunStore(tmp_path)
        run_id = store.create_run(RunConfig(), {})
        store.persist_record(run_id, record())
        with open(store.run_dir(run_id) / "generations.jsonl", "a") as fh:
            fh.write('{"truncated": \n')
        with pytest.raises(StoreError, match=":2: corrupt record"):
            store.load_records(run_id)

    def test_failure_entry(self, tmp_path):
        store = RunStore(tmp_path)
        run_id = store.create_run(RunConfig(), {})
        store.record_failure(run_id, "museums", 3, "StageError: writing: empty completion")
        assert store.manifest(run_id)["entries"] == [
            {"proposition_id": "museums", "sample_index": 3, "status": "failed", "error": "StageError: writing: empty completion"}
        ]
        assert store.load_records(run_id) == []

    def test_concurrent_writers(self, tmp_path):
        store = RunStore(tmp_path)
        run_id = store.create_run(RunConfig(), {})
        expected = [record(f"t{w}", k) for w in range(4) for k in range(25)]

        def worker(w):
            for k in range(25):
                store.persist_record(run_id, expected[w * 25 + k])

        threads = [threading.Thread(target=worker, args=(w,)) for w in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(store.manifest(run_id)["entries"]) == 100
        loaded = store.load_records(run_id)
        key = lambda r: (r.proposition_id, r.sample_index)
        assert sorted(loaded, key=key) == sorted(expected, key=key)

    def test_unwritable_root(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(StoreError, match="not writable"):
            RunStore(blocker / "store").create_run(RunConfig(), {})


def eval_backend():
    return ScriptedBackend(
        rules=[
            {"match": "Rate the relevance", "response": "Score: 4"},
            {"match": "Rate the overall quality", "response": "Score: 3"},
            {"match": "opinion points", "response": "- free access\n- funding"},
        ]
    )


def seeded_run(store, samples=2, method="llm_e2e", essays=None):
    topics = [MUSEUMS, Proposition("evoting", "Electronic voting should replace paper ballots")]
    run_id = store.create_run(RunConfig(method, samples_per_topic=samples), {}, topics)
    for topic in topics:
        for k in range(samples):
            store.persist_record(run_id, record(topic.id, k, essays[k] if essays else None, method))
    return run_id


class TestEvaluation:
    def test_metrics_written(self, tmp_path):
        store = RunStore(tmp_path)
        run_id = seeded_run(store)
        metrics = evaluate_run(store, run_id, eval_backend())
        assert metrics["summary"]["rel"] == 4.0
        assert metrics["summary"]["qual"] == 3.0
        assert metrics["summary"]["pers"] == 100.0
        assert set(metrics["topics"]) == {"museums", "evoting"}
        assert store.read_json(run_id, "metrics.json") == json.loads(json.dumps(metrics))

    def test_judge_sees_topic_statement(self, tmp_path):
        store = RunStore(tmp_path)
        backend = eval_backend()
        evaluate_run(store, seeded_run(store), backend)
        assert any(MUSEUMS.statement in r.text for r in backend.requests)

    def test_no_judge(self, tmp_path):
        store = RunStore(tmp_path)
        metrics = evaluate_run(store, seeded_run(store), eval_backend(), with_judge=False)
        assert metrics["summary"]["rel"] is None
        assert metrics["summary"]["s_bleu"] is not None

    def test_single_sample_skips_diversity(self, tmp_path, caplog):
        store = RunStore(tmp_path)
        run_id = seeded_run(store, samples=1)
        table = aggregate_report(store, [run_id], eval_backend())
        assert table.rows[0].values[2:] == (None, None, None)
        assert "diversity metrics skipped" in caplog.text
        assert "only 1 sample" in store.read_json(run_id, "metrics.json")["warnings"][0]


class TestReport:
    def test_columns_and_rows(self, tmp_path):
        store = RunStore(tmp_path)
        first = seeded_run(store)
        second = seeded_run(store, method="persona_debate")
        table = aggregate_report(store, [first, second], eval_backend())
        assert len(table.rows) == 2
        header = table.to_text().splitlines()[0].split()
        assert header == ["Method", "Run", "Rel", "Qual", "S-BLEU", "S-Emb", "Pers"]
        csv_lines = table.to_csv().splitlines()
        assert csv_lines[0] == "method,run_id,Rel,Qual,S-BLEU,S-Emb,Pers"
        assert len(csv_lines) == 3
        assert (store.run_dir(first) / "report.csv").read_text().splitlines()[1].startswith("llm_e2e,")

    def test_uses_cached_metrics(self, tmp_path):
        store = RunStore(tmp_path)
        run_id = seeded_run(store)
        aggregate_report(store, [run_id], eval_backend())
        idle = ScriptedBackend()
        aggregate_report(store, [run_id], idle)
        assert idle.requests == []
        aggregate_report(store, [run_id], eval_backend(), recompute=True)

    def test_unknown_run(self, tmp_path):
        with pytest.raises(UnknownRun):
            aggregate_report(RunStore(tmp_path), ["missing"], eval_backend())
