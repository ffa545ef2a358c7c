import json
import threading

import pytest

from deepframe.store import RecordStore, RunRecord, cache_lookup, canonical_json, config_hash


def record(spec_hash="s" * 64, cfg=None, result=None):
    return RunRecord.create("id", spec_hash, "minimize", cfg or {"seed": 0},
                            result or {"best_potential": 0.25})


class TestHashes:
    def test_key_order_irrelevant(self):
        assert config_hash("minimize", {"a": 1, "b": 2}) == config_hash("minimize", {"b": 2, "a": 1})

    def test_kind_and_values_matter(self):
        base = config_hash("minimize", {"a": 1})
        assert base != config_hash("bound", {"a": 1})
        assert base != config_hash("minimize", {"a": 2})

    def test_canonical_json(self):
        assert canonical_json({"b": 1.5, "a": [1, 2]}) == '{"a":[1,2],"b":1.5}'


class TestStore:
    def test_round_trip_is_byte_identical(self, tmp_path):
        store = RecordStore(tmp_path)
        rec = record(result={"best_potential": 0.1 + 0.2, "per_restart": [{"final": 1e-17}]})
        store.append(rec)
        again = store.records()[0]
        assert again == rec
        assert again.to_line() == rec.to_line()
        assert store.path.read_text().splitlines()[0] == rec.to_line()

    def test_lookup_requires_both_hashes(self, tmp_path):
        store = RecordStore(tmp_path)
        rec = record()
        store.append(rec)
        assert cache_lookup(store, rec.spec_hash, rec.config_hash) == rec
        assert cache_lookup(store, "x" * 64, rec.config_hash) is None
        assert cache_lookup(store, rec.spec_hash, config_hash("minimize", {"seed": 1})) is None

    def test_newest_wins(self, tmp_path):
        store = RecordStore(tmp_path)
        store.append(record(result={"best_potential": 1.0}))
        store.append(record(result={"best_potential": 2.0}))
        rec = record()
        assert store.lookup(rec.spec_hash, rec.config_hash).result["best_potential"] == 2.0

    def test_missing_store(self, tmp_path):
        store = RecordStore(tmp_path / "nowhere")
        assert store.records() == []
        assert store.lookup("a", "b") is None

    def test_corrupt_lines_skipped(self, tmp_path):
        store = RecordStore(tmp_path)
        store.append(record())
        with open(store.path, "a") as fh:
            fh.write("{truncated\n")
            fh.write(json.dumps({"unexpected": 1}) + "\n")
        store.append(record(result={"best_potential": 3.0}))
        with pytest.warns(UserWarning, match="corrupt"):
            recs = store.records()
        assert [r.result["best_potential"] for r in recs] == [0.25, 3.0]

    def test_concurrent_appends(self, tmp_path):
        store = RecordStore(tmp_path)

        def work(i):
            for k in range(20):
                store.append(record(result={"best_potential": float(i * 100 + k)}))

        threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(store.records()) == 80

    def test_record_fields(self):
        assert list(json.loads(record().to_line())) == sorted(
            ["spec_id", "spec_hash", "config_hash", "kind", "config", "result", "timestamp",
             "version"])
