import json
import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskver.gallery import (
    EMBEDDING_DIM,
    Gallery,
    GalleryFormatError,
    GalleryVersionError,
    euclidean_distance,
)


def vec(*pairs):
    """Sparse embedding constructor: vec((idx, value), ...)."""
    v = np.zeros(EMBEDDING_DIM)
    for idx, value in pairs:
        v[idx] = value
    return v


embeddings = st.lists(
    st.floats(min_value=-10, max_value=10, allow_nan=False, allow_infinity=False),
    min_size=EMBEDDING_DIM, max_size=EMBEDDING_DIM,
).map(np.array)


class TestEuclideanDistance:
    def test_identity(self):
        v = vec((0, 1.0), (5, -2.0))
        assert euclidean_distance(v, v) == 0.0

    def test_one_hot(self):
        assert euclidean_distance(vec((0, 1.0)), vec()) == 1.0

    def test_sqrt_two(self):
        assert euclidean_distance(vec((0, 1.0), (1, 1.0)), vec()) == pytest.approx(
            math.sqrt(2), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            euclidean_distance(np.zeros(127), np.zeros(EMBEDDING_DIM))

    def test_non_finite_rejected(self):
        bad = vec()
        bad[3] = np.nan
        with pytest.raises(ValueError):
            euclidean_distance(bad, vec())

    @given(embeddings, embeddings, embeddings)
    @settings(max_examples=100)
    def test_metric_properties(self, a, b, c):
        dab = euclidean_distance(a, b)
        assert dab >= 0
        assert abs(dab - euclidean_distance(b, a)) < 1e-9
        assert dab <= euclidean_distance(a, c) + euclidean_distance(c, b) + 1e-9


class TestEnroll:
    def test_into_empty(self):
        g = Gallery()
        g.enroll("s1", "Alice", vec((0, 1.0)))
        assert len(g) == 1
        assert len(g.get("s1").embeddings) == 1

    def test_append_second_embedding(self):
        g = Gallery()
        g.enroll("s1", "Alice", vec((0, 1.0)))
        g.enroll("s1", "Alice", vec((1, 1.0)))
        assert len(g) == 1
        assert len(g.get("s1").embeddings) == 2

    def test_idempotent_for_identical_pair(self):
        g = Gallery()
        g.enroll("s1", "Alice", vec((0, 1.0)))
        g.enroll("s1", "Alice", vec((0, 1.0)))
        assert len(g.get("s1").embeddings) == 1

    def test_empty_id_rejected(self):
        with pytest.raises(ValueError):
            Gallery().enroll("", "Nobody", vec())

    def test_timestamps_parallel_embeddings(self):
        g = Gallery()
        g.enroll("s1", "Alice", vec((0, 1.0)), enrolled_at=100.0)
        g.enroll("s1", "Alice", vec((1, 1.0)), enrolled_at=200.0)
        assert g.get("s1").enrolled_at == [100.0, 200.0]


class TestMatch:
    def test_exact_hit(self):
        g = Gallery()
        g.enroll("s1", "Alice", vec((0, 1.0)))
        result = g.match(vec((0, 1.0)))
        assert result.decision == "s1"
        assert result.distance == 0.0
        assert result.is_match

    def test_distance_one_above_threshold(self):
        g = Gallery()
        g.enroll("s1", "Alice", vec((0, 1.0)))
        result = g.match(vec(), threshold=0.6)
        assert result.decision == "unknown"
        assert result.distance == 1.0

    def test_tie_goes_to_smaller_id(self):
        g = Gallery()
        g.enroll("s2", "Bob", vec((0, 0.1)))
        g.enroll("s1", "Alice", vec((1, 0.1)))
        result = g.match(vec(), threshold=0.6)
        assert result.distance == pytest.approx(0.1)
        assert result.decision == "s1"

    def test_empty_gallery(self):
        result = Gallery().match(vec())
        assert result.decision == "unknown"
        assert result.distance == math.inf
        assert result.runner_up_distance is None

    def test_runner_up_reported(self):
        g = Gallery()
        g.enroll("s1", "Alice", vec((0, 0.1)))
        g.enroll("s2", "Bob", vec((0, 0.5)))
        result = g.match(vec())
        assert result.decision == "s1"
        assert result.runner_up_distance == pytest.approx(0.5)

    def test_record_distance_is_min_over_embeddings(self):
        g = Gallery()
        g.enroll("s1", "Alice", vec((0, 5.0)))
        g.enroll("s1", "Alice", vec((0, 0.2)))
        assert g.match(vec()).distance == pytest.approx(0.2)

    def test_monotone_threshold(self):
        g = Gallery()
        g.enroll("s1", "Alice", vec((0, 0.5)))
        for t in (0.5, 0.6, 1.0, 1.9):
            assert g.match(vec(), threshold=t).is_match
        for t in (0.3, 0.49):
            assert not g.match(vec(), threshold=t).is_match

    def test_order_permutation_invariance(self):
        rng = np.random.default_rng(5)
        entries = [(f"s{i}", rng.normal(size=EMBEDDING_DIM)) for i in range(8)]
        query = rng.normal(size=EMBEDDING_DIM)
        baseline = None
        for perm_seed in range(5):
            order = np.random.default_rng(perm_seed).permutation(len(entries))
            g = Gallery()
            for idx in order:
                sid, emb = entries[idx]
                g.enroll(sid, sid.upper(), emb)
            result = g.match(query, threshold=50.0)
            if baseline is None:
                baseline = result
            else:
                assert result.decision == baseline.decision
                assert result.distance == baseline.distance

    def test_nonpositive_threshold_rejected(self):
        with pytest.raises(ValueError):
            Gallery().match(vec(), threshold=0.0)


class TestRemove:
    def test_existing(self):
        g = Gallery()
        g.enroll("s1", "Alice", vec((0, 1.0)))
        assert g.remove("s1") is True
        assert len(g) == 0

    def test_missing_is_reported(self):
        assert Gallery().remove("ghost") is False

    def test_match_after_remove_is_unknown(self):
        g = Gallery()
        g.enroll("s1", "Alice", vec((0, 1.0)))
        g.remove("s1")
        assert g.match(vec((0, 1.0))).decision == "unknown"


class TestPersistence:
    def test_empty_round_trip(self, tmp_path):
        path = tmp_path / "g.json"
        Gallery().save(path)
        assert len(Gallery.load(path)) == 0

    def test_three_record_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        g = Gallery()
        for i in range(3):
            for _ in range(i + 1):
                g.enroll(f"s{i}", f"Student {i}", rng.normal(size=EMBEDDING_DIM),
                         enrolled_at=float(rng.uniform(0, 2e9)))
        path = tmp_path / "g.json"
        g.save(path)
        back = Gallery.load(path)
        assert len(back) == len(g)
        for orig, loaded in zip(g.records(), back.records()):
            assert loaded.student_id == orig.student_id
            assert loaded.name == orig.name
            assert loaded.enrolled_at == orig.enrolled_at
            for a, b in zip(orig.embeddings, loaded.embeddings):
                assert np.array_equal(a, b)

    def test_field_schema(self, tmp_path):
        g = Gallery()
        g.enroll("s1", "Alice", vec((0, 1.0)), enrolled_at=123.0)
        path = tmp_path / "g.json"
        g.save(path)
        payload = json.loads(path.read_text())
        assert payload["version"] == 1
        student = payload["students"][0]
        assert list(student.keys()) == ["id", "name", "enrolled_at", "embeddings"]
        assert len(student["embeddings"][0]) == EMBEDDING_DIM

    def test_truncated_embedding_names_record(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({
            "version": 1,
            "students": [{"id": "s9", "name": "X", "enrolled_at": [0.0],
                          "embeddings": [[0.0] * 127]}],
        }))
        with pytest.raises(GalleryFormatError, match="s9"):
            Gallery.load(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v2.json"
        path.write_text(json.dumps({"version": 2, "students": []}))
        with pytest.raises(GalleryVersionError):
            Gallery.load(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "garbage.json"
        path.write_text("{not json")
        with pytest.raises(GalleryFormatError):
            Gallery.load(path)


class TestConcurrency:
    def test_concurrent_enroll_and_match(self):
        g = Gallery()
        rng = np.random.default_rng(1)
        base = rng.normal(size=EMBEDDING_DIM)
        g.enroll("anchor", "Anchor", base)
        errors = []

        def writer(k):
            local = np.random.default_rng(k)
            for i in range(50):
                g.enroll(f"w{k}-{i}", "W", local.normal(size=EMBEDDING_DIM))

        def reader():
            for _ in range(200):
                result = g.match(base, threshold=0.5)
                # anchor is at distance 0; a half-applied record could break this
                if result.decision != "anchor":
                    errors.append(result)

        threads = [threading.Thread(target=writer, args=(k,)) for k in range(4)]
        threads += [threading.Thread(target=reader) for _ in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        assert len(g) == 1 + 4 * 50
