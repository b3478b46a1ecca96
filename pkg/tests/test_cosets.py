import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clickintent.clicklog import ClickEvent
from clickintent.cosets import (
    CoQueryCorpus, batch_sample, compute_weights, extract_sets, load_corpus,
    save_corpus,
)


def event(query, dtype, count, url=None):
    return ClickEvent(timestamp=0, session_id="s", query=query, doc_id="d",
                      doc_url=url or f"/{dtype}/page", doc_type=dtype,
                      doc_title="t", click_count=count)


class TestComputeWeights:
    def test_three_one_split(self):
        s = compute_weights("drug", [("a", 3), ("b", 1)])
        assert s.weights == [0.75, 0.25]

    def test_singleton(self):
        assert compute_weights("drug", [("a", 5)]).weights == [1.0]

    def test_uniform(self):
        s = compute_weights("drug", [(q, 2) for q in "abcd"])
        assert s.weights == [0.25] * 4

    def test_duplicate_query_rejected(self):
        with pytest.raises(ValueError):
            compute_weights("drug", [("a", 1), ("a", 2)])

    def test_nonpositive_count_rejected(self):
        with pytest.raises(ValueError):
            compute_weights("drug", [("a", 0)])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_weights("drug", [])

    @given(st.lists(st.integers(min_value=1, max_value=50), min_size=1,
                    max_size=12))
    @settings(max_examples=50, deadline=None)
    def test_weights_always_normalized(self, counts):
        s = compute_weights("x", [(f"q{i}", c) for i, c in enumerate(counts)])
        assert abs(sum(s.weights) - 1.0) < 1e-9
        assert all(w > 0 for w in s.weights)


class TestExtractSets:
    def test_grouping_with_min_clicks(self):
        events = [event("a", "drug", 3), event("b", "drug", 4),
                  event("c", "provider", 5)]
        corpus = extract_sets(events, min_clicks=3)
        by_id = {s.set_id: s for s in corpus.sets}
        assert by_id["drug"].queries == ["a", "b"]
        assert by_id["provider"].queries == ["c"]

    def test_below_threshold_excluded(self):
        events = [event("a", "drug", 3), event("b", "drug", 2)]
        corpus = extract_sets(events, min_clicks=3)
        assert corpus.sets[0].queries == ["a"]

    def test_counts_aggregate_across_events(self):
        events = [event("a", "drug", 2), event("a", "drug", 2)]
        corpus = extract_sets(events, min_clicks=3)
        assert corpus.sets[0].members[0].count == 4

    def test_query_in_multiple_sets(self):
        events = [event("a", "drug", 3), event("a", "provider", 3)]
        corpus = extract_sets(events)
        assert [s.set_id for s in corpus.sets if "a" in s.queries] == \
            ["drug", "provider"]
        assert len(corpus.query_index["a"]) == 2

    def test_url_pattern_key(self):
        events = [event("a", "x", 1, url="https://h.example/care/one"),
                  event("b", "y", 1, url="/care/two"),
                  event("c", "z", 1, url="/billing/pay")]
        corpus = extract_sets(events, key="url_pattern")
        by_id = {s.set_id: s for s in corpus.sets}
        assert sorted(by_id["care"].queries) == ["a", "b"]
        assert by_id["billing"].queries == ["c"]

    def test_invalid_args_rejected(self):
        with pytest.raises(ValueError):
            extract_sets([], min_clicks=0)
        with pytest.raises(ValueError):
            extract_sets([], key="nope")

    @given(st.integers(min_value=1, max_value=6))
    @settings(max_examples=20, deadline=None)
    def test_raising_min_clicks_only_removes_members(self, min_clicks):
        events = [event(f"q{i}", f"t{i % 3}", 1 + i % 5) for i in range(20)]
        base = {(s.set_id, m.query) for s in extract_sets(events, 1).sets
                for m in s.members}
        filtered = {(s.set_id, m.query)
                    for s in extract_sets(events, min_clicks).sets
                    for m in s.members}
        assert filtered <= base


class TestBatchSample:
    def make_corpus(self):
        return CoQueryCorpus([
            compute_weights("big", [(f"b{i}", i + 1) for i in range(5)]),
            compute_weights("small", [("s0", 2), ("s1", 3)]),
            compute_weights("solo", [("only", 9)]),
        ])

    def test_capped_sampling_sizes(self):
        batch = batch_sample(self.make_corpus(), 2, 3, seed=0)
        sizes = sorted(len(s.queries) for s in batch)
        assert sizes == [2, 3]

    def test_singleton_sets_never_sampled(self):
        for seed in range(10):
            batch = batch_sample(self.make_corpus(), 2, 3, seed=seed)
            assert all(s.set_id != "solo" for s in batch)

    def test_deterministic_per_seed(self):
        b1 = batch_sample(self.make_corpus(), 2, 3, seed=7)
        b2 = batch_sample(self.make_corpus(), 2, 3, seed=7)
        assert [(s.set_id, s.queries, s.weights) for s in b1] == \
            [(s.set_id, s.queries, s.weights) for s in b2]

    def test_subset_weights_renormalized(self):
        for s in batch_sample(self.make_corpus(), 2, 2, seed=1):
            assert abs(sum(s.weights) - 1.0) < 1e-9

    def test_not_enough_eligible_sets(self):
        corpus = CoQueryCorpus([compute_weights("a", [("x", 1), ("y", 1)]),
                                compute_weights("b", [("z", 1)])])
        with pytest.raises(ValueError):
            batch_sample(corpus, 2, 2, seed=0)

    def test_sets_per_batch_lower_bound(self):
        with pytest.raises(ValueError):
            batch_sample(self.make_corpus(), 1, 2, seed=0)

    def test_no_duplicate_queries_within_sampled_set(self):
        for s in batch_sample(self.make_corpus(), 2, 5, seed=3):
            assert len(set(s.queries)) == len(s.queries)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        corpus = CoQueryCorpus([compute_weights("drug", [("a", 3), ("b", 1)]),
                                compute_weights("provider", [("c", 5)])])
        path = tmp_path / "cosets.jsonl"
        save_corpus(corpus, path)
        loaded = load_corpus(path)
        assert [(s.set_id, s.members) for s in loaded.sets] == \
            [(s.set_id, s.members) for s in corpus.sets]
