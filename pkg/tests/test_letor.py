import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ultrkit.letor import (
    ConfigError,
    Dataset,
    GenConfig,
    LetorParseError,
    Query,
    generate_synthetic,
    minmax_scale,
    parse_letor,
    sample_fraction,
    serialize_letor,
    split_queries,
)


def parse(text, **kw):
    return parse_letor(io.StringIO(text), **kw)


def test_sparse_line_is_densified():
    ds = parse("2 qid:7 1:0.5 3:-1.2 # doc-a\n")
    assert ds.feature_dim == 3
    (q,) = ds.queries
    assert q.qid == "7"
    assert q.labels.tolist() == [2]
    assert q.features.tolist() == [[0.5, 0.0, -1.2]]


def test_feature_dim_is_dataset_wide_max():
    ds = parse("0 qid:1 1:1\n1 qid:1 4:2\n3 qid:2 2:5\n")
    assert ds.feature_dim == 4
    assert ds.queries[0].features.tolist() == [[1, 0, 0, 0], [0, 0, 0, 2]]
    assert ds.queries[1].features.tolist() == [[0, 5, 0, 0]]


def test_empty_input():
    ds = parse("")
    assert len(ds) == 0


def test_crlf_and_comment_only_lines():
    ds = parse("# header\r\n1 qid:a 1:1.0\r\n\r\n0 qid:a 1:2.0\r\n")
    assert len(ds) == 1
    assert ds.queries[0].labels.tolist() == [1, 0]


def test_consecutive_grouping():
    ds = parse("1 qid:a 1:1\n0 qid:b 1:1\n2 qid:a 1:1\n")
    assert [q.qid for q in ds.queries] == ["a", "b", "a"]


@pytest.mark.parametrize(
    "line, lineno",
    [
        ("qid:1 1:0.5", 1),
        ("1 1:0.5 2:0.3", 1),
        ("x qid:1 1:0.5", 1),
        ("1 qid:1 1:abc", 1),
        ("1 qid:1 0:1.0", 1),
        ("1 qid:1 nocolon", 1),
    ],
)
def test_malformed_lines_report_line_number(line, lineno):
    with pytest.raises(LetorParseError) as exc:
        parse(line + "\n")
    assert exc.value.lineno == lineno


def test_error_line_number_counts_all_lines():
    with pytest.raises(LetorParseError, match="line 3"):
        parse("1 qid:1 1:1\n# c\n1 qid:1 1:x\n")


def test_out_of_range_label_rejected_or_clamped():
    with pytest.raises(LetorParseError):
        parse("7 qid:1 1:1\n")
    ds = parse("7 qid:1 1:1\n", clamp=True)
    assert ds.queries[0].labels.tolist() == [4]


def test_serialize_is_canonical_dense_form():
    text = "2 qid:7 3:-1.2 1:0.5 # doc-a\n0 qid:7 2:1\n"
    assert serialize_letor(parse(text)) == (
        "2 qid:7 1:0.5 2:0.0 3:-1.2\n0 qid:7 1:0.0 2:1.0 3:0.0\n"
    )


@settings(max_examples=50, deadline=None)
@given(
    n_queries=st.integers(1, 4),
    n_docs=st.integers(1, 5),
    h=st.integers(1, 6),
    seed=st.integers(0, 2**31),
)
def test_roundtrip(n_queries, n_docs, h, seed):
    rng = np.random.default_rng(seed)
    queries = tuple(
        Query(str(i), rng.standard_normal((n_docs, h)), rng.integers(0, 5, n_docs))
        for i in range(n_queries)
    )
    ds = Dataset(queries, h, 4)
    back = parse(serialize_letor(ds))
    assert back == ds


def test_dataset_rejects_mixed_dimensions():
    with pytest.raises(ValueError):
        Dataset((Query("a", np.zeros((1, 2)), np.zeros(1, dtype=int)),), 3)


def test_minmax_scale_range():
    ds = generate_synthetic(GenConfig(n_queries=20, feature_dim=3), seed=1)
    scaled = minmax_scale(ds)
    allx = np.concatenate([q.features for q in scaled.queries])
    assert np.allclose(allx.min(axis=0), 0.0) and np.allclose(allx.max(axis=0), 1.0)


class TestSynthetic:
    def test_deterministic(self):
        cfg = GenConfig(n_queries=30, docs_per_query=7, feature_dim=5, context_mix=0.4, label_noise=0.3)
        a = serialize_letor(generate_synthetic(cfg, seed=11))
        b = serialize_letor(generate_synthetic(cfg, seed=11))
        assert a == b
        assert a != serialize_letor(generate_synthetic(cfg, seed=12))

    def test_shape(self):
        ds = generate_synthetic(GenConfig(n_queries=100, docs_per_query=10), seed=0)
        assert len(ds) == 100
        assert all(len(q) == 10 for q in ds.queries)

    def test_all_grades_present(self):
        ds = generate_synthetic(GenConfig(n_queries=200), seed=0)
        labels = np.concatenate([q.labels for q in ds.queries])
        assert set(labels.tolist()) == {0, 1, 2, 3, 4}

    def test_single_feature_no_context_labels_follow_feature(self):
        ds = generate_synthetic(GenConfig(n_queries=50, docs_per_query=8, feature_dim=1), seed=3)
        for q in ds.queries:
            x = q.features[:, 0]
            # labels are a monotone function of the single feature (sign of w may flip it)
            order = np.argsort(x)
            steps = np.diff(q.labels[order])
            assert np.all(steps >= 0) or np.all(steps <= 0)

    @pytest.mark.parametrize("field", ["n_queries", "docs_per_query", "feature_dim"])
    def test_bad_counts(self, field):
        with pytest.raises(ConfigError):
            generate_synthetic(GenConfig(**{field: 0}), seed=0)


class TestSampling:
    def test_identity(self):
        ds = generate_synthetic(GenConfig(n_queries=40), seed=0)
        sub = sample_fraction(ds, 1.0, seed=5)
        assert sorted(q.qid for q in sub.queries) == sorted(q.qid for q in ds.queries)

    def test_one_percent(self):
        ds = generate_synthetic(GenConfig(n_queries=1000, docs_per_query=2, feature_dim=2), seed=0)
        assert len(sample_fraction(ds, 0.01, seed=0)) == 10

    def test_seeds_differ(self):
        ds = generate_synthetic(GenConfig(n_queries=1000, docs_per_query=2, feature_dim=2), seed=0)
        a = {q.qid for q in sample_fraction(ds, 0.05, seed=1).queries}
        b = {q.qid for q in sample_fraction(ds, 0.05, seed=2).queries}
        assert a != b
        assert a == {q.qid for q in sample_fraction(ds, 0.05, seed=1).queries}

    @pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
    def test_bad_fraction(self, fraction):
        ds = generate_synthetic(GenConfig(n_queries=5), seed=0)
        with pytest.raises(ConfigError):
            sample_fraction(ds, fraction, seed=0)

    def test_split_partitions(self):
        ds = generate_synthetic(GenConfig(n_queries=100, docs_per_query=2, feature_dim=2), seed=0)
        parts = split_queries(ds, [0.6, 0.2, 0.2], seed=3)
        assert [len(p) for p in parts] == [60, 20, 20]
        ids = [q.qid for p in parts for q in p.queries]
        assert sorted(ids) == sorted(q.qid for q in ds.queries)
