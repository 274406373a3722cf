import numpy as np
import pytest

from streamintent.corpus import dump_transcripts
from streamintent.syngen import (
    DEFAULT_LEXICON,
    DEFAULT_TRAILING,
    MS_PER_WORD,
    GeneratorError,
    GeneratorSpec,
    generate_corpus,
    summarize_corpus,
    write_stats_csv,
)


@pytest.fixture(scope="module")
def corpus1000():
    spec = GeneratorSpec(num_transcripts=1000, seed=11)
    return spec, generate_corpus(spec)


def test_same_seed_same_bytes():
    spec = GeneratorSpec(num_transcripts=40, seed=5)
    names = spec.class_names
    assert dump_transcripts(generate_corpus(spec), names) == dump_transcripts(generate_corpus(spec), names)


def test_different_seed_differs():
    a = generate_corpus(GeneratorSpec(num_transcripts=20, seed=1))
    b = generate_corpus(GeneratorSpec(num_transcripts=20, seed=2))
    assert a != b


def test_zero_transcripts():
    assert generate_corpus(GeneratorSpec(num_transcripts=0)) == []


def test_keywords_are_disjoint_across_classes():
    owner = {}
    for name, phrases in DEFAULT_LEXICON.items():
        for p in phrases:
            kw = p.split()[-1]
            assert owner.setdefault(kw, name) == name


def test_annotation_structure(corpus1000):
    spec, corpus = corpus1000
    for tr in corpus:
        ann = tr.annotation
        tr.validate(len(spec.classes))
        turn = tr.turns[ann.turn_index]
        assert turn.speaker == "customer"
        phrases = spec.classes[spec.class_names[ann.class_id]]
        words = turn.words
        assert any(words[ann.boundary_token_index + 1 - len(p.split()) : ann.boundary_token_index + 1] == p.split()
                   for p in phrases)


def test_end_of_turn_rate_near_target(corpus1000):
    spec, corpus = corpus1000
    stats = summarize_corpus(corpus, spec.class_names)
    assert abs(stats.end_of_turn_fraction - 0.62) <= 0.04


def test_offsets_follow_trailing_distribution(corpus1000):
    spec, corpus = corpus1000
    stats = summarize_corpus(corpus, spec.class_names)
    allowed = {round(k * MS_PER_WORD / 1000, 3) for k in DEFAULT_TRAILING} | {0.0}
    assert set(stats.offset_seconds) <= allowed
    nonzero = [o for o in stats.offset_seconds if o > 0]
    total = sum(DEFAULT_TRAILING.values())
    for k, w in DEFAULT_TRAILING.items():
        observed = sum(1 for o in nonzero if o == round(k * 0.4, 3)) / len(nonzero)
        expected = w / total
        sigma = np.sqrt(expected * (1 - expected) / len(nonzero))
        assert abs(observed - expected) <= 4 * sigma


def test_class_frequencies_within_three_sigma(corpus1000):
    spec, corpus = corpus1000
    counts = summarize_corpus(corpus, spec.class_names).class_counts
    n, c = len(corpus), len(counts)
    sigma = np.sqrt(n * (1 / c) * (1 - 1 / c))
    assert all(abs(v - n / c) <= 3 * sigma for v in counts.values())


def test_all_turn_final_is_point_mass():
    spec = GeneratorSpec(num_transcripts=50, end_of_turn_boundary_rate=1.0, seed=3)
    stats = summarize_corpus(generate_corpus(spec), spec.class_names)
    assert stats.offset_histogram() == {0.0: 50}
    assert stats.end_of_turn_fraction == 1.0


def test_empty_stats():
    stats = summarize_corpus([], ["a"])
    assert stats.offset_seconds == [] and stats.end_of_turn_fraction is None


def test_stats_csv(tmp_path):
    spec = GeneratorSpec(num_transcripts=30, seed=0)
    stats = summarize_corpus(generate_corpus(spec), spec.class_names)
    p = tmp_path / "s.csv"
    write_stats_csv(stats, p)
    rows = p.read_text().splitlines()
    assert rows[0] == "bucket,count"
    assert sum(int(r.split(",")[1]) for r in rows[1:]) == 30


@pytest.mark.parametrize("bad", [
    dict(num_transcripts=-1),
    dict(end_of_turn_boundary_rate=1.5),
    dict(classes={}),
    dict(classes={"a": [""]}),
    dict(trailing_length_distribution={0: 1.0}),
    dict(class_weights=[1.0]),
])
def test_invalid_specs(bad):
    with pytest.raises(GeneratorError):
        generate_corpus(GeneratorSpec(**bad))


def test_class_weights_skew_sampling():
    names = list(DEFAULT_LEXICON)[:2]
    spec = GeneratorSpec(num_transcripts=200, classes={n: DEFAULT_LEXICON[n] for n in names},
                         class_weights=[1.0, 0.0], seed=0)
    assert {tr.annotation.class_id for tr in generate_corpus(spec)} == {0}
