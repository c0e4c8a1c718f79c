import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lacl.data import (
    MASK,
    PAD,
    UNK,
    Vocabulary,
    batch_iter,
    build_vocab,
    bundled_exclusions,
    close_split,
    corpus_from_json,
    encode,
    exclude_classes,
    far_pair,
    load_corpus,
    load_exclusions,
    pad_batch,
    tokenize,
)
from lacl.errors import LaclError
from lacl.synthetic import bundled_corpus, generate


@pytest.fixture(scope="module")
def synth():
    return bundled_corpus()


def small_corpus(k=8, per=3):
    return corpus_from_json({
        "train": [[f"word{i} sample {j}", f"intent{i}"] for i in range(k) for j in range(per)],
        "test": [[f"word{i} probe", f"intent{i}"] for i in range(k)],
    })


# -- loading ----------------------------------------------------------------------
def test_oos_split_is_label_free(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({
        "train": [["hello there", "greet"], ["bye now", "leave"]],
        "oos_test": [["what is the weather", "oos"]],
    }))
    c = load_corpus(p)
    assert c.label_names == ["greet", "leave"]
    assert c.ood_splits() == ["oos_test"]
    assert all(ex.is_ood and ex.label is None for ex in c["oos_test"])
    assert c["train"][1].label == 1


def test_empty_train_split():
    with pytest.raises(LaclError, match="empty-split"):
        corpus_from_json({"train": [], "test": [["a b", "x"]]})


def test_train_optional_for_evaluation_files():
    c = corpus_from_json({"oos_test": [["a b", "oos"]]}, require_train=False)
    assert len(c["oos_test"]) == 1


def test_malformed_record_reports_index():
    with pytest.raises(LaclError, match="record 1"):
        corpus_from_json({"train": [["ok text", "a"], ["only text"]]})


def test_unknown_split_key():
    with pytest.raises(LaclError, match="unknown-split"):
        corpus_from_json({"train": [["a", "x"]], "dev": [["b", "y"]]})


def test_missing_file(tmp_path):
    with pytest.raises(LaclError, match="missing-file"):
        load_corpus(tmp_path / "nope.json")


def test_bundled_synthetic_counts(synth):
    assert synth.num_labels == 8
    assert len(synth["train"]) == 8 * 60
    assert len(synth["val"]) == 8 * 10
    assert len(synth["test"]) == 8 * 30
    assert len(synth["oos_test"]) > 0
    assert synth.splits == bundled_corpus().splits


def test_generator_is_deterministic():
    assert generate(seed=3) == generate(seed=3)
    assert generate(seed=3) != generate(seed=4)


def test_round_trip_through_json(synth):
    again = corpus_from_json(json.loads(json.dumps(synth.to_json())))
    assert again.label_names == synth.label_names
    assert again.corpus_id() == synth.corpus_id()


# -- vocabulary ---------------------------------------------------------------------
def test_reserved_ids():
    v = build_vocab(small_corpus())
    assert (v.id("[PAD]"), v.id("[UNK]"), v.id("[MASK]")) == (PAD, UNK, MASK) == (0, 1, 2)


def test_encode_known_and_unknown_words():
    c = corpus_from_json({"train": [["Read text", "a"], ["read TEXT now", "b"]]})
    v = build_vocab(c)
    assert encode("Read text", v) == [v.id("read"), v.id("text")]
    assert encode("zebra", v) == [UNK]


def test_min_freq_maps_rare_tokens_to_unk():
    c = corpus_from_json({"train": [["a a b", "x"], ["a c", "y"]]})
    v = build_vocab(c, min_freq=2)
    assert encode("a b c", v) == [v.id("a"), UNK, UNK]
    with pytest.raises(LaclError):
        build_vocab(c, min_freq=0)


def test_vocab_is_stable_across_loads(synth):
    a, b = build_vocab(synth), build_vocab(bundled_corpus())
    assert a.to_dict() == b.to_dict()
    assert Vocabulary.from_dict(a.to_dict()).to_dict() == a.to_dict()


def test_tokenize_lowercases_and_splits():
    assert tokenize("  Book a FLIGHT\tnow ") == ["book", "a", "flight", "now"]


# -- splits ---------------------------------------------------------------------------
def test_close_split_counts():
    ind, ood = close_split(small_corpus(8), 0.25, seed=0)
    assert (ind.num_labels, ood.num_labels) == (2, 6)


def test_close_split_150_labels_half():
    ind, ood = close_split(small_corpus(150, 2), 0.5, seed=1)
    assert (ind.num_labels, ood.num_labels) == (75, 75)


def test_close_split_deterministic(synth):
    a, _ = close_split(synth, 0.5, 4)
    b, _ = close_split(synth, 0.5, 4)
    assert a.label_names == b.label_names


def test_close_split_degenerate():
    with pytest.raises(LaclError, match="degenerate-split"):
        close_split(small_corpus(2), 0.9, 0)
    with pytest.raises(LaclError, match="degenerate-split"):
        close_split(small_corpus(4), 1.0, 0)


def test_close_split_relabels_ind_and_strips_ood(synth):
    ind, ood = close_split(synth, 0.5, 1)
    for rows in ind.splits.values():
        assert all(0 <= ex.label < ind.num_labels and ind.label_names[ex.label] == ex.intent for ex in rows)
    for rows in ood.splits.values():
        assert all(ex.label is None for ex in rows)
    assert "oos_test" not in ind.splits


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 30), st.sampled_from([0.25, 0.5, 0.75]), st.integers(0, 10_000))
def test_close_split_partitions_labels(k, ratio, seed):
    c = small_corpus(k, 1)
    try:
        ind, ood = close_split(c, ratio, seed)
    except LaclError as e:
        assert e.code == "degenerate-split"
        return
    a, b = set(ind.label_names), set(ood.label_names)
    assert not a & b
    assert a | b == set(c.label_names)


def test_far_pair_snips_exclusions():
    names = bundled_exclusions("clinc_snips")
    assert len(names) == 7
    clinc = corpus_from_json({
        "train": [[f"{n} text", n] for n in names + ["balance", "transfer"] for _ in range(2)],
    })
    snips = corpus_from_json({"test": [["play a song", "PlayMusic"]]}, require_train=False)
    pair = far_pair(clinc, snips, names)
    assert pair.ind.label_names == ["balance", "transfer"]
    assert all(ex.intent not in names for rows in pair.ind.splits.values() for ex in rows)
    assert [ex.text for ex in pair.ood_test] == ["play a song"]
    assert all(ex.label is None for ex in pair.ood_test)


def test_far_pair_empty_exclusions_keeps_ind(synth):
    pair = far_pair(synth, synth, [])
    assert pair.ind.label_names == synth.label_names


def test_far_pair_drops_one_shared_class(synth):
    pair = far_pair(synth, synth, ["play_music"])
    assert pair.ind.num_labels == synth.num_labels - 1


def test_exclude_by_domain(synth):
    domain = synth["train"][0].domain
    out = exclude_classes(synth, [domain])
    assert all(ex.domain != domain for rows in out.splits.values() for ex in rows)


def test_unknown_exclusion_lists_names(synth):
    with pytest.raises(LaclError, match="weather"):
        far_pair(synth, synth, ["weather"])


def test_load_exclusions_comments(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("# header\nalpha\n\nbeta  # trailing\n")
    assert load_exclusions(p) == ["alpha", "beta"]


# -- batching ---------------------------------------------------------------------------
def test_batch_sizes_keep_short_tail():
    assert [len(b) for b in batch_iter(list(range(10)), 4, seed=0, epoch=0)] == [4, 4, 2]


def test_batch_order_reproducible():
    rows = list(range(50))
    a = list(batch_iter(rows, 8, 3, 2))
    assert a == list(batch_iter(rows, 8, 3, 2))
    assert a != list(batch_iter(rows, 8, 3, 3))
    assert sorted(x for b in a for x in b) == rows


def test_batch_size_too_small():
    with pytest.raises(LaclError):
        list(batch_iter([1, 2, 3], 1, 0, 0))


def test_pad_batch():
    ids, mask = pad_batch([[5, 6, 7], [8]])
    np.testing.assert_array_equal(ids, [[5, 6, 7], [8, PAD, PAD]])
    np.testing.assert_array_equal(mask, [[1, 1, 1], [1, 0, 0]])
    ids, _ = pad_batch([[1, 2, 3, 4]], max_len=2)
    assert ids.shape == (1, 2)
