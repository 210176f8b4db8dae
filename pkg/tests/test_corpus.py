import json

import numpy as np
import pytest

from prodelib import corpus as C
from prodelib.noising import build_confusions


def test_zero_channel_rates_give_clean_hypotheses(grammar):
    data = C.generate(grammar.with_channel(0.0, 0.0), 500, seed=1)
    assert not any(ex.had_asr_error for ex in data)
    assert all(ex.hyp_words == ex.gold_words for ex in data)


def test_error_fraction_matches_analytic_probability(grammar):
    data = C.generate(grammar, 10_000, seed=2)
    observed = np.mean([ex.had_asr_error for ex in data])
    analytic = np.mean([C.corruption_probability(ex.gold_words, grammar) for ex in data])
    assert abs(observed - analytic) < 0.02
    # the default channel corrupts about a quarter of sentences
    assert 0.2 < observed < 0.3


def test_error_flag_matches_hypothesis(small_data):
    for ex in small_data:
        assert ex.had_asr_error == (ex.hyp_words != ex.gold_words)


def test_every_parse_is_well_bracketed(small_data):
    assert all(C.is_well_bracketed(ex.parse) for ex in small_data)
    assert max(C.parse_depth(ex.parse) for ex in small_data) == 2


@pytest.mark.parametrize("parse, ok", [
    ("[IN:A [SL:B x ] ]", True),
    ("[IN:A [SL:B [IN:C [SL:D y ] ] ] ]", True),
    ("[IN:A [SL:B x ] ] ]", False),
    ("[IN:A [SL:B x ]", False),
    ("[SL:B x ]", False),
    ("[IN:A x ]", False),
    ("[IN:A [IN:B ] ]", False),
])
def test_bracket_validator(parse, ok):
    assert C.is_well_bracketed(parse.split()) is ok


def test_slot_fillers_appear_in_gold_words(small_data):
    for ex in small_data:
        words = [t for t in ex.parse if not C.is_ontology(t)]
        assert set(words) <= set(ex.gold_words)


def test_generation_is_deterministic(grammar):
    a = C.generate(grammar, 300, seed=5)
    b = C.generate(grammar, 300, seed=5)
    assert a == b
    assert a != C.generate(grammar, 300, seed=6)


def test_splits_are_disjoint_by_instance(grammar):
    data = C.generate(grammar, 3000, seed=4)
    seen: dict[str, str] = {}
    for ex in data:
        key = " ".join(ex.gold_words) + "|" + " ".join(ex.parse)
        assert seen.setdefault(key, ex.split) == ex.split


def test_split_quotas_are_honoured(grammar):
    data = C.generate(grammar, {"train": 120, "valid": 30, "test": 10}, seed=0)
    assert [len(C.by_split(data, s)) for s in C.SPLITS] == [120, 30, 10]


def test_generate_rejects_empty_request(grammar):
    with pytest.raises(ValueError):
        C.generate(grammar, 0, seed=0)


def test_dataset_round_trip(tmp_path, small_data):
    path = tmp_path / "data.jsonl"
    C.save_dataset(small_data, path)
    assert C.load_dataset(path) == small_data


def test_empty_file_is_empty_dataset(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert C.load_dataset(path) == []


def test_missing_parse_field_is_named(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = {"gold": "call john", "hyp": "call john", "parse": "[IN:CREATE_CALL ]", "split": "train",
            "had_asr_error": False}
    bad = {k: v for k, v in good.items() if k != "parse"}
    path.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(C.DatasetFormatError, match=r":2:.*'parse'"):
        C.load_dataset(path)


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(C.DatasetFormatError, match=":1:"):
        C.load_dataset(path)


def test_grammar_file_round_trip(tmp_path, grammar):
    path = tmp_path / "grammar.yaml"
    C.save_grammar(grammar, path)
    assert C.load_grammar(path) == grammar


def test_invalid_grammar_names_field():
    raw = C.default_grammar()
    raw["channel"]["deletion_rate"] = 1.5
    with pytest.raises(C.SpecError, match="deletion_rate"):
        C.GrammarSpec.from_dict(raw)
    raw = C.default_grammar()
    raw["templates"][0]["words"] = "call {nobody}"
    with pytest.raises(C.SpecError, match="nobody"):
        C.GrammarSpec.from_dict(raw)
    raw = C.default_grammar()
    del raw["fillers"]
    with pytest.raises(C.SpecError, match="fillers"):
        C.GrammarSpec.from_dict(raw)


def test_confusions_recover_channel_table(grammar):
    train = C.by_split(C.generate(grammar, 10_000, seed=8), "train")
    learned = build_confusions([(ex.hyp_words, ex.gold_words) for ex in train])
    src, rep, _ = learned.top_pair()
    table = {s: dict(r) for s, r in grammar.confusions.items()}
    assert rep in table[src]
    # the dominant learned pair is one of the channel's highest-weight entries
    assert table[src][rep] == max(table[src].values())
    # deletions next to a substitution can align ambiguously; table pairs must dominate
    in_table = sum(c for s, r, c in learned.rows() if r in table.get(s, {}))
    assert in_table / sum(c for *_, c in learned.rows()) > 0.95


def test_vocab_layout(small_vocab):
    assert tuple(small_vocab.itos[:len(C.SPECIALS)]) == C.SPECIALS
    assert small_vocab.decode(small_vocab.encode(["call", "john"])) == ["call", "john"]
    assert small_vocab.encode(["zzz-unseen"]) == [C.UNK]
    assert not small_vocab.output_mask[C.BLANK]


def test_embed_first_pass_shapes_follow_token_counts(small_data, small_vocab):
    emb = C.FirstPassEmbedder(len(small_vocab), 8, 2, np.random.default_rng(0))
    batch = small_data[:5]
    fp = C.embed_first_pass(batch, small_vocab, emb)
    assert fp.text_mask.sum(axis=1).tolist() == [len(ex.hyp_words) or 1 for ex in batch]
    assert fp.aud_mask.sum(axis=1).tolist() == [len(ex.gold_words) for ex in batch]
    assert fp.emb_text.shape[-1] == fp.emb_aud.shape[-1] == 8


def test_clean_hypothesis_encodes_same_words_in_both_channels(small_vocab):
    emb = C.FirstPassEmbedder(len(small_vocab), 8, 2, np.random.default_rng(0))
    words = ["call", "john"]
    ex = C.Example(words, list(words), ["[IN:CREATE_CALL", "[SL:CONTACT", "john", "]", "]"], False, "train")
    fp = C.embed_first_pass([ex], small_vocab, emb)
    assert fp.text_tokens[0].tolist() == small_vocab.encode(words)
    np.testing.assert_array_equal(fp.emb_text.data[0], emb.text_table.table.data[small_vocab.encode(words)])


def test_corrupting_one_word_changes_text_embedding_at_that_position_only(small_vocab):
    emb = C.FirstPassEmbedder(len(small_vocab), 8, 2, np.random.default_rng(0))
    gold = ["please", "call", "john", "tonight"]
    ex = C.Example(gold, list(gold), [], False, "train")
    clean = C.embed_first_pass([ex], small_vocab, emb).emb_text.data[0]
    noisy = C.embed_first_pass([ex], small_vocab, emb, hyp_override=[["please", "call", "jake", "tonight"]])
    diff = np.abs(noisy.emb_text.data[0] - clean).sum(axis=-1)
    assert diff.nonzero()[0].tolist() == [2]


def test_acoustic_units_are_stable_and_bounded():
    units = [C.acoustic_unit(f"w{i}", 16) for i in range(200)]
    assert min(units) >= len(C.SPECIALS) and max(units) < len(C.SPECIALS) + 16
    assert units == [C.acoustic_unit(f"w{i}", 16) for i in range(200)]
