"""Tokenizer round-trips, span-corruption reconstruction, QG pair shaping."""

import random

import pytest

from eduqg.datasets import QGExample
from eduqg.textproc import (
    EOS_ID,
    PAD_ID,
    UNK_ID,
    CorruptionError,
    TokenSequence,
    Tokenizer,
    corrupt_spans,
    make_qg_pair,
    reconstruct,
)
from synthdata import SCIENCE_FACTS, SCIQ_QUESTION_TEMPLATE, all_fixture_texts


@pytest.fixture(scope="module")
def tokenizer():
    return Tokenizer.build(all_fixture_texts(), max_words=2000, num_sentinels=16)


class TestTokenizer:
    def test_empty_round_trip(self, tokenizer):
        seq = tokenizer.encode("")
        assert len(seq) == 0
        assert tokenizer.decode(seq) == ""

    def test_known_vocab_round_trip(self, tokenizer):
        text = "ribosomes are the non-membrane bound organelles where proteins are made ."
        assert tokenizer.decode(tokenizer.encode(text)) == text

    def test_byte_fallback_round_trip(self, tokenizer):
        text = "the zyxwv Qx7 compound reacts"
        assert tokenizer.decode(tokenizer.encode(text)) == text

    def test_adjacent_unknown_words(self, tokenizer):
        text = "Qx7 Zz9 phlogiston"
        assert tokenizer.decode(tokenizer.encode(text)) == text

    def test_unicode_fallback(self, tokenizer):
        text = "café naïve Δx"
        assert tokenizer.decode(tokenizer.encode(text)) == text

    def test_whitespace_normalization_declared(self, tokenizer):
        assert tokenizer.decode(tokenizer.encode("a   b\t c\n")) == "a b c"

    def test_random_question_round_trips(self, tokenizer):
        rng = random.Random(5)
        questions = []
        for _ in range(100):
            _, _, clause, _ = rng.choice(SCIENCE_FACTS)
            questions.append(SCIQ_QUESTION_TEMPLATE.format(clause=clause))
        ok = sum(tokenizer.decode(tokenizer.encode(q)) == q for q in questions)
        assert ok == 100

    def test_encode_of_decode_restores_ids(self, tokenizer):
        for text in ["we study entropy , the measure of disorder", "Qx7 unknown Zz9 here"]:
            seq = tokenizer.encode(text)
            assert tokenizer.encode(tokenizer.decode(seq)).ids == seq.ids

    def test_special_ids_distinct_and_reserved(self, tokenizer):
        specials = {PAD_ID, EOS_ID, UNK_ID}
        sentinels = {tokenizer.sentinel_id(k) for k in range(tokenizer.num_sentinels)}
        assert len(sentinels) == tokenizer.num_sentinels
        assert not specials & sentinels
        # no encodable text token collides with a special id
        every_id = set()
        for text in all_fixture_texts():
            every_id.update(tokenizer.encode(text).ids)
        assert not every_id & specials
        assert not every_id & sentinels
        assert max(every_id) < tokenizer.vocab_size

    def test_save_load_round_trip(self, tokenizer, tmp_path):
        path = tmp_path / "vocab.json"
        tokenizer.save(path)
        loaded = Tokenizer.load(path)
        assert loaded.words == tokenizer.words
        assert loaded.vocab_size == tokenizer.vocab_size
        text = "photosynthesis is the process plants use"
        assert loaded.encode(text).ids == tokenizer.encode(text).ids

    def test_decode_with_specials_rendered(self, tokenizer):
        ids = (tokenizer.sentinel_id(0), *tokenizer.encode("energy").ids, EOS_ID)
        assert tokenizer.decode(ids, skip_special=False) == "<sentinel_0> energy </s>"
        assert tokenizer.decode(ids) == "energy"

    def test_build_is_deterministic(self):
        a = Tokenizer.build(all_fixture_texts(), max_words=500, num_sentinels=4)
        b = Tokenizer.build(all_fixture_texts(), max_words=500, num_sentinels=4)
        assert a.words == b.words


class TestSpanCorruption:
    def test_zero_rate_is_identity(self, tokenizer):
        seq = tokenizer.encode("gravity is the attractive force acting between all masses")
        pair = corrupt_spans(seq, 0.0, 3, seed=1, tokenizer=tokenizer)
        assert pair.input.ids == seq.ids
        assert pair.target.ids == (EOS_ID,)

    def test_frozen_two_span_trace(self):
        # Manual trace, frozen from the corruption procedure's own RNG at
        # seed 3: spans {t3, t4} and {t8} out of t1..t10.
        tok = Tokenizer(words=[f"w{i}" for i in range(20)], num_sentinels=10)
        seq = TokenSequence(tuple(range(259, 269)))
        pair = corrupt_spans(seq, 0.3, 1.5, seed=3, tokenizer=tok)
        s0, s1 = tok.sentinel_id(0), tok.sentinel_id(1)
        assert pair.input.ids == (259, 260, s0, 263, 264, 265, s1, 267, 268)
        assert pair.target.ids == (s0, 261, 262, s1, 266, EOS_ID)
        assert reconstruct(pair, tok).ids == seq.ids

    def test_deterministic_in_seed(self, tokenizer):
        seq = tokenizer.encode("entropy is the measure of disorder within a thermodynamic system")
        a = corrupt_spans(seq, 0.3, 2, seed=77, tokenizer=tokenizer)
        b = corrupt_spans(seq, 0.3, 2, seed=77, tokenizer=tokenizer)
        c = corrupt_spans(seq, 0.3, 2, seed=78, tokenizer=tokenizer)
        assert a == b
        assert a != c

    def test_sentinels_strictly_increasing(self, tokenizer):
        rng = random.Random(13)
        for _ in range(50):
            n = rng.randint(4, 80)
            seq = TokenSequence(tuple(rng.randint(300, 400) for _ in range(n)))
            pair = corrupt_spans(seq, 0.3, 2, seed=rng.randint(0, 10**6), tokenizer=tokenizer)
            for side in (pair.input.ids, pair.target.ids):
                ks = [tokenizer._sentinel_base - t for t in side if tokenizer.is_sentinel(t)]
                assert ks == sorted(ks)
                assert ks == list(range(len(ks)))

    def test_reconstruction_property(self, tokenizer):
        rng = random.Random(31)
        for trial in range(500):
            n = rng.randint(2, 120)
            seq = TokenSequence(tuple(rng.randint(300, 500) for _ in range(n)))
            rate = rng.uniform(0.05, 0.5)
            span = rng.randint(1, 5)
            try:
                pair = corrupt_spans(seq, rate, span, seed=trial, tokenizer=tokenizer)
            except CorruptionError:
                num_noise = max(1, round(rate * n))
                spans_needed = min(max(1, round(num_noise / span)), num_noise, n - num_noise + 1)
                assert num_noise >= n or spans_needed > tokenizer.num_sentinels
                continue
            assert reconstruct(pair, tokenizer).ids == seq.ids

    def test_corruption_fraction_near_rate(self, tokenizer):
        rng = random.Random(7)
        fractions = []
        for trial in range(300):
            n = rng.randint(20, 150)
            seq = TokenSequence(tuple(rng.randint(300, 500) for _ in range(n)))
            pair = corrupt_spans(seq, 0.15, 3, seed=trial, tokenizer=tokenizer)
            removed = n - sum(1 for t in pair.input.ids if not tokenizer.is_sentinel(t))
            fractions.append(removed / n)
        mean = sum(fractions) / len(fractions)
        assert 0.12 <= mean <= 0.18

    def test_all_tokens_removed_is_error(self, tokenizer):
        seq = TokenSequence((300,))
        with pytest.raises(CorruptionError):
            corrupt_spans(seq, 0.9, 1, seed=0, tokenizer=tokenizer)

    def test_sentinel_budget_exceeded_is_error(self):
        tok = Tokenizer(words=[f"w{i}" for i in range(600)], num_sentinels=2)
        seq = TokenSequence(tuple(range(300, 420)))  # 120 tokens, ~18 noise, ~9 spans
        with pytest.raises(CorruptionError):
            corrupt_spans(seq, 0.15, 2, seed=0, tokenizer=tok)

    def test_invalid_arguments(self, tokenizer):
        seq = tokenizer.encode("friction is the resistive force")
        with pytest.raises(CorruptionError):
            corrupt_spans(seq, -0.1, 3, seed=0, tokenizer=tokenizer)
        with pytest.raises(CorruptionError):
            corrupt_spans(seq, 1.0, 3, seed=0, tokenizer=tokenizer)
        with pytest.raises(CorruptionError):
            corrupt_spans(seq, 0.15, 0, seed=0, tokenizer=tokenizer)
        with pytest.raises(CorruptionError):
            corrupt_spans(TokenSequence(()), 0.15, 3, seed=0, tokenizer=tokenizer)


class TestQGPairs:
    def _example(self):
        return QGExample(id="x", context="entropy is the measure of disorder",
                         question="which term describes the measure of disorder ?")

    def test_prefix_applied(self, tokenizer):
        inp, tgt = make_qg_pair(self._example(), tokenizer, prefix="generate question: ")
        assert tokenizer.decode(inp) == "generate question: entropy is the measure of disorder"

    def test_target_ends_with_eos(self, tokenizer):
        _, tgt = make_qg_pair(self._example(), tokenizer)
        assert tgt.ids[-1] == EOS_ID
        assert tokenizer.decode(tgt) == "which term describes the measure of disorder ?"

    def test_input_truncated_to_max(self, tokenizer):
        long_ex = QGExample(id="x", context="gravity " * 900, question="why ?")
        inp, _ = make_qg_pair(long_ex, tokenizer, max_input_len=512)
        assert len(inp) == 512

    def test_target_truncation_preserves_eos(self, tokenizer):
        ex = QGExample(id="x", context="c", question="word " * 200)
        _, tgt = make_qg_pair(ex, tokenizer, max_target_len=16)
        assert len(tgt) == 16
        assert tgt.ids[-1] == EOS_ID

    def test_every_fixture_target_ends_with_eos(self, tokenizer):
        for term, be, clause, _ in SCIENCE_FACTS:
            ex = QGExample(id=term, context=f"{term} {be} {clause} .",
                           question=SCIQ_QUESTION_TEMPLATE.format(clause=clause))
            _, tgt = make_qg_pair(ex, tokenizer)
            assert tgt.ids[-1] == EOS_ID
