import pytest

from dsft.corpus import GeneratorSpec, generate_corpus, record_to_sequence
from dsft.rng import substream
from dsft.tokenizer import (
    MASK_ID,
    PAD_ID,
    BOS_ID,
    EOS_ID,
    SEP_ID,
    SEP_TOKEN,
    SPECIAL_TOKENS,
    UNK_TOKEN,
    TokenClass,
    TokenizeError,
    TokenizerConfig,
    Vocabulary,
    build_vocab,
    classify_token,
    detokenize,
    encode_prompt,
    lex,
    load_vocab,
    normalize_whitespace,
    save_vocab,
    tokenize,
)


class TestClassify:
    def test_digit_is_numeric(self):
        assert classify_token("7") is TokenClass.NUMERIC

    def test_point_is_numeric(self):
        assert classify_token(".") is TokenClass.NUMERIC

    def test_equals_is_operator(self):
        assert classify_token("=") is TokenClass.OPERATOR

    def test_word_fallback(self):
        assert classify_token("the") is TokenClass.WORD

    def test_specials(self):
        for tok in SPECIAL_TOKENS:
            assert classify_token(tok) is TokenClass.SPECIAL

    def test_pure_and_total(self):
        probes = ["", "7", "77", ".", "+", "-", "x2", "Tom's", "[MASK]", "é", "?"]
        for tok in probes:
            assert classify_token(tok) is classify_token(tok)

    def test_numeric_tokens_parse_as_digit_or_point(self):
        vocab = build_vocab(["3 + 4.5 = x the end"])
        for tok in vocab.tokens:
            if classify_token(tok) is TokenClass.NUMERIC:
                assert tok == "." or (len(tok) == 1 and tok.isdigit())


class TestBuildVocab:
    def test_digits_and_operators_atomic(self):
        vocab = build_vocab(["3 + 4 = 7"])
        for tok in ["3", "+", "4", "=", "7"]:
            assert vocab.id_of(tok) is not None

    def test_special_ids_fixed(self):
        vocab = build_vocab(["a a"])
        assert vocab.tokens[:5] == SPECIAL_TOKENS
        assert (MASK_ID, PAD_ID, BOS_ID, EOS_ID, SEP_ID) == (0, 1, 2, 3, 4)

    def test_deterministic_serialization(self, tmp_path, small_corpus):
        texts = [r.prompt + " " + r.completion for r in small_corpus]
        v1 = build_vocab(texts)
        v2 = build_vocab(texts)
        p1, p2 = tmp_path / "v1.txt", tmp_path / "v2.txt"
        save_vocab(v1, p1)
        save_vocab(v2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_frequency_floor(self):
        corpus = ["apples"] * 5
        assert build_vocab(corpus, TokenizerConfig(min_word_freq=3)).id_of("apples")
        assert build_vocab(corpus, TokenizerConfig(min_word_freq=10)).id_of("apples") is None

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_vocab([])

    def test_vocab_roundtrip(self, tmp_path, small_vocab):
        path = tmp_path / "vocab.txt"
        save_vocab(small_vocab, path)
        loaded = load_vocab(path)
        assert loaded.tokens == small_vocab.tokens
        for i, tok in enumerate(loaded.tokens):
            assert loaded.id_of(tok) == i


class TestTokenize:
    def test_digit_split_and_sep(self):
        vocab = build_vocab(["x = 12"], TokenizerConfig(min_word_freq=1))
        text = "x = 12"
        seq = tokenize(text, 3, vocab)
        toks = [vocab.token_of(i) for i in seq.ids]
        assert toks == ["x", "=", SEP_TOKEN, "1", "2"]
        assert list(seq.classes) == [
            TokenClass.WORD,
            TokenClass.OPERATOR,
            TokenClass.SPECIAL,
            TokenClass.NUMERIC,
            TokenClass.NUMERIC,
        ]
        assert seq.prompt_len == 3

    def test_empty_prompt_rejected(self):
        vocab = build_vocab(["a b"], TokenizerConfig(min_word_freq=1))
        with pytest.raises(TokenizeError):
            tokenize(" ab", 1, vocab)  # prompt region is whitespace only

    def test_empty_completion_rejected(self):
        vocab = build_vocab(["a b"], TokenizerConfig(min_word_freq=1))
        with pytest.raises(ValueError):
            tokenize("a b", len("a b") - 0, vocab)

    def test_boundary_must_not_split_token(self):
        vocab = build_vocab(["abc def"], TokenizerConfig(min_word_freq=1))
        with pytest.raises(TokenizeError):
            tokenize("abc def", 2, vocab)

    def test_unknown_word_maps_to_unk(self, small_vocab):
        seq = tokenize("zzzunseen word", 9, small_vocab)
        assert seq.ids[0] == small_vocab.unk_id

    def test_unmappable_token_reports_offset(self):
        tokens = list(SPECIAL_TOKENS) + ["a"]  # no UNK available
        vocab = Vocabulary(tuple(tokens))
        with pytest.raises(TokenizeError, match="offset 2"):
            tokenize("a mystery", 1, vocab)

    def test_classes_ignore_prompt_membership(self, small_vocab):
        seq = tokenize("3 plus 4", 1, small_vocab)
        assert seq.classes[0] is TokenClass.NUMERIC  # prompt numeric stays numeric

    def test_roundtrip_oracle_1000_lines(self):
        records = generate_corpus(GeneratorSpec(count=1000), seed=23)
        vocab = build_vocab(r.prompt + " " + r.completion for r in records)
        for rec in records:
            seq = record_to_sequence(rec, vocab)
            original = normalize_whitespace(rec.prompt + " " + rec.completion)
            assert detokenize(seq.ids, vocab) == original

    def test_sep_never_inside_text_tokens(self, small_seqs):
        for seq in small_seqs:
            specials = [i for i, c in enumerate(seq.classes) if c is TokenClass.SPECIAL]
            assert specials == [seq.prompt_len - 1]


class TestLex:
    def test_offsets(self):
        assert lex("ab 12") == [("ab", 0), ("1", 3), ("2", 4)]

    def test_decimal_number(self):
        assert [t for t, _ in lex("3.14")] == ["3", ".", "1", "4"]

    def test_attached_punctuation_stays_in_word(self):
        assert [t for t, _ in lex("now? yes")] == ["now?", "yes"]


class TestEncodePrompt:
    def test_ends_with_sep(self, small_vocab):
        ids = encode_prompt("Tom has 3 of the apples", small_vocab)
        assert ids[-1] == SEP_ID
        assert len(ids) > 1

    def test_empty_prompt_rejected(self, small_vocab):
        with pytest.raises(TokenizeError):
            encode_prompt("   ", small_vocab)


class TestDetokenize:
    def test_numbers_glue(self, small_vocab):
        seq = tokenize("the 42", 3, small_vocab)
        assert detokenize(seq.ids, small_vocab) == "the 42"

    def test_unk_token_renders(self, small_vocab):
        assert UNK_TOKEN in detokenize([small_vocab.unk_id], small_vocab)
