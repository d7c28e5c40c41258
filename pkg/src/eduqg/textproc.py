"""Tokenization and the span-corruption transform that builds denoising pairs.

The tokenizer is word-level with UTF-8 byte fallback: any whitespace-delimited
word outside the vocabulary is spelled out as byte tokens, so every string
round-trips exactly up to whitespace normalization. Special ids (pad,
end-of-sequence, unknown, span sentinels) live outside the text-token range.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

PAD_ID = 0
EOS_ID = 1
UNK_ID = 2
_BYTE_OFFSET = 3
_NUM_BYTES = 256
_WORD_OFFSET = _BYTE_OFFSET + _NUM_BYTES

VOCAB_FILE_NAME = "vocab.json"
_VOCAB_FORMAT = "eduqg-vocab-v1"

DEFAULT_QG_PREFIX = "generate question: "
DEFAULT_MAX_INPUT_LEN = 512
DEFAULT_MAX_TARGET_LEN = 64


class CorruptionError(ValueError):
    """Span corruption cannot be applied to this sequence."""


@dataclass(frozen=True)
class TokenSequence:
    """Integer-encoded text."""

    ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def length(self) -> int:
        return len(self.ids)

    def truncated(self, max_len: int) -> "TokenSequence":
        return TokenSequence(self.ids[:max_len]) if len(self.ids) > max_len else self


@dataclass(frozen=True)
class DenoisingPair:
    """Corrupted input plus the target that restores the removed spans."""

    input: TokenSequence
    target: TokenSequence


class Tokenizer:
    """Word vocabulary + byte fallback + reserved sentinel ids.

    Id layout: 0..2 pad/eos/unk, 3..258 raw bytes, then words by descending
    corpus frequency, and `num_sentinels` sentinel ids at the top of the range.
    """

    def __init__(self, words: list[str], num_sentinels: int = 100):
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in vocabulary")
        if num_sentinels < 1:
            raise ValueError("need at least one sentinel id")
        self.words = list(words)
        self.num_sentinels = num_sentinels
        self._word_to_id = {w: _WORD_OFFSET + i for i, w in enumerate(self.words)}
        self.vocab_size = _WORD_OFFSET + len(self.words) + num_sentinels
        self._sentinel_base = self.vocab_size - 1  # sentinel k = base - k

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, texts: Iterable[str], max_words: int = 8000, num_sentinels: int = 100) -> "Tokenizer":
        """Build the word vocabulary from corpus frequency (ties broken lexically)."""
        counts = Counter()
        for text in texts:
            counts.update(text.split())
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([w for w, _ in ranked[:max_words]], num_sentinels=num_sentinels)

    def save(self, path: str | Path) -> None:
        payload = {"format": _VOCAB_FORMAT, "num_sentinels": self.num_sentinels, "words": self.words}
        Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != _VOCAB_FORMAT:
            raise ValueError(f"{path}: not a vocabulary file (format={payload.get('format')!r})")
        return cls(payload["words"], num_sentinels=payload["num_sentinels"])

    # -- id classification -------------------------------------------------

    def sentinel_id(self, k: int) -> int:
        if not 0 <= k < self.num_sentinels:
            raise ValueError(f"sentinel index {k} outside budget of {self.num_sentinels}")
        return self._sentinel_base - k

    def is_sentinel(self, token_id: int) -> bool:
        return self.vocab_size - self.num_sentinels <= token_id < self.vocab_size

    def is_special(self, token_id: int) -> bool:
        return token_id in (PAD_ID, EOS_ID, UNK_ID) or self.is_sentinel(token_id)

    # -- encode / decode ----------------------------------------------------

    def encode(self, text: str) -> TokenSequence:
        ids: list[int] = []
        prev_was_bytes = False
        for word in text.split():
            wid = self._word_to_id.get(word)
            if wid is not None:
                ids.append(wid)
                prev_was_bytes = False
            else:
                # Byte fallback; an explicit 0x20 byte keeps adjacent
                # out-of-vocabulary words separable on decode.
                if prev_was_bytes:
                    ids.append(_BYTE_OFFSET + 0x20)
                ids.extend(_BYTE_OFFSET + b for b in word.encode("utf-8"))
                prev_was_bytes = True
        return TokenSequence(tuple(ids))

    def decode(self, seq: TokenSequence | Iterable[int], skip_special: bool = True) -> str:
        ids = seq.ids if isinstance(seq, TokenSequence) else tuple(seq)
        pieces: list[str] = []
        byte_buf = bytearray()

        def flush():
            if byte_buf:
                pieces.append(byte_buf.decode("utf-8", errors="replace"))
                byte_buf.clear()

        for token_id in ids:
            if _BYTE_OFFSET <= token_id < _WORD_OFFSET:
                byte_buf.append(token_id - _BYTE_OFFSET)
                continue
            flush()
            if self.is_special(token_id):
                if not skip_special:
                    pieces.append(self._special_repr(token_id))
                continue
            word_index = token_id - _WORD_OFFSET
            if not 0 <= word_index < len(self.words):
                raise ValueError(f"token id {token_id} outside vocabulary of size {self.vocab_size}")
            pieces.append(self.words[word_index])
        flush()
        return " ".join(p for p in pieces if p)

    def _special_repr(self, token_id: int) -> str:
        if token_id == PAD_ID:
            return "<pad>"
        if token_id == EOS_ID:
            return "</s>"
        if token_id == UNK_ID:
            return "<unk>"
        return f"<sentinel_{self._sentinel_base - token_id}>"


# ---------------------------------------------------------------------------
# span corruption

def corrupt_spans(
    seq: TokenSequence,
    corruption_rate: float,
    mean_span_len: float,
    seed: int | str,
    tokenizer: Tokenizer,
) -> DenoisingPair:
    """Replace random contiguous spans with sentinels; the target restores them.

    Approximately `corruption_rate * len(seq)` tokens are removed in spans
    averaging `mean_span_len` tokens. The input keeps the surviving tokens
    with one fresh sentinel per removed span; the target lists each sentinel
    followed by its span, terminated by end-of-sequence. Pure function of
    (seq, rate, span length, seed).
    """
    n = len(seq)
    if n == 0:
        raise CorruptionError("cannot corrupt an empty sequence")
    if not 0.0 <= corruption_rate < 1.0:
        raise CorruptionError(f"corruption_rate must be in [0, 1), got {corruption_rate}")
    if mean_span_len < 1:
        raise CorruptionError(f"mean_span_len must be >= 1, got {mean_span_len}")

    if corruption_rate == 0.0:
        return DenoisingPair(input=seq, target=TokenSequence((EOS_ID,)))

    num_noise = max(1, round(corruption_rate * n))
    if num_noise >= n:
        raise CorruptionError(
            f"corruption_rate={corruption_rate} would remove all {n} tokens"
        )
    num_survivors = n - num_noise

    num_spans = max(1, round(num_noise / mean_span_len))
    # Each span needs >= 1 noise token and spans must be separated by >= 1
    # surviving token, which caps the span count.
    num_spans = min(num_spans, num_noise, num_survivors + 1)
    if num_spans > tokenizer.num_sentinels:
        raise CorruptionError(
            f"{num_spans} spans exceed the sentinel budget of {tokenizer.num_sentinels}"
        )

    rng = random.Random(f"corrupt:{seed}")
    span_lens = _random_composition(num_noise, num_spans, rng)

    # Distribute survivors into num_spans + 1 gaps. Interior gaps get one
    # mandatory separator token; first and last gaps may be empty.
    free = num_survivors - (num_spans - 1)
    gaps = _random_weak_composition(free, num_spans + 1, rng)
    for i in range(1, num_spans):
        gaps[i] += 1

    input_ids: list[int] = []
    target_ids: list[int] = []
    pos = 0
    for k in range(num_spans):
        input_ids.extend(seq.ids[pos:pos + gaps[k]])
        pos += gaps[k]
        sentinel = tokenizer.sentinel_id(k)
        input_ids.append(sentinel)
        target_ids.append(sentinel)
        target_ids.extend(seq.ids[pos:pos + span_lens[k]])
        pos += span_lens[k]
    input_ids.extend(seq.ids[pos:pos + gaps[num_spans]])
    target_ids.append(EOS_ID)

    return DenoisingPair(input=TokenSequence(tuple(input_ids)),
                         target=TokenSequence(tuple(target_ids)))


def _random_composition(total: int, parts: int, rng: random.Random) -> list[int]:
    """Uniform random split of `total` into `parts` strictly positive integers."""
    if parts == 1:
        return [total]
    cuts = sorted(rng.sample(range(1, total), parts - 1))
    bounds = [0, *cuts, total]
    return [bounds[i + 1] - bounds[i] for i in range(parts)]


def _random_weak_composition(total: int, parts: int, rng: random.Random) -> list[int]:
    """Uniform random split of `total` into `parts` non-negative integers."""
    if total == 0:
        return [0] * parts
    # Stars and bars: choose bar positions among total + parts - 1 slots.
    bars = sorted(rng.sample(range(total + parts - 1), parts - 1))
    bounds = [-1, *bars, total + parts - 1]
    return [bounds[i + 1] - bounds[i] - 1 for i in range(parts)]


def reconstruct(pair: DenoisingPair, tokenizer: Tokenizer) -> TokenSequence:
    """Invert a denoising pair: splice the target spans back into the input.

    Used by tests and sanity checks; `reconstruct(corrupt_spans(s, ...))`
    must equal `s` for every seed and rate.
    """
    spans: dict[int, list[int]] = {}
    current: list[int] | None = None
    for token_id in pair.target.ids:
        if token_id == EOS_ID:
            break
        if tokenizer.is_sentinel(token_id):
            current = spans.setdefault(token_id, [])
        elif current is not None:
            current.append(token_id)
        else:
            raise ValueError("target does not start with a sentinel")
    out: list[int] = []
    for token_id in pair.input.ids:
        if tokenizer.is_sentinel(token_id):
            out.extend(spans.get(token_id, []))
        else:
            out.append(token_id)
    return TokenSequence(tuple(out))


# ---------------------------------------------------------------------------
# supervised QG pairs

def make_qg_pair(
    ex,
    tokenizer: Tokenizer,
    prefix: str = DEFAULT_QG_PREFIX,
    max_input_len: int = DEFAULT_MAX_INPUT_LEN,
    max_target_len: int = DEFAULT_MAX_TARGET_LEN,
) -> tuple[TokenSequence, TokenSequence]:
    """Encode one QG example: prefixed context in, question + EOS out.

    Both sides are hard-truncated at the tail, except that the target always
    keeps its end-of-sequence token.
    """
    input_seq = tokenizer.encode(prefix + ex.context).truncated(max_input_len)
    question_ids = tokenizer.encode(ex.question).ids[: max_target_len - 1]
    target_seq = TokenSequence(tuple(question_ids) + (EOS_ID,))
    return input_seq, target_seq
