"""Decode questions from a checkpoint given raw contexts.

Both strategies are deterministic. Beam search keeps `beam_width` live
hypotheses ranked by cumulative log-probability; hypotheses that emit the
end-of-sequence token retire to a finalist pool (at most `beam_width` of
them) and the best finalist under the length-normalized score is returned.
Sentinel, padding, and unknown ids are never emitted.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import torch
import torch.nn.functional as F

from .model import Checkpoint, pad_batch
from .textproc import (
    DEFAULT_MAX_INPUT_LEN,
    DEFAULT_QG_PREFIX,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    TokenSequence,
    Tokenizer,
)


class Strategy(str, Enum):
    GREEDY = "greedy"
    BEAM = "beam"


@dataclass
class DecodeSpec:
    strategy: Strategy = Strategy.BEAM
    beam_width: int = 4
    max_len: int = 64
    length_penalty: float = 1.0

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.strategy is Strategy.GREEDY and self.beam_width != 1:
            raise ValueError("greedy decoding implies beam_width=1")


@dataclass(frozen=True)
class Hypothesis:
    """A (possibly finished) decoded sequence; ids include EOS when finished."""

    ids: tuple[int, ...]
    logprob_sum: float
    finished: bool

    def score(self, length_penalty: float) -> float:
        return self.logprob_sum / (len(self.ids) ** length_penalty)


def _banned_ids(tokenizer: Tokenizer) -> list[int]:
    banned = [PAD_ID, UNK_ID]
    banned.extend(tokenizer.sentinel_id(k) for k in range(tokenizer.num_sentinels))
    return banned


def _next_token_logprobs(module, memory, src_pad_mask, prefixes: torch.Tensor) -> torch.Tensor:
    """Log-probabilities of the token following each prefix row.

    `prefixes` is (batch, t) of already-generated ids; the decoder input is
    the shifted prefix plus the start token, so the last position predicts
    token t.
    """
    batch = prefixes.shape[0]
    start = torch.full((batch, 1), PAD_ID, dtype=torch.long)
    decoder_in = torch.cat([start, prefixes], dim=1)
    logits = module.decode(decoder_in, memory, src_pad_mask)
    return F.log_softmax(logits[:, -1, :], dim=-1)


def greedy_decode(ckpt: Checkpoint, sources: Sequence[TokenSequence], max_len: int) -> list[list[int]]:
    """Batched argmax decoding until EOS or max_len; EOS is stripped."""
    module = ckpt.module
    module.eval()
    banned = _banned_ids(ckpt.tokenizer)
    src_ids, src_mask = pad_batch(sources)
    with torch.no_grad():
        memory = module.encode(src_ids, src_mask)
        n = len(sources)
        prefixes = torch.zeros(n, 0, dtype=torch.long)
        alive = torch.ones(n, dtype=torch.bool)
        outputs: list[list[int]] = [[] for _ in range(n)]
        for _ in range(max_len):
            logprobs = _next_token_logprobs(module, memory, src_mask, prefixes)
            logprobs[:, banned] = float("-inf")
            next_ids = logprobs.argmax(dim=-1)
            for i in range(n):
                if not alive[i]:
                    continue
                token = int(next_ids[i])
                if token == EOS_ID:
                    alive[i] = False
                else:
                    outputs[i].append(token)
            prefixes = torch.cat([prefixes, next_ids.unsqueeze(1)], dim=1)
            if not bool(alive.any()):
                break
    return outputs


def beam_search(ckpt: Checkpoint, source: TokenSequence, spec: DecodeSpec) -> list[Hypothesis]:
    """All finalists for one source, best normalized score first."""
    module = ckpt.module
    module.eval()
    width = spec.beam_width
    banned = _banned_ids(ckpt.tokenizer)
    src_ids, src_mask = pad_batch([source])

    with torch.no_grad():
        memory_one = module.encode(src_ids, src_mask)
        live: list[Hypothesis] = [Hypothesis(ids=(), logprob_sum=0.0, finished=False)]
        finalists: list[Hypothesis] = []
        for _ in range(spec.max_len):
            if not live:
                break
            prefixes = torch.tensor([h.ids for h in live], dtype=torch.long)
            memory = memory_one.expand(len(live), -1, -1)
            mask = src_mask.expand(len(live), -1)
            logprobs = _next_token_logprobs(module, memory, mask, prefixes)
            logprobs[:, banned] = float("-inf")
            k = min(width, logprobs.shape[1])
            top_lp, top_ids = torch.topk(logprobs, k, dim=-1)

            candidates: list[tuple[float, int, int]] = []
            for hyp_index, hyp in enumerate(live):
                for j in range(k):
                    lp = float(top_lp[hyp_index, j])
                    if lp == float("-inf"):
                        continue
                    candidates.append((hyp.logprob_sum + lp, hyp_index, int(top_ids[hyp_index, j])))
            # deterministic order: score desc, then parent, then token id
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

            next_live: list[Hypothesis] = []
            for total, hyp_index, token in candidates[:width]:
                parent = live[hyp_index]
                if token == EOS_ID:
                    finalists.append(Hypothesis(ids=parent.ids + (EOS_ID,),
                                                logprob_sum=total, finished=True))
                else:
                    next_live.append(Hypothesis(ids=parent.ids + (token,),
                                                logprob_sum=total, finished=False))
            live = next_live
        finalists.extend(live)  # length-capped, unfinished

    finalists.sort(key=lambda h: (-h.score(spec.length_penalty), h.ids))
    return finalists[:width] if len(finalists) > width else finalists


def generate(
    ckpt: Checkpoint,
    contexts: Sequence[str],
    spec: DecodeSpec | None = None,
    prefix: str = DEFAULT_QG_PREFIX,
    max_input_len: int = DEFAULT_MAX_INPUT_LEN,
) -> list[str]:
    """One generated question per context."""
    if not contexts:
        raise ValueError("contexts must be non-empty")
    spec = spec or DecodeSpec()
    tokenizer = ckpt.tokenizer
    sources = [tokenizer.encode(prefix + ctx).truncated(max_input_len) for ctx in contexts]

    if spec.strategy is Strategy.GREEDY:
        decoded = greedy_decode(ckpt, sources, spec.max_len)
    else:
        decoded = []
        for source in sources:
            finalists = beam_search(ckpt, source, spec)
            best = finalists[0].ids if finalists else ()
            decoded.append([t for t in best if t != EOS_ID])

    questions = []
    for ids in decoded:
        text = tokenizer.decode(ids, skip_special=True)
        questions.append(" ".join(text.split()))
    return questions
