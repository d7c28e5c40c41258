"""Evaluation metrics: BLEU-n, SQuAD-style token F1, perplexity, diversity,
and the one-tailed paired t-test used to mark significant wins.

Corpus BLEU pools clipped n-gram counts (uniform 1/n weights, brevity
penalty); sentence BLEU add-one smooths orders >= 2 so short questions keep
usable per-example vectors. BLEU tokenization is declared in every report:
lowercase, split at whitespace and punctuation boundaries.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from scipy import stats as _scipy_stats

logger = logging.getLogger(__name__)

BLEU_TOKENIZER_DESC = "lowercase; split on whitespace and punctuation boundaries"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)

CORPUS_METRICS = ("bleu1", "bleu2", "bleu3", "bleu4", "f1", "perplexity", "diversity")
LOWER_IS_BETTER = frozenset({"perplexity"})


def metric_tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


# ---------------------------------------------------------------------------
# BLEU

@dataclass
class BleuScores:
    corpus: float
    per_sentence: list[float]
    precisions: list[float]      # pooled modified precisions, orders 1..max_n
    brevity_penalty: float
    hyp_len: int
    ref_len: int


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _clipped(hyp_counts: Counter, ref_counts: Counter) -> int:
    return sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())


def sentence_bleu(hyp_tokens: Sequence[str], ref_tokens: Sequence[str], max_n: int) -> float:
    """Single-pair BLEU with add-one smoothing on orders >= 2."""
    c = len(hyp_tokens)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        hyp_counts = _ngram_counts(hyp_tokens, n)
        matched = _clipped(hyp_counts, _ngram_counts(ref_tokens, n))
        total = sum(hyp_counts.values())
        if n == 1:
            if matched == 0:
                return 0.0
            p = matched / total
        else:
            p = (matched + 1) / (total + 1)
        log_sum += math.log(p) / max_n
    r = len(ref_tokens)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_sum)


def bleu_n(hypotheses: Sequence[str], references: Sequence[str], max_n: int = 4) -> BleuScores:
    """Corpus BLEU over aligned (hypothesis, reference) pairs, plus sentence scores.

    The corpus score is unsmoothed; any pooled precision of zero zeroes the
    whole score.
    """
    if not 1 <= max_n <= 4:
        raise ValueError(f"max_n must be 1..4, got {max_n}")
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ValueError("need at least one (hypothesis, reference) pair")

    hyp_tokens = [metric_tokenize(h) for h in hypotheses]
    ref_tokens = [metric_tokenize(r) for r in references]

    matched = [0] * max_n
    total = [0] * max_n
    for ht, rt in zip(hyp_tokens, ref_tokens):
        for n in range(1, max_n + 1):
            hyp_counts = _ngram_counts(ht, n)
            matched[n - 1] += _clipped(hyp_counts, _ngram_counts(rt, n))
            total[n - 1] += sum(hyp_counts.values())

    precisions = [m / t if t else 0.0 for m, t in zip(matched, total)]
    c = sum(len(t) for t in hyp_tokens)
    r = sum(len(t) for t in ref_tokens)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    if all(p > 0 for p in precisions):
        corpus = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    else:
        corpus = 0.0

    per_sentence = [sentence_bleu(ht, rt, max_n) for ht, rt in zip(hyp_tokens, ref_tokens)]
    return BleuScores(corpus=corpus, per_sentence=per_sentence, precisions=precisions,
                      brevity_penalty=bp, hyp_len=c, ref_len=r)


# ---------------------------------------------------------------------------
# token F1

def normalize_squad(text: str) -> str:
    """Official SQuAD answer normalization: lowercase, strip punctuation,
    drop the articles a/an/the, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def token_f1(prediction: str, gold: str) -> float:
    """Harmonic mean of token-overlap precision/recall, scaled to [0, 100]."""
    pred_tokens = normalize_squad(prediction).split()
    gold_tokens = normalize_squad(gold).split()
    if not pred_tokens and not gold_tokens:
        return 100.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 100.0 * 2 * precision * recall / (precision + recall)


def corpus_f1(predictions: Sequence[str], golds: Sequence[str]) -> tuple[float, list[float]]:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions vs {len(golds)} golds")
    if not predictions:
        raise ValueError("need at least one pair")
    scores = [token_f1(p, g) for p, g in zip(predictions, golds)]
    return sum(scores) / len(scores), scores


# ---------------------------------------------------------------------------
# perplexity

class Scorer(Protocol):
    """Autoregressive scoring model: natural-log probability per token."""

    scorer_id: str

    def token_logprobs(self, text: str) -> list[float]: ...


class UniformScorer:
    """Assigns 1/vocab_size to every token; perplexity equals vocab_size."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size
        self.scorer_id = f"uniform@{vocab_size}"
        self._logp = -math.log(vocab_size)

    def token_logprobs(self, text: str) -> list[float]:
        return [self._logp] * len(metric_tokenize(text))


class NgramScorer:
    """Add-alpha smoothed n-gram language model over metric tokens.

    Small, dependency-free default scorer; absolute perplexities are only
    comparable under the same fitted scorer, so its id names the fit corpus.
    """

    _BOS = "<s>"
    _UNK = "<unk>"

    def __init__(self, order: int = 2, alpha: float = 0.1, corpus_id: str = "unfitted"):
        if order < 1:
            raise ValueError("order must be >= 1")
        if alpha <= 0:
            raise ValueError("alpha must be > 0")
        self.order = order
        self.alpha = alpha
        self.corpus_id = corpus_id
        self._context_counts: Counter = Counter()
        self._gram_counts: Counter = Counter()
        self._vocab: set[str] = set()

    @property
    def scorer_id(self) -> str:
        return f"ngram{self.order}-add{self.alpha}@{self.corpus_id}"

    def fit(self, texts: Iterable[str], corpus_id: str | None = None) -> "NgramScorer":
        for text in texts:
            tokens = metric_tokenize(text)
            self._vocab.update(tokens)
            padded = [self._BOS] * (self.order - 1) + tokens
            for i in range(self.order - 1, len(padded)):
                context = tuple(padded[i - self.order + 1:i])
                self._context_counts[context] += 1
                self._gram_counts[(context, padded[i])] += 1
        if corpus_id is not None:
            self.corpus_id = corpus_id
        return self

    def token_logprobs(self, text: str) -> list[float]:
        tokens = [t if t in self._vocab else self._UNK for t in metric_tokenize(text)]
        padded = [self._BOS] * (self.order - 1) + tokens
        v = len(self._vocab) + 1  # + unknown
        out = []
        for i in range(self.order - 1, len(padded)):
            context = tuple(padded[i - self.order + 1:i])
            num = self._gram_counts[(context, padded[i])] + self.alpha
            den = self._context_counts[context] + self.alpha * v
            out.append(math.log(num / den))
        return out


def _pooled_perplexity(logprob_lists: Sequence[Sequence[float]]) -> float:
    total_tokens = sum(len(lp) for lp in logprob_lists)
    if total_tokens == 0:
        raise ValueError("no tokens to score")
    total_logprob = sum(sum(lp) for lp in logprob_lists)
    return math.exp(-total_logprob / total_tokens)


def perplexity(texts: Sequence[str], scorer: Scorer) -> float:
    """exp of the negative mean token log-likelihood, pooled over all tokens.

    Texts that encode to zero tokens are skipped with a warning.
    """
    if not texts:
        raise ValueError("need at least one text")
    kept = []
    for i, text in enumerate(texts):
        lp = scorer.token_logprobs(text)
        if not lp:
            logger.warning("text %d encodes to zero tokens; skipped from perplexity", i)
            continue
        kept.append(lp)
    return _pooled_perplexity(kept)


def per_text_perplexity(texts: Sequence[str], scorer: Scorer) -> list[float]:
    """Per-text perplexities (empty texts score as NaN)."""
    out = []
    for text in texts:
        lp = scorer.token_logprobs(text)
        out.append(math.exp(-sum(lp) / len(lp)) if lp else float("nan"))
    return out


# ---------------------------------------------------------------------------
# diversity

def _distinct_ratio(token_lists: Sequence[Sequence[str]], n: int) -> float:
    grams = set()
    total = 0
    for tokens in token_lists:
        total += max(0, len(tokens) - n + 1)
        grams.update(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    if total == 0:
        raise ValueError("zero total tokens; cannot compute diversity")
    return len(grams) / total


def diversity(texts: Sequence[str], n: int = 1) -> float:
    """distinct-n: unique n-gram count over total n-gram count, corpus-pooled.

    Tokens are lowercased and whitespace-split.
    """
    if not texts:
        raise ValueError("need at least one text")
    return _distinct_ratio([t.lower().split() for t in texts], n)


def per_text_diversity(texts: Sequence[str], n: int = 1) -> list[float]:
    out = []
    for t in texts:
        tokens = t.lower().split()
        out.append(_distinct_ratio([tokens], n) if len(tokens) >= n else float("nan"))
    return out


# ---------------------------------------------------------------------------
# paired significance test

@dataclass
class SignificanceResult:
    metric: str
    baseline_id: str
    candidate_id: str
    t_statistic: float
    p_value: float
    significant: bool
    direction: str = "greater"
    alpha: float = 0.01
    n: int = 0
    degenerate: bool = False


def paired_ttest(
    baseline: Sequence[float],
    candidate: Sequence[float],
    direction: str = "greater",
    alpha: float = 0.01,
    metric: str = "",
    baseline_id: str = "baseline",
    candidate_id: str = "candidate",
) -> SignificanceResult:
    """One-tailed paired t-test on per-example differences candidate - baseline.

    direction="greater" tests whether the candidate scores higher;
    direction="less" tests lower (used for perplexity). Zero-variance
    differences are never significant: all-zero differences report p = 0.5,
    any other constant difference is flagged degenerate.
    """
    if direction not in ("greater", "less"):
        raise ValueError(f"direction must be 'greater' or 'less', got {direction!r}")
    n = len(baseline)
    if len(candidate) != n:
        raise ValueError(f"vectors must align: {n} baseline vs {len(candidate)} candidate")
    if n < 2:
        raise ValueError("need at least two paired observations")

    diffs = [c - b for b, c in zip(baseline, candidate)]
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    sd = math.sqrt(var)

    if sd == 0.0:
        if mean == 0.0:
            return SignificanceResult(metric=metric, baseline_id=baseline_id,
                                      candidate_id=candidate_id, t_statistic=0.0,
                                      p_value=0.5, significant=False,
                                      direction=direction, alpha=alpha, n=n)
        improving = mean > 0 if direction == "greater" else mean < 0
        return SignificanceResult(metric=metric, baseline_id=baseline_id,
                                  candidate_id=candidate_id,
                                  t_statistic=math.copysign(math.inf, mean),
                                  p_value=0.0 if improving else 1.0,
                                  significant=False, direction=direction,
                                  alpha=alpha, n=n, degenerate=True)

    t = mean / (sd / math.sqrt(n))
    if direction == "greater":
        p = float(_scipy_stats.t.sf(t, n - 1))
    else:
        p = float(_scipy_stats.t.cdf(t, n - 1))
    return SignificanceResult(metric=metric, baseline_id=baseline_id,
                              candidate_id=candidate_id, t_statistic=t,
                              p_value=p, significant=p < alpha,
                              direction=direction, alpha=alpha, n=n)


# ---------------------------------------------------------------------------
# reports

@dataclass
class MetricReport:
    """Per-model corpus scores plus aligned per-example metric vectors."""

    model_id: str
    corpus_scores: dict[str, float]
    per_example: dict[str, list[float]] = field(default_factory=dict)
    example_ids: list[str] = field(default_factory=list)
    scorer_id: str | None = None
    bleu_tokenizer: str = BLEU_TOKENIZER_DESC

    def __post_init__(self):
        for key, value in self.corpus_scores.items():
            if value is not None and not math.isfinite(value):
                raise ValueError(f"{self.model_id}: corpus score {key} is not finite")
        for key, vec in self.per_example.items():
            if len(vec) != len(self.example_ids):
                raise ValueError(
                    f"{self.model_id}: per-example vector {key} has {len(vec)} entries "
                    f"for {len(self.example_ids)} example ids"
                )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MetricReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def write_per_example_csv(self, path: str | Path) -> None:
        keys = sorted(self.per_example)
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["example_id", *keys])
            for i, ex_id in enumerate(self.example_ids):
                writer.writerow([ex_id, *(self.per_example[k][i] for k in keys)])


def build_report(
    model_id: str,
    hypotheses: Sequence[str],
    references: Sequence[str],
    example_ids: Sequence[str],
    scorer: Scorer | None = None,
) -> MetricReport:
    """Evaluate generated questions against references on all metrics."""
    if not (len(hypotheses) == len(references) == len(example_ids)):
        raise ValueError("hypotheses, references, and example_ids must align")

    corpus: dict[str, float] = {}
    per_example: dict[str, list[float]] = {}
    for max_n in (1, 2, 3, 4):
        res = bleu_n(hypotheses, references, max_n)
        corpus[f"bleu{max_n}"] = res.corpus
        per_example[f"bleu{max_n}"] = res.per_sentence
    mean_f1, f1_vec = corpus_f1(hypotheses, references)
    corpus["f1"] = mean_f1
    per_example["f1"] = f1_vec
    corpus["diversity"] = diversity(hypotheses)
    per_example["diversity"] = per_text_diversity(hypotheses)
    scorer_id = None
    if scorer is not None:
        corpus["perplexity"] = perplexity(hypotheses, scorer)
        per_example["perplexity"] = per_text_perplexity(hypotheses, scorer)
        scorer_id = scorer.scorer_id
    return MetricReport(model_id=model_id, corpus_scores=corpus,
                        per_example=per_example, example_ids=list(example_ids),
                        scorer_id=scorer_id)
