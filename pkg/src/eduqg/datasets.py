"""Corpus ingestion: abstracts, reading-comprehension QA, and science exam questions.

Three external schemas are normalized into two canonical JSON Lines formats:
one record per line, UTF-8, with fields

    documents:  id, title, abstract, fields_of_study
    examples:   id, context, question, answer, source

Loaders are pure with respect to their input files and safe to call
concurrently on distinct paths.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)


class CorpusError(Exception):
    """Unrecoverable problem with an input corpus file."""


class SchemaError(CorpusError):
    """Input file does not match the expected schema."""


class Source(str, Enum):
    SQUAD = "squad"
    SCIQ = "sciq"
    OTHER = "other"


class SplitName(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class Document:
    """One scientific abstract plus field-of-study tags."""

    id: str
    abstract: str
    title: str | None = None
    fields_of_study: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.abstract.strip():
            raise ValueError(f"document {self.id!r}: abstract empty after trimming")


@dataclass(frozen=True)
class QGExample:
    """A (context, question[, answer]) triple; unit of fine-tuning and evaluation."""

    id: str
    context: str
    question: str
    answer: str | None = None
    source: Source = Source.OTHER

    def __post_init__(self):
        if not self.context.strip():
            raise ValueError(f"example {self.id!r}: empty context")
        if not self.question.strip():
            raise ValueError(f"example {self.id!r}: empty question")


@dataclass
class DatasetSplit:
    name: SplitName
    examples: list[QGExample]

    def __post_init__(self):
        ids = [ex.id for ex in self.examples]
        if len(ids) != len(set(ids)):
            raise ValueError(f"split {self.name.value}: duplicate example ids")

    def __len__(self) -> int:
        return len(self.examples)


@dataclass
class LoadStats:
    """Mutable counters filled in while a loader's stream is consumed."""

    total_lines: int = 0
    yielded: int = 0
    skipped_missing_abstract: int = 0
    malformed_lines: int = 0
    skipped_empty_support: int = 0
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# abstract corpora

_CORPUS_SCHEMAS = {
    # schema id -> (id field, abstract field, fields-of-study field)
    "s2orc": ("paper_id", "abstract", "mag_field_of_study"),
    "canonical": ("id", "abstract", "fields_of_study"),
}


def load_abstract_corpus(
    path: str | Path,
    schema: str = "s2orc",
    stats: LoadStats | None = None,
) -> Iterator[Document]:
    """Stream Documents from a JSON Lines abstract corpus.

    Records without a usable abstract are counted and skipped. Individual
    malformed JSON lines are skipped with a warning; the load aborts only
    if more than half of all lines were malformed.
    """
    if schema not in _CORPUS_SCHEMAS:
        raise SchemaError(f"unknown corpus schema {schema!r}; expected one of {sorted(_CORPUS_SCHEMAS)}")
    id_key, abstract_key, fields_key = _CORPUS_SCHEMAS[schema]
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")
    if stats is None:
        stats = LoadStats()

    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            stats.total_lines += 1
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                stats.malformed_lines += 1
                logger.warning("%s:%d: malformed JSON line skipped (%s)", path, lineno, exc)
                continue
            abstract = record.get(abstract_key)
            if not isinstance(abstract, str) or not abstract.strip():
                stats.skipped_missing_abstract += 1
                continue
            fields = record.get(fields_key) or []
            if isinstance(fields, str):
                fields = [fields]
            doc_id = record.get(id_key)
            if doc_id is None:
                doc_id = f"{path.stem}-{lineno}"
            stats.yielded += 1
            yield Document(
                id=str(doc_id),
                abstract=abstract,
                title=record.get("title"),
                fields_of_study=frozenset(str(f) for f in fields),
            )

    if stats.total_lines and stats.malformed_lines > stats.total_lines / 2:
        raise CorpusError(
            f"{path}: {stats.malformed_lines}/{stats.total_lines} lines malformed; "
            "refusing to treat this as a JSON Lines corpus"
        )


def filter_by_field(docs: Iterable[Document], fields: Iterable[str]) -> Iterator[Document]:
    """Keep documents whose field-of-study tags intersect `fields`."""
    wanted = frozenset(fields)
    if not wanted:
        raise ValueError("fields must be non-empty")
    for doc in docs:
        if doc.fields_of_study & wanted:
            yield doc


def downsample(docs: Sequence, n: int, seed: int) -> list:
    """Uniform sample of min(n, len(docs)) items without replacement.

    Deterministic for a given (docs, n, seed); the selected items keep
    their original relative order.
    """
    if n < 0:
        raise ValueError(f"sample size must be >= 0, got {n}")
    docs = list(docs)
    if n >= len(docs):
        return docs
    indices = list(range(len(docs)))
    random.Random(f"downsample:{seed}").shuffle(indices)
    keep = sorted(indices[:n])
    return [docs[i] for i in keep]


def reservoir_sample(docs: Iterable, n: int, seed: int) -> list:
    """Single-pass uniform sample for streams too large to materialize.

    Deterministic for a given seed, but draws a different (equally uniform)
    sample than `downsample` on the same input.
    """
    if n < 0:
        raise ValueError(f"sample size must be >= 0, got {n}")
    rng = random.Random(f"reservoir:{seed}")
    reservoir: list = []
    for i, doc in enumerate(docs):
        if i < n:
            reservoir.append(doc)
        else:
            j = rng.randint(0, i)
            if j < n:
                reservoir[j] = doc
    return reservoir


# ---------------------------------------------------------------------------
# QG datasets

def load_squad(path: str | Path, split: SplitName = SplitName.TRAIN) -> DatasetSplit:
    """Load a SQuAD v1.1 JSON file into one QGExample per (context, question)."""
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"dataset file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        payload = json.load(fh)

    examples: list[QGExample] = []
    seen_ids: set[str] = set()
    where = "$"
    try:
        articles = payload["data"]
        for ai, article in enumerate(articles):
            where = f"$.data[{ai}]"
            paragraphs = article["paragraphs"]
            for pi, paragraph in enumerate(paragraphs):
                where = f"$.data[{ai}].paragraphs[{pi}]"
                context = paragraph["context"]
                for qi, qa in enumerate(paragraph["qas"]):
                    where = f"$.data[{ai}].paragraphs[{pi}].qas[{qi}]"
                    question = qa["question"]
                    answers = qa.get("answers", [])
                    answer = answers[0]["text"] if answers else None
                    ex_id = str(qa.get("id", f"squad-{ai}-{pi}-{qi}"))
                    if ex_id in seen_ids:
                        ex_id = f"{ex_id}-dup{len(examples)}"
                    seen_ids.add(ex_id)
                    examples.append(
                        QGExample(id=ex_id, context=context, question=question,
                                  answer=answer, source=Source.SQUAD)
                    )
    except (KeyError, TypeError, IndexError) as exc:
        raise SchemaError(f"{path}: not SQuAD v1.1 JSON (failed at {where}: {exc})") from exc
    return DatasetSplit(name=split, examples=examples)


def load_sciq(
    path: str | Path,
    split: SplitName = SplitName.TRAIN,
    stats: LoadStats | None = None,
) -> DatasetSplit:
    """Load a SciQ-distribution JSON array; the support paragraph becomes the context.

    Records with an empty support are counted and dropped (distractor
    fields are ignored).
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"dataset file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, list):
        raise SchemaError(f"{path}: expected a JSON array of SciQ records")
    if stats is None:
        stats = LoadStats()

    examples: list[QGExample] = []
    for i, record in enumerate(payload):
        if not isinstance(record, dict) or "question" not in record:
            raise SchemaError(f"{path}: record [{i}] is not a SciQ object")
        support = record.get("support") or ""
        if not support.strip():
            stats.skipped_empty_support += 1
            continue
        examples.append(
            QGExample(
                id=f"sciq-{split.value}-{i:05d}",
                context=support,
                question=record["question"],
                answer=record.get("correct_answer"),
                source=Source.SCIQ,
            )
        )
    stats.yielded = len(examples)
    return DatasetSplit(name=split, examples=examples)


# ---------------------------------------------------------------------------
# canonical JSON Lines

def write_documents(docs: Iterable[Document], path: str | Path) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps({
                "id": doc.id,
                "title": doc.title,
                "abstract": doc.abstract,
                "fields_of_study": sorted(doc.fields_of_study),
            }, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_documents(path: str | Path) -> Iterator[Document]:
    yield from load_abstract_corpus(path, schema="canonical")


def write_examples(examples: Iterable[QGExample], path: str | Path) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({
                "id": ex.id,
                "context": ex.context,
                "question": ex.question,
                "answer": ex.answer,
                "source": ex.source.value,
            }, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_examples(path: str | Path, split: SplitName = SplitName.TRAIN) -> DatasetSplit:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"dataset file not found: {path}")
    examples = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                examples.append(QGExample(
                    id=record["id"],
                    context=record["context"],
                    question=record["question"],
                    answer=record.get("answer"),
                    source=Source(record.get("source", "other")),
                ))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad canonical example record ({exc})") from exc
    return DatasetSplit(name=split, examples=examples)
