"""Build the five-model experiment matrix, evaluate on held-out science
questions, and record everything in a run manifest.

Each model is a sequence of training stages applied to the shared base
checkpoint. Stage outputs are cached on disk keyed by (parent, spec,
dataset) fingerprints, so e.g. the "+" variants reuse their parents and a
rerun with an identical config retrains nothing.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..datasets import (
    DatasetSplit,
    SplitName,
    downsample,
    filter_by_field,
    load_abstract_corpus,
    load_sciq,
    load_squad,
)
from ..generation import generate
from ..metrics import (
    MetricReport,
    NgramScorer,
    Scorer,
    SignificanceResult,
    UniformScorer,
    build_report,
    diversity,
    paired_ttest,
    perplexity,
)
from ..model import Checkpoint, init_model, load_base
from ..textproc import Tokenizer
from ..trainer import Stage, finetune, pretrain
from .config import ExperimentConfig, ModelKey

logger = logging.getLogger(__name__)

# One entry per flow of arrows through the methodology diagram:
# (stage, dataset id) pairs applied left to right on top of the base model.
STAGE_PLANS: dict[ModelKey, tuple[tuple[Stage, str], ...]] = {
    ModelKey.LEAF: ((Stage.FINETUNE, "squad"),),
    ModelKey.EDUQG_SMALL: ((Stage.PRETRAIN, "s2orc-small"), (Stage.FINETUNE, "squad")),
    ModelKey.EDUQG_LARGE: ((Stage.PRETRAIN, "s2orc-large"), (Stage.FINETUNE, "squad")),
    ModelKey.LEAF_PLUS: ((Stage.FINETUNE, "squad"), (Stage.FINETUNE, "sciq-train")),
    ModelKey.EDUQG_PLUS: ((Stage.PRETRAIN, "s2orc-large"), (Stage.FINETUNE, "squad"),
                          (Stage.FINETUNE, "sciq-train")),
}

# Candidate -> baseline it must significantly beat to earn its "(*)" marker.
DESIGNATED_BASELINES: dict[ModelKey, ModelKey] = {
    ModelKey.EDUQG_SMALL: ModelKey.LEAF,
    ModelKey.EDUQG_LARGE: ModelKey.LEAF,
    ModelKey.LEAF_PLUS: ModelKey.LEAF,
    ModelKey.EDUQG_PLUS: ModelKey.EDUQG_LARGE,
}

_SIGNIFICANCE_METRICS = (
    ("bleu1", "greater"), ("bleu2", "greater"), ("bleu3", "greater"),
    ("bleu4", "greater"), ("f1", "greater"),
    ("perplexity", "less"), ("diversity", "greater"),
)


@dataclass
class RunManifest:
    config_hash: str
    created_at: str
    scorer_id: str | None
    config: dict
    models: dict[str, dict] = field(default_factory=dict)
    significance: list[dict] = field(default_factory=list)
    partial: bool = False

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, ensure_ascii=False),
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def significance_results(self) -> list[SignificanceResult]:
        return [SignificanceResult(**rec) for rec in self.significance]


def _fingerprint(*parts) -> str:
    digest = hashlib.sha256()
    for part in parts:
        digest.update(json.dumps(part, sort_keys=True, ensure_ascii=False, default=str).encode())
        digest.update(b"\x1e")
    return digest.hexdigest()[:16]


def _split_fingerprint(split: DatasetSplit) -> str:
    return _fingerprint([(ex.id, ex.context, ex.question) for ex in split.examples])


def _docs_fingerprint(docs) -> str:
    return _fingerprint([(d.id, len(d.abstract)) for d in docs])


def build_scorer(config: ExperimentConfig, fit_texts: list[str], corpus_id: str) -> Scorer:
    params = config.scorer
    kind = params.get("kind", "ngram")
    if kind == "uniform":
        return UniformScorer(params.get("vocab_size", 10_000))
    if kind == "ngram":
        scorer = NgramScorer(order=params.get("order", 2), alpha=params.get("alpha", 0.1))
        scorer.fit(fit_texts, corpus_id=corpus_id)
        return scorer
    raise ValueError(f"unknown scorer kind {kind!r}")


def human_baseline(split: DatasetSplit, scorer: Scorer) -> dict[str, float]:
    """Linguistic quality of the reference questions themselves."""
    questions = [ex.question for ex in split.examples]
    if not questions:
        raise ValueError("dataset has no questions")
    return {
        "perplexity": perplexity(questions, scorer),
        "diversity": diversity(questions),
    }


class _MatrixRunner:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.run_dir = Path(config.run_dir)
        self.stage_dir = self.run_dir / "stages"
        self.stage_dir.mkdir(parents=True, exist_ok=True)

    # -- data -----------------------------------------------------------

    def load_data(self) -> None:
        cfg = self.config
        missing = [name for name, p in cfg.datasets.items() if not Path(p).is_file()]
        if missing:
            raise FileNotFoundError(
                f"missing dataset files for {missing!r}; nothing was trained"
            )
        docs = load_abstract_corpus(cfg.datasets["s2orc"],
                                    schema=cfg.datasets.get("s2orc_schema", "s2orc"))
        if cfg.fields_of_study:
            docs = filter_by_field(docs, cfg.fields_of_study)
        self.abstracts = list(docs)
        if not self.abstracts:
            raise ValueError("abstract corpus is empty after filtering")
        self.squad = load_squad(cfg.datasets["squad"], SplitName.TRAIN)
        self.sciq_train = load_sciq(cfg.datasets["sciq_train"], SplitName.TRAIN)
        self.sciq_test = load_sciq(cfg.datasets["sciq_test"], SplitName.TEST)
        self.samples = {
            "s2orc-small": downsample(self.abstracts, cfg.pretrain_small, cfg.seed),
            "s2orc-large": downsample(self.abstracts, cfg.pretrain_large, cfg.seed),
        }
        self.dataset_fingerprints = {
            "squad": _split_fingerprint(self.squad),
            "sciq-train": _split_fingerprint(self.sciq_train),
            "s2orc-small": _docs_fingerprint(self.samples["s2orc-small"]),
            "s2orc-large": _docs_fingerprint(self.samples["s2orc-large"]),
        }

    # -- base model -----------------------------------------------------

    def build_base(self) -> None:
        cfg = self.config
        if cfg.base_checkpoint:
            self.base = load_base(cfg.base_checkpoint)
            weights = Path(cfg.base_checkpoint) / "weights.pt"
            base_id = _fingerprint("base-checkpoint", str(cfg.base_checkpoint),
                                   weights.stat().st_size, weights.stat().st_mtime_ns,
                                   [rec.dataset_id for rec in self.base.provenance])
        else:
            # Vocabulary from training-side text only.
            texts = [d.abstract for d in self.abstracts]
            texts += [ex.context for ex in self.squad.examples]
            texts += [ex.question for ex in self.squad.examples]
            texts += [ex.context for ex in self.sciq_train.examples]
            texts += [ex.question for ex in self.sciq_train.examples]
            texts.append(cfg.qg_prefix)
            tokenizer = Tokenizer.build(texts, max_words=cfg.vocab_words,
                                        num_sentinels=cfg.num_sentinels)
            model_config = cfg.model_config(tokenizer.vocab_size)
            self.base = init_model(model_config, tokenizer, seed=cfg.seed)
            base_id = _fingerprint("base-init", asdict(model_config), cfg.seed,
                                   tokenizer.words[:200], tokenizer.vocab_size)
        self.base_key = base_id

    # -- stages ---------------------------------------------------------

    def _stage_spec(self, stage: Stage, dataset_id: str):
        if stage is Stage.PRETRAIN:
            return self.config.train_spec("pretrain", dataset_id)
        name = "finetune_squad" if dataset_id == "squad" else "finetune_sciq"
        return self.config.train_spec(name, dataset_id)

    def _run_stage(self, parent: Checkpoint, parent_key: str, stage: Stage,
                   dataset_id: str) -> tuple[Checkpoint, str]:
        spec = self._stage_spec(stage, dataset_id)
        spec_dict = {k: (v.value if isinstance(v, Stage) else v) for k, v in vars(spec).items()}
        key = _fingerprint(parent_key, spec_dict, self.dataset_fingerprints[dataset_id])
        out_dir = self.stage_dir / key
        if (out_dir / "config.json").is_file():
            logger.info("stage %s:%s cached at %s", stage.value, dataset_id, out_dir)
            return load_base(out_dir), key

        logger.info("training stage %s:%s -> %s", stage.value, dataset_id, out_dir)
        if stage is Stage.PRETRAIN:
            ckpt, log = pretrain(parent, self.samples[dataset_id], spec)
        else:
            split = self.squad if dataset_id == "squad" else self.sciq_train
            ckpt, log = finetune(parent, split, spec)
        ckpt.save(out_dir)
        log.write_csv(out_dir / "train_log.csv")
        return ckpt, key

    def build_model(self, key: ModelKey) -> tuple[Checkpoint, list[str], str]:
        ckpt, cache_key = self.base, self.base_key
        stage_keys = []
        for stage, dataset_id in STAGE_PLANS[key]:
            ckpt, cache_key = self._run_stage(ckpt, cache_key, stage, dataset_id)
            stage_keys.append(cache_key)
        return ckpt, stage_keys, cache_key

    # -- evaluation -----------------------------------------------------

    def evaluate_model(self, key: ModelKey, ckpt: Checkpoint, scorer: Scorer) -> MetricReport:
        cfg = self.config
        contexts = [ex.context for ex in self.sciq_test.examples]
        references = [ex.question for ex in self.sciq_test.examples]
        ids = [ex.id for ex in self.sciq_test.examples]
        questions = generate(ckpt, contexts, cfg.decode_spec(), prefix=cfg.qg_prefix,
                             max_input_len=cfg.max_input_len)
        generated_dir = self.run_dir / "generated"
        generated_dir.mkdir(exist_ok=True)
        out_path = generated_dir / f"{key.value}.jsonl"
        with out_path.open("w", encoding="utf-8") as fh:
            for ex_id, ctx, q in zip(ids, contexts, questions):
                fh.write(json.dumps({"id": ex_id, "context": ctx, "question": q},
                                    ensure_ascii=False) + "\n")
        report = build_report(key.value, questions, references, ids, scorer=scorer)
        return report


def _pairwise_significance(reports: dict[ModelKey, MetricReport]) -> list[SignificanceResult]:
    results = []
    for candidate, baseline in DESIGNATED_BASELINES.items():
        if candidate not in reports or baseline not in reports:
            continue
        cand, base = reports[candidate], reports[baseline]
        for metric, direction in _SIGNIFICANCE_METRICS:
            if metric not in cand.per_example or metric not in base.per_example:
                continue
            pairs = [
                (b, c) for b, c in zip(base.per_example[metric], cand.per_example[metric])
                if math.isfinite(b) and math.isfinite(c)
            ]
            if len(pairs) < 2:
                continue
            results.append(paired_ttest(
                [b for b, _ in pairs], [c for _, c in pairs], direction=direction,
                metric=metric, baseline_id=baseline.value, candidate_id=candidate.value,
            ))
    return results


def run_matrix(config: ExperimentConfig) -> RunManifest:
    """Train every enabled model along its plan, evaluate, and write reports.

    Missing datasets abort before any training. A failing stage marks the
    manifest partial and the remaining models still run.
    """
    runner = _MatrixRunner(config)
    runner.load_data()
    runner.build_base()

    scorer = build_scorer(config, [d.abstract for d in runner.abstracts],
                          corpus_id=Path(config.datasets["s2orc"]).stem)

    manifest = RunManifest(
        config_hash=config.config_hash(),
        created_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        scorer_id=scorer.scorer_id,
        config=config.canonical_dict(),
    )
    reports_dir = runner.run_dir / "reports"
    reports_dir.mkdir(exist_ok=True)

    reports: dict[ModelKey, MetricReport] = {}
    for key in config.models:
        entry: dict = {"plan": [f"{s.value}:{d}" for s, d in STAGE_PLANS[key]]}
        try:
            ckpt, stage_keys, final_key = runner.build_model(key)
            report = runner.evaluate_model(key, ckpt, scorer)
            report_path = reports_dir / f"{key.value}.json"
            report.save(report_path)
            report.write_per_example_csv(reports_dir / f"{key.value}.per_example.csv")
            reports[key] = report
            entry.update({
                "status": "complete",
                "provenance": [asdict(rec) for rec in ckpt.provenance],
                "provenance_path": ckpt.provenance_path(),
                "stage_keys": stage_keys,
                "checkpoint_dir": str(runner.stage_dir / final_key),
                "report_path": str(report_path),
                "questions_path": str(runner.run_dir / "generated" / f"{key.value}.jsonl"),
            })
        except Exception as exc:  # noqa: BLE001 - stage failures must not kill the matrix
            logger.exception("model %s failed", key.value)
            entry.update({"status": f"failed: {exc}"})
            manifest.partial = True
        manifest.models[key.value] = entry

    manifest.significance = [asdict(r) for r in _pairwise_significance(reports)]
    manifest.save(runner.run_dir / "manifest.json")
    return manifest
