"""Command-line interface.

    eduqg ingest --format {s2orc,squad,sciq} --in PATH --out PATH
    eduqg init --text-from PATH --out DIR
    eduqg pretrain --base DIR --docs PATH --spec FILE --out DIR
    eduqg finetune --base DIR --data PATH --spec FILE --out DIR
    eduqg generate --model DIR --in contexts.jsonl --out questions.jsonl
    eduqg run-matrix --config FILE
    eduqg report --manifest DIR --style table2
    eduqg examples --manifest DIR -k 5 --seed 0
    eduqg human-baseline --questions PATH --scorer-corpus PATH
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .datasets import (
    SplitName,
    downsample,
    filter_by_field,
    load_abstract_corpus,
    load_sciq,
    load_squad,
    read_documents,
    read_examples,
    write_documents,
    write_examples,
)
from .generation import DecodeSpec, generate
from .harness import (
    ExperimentConfig,
    RunManifest,
    human_baseline,
    examples_table,
    render_report,
    run_matrix,
)
from .harness.reporting import ReportStyle
from .metrics import NgramScorer
from .model import PRESETS, init_model, load_base
from .textproc import Tokenizer
from .trainer import TrainSpec, finetune, pretrain


def _cmd_ingest(args) -> int:
    if args.format == "s2orc":
        records = load_abstract_corpus(args.infile, schema=args.schema)
        if args.fields:
            records = filter_by_field(records, set(args.fields.split(",")))
        records = list(records)
        if args.sample is not None:
            records = downsample(records, args.sample, args.seed)
        n = write_documents(records, args.outfile)
    else:
        if args.fields:
            raise SystemExit("--fields applies only to --format s2orc")
        split_name = SplitName(args.split)
        if args.format == "squad":
            split = load_squad(args.infile, split_name)
        else:
            split = load_sciq(args.infile, split_name)
        examples = split.examples
        if args.sample is not None:
            examples = downsample(examples, args.sample, args.seed)
        n = write_examples(examples, args.outfile)
    print(f"wrote {n} records to {args.outfile}")
    return 0


def _cmd_init(args) -> int:
    texts: list[str] = []
    for path in args.text_from:
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                if "abstract" in record:
                    texts.append(record["abstract"])
                else:
                    texts.extend(str(record.get(k, "")) for k in ("context", "question"))
    if not texts:
        raise SystemExit("no text found to build a vocabulary from")
    texts.append(args.prefix)
    tokenizer = Tokenizer.build(texts, max_words=args.vocab_words,
                                num_sentinels=args.num_sentinels)
    config = PRESETS[args.preset](tokenizer.vocab_size)
    ckpt = init_model(config, tokenizer, seed=args.seed)
    ckpt.save(args.out)
    print(f"initialized {args.preset} checkpoint (vocab {tokenizer.vocab_size}) -> {args.out}")
    return 0


def _cmd_pretrain(args) -> int:
    ckpt = load_base(args.base)
    spec = TrainSpec.from_file(args.spec)
    docs = read_documents(args.docs) if args.schema == "canonical" else \
        load_abstract_corpus(args.docs, schema=args.schema)
    trained, log = pretrain(ckpt, docs, spec)
    trained.save(args.out)
    log.write_csv(Path(args.out) / "train_log.csv")
    print(f"pretrained for {trained.provenance[-1].steps} steps -> {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    ckpt = load_base(args.base)
    spec = TrainSpec.from_file(args.spec)
    split = read_examples(args.data)
    trained, log = finetune(ckpt, split, spec)
    trained.save(args.out)
    log.write_csv(Path(args.out) / "train_log.csv")
    print(f"fine-tuned on {len(split)} examples -> {args.out}")
    return 0


def _cmd_generate(args) -> int:
    ckpt = load_base(args.model)
    rows = []
    with Path(args.infile).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            if "context" not in record:
                raise SystemExit(f"{args.infile}:{lineno}: record has no 'context' field")
            rows.append((str(record.get("id", lineno)), record["context"]))
    spec = DecodeSpec(strategy=args.strategy, beam_width=args.beam_width,
                      max_len=args.max_len, length_penalty=args.length_penalty)
    questions = generate(ckpt, [ctx for _, ctx in rows], spec, prefix=args.prefix)
    with Path(args.outfile).open("w", encoding="utf-8") as fh:
        for (ex_id, ctx), q in zip(rows, questions):
            fh.write(json.dumps({"id": ex_id, "context": ctx, "question": q},
                                ensure_ascii=False) + "\n")
    print(f"wrote {len(rows)} questions to {args.outfile}")
    return 0


def _cmd_run_matrix(args) -> int:
    config = ExperimentConfig.from_yaml(args.config)
    manifest = run_matrix(config)
    print(f"manifest: {Path(config.run_dir) / 'manifest.json'}")
    for key, entry in manifest.models.items():
        print(f"  {key}: {entry['status']}")
    return 1 if manifest.partial else 0


def _load_manifest(path: str) -> RunManifest:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.is_file():
        raise SystemExit(f"no manifest at {p}")
    return RunManifest.load(p)


def _cmd_report(args) -> int:
    manifest = _load_manifest(args.manifest)
    from .metrics import MetricReport

    reports = []
    for key in manifest.config["models"]:
        entry = manifest.models.get(key, {})
        if entry.get("status") == "complete":
            reports.append(MetricReport.load(entry["report_path"]))
    if not reports:
        raise SystemExit("manifest has no completed models")
    style = ReportStyle(args.style)
    table, csv_text = render_report(reports, manifest.significance_results(), style)
    print(f"scorer: {manifest.scorer_id}")
    print(f"bleu tokenizer: {reports[0].bleu_tokenizer}")
    print(table)
    csv_path = Path(args.csv_out) if args.csv_out else \
        Path(args.manifest) / f"report_{style.value}.csv"
    csv_path.write_text(csv_text, encoding="utf-8")
    print(f"csv: {csv_path}")
    return 0


def _cmd_examples(args) -> int:
    manifest = _load_manifest(args.manifest)
    models = []
    for key in manifest.config["models"]:
        entry = manifest.models.get(key, {})
        if entry.get("status") == "complete":
            models.append((key, load_base(entry["checkpoint_dir"])))
    if not models:
        raise SystemExit("manifest has no completed models")
    sciq_test = load_sciq(manifest.config["datasets"]["sciq_test"], SplitName.TEST)
    contexts = [ex.context for ex in sciq_test.examples]
    decode = DecodeSpec(**manifest.config["decode"]) if manifest.config.get("decode") else DecodeSpec()
    table = examples_table(models, contexts, k=args.k, seed=args.seed, decode=decode,
                           prefix=manifest.config.get("qg_prefix", "generate question: "))
    print(table)
    return 0


def _cmd_human_baseline(args) -> int:
    split_name = SplitName(args.split)
    if args.format == "canonical":
        split = read_examples(args.questions, split_name)
    elif args.format == "squad":
        split = load_squad(args.questions, split_name)
    else:
        split = load_sciq(args.questions, split_name)
    corpus = load_abstract_corpus(args.scorer_corpus, schema=args.scorer_schema)
    scorer = NgramScorer(order=args.order, alpha=args.alpha)
    scorer.fit((d.abstract for d in corpus), corpus_id=Path(args.scorer_corpus).stem)
    values = human_baseline(split, scorer)
    print(json.dumps({"dataset": str(args.questions), "scorer": scorer.scorer_id,
                      "perplexity": values["perplexity"],
                      "diversity": values["diversity"]}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eduqg",
                                     description="educational question generation pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize an external dataset to canonical JSON Lines")
    p.add_argument("--format", required=True, choices=["s2orc", "squad", "sciq"])
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--schema", default="s2orc", choices=["s2orc", "canonical"],
                   help="input schema for abstract corpora")
    p.add_argument("--fields", help="comma-separated field-of-study filter (s2orc only)")
    p.add_argument("--sample", type=int, help="uniform sample size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train", choices=[s.value for s in SplitName])
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("init", help="create a fresh base checkpoint")
    p.add_argument("--text-from", action="append", required=True,
                   help="canonical JSON Lines file(s) supplying vocabulary text")
    p.add_argument("--preset", default="toy", choices=sorted(PRESETS))
    p.add_argument("--vocab-words", type=int, default=8000)
    p.add_argument("--num-sentinels", type=int, default=100)
    p.add_argument("--prefix", default="generate question: ")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_init)

    p = sub.add_parser("pretrain", help="continue pre-training on an abstract corpus")
    p.add_argument("--base", required=True, help="base checkpoint directory")
    p.add_argument("--docs", required=True, help="documents file")
    p.add_argument("--schema", default="canonical", choices=["canonical", "s2orc"])
    p.add_argument("--spec", required=True, help="TrainSpec YAML file")
    p.add_argument("--out", required=True, help="output checkpoint directory")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune on canonical QG examples")
    p.add_argument("--base", required=True)
    p.add_argument("--data", required=True, help="canonical examples JSON Lines")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("generate", help="decode questions for a file of contexts")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--in", dest="infile", required=True,
                   help="JSON Lines with 'id' and 'context' fields")
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--strategy", default="beam", choices=["greedy", "beam"])
    p.add_argument("--beam-width", type=int, default=4)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--length-penalty", type=float, default=1.0)
    p.add_argument("--prefix", default="generate question: ")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("run-matrix", help="train and evaluate the experiment matrix")
    p.add_argument("--config", required=True, help="experiment YAML file")
    p.set_defaults(func=_cmd_run_matrix)

    p = sub.add_parser("report", help="render a ranked metric table from a run manifest")
    p.add_argument("--manifest", required=True, help="run directory or manifest path")
    p.add_argument("--style", default="table2", choices=[s.value for s in ReportStyle])
    p.add_argument("--csv-out")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("examples", help="side-by-side generated questions per model")
    p.add_argument("--manifest", required=True)
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_examples)

    p = sub.add_parser("human-baseline", help="perplexity/diversity of reference questions")
    p.add_argument("--questions", required=True)
    p.add_argument("--format", default="canonical", choices=["canonical", "squad", "sciq"])
    p.add_argument("--split", default="train", choices=[s.value for s in SplitName])
    p.add_argument("--scorer-corpus", required=True, help="abstracts file the scorer is fitted on")
    p.add_argument("--scorer-schema", default="s2orc", choices=["s2orc", "canonical"])
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.1)
    p.set_defaults(func=_cmd_human_baseline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
