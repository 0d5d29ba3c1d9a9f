"""Command-line surface.

Subcommands: build-vocab, build-dict, pretrain, finetune, eval, gradcheck,
annotate.  Exit codes: 0 success, 1 validation failure, 2 unexpected runtime
error, 3 acceptance-check failure (gradcheck above tolerance).
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from ._io import write_atomic_text
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (
    EntityDictionary,
    SynthWorld,
    Vocabulary,
    annotate,
    build_dictionary,
    build_vocab,
    generate_corpus,
    ingest,
    window,
)
from .errors import (
    CheckpointError,
    ConfigError,
    CorpusError,
    EntformerError,
    ValidationError,
)
from .model import ModelConfig, init_params, install_entity_aware_queries
from .model.params import ModelParams
from .numerics import Tape, grad_check, ops
from .pretrain import (
    AdamW,
    add_pretrain_heads,
    build_pretrain_batch,
    evaluate_masked,
    make_masking_plan,
    plan_rng,
    pretrain_loop,
    pretrain_loss,
)
from .runconfig import RunConfig, load_config
from .tasks import (
    FinetuneConfig,
    TaskDataset,
    cloze_forward,
    cloze_loss,
    evaluate_task,
    extractive_forward,
    extractive_loss,
    finetune,
    install_task_head,
    ner_forward,
    ner_loss,
    relation_forward,
    relation_loss,
    synth_generate,
    typing_forward,
    typing_loss,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_CHECK_FAILED = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="run config JSON")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=Path, default=None, help="output directory")


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--attention", choices=("original", "entity_aware"), default=None)
    parser.add_argument("--no-entities", action="store_true", help="drop entity inputs")
    parser.add_argument("--precision", choices=("f32", "f64"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entformer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build the word/entity vocabulary file")
    _add_common(p)
    p.add_argument("--corpus", type=Path, default=None)
    p.add_argument("--max-words", type=int, default=None)
    p.add_argument("--max-entities", type=int, default=None)
    p.add_argument("--vocab-out", type=Path, default=None)

    p = sub.add_parser("build-dict", help="build the name->entity dictionary file")
    _add_common(p)
    p.add_argument("--corpus", type=Path, default=None)
    p.add_argument("--dict-out", type=Path, default=None)

    p = sub.add_parser("pretrain", help="run the joint denoising pretraining loop")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--corpus", type=Path, default=None)
    p.add_argument("--vocab", type=Path, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--mlm-only", action="store_true", help="disable the entity loss term")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")

    p = sub.add_parser("finetune", help="fine-tune a task head from a checkpoint")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--task", choices=("typing", "relation", "ner", "cloze", "extractive"))
    p.add_argument("--init", type=Path, required=True, help="initial checkpoint")
    p.add_argument("--vocab", type=Path, default=None)
    p.add_argument("--train", type=Path, default=None)
    p.add_argument("--dev", type=Path, default=None)
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a fine-tuned checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--task", default=None)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--vocab", type=Path, default=None)
    p.add_argument("--data", type=Path, required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    _add_common(p)
    p.add_argument("--mode", choices=("original", "entity_aware"), default="entity_aware")
    p.add_argument("--samples", type=int, default=4, help="components sampled per tensor")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument(
        "--flip-sign", default=None, metavar="PARAM",
        help="corrupt one analytic gradient to confirm the checker catches it",
    )

    p = sub.add_parser("annotate", help="dictionary-match entity annotations onto QA text")
    _add_common(p)
    p.add_argument("--questions", type=Path, required=True)
    p.add_argument("--passages", type=Path, required=True)
    p.add_argument("--dict", dest="dictionary", type=Path, default=None)
    p.add_argument("--threshold", type=float, default=0.01)

    return parser


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.out is not None:
        config = replace(config, out_dir=str(args.out))
    return config


def _apply_model_flags(config: RunConfig, args) -> RunConfig:
    model = config.model
    if getattr(args, "attention", None):
        model = replace(model, attention_mode=args.attention)
    if getattr(args, "no_entities", False):
        model = replace(model, use_entity_inputs=False)
    if getattr(args, "precision", None):
        model = replace(model, dtype=args.precision)
    return replace(config, model=model)


def _load_sequences(config: RunConfig, corpus_path, vocab: Vocabulary):
    docs = list(ingest(corpus_path))
    return [
        seq for doc in docs for seq in window(doc, vocab, config.data.max_word_length)
    ]


def cmd_build_vocab(args) -> int:
    config = _load_run_config(args)
    corpus_path = args.corpus or config.data.corpus
    out_path = args.vocab_out or (Path(config.out_dir) / Path(config.data.vocab).name)
    docs = list(ingest(corpus_path))
    vocab = build_vocab(
        docs,
        args.max_words or config.data.vocab_max_words,
        args.max_entities or config.data.vocab_max_entities,
    )
    vocab.save(out_path)
    print(f"vocab: {vocab.num_words} words, {vocab.num_entities} entities -> {out_path}")
    return EXIT_OK


def cmd_build_dict(args) -> int:
    config = _load_run_config(args)
    corpus_path = args.corpus or config.data.corpus
    out_path = args.dict_out or (Path(config.out_dir) / Path(config.data.dictionary).name)
    docs = list(ingest(corpus_path))
    dictionary = build_dictionary(docs)
    dictionary.save_tsv(out_path)
    print(f"dictionary: {len(dictionary.names())} names -> {out_path}")
    return EXIT_OK


def _sized_model_config(model: ModelConfig, vocab: Vocabulary) -> ModelConfig:
    return replace(
        model, vocab_words=vocab.num_words, vocab_entities=vocab.num_entities
    ).validate()


def cmd_pretrain(args) -> int:
    config = _apply_model_flags(_load_run_config(args), args)
    pretrain_cfg = config.pretrain
    if args.steps is not None:
        pretrain_cfg = replace(pretrain_cfg, total_steps=args.steps)
    if args.mlm_only:
        pretrain_cfg = replace(pretrain_cfg, entity_loss_enabled=False)
    config = replace(config, pretrain=pretrain_cfg)

    vocab = Vocabulary.load(args.vocab or config.data.vocab)
    sequences = _load_sequences(config, args.corpus or config.data.corpus, vocab)
    out_dir = Path(config.out_dir)

    start_step = 0
    optimizer = None
    if args.resume:
        params, _, meta, opt_arrays = load_checkpoint(args.resume)
        if meta.get("vocab_checksum") not in (None, vocab.checksum()):
            raise ValidationError("checkpoint vocabulary does not match --vocab")
        start_step = int(meta["step"])
        optimizer = AdamW(
            params, beta1=pretrain_cfg.beta1, beta2=pretrain_cfg.beta2,
            eps=pretrain_cfg.adam_eps, weight_decay=pretrain_cfg.weight_decay,
        )
        optimizer.load_state(opt_arrays, meta["optimizer"])
        config = replace(config, model=params.config)
    else:
        model_config = _sized_model_config(config.model, vocab)
        config = replace(config, model=model_config)
        params = init_params(model_config, np.random.default_rng(config.seed))
        add_pretrain_heads(params, np.random.default_rng(
            np.random.SeedSequence([config.seed, 11])
        ))
        metrics_file = out_dir / "metrics.jsonl"
        if metrics_file.exists():
            metrics_file.unlink()

    config.validate()
    metrics, _ = pretrain_loop(
        sequences, params, vocab, pretrain_cfg,
        run_config=config.to_dict(), out_dir=out_dir,
        start_step=start_step, optimizer=optimizer,
    )
    if metrics:
        print(json.dumps(metrics[-1], sort_keys=True))
    print(f"checkpoint: {out_dir / 'last.ckpt'}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    config = _load_run_config(args)
    finetune_cfg = config.finetune
    if args.task:
        finetune_cfg = replace(finetune_cfg, task=args.task)
    if args.steps is not None:
        finetune_cfg = replace(finetune_cfg, steps=args.steps)
    finetune_cfg.validate()

    vocab = Vocabulary.load(args.vocab or config.data.vocab)
    params, _, meta, _ = load_checkpoint(args.init)
    stored = meta.get("vocab_checksum")
    if stored is not None and stored != vocab.checksum():
        raise ValidationError(
            "vocabulary mismatch: the checkpoint was built with a different vocab file"
        )

    attention = args.attention or "entity_aware"
    if attention == "entity_aware":
        install_entity_aware_queries(params)
    else:
        params.config = replace(params.config, attention_mode="original")
    if args.no_entities:
        params.config = replace(params.config, use_entity_inputs=False)
    if args.precision and args.precision != params.config.dtype:
        params = params.astype(args.precision)

    train = TaskDataset.load(args.train or config.data.train)
    dev = TaskDataset.load(args.dev or config.data.dev)
    result = finetune(params, train, dev, vocab, finetune_cfg)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / f"{finetune_cfg.task}.ckpt"
    save_checkpoint(
        ckpt_path, params, config.to_dict(),
        {
            "task": finetune_cfg.task,
            "labels": train.labels,
            "step": result.best_step,
            "vocab_checksum": vocab.checksum(),
        },
    )
    history_lines = [json.dumps(record, sort_keys=True) for record in result.history]
    write_atomic_text(out_dir / f"{finetune_cfg.task}_history.jsonl",
                      "\n".join(history_lines) + "\n")
    print(json.dumps({"best_metric": result.best_metric, "best_step": result.best_step,
                      "stopped_early": result.stopped_early}, sort_keys=True))
    print(f"checkpoint: {ckpt_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_run_config(args)
    vocab = Vocabulary.load(args.vocab or config.data.vocab)
    params, stored_config, meta, _ = load_checkpoint(args.checkpoint)
    stored = meta.get("vocab_checksum")
    if stored is not None and stored != vocab.checksum():
        raise ValidationError(
            "vocabulary mismatch: the checkpoint was built with a different vocab file"
        )
    task = args.task or meta.get("task")
    if not task:
        raise ValidationError("no task recorded in the checkpoint; pass --task")
    dataset = TaskDataset.load(args.data)
    if dataset.variant != task:
        raise ValidationError(f"dataset variant {dataset.variant!r} does not match task {task!r}")
    finetune_cfg = replace(config.finetune, task=task)

    scores, predictions = evaluate_task(params, dataset, vocab, finetune_cfg)
    out_dir = Path(config.out_dir)
    lines = [json.dumps(record, sort_keys=True) for record in predictions]
    write_atomic_text(out_dir / f"{task}_predictions.jsonl", "\n".join(lines) + "\n")
    if scores is None:
        payload = {"note": "predictions only: gold labels missing from the dataset"}
        print("gold labels missing: wrote predictions only", file=sys.stderr)
    else:
        payload = scores
    write_atomic_text(out_dir / f"{task}_metrics.json",
                      json.dumps(payload, sort_keys=True) + "\n")
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def build_gradcheck_fixture(mode: str):
    """Tiny f64 model plus one input per objective, covering every head."""
    world = SynthWorld(num_entities=6, title_width=2)
    docs = generate_corpus(4, seed=13, world=world)
    vocab = build_vocab(docs, max_words=40, max_entities=10)
    config = ModelConfig(
        hidden_size=8, num_layers=2, num_heads=2, head_dim=4, entity_emb_size=6,
        vocab_words=vocab.num_words, vocab_entities=vocab.num_entities,
        max_positions=64, dtype="f64", attention_mode=mode,
    ).validate()
    params = init_params(config, np.random.default_rng(21))
    add_pretrain_heads(params, np.random.default_rng(22))
    head_rng = np.random.default_rng(23)
    datasets = {
        variant: synth_generate(variant, 31, 1, world)
        for variant in ("typing", "relation", "ner", "cloze", "extractive")
    }
    for variant, dataset in datasets.items():
        install_task_head(params, variant, dataset.labels, head_rng)

    sequences = [seq for doc in docs[:2] for seq in window(doc, vocab, 32)]
    plans = [
        make_masking_plan(seq, plan_rng(41, 0, i), 0.5, 0.5, vocab)
        for i, seq in enumerate(sequences)
    ]
    batch = build_pretrain_batch(sequences, plans, vocab, "f64")

    def loss():
        total = pretrain_loss(batch, params, plans).loss
        example = datasets["typing"].examples[0]
        total = ops.add(
            ops.reshape(total, (1,)),
            ops.reshape(
                typing_loss(typing_forward(example, params, vocab),
                            example.gold_types, datasets["typing"].labels),
                (1,),
            ),
        )
        example = datasets["relation"].examples[0]
        total = ops.add(total, relation_loss(
            relation_forward(example, params, vocab),
            example.gold_relation, datasets["relation"].labels,
        ))
        example = datasets["ner"].examples[0]
        total = ops.add(total, ops.reshape(ner_loss(
            ner_forward(example, params, vocab, max_span_len=3),
            example.gold_spans, datasets["ner"].labels,
        ), (1,)))
        example = datasets["cloze"].examples[0]
        total = ops.add(total, ops.reshape(cloze_loss(
            cloze_forward(example, params, vocab), example.answer_indices
        ), (1,)))
        example = datasets["extractive"].examples[0]
        total = ops.add(total, extractive_loss(
            extractive_forward(example, params, vocab), example.answer_span
        ))
        return ops.sum_all(total)

    return params, loss


def cmd_gradcheck(args) -> int:
    params, loss = build_gradcheck_fixture(args.mode)
    transform = None
    if args.flip_sign:
        if args.flip_sign not in params.tensors:
            raise ValidationError(f"unknown parameter {args.flip_sign!r} for --flip-sign")

        def transform(name, grad):
            return -grad if name == args.flip_sign else grad

    report = grad_check(
        loss, params.tensors, h=1e-5, tol=args.tol,
        max_samples_per_param=args.samples,
        rng=np.random.default_rng(0),
        grad_transform=transform,
    )
    for line in report.format_lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {line_no}: invalid JSON: {exc}") from None
    return records


def cmd_annotate(args) -> int:
    config = _load_run_config(args)
    dict_path = args.dictionary or config.data.dictionary
    dictionary = EntityDictionary.load_tsv(dict_path)
    questions = _read_jsonl(args.questions)
    passages = _read_jsonl(args.passages)
    if len(questions) != len(passages):
        raise ValidationError(
            f"{len(questions)} questions but {len(passages)} passages (files pair by line)"
        )
    out_lines = []
    for index, (q, p) in enumerate(zip(questions, passages), start=1):
        if q.get("id") != p.get("id"):
            raise ValidationError(f"entry {index}: question id {q.get('id')!r} != passage id {p.get('id')!r}")
        for record, field_name in ((q, "questions"), (p, "passages")):
            if "words" not in record or not isinstance(record["words"], list):
                raise CorpusError(f"{field_name} entry {index}: missing 'words' list")
        page_links = p.get("page_links", {})
        scoped = dictionary.scoped_to(
            {name: (titles if isinstance(titles, list) else [titles])
             for name, titles in page_links.items()}
        )
        q_anns, p_anns = annotate(q["words"], p["words"], scoped, args.threshold)
        out_lines.append(json.dumps({
            "id": q.get("id"),
            "question_entities": [
                {"title": a.title, "start": a.start, "end": a.end} for a in q_anns
            ],
            "passage_entities": [
                {"title": a.title, "start": a.start, "end": a.end} for a in p_anns
            ],
        }, sort_keys=True))
    out_dir = Path(config.out_dir)
    out_path = out_dir / "annotations.jsonl"
    write_atomic_text(out_path, "\n".join(out_lines) + ("\n" if out_lines else ""))
    total = sum(
        len(json.loads(line)["question_entities"]) + len(json.loads(line)["passage_entities"])
        for line in out_lines
    )
    print(f"annotations: {total} spans over {len(out_lines)} examples -> {out_path}")
    return EXIT_OK


_COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "build-dict": cmd_build_dict,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "annotate": cmd_annotate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValidationError, CorpusError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EntformerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
