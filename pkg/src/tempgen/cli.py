"""Command-line surface: synth | encode | train | generate | evaluate |
inspect-heads | sweep-k | significance.

Every command resolves its configuration from defaults, an optional
--config JSON file, and flags (flags win), then echoes the fully
resolved configuration next to its outputs so a run can be repeated
exactly. Exit codes: 1 usage, 2 invalid configuration, 3 invalid data,
4 runtime failure; failures print a machine-parsable ``error_code=N``
line to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import runconfig
from .codec import encode_targets, render_text
from .corpus import DataError, TaskKind, load_dataset, save_dataset, synth_generate
from .decoding import beam_search, greedy_batch
from .evaluation import paired_bootstrap
from .model import load_checkpoint
from .reports import (evaluate_predictions, format_report_table,
                      read_predictions, write_predictions)
from .runconfig import ConfigError
from .topk_copy import CopyConfig, CopyMode, head_scores, select_topk
from .training import train
from .vocab import PAD_ID, Vocab, build_vocab

logger = logging.getLogger(__name__)


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _config_phase(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, ValueError) as exc:
        raise CliError(2, str(exc)) from exc


def _data_phase(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (DataError, OSError, ValueError) as exc:
        raise CliError(3, str(exc)) from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        print("error_code=1", file=sys.stderr)
        print(f"usage error: {message}", file=sys.stderr)
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _add_common(p: argparse.ArgumentParser, task: bool = True) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    if task:
        p.add_argument("--task", choices=[k.value for k in TaskKind],
                       default=None)


def _add_copy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--copy", choices=[m.value for m in CopyMode], default=None)
    p.add_argument("--k", type=int, default=None)


def _add_codec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--slot-names", choices=["semantic", "numeric"],
                   default=None)
    p.add_argument("--slot-layout", choices=["per-entity", "merged"],
                   default=None)
    p.add_argument("--mention-policy", choices=["first", "random"],
                   default=None)
    p.add_argument("--mention-seed", type=int, default=None)
    p.add_argument("--merged-separator", default=None)
    p.add_argument("--role-order", default=None,
                   help="comma-separated canonical slot order")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d-model", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--enc-layers", type=int, default=None)
    p.add_argument("--dec-layers", type=int, default=None)
    p.add_argument("--d-ff", type=int, default=None)
    p.add_argument("--max-src", type=int, default=None)
    p.add_argument("--max-tgt", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)


def _add_decode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--max-out", type=int, default=None)
    p.add_argument("--length-penalty", type=float, default=None)


def _set(overrides: dict, path: tuple[str, ...], value) -> None:
    if value is None:
        return
    node = overrides
    for key in path[:-1]:
        node = node.setdefault(key, {})
    node[path[-1]] = value


def _collect_overrides(args: argparse.Namespace) -> dict:
    o: dict = {}
    get = lambda name: getattr(args, name, None)
    _set(o, ("seed",), get("seed"))
    _set(o, ("task",), get("task"))
    _set(o, ("copy", "mode"), get("copy"))
    _set(o, ("copy", "k"), get("k"))
    _set(o, ("codec", "slot_names"), get("slot_names"))
    _set(o, ("codec", "slot_layout"), get("slot_layout"))
    _set(o, ("codec", "mention_policy"), get("mention_policy"))
    _set(o, ("codec", "mention_seed"), get("mention_seed"))
    _set(o, ("codec", "merged_separator"), get("merged_separator"))
    if get("role_order") is not None:
        _set(o, ("codec", "role_order"), args.role_order.split(","))
    _set(o, ("model", "d_model"), get("d_model"))
    _set(o, ("model", "n_heads"), get("heads"))
    _set(o, ("model", "n_enc_layers"), get("enc_layers"))
    _set(o, ("model", "n_dec_layers"), get("dec_layers"))
    _set(o, ("model", "d_ff"), get("d_ff"))
    _set(o, ("model", "max_src_len"), get("max_src"))
    _set(o, ("model", "max_tgt_len"), get("max_tgt"))
    _set(o, ("model", "dropout"), get("dropout"))
    _set(o, ("train", "learning_rate"), get("lr"))
    _set(o, ("train", "weight_decay"), get("weight_decay"))
    _set(o, ("train", "batch_size"), get("batch_size"))
    _set(o, ("train", "epochs"), get("epochs"))
    _set(o, ("train", "clip_norm"), get("clip_norm"))
    _set(o, ("train", "checkpoint_every"), get("checkpoint_every"))
    _set(o, ("decode", "beam"), get("beam"))
    _set(o, ("decode", "max_out"), get("max_out"))
    _set(o, ("decode", "length_penalty"), get("length_penalty"))
    _set(o, ("synth", "n_docs"), get("n_docs"))
    if get("doc_len") is not None:
        _set(o, ("synth", "doc_len"), list(args.doc_len))
    if get("roles") is not None:
        _set(o, ("synth", "roles"), args.roles.split(","))
    if get("entities_per_slot") is not None:
        _set(o, ("synth", "entities_per_slot"), list(args.entities_per_slot))
    if get("mention_repeat") is not None:
        _set(o, ("synth", "mention_repeat"), list(args.mention_repeat))
    if get("mention_len") is not None:
        _set(o, ("synth", "mention_len"), list(args.mention_len))
    _set(o, ("synth", "distractor_ratio"), get("distractor_ratio"))
    if get("relation_count") is not None:
        _set(o, ("synth", "relation_count"), list(args.relation_count))
    return o


def _resolve(args: argparse.Namespace) -> dict:
    return _config_phase(runconfig.resolve, args.config,
                         _collect_overrides(args))


def _copy_from_resolved(resolved: dict, n_heads: int) -> CopyConfig:
    return _config_phase(runconfig.copy_config, resolved, n_heads)


def _echo(resolved: dict, target: str | Path, command: str) -> None:
    runconfig.write_echo(target, resolved, command)


# ---------------------------------------------------------------------------
# Commands

def cmd_synth(args) -> int:
    resolved = _resolve(args)
    task = _config_phase(runconfig.task_from, resolved)
    cfg = _config_phase(runconfig.synth_config, resolved, task)
    dataset = _config_phase(synth_generate, cfg)
    save_dataset(dataset, args.out)
    _echo(resolved, args.out, "synth")
    print(f"wrote {len(dataset)} documents to {args.out}")
    return 0


def cmd_encode(args) -> int:
    resolved = _resolve(args)
    task = _config_phase(runconfig.task_from, resolved)
    dataset = _data_phase(load_dataset, args.data, task)
    codec_cfg = _config_phase(runconfig.codec_config, resolved,
                              dataset.slot_names())
    resolved["codec"]["role_order"] = list(codec_cfg.role_order)
    lines = []
    for example in dataset:
        tokens = _config_phase(encode_targets, example.document,
                               example.templates, task, codec_cfg)
        lines.append(f"{example.doc_id}\t{render_text(tokens)}")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    _echo(resolved, args.out, "encode")
    print(f"wrote {len(lines)} target sequences to {args.out}")
    return 0


def cmd_train(args) -> int:
    resolved = _resolve(args)
    task = _config_phase(runconfig.task_from, resolved)
    train_ds = _data_phase(load_dataset, args.data, task)
    dev_ds = _data_phase(load_dataset, args.dev, task)

    roles = tuple(sorted(set(train_ds.slot_names()) | set(dev_ds.slot_names())))
    model_cfg = _config_phase(runconfig.model_config, resolved)
    copy_cfg = _copy_from_resolved(resolved, model_cfg.n_heads)
    codec_cfg = _config_phase(runconfig.codec_config, resolved, roles)
    train_cfg = _config_phase(runconfig.train_config, resolved, copy_cfg,
                              codec_cfg)
    resolved["codec"]["role_order"] = list(codec_cfg.role_order)
    resolved["copy"]["mode"] = copy_cfg.mode.value
    resolved["copy"]["k"] = copy_cfg.k

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.vocab:
        vocab = _data_phase(Vocab.load, args.vocab)
    else:
        vocab = build_vocab(train_ds,
                            extra_tokens=codec_cfg.target_side_tokens())
        vocab.save(out_dir / "vocab.txt")
    _echo(resolved, out_dir, "train")

    result = train(train_ds, dev_ds, vocab, model_cfg, train_cfg, out_dir)
    print(f"best dev metric {result.best_metric:.4f} at epoch "
          f"{result.best_epoch}; checkpoints in {out_dir}")
    return 0


def _load_model_and_copy(args, resolved: dict):
    model, model_cfg, copy_header = _data_phase(load_checkpoint,
                                                args.checkpoint)
    # Priority for the copy setup: flags > config file > checkpoint header.
    header_layer = {"copy": copy_header} if copy_header else {}
    base = runconfig._deep_merge(runconfig.DEFAULTS, header_layer)
    if args.config:
        base = runconfig._deep_merge(
            base, _config_phase(runconfig.load_config_file, args.config))
    merged = runconfig._deep_merge(base, _collect_overrides(args))
    resolved["copy"] = merged["copy"]
    copy_cfg = _copy_from_resolved(resolved, model_cfg.n_heads)
    resolved["copy"] = {"mode": copy_cfg.mode.value, "k": copy_cfg.k}
    return model, model_cfg, copy_cfg


def _generate_rows(model, copy_cfg, dataset, vocab, beam: int,
                   max_out: int, length_penalty: float) -> list:
    max_out = min(max_out, model.cfg.max_tgt_len - 1)
    rows = []
    if beam == 1:
        examples = list(dataset)
        for lo in range(0, len(examples), 64):
            chunk = examples[lo:lo + 64]
            width = min(model.cfg.max_src_len,
                        max(len(ex.document.tokens) for ex in chunk))
            src = torch.full((len(chunk), width), PAD_ID, dtype=torch.long)
            for i, ex in enumerate(chunk):
                ids = vocab.encode(ex.document.tokens)[:model.cfg.max_src_len]
                src[i, :len(ids)] = torch.as_tensor(ids)
            outs, scores, _ = greedy_batch(model, copy_cfg, src, max_out)
            for ex, ids, score in zip(chunk, outs, scores):
                rows.append((ex.doc_id, vocab.decode(ids), score))
        return rows
    for example in dataset:
        ids = vocab.encode(example.document.tokens)[:model.cfg.max_src_len]
        result = beam_search(model, copy_cfg, ids, width=beam,
                             max_out_len=max_out,
                             length_penalty=length_penalty)
        rows.append((example.doc_id, vocab.decode(result.tokens),
                     result.logprob))
    return rows


def cmd_generate(args) -> int:
    resolved = _resolve(args)
    task = _config_phase(runconfig.task_from, resolved)
    dataset = _data_phase(load_dataset, args.data, task)
    vocab = _data_phase(Vocab.load, args.vocab)
    model, _, copy_cfg = _load_model_and_copy(args, resolved)
    decode = resolved["decode"]
    beam = int(decode["beam"])
    if beam < 1:
        raise CliError(2, f"beam width must be >= 1, got {beam}")
    rows = _generate_rows(model, copy_cfg, dataset, vocab, beam,
                          int(decode["max_out"]),
                          float(decode["length_penalty"]))
    write_predictions(args.out, rows)
    _echo(resolved, args.out, "generate")
    print(f"wrote {len(rows)} predictions to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    resolved = _resolve(args)
    task = _config_phase(runconfig.task_from, resolved)
    dataset = _data_phase(load_dataset, args.data, task)
    predictions = _data_phase(read_predictions, args.pred)
    codec_cfg = _config_phase(runconfig.codec_config, resolved,
                              dataset.slot_names())
    resolved["codec"]["role_order"] = list(codec_cfg.role_order)
    report = _data_phase(evaluate_predictions, dataset, predictions, codec_cfg)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    table = format_report_table(report)
    with open(out.with_suffix(".txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    _echo(resolved, out, "evaluate")
    print(table, end="")
    return 0


def cmd_inspect_heads(args) -> int:
    resolved = _resolve(args)
    model, model_cfg, copy_cfg = _load_model_and_copy(args, resolved)
    scores = head_scores(model.last_cross_attention_output_matrix(),
                         model_cfg.n_heads)
    if copy_cfg.mode is CopyMode.TOPK:
        selected = set(select_topk(scores, copy_cfg.k))
    elif copy_cfg.mode is CopyMode.NAIVE:
        selected = set(range(model_cfg.n_heads))
    else:
        selected = set()
    lines = [f"{i}\t{float(scores[i]):.6f}\t{1 if i in selected else 0}"
             for i in range(model_cfg.n_heads)]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _echo(resolved, args.out, "inspect-heads")
    print(text, end="")
    return 0


def _sweep_copy_cfg(k: int) -> CopyConfig:
    if k == 0:
        return CopyConfig(mode=CopyMode.OFF)
    return CopyConfig(mode=CopyMode.TOPK, k=k)


def cmd_sweep_k(args) -> int:
    resolved = _resolve(args)
    task = _config_phase(runconfig.task_from, resolved)
    decode = resolved["decode"]
    beam = int(decode["beam"])

    if bool(args.checkpoint) == bool(args.train_data):
        raise CliError(2, "sweep-k needs exactly one of --checkpoint "
                          "(evaluate-only sweep) or --train-data/--dev-data "
                          "(train one model per k)")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results: list[tuple[int, float]] = []

    if args.checkpoint:
        if not args.vocab:
            raise CliError(2, "evaluate-only sweep needs --vocab")
        dataset = _data_phase(load_dataset, args.data, task)
        vocab = _data_phase(Vocab.load, args.vocab)
        model, model_cfg, _ = _data_phase(load_checkpoint, args.checkpoint)
        grid = _parse_grid(args.grid, model_cfg.n_heads)
        codec_cfg = _config_phase(runconfig.codec_config, resolved,
                                  dataset.slot_names())
        resolved["codec"]["role_order"] = list(codec_cfg.role_order)
        for k in grid:
            copy_cfg = _config_phase(_sweep_copy_cfg, k)
            if k > model_cfg.n_heads:
                raise CliError(2, f"grid k={k} exceeds {model_cfg.n_heads} heads")
            rows = _generate_rows(model, copy_cfg, dataset, vocab, beam,
                                  int(decode["max_out"]),
                                  float(decode["length_penalty"]))
            report = evaluate_predictions(dataset, {d: t for d, t, _ in rows},
                                          codec_cfg)
            results.append((k, report.headline_f1))
    else:
        if not args.dev_data or not args.data:
            raise CliError(2, "training sweep needs --train-data, --dev-data "
                              "and --data (held-out evaluation set)")
        train_ds = _data_phase(load_dataset, args.train_data, task)
        dev_ds = _data_phase(load_dataset, args.dev_data, task)
        test_ds = _data_phase(load_dataset, args.data, task)
        roles = tuple(sorted(set(train_ds.slot_names())
                             | set(dev_ds.slot_names())
                             | set(test_ds.slot_names())))
        model_cfg = _config_phase(runconfig.model_config, resolved)
        grid = _parse_grid(args.grid, model_cfg.n_heads)
        codec_cfg = _config_phase(runconfig.codec_config, resolved, roles)
        resolved["codec"]["role_order"] = list(codec_cfg.role_order)
        vocab = build_vocab(train_ds,
                            extra_tokens=codec_cfg.target_side_tokens())
        vocab.save(out_dir / "vocab.txt")
        for k in grid:
            copy_cfg = _config_phase(_sweep_copy_cfg, k)
            if k > model_cfg.n_heads:
                raise CliError(2, f"grid k={k} exceeds {model_cfg.n_heads} heads")
            train_cfg = _config_phase(runconfig.train_config, resolved,
                                      copy_cfg, codec_cfg)
            run_dir = out_dir / f"k{k}"
            result = train(train_ds, dev_ds, vocab, model_cfg, train_cfg,
                           run_dir)
            rows = _generate_rows(result.model, copy_cfg, test_ds, vocab,
                                  beam, int(decode["max_out"]),
                                  float(decode["length_penalty"]))
            report = evaluate_predictions(test_ds, {d: t for d, t, _ in rows},
                                          codec_cfg)
            results.append((k, report.headline_f1))

    table = "k\tf1\n" + "".join(f"{k}\t{f1:.6f}\n" for k, f1 in results)
    with open(out_dir / "sweep.tsv", "w", encoding="utf-8") as fh:
        fh.write(table)
    with open(out_dir / "sweep.json", "w", encoding="utf-8") as fh:
        json.dump({"task": task.value,
                   "results": [{"k": k, "f1": f1} for k, f1 in results]},
                  fh, indent=2)
        fh.write("\n")
    _echo(resolved, out_dir, "sweep-k")
    print(table, end="")
    return 0


def _parse_grid(raw: str | None, n_heads: int) -> list[int]:
    if raw is None:
        grid = sorted({0, *range(2, n_heads + 1, 2), n_heads})
    else:
        try:
            grid = sorted({int(part) for part in raw.split(",") if part != ""})
        except ValueError:
            raise CliError(2, f"bad --grid {raw!r}; expected comma-separated "
                              f"integers") from None
    if any(k < 0 for k in grid):
        raise CliError(2, "grid values must be >= 0")
    return grid


def cmd_significance(args) -> int:
    resolved = _resolve(args)
    task = _config_phase(runconfig.task_from, resolved)
    dataset = _data_phase(load_dataset, args.data, task)
    pred_a = _data_phase(read_predictions, args.pred_a)
    pred_b = _data_phase(read_predictions, args.pred_b)
    codec_cfg = _config_phase(runconfig.codec_config, resolved,
                              dataset.slot_names())
    resolved["codec"]["role_order"] = list(codec_cfg.role_order)
    report_a = _data_phase(evaluate_predictions, dataset, pred_a, codec_cfg)
    report_b = _data_phase(evaluate_predictions, dataset, pred_b, codec_cfg)
    result = paired_bootstrap(report_a.per_doc_f1, report_b.per_doc_f1,
                              resamples=args.resamples,
                              seed=int(resolved["seed"]))
    payload = {
        "task": task.value,
        "metric_a": report_a.headline_f1,
        "metric_b": report_b.headline_f1,
        "delta": result.delta,
        "p_value": result.p_value,
        "resamples": result.resamples,
        "seed": result.seed,
    }
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _echo(resolved, args.out, "significance")
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="tempgen",
                     description="template-generation information extraction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-docs", type=int, default=None)
    p.add_argument("--doc-len", type=int, nargs=2, default=None,
                   metavar=("LO", "HI"))
    p.add_argument("--roles", default=None, help="comma-separated inventory")
    p.add_argument("--entities-per-slot", type=int, nargs=2, default=None,
                   metavar=("LO", "HI"))
    p.add_argument("--mention-repeat", type=int, nargs=2, default=None,
                   metavar=("LO", "HI"))
    p.add_argument("--mention-len", type=int, nargs=2, default=None,
                   metavar=("LO", "HI"))
    p.add_argument("--distractor-ratio", type=float, default=None)
    p.add_argument("--relation-count", type=int, nargs=2, default=None,
                   metavar=("LO", "HI"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="render gold targets for inspection")
    _add_common(p)
    _add_codec_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    _add_codec_flags(p)
    _add_copy_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True, help="training dataset")
    p.add_argument("--dev", required=True, help="development dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--vocab", default=None,
                   help="existing vocabulary file; built when omitted")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode predictions")
    _add_common(p)
    _add_copy_flags(p)
    _add_decode_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score predictions against gold")
    _add_common(p)
    _add_codec_flags(p)
    p.add_argument("--data", required=True, help="gold dataset")
    p.add_argument("--pred", required=True, help="prediction JSONL")
    p.add_argument("--out", required=True, help="JSON report path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-heads",
                       help="cross-attention head scores and selection")
    _add_common(p, task=False)
    _add_copy_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_inspect_heads)

    p = sub.add_parser("sweep-k", help="evaluate or train across a k grid")
    _add_common(p)
    _add_codec_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    _add_decode_flags(p)
    p.add_argument("--data", required=True,
                   help="evaluation dataset (held-out)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--grid", default=None,
                   help="comma-separated k values; 0 disables copying")
    p.add_argument("--checkpoint", default=None,
                   help="evaluate-only sweep over this checkpoint")
    p.add_argument("--vocab", default=None)
    p.add_argument("--train-data", default=None)
    p.add_argument("--dev-data", default=None)
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("significance",
                       help="paired bootstrap between two prediction files")
    _add_common(p)
    _add_codec_flags(p)
    p.add_argument("--data", required=True, help="gold dataset")
    p.add_argument("--pred-a", required=True)
    p.add_argument("--pred-b", required=True)
    p.add_argument("--resamples", type=int, default=10000)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_significance)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _config_phase(runconfig.configure_threads)
        return args.func(args)
    except CliError as exc:
        print(f"error_code={exc.code}", file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # anything unplanned is a runtime failure
        print("error_code=4", file=sys.stderr)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
