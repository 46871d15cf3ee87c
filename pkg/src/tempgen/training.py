"""Optimization loop: teacher-forced negative log likelihood over the
copy-augmented distribution, decoupled-weight-decay Adam, greedy dev
decoding each epoch with best-checkpoint retention.

The loop is deterministic for a fixed seed and thread count: the seed
drives initialization, batch order, and any dropout draws.
"""

from __future__ import annotations

import json
import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .codec import CodecConfig, encode_targets
from .corpus import Dataset, Example, TaskKind
from .model import (ModelConfig, Seq2SeqTransformer, check_finite_gradients,
                    init_model, save_checkpoint)
from .reports import evaluate_predictions
from .topk_copy import CopyConfig, CopyMode, mixture_from_trace, nll_loss
from .vocab import BOS_ID, EOS_ID, PAD_ID, Vocab
from . import decoding

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    weight_decay: float = 1e-5
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0
    clip_norm: float = 1.0
    checkpoint_every: int = 0  # extra per-epoch checkpoints; 0 disables
    copy: CopyConfig = field(default_factory=lambda: CopyConfig(CopyMode.OFF))
    codec: CodecConfig = field(default_factory=lambda: CodecConfig(role_order=()))

    def __post_init__(self) -> None:
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise TrainingError("rates must be nonnegative")
        if self.batch_size < 1:
            raise TrainingError("batch size must be positive")
        if self.epochs < 0:
            raise TrainingError("epochs must be nonnegative")


def truncate_or_skip(src_ids: list[int], tgt_ids: list[int],
                     max_src_len: int, max_tgt_len: int
                     ) -> tuple[list[int], list[int], bool] | None:
    """Fit one example into the model's length budget.

    The source keeps its first max_src_len ids. The target must fit
    whole, including its end-of-sequence step; otherwise the example is
    skipped (None). The flag reports whether truncation happened.
    """
    if len(tgt_ids) + 1 > max_tgt_len:
        return None
    if len(src_ids) > max_src_len:
        return src_ids[:max_src_len], tgt_ids, True
    return src_ids, tgt_ids, False


@dataclass
class EncodedExample:
    doc_id: str
    src_ids: list[int]
    tgt_ids: list[int]  # content ids without BOS/EOS


@dataclass
class PreparedData:
    examples: list[EncodedExample]
    skipped: int
    truncated: int


def prepare_examples(dataset: Dataset, vocab: Vocab, codec_cfg: CodecConfig,
                     model_cfg: ModelConfig) -> PreparedData:
    out: list[EncodedExample] = []
    skipped = truncated = 0
    for example in dataset:
        src = vocab.encode(example.document.tokens)
        target_tokens = encode_targets(example.document, example.templates,
                                       dataset.task, codec_cfg)
        tgt = vocab.encode(target_tokens)
        fitted = truncate_or_skip(src, tgt, model_cfg.max_src_len,
                                  model_cfg.max_tgt_len)
        if fitted is None:
            skipped += 1
            continue
        src, tgt, was_truncated = fitted
        truncated += was_truncated
        out.append(EncodedExample(doc_id=example.doc_id, src_ids=src,
                                  tgt_ids=tgt))
    return PreparedData(examples=out, skipped=skipped, truncated=truncated)


def collate(batch: list[EncodedExample]
            ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pad a batch. Returns (src, decoder input, decoder labels); the
    decoder input is BOS + target, labels are target + EOS."""
    s = max(len(ex.src_ids) for ex in batch)
    t = max(len(ex.tgt_ids) for ex in batch) + 1
    src = torch.full((len(batch), s), PAD_ID, dtype=torch.long)
    tgt_in = torch.full((len(batch), t), PAD_ID, dtype=torch.long)
    tgt_out = torch.full((len(batch), t), PAD_ID, dtype=torch.long)
    for i, ex in enumerate(batch):
        src[i, :len(ex.src_ids)] = torch.as_tensor(ex.src_ids)
        tgt_in[i, 0] = BOS_ID
        tgt_in[i, 1:1 + len(ex.tgt_ids)] = torch.as_tensor(ex.tgt_ids)
        tgt_out[i, :len(ex.tgt_ids)] = torch.as_tensor(ex.tgt_ids)
        tgt_out[i, len(ex.tgt_ids)] = EOS_ID
    return src, tgt_in, tgt_out


def compute_batch_loss(model: Seq2SeqTransformer, copy_cfg: CopyConfig,
                       src: torch.Tensor, tgt_in: torch.Tensor,
                       tgt_out: torch.Tensor) -> tuple[torch.Tensor, int]:
    """The single loss path shared by training and verification."""
    trace = model(src, tgt_in)
    mixture = mixture_from_trace(trace, src, copy_cfg, model)
    return nll_loss(mixture.p_final, tgt_out, PAD_ID)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    dev_metric: float
    skipped: int
    truncated: int
    wallclock_s: float

    def as_record(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "dev_metric": self.dev_metric, "skipped": self.skipped,
                "truncated": self.truncated, "wallclock_s": self.wallclock_s}


@dataclass
class TrainResult:
    model: Seq2SeqTransformer
    metrics: list[EpochMetrics]
    best_epoch: int
    best_metric: float
    best_checkpoint: Path | None
    skipped: int
    truncated: int
    floored_tokens: int


def dev_metric(model: Seq2SeqTransformer, copy_cfg: CopyConfig,
               dev: Dataset, vocab: Vocab, codec_cfg: CodecConfig,
               max_out_len: int, decode_batch: int = 64) -> float:
    """Greedy-decode the dev set and score it with the task metric."""
    predictions: dict[str, list[str]] = {}
    examples = list(dev)
    for lo in range(0, len(examples), decode_batch):
        chunk = examples[lo:lo + decode_batch]
        s = max(len(ex.document.tokens) for ex in chunk)
        s = min(s, model.cfg.max_src_len)
        src = torch.full((len(chunk), s), PAD_ID, dtype=torch.long)
        for i, ex in enumerate(chunk):
            ids = vocab.encode(ex.document.tokens)[:model.cfg.max_src_len]
            src[i, :len(ids)] = torch.as_tensor(ids)
        outs, _, _ = decoding.greedy_batch(model, copy_cfg, src, max_out_len)
        for ex, ids in zip(chunk, outs):
            predictions[ex.doc_id] = vocab.decode(ids)
    report = evaluate_predictions(dev, predictions, codec_cfg)
    return report.headline_f1


def train(train_ds: Dataset, dev_ds: Dataset, vocab: Vocab,
          model_cfg: ModelConfig, cfg: TrainConfig,
          out_dir: str | Path | None = None) -> TrainResult:
    """Run the full loop; returns the best model by dev metric.

    When out_dir is given, writes metrics.jsonl (one record per epoch),
    checkpoint-best.ckpt and checkpoint-last.ckpt, plus
    checkpoint-epochN.ckpt every checkpoint_every epochs.
    """
    torch.manual_seed(cfg.seed)
    model = init_model(model_cfg, len(vocab), cfg.seed)
    if cfg.copy.mode is CopyMode.TOPK and cfg.copy.k > model_cfg.n_heads:
        raise TrainingError(
            f"k={cfg.copy.k} exceeds head count {model_cfg.n_heads}")
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate,
                                  weight_decay=cfg.weight_decay)

    prepared = prepare_examples(train_ds, vocab, cfg.codec, model_cfg)
    if not prepared.examples:
        raise TrainingError("no trainable examples after length filtering")
    if prepared.skipped:
        logger.warning("skipped %d examples with over-length targets",
                       prepared.skipped)

    out_path = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_path / "metrics.jsonl", "w", encoding="utf-8")

    copy_cfg = cfg.copy
    max_out_len = model_cfg.max_tgt_len - 1
    rng = random.Random(cfg.seed)
    order = list(range(len(prepared.examples)))
    metrics: list[EpochMetrics] = []
    best_metric = float("-inf")
    best_epoch = -1
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    floored_total = 0

    try:
        for epoch in range(1, cfg.epochs + 1):
            started = time.perf_counter()
            model.train()
            rng.shuffle(order)
            nll_sum = 0.0
            token_count = 0
            for lo in range(0, len(order), cfg.batch_size):
                batch = [prepared.examples[i]
                         for i in order[lo:lo + cfg.batch_size]]
                src, tgt_in, tgt_out = collate(batch)
                loss, floored = compute_batch_loss(model, copy_cfg, src,
                                                   tgt_in, tgt_out)
                floored_total += floored
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"training diverged at epoch {epoch}: loss "
                        f"{loss.item()}; last good checkpoint retained")
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                check_finite_gradients(model)
                if cfg.clip_norm > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(),
                                                   cfg.clip_norm)
                optimizer.step()
                n_tokens = int(tgt_out.ne(PAD_ID).sum())
                nll_sum += float(loss.detach()) * n_tokens
                token_count += n_tokens

            model.eval()
            with torch.no_grad():
                metric = dev_metric(model, copy_cfg, dev_ds, vocab, cfg.codec,
                                    max_out_len)
            record = EpochMetrics(
                epoch=epoch,
                train_loss=nll_sum / max(1, token_count),
                dev_metric=metric,
                skipped=prepared.skipped,
                truncated=prepared.truncated,
                wallclock_s=time.perf_counter() - started,
            )
            metrics.append(record)
            logger.info("epoch %d: loss %.4f dev %.4f", epoch,
                        record.train_loss, metric)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(record.as_record()) + "\n")
                metrics_fh.flush()

            if metric > best_metric:
                best_metric = metric
                best_epoch = epoch
                best_state = {k: v.detach().clone()
                              for k, v in model.state_dict().items()}
                if out_path is not None:
                    save_checkpoint(out_path / "checkpoint-best.ckpt", model,
                                    _copy_header(cfg.copy))
            if out_path is not None:
                save_checkpoint(out_path / "checkpoint-last.ckpt", model,
                                _copy_header(cfg.copy))
                if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                    save_checkpoint(out_path / f"checkpoint-epoch{epoch}.ckpt",
                                    model, _copy_header(cfg.copy))
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if floored_total:
        logger.warning("probability floor engaged on %d gold tokens",
                       floored_total)
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(
        model=model,
        metrics=metrics,
        best_epoch=best_epoch,
        best_metric=best_metric,
        best_checkpoint=(out_path / "checkpoint-best.ckpt"
                         if out_path is not None and best_epoch > 0 else None),
        skipped=prepared.skipped,
        truncated=prepared.truncated,
        floored_tokens=floored_total,
    )


def _copy_header(copy_cfg: CopyConfig) -> dict:
    return {"mode": copy_cfg.mode.value,
            **({"k": copy_cfg.k} if copy_cfg.k is not None else {})}
