"""Autoregressive inference over the copy-augmented distribution.

All decoders re-run the teacher-forced forward on the growing prefix;
at desk scale that is cheaper than maintaining an incremental cache and
keeps a single forward path. Scores are sums of stepwise log(p_final)
over the emitted tokens, including the terminating EOS step for
sequences that finish.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .model import Seq2SeqTransformer
from .topk_copy import (CopyConfig, CopyMode, LOSS_PROB_FLOOR, head_scores,
                        mixture_from_trace, scatter_to_vocab, select_topk)
from .vocab import BOS_ID, EOS_ID, PAD_ID


def step_log_probs(model: Seq2SeqTransformer, copy_cfg: CopyConfig,
                   src_ids: torch.Tensor, prefix: torch.Tensor) -> torch.Tensor:
    """log p_final over the vocabulary for the token following each
    prefix. src_ids: (B, S); prefix: (B, t) starting with BOS. Returns
    (B, V)."""
    trace = model(src_ids, prefix)
    mixture = mixture_from_trace(trace, src_ids, copy_cfg, model)
    return mixture.p_final[:, -1, :].clamp_min(LOSS_PROB_FLOOR).log()


class StepDecoder:
    """Incremental scorer for autoregressive search.

    Encodes the source once; each call scores only the newest position of
    the prefix, which is what the search needs. Head selection and the
    mean encoder state are likewise computed once.
    """

    def __init__(self, model: Seq2SeqTransformer, copy_cfg: CopyConfig,
                 src_ids: torch.Tensor):
        model.eval()
        self.model = model
        self.copy_cfg = copy_cfg
        self.src_ids = src_ids
        self.memory, self.src_pad = model.encode(src_ids)
        if copy_cfg.mode is not CopyMode.OFF:
            scores = head_scores(model.last_cross_attention_output_matrix(),
                                 model.cfg.n_heads)
            heads = (select_topk(scores, copy_cfg.k)
                     if copy_cfg.mode is CopyMode.TOPK
                     else tuple(range(model.cfg.n_heads)))
            self.head_index = torch.as_tensor(heads, device=src_ids.device)
            keep = (~self.src_pad).to(self.memory.dtype).unsqueeze(-1)
            self.mean_enc = ((self.memory * keep).sum(dim=1)
                             / keep.sum(dim=1))  # (B, d)

    def _rows(self, tensor: torch.Tensor, n: int) -> torch.Tensor:
        if tensor.shape[0] == n:
            return tensor
        if tensor.shape[0] == 1:
            return tensor.expand(n, *tensor.shape[1:])
        raise ValueError(f"cannot expand batch {tensor.shape[0]} to {n}")

    def log_probs(self, prefix: torch.Tensor) -> torch.Tensor:
        """log p_final over the vocabulary after each prefix row; (B, V)."""
        n = prefix.shape[0]
        memory = self._rows(self.memory, n)
        src_pad = self._rows(self.src_pad, n)
        states, cross = self.model.decode(prefix, memory, src_pad)
        last = states[:, -1]                       # (B, d)
        p_vocab = torch.softmax(self.model.out_proj(last), dim=-1)
        if self.copy_cfg.mode is CopyMode.OFF:
            return p_vocab.clamp_min(LOSS_PROB_FLOOR).log()
        alpha = cross[:, :, -1, :]                 # (B, H, S)
        p_copy = alpha.index_select(1, self.head_index).mean(dim=1)
        p_copy_vocab = scatter_to_vocab(p_copy, self._rows(self.src_ids, n),
                                        self.model.vocab_size)
        eps = torch.finfo(last.dtype).eps
        p_gen = torch.sigmoid(
            (last * self._rows(self.mean_enc, n)).sum(dim=-1)
        ).clamp(eps, 1.0 - eps).unsqueeze(-1)      # (B, 1)
        p_final = p_gen * p_vocab + (1.0 - p_gen) * p_copy_vocab
        return p_final.clamp_min(LOSS_PROB_FLOOR).log()


@torch.no_grad()
def greedy_batch(model: Seq2SeqTransformer, copy_cfg: CopyConfig,
                 src_ids: torch.Tensor, max_out_len: int
                 ) -> tuple[list[list[int]], list[float], list[bool]]:
    """Greedy decoding of a whole batch: argmax of p_final at each step,
    ties to the lower token id, stopping at EOS or max_out_len generated
    tokens. Returns ids (without BOS/EOS), cumulative log probabilities,
    and whether each sequence stopped at EOS."""
    model.eval()
    batch = src_ids.shape[0]
    decoder = StepDecoder(model, copy_cfg, src_ids)
    prefix = torch.full((batch, 1), BOS_ID, dtype=torch.long,
                        device=src_ids.device)
    finished = np.zeros(batch, dtype=bool)
    hit_eos = np.zeros(batch, dtype=bool)
    outputs: list[list[int]] = [[] for _ in range(batch)]
    scores = np.zeros(batch, dtype=np.float64)

    for _ in range(max_out_len + 1):  # one extra step for a trailing EOS
        if finished.all():
            break
        log_probs = decoder.log_probs(prefix)
        rows = log_probs.to(torch.float64).cpu().numpy()
        next_ids = []
        for b in range(batch):
            tok = PAD_ID
            if not finished[b]:
                tok = int(np.argmax(rows[b]))  # np.argmax takes first max
                if tok == EOS_ID:
                    scores[b] += rows[b][tok]
                    finished[b] = hit_eos[b] = True
                    tok = PAD_ID
                elif len(outputs[b]) >= max_out_len:
                    finished[b] = True  # length stop, token not emitted
                    tok = PAD_ID
                else:
                    outputs[b].append(tok)
                    scores[b] += rows[b][tok]
            next_ids.append(tok)
        prefix = torch.cat(
            [prefix,
             torch.as_tensor(next_ids, device=src_ids.device).unsqueeze(1)],
            dim=1)
    return outputs, [float(s) for s in scores], [bool(f) for f in hit_eos]


def greedy(model: Seq2SeqTransformer, copy_cfg: CopyConfig,
           src_ids: list[int] | torch.Tensor, max_out_len: int
           ) -> tuple[list[int], float]:
    """Single-document greedy decode."""
    src = torch.as_tensor(src_ids, dtype=torch.long)
    if src.dim() == 1:
        src = src.unsqueeze(0)
    outs, scores, _ = greedy_batch(model, copy_cfg, src, max_out_len)
    return outs[0], scores[0]


@dataclass
class _Hypothesis:
    score: float
    order: int  # insertion order; earlier wins ties
    tokens: list[int]
    finished: bool


@dataclass(frozen=True)
class BeamResult:
    tokens: list[int]
    logprob: float     # raw cumulative log p_final over emitted steps
    finished: bool     # stopped at EOS (logprob then includes the EOS step)
    normalized: float  # logprob / length**length_penalty used for ranking


@torch.no_grad()
def beam_search(model: Seq2SeqTransformer, copy_cfg: CopyConfig,
                src_ids: list[int] | torch.Tensor, width: int = 4,
                max_out_len: int = 256, length_penalty: float = 0.0
                ) -> BeamResult:
    """Beam search over p_final.

    The width-1 greedy rollout is always seeded into the candidate pool,
    so width=1 reproduces greedy exactly and widening the beam never
    returns a lower-scoring sequence. Candidates are ranked by
    logprob / length**length_penalty (length counts emitted tokens plus
    the EOS step when present); ties keep the earlier candidate.
    Deterministic for fixed inputs.
    """
    if width < 1:
        raise ValueError(f"beam width must be >= 1, got {width}")
    model.eval()
    src = torch.as_tensor(src_ids, dtype=torch.long)
    if src.dim() == 1:
        src = src.unsqueeze(0)

    def normalized(score: float, length: int) -> float:
        if length_penalty == 0.0:
            return score
        return score / max(1, length) ** length_penalty

    pool: list[_Hypothesis] = []
    counter = 0

    def add(score: float, tokens: list[int], finished: bool,
            to_pool: bool) -> _Hypothesis:
        nonlocal counter
        h = _Hypothesis(score=score, order=counter, tokens=tokens,
                        finished=finished)
        counter += 1
        if to_pool:
            pool.append(h)
        return h

    g_outs, g_scores, g_eos = greedy_batch(model, copy_cfg, src, max_out_len)
    add(g_scores[0], g_outs[0], g_eos[0], to_pool=True)

    decoder = StepDecoder(model, copy_cfg, src)
    beams = [add(0.0, [], False, to_pool=False)]
    for _ in range(max_out_len):
        if not beams:
            break
        t = len(beams[0].tokens)
        prefix = torch.full((len(beams), t + 1), BOS_ID, dtype=torch.long)
        for row, h in enumerate(beams):
            if h.tokens:
                prefix[row, 1:] = torch.as_tensor(h.tokens)
        log_probs = decoder.log_probs(prefix)
        rows = log_probs.to(torch.float64).cpu().numpy()

        flat = np.concatenate([h.score + rows[i] for i, h in enumerate(beams)])
        # Stable sort: ties prefer (earlier hypothesis, lower token id).
        top = np.argsort(-flat, kind="stable")[:min(width, flat.shape[0])]

        vocab = rows.shape[1]
        next_beams: list[_Hypothesis] = []
        for flat_index in top:
            b, tok = divmod(int(flat_index), vocab)
            score = float(flat[flat_index])
            if tok == EOS_ID:
                add(score, list(beams[b].tokens), True, to_pool=True)
            elif len(beams[b].tokens) + 1 >= max_out_len:
                add(score, [*beams[b].tokens, tok], False, to_pool=True)
            else:
                next_beams.append(
                    add(score, [*beams[b].tokens, tok], False, to_pool=False))
        beams = next_beams
    pool.extend(beams)

    def rank_length(h: _Hypothesis) -> int:
        return len(h.tokens) + (1 if h.finished else 0)

    best = min(pool, key=lambda h: (-normalized(h.score, rank_length(h)),
                                    h.order))
    return BeamResult(tokens=list(best.tokens), logprob=best.score,
                      finished=best.finished,
                      normalized=normalized(best.score, rank_length(best)))


@torch.no_grad()
def sequence_log_prob(model: Seq2SeqTransformer, copy_cfg: CopyConfig,
                      src_ids: list[int] | torch.Tensor, tokens: list[int],
                      finished: bool = True) -> float:
    """Recompute the cumulative log p_final of a generated sequence one
    step at a time, independently of the search that produced it."""
    src = torch.as_tensor(src_ids, dtype=torch.long)
    if src.dim() == 1:
        src = src.unsqueeze(0)
    steps = [*tokens, EOS_ID] if finished else list(tokens)
    total = 0.0
    prefix = [BOS_ID]
    for tok in steps:
        log_probs = step_log_probs(
            model, copy_cfg, src,
            torch.as_tensor(prefix, dtype=torch.long).unsqueeze(0))
        total += float(log_probs[0, tok].to(torch.float64))
        prefix.append(tok)
    return total
