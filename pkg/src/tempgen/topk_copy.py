"""Cross-attention guided copying.

Head importance is a function of the cross-attention output projection
alone: reshape it to (heads, d_v, d_model) and sum absolute values per
head. The copy distribution at each decoding step is the mean of the
last decoder layer's cross-attention probabilities over the k
highest-scoring heads (all heads in naive mode), scattered from source
positions onto the vocabulary. The final next-token distribution mixes
the generation and copy distributions with a gate

    p_gen = sigmoid(mean_encoder_state . decoder_state)

so that p_final = p_gen * p_vocab + (1 - p_gen) * p_copy.

Selection of the top-k head set is discrete and recomputed from the
current weights; gradients flow through the attention probabilities and
the gate, not through the selection itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch

from .model import ForwardTrace, ModelError, Seq2SeqTransformer
from .vocab import PAD_ID

LOSS_PROB_FLOOR = 1e-12


class CopyMode(Enum):
    TOPK = "topk"
    NAIVE = "naive"
    OFF = "off"


class CopyError(ValueError):
    pass


@dataclass(frozen=True)
class CopyConfig:
    mode: CopyMode = CopyMode.TOPK
    k: int | None = None

    def __post_init__(self) -> None:
        if self.mode is CopyMode.TOPK:
            if self.k is None or self.k < 1:
                raise CopyError("top-k copy needs k >= 1")
        elif self.k is not None:
            raise CopyError(f"k is only meaningful in top-k mode, got mode "
                            f"{self.mode.value} with k={self.k}")

    @classmethod
    def for_heads(cls, mode: CopyMode, n_heads: int, k: int | None = None
                  ) -> "CopyConfig":
        """Fill in the default k for a head count: the grid-searched value
        10 for 12 heads, scaled to h - 2 elsewhere."""
        if mode is not CopyMode.TOPK:
            return cls(mode=mode)
        if k is None:
            k = 10 if n_heads == 12 else max(1, n_heads - 2)
        return cls(mode=mode, k=k)


def head_scores(w_o: torch.Tensor, n_heads: int) -> torch.Tensor:
    """Per-head importance of an output projection given in
    (heads*d_v, d_model) orientation: sum of |entries| over each head's
    d_v-row block."""
    rows, d_model = w_o.shape
    if rows % n_heads != 0:
        raise CopyError(
            f"output projection with {rows} rows does not split into "
            f"{n_heads} heads")
    return w_o.reshape(n_heads, rows // n_heads, d_model).abs().sum(dim=(1, 2))


def select_topk(scores: torch.Tensor, k: int) -> tuple[int, ...]:
    """Indices of the k highest-scoring heads, ascending. Ties prefer the
    lower head index."""
    h = scores.shape[0]
    if not 1 <= k <= h:
        raise CopyError(f"k={k} out of range for {h} heads")
    values = scores.detach()  # the selection is not differentiated through
    order = sorted(range(h), key=lambda i: (-float(values[i]), i))
    return tuple(sorted(order[:k]))


def copy_distribution(alpha: torch.Tensor, cfg: CopyConfig,
                      scores: torch.Tensor) -> torch.Tensor:
    """Mean attention over the selected heads.

    alpha holds per-head source distributions: (H, S) for a single step,
    or batched with the head axis third from the right, e.g. (B, H, T, S).
    Top-k mode averages the selected heads; naive averages all of them.
    Both run through the same reduction, so k equal to the head count
    reproduces naive output bit for bit.
    """
    if cfg.mode is CopyMode.OFF:
        raise CopyError("copy distribution undefined when copying is off")
    head_dim = -2 if alpha.dim() == 2 else -3
    h = alpha.shape[head_dim]
    if cfg.mode is CopyMode.NAIVE:
        heads = tuple(range(h))
    else:
        heads = select_topk(scores, cfg.k)
    index = torch.as_tensor(heads, device=alpha.device)
    return alpha.index_select(head_dim, index).mean(dim=head_dim)


def scatter_to_vocab(p_copy: torch.Tensor, src_ids: torch.Tensor,
                     vocab_size: int) -> torch.Tensor:
    """Aggregate positional copy mass onto vocabulary entries.

    p_copy: (..., S); src_ids: broadcastable integer ids of shape (..., S)
    or (B, S) against a (B, T, S) distribution. Entry w of the result
    accumulates the mass of every position holding token w; total mass is
    preserved.
    """
    if src_ids.dim() == p_copy.dim() - 1:
        src_ids = src_ids.unsqueeze(-2).expand(p_copy.shape)
    out = p_copy.new_zeros(*p_copy.shape[:-1], vocab_size)
    out.scatter_add_(-1, src_ids, p_copy)
    return out


def generation_prob(encoder_states: torch.Tensor, src_pad_mask: torch.Tensor,
                    decoder_states: torch.Tensor) -> torch.Tensor:
    """Mixing gate per decoding step: sigmoid of the dot product between
    the mean encoder state over unmasked source positions and the decoder
    state. Clamped away from exact 0 and 1 so the mixture stays proper."""
    keep = (~src_pad_mask).to(encoder_states.dtype).unsqueeze(-1)  # (B, S, 1)
    mean_enc = (encoder_states * keep).sum(dim=-2) / keep.sum(dim=-2)
    dot = torch.einsum("btd,bd->bt", decoder_states, mean_enc)
    eps = torch.finfo(encoder_states.dtype).eps
    return torch.sigmoid(dot).clamp(eps, 1.0 - eps)


def final_distribution(p_vocab: torch.Tensor, p_copy_vocab: torch.Tensor,
                       p_gen: torch.Tensor) -> torch.Tensor:
    gate = p_gen.unsqueeze(-1)
    return gate * p_vocab + (1.0 - gate) * p_copy_vocab


@dataclass
class MixtureOutputs:
    """Stepwise distributions of one teacher-forced pass."""
    p_final: torch.Tensor                 # (B, T, V)
    p_copy: torch.Tensor | None = None    # (B, T, S)
    p_copy_vocab: torch.Tensor | None = None
    p_gen: torch.Tensor | None = None     # (B, T)
    head_scores: torch.Tensor | None = None
    selected_heads: tuple[int, ...] | None = None


def mixture_from_trace(trace: ForwardTrace, src_ids: torch.Tensor,
                       cfg: CopyConfig, model: Seq2SeqTransformer
                       ) -> MixtureOutputs:
    """Compute the final distributions for a forward trace. With copying
    off this is exactly the bare vocabulary distribution."""
    if cfg.mode is CopyMode.OFF:
        return MixtureOutputs(p_final=trace.p_vocab)
    scores = head_scores(model.last_cross_attention_output_matrix(),
                         model.cfg.n_heads)
    if cfg.mode is CopyMode.TOPK and cfg.k > model.cfg.n_heads:
        raise CopyError(f"k={cfg.k} exceeds head count {model.cfg.n_heads}")
    p_copy = copy_distribution(trace.cross_attention, cfg, scores)
    p_copy_vocab = scatter_to_vocab(p_copy, src_ids, model.vocab_size)
    p_gen = generation_prob(trace.encoder_states, trace.src_pad_mask,
                            trace.decoder_states)
    p_final = final_distribution(trace.p_vocab, p_copy_vocab, p_gen)
    selected = (select_topk(scores, cfg.k) if cfg.mode is CopyMode.TOPK
                else tuple(range(model.cfg.n_heads)))
    return MixtureOutputs(p_final=p_final, p_copy=p_copy,
                          p_copy_vocab=p_copy_vocab, p_gen=p_gen,
                          head_scores=scores, selected_heads=selected)


def nll_loss(p_final: torch.Tensor, targets: torch.Tensor,
             pad_id: int = PAD_ID) -> tuple[torch.Tensor, int]:
    """Mean negative log likelihood per non-padding target token.

    Probabilities below the floor are clamped before the log; the count
    of clamped gold tokens is returned so callers can surface it.
    """
    gold = p_final.gather(-1, targets.unsqueeze(-1)).squeeze(-1)  # (B, T)
    keep = targets.ne(pad_id)
    if not keep.any():
        raise CopyError("loss undefined on a batch with no unpadded targets")
    floored = int((gold[keep] < LOSS_PROB_FLOOR).sum())
    loss = -(gold.clamp_min(LOSS_PROB_FLOOR).log() * keep).sum() / keep.sum()
    return loss, floored
