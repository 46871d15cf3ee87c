"""Encoder-decoder transformer with exact attention math, exposed
cross-attention probabilities, and a finite-difference gradient checker.

The decoder's last cross-attention layer publishes its post-softmax,
pre-dropout probabilities in the forward trace; the copy mechanism reads
them from there. Sinusoidal positions and pre-norm residual blocks keep
small-scale training stable. Forward runs in float32; gradient checks
run the same code in float64.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .vocab import PAD_ID


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 8
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    max_src_len: int = 512
    max_tgt_len: int = 256
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ModelError(
                f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.max_src_len <= 0 or self.max_tgt_len <= 0:
            raise ModelError("maximum sequence lengths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout must lie in [0, 1)")
        for name in ("d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ff"):
            if getattr(self, name) <= 0:
                raise ModelError(f"{name} must be positive")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
              mask: torch.Tensor | None = None
              ) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product attention.

    q: (..., Lq, d), k/v: (..., Lk, d). mask is boolean, broadcastable to
    (..., Lq, Lk), True at positions that must receive zero probability.
    Returns (values, probabilities); each probability row sums to 1 over
    the unmasked positions and is exactly 0 on masked ones.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ModelError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ModelError(f"key length {k.shape[-2]} != value length {v.shape[-2]}")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores.masked_fill(mask, float("-inf"))
    probs = torch.softmax(scores, dim=-1)
    return probs @ v, probs


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.w_q = nn.Linear(d_model, d_model)
        self.w_k = nn.Linear(d_model, d_model)
        self.w_v = nn.Linear(d_model, d_model)
        self.w_o = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, q, k, v, mask=None):
        """Returns (output, probabilities) with probabilities taken before
        dropout; shape (batch, heads, Lq, Lk)."""
        batch = q.shape[0]
        def split(x):
            return x.view(batch, -1, self.n_heads, self.d_k).transpose(1, 2)
        qh, kh, vh = split(self.w_q(q)), split(self.w_k(k)), split(self.w_v(v))
        values, probs = attention(qh, kh, vh, mask)
        if self.training and self.dropout.p > 0:
            values = self.dropout(probs) @ vh
        out = values.transpose(1, 2).reshape(batch, -1,
                                             self.n_heads * self.d_k)
        return self.w_o(out), probs

    def output_matrix(self) -> torch.Tensor:
        """The output projection in (heads*d_v, d_model) orientation: row
        block i of d_v rows belongs to head i."""
        return self.w_o.weight.t()


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float):
        super().__init__()
        self.lin1 = nn.Linear(d_model, d_ff)
        self.lin2 = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.lin2(self.dropout(F.relu(self.lin1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, pad_mask):
        h = self.norm1(x)
        attn, _ = self.self_attn(h, h, h, pad_mask)
        x = x + self.dropout(attn)
        x = x + self.dropout(self.ff(self.norm2(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, memory, causal_mask, memory_mask):
        h = self.norm1(x)
        attn, _ = self.self_attn(h, h, h, causal_mask)
        x = x + self.dropout(attn)
        attn, cross_probs = self.cross_attn(self.norm2(x), memory, memory,
                                            memory_mask)
        x = x + self.dropout(attn)
        x = x + self.dropout(self.ff(self.norm3(x)))
        return x, cross_probs


def sinusoidal_positions(max_len: int, d_model: int,
                         dtype=torch.float32) -> torch.Tensor:
    position = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64)
                    * (-math.log(10000.0) / d_model))
    pe = torch.zeros(max_len, d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div)
    return pe.to(dtype)


@dataclass
class ForwardTrace:
    """Everything downstream consumers need from one teacher-forced pass.

    encoder_states: (B, S, d); decoder_states: (B, T, d) from the final
    layer after the output norm; cross_attention: (B, H, T, S) post-softmax
    pre-dropout probabilities of the last decoder layer; logits: (B, T, V)
    pre-softmax vocabulary scores; src_pad_mask: (B, S) True on padding.
    """
    encoder_states: torch.Tensor
    decoder_states: torch.Tensor
    cross_attention: torch.Tensor
    logits: torch.Tensor
    src_pad_mask: torch.Tensor

    @property
    def p_vocab(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=-1)


class Seq2SeqTransformer(nn.Module):
    """Bidirectional encoder + autoregressive decoder over a shared
    embedding table, with an untied output projection."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, pad_id: int = PAD_ID):
        super().__init__()
        if vocab_size < 10:
            raise ModelError(f"vocabulary too small ({vocab_size})")
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.pad_id = pad_id
        self.embedding = nn.Embedding(vocab_size, cfg.d_model)
        self.enc_layers = nn.ModuleList(
            EncoderLayer(cfg) for _ in range(cfg.n_enc_layers))
        self.dec_layers = nn.ModuleList(
            DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.enc_norm = nn.LayerNorm(cfg.d_model)
        self.dec_norm = nn.LayerNorm(cfg.d_model)
        self.out_proj = nn.Linear(cfg.d_model, vocab_size)
        self.dropout = nn.Dropout(cfg.dropout)
        max_len = max(cfg.max_src_len, cfg.max_tgt_len)
        self.register_buffer("positions",
                             sinusoidal_positions(max_len, cfg.d_model),
                             persistent=False)
        self.scale = math.sqrt(cfg.d_model)

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.embedding(ids) * self.scale
        x = x + self.positions[: ids.shape[1]].to(x.dtype)
        return self.dropout(x)

    def encode(self, src_ids: torch.Tensor
               ) -> tuple[torch.Tensor, torch.Tensor]:
        if src_ids.shape[1] > self.cfg.max_src_len:
            raise ModelError(
                f"source length {src_ids.shape[1]} exceeds max_src_len "
                f"{self.cfg.max_src_len}")
        pad = src_ids.eq(self.pad_id)                      # (B, S)
        attn_mask = pad[:, None, None, :]                  # (B, 1, 1, S)
        x = self._embed(src_ids)
        for layer in self.enc_layers:
            x = layer(x, attn_mask)
        return self.enc_norm(x), pad

    def decode(self, tgt_ids: torch.Tensor, memory: torch.Tensor,
               src_pad: torch.Tensor
               ) -> tuple[torch.Tensor, torch.Tensor]:
        if tgt_ids.shape[1] > self.cfg.max_tgt_len:
            raise ModelError(
                f"target length {tgt_ids.shape[1]} exceeds max_tgt_len "
                f"{self.cfg.max_tgt_len}")
        t = tgt_ids.shape[1]
        causal = torch.triu(
            torch.ones(t, t, dtype=torch.bool, device=tgt_ids.device), 1)
        causal = causal | tgt_ids.eq(self.pad_id)[:, None, None, :]
        memory_mask = src_pad[:, None, None, :]
        x = self._embed(tgt_ids)
        cross_probs = None
        for layer in self.dec_layers:
            x, cross_probs = layer(x, memory, causal, memory_mask)
        return self.dec_norm(x), cross_probs

    def forward(self, src_ids: torch.Tensor, tgt_ids: torch.Tensor) -> ForwardTrace:
        """Teacher-forced pass. tgt_ids is the shifted decoder input
        (BOS-prefixed); logits at step t predict the token after prefix t."""
        memory, src_pad = self.encode(src_ids)
        states, cross_probs = self.decode(tgt_ids, memory, src_pad)
        return ForwardTrace(
            encoder_states=memory,
            decoder_states=states,
            cross_attention=cross_probs,
            logits=self.out_proj(states),
            src_pad_mask=src_pad,
        )

    def last_cross_attention_output_matrix(self) -> torch.Tensor:
        return self.dec_layers[-1].cross_attn.output_matrix()


def init_model(cfg: ModelConfig, vocab_size: int, seed: int,
               dtype: torch.dtype = torch.float32) -> Seq2SeqTransformer:
    """Build a model with Xavier-uniform weights (all matrices), zero
    biases, and unit layer-norm gains, bit-reproducible under the seed."""
    torch.manual_seed(seed)
    model = Seq2SeqTransformer(cfg, vocab_size)
    for p in model.parameters():
        if p.dim() > 1:
            nn.init.xavier_uniform_(p)
        else:
            nn.init.zeros_(p)
    for module in model.modules():
        if isinstance(module, nn.LayerNorm):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)
    return model.to(dtype)


# ---------------------------------------------------------------------------
# Checkpoints
#
# Layout: magic, format version, JSON header (model config, copy config,
# vocab size), then named arrays as
#   u32 name length | name utf-8 | u32 rank | u32 dims[rank] | f32 data LE

CHECKPOINT_MAGIC = b"TGCKPT\x00\x01"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, model: Seq2SeqTransformer,
                    copy_config: dict | None = None) -> None:
    header = {
        "model": asdict(model.cfg),
        "vocab_size": model.vocab_size,
        "copy": copy_config or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    state = model.state_dict()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            arr = tensor.detach().cpu().to(torch.float32).numpy()
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path: str | Path
                    ) -> tuple[Seq2SeqTransformer, ModelConfig, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ModelError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ModelError(
                f"unsupported checkpoint version {version}; "
                f"expected {CHECKPOINT_VERSION}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        cfg = ModelConfig(**header["model"])
        model = Seq2SeqTransformer(cfg, header["vocab_size"])
        expected = model.state_dict()
        (n_arrays,) = struct.unpack("<I", fh.read(4))
        loaded = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(dims)
            if name not in expected:
                raise ModelError(f"unexpected array {name!r} in {path}")
            if tuple(expected[name].shape) != tuple(dims):
                raise ModelError(
                    f"shape mismatch for {name!r}: checkpoint {tuple(dims)} vs "
                    f"model {tuple(expected[name].shape)}")
            loaded[name] = torch.from_numpy(data.copy())
        missing = set(expected) - set(loaded)
        if missing:
            raise ModelError(f"checkpoint {path} missing arrays {sorted(missing)}")
    model.load_state_dict(loaded)
    model.eval()
    return model, cfg, header.get("copy", {})


# ---------------------------------------------------------------------------
# Gradient checking

def check_finite_gradients(model: nn.Module) -> None:
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise ModelError(f"non-finite gradient in parameter {name!r}")


def grad_check(model: nn.Module, loss_fn: Callable[[], torch.Tensor],
               epsilon: float = 1e-5, sample_size: int = 200,
               seed: int = 0) -> float:
    """Compare autograd gradients with central finite differences.

    loss_fn recomputes the scalar loss from the model's current
    parameters. The model should be in float64 and eval mode, otherwise
    the differences drown in rounding noise. Returns the max relative
    error over sampled coordinates.
    """
    params = [p for p in model.parameters() if p.requires_grad]
    model.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    grads = [p.grad.detach().clone() if p.grad is not None
             else torch.zeros_like(p) for p in params]

    sizes = np.array([p.numel() for p in params])
    bounds = np.cumsum(sizes)
    rng = np.random.default_rng(seed)
    coords = rng.choice(int(bounds[-1]), size=min(sample_size, int(bounds[-1])),
                        replace=False)

    worst = 0.0
    with torch.no_grad():
        for flat in coords:
            pi = int(np.searchsorted(bounds, flat, side="right"))
            offset = int(flat - (bounds[pi - 1] if pi else 0))
            view = params[pi].view(-1)
            original = view[offset].item()
            view[offset] = original + epsilon
            up = loss_fn().item()
            view[offset] = original - epsilon
            down = loss_fn().item()
            view[offset] = original
            numeric = (up - down) / (2.0 * epsilon)
            analytic = grads[pi].view(-1)[offset].item()
            denom = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
