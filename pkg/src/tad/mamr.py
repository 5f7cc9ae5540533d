"""Token mixing core: self-attention, memory read with hard shrinkage, FFN.

Token sequences are [B,S,D] with row 0 the global motion token and rows
1..N object tokens; a boolean mask [B,S] marks real rows so batches can pad
to a common length. Padded rows pass through every layer unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


def positional_encoding(length: int, d_model: int,
                        device=None, dtype=None) -> torch.Tensor:
    """Sinusoidal table [length, d_model]; row index is the position."""
    if d_model % 2 != 0:
        raise ValueError("d_model must be even")
    pos = torch.arange(length, device=device, dtype=dtype or torch.float32).unsqueeze(1)
    idx = torch.arange(0, d_model, 2, device=device, dtype=dtype or torch.float32)
    angles = pos / torch.pow(torch.tensor(10000.0, device=device,
                                          dtype=dtype or torch.float32),
                             idx / d_model)
    table = torch.zeros(length, d_model, device=device, dtype=dtype or torch.float32)
    table[:, 0::2] = torch.sin(angles)
    table[:, 1::2] = torch.cos(angles)
    return table


def hard_shrink(a: torch.Tensor, lamb: float, eps: float = 1e-12) -> torch.Tensor:
    """Continuous thresholding: exactly zero at or below lamb, ~identity above."""
    return F.relu(a - lamb) * a / (torch.abs(a - lamb) + eps)


def row_entropy(weights: torch.Tensor) -> torch.Tensor:
    """Shannon entropy of each weight row, with 0*log(0) taken as 0."""
    safe = torch.where(weights > 0,
                       -weights * torch.log(weights.clamp(min=1e-30)),
                       torch.zeros((), dtype=weights.dtype, device=weights.device))
    return safe.sum(dim=-1)


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    B, S, D = x.shape
    return x.view(B, S, heads, D // heads).transpose(1, 2)  # [B,h,S,dh]


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    B, h, S, dh = x.shape
    return x.transpose(1, 2).reshape(B, S, h * dh)


class MemoryBank(nn.Module):
    """Learned slot matrix [M,C], uniformly initialized in +-1/sqrt(C)."""

    def __init__(self, slots: int, width: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(slots, width))
        stdv = 1.0 / math.sqrt(width)
        nn.init.uniform_(self.weight, -stdv, stdv)

    @property
    def slots(self) -> int:
        return self.weight.shape[0]


class InterMotionLayer(nn.Module):
    """Multi-head self-attention over the token rows, residual + LayerNorm."""

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        if d_model % heads != 0:
            raise ValueError("heads must divide d_model")
        self.heads = heads
        self.w_q = nn.Linear(d_model, d_model, bias=False)
        self.w_k = nn.Linear(d_model, d_model, bias=False)
        self.w_v = nn.Linear(d_model, d_model, bias=False)
        self.norm = nn.LayerNorm(d_model)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor):
        q = _split_heads(self.w_q(tokens), self.heads)
        k = _split_heads(self.w_k(tokens), self.heads)
        v = _split_heads(self.w_v(tokens), self.heads)
        scale = 1.0 / math.sqrt(q.shape[-1])
        logits = torch.matmul(q, k.transpose(-2, -1)) * scale  # [B,h,S,S]
        logits = logits.masked_fill(~mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        delta = self.norm(_merge_heads(torch.matmul(weights, v)))
        delta = delta * mask.unsqueeze(-1)
        return tokens + delta, weights


class MemoryReadLayer(nn.Module):
    """Cross-attention from tokens into a slot bank, sparsified by shrinkage.

    Addressing weights are softmax over slots, then hard shrinkage and L1
    renormalization. A threshold of zero bypasses shrinkage entirely. Rows
    whose weights all shrink to zero fall back to the unshrunk softmax; the
    count of such rows is reported so callers can surface it.
    """

    def __init__(self, d_model: int, heads: int, bank: MemoryBank,
                 shrink_lambda: float, shrink_eps: float = 1e-12):
        super().__init__()
        if d_model % heads != 0:
            raise ValueError("heads must divide d_model")
        self.heads = heads
        self.bank = bank
        self.shrink_lambda = shrink_lambda
        self.shrink_eps = shrink_eps
        self.w_q = nn.Linear(d_model, d_model, bias=False)
        self.w_k = nn.Linear(bank.weight.shape[1], d_model, bias=False)
        self.w_v = nn.Linear(bank.weight.shape[1], d_model, bias=False)
        self.norm = nn.LayerNorm(d_model)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor):
        B = tokens.shape[0]
        q = _split_heads(self.w_q(tokens), self.heads)           # [B,h,S,dh]
        k = _split_heads(self.w_k(self.bank.weight).unsqueeze(0).expand(B, -1, -1),
                         self.heads)                              # [B,h,M,dh]
        v = _split_heads(self.w_v(self.bank.weight).unsqueeze(0).expand(B, -1, -1),
                         self.heads)
        scale = 1.0 / math.sqrt(q.shape[-1])
        logits = torch.matmul(q, k.transpose(-2, -1)) * scale    # [B,h,S,M]
        soft = torch.softmax(logits, dim=-1)
        fallbacks = 0
        if self.shrink_lambda == 0.0:
            weights = soft
        else:
            shrunk = hard_shrink(soft, self.shrink_lambda, self.shrink_eps)
            row_sum = shrunk.sum(dim=-1, keepdim=True)
            dead = row_sum <= 0
            weights = torch.where(dead, soft, shrunk / row_sum.clamp(min=1e-30))
            fallbacks = int((dead.squeeze(-1) & mask[:, None, :]).sum())
        delta = self.norm(_merge_heads(torch.matmul(weights, v)))
        delta = delta * mask.unsqueeze(-1)
        return tokens + delta, weights, fallbacks


class FeedForwardLayer(nn.Module):
    """Two-layer position-wise block, residual + LayerNorm."""

    def __init__(self, d_model: int, expansion: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(d_model, expansion * d_model)
        self.fc2 = nn.Linear(expansion * d_model, d_model)
        self.norm = nn.LayerNorm(d_model)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        delta = self.norm(self.fc2(F.relu(self.fc1(tokens))))
        return tokens + delta * mask.unsqueeze(-1)


@dataclass
class LayerTrace:
    self_weights: torch.Tensor           # [B,h,S,S]
    mem_weights: torch.Tensor | None     # [B,h,S,M], still on the graph
    mem_fallbacks: int = 0


@dataclass
class StackTrace:
    layers: list[LayerTrace] = field(default_factory=list)

    @property
    def mem_fallbacks(self) -> int:
        return sum(layer.mem_fallbacks for layer in self.layers)


class MamrStack(nn.Module):
    """L rounds of token mixing: self-attention, memory read, feedforward.

    Position encoding is added once at the input. Each layer owns a memory
    bank unless share_memory is set; use_memory=False drops the memory read
    (the transformer-only ablation).
    """

    def __init__(self, d_model: int, heads: int, layers: int, mem_slots: int,
                 shrink_lambda: float, shrink_eps: float = 1e-12,
                 share_memory: bool = False, use_memory: bool = True):
        super().__init__()
        self.d_model = d_model
        self.use_memory = use_memory
        self.inter = nn.ModuleList(InterMotionLayer(d_model, heads)
                                   for _ in range(layers))
        self.ffn = nn.ModuleList(FeedForwardLayer(d_model) for _ in range(layers))
        if use_memory:
            if share_memory:
                banks = [MemoryBank(mem_slots, d_model)] * layers
            else:
                banks = [MemoryBank(mem_slots, d_model) for _ in range(layers)]
            self.reads = nn.ModuleList(
                MemoryReadLayer(d_model, heads, banks[i], shrink_lambda, shrink_eps)
                for i in range(layers))
        else:
            self.reads = None

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor):
        if tokens.dim() != 3 or tokens.shape[-1] != self.d_model:
            raise ValueError(f"expected tokens [B,S,{self.d_model}], got {tuple(tokens.shape)}")
        S = tokens.shape[1]
        pe = positional_encoding(S, self.d_model, device=tokens.device,
                                 dtype=tokens.dtype)
        tokens = tokens + pe.unsqueeze(0) * mask.unsqueeze(-1)
        trace = StackTrace()
        for i, inter in enumerate(self.inter):
            tokens, self_w = inter(tokens, mask)
            mem_w, fallbacks = None, 0
            if self.use_memory:
                tokens, mem_w, fallbacks = self.reads[i](tokens, mask)
            tokens = self.ffn[i](tokens, mask)
            trace.layers.append(LayerTrace(self_w, mem_w, fallbacks))
        return tokens, trace


def sparsity_loss(trace: StackTrace, mask: torch.Tensor) -> torch.Tensor:
    """Entropy of the memory addressing weights, meaned over valid rows and
    heads per layer, summed over layers. Zero when no layer reads memory."""
    device = mask.device
    total = None
    valid = mask.sum()
    for layer in trace.layers:
        if layer.mem_weights is None:
            continue
        ent = row_entropy(layer.mem_weights)            # [B,h,S]
        ent = ent * mask.unsqueeze(1)
        heads = ent.shape[1]
        layer_mean = ent.sum() / (valid * heads).clamp(min=1)
        total = layer_mean if total is None else total + layer_mean
    if total is None:
        return torch.zeros((), device=device)
    return total
