"""Decoder-only transformer with rotary positions, grouped-query attention,
and RMS-normalized query/key vectors, plus the causal-LM training loop.

Numerics are float32 by default; gradient-check builds use float64. Attention
is written with plain matmuls so both dtypes share one code path and results
are reproducible under a fixed thread count. The highest token id
(vocab_size - 1) is reserved as the end-of-sequence/packing separator.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    n_kv_groups: int
    model_dim: int
    head_dim: int
    ffn_dim: int
    vocab_size: int
    context_length: int = 512

    def __post_init__(self) -> None:
        for name, v in asdict(self).items():
            if v < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_heads % self.n_kv_groups != 0:
            raise ValueError("n_heads must be divisible by n_kv_groups")
        if self.head_dim % 2 != 0:
            raise ValueError("head_dim must be even for rotary pairing")

    @property
    def eos_id(self) -> int:
        return self.vocab_size - 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    global_batch_size: int = 8
    total_tokens: int = 1_000_000
    warmup_fraction: float = 0.10
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.1
    grad_clip_norm: float = 1.0
    seed: int = 0
    eval_interval: int = 50

    def __post_init__(self) -> None:
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in (0, 1)")
        if self.total_tokens <= 0:
            raise ValueError("total_tokens must be positive")


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        scale = torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + self.eps)
        return x * scale * self.weight


def rope_tables(head_dim: int, length: int, dtype, base: float = 10000.0):
    inv_freq = base ** (-torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim)
    angles = torch.arange(length, dtype=torch.float64)[:, None] * inv_freq[None, :]
    return angles.cos().to(dtype), angles.sin().to(dtype)


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate pairs (first half, second half) of the head dimension.

    x: [B, H, T, head_dim]; cos/sin: [T, head_dim/2].
    """
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    return torch.cat((x1 * cos - x2 * sin, x2 * cos + x1 * sin), dim=-1)


class KVCache:
    """Per-layer key/value tensors for incremental decoding."""

    def __init__(self, n_layers: int):
        self.layers: list[tuple[torch.Tensor, torch.Tensor] | None] = [None] * n_layers

    @property
    def seq_len(self) -> int:
        first = self.layers[0]
        return 0 if first is None else first[0].shape[2]

    def append(self, layer: int, k: torch.Tensor, v: torch.Tensor):
        prior = self.layers[layer]
        if prior is not None:
            k = torch.cat((prior[0], k), dim=2)
            v = torch.cat((prior[1], v), dim=2)
        self.layers[layer] = (k, v)
        return k, v

    def clone(self) -> "KVCache":
        out = KVCache(len(self.layers))
        out.layers = [
            None if kv is None else (kv[0].clone(), kv[1].clone()) for kv in self.layers
        ]
        return out

    def truncate(self, length: int) -> None:
        if length <= 0:
            self.layers = [None] * len(self.layers)
            return
        self.layers = [
            None if kv is None else (kv[0][:, :, :length], kv[1][:, :, :length])
            for kv in self.layers
        ]


class Attention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.n_kv = cfg.n_kv_groups
        self.head_dim = cfg.head_dim
        self.q_proj = nn.Linear(cfg.model_dim, cfg.n_heads * cfg.head_dim, bias=False)
        self.k_proj = nn.Linear(cfg.model_dim, cfg.n_kv_groups * cfg.head_dim, bias=False)
        self.v_proj = nn.Linear(cfg.model_dim, cfg.n_kv_groups * cfg.head_dim, bias=False)
        self.o_proj = nn.Linear(cfg.n_heads * cfg.head_dim, cfg.model_dim, bias=False)
        self.q_norm = RMSNorm(cfg.head_dim)
        self.k_norm = RMSNorm(cfg.head_dim)

    def forward(self, x, cos, sin, layer: int, cache: KVCache | None, offset: int):
        bsz, q_len, _ = x.shape
        q = self.q_proj(x).view(bsz, q_len, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(x).view(bsz, q_len, self.n_kv, self.head_dim).transpose(1, 2)
        v = self.v_proj(x).view(bsz, q_len, self.n_kv, self.head_dim).transpose(1, 2)

        q = apply_rope(self.q_norm(q), cos, sin)
        k = apply_rope(self.k_norm(k), cos, sin)

        if cache is not None:
            k, v = cache.append(layer, k, v)
        rep = self.n_heads // self.n_kv
        if rep > 1:
            k = k.repeat_interleave(rep, dim=1)
            v = v.repeat_interleave(rep, dim=1)

        k_len = k.shape[2]
        if offset == 0 and k_len == q_len:
            out = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        elif q_len == 1:
            # single decode step: the query is the latest position, attend to all
            out = F.scaled_dot_product_attention(q, k, v)
        else:
            q_pos = torch.arange(offset, offset + q_len)[:, None]
            k_pos = torch.arange(k_len)[None, :]
            out = F.scaled_dot_product_attention(q, k, v, attn_mask=k_pos <= q_pos)
        out = out.transpose(1, 2).reshape(bsz, q_len, -1)
        return self.o_proj(out)


class GatedMLP(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.gate_proj = nn.Linear(cfg.model_dim, cfg.ffn_dim, bias=False)
        self.up_proj = nn.Linear(cfg.model_dim, cfg.ffn_dim, bias=False)
        self.down_proj = nn.Linear(cfg.ffn_dim, cfg.model_dim, bias=False)

    def forward(self, x):
        return self.down_proj(F.silu(self.gate_proj(x)) * self.up_proj(x))


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn_norm = RMSNorm(cfg.model_dim)
        self.attn = Attention(cfg)
        self.mlp_norm = RMSNorm(cfg.model_dim)
        self.mlp = GatedMLP(cfg)

    def forward(self, x, cos, sin, layer, cache, offset):
        x = x + self.attn(self.attn_norm(x), cos, sin, layer, cache, offset)
        return x + self.mlp(self.mlp_norm(x))


class DecoderModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.model_dim)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.final_norm = RMSNorm(cfg.model_dim)
        self.lm_head = nn.Linear(cfg.model_dim, cfg.vocab_size, bias=False)
        cos, sin = rope_tables(cfg.head_dim, cfg.context_length, torch.get_default_dtype())
        self.register_buffer("rope_cos", cos, persistent=False)
        self.register_buffer("rope_sin", sin, persistent=False)

    def forward(
        self, tokens: torch.Tensor, cache: KVCache | None = None
    ) -> torch.Tensor:
        """Logits over the vocabulary for each position. 1-D input gives
        [T, vocab]; 2-D input gives [B, T, vocab]. With a cache, tokens are the
        continuation and positions pick up where the cache ends."""
        squeeze = tokens.dim() == 1
        if squeeze:
            tokens = tokens[None, :]
        offset = cache.seq_len if cache is not None else 0
        q_len = tokens.shape[1]
        if offset + q_len > self.cfg.context_length:
            raise ValueError(
                f"sequence length {offset + q_len} exceeds context {self.cfg.context_length}"
            )
        cos = self.rope_cos[offset : offset + q_len]
        sin = self.rope_sin[offset : offset + q_len]
        x = self.tok_emb(tokens)
        for i, block in enumerate(self.blocks):
            x = block(x, cos, sin, i, cache, offset)
        logits = self.lm_head(self.final_norm(x))
        return logits[0] if squeeze else logits


def build_model(cfg: ModelConfig, seed: int = 0, dtype=torch.float32) -> DecoderModel:
    """Construct and initialize: truncated normal (std 0.02) on all weight
    matrices, ones on norm gains."""
    torch.manual_seed(seed)
    prior = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        model = DecoderModel(cfg)
        for module in model.modules():
            if isinstance(module, (nn.Linear, nn.Embedding)):
                nn.init.trunc_normal_(module.weight, std=0.02, a=-0.04, b=0.04)
    finally:
        torch.set_default_dtype(prior)
    return model


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def count_non_embedding_params(model: DecoderModel) -> int:
    emb = model.tok_emb.weight.numel() + model.lm_head.weight.numel()
    return count_params(model) - emb


def flops_estimate(n_params: float, n_tokens: float) -> float:
    """Training compute C = 6 * N * D."""
    if n_params <= 0 or n_tokens <= 0:
        raise ValueError("N and D must be positive")
    return 6.0 * n_params * n_tokens


def lm_loss(logits: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of tokens[1:] given their prefixes."""
    if tokens.dim() != 1 or logits.dim() != 2:
        raise ValueError("lm_loss expects one sequence: logits [T, V], tokens [T]")
    if len(tokens) < 2:
        raise ValueError("need at least 2 tokens")
    return F.cross_entropy(logits[:-1], tokens[1:], reduction="mean")


# ---------------------------------------------------------------------------
# Packing and training
# ---------------------------------------------------------------------------


def pack_documents(docs: Sequence[Sequence[int]], eos_id: int) -> np.ndarray:
    """Concatenate documents with an end-of-sequence token after each."""
    stream: list[int] = []
    for doc in docs:
        stream.extend(doc)
        stream.append(eos_id)
    return np.asarray(stream, dtype=np.int64)


def context_windows(stream: np.ndarray, context_length: int) -> np.ndarray:
    """Fixed windows of context_length+1 tokens with stride context_length, so
    every token is predicted exactly once; a short tail is dropped."""
    width = context_length + 1
    n = (len(stream) - 1) // context_length
    if n <= 0:
        return np.empty((0, width), dtype=np.int64)
    out = np.empty((n, width), dtype=np.int64)
    for i in range(n):
        out[i] = stream[i * context_length : i * context_length + width]
    return out


def lr_at_step(step: int, total_steps: int, peak: float, warmup_fraction: float) -> float:
    """Linear warm-up to the peak, then cosine decay to zero at the final step."""
    warmup = max(1, int(round(warmup_fraction * total_steps)))
    if step < warmup:
        return peak * (step + 1) / warmup
    span = max(1, total_steps - warmup)
    progress = (step + 1 - warmup) / span
    return peak * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    train_config: TrainConfig | None
    step: int
    loss_history: list = field(default_factory=list)
    state: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: DecoderModel, train_config=None, step=0, loss_history=None):
        state = {
            k: v.detach().to(torch.float32).clone() for k, v in model.state_dict().items()
        }
        return cls(model.cfg, train_config, step, list(loss_history or []), state)

    def to_model(self, dtype=torch.float32) -> DecoderModel:
        model = build_model(self.config, seed=0, dtype=dtype)
        model.load_state_dict({k: v.to(dtype) for k, v in self.state.items()})
        model.eval()
        return model

    @property
    def checkpoint_id(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.state):
            h.update(name.encode())
            h.update(self.state[name].numpy().tobytes())
        return h.hexdigest()[:8]


def train_model(
    docs: Sequence[Sequence[int]],
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    val_docs: Sequence[Sequence[int]] | None = None,
) -> ModelCheckpoint:
    """AdamW causal-LM training over packed context windows.

    Stops once total_tokens have been consumed (global_batch_size x
    context_length per step). Weight decay applies to matrices only, not to
    norm gains. Loss history rows are (step, split, loss).
    """
    model = build_model(mcfg, tcfg.seed)
    stream = pack_documents(docs, mcfg.eos_id)
    windows = context_windows(stream, mcfg.context_length)
    if len(windows) == 0:
        raise ValueError(
            f"corpus too small: {len(stream)} tokens < one window of {mcfg.context_length + 1}"
        )

    decay = [p for p in model.parameters() if p.dim() >= 2]
    plain = [p for p in model.parameters() if p.dim() < 2]
    optimizer = torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": tcfg.weight_decay},
            {"params": plain, "weight_decay": 0.0},
        ],
        lr=tcfg.learning_rate,
        betas=(tcfg.beta1, tcfg.beta2),
    )

    tokens_per_step = tcfg.global_batch_size * mcfg.context_length
    total_steps = int(tcfg.total_tokens // tokens_per_step)
    history: list[tuple[int, str, float]] = []
    order = np.random.default_rng(tcfg.seed)
    permutation = order.permutation(len(windows))
    cursor = 0

    model.train()
    for step in range(total_steps):
        rows = []
        for _ in range(tcfg.global_batch_size):
            if cursor >= len(permutation):
                permutation = order.permutation(len(windows))
                cursor = 0
            rows.append(windows[permutation[cursor]])
            cursor += 1
        batch = torch.from_numpy(np.stack(rows))
        logits = model(batch[:, :-1])
        loss = F.cross_entropy(
            logits.reshape(-1, mcfg.vocab_size), batch[:, 1:].reshape(-1)
        )

        lr = lr_at_step(step, total_steps, tcfg.learning_rate, tcfg.warmup_fraction)
        for group in optimizer.param_groups:
            group["lr"] = lr
        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.grad_clip_norm)
        optimizer.step()
        history.append((step, "train", float(loss.item())))

        due = (step + 1) % tcfg.eval_interval == 0 or step == total_steps - 1
        if val_docs is not None and due:
            history.append((step, "val", evaluate_loss(model, val_docs, mcfg)))
            model.train()

    return ModelCheckpoint.from_model(model, tcfg, total_steps, history)


def evaluate_loss(
    model: DecoderModel, docs: Sequence[Sequence[int]], mcfg: ModelConfig | None = None,
    batch_size: int = 16,
) -> float:
    """Mean per-window loss over the packed corpus, no gradients."""
    cfg = mcfg or model.cfg
    stream = pack_documents(docs, cfg.eos_id)
    windows = context_windows(stream, cfg.context_length)
    if len(windows) == 0:
        raise ValueError("corpus too small for one evaluation window")
    model.eval()
    losses: list[float] = []
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            batch = torch.from_numpy(windows[i : i + batch_size])
            logits = model(batch[:, :-1])
            per_tok = F.cross_entropy(
                logits.reshape(-1, cfg.vocab_size),
                batch[:, 1:].reshape(-1),
                reduction="none",
            ).reshape(len(batch), -1)
            losses.extend(float(x) for x in per_tok.mean(dim=1))
    return float(np.mean(losses))


# ---------------------------------------------------------------------------
# Checkpoint files: JSON header line + named float32 little-endian arrays
# ---------------------------------------------------------------------------


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    names = list(ckpt.state)
    header = {
        "format": "bbo-forge-checkpoint-v1",
        "model": asdict(ckpt.config),
        "train": asdict(ckpt.train_config) if ckpt.train_config else None,
        "step": ckpt.step,
        "loss_history": [list(row) for row in ckpt.loss_history],
        "tensors": [{"name": n, "shape": list(ckpt.state[n].shape)} for n in names],
        "id": ckpt.checkpoint_id,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name in names:
            array = ckpt.state[name].numpy().astype("<f4", copy=False)
            f.write(array.tobytes(order="C"))


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != "bbo-forge-checkpoint-v1":
            raise ValueError(f"{path}: not a checkpoint file")
        state = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 4)
            if len(raw) != count * 4:
                raise ValueError(f"{path}: truncated tensor {entry['name']}")
            state[entry["name"]] = torch.from_numpy(
                np.frombuffer(raw, dtype="<f4").copy().reshape(shape)
            )
    cfg = ModelConfig(**header["model"])
    tcfg = TrainConfig(**header["train"]) if header["train"] else None
    ckpt = ModelCheckpoint(
        cfg, tcfg, header["step"], [tuple(r) for r in header["loss_history"]], state
    )
    return ckpt
