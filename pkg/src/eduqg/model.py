"""Encoder-decoder transformer: parameters, forward pass, loss, checkpoint I/O.

The same code path serves a `toy` preset used in tests and a
`t5-small-compat` preset shaped like the public 60M-parameter base model.
A Checkpoint is immutable once constructed; forward/loss are read-only.
Training produces new Checkpoints (see eduqg.trainer).
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .textproc import EOS_ID, PAD_ID, VOCAB_FILE_NAME, TokenSequence, Tokenizer

CONFIG_FILE_NAME = "config.json"
WEIGHTS_FILE_NAME = "weights.pt"
TRAINER_STATE_FILE_NAME = "trainer_state.pt"
_CHECKPOINT_FORMAT = "eduqg-checkpoint-v1"


class CheckpointError(Exception):
    """Checkpoint directory is unreadable or inconsistent with its config."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    num_layers: int = 2          # applies to encoder and decoder alike
    num_heads: int = 4
    feedforward_dim: int = 256
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "num_layers", "num_heads", "feedforward_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by num_heads={self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


def toy_config(vocab_size: int, dropout: float = 0.0) -> ModelConfig:
    """Desk-scale preset: small enough for CPU test runs."""
    return ModelConfig(vocab_size=vocab_size, d_model=64, num_layers=2,
                       num_heads=4, feedforward_dim=256, dropout=dropout)


def t5_small_compat_config(vocab_size: int = 32128, dropout: float = 0.1) -> ModelConfig:
    """Full-scale preset shaped like the public 60M-parameter base checkpoint."""
    return ModelConfig(vocab_size=vocab_size, d_model=512, num_layers=6,
                       num_heads=8, feedforward_dim=2048, dropout=dropout)


PRESETS = {
    "toy": toy_config,
    "t5-small-compat": t5_small_compat_config,
}


@dataclass(frozen=True)
class StageRecord:
    """One training stage in a checkpoint's provenance."""

    stage: str        # "base" | "pretrain" | "finetune"
    dataset_id: str
    steps: int
    seed: int


# ---------------------------------------------------------------------------
# network

def _sinusoidal_positions(length: int, d_model: int, dtype, device) -> torch.Tensor:
    position = torch.arange(length, dtype=torch.float64, device=device).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64, device=device)
                    * (-math.log(10000.0) / d_model))
    enc = torch.zeros(length, d_model, dtype=torch.float64, device=device)
    enc[:, 0::2] = torch.sin(position * div)
    enc[:, 1::2] = torch.cos(position * div)
    return enc.to(dtype)


class _EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = nn.MultiheadAttention(cfg.d_model, cfg.num_heads,
                                          dropout=cfg.dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.feedforward_dim),
            nn.GELU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.feedforward_dim, cfg.d_model),
        )
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, pad_mask):
        h = self.norm1(x)
        attn_out, _ = self.attn(h, h, h, key_padding_mask=pad_mask, need_weights=False)
        x = x + self.dropout(attn_out)
        return x + self.dropout(self.ff(self.norm2(x)))


class _DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = nn.MultiheadAttention(cfg.d_model, cfg.num_heads,
                                               dropout=cfg.dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = nn.MultiheadAttention(cfg.d_model, cfg.num_heads,
                                                dropout=cfg.dropout, batch_first=True)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.feedforward_dim),
            nn.GELU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.feedforward_dim, cfg.d_model),
        )
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, memory, causal_mask, memory_pad_mask):
        h = self.norm1(x)
        attn_out, _ = self.self_attn(h, h, h, attn_mask=causal_mask, need_weights=False)
        x = x + self.dropout(attn_out)
        h = self.norm2(x)
        attn_out, _ = self.cross_attn(h, memory, memory,
                                      key_padding_mask=memory_pad_mask, need_weights=False)
        x = x + self.dropout(attn_out)
        return x + self.dropout(self.ff(self.norm3(x)))


class EncoderDecoderTransformer(nn.Module):
    """Pre-norm encoder-decoder with a shared, output-tied embedding table.

    The decoder relies on its causal mask alone: padded tail positions can
    never influence earlier positions, which keeps per-example outputs
    independent of batch composition.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.embedding = nn.Embedding(config.vocab_size, config.d_model)
        self.encoder_layers = nn.ModuleList(_EncoderLayer(config) for _ in range(config.num_layers))
        self.decoder_layers = nn.ModuleList(_DecoderLayer(config) for _ in range(config.num_layers))
        self.encoder_norm = nn.LayerNorm(config.d_model)
        self.decoder_norm = nn.LayerNorm(config.d_model)
        self.dropout = nn.Dropout(config.dropout)
        self._scale = math.sqrt(config.d_model)

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.embedding(ids) * self._scale
        pos = _sinusoidal_positions(ids.shape[1], self.config.d_model, x.dtype, x.device)
        return self.dropout(x + pos)

    def encode(self, src_ids: torch.Tensor, src_pad_mask: torch.Tensor) -> torch.Tensor:
        x = self._embed(src_ids)
        for layer in self.encoder_layers:
            x = layer(x, src_pad_mask)
        return self.encoder_norm(x)

    def decode(self, tgt_in_ids: torch.Tensor, memory: torch.Tensor,
               src_pad_mask: torch.Tensor) -> torch.Tensor:
        t = tgt_in_ids.shape[1]
        causal = torch.triu(
            torch.ones(t, t, dtype=torch.bool, device=tgt_in_ids.device), diagonal=1
        )
        x = self._embed(tgt_in_ids)
        for layer in self.decoder_layers:
            x = layer(x, memory, causal, src_pad_mask)
        x = self.decoder_norm(x)
        return F.linear(x, self.embedding.weight)  # tied output projection

    def forward(self, src_ids, src_pad_mask, tgt_in_ids) -> torch.Tensor:
        memory = self.encode(src_ids, src_pad_mask)
        return self.decode(tgt_in_ids, memory, src_pad_mask)


def _reset_parameters(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)

    def uniform_(t, bound):
        with torch.no_grad():
            t.copy_((torch.rand(t.shape, generator=gen) * 2 - 1) * bound)

    for m in module.modules():
        if isinstance(m, nn.Embedding):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen)
                               / math.sqrt(m.embedding_dim))
        elif isinstance(m, nn.Linear):
            bound = math.sqrt(6.0 / (m.in_features + m.out_features))
            uniform_(m.weight, bound)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.MultiheadAttention):
            d = m.embed_dim
            bound = math.sqrt(6.0 / (2 * d))
            if m.in_proj_weight is not None:
                uniform_(m.in_proj_weight, bound)
            if m.in_proj_bias is not None:
                nn.init.zeros_(m.in_proj_bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    """Model parameters + config + tokenizer + training provenance.

    Treated as immutable: the trainer clones the module before updating it
    and returns a fresh Checkpoint with an extended provenance.
    """

    config: ModelConfig
    module: EncoderDecoderTransformer
    tokenizer: Tokenizer
    provenance: list[StageRecord] = field(default_factory=list)
    trainer_state: dict | None = None

    @property
    def parameters_map(self) -> dict[str, torch.Tensor]:
        return self.module.state_dict()

    def provenance_path(self) -> list[str]:
        """Compact "stage:dataset" labels, e.g. ["base", "pretrain:s2orc", ...]."""
        out = []
        for rec in self.provenance:
            out.append(rec.stage if rec.stage == "base" else f"{rec.stage}:{rec.dataset_id}")
        return out

    def clone_module(self) -> EncoderDecoderTransformer:
        return copy.deepcopy(self.module)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": _CHECKPOINT_FORMAT,
            "config": asdict(self.config),
            "provenance": [asdict(rec) for rec in self.provenance],
        }
        (directory / CONFIG_FILE_NAME).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
        torch.save(self.module.state_dict(), directory / WEIGHTS_FILE_NAME)
        self.tokenizer.save(directory / VOCAB_FILE_NAME)
        if self.trainer_state is not None:
            torch.save(self.trainer_state, directory / TRAINER_STATE_FILE_NAME)

    @classmethod
    def load(cls, directory: str | Path) -> "Checkpoint":
        directory = Path(directory)
        manifest_path = directory / CONFIG_FILE_NAME
        if not manifest_path.is_file():
            raise CheckpointError(f"no checkpoint manifest at {manifest_path}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("format") != _CHECKPOINT_FORMAT:
            raise CheckpointError(f"{directory}: unknown checkpoint format {manifest.get('format')!r}")
        config = ModelConfig(**manifest["config"])
        module = EncoderDecoderTransformer(config)
        state = torch.load(directory / WEIGHTS_FILE_NAME, map_location="cpu", weights_only=True)
        expected = module.state_dict()
        for name, tensor in expected.items():
            if name not in state:
                raise CheckpointError(f"{directory}: missing tensor {name!r}")
            if state[name].shape != tensor.shape:
                raise CheckpointError(
                    f"{directory}: tensor {name!r} has shape {tuple(state[name].shape)}, "
                    f"config implies {tuple(tensor.shape)}"
                )
        for name in state:
            if name not in expected:
                raise CheckpointError(f"{directory}: unexpected tensor {name!r}")
        module.load_state_dict(state)
        module.eval()
        tokenizer = Tokenizer.load(directory / VOCAB_FILE_NAME)
        if tokenizer.vocab_size != config.vocab_size:
            raise CheckpointError(
                f"{directory}: vocabulary size {tokenizer.vocab_size} != config vocab_size {config.vocab_size}"
            )
        provenance = [StageRecord(**rec) for rec in manifest["provenance"]]
        trainer_state = None
        state_path = directory / TRAINER_STATE_FILE_NAME
        if state_path.is_file():
            trainer_state = torch.load(state_path, map_location="cpu", weights_only=False)
        return cls(config=config, module=module, tokenizer=tokenizer,
                   provenance=provenance, trainer_state=trainer_state)


def init_model(config: ModelConfig, tokenizer: Tokenizer, seed: int,
               base_name: str = "init") -> Checkpoint:
    """Fresh, deterministically initialized checkpoint."""
    if tokenizer.vocab_size != config.vocab_size:
        raise ValueError(
            f"tokenizer vocab size {tokenizer.vocab_size} != config vocab_size {config.vocab_size}"
        )
    module = EncoderDecoderTransformer(config)
    _reset_parameters(module, seed)
    module.eval()
    return Checkpoint(config=config, module=module, tokenizer=tokenizer,
                      provenance=[StageRecord(stage="base", dataset_id=base_name, steps=0, seed=seed)])


def load_base(directory: str | Path) -> Checkpoint:
    """Load a base checkpoint directory (alias of Checkpoint.load)."""
    return Checkpoint.load(directory)


# ---------------------------------------------------------------------------
# batching + forward + loss

def pad_batch(seqs: Sequence[TokenSequence], pad_id: int = PAD_ID) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad sequences into (ids, pad_mask) tensors; mask is True at padding."""
    if not seqs:
        raise ValueError("empty batch")
    max_len = max(len(s) for s in seqs)
    if max_len == 0:
        raise ValueError("batch of empty sequences")
    ids = torch.full((len(seqs), max_len), pad_id, dtype=torch.long)
    mask = torch.ones(len(seqs), max_len, dtype=torch.bool)
    for i, s in enumerate(seqs):
        if len(s) == 0:
            raise ValueError(f"sequence {i} in batch is empty")
        ids[i, : len(s)] = torch.tensor(s.ids, dtype=torch.long)
        mask[i, : len(s)] = False
    return ids, mask


def _check_ids(seqs: Sequence[TokenSequence], vocab_size: int) -> None:
    for i, s in enumerate(seqs):
        for t in s.ids:
            if not 0 <= t < vocab_size:
                raise ValueError(f"sequence {i}: token id {t} out of range [0, {vocab_size})")


def shift_right(tgt_ids: torch.Tensor, start_id: int = PAD_ID) -> torch.Tensor:
    """Decoder input: start token followed by the target minus its last position."""
    shifted = torch.full_like(tgt_ids, start_id)
    shifted[:, 1:] = tgt_ids[:, :-1]
    return shifted


def forward_logprobs(
    ckpt: Checkpoint,
    inputs: Sequence[TokenSequence],
    target_prefixes: Sequence[TokenSequence],
) -> torch.Tensor:
    """Teacher-forced log-probabilities, shape (batch, target_len, vocab).

    Position t holds the distribution of target token t given the input and
    target tokens < t. Positions beyond a sequence's real length are padding
    artifacts and carry no meaning.
    """
    if len(inputs) != len(target_prefixes):
        raise ValueError("inputs and target_prefixes must align")
    _check_ids(inputs, ckpt.config.vocab_size)
    _check_ids(target_prefixes, ckpt.config.vocab_size)
    src_ids, src_mask = pad_batch(inputs)
    tgt_ids, _ = pad_batch(target_prefixes)
    ckpt.module.eval()
    with torch.no_grad():
        logits = ckpt.module(src_ids, src_mask, shift_right(tgt_ids))
    return F.log_softmax(logits, dim=-1)


def sequence_xent(logprobs: torch.Tensor, targets: torch.Tensor,
                  pad_id: int = PAD_ID) -> torch.Tensor:
    """Mean cross-entropy of `targets` under `logprobs`, ignoring padding."""
    mask = targets != pad_id
    if not bool(mask.any()):
        raise ValueError("all target positions are padding")
    picked = logprobs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -(picked * mask).sum() / mask.sum()


def compute_batch_loss(module: EncoderDecoderTransformer, src_ids: torch.Tensor,
                       src_mask: torch.Tensor, tgt_ids: torch.Tensor) -> torch.Tensor:
    """Differentiable mean cross-entropy over non-padding target tokens."""
    logits = module(src_ids, src_mask, shift_right(tgt_ids))
    return sequence_xent(F.log_softmax(logits, dim=-1), tgt_ids)


def loss(ckpt: Checkpoint, pairs: Sequence[tuple[TokenSequence, TokenSequence]]) -> float:
    """Token-level cross-entropy of a batch of (input, target) pairs."""
    inputs = [p[0] for p in pairs]
    targets = [p[1] for p in pairs]
    for i, t in enumerate(targets):
        if len(t) == 0 or t.ids[-1] != EOS_ID:
            raise ValueError(f"target {i} must be non-empty and end with the end-of-sequence id")
    logprobs = forward_logprobs(ckpt, inputs, targets)
    tgt_ids, _ = pad_batch(targets)
    return float(sequence_xent(logprobs, tgt_ids))
