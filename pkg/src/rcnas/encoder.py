"""A small bidirectional transformer encoder with entity positional embeddings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from safetensors import safe_open
from safetensors.torch import load_file, save_file

from .corpus import RelationStatement
from .preprocess import PAD, SPECIAL_TOKENS, UNK, TransformedInput

POS_EMB_CONCAT_DIM = 12
ENTITY_POS_INIT = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 128
    layers: int = 4
    heads: int = 4
    ffn_dim: int = 512
    max_len: int = 128
    dropout: float = 0.1
    pos_emb_dim_concat: int = POS_EMB_CONCAT_DIM

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.pos_emb_dim_concat != POS_EMB_CONCAT_DIM:
            raise ValueError(f"pos_emb_dim_concat is fixed at {POS_EMB_CONCAT_DIM}")

    def output_width(self, pos_mode: str) -> int:
        if pos_mode == "concat_to_output":
            return self.hidden_dim + self.pos_emb_dim_concat
        return self.hidden_dim

    @property
    def widths(self) -> tuple[int, int]:
        return self.hidden_dim, self.hidden_dim + self.pos_emb_dim_concat


class TokenVocabulary:
    """Token to id map; the special tokens always take the first ids."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        self.tokens = tuple(tokens)
        self.ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, TokenVocabulary) and self.tokens == other.tokens

    @property
    def pad_id(self) -> int:
        return self.ids[PAD]

    def id(self, token: str) -> int:
        return self.ids.get(token, self.ids[UNK])

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def to_text(self) -> str:
        return "".join(f"{tok}\t{i}\n" for i, tok in enumerate(self.tokens))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TokenVocabulary":
        pairs = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line:
                tok, idx = line.rsplit("\t", 1)
                pairs.append((int(idx), tok))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ValueError(f"{path}: vocabulary ids are not contiguous")
        return cls([tok for _, tok in pairs])


def build_vocab(train: Iterable[RelationStatement]) -> TokenVocabulary:
    """Specials first, then every training surface token in sorted order."""
    seen = set()
    for stmt in train:
        seen.update(stmt.tokens)
    seen.difference_update(SPECIAL_TOKENS)
    vocab = TokenVocabulary(SPECIAL_TOKENS + tuple(sorted(seen)))
    if len(vocab) == len(SPECIAL_TOKENS):
        raise ValueError("cannot build a vocabulary from an empty training split")
    return vocab


class SelfAttention(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.heads = cfg.heads
        self.qkv = nn.Linear(cfg.hidden_dim, 3 * cfg.hidden_dim)
        self.out = nn.Linear(cfg.hidden_dim, cfg.hidden_dim)
        self.dropout = cfg.dropout

    def forward(self, x, key_mask):
        B, L, D = x.shape
        q, k, v = self.qkv(x).view(B, L, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        attn_mask = key_mask[:, None, None, :]
        y = F.scaled_dot_product_attention(
            q, k, v, attn_mask=attn_mask, dropout_p=self.dropout if self.training else 0.0
        )
        return self.out(y.transpose(1, 2).reshape(B, L, D))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.hidden_dim)
        self.attn = SelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.hidden_dim)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.hidden_dim, cfg.ffn_dim),
            nn.GELU(),
            nn.Linear(cfg.ffn_dim, cfg.hidden_dim),
        )
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, key_mask):
        x = x + self.drop(self.attn(self.ln1(x), key_mask))
        return x + self.drop(self.ffn(self.ln2(x)))


class Encoder(nn.Module):
    """Token + absolute position embeddings, pre-norm blocks, final layer norm.

    Holds its own entity positional tables: a ``3 x d`` table summed into the
    input embeddings (``add_to_embedding``) and a ``3 x 12`` table appended to
    every output position (``concat_to_output``).
    """

    def __init__(self, cfg: EncoderConfig, vocab_size: int):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.tok_emb = nn.Embedding(vocab_size, cfg.hidden_dim)
        self.pos_emb = nn.Embedding(cfg.max_len, cfg.hidden_dim)
        self.ent_add = nn.Embedding(3, cfg.hidden_dim)
        self.ent_concat = nn.Embedding(3, cfg.pos_emb_dim_concat)
        self.emb_drop = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(cfg.hidden_dim)
        self.reset_parameters()

    def reset_parameters(self):
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.normal_(module.weight, std=0.02)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Embedding):
                nn.init.normal_(module.weight, std=0.02)
        nn.init.uniform_(self.ent_add.weight, -ENTITY_POS_INIT, ENTITY_POS_INIT)
        nn.init.uniform_(self.ent_concat.weight, -ENTITY_POS_INIT, ENTITY_POS_INIT)

    def forward(self, ids, mask, pos_mode: str = "null", entity_pos=None):
        B, L = ids.shape
        if L > self.cfg.max_len:
            raise ValueError(f"sequence length {L} exceeds max_len {self.cfg.max_len}")
        if pos_mode != "null" and entity_pos is None:
            raise ValueError(f"pos_mode {pos_mode!r} needs entity positional ids")
        positions = torch.arange(L, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(positions)[None]
        if pos_mode == "add_to_embedding":
            x = x + self.ent_add(entity_pos)
        x = self.emb_drop(x)
        for block in self.blocks:
            x = block(x, mask)
        h = self.ln_f(x)
        if pos_mode == "concat_to_output":
            h = torch.cat([h, self.ent_concat(entity_pos)], dim=-1)
        elif pos_mode not in ("null", "add_to_embedding"):
            raise ValueError(f"unknown pos_mode {pos_mode!r}")
        # padding rows are zeroed so nothing downstream can read or train through them
        return torch.where(mask[..., None], h, torch.zeros((), dtype=h.dtype))

    def parameters_for(self, pos_mode: str) -> list[nn.Parameter]:
        """Parameters that receive gradient under ``pos_mode``."""
        skip = set()
        if pos_mode != "add_to_embedding":
            skip.add(id(self.ent_add.weight))
        if pos_mode != "concat_to_output":
            skip.add(id(self.ent_concat.weight))
        return [p for p in self.parameters() if id(p) not in skip]


def pad_batch(seqs: Sequence[Sequence[int]], pad_value: int = 0):
    """Right-pad integer sequences; returns (ids, mask)."""
    L = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), L), pad_value, dtype=torch.long)
    mask = torch.zeros((len(seqs), L), dtype=torch.bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
        mask[i, : len(s)] = True
    return ids, mask


def encode(
    batch: Sequence[TransformedInput],
    pos_mode: str,
    positional_ids: Sequence[Sequence[int]] | None,
    encoder: Encoder,
    vocab: TokenVocabulary,
):
    """Run ``encoder`` over transformed inputs; returns (hidden, mask)."""
    if (positional_ids is not None) != (pos_mode != "null"):
        raise ValueError("positional ids must be supplied exactly when pos_mode is not 'null'")
    for ti in batch:
        if len(ti) > encoder.cfg.max_len:
            raise ValueError(f"sequence of length {len(ti)} exceeds max_len {encoder.cfg.max_len}")
    ids, mask = pad_batch([vocab.encode(ti.tokens) for ti in batch], vocab.pad_id)
    entity_pos = pad_batch(positional_ids)[0] if positional_ids is not None else None
    return encoder(ids, mask, pos_mode, entity_pos), mask


def named_tensors(module: nn.Module, prefix: str) -> dict[str, torch.Tensor]:
    return {f"{prefix}.{k}": v.detach().clone().contiguous() for k, v in module.state_dict().items()}


def save_checkpoint(tensors: dict[str, torch.Tensor], path: str | Path, meta: dict) -> None:
    """safetensors file whose metadata is one sorted JSON document.

    A single metadata key keeps the header bytes independent of hash order.
    """
    save_file(tensors, str(path), metadata={"meta": json.dumps(meta, sort_keys=True)})


def read_checkpoint_meta(path: str | Path) -> dict:
    with safe_open(str(path), framework="pt") as fh:
        return json.loads(fh.metadata()["meta"])


def save_encoder(encoder: Encoder, path: str | Path) -> None:
    meta = {"config": asdict(encoder.cfg), "vocab_size": encoder.vocab_size}
    save_checkpoint(named_tensors(encoder, "encoder"), path, meta)


def load_encoder(path: str | Path) -> Encoder:
    meta = read_checkpoint_meta(path)
    cfg = EncoderConfig(**meta["config"])
    encoder = Encoder(cfg, int(meta["vocab_size"]))
    tensors = load_file(str(path))
    encoder.load_state_dict({k.removeprefix("encoder."): v for k, v in tensors.items()})
    return encoder
