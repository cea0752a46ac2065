"""Turn an architecture descriptor into a runnable relation classifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn

from .corpus import LabelSchema, RelationStatement
from .encoder import Encoder, EncoderConfig, TokenVocabulary, pad_batch
from .pooling import DR_ITERS, PoolerBank
from .preprocess import SEGMENT_ORDER, positional_ids, segment_map, transform, truncate
from .search_space import CONTEXTS, ArchitectureDescriptor, baseline_preset

__all__ = [
    "SLOT_NAMES",
    "AssembledModel",
    "Batch",
    "SlotClassifier",
    "active_slots",
    "baseline_preset",
    "build_model",
    "interact",
    "prepare_batch",
]

SLOT_NAMES = (
    "e1", "e2", "c0", "c1", "c2",
    "inter_e1e2",
    "inter_e1_c0", "inter_e2_c0",
    "inter_e1_c1", "inter_e2_c1",
    "inter_e1_c2", "inter_e2_c2",
)


def active_slots(descriptor: ArchitectureDescriptor, width: int) -> list[tuple[str, int]]:
    """Feature slots the descriptor turns on, in fixed slot order, each ``width`` wide."""
    on = {seg for seg in SEGMENT_ORDER if descriptor.uses(seg)}
    if descriptor.inter_e1e2 != "null":
        on.add("inter_e1e2")
    for ctx in CONTEXTS:
        if descriptor.inter_ent(ctx) != "null":
            on.update((f"inter_e1_{ctx}", f"inter_e2_{ctx}"))
    if not on:
        raise ValueError("descriptor selects no classifier input")
    return [(name, width) for name in SLOT_NAMES if name in on]


def interact(op: str, u, v):
    """``dot`` is the elementwise product, ``minus`` the elementwise absolute difference."""
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"width mismatch: {u.shape[-1]} vs {v.shape[-1]}")
    if op == "dot":
        return u * v
    if op == "minus":
        return (u - v).abs()
    raise ValueError(f"unknown interaction {op!r}")


@dataclass
class Batch:
    """Padded, tensorised statements for one span mode.

    ``segments`` is ``[B, 5, 2]`` with rows in ``SEGMENT_ORDER`` (e1, e2, c0,
    c1, c2) holding half-open ``(start, end)`` ranges.
    """

    ids: torch.Tensor
    mask: torch.Tensor
    entity_pos: torch.Tensor
    segments: torch.Tensor
    labels: torch.Tensor
    mode: str

    def __len__(self) -> int:
        return self.ids.shape[0]

    def subset(self, index) -> "Batch":
        index = torch.as_tensor(index, dtype=torch.long)
        mask = self.mask[index]
        L = int(mask.sum(dim=1).max()) if len(index) else 1
        return Batch(
            self.ids[index, :L],
            mask[:, :L],
            self.entity_pos[index, :L],
            self.segments[index],
            self.labels[index],
            self.mode,
        )


def prepare_batch(
    statements: Sequence[RelationStatement],
    mode: str,
    vocab: TokenVocabulary,
    schema: LabelSchema,
    max_len: int,
) -> Batch:
    ids, pos, segs, labels = [], [], [], []
    for stmt in statements:
        ti = truncate(transform(stmt, mode), max_len)
        smap = segment_map(ti)
        ids.append(vocab.encode(ti.tokens))
        pos.append(positional_ids(ti))
        segs.append([smap[s] for s in SEGMENT_ORDER])
        labels.append(schema.index(stmt.label))
    id_tensor, mask = pad_batch(ids, vocab.pad_id)
    pos_tensor, _ = pad_batch(pos, 0)
    return Batch(
        id_tensor,
        mask,
        pos_tensor,
        torch.tensor(segs, dtype=torch.long).reshape(len(statements), len(SEGMENT_ORDER), 2),
        torch.tensor(labels, dtype=torch.long),
        mode,
    )


class SlotClassifier(nn.Module):
    """Linear softmax classifier split into per-slot weight blocks.

    ``logits = bias + sum over active slots of W[slot, width] @ v_slot``; for a
    fixed descriptor this is one linear layer over the concatenated slots.
    """

    def __init__(self, n_labels: int, widths: Sequence[int]):
        super().__init__()
        self.n_labels = n_labels
        self.widths = tuple(widths)
        self.weights = nn.ModuleDict(
            {
                slot: nn.ParameterDict(
                    {str(D): nn.Parameter(torch.randn(n_labels, D) * 0.02) for D in self.widths}
                )
                for slot in SLOT_NAMES
            }
        )
        self.bias = nn.Parameter(torch.zeros(n_labels))

    def weight(self, slot: str, width: int) -> nn.Parameter:
        return self.weights[slot][str(width)]


class AssembledModel(nn.Module):
    """A child classifier wired from shared (or private) components."""

    def __init__(
        self,
        descriptor: ArchitectureDescriptor,
        encoder: Encoder,
        poolers: PoolerBank,
        classifier: SlotClassifier,
    ):
        super().__init__()
        self.descriptor = descriptor
        self.encoder = encoder
        self.poolers = poolers
        self.classifier = classifier
        self.width = encoder.cfg.output_width(descriptor.pos_emb_mode)
        self.slots = active_slots(descriptor, self.width)

    def pooled(self, batch: Batch) -> dict[str, torch.Tensor]:
        d = self.descriptor
        if batch.mode != d.span_mode:
            raise ValueError(f"batch prepared with {batch.mode!r}, descriptor wants {d.span_mode!r}")
        pos_mode = d.pos_emb_mode
        hidden = self.encoder(batch.ids, batch.mask, pos_mode, batch.entity_pos if pos_mode != "null" else None)
        out = {}
        for seg in d.needed_segments():
            row = SEGMENT_ORDER.index(seg)
            start, end = batch.segments[:, row, 0], batch.segments[:, row, 1]
            out[seg] = self.poolers.pool(seg, d.pool_kind(seg), hidden, start, end)
        return out

    def slot_vectors(self, batch: Batch) -> list[tuple[str, torch.Tensor]]:
        d = self.descriptor
        pooled = self.pooled(batch)
        vectors = []
        for slot, _ in self.slots:
            if slot in pooled and not slot.startswith("inter"):
                vec = pooled[slot]
            elif slot == "inter_e1e2":
                vec = interact(d.inter_e1e2, pooled["e1"], pooled["e2"])
            else:
                _, ent, ctx = slot.split("_")
                vec = interact(d.inter_ent(ctx), pooled[ent], pooled[ctx])
            vectors.append((slot, vec))
        return vectors

    def representation(self, batch: Batch):
        """The concatenated relation vector fed to the classifier."""
        return torch.cat([v for _, v in self.slot_vectors(batch)], dim=-1)

    def forward(self, batch: Batch):
        logits = self.classifier.bias
        for slot, vec in self.slot_vectors(batch):
            logits = logits + vec @ self.classifier.weight(slot, self.width).T
        return logits

    def trainable_parameters(self) -> list[nn.Parameter]:
        """Exactly the parameters this descriptor reads."""
        d = self.descriptor
        params = list(self.encoder.parameters_for(d.pos_emb_mode))
        for seg in d.needed_segments():
            p = self.poolers.params(seg, d.pool_kind(seg), self.width)
            if p is not None:
                params.append(p)
        params += [self.classifier.weight(slot, self.width) for slot, _ in self.slots]
        params.append(self.classifier.bias)
        return params


def build_model(
    descriptor: ArchitectureDescriptor,
    n_labels: int,
    vocab_size: int,
    cfg: EncoderConfig,
    seed: int,
    dr_iters: int = DR_ITERS,
) -> AssembledModel:
    """A freshly initialised standalone model (no shared parameters)."""
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        encoder = Encoder(cfg, vocab_size)
        poolers = PoolerBank(cfg.widths, dr_iters)
        classifier = SlotClassifier(n_labels, cfg.widths)
    finally:
        torch.random.set_rng_state(gen_state)
    return AssembledModel(descriptor, encoder, poolers, classifier)
