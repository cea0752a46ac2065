"""Optimisation and scoring loops shared by the search and evaluation phases."""

from __future__ import annotations

import hashlib
import math
from typing import Sequence

import torch
import torch.nn.functional as F

from .assembler import AssembledModel, Batch, prepare_batch
from .corpus import DatasetSplit, get_metric
from .encoder import TokenVocabulary, build_vocab

GRAD_CLIP = 1.0
EVAL_BATCH = 256


class TrainingDiverged(RuntimeError):
    pass


def derive_seed(seed: int, *tags) -> int:
    """Stable 63-bit seed for a named sub-stream of ``seed``."""
    text = ":".join(str(t) for t in (seed, *tags))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


class TaskData:
    """A dataset split plus its vocabulary, tensorised lazily per span mode."""

    def __init__(
        self,
        split: DatasetSplit,
        vocab: TokenVocabulary | None = None,
        max_len: int = 128,
        metric: str = "micro_f1",
        name: str = "task",
    ):
        self.split = split
        self.schema = split.schema
        self.vocab = vocab or build_vocab(split.train)
        self.max_len = max_len
        self.metric_name = metric
        self.metric = get_metric(metric)
        self.name = name
        self._cache: dict[tuple[str, str], Batch] = {}

    @property
    def n_labels(self) -> int:
        return len(self.schema.labels)

    def tensors(self, part: str, mode: str) -> Batch:
        key = (part, mode)
        if key not in self._cache:
            stmts = getattr(self.split, part)
            if not stmts:
                raise ValueError(f"{self.name}: the {part} split is empty")
            self._cache[key] = prepare_batch(stmts, mode, self.vocab, self.schema, self.max_len)
        return self._cache[key]


def steps_for(n_examples: int, batch_size: int, epochs: float) -> int:
    return max(1, math.ceil(epochs * n_examples / batch_size))


def warmup_decay(step: int, warmup: int, total: int) -> float:
    """Linear warmup to 1 over ``warmup`` steps, then linear decay to 0 at ``total``."""
    if step < warmup:
        return (step + 1) / warmup
    return max(0.0, (total - step) / max(1, total - warmup))


def train_steps(
    model: AssembledModel,
    data: Batch,
    n_steps: int,
    batch_size: int,
    lr: float,
    warmup_steps: int,
    seed: int,
    pool: Sequence[int] | None = None,
    on_step=None,
) -> list[float]:
    """Run ``n_steps`` AdamW steps over shuffled mini-batches of ``pool``.

    ``pool`` restricts training to those example indices (default: all).
    Raises :class:`TrainingDiverged` on a non-finite loss. ``on_step(step)``
    is called after every update.
    """
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(derive_seed(seed, "dropout"))
    pool_t = torch.arange(len(data)) if pool is None else torch.as_tensor(pool, dtype=torch.long)
    params = model.trainable_parameters()
    opt = torch.optim.AdamW(params, lr=lr, weight_decay=0.0)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: warmup_decay(s, warmup_steps, n_steps))
    model.train()
    losses = []
    order = pool_t[torch.randperm(len(pool_t), generator=gen)]
    cursor = 0
    for step in range(n_steps):
        if cursor + batch_size > len(order) and cursor > 0:
            order = pool_t[torch.randperm(len(pool_t), generator=gen)]
            cursor = 0
        idx = order[cursor : cursor + batch_size]
        cursor += batch_size
        mb = data.subset(idx)
        loss = F.cross_entropy(model(mb), mb.labels)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, GRAD_CLIP)
        opt.step()
        sched.step()
        losses.append(loss.item())
        if on_step is not None:
            on_step(step + 1)
    model.eval()
    return losses


@torch.no_grad()
def predict(model: AssembledModel, data: Batch, batch_size: int = EVAL_BATCH) -> torch.Tensor:
    """Argmax label ids; ties go to the lowest label index."""
    was_training = model.training
    model.eval()
    lengths = data.mask.sum(dim=1)
    order = torch.argsort(lengths, stable=True)
    preds = torch.empty(len(data), dtype=torch.long)
    for i in range(0, len(data), batch_size):
        idx = order[i : i + batch_size]
        preds[idx] = model(data.subset(idx)).argmax(dim=-1)
    model.train(was_training)
    return preds


def evaluate(model: AssembledModel, data: Batch, task: TaskData) -> float:
    preds = predict(model, data)
    labels = task.schema.labels
    gold = [labels[i] for i in data.labels.tolist()]
    pred = [labels[i] for i in preds.tolist()]
    return task.metric(gold, pred, task.schema)
