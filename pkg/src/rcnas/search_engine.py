"""The interleaved search phase: shared child training, rewards, controller updates."""

from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import torch
import torch.nn as nn

from .assembler import AssembledModel, SlotClassifier
from .controller import Controller, ReinforceTrainer, save_controller
from .encoder import Encoder, EncoderConfig, named_tensors, save_checkpoint
from .pooling import DR_ITERS, PoolerBank
from .search_space import ArchitectureDescriptor, SearchSpace, canonicalize, is_valid
from .training import TaskData, TrainingDiverged, derive_seed, evaluate, steps_for, train_steps

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchConfig:
    """Search-phase settings. Defaults are the published protocol values
    except the child learning rate and batch size, which are desk-scale picks.
    """

    n_d: int = 100  # interleaving iterations
    n_c: float = 0.5  # child training epochs per iteration (0.5 or 1)
    r: float = 0.5  # share of the train split each child sees
    n_rollouts: int = 1  # N architectures rewarded per controller update
    n_final: int = 30  # N_f candidates sampled after search
    n_finalists: int = 5  # N_e top candidates kept
    n_copies: int = 3  # K encoder copies
    child_lr: float = 1e-3
    child_batch: int = 32
    warmup_epochs: float = 0.3
    controller_lr: float = 1e-4
    controller_optimizer: str = "adam"
    baseline_decay: float = 0.9
    entropy_coef: float = 0.0
    dr_iters: int = DR_ITERS
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.r <= 1:
            raise ValueError(f"r must be in (0, 1], got {self.r}")
        if self.n_finalists > self.n_final:
            raise ValueError("n_finalists cannot exceed n_final")
        if self.n_copies < 1 or self.n_rollouts < 1 or self.n_d < 0:
            raise ValueError("n_copies and n_rollouts must be >= 1, n_d >= 0")


class SharedParameterStore(nn.Module):
    """K encoder copies plus one pooler bank and one slot classifier.

    Every parameter any descriptor could need exists from construction.
    ``versions[k]`` counts the child trainings written into copy ``k``;
    ``reads`` counts child assemblies, so callers can prove they never
    touched the store.
    """

    def __init__(self, cfg: EncoderConfig, vocab_size: int, n_labels: int, n_copies: int = 3,
                 seed: int = 0, dr_iters: int = DR_ITERS):
        super().__init__()
        state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        try:
            self.encoders = nn.ModuleList(Encoder(cfg, vocab_size) for _ in range(n_copies))
            self.poolers = PoolerBank(cfg.widths, dr_iters)
            self.classifier = SlotClassifier(n_labels, cfg.widths)
        finally:
            torch.random.set_rng_state(state)
        self.cfg = cfg
        self.versions = [0] * n_copies
        self.reads = 0

    @property
    def n_copies(self) -> int:
        return len(self.encoders)

    def assemble(self, descriptor: ArchitectureDescriptor, copy: int) -> AssembledModel:
        self.reads += 1
        return AssembledModel(descriptor, self.encoders[copy], self.poolers, self.classifier)

    def named_tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for k, enc in enumerate(self.encoders):
            out.update(named_tensors(enc, f"phi.{k}.encoder"))
        out.update(named_tensors(self.poolers.pools, "pooler"))
        out.update(named_tensors(self.classifier.weights, "classifier"))
        out["classifier.bias"] = self.classifier.bias.detach().clone()
        return out

    def state_bytes(self) -> bytes:
        """Canonical byte image of all parameters (for equality checks)."""
        tensors = self.named_tensors()
        return b"".join(k.encode() + tensors[k].numpy().tobytes() for k in sorted(tensors))

    def save(self, path: str | Path) -> None:
        save_checkpoint(self.named_tensors(), path, {"config": asdict(self.cfg), "versions": self.versions})


@dataclass
class StepResult:
    copy: int
    steps: int
    loss: float
    diverged: bool = False


def child_step(
    store: SharedParameterStore,
    descriptor: ArchitectureDescriptor,
    data: TaskData,
    cfg: SearchConfig,
    seed: int,
    copy: int | None = None,
) -> StepResult:
    """Train one child on a fresh ``r`` share of the training data, writing back into ``store``.

    The encoder copy is drawn uniformly from ``seed`` unless given. On a
    non-finite loss the touched parameters are restored and the result is
    flagged ``diverged``.
    """
    rng = random.Random(derive_seed(seed, "child"))
    if copy is None:
        copy = rng.randrange(store.n_copies)
    train = data.tensors("train", descriptor.span_mode)
    n_sub = max(1, round(cfg.r * len(train)))
    subset = sorted(rng.sample(range(len(train)), n_sub))
    n_steps = steps_for(n_sub, cfg.child_batch, cfg.n_c)
    warmup = steps_for(n_sub, cfg.child_batch, cfg.warmup_epochs)
    model = store.assemble(descriptor, copy)
    params = model.trainable_parameters()
    snapshot = [p.detach().clone() for p in params]
    try:
        losses = train_steps(model, train, n_steps, cfg.child_batch, cfg.child_lr, warmup,
                             derive_seed(seed, "train"), pool=subset)
    except TrainingDiverged as exc:
        log.warning("child %s diverged on copy %d: %s", descriptor, copy, exc)
        with torch.no_grad():
            for p, saved in zip(params, snapshot):
                p.copy_(saved)
        return StepResult(copy, n_steps, math.nan, diverged=True)
    store.versions[copy] += 1
    return StepResult(copy, n_steps, losses[-1])


def reward(
    store: SharedParameterStore,
    descriptor: ArchitectureDescriptor,
    data: TaskData,
    copy: int,
    part: str = "dev",
) -> float:
    """Dev metric of the child built from the store; changes nothing."""
    dev = data.tensors(part, descriptor.span_mode)
    if len(dev) == 0:
        raise ValueError("reward needs non-empty dev data")
    model = store.assemble(descriptor, copy)
    return evaluate(model, dev, data)


@dataclass
class IterationRecord:
    iteration: int
    descriptor: str
    copy: int
    reward: float | None
    baseline: float | None
    controller_loss: float | None
    diverged: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class Candidate:
    descriptor: ArchitectureDescriptor
    score: float
    copy_scores: tuple[float, ...]
    sample_order: int

    def to_dict(self) -> dict:
        return {
            "descriptor": self.descriptor.to_index_string(),
            "score": self.score,
            "copy_scores": list(self.copy_scores),
            "sample_order": self.sample_order,
        }


@dataclass
class SearchLog:
    records: list[IterationRecord] = field(default_factory=list)
    ranking: list[Candidate] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)

    def append(self, record: IterationRecord, wall: float = 0.0) -> None:
        self.records.append(record)
        self.wall_times.append(wall)

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def rewards(self) -> list[float | None]:
        return [r.reward for r in self.records]


@dataclass
class SearchResult:
    trainer: ReinforceTrainer
    store: SharedParameterStore | None
    log: SearchLog

    @property
    def controller(self) -> Controller:
        return self.trainer.controller


def _accept(space: SearchSpace):
    return lambda indices: is_valid(indices, space)


def search(
    cfg: SearchConfig,
    space: SearchSpace,
    data: TaskData | None,
    encoder_cfg: EncoderConfig | None = None,
    reward_fn: Callable[[tuple[int, ...]], float] | None = None,
) -> SearchResult:
    """Run ``cfg.n_d`` iterations of sample -> child_step -> reward -> update.

    With ``reward_fn`` the children are skipped and the reward is computed
    from the sampled indices alone (a test harness for the controller loop);
    ``data`` may then be ``None``.
    """
    torch.manual_seed(derive_seed(cfg.seed, "controller-init"))
    controller = Controller(space)
    trainer = ReinforceTrainer(controller, cfg.controller_lr, cfg.controller_optimizer,
                               cfg.baseline_decay, cfg.entropy_coef)
    store = None
    if reward_fn is None:
        if data is None:
            raise ValueError("search needs task data unless a reward_fn is given")
        store = SharedParameterStore(encoder_cfg or EncoderConfig(), len(data.vocab), data.n_labels,
                                     cfg.n_copies, derive_seed(cfg.seed, "store"), cfg.dr_iters)
    sampler = torch.Generator().manual_seed(derive_seed(cfg.seed, "sampler"))
    copy_rng = random.Random(derive_seed(cfg.seed, "copies"))
    accept = _accept(space) if space.is_rc_space else None
    slog = SearchLog()
    for it in range(cfg.n_d):
        t0 = time.perf_counter()
        copy = copy_rng.randrange(cfg.n_copies)
        rollouts = [controller.sample(sampler, accept) for _ in range(cfg.n_rollouts)]
        trained = rollouts[0]
        diverged = False
        if reward_fn is not None:
            rewards = [float(reward_fn(r.indices)) for r in rollouts]
        else:
            step = child_step(store, trained.descriptor(), data, cfg, derive_seed(cfg.seed, "iter", it), copy)
            diverged = step.diverged
            rewards = [] if diverged else [reward(store, r.descriptor(), data, copy) for r in rollouts]
        if diverged:
            slog.append(IterationRecord(it, ",".join(map(str, trained.indices)), copy, None,
                                        trainer.baseline.value, None, True), time.perf_counter() - t0)
            continue
        loss = trainer.update(rollouts, rewards)
        for r, value in zip(rollouts, rewards):
            r.reward = value
        slog.append(
            IterationRecord(it, ",".join(map(str, trained.indices)), copy, rewards[0],
                            trainer.baseline.value, loss),
            time.perf_counter() - t0,
        )
        log.info("iter %d copy %d reward %.4f baseline %.4f", it, copy, rewards[0], trainer.baseline.value)
    return SearchResult(trainer, store, slog)


def rank_candidates(
    controller: Controller,
    store: SharedParameterStore,
    space: SearchSpace,
    data: TaskData,
    n_final: int,
    n_finalists: int,
    seed: int,
) -> list[Candidate]:
    """Sample ``n_final`` architectures, dedupe them, keep the ``n_finalists`` best.

    Each distinct (canonicalised) descriptor scores the mean dev metric over
    all encoder copies; ties keep the earlier sample.
    """
    gen = torch.Generator().manual_seed(derive_seed(seed, "rank"))
    accept = _accept(space)
    seen: dict[ArchitectureDescriptor, int] = {}
    for _ in range(n_final):
        desc = canonicalize(controller.sample(gen, accept).descriptor(), space)
        seen.setdefault(desc, len(seen))
    candidates = []
    for desc, order in seen.items():
        scores = tuple(reward(store, desc, data, k) for k in range(store.n_copies))
        candidates.append(Candidate(desc, sum(scores) / len(scores), scores, order))
    candidates.sort(key=lambda c: (-c.score, c.sample_order))
    if len(candidates) < n_finalists:
        log.warning("only %d distinct candidates for %d finalist slots", len(candidates), n_finalists)
    return candidates[:n_finalists]


def save_search(result: SearchResult, directory: str | Path, timings: bool = False) -> None:
    """Write controller, store, iteration log and the ranking.

    Wall times vary between runs, so they go to ``wall_times.txt`` only when
    ``timings`` is set; everything else is byte-reproducible for a fixed seed.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_controller(result.trainer, directory / "controller.safetensors")
    if result.store is not None:
        result.store.save(directory / "store.safetensors")
    (directory / "search_log.jsonl").write_text(result.log.to_jsonl(), encoding="utf-8")
    if timings:
        (directory / "wall_times.txt").write_text(
            "".join(f"{i}\t{t:.3f}\n" for i, t in enumerate(result.log.wall_times)), encoding="utf-8"
        )
    ranking = [c.to_dict() for c in result.log.ranking]
    (directory / "ranking.json").write_text(json.dumps(ranking, indent=2) + "\n", encoding="utf-8")
    (directory / "finalists.txt").write_text(
        "".join(c.descriptor.to_index_string() + "\n" for c in result.log.ranking), encoding="utf-8"
    )
