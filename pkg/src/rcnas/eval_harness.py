"""Evaluation phase: from-scratch training, hyper-parameter search, repeats, baselines."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import random
import statistics
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import torch

from .assembler import build_model
from .controller import Controller
from .encoder import EncoderConfig
from .pooling import DR_ITERS
from .search_engine import SearchConfig, SharedParameterStore, rank_candidates, search
from .search_space import (
    ArchitectureDescriptor,
    SearchSpace,
    baseline_preset,
    cardinality,
    is_valid,
    preset,
)
from .training import TaskData, TrainingDiverged, derive_seed, evaluate, steps_for, train_steps

log = logging.getLogger(__name__)

LR_GRID = (1e-3, 1e-4, 5e-5, 2e-5, 1e-5)
BATCH_GRID = (128, 64, 32, 16)
WARMUP_GRID = (0.5, 0.8, 1.0)  # warm-up length in epochs


@dataclass(frozen=True)
class HyperParamPoint:
    lr: float
    batch: int
    warmup_epochs: float

    def __post_init__(self):
        if self.lr not in LR_GRID or self.batch not in BATCH_GRID or self.warmup_epochs not in WARMUP_GRID:
            raise ValueError(f"{self} is not on the hyper-parameter grid")


def hp_grid() -> list[HyperParamPoint]:
    return [HyperParamPoint(*p) for p in itertools.product(LR_GRID, BATCH_GRID, WARMUP_GRID)]


DEFAULT_HP = HyperParamPoint(1e-3, 32, 0.5)


@dataclass(frozen=True)
class EvalConfig:
    n_hp_trials: int = 10
    n_repeats: int = 10
    n_evaluate: int = 5  # finalists trained from scratch per search
    epochs: int = 6  # desk-scale stand-in for "until convergence"
    random_models: int = 7
    random_runs: int = 3
    seed: int = 0


@dataclass
class RunOutcome:
    seed: int
    dev: float
    test: float
    best_epoch: int
    diverged: bool = False


@dataclass
class TrialResult:
    """Per-run scores of one architecture under one hyper-parameter point.

    ``std`` is the sample standard deviation of the test scores.
    """

    name: str
    descriptor: str
    hyperparams: dict | None
    seeds: list[int]
    dev_scores: list[float]
    test_scores: list[float]
    n_diverged: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.test_scores) if self.test_scores else float("nan")

    @property
    def std(self) -> float:
        return statistics.stdev(self.test_scores) if len(self.test_scores) > 1 else 0.0

    @property
    def n_runs(self) -> int:
        return len(self.test_scores)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(mean=self.mean, std=self.std, n_runs=self.n_runs)
        return out


def train_from_scratch(
    descriptor: ArchitectureDescriptor,
    data: TaskData,
    hp: HyperParamPoint,
    epochs: int,
    seed: int,
    encoder_cfg: EncoderConfig | None = None,
    dr_iters: int = DR_ITERS,
) -> RunOutcome:
    """Train a fresh model on the whole train split, validating once per epoch.

    Returns the best dev score and the test score of that epoch's weights.
    """
    cfg = encoder_cfg or EncoderConfig()
    model = build_model(descriptor, data.n_labels, len(data.vocab), cfg, derive_seed(seed, "init"), dr_iters)
    mode = descriptor.span_mode
    train, dev, test = (data.tensors(p, mode) for p in ("train", "dev", "test"))
    per_epoch = steps_for(len(train), hp.batch, 1)
    warmup = steps_for(len(train), hp.batch, hp.warmup_epochs)
    best = RunOutcome(seed, float("-inf"), float("nan"), -1)

    def on_step(step):
        if step % per_epoch:
            return
        dev_score = evaluate(model, dev, data)
        if dev_score > best.dev:
            best.dev, best.best_epoch = dev_score, step // per_epoch
            best.test = evaluate(model, test, data)

    try:
        train_steps(model, train, per_epoch * epochs, hp.batch, hp.lr, warmup,
                    derive_seed(seed, "train"), on_step=on_step)
    except TrainingDiverged as exc:
        log.warning("run seed=%d diverged: %s", seed, exc)
        return RunOutcome(seed, float("nan"), float("nan"), -1, diverged=True)
    return best


@dataclass
class HPSearchResult:
    best: HyperParamPoint
    trials: list[tuple[HyperParamPoint, RunOutcome]]


def hp_random_search(
    descriptor: ArchitectureDescriptor,
    data: TaskData,
    n_trials: int = 10,
    seed: int = 0,
    epochs: int = 6,
    encoder_cfg: EncoderConfig | None = None,
) -> HPSearchResult:
    """Train once at each of ``n_trials`` distinct grid points; best dev wins, ties to the earlier trial."""
    grid = hp_grid()
    rng = random.Random(derive_seed(seed, "hp"))
    points = rng.sample(grid, min(n_trials, len(grid)))
    points += [rng.choice(grid) for _ in range(n_trials - len(points))]
    trials = []
    best_i, best_dev = 0, float("-inf")
    for i, hp in enumerate(points):
        outcome = train_from_scratch(descriptor, data, hp, epochs, derive_seed(seed, "hp-trial", i), encoder_cfg)
        trials.append((hp, outcome))
        if not outcome.diverged and outcome.dev > best_dev:
            best_i, best_dev = i, outcome.dev
        log.info("hp trial %d %s dev=%.4f", i, hp, outcome.dev)
    return HPSearchResult(points[best_i], trials)


def repeat_runs(
    descriptor: ArchitectureDescriptor,
    hp: HyperParamPoint,
    data: TaskData,
    n: int = 10,
    seeds: Sequence[int] | None = None,
    epochs: int = 6,
    encoder_cfg: EncoderConfig | None = None,
    name: str = "",
) -> TrialResult:
    """``n`` independent from-scratch trainings; diverged runs are counted and left out."""
    if n < 2:
        raise ValueError("repeat_runs needs n >= 2")
    seeds = list(seeds) if seeds is not None else list(range(n))
    if len(seeds) != n:
        raise ValueError(f"expected {n} seeds, got {len(seeds)}")
    devs, tests, diverged = [], [], 0
    for s in seeds:
        outcome = train_from_scratch(descriptor, data, hp, epochs, s, encoder_cfg)
        if outcome.diverged:
            diverged += 1
            continue
        devs.append(outcome.dev)
        tests.append(outcome.test)
    return TrialResult(name or descriptor.to_index_string(), descriptor.to_index_string(),
                       asdict(hp), seeds, devs, tests, diverged)


def evaluate_descriptor(
    descriptor: ArchitectureDescriptor,
    data: TaskData,
    cfg: EvalConfig,
    encoder_cfg: EncoderConfig | None = None,
    name: str = "",
) -> TrialResult:
    """Hyper-parameter search followed by repeated runs at the winning point."""
    hps = hp_random_search(descriptor, data, cfg.n_hp_trials, derive_seed(cfg.seed, "hps", descriptor),
                           cfg.epochs, encoder_cfg)
    seeds = [derive_seed(cfg.seed, "repeat", descriptor, i) for i in range(cfg.n_repeats)]
    result = repeat_runs(descriptor, hps.best, data, cfg.n_repeats, seeds, cfg.epochs, encoder_cfg, name)
    result.extra["hp_trials"] = [
        {**asdict(hp), "dev": o.dev, "diverged": o.diverged} for hp, o in hps.trials
    ]
    return result


def random_search_baseline(
    space: SearchSpace,
    data: TaskData,
    cfg: EvalConfig,
    encoder_cfg: EncoderConfig | None = None,
    hp: HyperParamPoint = DEFAULT_HP,
) -> TrialResult:
    """Best-of-``random_models`` architectures from an untrained controller, averaged over runs.

    Within a run the best model is picked by dev score; its test score is the
    run's value.
    """
    torch.manual_seed(derive_seed(cfg.seed, "random-controller"))
    controller = Controller(space)
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "random-search"))
    accept = lambda idx: is_valid(idx, space)
    devs, tests, seeds, picks, trainings = [], [], [], [], 0
    for run in range(cfg.random_runs):
        best = None
        for m in range(cfg.random_models):
            desc = controller.sample(gen, accept).descriptor()
            seed = derive_seed(cfg.seed, "random", run, m)
            outcome = train_from_scratch(desc, data, hp, cfg.epochs, seed, encoder_cfg)
            trainings += 1
            if not outcome.diverged and (best is None or outcome.dev > best[1].dev):
                best = (desc, outcome)
        if best is None:
            continue
        picks.append(best[0].to_index_string())
        seeds.append(best[1].seed)
        devs.append(best[1].dev)
        tests.append(best[1].test)
    return TrialResult("random search", ";".join(picks), asdict(hp), seeds, devs, tests,
                       cfg.random_runs - len(tests), {"trainings": trainings})


@dataclass
class SearchedArchitecture:
    space: str
    finalists: list[str]
    chosen: str
    result: TrialResult
    store: SharedParameterStore | None = field(default=None, repr=False, compare=False)


def search_and_evaluate(
    space: SearchSpace,
    data: TaskData,
    search_cfg: SearchConfig,
    eval_cfg: EvalConfig,
    encoder_cfg: EncoderConfig | None = None,
    name: str | None = None,
) -> SearchedArchitecture:
    """Search ``space``, then evaluate the top ``n_evaluate`` finalists; keep the best by dev."""
    res = search(search_cfg, space, data, encoder_cfg)
    finalists = rank_candidates(res.controller, res.store, space, data, search_cfg.n_final,
                                search_cfg.n_finalists, search_cfg.seed)
    res.log.ranking = finalists
    results = [
        evaluate_descriptor(c.descriptor, data, eval_cfg, encoder_cfg, name=name or space.name)
        for c in finalists[: eval_cfg.n_evaluate]
    ]
    best = max(range(len(results)), key=lambda i: (statistics.fmean(results[i].dev_scores or [float("-inf")]), -i))
    out = SearchedArchitecture(space.name, [c.descriptor.to_index_string() for c in finalists],
                               finalists[best].descriptor.to_index_string(), results[best], res.store)
    out.result.extra["search_rewards"] = res.log.rewards()
    return out


@dataclass
class Report:
    """Rows of (model, task) results, renderable as CSV or JSON."""

    task: str
    rows: list[TrialResult] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "task", "mean", "std", "n_runs", "n_diverged", "lr", "batch",
                    "warmup_epochs", "descriptor"])
        for row in self.rows:
            hp = row.hyperparams or {}
            w.writerow([row.name, self.task, f"{row.mean:.6f}", f"{row.std:.6f}", row.n_runs,
                        row.n_diverged, hp.get("lr", ""), hp.get("batch", ""), hp.get("warmup_epochs", ""),
                        row.descriptor])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"task": self.task, "meta": self.meta, "rows": [r.to_dict() for r in self.rows]}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        lines = [f"task: {self.task}"]
        lines += [f"{k}: {v}" for k, v in self.meta.items()]
        width = max([len(r.name) for r in self.rows] + [5])
        lines.append(f"{'model':<{width}}  mean +- std (sample)  runs")
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {100 * r.mean:6.2f} +- {100 * r.std:5.3f}       {r.n_runs}")
        return "\n".join(lines) + "\n"


ABLATION_ORDER = (
    "SS",
    "SS-no_inte",
    "SS-no_inte-start_pool",
    "SS-no_inte-start_pool-no_contexts",
    "BASELINE",
)


def ablation_run(
    data: TaskData,
    restrictions: Sequence[str],
    search_cfg: SearchConfig,
    eval_cfg: EvalConfig,
    encoder_cfg: EncoderConfig | None = None,
) -> Report:
    """Full search + evaluation per named space; the BASELINE row skips the search."""
    unknown = [r for r in restrictions if r not in ABLATION_ORDER]
    if unknown:
        raise KeyError(f"unknown restriction(s): {unknown}")
    report = Report(data.name)
    for name in sorted(restrictions, key=ABLATION_ORDER.index):
        space = preset(name)
        report.meta[f"cardinality[{name}]"] = cardinality(space)
        if name == "BASELINE":
            report.rows.append(evaluate_descriptor(baseline_preset(), data, eval_cfg, encoder_cfg, "BASELINE"))
        else:
            report.rows.append(search_and_evaluate(space, data, search_cfg, eval_cfg, encoder_cfg, name).result)
    return report


def copies_ablation(
    data: TaskData,
    copies: Sequence[int],
    search_cfg: SearchConfig,
    eval_cfg: EvalConfig,
    encoder_cfg: EncoderConfig | None = None,
    space_name: str = "SS",
) -> Report:
    """Search and evaluation once per number of encoder copies."""
    report = Report(data.name, meta={"space": space_name})
    for k in copies:
        cfg = replace(search_cfg, n_copies=k)
        row = search_and_evaluate(preset(space_name), data, cfg, eval_cfg, encoder_cfg, name=f"copies={k}").result
        report.rows.append(row)
    return report
