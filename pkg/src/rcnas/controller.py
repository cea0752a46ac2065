"""Recurrent policy over search-space dimensions, trained with REINFORCE."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import torch
import torch.nn as nn
from safetensors.torch import load_file

from .encoder import read_checkpoint_meta, save_checkpoint
from .search_space import ArchitectureDescriptor, DecisionDim, SearchSpace, validate

HIDDEN = 64
EMBED = 32
BASELINE_DECAY = 0.9


@dataclass
class PolicyRollout:
    """One sampled architecture with its per-dimension log-probabilities.

    ``indices`` point into each dimension's full option list; ``choices`` are
    the positions within the allowed options that the policy actually emitted.
    """

    indices: tuple[int, ...]
    choices: tuple[int, ...]
    log_probs: tuple[float, ...]
    reward: float | None = None

    @property
    def log_prob(self) -> float:
        return math.fsum(self.log_probs)

    def descriptor(self) -> ArchitectureDescriptor:
        return ArchitectureDescriptor(self.indices)


@dataclass
class BaselineState:
    """Exponential moving average of rewards, seeded with the first reward seen."""

    value: float | None = None
    decay: float = BASELINE_DECAY

    def current(self, rewards: Sequence[float]) -> float:
        return sum(rewards) / len(rewards) if self.value is None else self.value

    def update(self, rewards: Sequence[float]) -> float:
        mean = sum(rewards) / len(rewards)
        if self.value is None:
            self.value = mean
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * mean
        return self.value


class Controller(nn.Module):
    """Single-layer LSTM that emits one categorical decision per dimension.

    Step 0 reads a learned start embedding; step ``t`` reads the embedding of
    the option chosen at step ``t - 1``. Head ``t`` maps the hidden state to
    logits over dimension ``t``'s allowed options. Heads start at zero, so the
    untrained policy is uniform.
    """

    def __init__(self, space: SearchSpace, hidden: int = HIDDEN, embed: int = EMBED):
        super().__init__()
        self.space = space
        self.sizes = tuple(d.cardinality for d in space.dims)
        self.hidden = hidden
        self.cell = nn.LSTMCell(embed, hidden)
        self.start = nn.Parameter(torch.empty(1, embed))
        self.inputs = nn.ModuleList(nn.Embedding(m, embed) for m in self.sizes[:-1])
        self.heads = nn.ModuleList(nn.Linear(hidden, m) for m in self.sizes)
        self.reset_parameters()

    def reset_parameters(self):
        nn.init.uniform_(self.start, -0.1, 0.1)
        for emb in self.inputs:
            nn.init.uniform_(emb.weight, -0.1, 0.1)
        for name, p in self.cell.named_parameters():
            if name.startswith("weight_hh"):
                for gate in p.data.chunk(4, dim=0):
                    nn.init.orthogonal_(gate)
            elif name.startswith("weight_ih"):
                nn.init.uniform_(p, -0.1, 0.1)
            else:
                nn.init.zeros_(p)
        for head in self.heads:
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def check_space(self, space: SearchSpace) -> None:
        if space.names != self.space.names or tuple(d.cardinality for d in space.dims) != self.sizes:
            raise ValueError(f"controller heads do not match space {space.name!r}")

    # teacher-forced scoring

    def step_log_probs(self, choices: torch.Tensor) -> list[torch.Tensor]:
        """Per-dimension log-softmax tables for a ``[N, T]`` tensor of choices."""
        n = choices.shape[0]
        h = torch.zeros(n, self.hidden)
        c = torch.zeros(n, self.hidden)
        x = self.start.expand(n, -1)
        tables = []
        for t, head in enumerate(self.heads):
            h, c = self.cell(x, (h, c))
            tables.append(torch.log_softmax(head(h), dim=-1))
            if t + 1 < len(self.heads):
                x = self.inputs[t](choices[:, t])
        return tables

    def log_prob_tensor(self, choices: torch.Tensor) -> torch.Tensor:
        """Differentiable total log-probability, shape ``[N]``."""
        tables = self.step_log_probs(choices)
        picked = [tab.gather(1, choices[:, t : t + 1]).squeeze(1) for t, tab in enumerate(tables)]
        return torch.stack(picked, dim=1).sum(dim=1)

    def to_choices(self, indices: Sequence[int]) -> tuple[int, ...]:
        validate(indices, self.space)
        return tuple(dim.allowed.index(i) for dim, i in zip(self.space.dims, indices))

    def to_indices(self, choices: Sequence[int]) -> tuple[int, ...]:
        return tuple(dim.allowed[c] for dim, c in zip(self.space.dims, choices))

    @torch.no_grad()
    def log_prob(self, descriptor: ArchitectureDescriptor | Sequence[int]) -> float:
        """Exact log-probability of ``descriptor`` under the current policy."""
        indices = descriptor.indices if isinstance(descriptor, ArchitectureDescriptor) else tuple(descriptor)
        choices = torch.tensor([self.to_choices(indices)])
        return float(self.log_prob_tensor(choices)[0])

    # sampling

    @torch.no_grad()
    def sample_batch(self, n: int, generator: torch.Generator) -> list[PolicyRollout]:
        h = torch.zeros(n, self.hidden)
        c = torch.zeros(n, self.hidden)
        x = self.start.expand(n, -1)
        picks, logps = [], []
        for t, head in enumerate(self.heads):
            h, c = self.cell(x, (h, c))
            logp = torch.log_softmax(head(h), dim=-1)
            choice = torch.multinomial(logp.exp(), 1, generator=generator).squeeze(1)
            picks.append(choice)
            logps.append(logp.gather(1, choice[:, None]).squeeze(1))
            if t + 1 < len(self.heads):
                x = self.inputs[t](choice)
        picks_t = torch.stack(picks, dim=1).tolist()
        logps_t = torch.stack(logps, dim=1).double().tolist()
        return [
            PolicyRollout(self.to_indices(p), tuple(p), tuple(lp)) for p, lp in zip(picks_t, logps_t)
        ]

    def sample(
        self,
        generator: torch.Generator | int,
        accept: Callable[[tuple[int, ...]], bool] | None = None,
        max_tries: int = 1000,
    ) -> PolicyRollout:
        """Draw one architecture; ``accept`` rejects and redraws unusable ones."""
        if isinstance(generator, int):
            generator = torch.Generator().manual_seed(generator)
        for _ in range(max_tries):
            rollout = self.sample_batch(1, generator)[0]
            if accept is None or accept(rollout.indices):
                return rollout
        raise RuntimeError(f"no acceptable architecture in {max_tries} draws")

    # checkpoints

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return {f"controller.{k}": v.detach().clone().contiguous() for k, v in self.state_dict().items()}


class ReinforceTrainer:
    """REINFORCE with a moving-average baseline.

    The ascent direction is ``(1/N) sum_i grad log pi(a_i) * (R_i - b)``;
    after each step ``b <- decay * b + (1 - decay) * mean(R)``.
    ``optimizer`` is ``"adam"`` or ``"sgd"``.
    """

    def __init__(
        self,
        controller: Controller,
        lr: float = 1e-4,
        optimizer: str = "adam",
        baseline_decay: float = BASELINE_DECAY,
        entropy_coef: float = 0.0,
    ):
        self.controller = controller
        self.baseline = BaselineState(decay=baseline_decay)
        self.entropy_coef = entropy_coef
        if optimizer == "adam":
            self.optimizer = torch.optim.Adam(controller.parameters(), lr=lr)
        elif optimizer == "sgd":
            self.optimizer = torch.optim.SGD(controller.parameters(), lr=lr)
        else:
            raise ValueError(f"unknown controller optimizer {optimizer!r}")

    def surrogate(self, rollouts: Sequence[PolicyRollout], rewards: Sequence[float], baseline: float):
        """Scalar whose gradient is the REINFORCE estimate (to be ascended)."""
        choices = torch.tensor([r.choices for r in rollouts])
        adv = torch.tensor([float(r) - baseline for r in rewards])
        objective = (self.controller.log_prob_tensor(choices) * adv).mean()
        if self.entropy_coef:
            tables = self.controller.step_log_probs(choices)
            entropy = sum(-(t.exp() * t).sum(dim=1) for t in tables).mean()
            objective = objective + self.entropy_coef * entropy
        return objective

    def policy_gradient(self, rollouts, rewards, baseline: float) -> dict[str, torch.Tensor]:
        """The REINFORCE gradient per parameter name (no update applied)."""
        self.controller.zero_grad(set_to_none=True)
        self.surrogate(rollouts, rewards, baseline).backward()
        grads = {
            name: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
            for name, p in self.controller.named_parameters()
        }
        self.controller.zero_grad(set_to_none=True)
        return grads

    def update(self, rollouts: Sequence[PolicyRollout], rewards: Sequence[float]) -> float:
        """One ascent step; returns the surrogate loss (negated objective)."""
        if not rollouts or len(rollouts) != len(rewards):
            raise ValueError("need one reward per rollout and at least one rollout")
        rewards = [float(r) for r in rewards]
        if not all(math.isfinite(r) for r in rewards):
            raise ValueError(f"non-finite reward in {rewards}")
        b = self.baseline.current(rewards)
        self.optimizer.zero_grad(set_to_none=True)
        loss = -self.surrogate(rollouts, rewards, b)
        loss.backward()
        self.optimizer.step()
        self.baseline.update(rewards)
        return float(loss.detach())


def save_controller(trainer: ReinforceTrainer, path: str | Path) -> None:
    ctrl = trainer.controller
    meta = {
        "space": [[d.name, list(d.options), list(d.allowed)] for d in ctrl.space.dims],
        "space_name": ctrl.space.name,
        "baseline": trainer.baseline.value,
        "baseline_decay": trainer.baseline.decay,
        "hidden": ctrl.hidden,
    }
    save_checkpoint(ctrl.named_tensors(), path, meta)


def load_controller(path: str | Path) -> tuple[Controller, BaselineState]:
    meta = read_checkpoint_meta(path)
    dims = tuple(DecisionDim(n, tuple(o), tuple(a)) for n, o, a in meta["space"])
    ctrl = Controller(SearchSpace(dims, meta["space_name"]), hidden=int(meta["hidden"]))
    tensors = load_file(str(path))
    ctrl.load_state_dict({k.removeprefix("controller."): v for k, v in tensors.items()})
    baseline = BaselineState(meta["baseline"], float(meta["baseline_decay"]))
    return ctrl, baseline
