"""Run configuration: a sectioned key = value file with command-line overrides.

Sections and their defaults::

    [task]     train, dev, test, schema paths (relative to the config file),
               metric = micro_f1, name = task
    [encoder]  hidden_dim = 128, layers = 4, heads = 4, ffn_dim = 512,
               max_len = 128, dropout = 0.1, pos_emb_dim_concat = 12
    [search]   every SearchConfig field (n_d = 100, r = 0.5, n_copies = 3, ...)
    [eval]     every EvalConfig field except the seed
    [run]      seed = 0, space = SS, output = runs/default

Protocol constants carried by the defaults:

* search: 100 interleaved controller/child iterations; each child sees a
  random half of the training set for half an epoch, with a 0.3-epoch warm-up;
  three encoder copies share the search; after search 30 architectures are
  sampled and the 5 best by shared-weight dev score are kept; the controller
  learns at 1e-4 with a moving-average baseline (decay 0.9).
* encoder: the learnable entity position table that is concatenated to the
  encoder output is 12 wide.
* evaluation: hyper-parameters are drawn from learning rates
  {1e-3, 1e-4, 5e-5, 2e-5, 1e-5}, batch sizes {128, 64, 32, 16} and warm-up
  lengths {0.5, 0.8, 1.0} epochs; 10 random grid points are tried, and the
  winner is retrained 10 times from scratch to report mean and sample std.
* random-search baseline: 7 architectures from an untrained controller,
  best by dev, repeated over 3 runs.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

from .encoder import EncoderConfig
from .eval_harness import EvalConfig
from .search_engine import SearchConfig
from .search_space import PRESET_NAMES


class ConfigError(ValueError):
    """The configuration file or an override is malformed."""


@dataclass(frozen=True)
class TaskConfig:
    train: str = ""
    dev: str = ""
    test: str = ""
    schema: str = ""
    metric: str = "micro_f1"
    name: str = "task"

    def paths(self) -> dict[str, str]:
        return {"train": self.train, "dev": self.dev, "test": self.test, "schema": self.schema}


@dataclass(frozen=True)
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    space: str = "SS"
    output: str = "runs/default"

    def __post_init__(self):
        if self.space not in PRESET_NAMES:
            raise ConfigError(f"unknown space {self.space!r}; choose from {', '.join(PRESET_NAMES)}")
        # the single seed drives every random stream
        object.__setattr__(self, "search", dataclasses.replace(self.search, seed=self.seed))
        object.__setattr__(self, "eval", dataclasses.replace(self.eval, seed=self.seed))


SECTIONS = {"task": TaskConfig, "encoder": EncoderConfig, "search": SearchConfig, "eval": EvalConfig}
RUN_KEYS = ("seed", "space", "output")
_SEEDED = ("search", "eval")  # their seed comes from [run]


def _convert(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw.strip()


def _section_keys(cls) -> dict[str, object]:
    defaults = cls()
    return {f.name: getattr(defaults, f.name) for f in fields(cls)}


def _build(values: dict[str, dict[str, str]], base_dir: Path | None) -> RunConfig:
    kwargs = {}
    for section, cls in SECTIONS.items():
        known = _section_keys(cls)
        given = values.get(section, {})
        args = {}
        for key, raw in given.items():
            if key not in known or (section in _SEEDED and key == "seed"):
                raise ConfigError(f"[{section}] has no setting {key!r}")
            args[key] = _convert(raw, known[key], f"[{section}] {key}")
        if section == "task" and base_dir is not None:
            for key in ("train", "dev", "test", "schema"):
                if args.get(key) and not Path(args[key]).is_absolute():
                    args[key] = str(base_dir / args[key])
        try:
            kwargs[section] = cls(**args)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    run = values.get("run", {})
    for key in run:
        if key not in RUN_KEYS:
            raise ConfigError(f"[run] has no setting {key!r}")
    if "seed" in run:
        kwargs["seed"] = _convert(run["seed"], 0, "[run] seed")
    for key in ("space", "output"):
        if key in run:
            kwargs[key] = run[key].strip()
    for extra in values:
        if extra not in SECTIONS and extra != "run":
            raise ConfigError(f"unknown section [{extra}]")
    return RunConfig(**kwargs)


def _read(path: Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {s: dict(parser.items(s)) for s in parser.sections()}


def parse_overrides(items: Iterable[str]) -> dict[str, dict[str, str]]:
    """``section.key=value`` strings to a nested dict."""
    out: dict[str, dict[str, str]] = {}
    for item in items:
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot or not key:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        out.setdefault(section, {})[key] = value
    return out


def load_config(
    path: str | Path | None = None,
    overrides: dict[str, dict[str, str]] | None = None,
    task_path: str | Path | None = None,
) -> RunConfig:
    """Defaults, then the file at ``path``, then ``task_path``'s [task] section, then overrides."""
    values: dict[str, dict[str, str]] = {}
    base_dir = None
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(str(path))
        values = _read(path)
        base_dir = path.resolve().parent
    if task_path is not None:
        task_path = Path(task_path)
        if not task_path.is_file():
            raise FileNotFoundError(str(task_path))
        other = _read(task_path)
        task = other.get("task", {})
        tdir = task_path.resolve().parent
        for key in ("train", "dev", "test", "schema"):
            if task.get(key) and not Path(task[key]).is_absolute():
                task[key] = str(tdir / task[key])
        values["task"] = task
    for section, keys in (overrides or {}).items():
        values.setdefault(section, {}).update(keys)
    return _build(values, base_dir)


def to_text(cfg: RunConfig) -> str:
    """The fully resolved configuration in the same file format."""
    parser = configparser.ConfigParser(interpolation=None)
    for section in SECTIONS:
        obj = getattr(cfg, section)
        parser[section] = {
            f.name: str(getattr(obj, f.name))
            for f in fields(obj)
            if not (section in _SEEDED and f.name == "seed")
        }
    parser["run"] = {k: str(getattr(cfg, k)) for k in RUN_KEYS}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in parser[section].items()]
        lines.append("")
    return "\n".join(lines)


def write_resolved(cfg: RunConfig, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = directory / "resolved.cfg"
    out.write_text(to_text(cfg), encoding="utf-8")
    return out
