"""Command-line entry point: search, evaluate, baseline, ablate, synth-data, report.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, parse_overrides, write_resolved
from .corpus import DatasetError, generate_synthetic, load_dataset, save_dataset
from .eval_harness import (
    ABLATION_ORDER,
    Report,
    ablation_run,
    copies_ablation,
    evaluate_descriptor,
    random_search_baseline,
)
from .search_engine import rank_candidates, save_search, search
from .search_space import (
    ArchitectureDescriptor,
    InvalidDescriptor,
    PRESET_NAMES,
    baseline_preset,
    cardinality,
    enumerate_dimensions,
    preset,
    validate,
)
from .training import TaskData

log = logging.getLogger("rcnas")


class UsageError(Exception):
    """Bad input from the user; exits with status 2."""


# ---------------------------------------------------------------- helpers


def _config(args) -> RunConfig:
    overrides = parse_overrides(args.set or [])
    run = overrides.setdefault("run", {})
    if args.seed is not None:
        run["seed"] = str(args.seed)
    if args.space is not None:
        run["space"] = args.space
    if args.output is not None:
        run["output"] = args.output
    return load_config(args.config, overrides, getattr(args, "task", None))


def _task_data(cfg: RunConfig) -> TaskData:
    paths = cfg.task.paths()
    unset = [k for k, v in paths.items() if not v]
    if unset:
        raise ConfigError(f"[task] {unset[0]} path is not set")
    split = load_dataset(paths["train"], paths["dev"], paths["test"], paths["schema"])
    return TaskData(split, max_len=cfg.encoder.max_len, metric=cfg.task.metric, name=cfg.task.name)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    return out


def _write_run_info(out: Path, command: str, cfg: RunConfig, **extra) -> None:
    space = preset(cfg.space)
    info = {"command": command, "space": cfg.space, "cardinality": cardinality(space),
            "task": cfg.task.name, "seed": cfg.seed, **extra}
    (out / "run.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_report(out: Path, report: Report) -> None:
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_table(), encoding="utf-8")


def read_descriptors(path: str | Path) -> list[ArchitectureDescriptor]:
    """Descriptors from a file: one index string per line, or one ``name=option`` block."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    text = path.read_text(encoding="utf-8")
    lines = [l.strip() for l in text.splitlines() if l.strip() and not l.strip().startswith("#")]
    if not lines:
        raise UsageError(f"{path}: no descriptors")
    if any("=" in l for l in lines):
        descs = [ArchitectureDescriptor.from_text(text)]
    else:
        descs = [ArchitectureDescriptor.from_index_string(l) for l in lines]
    full = enumerate_dimensions()
    for d in descs:
        validate(d, full)
    return descs


# ---------------------------------------------------------------- commands


def cmd_search(args) -> int:
    cfg = _config(args)
    data = _task_data(cfg)
    out = _out_dir(cfg)
    space = preset(cfg.space)
    result = search(cfg.search, space, data, cfg.encoder)
    result.log.ranking = rank_candidates(result.controller, result.store, space, data,
                                         cfg.search.n_final, cfg.search.n_finalists, cfg.search.seed)
    save_search(result, out, timings=args.timings)
    _write_run_info(out, "search", cfg, n_d=cfg.search.n_d)
    for c in result.log.ranking:
        print(f"{c.descriptor.to_index_string()}\t{c.score:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    descs = read_descriptors(args.descriptors)
    cfg = _config(args)
    data = _task_data(cfg)
    out = _out_dir(cfg)
    stem = Path(args.descriptors).stem
    report = Report(cfg.task.name, meta={"kind": "evaluate"})
    for i, desc in enumerate(descs):
        name = stem if len(descs) == 1 else f"{stem}#{i}"
        report.rows.append(evaluate_descriptor(desc, data, cfg.eval, cfg.encoder, name))
    _write_report(out, report)
    _write_run_info(out, "evaluate", cfg)
    print(report.to_table(), end="")
    return 0


def cmd_baseline(args) -> int:
    cfg = _config(args)
    data = _task_data(cfg)
    out = _out_dir(cfg)
    report = Report(cfg.task.name, meta={"kind": "baseline"})
    if args.kind in ("random", "both"):
        report.rows.append(random_search_baseline(preset(cfg.space), data, cfg.eval, cfg.encoder))
    if args.kind in ("preset", "both"):
        report.rows.append(evaluate_descriptor(baseline_preset(), data, cfg.eval, cfg.encoder, "BASELINE"))
    _write_report(out, report)
    _write_run_info(out, "baseline", cfg)
    print(report.to_table(), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    data = _task_data(cfg)
    out = _out_dir(cfg)
    if args.copies:
        report = copies_ablation(data, args.copies, cfg.search, cfg.eval, cfg.encoder, cfg.space)
        report.meta = {"kind": "copies", **report.meta}
    else:
        unknown = [s for s in args.spaces if s not in ABLATION_ORDER]
        if unknown:
            raise UsageError(f"unknown space(s): {', '.join(unknown)}")
        report = ablation_run(data, args.spaces, cfg.search, cfg.eval, cfg.encoder)
        report.meta = {"kind": "spaces", **report.meta}
    _write_report(out, report)
    _write_run_info(out, "ablate", cfg)
    print(report.to_table(), end="")
    return 0


def cmd_synth_data(args) -> int:
    split = generate_synthetic(args.labels, args.train, args.dev, args.test,
                               args.seed if args.seed is not None else 0, args.distractor_rate)
    out = Path(args.out)
    save_dataset(split, out)
    (out / "task.cfg").write_text(
        "[task]\ntrain = train.jsonl\ndev = dev.jsonl\ntest = test.jsonl\nschema = schema.txt\n"
        f"metric = micro_f1\nname = {args.name}\n",
        encoding="utf-8",
    )
    print(f"wrote {sum(split.counts())} statements to {out}")
    return 0


def _reward_curve(records: list[dict]) -> str:
    lines = ["iteration\treward\tbaseline\tdiverged"]
    for r in records:
        reward = "" if r["reward"] is None else f"{r['reward']:.6f}"
        base = "" if r["baseline"] is None else f"{r['baseline']:.6f}"
        lines.append(f"{r['iteration']}\t{reward}\t{base}\t{int(r['diverged'])}")
    return "\n".join(lines) + "\n"


def render_report(run_dir: Path) -> str:
    """Tables and a reward curve for whatever a run directory holds."""
    log_path, report_path, info_path = (run_dir / n for n in ("search_log.jsonl", "report.json", "run.json"))
    if not log_path.is_file() and not report_path.is_file():
        raise FileNotFoundError(f"{run_dir}: neither search_log.jsonl nor report.json found")
    info = json.loads(info_path.read_text(encoding="utf-8")) if info_path.is_file() else {}
    parts = []
    if info:
        parts.append(f"space: {info['space']}  cardinality: {info['cardinality']}")
    if log_path.is_file():
        records = [json.loads(l) for l in log_path.read_text(encoding="utf-8").splitlines() if l]
        (run_dir / "reward_curve.tsv").write_text(_reward_curve(records), encoding="utf-8")
        rewards = [r["reward"] for r in records if r["reward"] is not None]
        tail = rewards[-10:]
        parts.append(f"search iterations: {len(records)}  mean reward (last {len(tail)}): "
                     f"{(sum(tail) / len(tail)) if tail else math.nan:.4f}")
    if report_path.is_file():
        doc = json.loads(report_path.read_text(encoding="utf-8"))
        parts.append(_render_table(doc))
    return "\n".join(parts) + "\n"


def _render_table(doc: dict) -> str:
    kind = doc["meta"].get("kind", "")
    rows = doc["rows"]
    if kind == "spaces":
        rows = sorted(rows, key=lambda r: ABLATION_ORDER.index(r["name"]))
        header = "search space"
    elif kind == "copies":
        header = "encoder copies"
    else:
        header = "model"
    width = max([len(header)] + [len(r["name"]) for r in rows])
    lines = [f"{header:<{width}}  {doc['task']} (mean +- sample std, x100)"]
    for r in rows:
        lines.append(f"{r['name']:<{width}}  {100 * r['mean']:.2f} +- {100 * r['std']:.2f}  (n={r['n_runs']})")
    for key, value in sorted(doc["meta"].items()):
        if key.startswith("cardinality"):
            lines.append(f"{key}: {value}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(str(run_dir))
    text = render_report(run_dir)
    (run_dir / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="run configuration file; built-in defaults when omitted")
    p.add_argument("--seed", type=int, default=None, help="master seed, overrides [run] seed (built-in 0)")
    p.add_argument("--space", choices=PRESET_NAMES, default=None,
                   help="search space preset, overrides [run] space (built-in SS)")
    p.add_argument("--output", default=None, help="output directory, overrides [run] output")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", default=None,
                   help="override one config value; repeatable")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="rcnas", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="search a space and write finalists", formatter_class=fmt)
    _common(p)
    p.add_argument("--timings", action="store_true", help="also write per-iteration wall times")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", help="evaluate descriptors from a file", formatter_class=fmt)
    _common(p)
    p.add_argument("descriptors", help="index strings, one per line, or one name=option block")
    p.add_argument("--task", default=None, help="take the [task] section from this config instead")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="random-search and preset baselines", formatter_class=fmt)
    _common(p)
    p.add_argument("--kind", choices=("random", "preset", "both"), default="both", help="which baseline rows")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("ablate", help="search-space or encoder-copy ablation", formatter_class=fmt)
    _common(p)
    p.add_argument("--spaces", nargs="+", default=list(ABLATION_ORDER), help="space presets to compare")
    p.add_argument("--copies", nargs="+", type=int, default=None,
                   help="compare these encoder-copy counts instead of spaces")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth-data", help="write a synthetic relation dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--labels", type=int, default=5, help="number of relations")
    p.add_argument("--train", type=int, default=2000, help="training statements")
    p.add_argument("--dev", type=int, default=400, help="dev statements")
    p.add_argument("--test", type=int, default=400, help="test statements")
    p.add_argument("--distractor-rate", type=float, default=0.5, help="chance of a misleading cue outside the gap")
    p.add_argument("--name", default="synthetic", help="task name written to task.cfg")
    p.add_argument("--seed", type=int, default=None, help="generator seed (0 when omitted)")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("report", help="render tables and the reward curve of a run", formatter_class=fmt)
    p.add_argument("run_dir", help="output directory of an earlier command")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc.args[0]}", file=sys.stderr)
        return 2
    except InvalidDescriptor as exc:
        where = f" (dimension {exc.dimension})" if exc.dimension else ""
        print(f"error: invalid descriptor{where}: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DatasetError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and fail
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
