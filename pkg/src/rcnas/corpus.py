"""Relation statements, dataset files, the synthetic task, and F1 metrics."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

Span = tuple[int, int]


class DatasetError(ValueError):
    """A dataset or schema file could not be parsed."""


@dataclass(frozen=True)
class RelationStatement:
    """A sentence with two entity mentions and the relation between them.

    ``span1`` is the head entity (role e1) and ``span2`` the tail (role e2);
    either may come first in the sentence. Spans are half-open token ranges.
    """

    tokens: tuple[str, ...]
    span1: Span
    span2: Span
    label: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "span1", (int(self.span1[0]), int(self.span1[1])))
        object.__setattr__(self, "span2", (int(self.span2[0]), int(self.span2[1])))
        n = len(self.tokens)
        for name, (s, e) in (("span1", self.span1), ("span2", self.span2)):
            if not 0 <= s < e:
                raise ValueError(f"{name}=({s}, {e}) is empty or negative")
            if e > n:
                raise ValueError(f"{name} end {e} beyond sentence length {n}")
        (s1, e1), (s2, e2) = self.span1, self.span2
        if s1 < e2 and s2 < e1:
            raise ValueError(f"entity spans {self.span1} and {self.span2} overlap")

    @property
    def e1_first(self) -> bool:
        return self.span1[0] < self.span2[0]

    def to_record(self) -> dict:
        return {
            "token": list(self.tokens),
            "h": {"pos": list(self.span1)},
            "t": {"pos": list(self.span2)},
            "relation": self.label,
        }


@dataclass(frozen=True)
class LabelSchema:
    labels: tuple[str, ...]
    negative_label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate relation labels in schema")
        if self.negative_label is not None and self.negative_label not in self.labels:
            raise ValueError(f"negative label {self.negative_label!r} not among labels")

    def index(self, label: str) -> int:
        return self.labels.index(label)

    @property
    def scored_labels(self) -> tuple[str, ...]:
        return tuple(l for l in self.labels if l != self.negative_label)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[RelationStatement, ...]
    dev: tuple[RelationStatement, ...]
    test: tuple[RelationStatement, ...]
    schema: LabelSchema

    def __post_init__(self):
        known = set(self.schema.labels)
        for part in ("train", "dev", "test"):
            stmts = tuple(getattr(self, part))
            object.__setattr__(self, part, stmts)
            for stmt in stmts:
                if stmt.label not in known:
                    raise DatasetError(f"{part}: label {stmt.label!r} not in schema")

    def counts(self) -> tuple[int, int, int]:
        return len(self.train), len(self.dev), len(self.test)


# ---------------------------------------------------------------- file I/O


def load_schema(path: str | Path) -> LabelSchema:
    """One relation per line; an optional first line ``!negative <name>``."""
    lines = [l.strip() for l in Path(path).read_text(encoding="utf-8").splitlines()]
    lines = [l for l in lines if l]
    negative = None
    if lines and lines[0].startswith("!negative"):
        parts = lines[0].split(maxsplit=1)
        if len(parts) != 2:
            raise DatasetError(f"{path}:1: '!negative' needs a label name")
        negative = parts[1].strip()
        lines = lines[1:]
    try:
        return LabelSchema(tuple(lines), negative)
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None


def write_schema(schema: LabelSchema, path: str | Path) -> None:
    lines = []
    if schema.negative_label is not None:
        lines.append(f"!negative {schema.negative_label}")
    lines.extend(schema.labels)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_record(line: str, lineno: int, path, labels: set[str] | None) -> RelationStatement:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    try:
        tokens = rec["token"]
        span1 = tuple(rec["h"]["pos"])
        span2 = tuple(rec["t"]["pos"])
        label = rec["relation"]
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"{path}:{lineno}: missing field {exc}") from None
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise DatasetError(f"{path}:{lineno}: 'token' must be a list of strings")
    if len(span1) != 2 or len(span2) != 2:
        raise DatasetError(f"{path}:{lineno}: entity 'pos' must be [start, end]")
    if labels is not None and label not in labels:
        raise DatasetError(f"{path}:{lineno}: unknown label {label!r}")
    try:
        return RelationStatement(tuple(tokens), span1, span2, label)
    except ValueError as exc:
        raise DatasetError(f"{path}:{lineno}: {exc}") from None


def read_statements(path: str | Path, schema: LabelSchema | None = None) -> list[RelationStatement]:
    labels = set(schema.labels) if schema is not None else None
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                out.append(_parse_record(line, lineno, path, labels))
    return out


def write_statements(statements: Iterable[RelationStatement], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for stmt in statements:
            fh.write(json.dumps(stmt.to_record(), ensure_ascii=False) + "\n")


def load_dataset(train_path, dev_path, test_path, schema_path) -> DatasetSplit:
    for p in (train_path, dev_path, test_path, schema_path):
        if not Path(p).is_file():
            raise FileNotFoundError(p)
    schema = load_schema(schema_path)
    return DatasetSplit(
        tuple(read_statements(train_path, schema)),
        tuple(read_statements(dev_path, schema)),
        tuple(read_statements(test_path, schema)),
        schema,
    )


def save_dataset(data: DatasetSplit, directory: str | Path) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {part: directory / f"{part}.jsonl" for part in ("train", "dev", "test")}
    for part, path in paths.items():
        write_statements(getattr(data, part), path)
    paths["schema"] = directory / "schema.txt"
    write_schema(data.schema, paths["schema"])
    return paths


# ---------------------------------------------------------------- synthetic task

# Each relation owns a few cue words. The label of a statement is the relation
# of the single cue word between the two entities; cue words of other relations
# may appear outside that gap as distractors, and entity-like words also occur
# in the contexts, so a classifier has to be told where the entities are.
CUES_PER_LABEL = 3
N_FILLERS = 60
N_ENTITY_WORDS = 40
DECOY_RATE = 0.15  # chance that a context word is an entity-like word


def _cue(label_idx: int, j: int) -> str:
    return f"cue{label_idx}_{j}"


def synthetic_label(stmt: RelationStatement, n_labels: int) -> str:
    """The generator's labelling rule: relation of the cue word between the entities."""
    lo = min(stmt.span1[1], stmt.span2[1])
    hi = max(stmt.span1[0], stmt.span2[0])
    for tok in stmt.tokens[lo:hi]:
        if tok.startswith("cue"):
            label_idx = int(tok[3:].split("_")[0])
            if label_idx < n_labels:
                return f"rel_{label_idx}"
    raise ValueError("no cue word between the entities")


def _synthetic_statement(rng: random.Random, n_labels: int, distractor_rate: float) -> RelationStatement:
    label_idx = rng.randrange(n_labels)
    n = rng.randint(8, 25)
    len1, len2 = rng.randint(1, 3), rng.randint(1, 3)
    rest = n - len1 - len2
    gap = rng.randint(1, min(rest, 6))
    outside = rest - gap
    left = rng.randint(0, outside)
    right = outside - left

    def fillers(k):
        return [
            f"ent{rng.randrange(N_ENTITY_WORDS)}" if rng.random() < DECOY_RATE else f"w{rng.randrange(N_FILLERS)}"
            for _ in range(k)
        ]

    def entity(k):
        return [f"ent{rng.randrange(N_ENTITY_WORDS)}" for _ in range(k)]

    c0, c1, c2 = fillers(left), fillers(gap), fillers(right)
    c1[rng.randrange(gap)] = _cue(label_idx, rng.randrange(CUES_PER_LABEL))
    if outside and rng.random() < distractor_rate:
        other = rng.choice([l for l in range(n_labels) if l != label_idx])
        target = c0 if (c0 and (not c2 or rng.random() < 0.5)) else c2
        target[rng.randrange(len(target))] = _cue(other, rng.randrange(CUES_PER_LABEL))
    first, second = entity(len1), entity(len2)
    tokens = c0 + first + c1 + second + c2
    s_first = len(c0)
    s_second = s_first + len1 + gap
    span_first = (s_first, s_first + len1)
    span_second = (s_second, s_second + len2)
    if rng.random() < 0.5:
        span1, span2 = span_first, span_second
    else:
        span1, span2 = span_second, span_first
    return RelationStatement(tuple(tokens), span1, span2, f"rel_{label_idx}")


def generate_synthetic(
    n_labels: int,
    n_train: int,
    n_dev: int,
    n_test: int,
    seed: int,
    distractor_rate: float = 0.5,
) -> DatasetSplit:
    """Generate a seeded relation task whose label is readable from the entity gap.

    Sentences have 8-25 tokens and entities 1-3 tokens. With probability
    ``distractor_rate`` a cue word of a different relation is planted outside
    the gap.
    """
    if n_labels < 2:
        raise ValueError("n_labels must be at least 2")
    rng = random.Random(seed)
    parts = []
    for size in (n_train, n_dev, n_test):
        parts.append(tuple(_synthetic_statement(rng, n_labels, distractor_rate) for _ in range(size)))
    schema = LabelSchema(tuple(f"rel_{i}" for i in range(n_labels)))
    return DatasetSplit(*parts, schema=schema)


# ---------------------------------------------------------------- metrics


def _check_lengths(gold: Sequence, pred: Sequence) -> None:
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted")
    if not gold:
        raise ValueError("cannot score an empty prediction list")


def micro_f1(gold: Sequence[str], pred: Sequence[str], schema: LabelSchema) -> float:
    """Micro F1 over all labels except the schema's negative label."""
    _check_lengths(gold, pred)
    neg = schema.negative_label
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        if g == p:
            if g != neg:
                tp += 1
            continue
        if p != neg:
            fp += 1
        if g != neg:
            fn += 1
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def macro_f1(gold: Sequence[str], pred: Sequence[str], schema: LabelSchema) -> float:
    """Unweighted mean of per-label F1; labels absent from gold and pred score 0."""
    _check_lengths(gold, pred)
    labels = schema.scored_labels
    tp, gold_n, pred_n = Counter(), Counter(gold), Counter(pred)
    for g, p in zip(gold, pred):
        if g == p:
            tp[g] += 1
    scores = []
    for label in labels:
        denom = gold_n[label] + pred_n[label]
        scores.append(2 * tp[label] / denom if denom else 0.0)
    return sum(scores) / len(scores)


METRICS = {"micro_f1": micro_f1, "macro_f1": macro_f1}


def get_metric(name: str):
    try:
        return METRICS[name]
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; choose from {sorted(METRICS)}") from None
