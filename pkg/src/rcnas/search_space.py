"""Design-choice dimensions for relation classifiers and the descriptors that pick from them."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence

SPAN_MODES = ("entity_markers", "entity_tokens", "standard")
POS_EMB_MODES = ("null", "add_to_embedding", "concat_to_output")
POOL_KINDS = ("avg_pool", "max_pool", "self_attn_pool", "dr_pool", "start_pool")
FLAG_OPTIONS = ("true", "false")
INTERACTIONS = ("dot", "minus", "null")

ENTITIES = ("e1", "e2")
CONTEXTS = ("c0", "c1", "c2")
SEGMENTS = ENTITIES + CONTEXTS

DIM_NAMES = (
    "span_mode",
    "pos_emb_mode",
    *(f"pool_{seg}" for seg in SEGMENTS),
    *(f"use_{seg}" for seg in SEGMENTS),
    "inter_e1e2",
    *(f"inter_ent_{ctx}" for ctx in CONTEXTS),
)


class InvalidDescriptor(ValueError):
    """Raised when a descriptor does not fit a search space.

    ``reason`` is one of ``out_of_range``, ``empty_feature``, ``restriction``
    or ``length``; ``dimension`` names the offending dimension when there is one.
    """

    def __init__(self, reason: str, dimension: str | None, message: str):
        super().__init__(message)
        self.reason = reason
        self.dimension = dimension


@dataclass(frozen=True)
class DecisionDim:
    """One design choice.

    ``options`` is the full ordered option list; descriptor indices always point
    into it. ``allowed`` holds the option indices still selectable after a
    restriction (all of them by default).
    """

    name: str
    options: tuple[str, ...]
    allowed: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.options:
            raise ValueError(f"dimension {self.name!r} has no options")
        if len(set(self.options)) != len(self.options):
            raise ValueError(f"dimension {self.name!r} has duplicate options")
        if not self.allowed:
            object.__setattr__(self, "allowed", tuple(range(len(self.options))))
        for i in self.allowed:
            if not 0 <= i < len(self.options):
                raise ValueError(f"dimension {self.name!r}: allowed index {i} out of range")

    @property
    def cardinality(self) -> int:
        return len(self.allowed)

    @property
    def choices(self) -> tuple[str, ...]:
        return tuple(self.options[i] for i in self.allowed)

    def option_index(self, option: str) -> int:
        try:
            return self.options.index(option)
        except ValueError:
            raise InvalidDescriptor(
                "out_of_range", self.name, f"{self.name}: unknown option {option!r}"
            ) from None


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[DecisionDim, ...]
    name: str = "SS"

    def __post_init__(self):
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")

    def __len__(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dims)

    def dim(self, name: str) -> DecisionDim:
        for d in self.dims:
            if d.name == name:
                return d
        raise KeyError(name)

    @property
    def cardinality(self) -> int:
        return cardinality(self)

    @property
    def is_rc_space(self) -> bool:
        """True when the dimensions are the relation-classifier dimensions."""
        return self.names == DIM_NAMES


@dataclass(frozen=True)
class SpaceRestriction:
    """Maps dimension names to the option subset that stays selectable.

    A one-element subset forces that option.
    """

    options: Mapping[str, tuple[str, ...]] = field(default_factory=dict)


@dataclass(frozen=True, order=True)
class ArchitectureDescriptor:
    """One option index per relation-classifier dimension, in dimension order."""

    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    def option(self, name: str) -> str:
        pos = DIM_NAMES.index(name)
        dim = FULL_DIMS[pos]
        idx = self.indices[pos]
        if not 0 <= idx < len(dim.options):
            raise InvalidDescriptor("out_of_range", name, f"{name}: index {idx} out of range")
        return dim.options[idx]

    @property
    def span_mode(self) -> str:
        return self.option("span_mode")

    @property
    def pos_emb_mode(self) -> str:
        return self.option("pos_emb_mode")

    def pool_kind(self, segment: str) -> str:
        return self.option(f"pool_{segment}")

    def uses(self, segment: str) -> bool:
        return self.option(f"use_{segment}") == "true"

    @property
    def inter_e1e2(self) -> str:
        return self.option("inter_e1e2")

    def inter_ent(self, context: str) -> str:
        return self.option(f"inter_ent_{context}")

    def needed_segments(self) -> tuple[str, ...]:
        """Segments whose pooled vector feeds a feature or an interaction."""
        needed = {seg for seg in SEGMENTS if self.uses(seg)}
        if self.inter_e1e2 != "null":
            needed.update(ENTITIES)
        for ctx in CONTEXTS:
            if self.inter_ent(ctx) != "null":
                needed.update(ENTITIES)
                needed.add(ctx)
        return tuple(seg for seg in SEGMENTS if seg in needed)

    def has_features(self) -> bool:
        return bool(self.needed_segments())

    # encodings

    def to_indices(self) -> tuple[int, ...]:
        return self.indices

    @classmethod
    def from_indices(cls, indices: Sequence[int]) -> "ArchitectureDescriptor":
        if len(indices) != len(DIM_NAMES):
            raise InvalidDescriptor(
                "length", None, f"expected {len(DIM_NAMES)} indices, got {len(indices)}"
            )
        return cls(tuple(indices))

    def to_index_string(self) -> str:
        return ",".join(str(i) for i in self.indices)

    @classmethod
    def from_index_string(cls, text: str) -> "ArchitectureDescriptor":
        try:
            indices = [int(tok) for tok in text.strip().split(",")]
        except ValueError:
            raise InvalidDescriptor("length", None, f"malformed index string {text!r}") from None
        return cls.from_indices(indices)

    def to_text(self) -> str:
        return "".join(f"{name}={self.option(name)}\n" for name in DIM_NAMES)

    @classmethod
    def from_text(cls, text: str) -> "ArchitectureDescriptor":
        values: dict[str, str] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise InvalidDescriptor("length", None, f"malformed line {line!r}")
            key, value = key.strip(), value.strip()
            if key not in DIM_NAMES:
                raise InvalidDescriptor("out_of_range", key, f"unknown dimension {key!r}")
            values[key] = value
        missing = [n for n in DIM_NAMES if n not in values]
        if missing:
            raise InvalidDescriptor("length", missing[0], f"missing dimension {missing[0]!r}")
        return cls.from_options(**values)

    @classmethod
    def from_options(cls, **options: str | bool) -> "ArchitectureDescriptor":
        """Build from ``dimension=option`` keywords; every dimension is required.

        Flag dimensions also accept Python booleans.
        """
        indices = []
        for dim in FULL_DIMS:
            if dim.name not in options:
                raise InvalidDescriptor("length", dim.name, f"missing dimension {dim.name!r}")
            value = options[dim.name]
            if isinstance(value, bool):
                value = "true" if value else "false"
            indices.append(dim.option_index(value))
        extra = set(options) - set(DIM_NAMES)
        if extra:
            name = sorted(extra)[0]
            raise InvalidDescriptor("out_of_range", name, f"unknown dimension {name!r}")
        return cls(tuple(indices))

    def replace(self, **options: str | bool) -> "ArchitectureDescriptor":
        current = {name: self.option(name) for name in DIM_NAMES}
        current.update(options)
        return ArchitectureDescriptor.from_options(**current)

    def __str__(self) -> str:
        return self.to_index_string()


def _full_dims() -> tuple[DecisionDim, ...]:
    dims = [DecisionDim("span_mode", SPAN_MODES), DecisionDim("pos_emb_mode", POS_EMB_MODES)]
    dims += [DecisionDim(f"pool_{seg}", POOL_KINDS) for seg in SEGMENTS]
    dims += [DecisionDim(f"use_{seg}", FLAG_OPTIONS) for seg in SEGMENTS]
    dims.append(DecisionDim("inter_e1e2", INTERACTIONS))
    dims += [DecisionDim(f"inter_ent_{ctx}", INTERACTIONS) for ctx in CONTEXTS]
    return tuple(dims)


FULL_DIMS = _full_dims()


def enumerate_dimensions() -> SearchSpace:
    """The full 16-dimension space."""
    return SearchSpace(FULL_DIMS, name="SS")


def cardinality(space: SearchSpace) -> int:
    return math.prod(d.cardinality for d in space.dims)


def restrict(space: SearchSpace, restriction: SpaceRestriction, name: str | None = None) -> SearchSpace:
    """Narrow dimensions of ``space`` to the option subsets in ``restriction``.

    Subsets are intersected with what ``space`` already allows, so an option
    that the parent space has dropped is rejected.
    """
    by_name = {d.name: d for d in space.dims}
    for dim_name in restriction.options:
        if dim_name not in by_name:
            raise InvalidDescriptor("out_of_range", dim_name, f"unknown dimension {dim_name!r}")
    dims = []
    for dim in space.dims:
        subset = restriction.options.get(dim.name)
        if subset is None:
            dims.append(dim)
            continue
        if not subset:
            raise InvalidDescriptor("restriction", dim.name, f"{dim.name}: empty option subset")
        allowed = []
        for option in subset:
            idx = dim.option_index(option)
            if idx not in dim.allowed:
                raise InvalidDescriptor(
                    "restriction", dim.name, f"{dim.name}: option {option!r} not allowed in {space.name}"
                )
            if idx not in allowed:
                allowed.append(idx)
        dims.append(DecisionDim(dim.name, dim.options, tuple(sorted(allowed))))
    return SearchSpace(tuple(dims), name=name or f"{space.name}+restricted")


def validate(descriptor: ArchitectureDescriptor | Sequence[int], space: SearchSpace) -> None:
    """Raise :class:`InvalidDescriptor` unless ``descriptor`` is a legal point of ``space``."""
    indices = descriptor.indices if isinstance(descriptor, ArchitectureDescriptor) else tuple(descriptor)
    if len(indices) != len(space.dims):
        raise InvalidDescriptor(
            "length", None, f"expected {len(space.dims)} indices, got {len(indices)}"
        )
    for dim, idx in zip(space.dims, indices):
        if not 0 <= idx < len(dim.options):
            raise InvalidDescriptor(
                "out_of_range", dim.name,
                f"{dim.name}: index {idx} out of range (cardinality {len(dim.options)})",
            )
    if space.is_rc_space and not ArchitectureDescriptor(indices).has_features():
        raise InvalidDescriptor(
            "empty_feature", "use_e1", "descriptor selects no classifier input"
        )
    for dim, idx in zip(space.dims, indices):
        if idx not in dim.allowed:
            raise InvalidDescriptor(
                "restriction", dim.name,
                f"{dim.name}: option {dim.options[idx]!r} excluded by space {space.name}",
            )


def is_valid(descriptor: ArchitectureDescriptor | Sequence[int], space: SearchSpace) -> bool:
    try:
        validate(descriptor, space)
    except InvalidDescriptor:
        return False
    return True


def sample_uniform(space: SearchSpace, seed: int | random.Random, max_tries: int = 10_000):
    """Draw every dimension independently and uniformly from its allowed options.

    Descriptors that select no classifier input are redrawn. Returns an
    :class:`ArchitectureDescriptor` for the relation-classifier space and a
    plain index tuple otherwise.
    """
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    for _ in range(max_tries):
        indices = tuple(rng.choice(dim.allowed) for dim in space.dims)
        if is_valid(indices, space):
            return ArchitectureDescriptor(indices) if space.is_rc_space else indices
    raise RuntimeError(f"space {space.name} yielded no valid descriptor in {max_tries} draws")


def canonicalize(descriptor: ArchitectureDescriptor, space: SearchSpace) -> ArchitectureDescriptor:
    """Normalise pooler choices of segments that feed nothing to the first allowed option."""
    needed = set(descriptor.needed_segments())
    indices = list(descriptor.indices)
    for seg in SEGMENTS:
        if seg not in needed:
            pos = DIM_NAMES.index(f"pool_{seg}")
            indices[pos] = space.dims[pos].allowed[0]
    return ArchitectureDescriptor(tuple(indices))


def baseline_preset() -> ArchitectureDescriptor:
    """Entity markers, start pooling of both entities, nothing else."""
    return ArchitectureDescriptor.from_options(
        span_mode="entity_markers",
        pos_emb_mode="null",
        **{f"pool_{seg}": "start_pool" for seg in SEGMENTS},
        use_e1=True,
        use_e2=True,
        **{f"use_{ctx}": False for ctx in CONTEXTS},
        inter_e1e2="null",
        **{f"inter_ent_{ctx}": "null" for ctx in CONTEXTS},
    )


_NO_INTE = {"inter_e1e2": ("null",), **{f"inter_ent_{c}": ("null",) for c in CONTEXTS}}
_START_POOL = {f"pool_{seg}": ("start_pool",) for seg in SEGMENTS}
_NO_CONTEXTS = {f"use_{c}": ("false",) for c in CONTEXTS}

PRESET_NAMES = (
    "SS",
    "SS-no_inte",
    "SS-no_inte-start_pool",
    "SS-no_inte-start_pool-no_contexts",
    "BASELINE",
)


def preset_restriction(name: str) -> SpaceRestriction:
    if name == "SS":
        return SpaceRestriction({})
    if name == "SS-no_inte":
        return SpaceRestriction(dict(_NO_INTE))
    if name == "SS-no_inte-start_pool":
        return SpaceRestriction({**_NO_INTE, **_START_POOL})
    if name == "SS-no_inte-start_pool-no_contexts":
        return SpaceRestriction({**_NO_INTE, **_START_POOL, **_NO_CONTEXTS})
    if name == "BASELINE":
        base = baseline_preset()
        return SpaceRestriction({n: (base.option(n),) for n in DIM_NAMES})
    raise KeyError(f"unknown space preset {name!r}; choose from {', '.join(PRESET_NAMES)}")


def preset(name: str) -> SearchSpace:
    """Named sub-space of the full space (see ``PRESET_NAMES``)."""
    return restrict(enumerate_dimensions(), preset_restriction(name), name=name)
