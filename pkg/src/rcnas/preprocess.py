"""Entity span identification transforms and the five-segment view of a sentence."""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import RelationStatement, Span

CLS, SEP = "[CLS]", "[SEP]"
E1_START, E1_END, E2_START, E2_END = "[E1]", "[/E1]", "[E2]", "[/E2]"
ENTITY_1, ENTITY_2 = "[ENTITY-1]", "[ENTITY-2]"
PAD, UNK = "[PAD]", "[UNK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, E1_START, E1_END, E2_START, E2_END, ENTITY_1, ENTITY_2)
MARKERS = (E1_START, E1_END, E2_START, E2_END)

SEGMENT_ORDER = ("e1", "e2", "c0", "c1", "c2")


@dataclass(frozen=True)
class TransformedInput:
    """Encoder-ready tokens; spans are role-ordered and include inserted markers."""

    tokens: tuple[str, ...]
    span1: Span
    span2: Span
    mode: str

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class SegmentMap:
    """Half-open ranges of the five segments over the transformed tokens.

    Contexts are in surface order; ``e1``/``e2`` follow the entity roles, and
    ``e1_first`` says whether role e1 also comes first in the sentence.
    """

    c0: Span
    e1: Span
    c1: Span
    e2: Span
    c2: Span
    e1_first: bool

    def __getitem__(self, segment: str) -> Span:
        return getattr(self, segment)

    def surface_order(self) -> tuple[Span, ...]:
        first, second = (self.e1, self.e2) if self.e1_first else (self.e2, self.e1)
        return self.c0, first, self.c1, second, self.c2


def transform(stmt: RelationStatement, mode: str) -> TransformedInput:
    """Wrap ``stmt`` in [CLS]/[SEP] and expose its entities according to ``mode``.

    ``entity_markers`` brackets each entity with its role's markers,
    ``entity_tokens`` replaces each mention with one placeholder token and
    ``standard`` leaves the sentence alone.
    """
    toks = stmt.tokens
    roles = sorted(((stmt.span1, 1), (stmt.span2, 2)), key=lambda item: item[0][0])
    out = [CLS]
    spans: dict[int, Span] = {}
    cursor = 0
    for (s, e), role in roles:
        out.extend(toks[cursor:s])
        start = len(out)
        if mode == "entity_markers":
            out.append(E1_START if role == 1 else E2_START)
            out.extend(toks[s:e])
            out.append(E1_END if role == 1 else E2_END)
        elif mode == "entity_tokens":
            out.append(ENTITY_1 if role == 1 else ENTITY_2)
        elif mode == "standard":
            out.extend(toks[s:e])
        else:
            raise ValueError(f"unknown span mode {mode!r}")
        spans[role] = (start, len(out))
        cursor = e
    out.extend(toks[cursor:])
    out.append(SEP)
    return TransformedInput(tuple(out), spans[1], spans[2], mode)


def segment_map(ti: TransformedInput) -> SegmentMap:
    e1_first = ti.span1[0] < ti.span2[0]
    first, second = (ti.span1, ti.span2) if e1_first else (ti.span2, ti.span1)
    return SegmentMap(
        c0=(0, first[0]),
        e1=ti.span1,
        c1=(first[1], second[0]),
        e2=ti.span2,
        c2=(second[1], len(ti.tokens)),
        e1_first=e1_first,
    )


def positional_ids(ti: TransformedInput) -> list[int]:
    """1 on role e1's range, 2 on role e2's range, 0 elsewhere."""
    ids = [0] * len(ti.tokens)
    for role, (s, e) in ((1, ti.span1), (2, ti.span2)):
        for i in range(s, e):
            ids[i] = role
    return ids


def truncate(ti: TransformedInput, max_len: int) -> TransformedInput:
    """Drop tokens from the right end of the trailing context to fit ``max_len``.

    Entities are never cut; if the second entity plus [SEP] does not fit, the
    statement is rejected.
    """
    if len(ti.tokens) <= max_len:
        return ti
    last_entity_end = max(ti.span1[1], ti.span2[1])
    if last_entity_end + 1 > max_len:
        raise ValueError(
            f"entities end at token {last_entity_end}; they do not fit max_len={max_len}"
        )
    tokens = ti.tokens[: max_len - 1] + (SEP,)
    return TransformedInput(tokens, ti.span1, ti.span2, ti.mode)


def strip_markers(tokens) -> list[str]:
    """Remove [CLS], [SEP] and the four entity markers."""
    drop = set(MARKERS) | {CLS, SEP}
    return [t for t in tokens if t not in drop]
