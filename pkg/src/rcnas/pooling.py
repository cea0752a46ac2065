"""Segment poolers: reduce a token range of hidden states to one vector.

All batched functions take ``hidden`` of shape ``[B, L, D]`` and per-row
half-open ranges ``start``/``end`` of shape ``[B]``. Positions outside the
range are never read (they may hold garbage, including NaN). An empty range
pools to the zero vector.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .search_space import POOL_KINDS, SEGMENTS

DR_ITERS = 3


def _range_mask(hidden, start, end):
    pos = torch.arange(hidden.shape[1], device=hidden.device)
    return (pos[None, :] >= start[:, None]) & (pos[None, :] < end[:, None])


def _masked(hidden, mask):
    return torch.where(mask[..., None], hidden, torch.zeros((), dtype=hidden.dtype))


def _masked_softmax(scores, mask):
    # finite fill keeps empty rows NaN-free in both passes; callers zero them afterwards
    fill = torch.finfo(scores.dtype).min
    return torch.softmax(torch.where(mask, scores, torch.full((), fill, dtype=scores.dtype)), dim=-1)


def _zero_empty(out, mask):
    nonempty = mask.any(dim=1, keepdim=True)
    return torch.where(nonempty, out, torch.zeros((), dtype=out.dtype))


def avg_pool(hidden, start, end):
    mask = _range_mask(hidden, start, end)
    count = mask.sum(dim=1, keepdim=True).clamp(min=1).to(hidden.dtype)
    return _masked(hidden, mask).sum(dim=1) / count


def max_pool(hidden, start, end):
    mask = _range_mask(hidden, start, end)
    fill = torch.full((), torch.finfo(hidden.dtype).min, dtype=hidden.dtype)
    out = torch.where(mask[..., None], hidden, fill).max(dim=1).values
    return _zero_empty(out, mask)


def start_pool(hidden, start, end):
    mask = _range_mask(hidden, start, end)
    idx = start.clamp(max=hidden.shape[1] - 1)
    out = hidden[torch.arange(hidden.shape[0], device=hidden.device), idx]
    return _zero_empty(out, mask)


def self_attn_pool(hidden, start, end, w):
    """Softmax over ``w . h_t`` within the range, then the weighted sum of rows."""
    mask = _range_mask(hidden, start, end)
    h = _masked(hidden, mask)
    alpha = _masked_softmax(h @ w, mask)
    out = (alpha[..., None] * h).sum(dim=1)
    return _zero_empty(out, mask)


def squash(x, eps: float = 1e-12):
    sq = (x * x).sum(dim=-1, keepdim=True)
    return x * (sq / (1.0 + sq)) / torch.sqrt(sq + eps)


def dr_pool(hidden, start, end, W, iters: int = DR_ITERS):
    """Dynamic routing of the range's rows into a single output capsule.

    ``u_t = W h_t``; routing logits start at zero and each iteration sets
    ``v = squash(sum_t softmax(b)_t u_t)`` then adds the agreement ``u_t . v``
    to ``b_t``. Returns the last ``v``, whose norm is below 1 (in float32 it
    rounds up to exactly 1 once the pre-squash norm exceeds about 4e3).
    """
    if iters < 1:
        raise ValueError("dr_pool needs at least one routing iteration")
    mask = _range_mask(hidden, start, end)
    u = _masked(hidden, mask) @ W.T
    b = torch.zeros(mask.shape, dtype=hidden.dtype, device=hidden.device)
    v = None
    for _ in range(iters):
        c = _masked_softmax(b, mask)
        v = squash((c[..., None] * u).sum(dim=1))
        b = b + (u * v[:, None, :]).sum(dim=-1)
    return _zero_empty(v, mask)


class PoolerBank(nn.Module):
    """Learned pooler parameters keyed by segment, pooler kind and width.

    Every segment owns a self-attention score vector and a routing matrix for
    each encoder output width, so descriptors of either width find theirs.
    """

    def __init__(self, widths, dr_iters: int = DR_ITERS):
        super().__init__()
        self.widths = tuple(widths)
        self.dr_iters = dr_iters
        self.pools = nn.ModuleDict()
        for seg in SEGMENTS:
            kinds = nn.ModuleDict()
            kinds["self_attn_pool"] = nn.ParameterDict(
                {str(D): nn.Parameter(torch.zeros(D)) for D in self.widths}
            )
            kinds["dr_pool"] = nn.ParameterDict(
                {str(D): nn.Parameter(torch.eye(D)) for D in self.widths}
            )
            self.pools[seg] = kinds

    def params(self, segment: str, kind: str, width: int) -> nn.Parameter | None:
        if kind not in ("self_attn_pool", "dr_pool"):
            return None
        return self.pools[segment][kind][str(width)]

    def pool(self, segment: str, kind: str, hidden, start, end):
        width = hidden.shape[-1]
        if kind == "avg_pool":
            return avg_pool(hidden, start, end)
        if kind == "max_pool":
            return max_pool(hidden, start, end)
        if kind == "start_pool":
            return start_pool(hidden, start, end)
        if kind == "self_attn_pool":
            return self_attn_pool(hidden, start, end, self.params(segment, kind, width))
        if kind == "dr_pool":
            return dr_pool(hidden, start, end, self.params(segment, kind, width), self.dr_iters)
        raise ValueError(f"unknown pooler {kind!r}; choose from {POOL_KINDS}")


def pool(kind: str, hidden, span, params=None, iters: int = DR_ITERS):
    """Pool rows ``span[0]:span[1]`` of a single ``[L, D]`` hidden matrix.

    ``params`` is the score vector for ``self_attn_pool`` and the routing
    matrix for ``dr_pool``; other poolers take none.
    """
    s, e = int(span[0]), int(span[1])
    L = hidden.shape[0]
    if not (0 <= s <= e <= L):
        raise IndexError(f"range {span} outside sequence of length {L}")
    h = hidden[None]
    start = torch.tensor([s])
    end = torch.tensor([e])
    if kind == "avg_pool":
        out = avg_pool(h, start, end)
    elif kind == "max_pool":
        out = max_pool(h, start, end)
    elif kind == "start_pool":
        out = start_pool(h, start, end)
    elif kind == "self_attn_pool":
        out = self_attn_pool(h, start, end, params)
    elif kind == "dr_pool":
        out = dr_pool(h, start, end, params, iters)
    else:
        raise ValueError(f"unknown pooler {kind!r}; choose from {POOL_KINDS}")
    return out[0]
