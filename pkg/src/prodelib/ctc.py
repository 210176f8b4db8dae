"""CTC loss (log-space forward-backward), greedy decoding and alignment collapse."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T


class FeasibilityError(ValueError):
    """Too few output positions for the target under CTC's blank/repeat rules."""


@dataclass
class CtcOutput:
    logits: np.ndarray
    raw_tokens: list[int]
    collapsed: list[int]


@dataclass
class CtcLossResult:
    nll: float
    per_position_grad: np.ndarray


def required_min_length(target: Sequence[int]) -> int:
    """Shortest raw sequence that collapses to ``target``: one slot per token plus a blank per adjacent repeat."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def collapse(raw: Sequence[int], blank: int) -> list[int]:
    out: list[int] = []
    prev = None
    for tok in raw:
        tok = int(tok)
        if tok != prev and tok != blank:
            out.append(tok)
        prev = tok
    return out


def greedy_decode(logits, blank: int) -> CtcOutput:
    """Per-position argmax (lowest id wins ties, as ``np.argmax`` does) then collapse."""
    arr = logits.data if isinstance(logits, T.Tensor) else np.asarray(logits, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError(f"greedy_decode expects (positions, vocab) logits, got {arr.shape}")
    raw = [int(i) for i in arr.argmax(axis=-1)]
    return CtcOutput(logits=arr, raw_tokens=raw, collapsed=collapse(raw, blank))


def _check_targets(targets: Sequence[Sequence[int]], blank: int) -> None:
    for tgt in targets:
        if blank in tgt:
            raise ValueError(f"target contains the blank id {blank}: {list(tgt)}")


def _shift_right(x: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(x, -np.inf)
    if k < x.shape[1]:
        out[:, k:] = x[:, :-k]
    return out


def _shift_left(x: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(x, -np.inf)
    if k < x.shape[1]:
        out[:, :-k] = x[:, k:]
    return out


def ctc_forward_backward(log_probs: np.ndarray, lengths: np.ndarray, targets: Sequence[Sequence[int]],
                         blank: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched CTC negative log-likelihood and its gradient w.r.t. ``log_probs``.

    ``log_probs`` is (batch, positions, vocab); example ``b`` uses its first
    ``lengths[b]`` positions. Returns ``(nll, grad, feasible)``. Infeasible
    examples get ``nll = 0`` and zero gradient, and are flagged in ``feasible``.
    """
    B, L, V = log_probs.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    S = 2 * max((len(t) for t in targets), default=0) + 1
    ext = np.full((B, S), blank, dtype=np.int64)
    s_len = np.zeros(B, dtype=np.int64)
    for b, tgt in enumerate(targets):
        ext[b, 1:2 * len(tgt):2] = tgt
        s_len[b] = 2 * len(tgt) + 1
    pos = np.arange(S)
    valid_s = pos[None, :] < s_len[:, None]
    skip = np.zeros((B, S), dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])
    skip &= valid_s

    feasible = np.array([lengths[b] >= required_min_length(t) for b, t in enumerate(targets)])
    # emissions along the extended target: (B, L, S)
    emit = np.take_along_axis(log_probs, np.broadcast_to(ext[:, None, :], (B, L, S)), axis=2)
    emit = np.where(valid_s[:, None, :], emit, -np.inf)

    skip_next = np.zeros((B, S), dtype=bool)
    skip_next[:, :-2] = skip[:, 2:]
    ninf = np.full((B, S), -np.inf)
    alpha = np.full((B, L, S), -np.inf)
    beta = np.full((B, L, S), -np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        a0 = ninf.copy()
        a0[:, 0] = emit[:, 0, 0]
        if S > 1:
            a0[:, 1] = emit[:, 0, 1]
        alpha[:, 0] = a0
        for t in range(1, L):
            prev = alpha[:, t - 1]
            s1 = _shift_right(prev, 1)
            s2 = np.where(skip, _shift_right(prev, 2), -np.inf)
            alpha[:, t] = np.logaddexp(np.logaddexp(prev, s1), s2) + emit[:, t]
        for t in range(L - 1, -1, -1):
            last = lengths - 1 == t
            init = ninf.copy()
            rows = np.arange(B)
            init[rows, s_len - 1] = emit[rows, t, s_len - 1]
            init[rows, np.maximum(s_len - 2, 0)] = np.where(
                s_len >= 2, emit[rows, t, np.maximum(s_len - 2, 0)], init[rows, 0])
            if t < L - 1:
                nxt = beta[:, t + 1]
                n1 = _shift_left(nxt, 1)
                n2 = np.where(skip_next, _shift_left(nxt, 2), -np.inf)
                rec = np.logaddexp(np.logaddexp(nxt, n1), n2) + emit[:, t]
            else:
                rec = ninf
            inside = (t < lengths - 1)[:, None]
            beta[:, t] = np.where(last[:, None], init, np.where(inside, rec, -np.inf))

        rows = np.arange(B)
        tl = np.maximum(lengths - 1, 0)
        end_a = alpha[rows, tl, s_len - 1]
        end_b = np.where(s_len >= 2, alpha[rows, tl, np.maximum(s_len - 2, 0)], -np.inf)
        log_p = np.logaddexp(end_a, end_b)
        feasible &= np.isfinite(log_p)

        occ = np.exp(alpha + beta - emit - np.where(feasible, log_p, 0.0)[:, None, None])
    occ = np.where(np.isfinite(occ) & feasible[:, None, None], occ, 0.0)
    grad = np.zeros((B, L, V))
    bi = np.broadcast_to(np.arange(B)[:, None, None], occ.shape)
    ti = np.broadcast_to(np.arange(L)[None, :, None], occ.shape)
    si = np.broadcast_to(ext[:, None, :], occ.shape)
    np.add.at(grad, (bi, ti, si), -occ)
    nll = np.where(feasible, -log_p, 0.0)
    return nll, grad, feasible


def ctc_nll(log_probs: T.Tensor, lengths, targets: Sequence[Sequence[int]], blank: int) -> tuple[T.Tensor, np.ndarray]:
    """Differentiable batched CTC loss: returns per-example nll tensor and the feasibility mask."""
    _check_targets(targets, blank)
    nll, grad, feasible = ctc_forward_backward(log_probs.data, lengths, targets, blank)
    out = T._make(nll, (log_probs,), lambda g: ((log_probs, g[:, None, None] * grad),), "ctc_nll")
    return out, feasible


def ctc_loss(log_probs, target: Sequence[int], blank: int) -> CtcLossResult:
    """CTC loss for one (positions, vocab) matrix of log-probabilities."""
    arr = log_probs.data if isinstance(log_probs, T.Tensor) else np.asarray(log_probs, dtype=np.float64)
    target = [int(t) for t in target]
    _check_targets([target], blank)
    need = required_min_length(target)
    if arr.shape[0] < need:
        raise FeasibilityError(
            f"{arr.shape[0]} positions cannot emit target of length {len(target)} (needs at least {need})")
    nll, grad, feasible = ctc_forward_backward(arr[None], np.array([arr.shape[0]]), [target], blank)
    if not feasible[0]:
        raise FeasibilityError("target has zero probability under the given distributions")
    return CtcLossResult(nll=float(nll[0]), per_position_grad=grad[0])
