import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prodelib import ctc
from prodelib import tensor as T

from oracles import central_difference, collapse_ref, ctc_prob_brute_force

A, B, C = 1, 2, 3
BLANK = 0


def random_log_probs(rng, l, V):
    x = rng.normal(size=(l, V))
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))


def test_single_position_uniform():
    V = 4
    lp = np.full((1, V), -np.log(V))
    assert ctc.ctc_loss(lp, [A], BLANK).nll == pytest.approx(np.log(V), abs=1e-12)


def test_two_positions_single_label_matches_hand_formula(rng):
    lp = random_log_probs(rng, 2, 3)
    p = np.exp(lp)
    expected = -np.log(p[0, A] * p[1, A] + p[0, A] * p[1, BLANK] + p[0, BLANK] * p[1, A])
    assert ctc.ctc_loss(lp, [A], BLANK).nll == pytest.approx(expected, abs=1e-12)
    assert np.exp(-ctc.ctc_loss(lp, [A], BLANK).nll) == pytest.approx(
        ctc_prob_brute_force(lp, [A], BLANK), abs=1e-12)


def test_repeat_needs_separating_blank():
    with pytest.raises(ctc.FeasibilityError):
        ctc.ctc_loss(np.full((2, 3), -np.log(3)), [A, A], BLANK)


def test_blank_in_target_is_usage_error():
    with pytest.raises(ValueError, match="blank"):
        ctc.ctc_loss(np.full((3, 3), -np.log(3)), [A, BLANK], BLANK)


@pytest.mark.parametrize("raw, expected", [
    ([A, A, BLANK, B, B], [A, B]),
    ([BLANK, BLANK, BLANK], []),
    ([A, BLANK, A], [A, A]),
    ([], []),
])
def test_collapse(raw, expected):
    assert ctc.collapse(raw, BLANK) == expected


@pytest.mark.parametrize("target, expected", [([A, B, C], 3), ([A, A], 3), ([A, A, A, B], 6), ([], 0)])
def test_required_min_length(target, expected):
    assert ctc.required_min_length(target) == expected


def test_required_min_length_is_shortest_collapsing_sequence():
    # enumerate raw sequences over {blank, a, b} to find the true minimum
    for target in itertools.chain.from_iterable(itertools.product([A, B], repeat=n) for n in range(1, 5)):
        shortest = next(l for l in range(1, 9)
                        if any(collapse_ref(p, BLANK) == list(target)
                               for p in itertools.product([BLANK, A, B], repeat=l)))
        assert ctc.required_min_length(target) == shortest


def test_greedy_decode_examples():
    onehot = np.eye(3)[[A, A, BLANK, B]]
    out = ctc.greedy_decode(onehot, BLANK)
    assert out.raw_tokens == [A, A, BLANK, B]
    assert out.collapsed == [A, B]
    assert ctc.greedy_decode(np.eye(3)[[BLANK] * 4], BLANK).collapsed == []


def test_greedy_decode_ties_go_to_lowest_id():
    assert ctc.greedy_decode(np.zeros((2, 4)), BLANK).raw_tokens == [0, 0]
    assert ctc.greedy_decode(np.array([[0.0, 1.0, 1.0]]), BLANK).raw_tokens == [1]


def test_greedy_decode_random_matches_recomputation(rng):
    logits = rng.normal(size=(6, 5))
    out = ctc.greedy_decode(logits, BLANK)
    raw = [int(np.argmax(row)) for row in logits]
    assert out.raw_tokens == raw
    assert out.collapsed == collapse_ref(raw, BLANK)
    assert BLANK not in out.collapsed and len(out.collapsed) <= 6


def test_exhaustive_grid_matches_brute_force():
    rng = np.random.default_rng(7)
    worst = 0.0
    for V in (2, 3):
        for l in range(1, 5):
            lp = random_log_probs(rng, l, V)
            for n in range(0, 4):
                for target in itertools.product(range(1, V), repeat=n):
                    oracle = ctc_prob_brute_force(lp, target, BLANK)
                    if l < ctc.required_min_length(target):
                        assert oracle == 0.0
                        continue
                    worst = max(worst, abs(np.exp(-ctc.ctc_loss(lp, target, BLANK).nll) - oracle))
    assert worst < 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), l=st.integers(1, 6), n=st.integers(0, 3))
def test_gradient_matches_finite_differences(seed, l, n):
    rng = np.random.default_rng(seed)
    V = 4
    target = list(rng.integers(1, V, size=n))
    if ctc.required_min_length(target) > l:
        return
    lp = random_log_probs(rng, l, V)
    res = ctc.ctc_loss(lp, target, BLANK)
    num = central_difference(lambda x: ctc.ctc_loss(x, target, BLANK).nll, lp.copy())
    err = np.abs(res.per_position_grad - num) / np.maximum(np.abs(num), 1e-6)
    assert err.max() < 1e-4


def test_grad_check_through_log_softmax():
    rng = np.random.default_rng(11)
    logits = T.Parameter(rng.normal(size=(1, 5, 4)))
    target = [[1, 3]]

    def loss():
        nll, _ = ctc.ctc_nll(T.log_softmax(logits, axis=-1), [5], target, BLANK)
        return T.tsum(nll)

    assert T.grad_check(loss, [logits]) < 1e-4


def test_total_probability_identity():
    rng = np.random.default_rng(3)
    V, l = 3, 3
    lp = random_log_probs(rng, l, V)
    total = 0.0
    for n in range(0, l + 1):
        for target in itertools.product(range(1, V), repeat=n):
            if ctc.required_min_length(target) <= l:
                total += np.exp(-ctc.ctc_loss(lp, target, BLANK).nll)
    assert total == pytest.approx(1.0, abs=1e-12)


def test_batched_loss_matches_single_and_flags_infeasible():
    rng = np.random.default_rng(5)
    lp = np.stack([random_log_probs(rng, 5, 4) for _ in range(3)])
    targets = [[1, 2], [3, 3, 3], [2]]
    lengths = np.array([5, 4, 3])
    nll, grad, feasible = ctc.ctc_forward_backward(lp, lengths, targets, BLANK)
    assert feasible.tolist() == [True, False, True]
    assert nll[1] == 0.0 and not grad[1].any()
    for b in (0, 2):
        single = ctc.ctc_loss(lp[b, :lengths[b]], targets[b], BLANK)
        assert nll[b] == pytest.approx(single.nll, abs=1e-12)
        np.testing.assert_allclose(grad[b, :lengths[b]], single.per_position_grad, atol=1e-12)
        assert not grad[b, lengths[b]:].any()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=10))
def test_collapse_idempotent_on_collapsed_outputs(raw):
    once = ctc.collapse(raw, BLANK)
    if all(a != b for a, b in zip(once, once[1:])):
        assert ctc.collapse(once, BLANK) == once
    assert len(once) <= len(raw)
