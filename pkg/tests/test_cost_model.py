import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from costrel.cost_model import (
    DegeneratePriorError,
    InsufficientSupportError,
    WeightPair,
    build_cost_matrix,
    class_stats_from_counts,
    class_stats_from_labels,
    cost_sensitive_weights,
    weight_pair_from_cost_matrix,
)

counts_strategy = st.lists(st.integers(min_value=1, max_value=10**6), min_size=2, max_size=12)


def test_stats_from_counts():
    stats = class_stats_from_counts([8, 4, 1])
    assert stats.total == 13
    assert stats.priors.tolist() == [8 / 13, 4 / 13, 1 / 13]
    assert class_stats_from_counts([5, 5]).priors.tolist() == [0.5, 0.5]


@pytest.mark.parametrize("counts", [[], [3]])
def test_stats_rejects_too_few_classes(counts):
    with pytest.raises(ValueError):
        class_stats_from_counts(counts)


@pytest.mark.parametrize("counts", [[8, 0], [3, -1, 2]])
def test_stats_rejects_unsupported_class(counts):
    with pytest.raises(InsufficientSupportError, match="insufficient class support"):
        class_stats_from_counts(counts)


def test_stats_from_labels():
    stats = class_stats_from_labels(np.array([0, 0, 1, 2, 2, 2]), 3)
    assert stats.counts.tolist() == [2, 1, 3]


def test_stats_are_read_only():
    stats = class_stats_from_counts([2, 3])
    with pytest.raises(ValueError):
        stats.counts[0] = 5


def _hand_cost(counts):
    c = len(counts)
    return [[0.0 if j == k else max(1.0, math.log2(counts[k] / counts[j])) for k in range(c)] for j in range(c)]


def test_cost_matrix_reference():
    w = build_cost_matrix(class_stats_from_counts([8, 4, 1])).entries
    assert w.tolist() == [[0, 1, 1], [1, 0, 1], [3, 2, 0]]


def test_cost_matrix_balanced():
    w = build_cost_matrix(class_stats_from_counts([5, 5, 5])).entries
    assert w.tolist() == [[0, 1, 1], [1, 0, 1], [1, 1, 0]]


def test_cost_matrix_large_ratio():
    w = build_cost_matrix(class_stats_from_counts([1, 1024])).entries
    assert w[0, 1] == 10.0
    assert w[1, 0] == 1.0


def _hand_u(counts):
    # exact rational evaluation of the prior-weighted expected cost
    n = sum(counts)
    priors = [Fraction(x, n) for x in counts]
    out = []
    for j in range(len(counts)):
        acc = Fraction(0)
        for k in range(len(counts)):
            if k != j:
                w = max(1, math.log2(counts[k] / counts[j]))
                acc += priors[k] * Fraction(w)
        out.append(acc / (1 - priors[j]))
    return out


def test_weights_reference():
    stats = class_stats_from_counts([8, 4, 1])
    wp = cost_sensitive_weights(stats)
    assert _hand_u([8, 4, 1]) == [1, 1, Fraction(8, 3)]
    assert wp.positive_weights.tolist() == [1.0, 1.0, 8 / 3]
    assert wp.negative_weight_rows.tolist() == [[0, 1, 1], [1, 0, 1], [3, 2, 0]]


def test_weights_two_class():
    wp = cost_sensitive_weights(class_stats_from_counts([8, 1]))
    assert wp.positive_weights.tolist() == [1.0, 3.0]
    assert wp.negative_weight_rows.tolist() == [[0, 1], [3, 0]]


def test_weights_balanced():
    wp = cost_sensitive_weights(class_stats_from_counts([5, 5, 5]))
    assert wp.positive_weights.tolist() == [1.0, 1.0, 1.0]


def test_weights_dimension_mismatch():
    with pytest.raises(ValueError):
        weight_pair_from_cost_matrix(class_stats_from_counts([2, 3]), build_cost_matrix(class_stats_from_counts([1, 2, 3])))


def test_degenerate_prior_guard():
    # ClassStats already forbids zero counts, so P_j = 1 can only arrive through a forged object
    stats = class_stats_from_counts([4, 1])
    object.__setattr__(stats, "counts", np.array([4, 0]))
    with pytest.raises(DegeneratePriorError, match="degenerate prior"):
        weight_pair_from_cost_matrix(stats, build_cost_matrix(class_stats_from_counts([4, 1])))


def test_uniform_weights():
    wp = WeightPair.uniform(3)
    assert wp.positive_weights.tolist() == [1, 1, 1]
    assert wp.negative_weight_rows.shape == (3, 3)


@settings(max_examples=1000, deadline=None)
@given(counts_strategy)
def test_cost_and_weight_invariants(counts):
    stats = class_stats_from_counts(counts)
    w = build_cost_matrix(stats).entries
    assert np.all(np.diag(w) == 0)
    off = ~np.eye(len(counts), dtype=bool)
    assert np.all(w[off] >= 1)
    np.testing.assert_allclose(w, _hand_cost(counts), rtol=1e-12)
    u = cost_sensitive_weights(stats).positive_weights
    assert np.all(u >= 1)
    np.testing.assert_allclose(u, [float(x) for x in _hand_u(counts)], rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=1, max_value=10**5), st.integers(min_value=2, max_value=10))
def test_balanced_is_exactly_uniform(n, c):
    wp = cost_sensitive_weights(class_stats_from_counts([n] * c))
    assert np.all(wp.positive_weights == 1.0)
    off = ~np.eye(c, dtype=bool)
    assert np.all(wp.negative_weight_rows[off] == 1.0)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=10**5), min_size=2, max_size=10), st.integers(min_value=2, max_value=1000))
def test_scaling_counts_is_invariant(counts, factor):
    a = class_stats_from_counts(counts)
    b = class_stats_from_counts([factor * x for x in counts])
    np.testing.assert_array_equal(build_cost_matrix(a).entries, build_cost_matrix(b).entries)
    np.testing.assert_allclose(cost_sensitive_weights(a).positive_weights,
                               cost_sensitive_weights(b).positive_weights, rtol=1e-12)


@settings(max_examples=300, deadline=None)
@given(counts_strategy, st.data())
def test_shrinking_a_class_never_lowers_its_weight(counts, data):
    j = data.draw(st.integers(min_value=0, max_value=len(counts) - 1))
    smaller = data.draw(st.integers(min_value=1, max_value=counts[j]))
    before = cost_sensitive_weights(class_stats_from_counts(counts)).positive_weights[j]
    shrunk = list(counts)
    shrunk[j] = smaller
    after = cost_sensitive_weights(class_stats_from_counts(shrunk)).positive_weights[j]
    assert after >= before
