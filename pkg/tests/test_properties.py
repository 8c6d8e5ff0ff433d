import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import oracles
from coordcap.capacity_solver import AdaptiveProblem, capacity_adaptive
from coordcap.info_measures import entropy, kl_divergence, mi_of_input_through, mi_supergradient
from coordcap.types_core import (
    CompoundChannel,
    conditional_type,
    joint_type,
    type_of_sequence,
    variational_distance,
)
from coordcap.typical_sets import conditional_set_size_exact, is_conditionally_typical

SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def pmf(k):
    return st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k).map(
        lambda w: (np.array(w) / sum(w)).tolist())


def kernel(rows, cols):
    return st.lists(pmf(cols), min_size=rows, max_size=rows)


seqs = st.integers(1, 30).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 2), min_size=n, max_size=n),
                        st.lists(st.integers(0, 3), min_size=n, max_size=n)))


@SETTINGS
@given(seqs)
def test_types_are_lattice_distributions(pair):
    x, y = pair
    t = type_of_sequence(x, 3)
    assert np.allclose(t.probs * len(x), np.round(t.probs * len(x)))
    j = joint_type(x, y, 3, 4)
    assert np.allclose(j.probs.sum(axis=1), t.probs)
    k = conditional_type(y, x, 4, 3)
    assert np.array_equal(k.defined, t.probs > 0)


@SETTINGS
@given(pmf(4), pmf(4))
def test_variational_distance_metric(p, q):
    v = variational_distance(p, q)
    assert 0 <= v <= 2 + 1e-12
    assert v == variational_distance(q, p)
    assert kl_divergence(p, q) >= 0
    # Pinsker: V^2 / 2 <= D
    assert v * v / 2 <= kl_divergence(p, q) + 1e-12


@SETTINGS
@given(pmf(3), kernel(3, 3))
def test_mi_bounds(n, rows):
    i = mi_of_input_through(n, rows)
    assert -1e-12 <= i <= min(entropy(n), math.log(3)) + 1e-12


@SETTINGS
@given(pmf(3), pmf(3), kernel(3, 2), st.floats(0, 1))
def test_mi_concave_with_supergradient(a, b, rows, t):
    a, b = np.array(a), np.array(b)
    mid = t * a + (1 - t) * b
    f = lambda v: mi_of_input_through(v, rows)
    assert f(mid) >= t * f(a) + (1 - t) * f(b) - 1e-12
    g = mi_supergradient(mid, rows)
    assert f(a) <= f(mid) + g @ (a - mid) + 1e-9


@settings(max_examples=15, deadline=None)
@given(kernel(2, 2), kernel(2, 2), kernel(2, 2), kernel(2, 2), pmf(2),
       st.floats(0, 1.5), st.floats(0, 0.5))
def test_rate_monotone_in_delta(ky0, ky1, kz0, kz1, q, d, extra):
    ch = CompoundChannel.from_matrices([ky0, ky1], [kz0, kz1])
    r1 = capacity_adaptive(AdaptiveProblem(ch, q, [d, d]))
    r2 = capacity_adaptive(AdaptiveProblem(ch, q, [d + extra, d + extra]))
    if r1.feasible:
        assert r2.feasible and r2.rate_nats >= r1.rate_nats - 1e-6
    ref = oracles.grid_binary_capacity([ky0, ky1], [kz0, kz1], [q, q], [d, d], points=20001)
    if r1.feasible and not math.isnan(ref):
        assert r1.rate_nats >= ref - 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9).flatmap(lambda n: st.lists(st.integers(0, 1), min_size=n, max_size=n)),
       st.sampled_from([0.4, 0.8, 1.5]))
def test_exact_size_matches_predicate(x, eps):
    p = np.array([[0.45, 0.05], [0.1, 0.4]])
    count = sum(is_conditionally_typical(y, x, p, eps)
                for y in oracles.all_sequences(len(x), 2))
    assert conditional_set_size_exact(p, x, eps) == count
