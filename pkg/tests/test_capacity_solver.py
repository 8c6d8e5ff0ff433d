import math

import numpy as np
import pytest

import instances
import oracles
from coordcap.capacity_solver import (
    AdaptiveProblem,
    MultipleProblem,
    brute_force_capacity,
    capacity_adaptive,
    capacity_multiple,
    feasibility_adaptive,
    feasibility_multiple,
    region_sweep,
)
from coordcap.errors import InputError, ResourceError
from coordcap.types_core import CompoundChannel, delta_preimage_membership

I2 = np.eye(2)
NOISELESS = CompoundChannel.from_matrices([I2], [I2])
ROWS = np.array(oracles.EX_ROWS)


def test_feasibility_multiple_examples():
    ok, n = feasibility_multiple(MultipleProblem(NOISELESS, [[0.3, 0.7]]))
    assert ok and np.allclose(n.probs, [0.3, 0.7], atol=1e-8)
    const = CompoundChannel.from_matrices([I2], [[[0.4, 0.6], [0.4, 0.6]]])
    assert feasibility_multiple(MultipleProblem(const, [[0.5, 0.5]])) == (False, None)
    two = CompoundChannel.from_matrices([I2, I2], [I2, I2])
    assert not feasibility_multiple(MultipleProblem(two, [[1, 0], [0, 1]]))[0]


def test_feasibility_adaptive_examples():
    const = CompoundChannel.from_matrices([I2], [[[0.4, 0.6], [0.4, 0.6]]])
    assert feasibility_adaptive(AdaptiveProblem(const, [1, 0], [2.0]))[0]
    ok, n = feasibility_adaptive(AdaptiveProblem(NOISELESS, [1, 0], [0.5]))
    assert ok and delta_preimage_membership(n, [1, 0], I2, 0.5 + 1e-9)
    for seed in range(5):
        ch, q = instances.collapse_instance(seed)
        a = feasibility_adaptive(AdaptiveProblem(ch, q, [0.0, 0.0]))[0]
        m = feasibility_multiple(MultipleProblem(ch, [q, q]))[0]
        assert a == m


def test_problem_validation():
    with pytest.raises(InputError):
        AdaptiveProblem(NOISELESS, [1, 0], [-0.1])
    with pytest.raises(InputError):
        MultipleProblem(NOISELESS, [[1, 0], [0, 1]])
    with pytest.raises(InputError):
        AdaptiveProblem(NOISELESS, [1 / 3] * 3, [0.1])


def test_capacity_noiseless_uniform():
    res = capacity_multiple(MultipleProblem(NOISELESS, [[0.5, 0.5]]))
    assert res.feasible and res.converged
    assert res.rate_nats == pytest.approx(math.log(2), abs=1e-9)
    assert res.rate_bits == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(res.optimizer.probs, [0.5, 0.5], atol=1e-6)


def test_capacity_noisy_state_forces_zero():
    ch = CompoundChannel.from_matrices([I2, [[0.5, 0.5], [0.5, 0.5]]], [I2, I2])
    res = capacity_multiple(MultipleProblem(ch, [[0.4, 0.6], [0.4, 0.6]]))
    assert res.rate_nats == pytest.approx(0.0, abs=1e-9)


def test_capacity_singleton_preimage():
    ch = CompoundChannel.from_matrices([ROWS], [I2])
    res = capacity_multiple(MultipleProblem(ch, [[0.5, 0.5]]))
    assert res.rate_nats == pytest.approx(oracles.MI_EX, abs=1e-8)


@pytest.mark.parametrize("delta,expected", [(0.0, 0.0), (0.5, oracles.H_QUARTER),
                                            (2.0, oracles.LOG2)])
def test_adaptive_degenerate_target(delta, expected):
    res = capacity_adaptive(AdaptiveProblem(NOISELESS, [1, 0], [delta]))
    assert res.rate_nats == pytest.approx(expected, abs=1e-6)
    grid = oracles.grid_binary_capacity([I2], [I2], [[1, 0]], [delta])
    assert grid == pytest.approx(expected, abs=1e-6)


def test_adaptive_witness_at_half():
    res = capacity_adaptive(AdaptiveProblem(NOISELESS, [1, 0], [0.5]))
    assert np.allclose(res.optimizer.probs, [0.75, 0.25], atol=1e-5)


def test_infeasible_result():
    const = CompoundChannel.from_matrices([I2], [[[0.4, 0.6], [0.4, 0.6]]])
    res = capacity_adaptive(AdaptiveProblem(const, [1, 0], [0.1]))
    assert not res.feasible and res.rate_nats is None
    assert res.to_dict()["feasible"] is False


@pytest.mark.parametrize("seed", range(8))
def test_matches_conic_solver(seed):
    ch, q, deltas = instances.adaptive_instance(seed)
    res = capacity_adaptive(AdaptiveProblem(ch, q, deltas), tol=1e-8)
    ref = oracles.cvx_capacity(ch.kernels_y(), ch.kernels_z(), [q, q], deltas)
    assert res.rate_nats == pytest.approx(ref, abs=1e-6)
    grid = oracles.grid_binary_capacity(ch.kernels_y(), ch.kernels_z(), [q, q], deltas)
    assert res.rate_nats >= grid - 1e-7
    assert res.duality_gap_estimate <= 1e-6


def test_larger_alphabets_match_conic_solver():
    rng = np.random.default_rng(77)
    for _ in range(4):
        ky = [rng.dirichlet(np.ones(4), size=3) for _ in range(3)]
        kz = [rng.dirichlet(np.ones(3), size=3) for _ in range(3)]
        ch = CompoundChannel.from_matrices(ky, kz)
        q = rng.dirichlet(np.ones(3))
        w = rng.dirichlet(np.ones(3))
        deltas = [float(np.abs(w @ k - q).sum() + 0.1) for k in kz]
        res = capacity_adaptive(AdaptiveProblem(ch, q, deltas), tol=1e-8)
        ref = oracles.cvx_capacity(ky, kz, [q] * 3, deltas)
        assert res.rate_nats == pytest.approx(ref, abs=1e-6)


def test_result_diagnostics():
    ch, q, deltas = instances.adaptive_instance(3)
    res = capacity_adaptive(AdaptiveProblem(ch, q, deltas))
    assert res.active_states
    assert min(res.per_state_mi) == pytest.approx(res.rate_nats, abs=1e-9)
    assert res.concavity_violations == 0
    d = res.to_dict()
    assert set(d) >= {"rate_nats", "rate_bits", "optimizer", "duality_gap_estimate"}


def test_sweep_endpoints_and_monotone():
    rows = region_sweep(NOISELESS, [1, 0], [0.0, 0.5, 2.0], threads=1)
    rates = [r.rate for r in rows]
    assert rates[0] == pytest.approx(0, abs=1e-6)
    assert rates[1] == pytest.approx(oracles.H_QUARTER, abs=1e-6)
    assert rates[2] == pytest.approx(oracles.LOG2, abs=1e-6)
    assert rows[0].deltas == (0.0,)


def test_sweep_inactive_state_is_flat():
    # state 1 is pure noise on Y, so its I is 0 and its Z constraint never matters
    ch = CompoundChannel.from_matrices([I2, I2], [I2, [[0.5, 0.5], [0.5, 0.5]]])
    grid = [(0.5, d) for d in (0.0, 0.5, 1.0, 2.0)]
    rates = [r.rate for r in region_sweep(ch, [0.5, 0.5], grid, threads=2)]
    assert max(rates) - min(rates) < 1e-8


def test_brute_force_examples():
    p1 = MultipleProblem(NOISELESS, [[0.5, 0.5]])
    assert brute_force_capacity(p1, 200) == pytest.approx(math.log(2), abs=0.005)
    p2 = AdaptiveProblem(NOISELESS, [1, 0], [0.5])
    assert brute_force_capacity(p2, 200) == pytest.approx(oracles.H_QUARTER, abs=0.005)
    const = CompoundChannel.from_matrices([I2], [[[0.4, 0.6], [0.4, 0.6]]])
    assert math.isnan(brute_force_capacity(AdaptiveProblem(const, [1, 0], [0.1]), 50))


def test_brute_force_guard():
    big = CompoundChannel.from_matrices([np.eye(8)], [np.eye(8)])
    with pytest.raises(ResourceError):
        brute_force_capacity(AdaptiveProblem(big, [1 / 8] * 8, [2.0]), 200)


@pytest.mark.parametrize("seed", range(5))
def test_optimizer_outputs_within_radii(seed):
    ch, q, deltas = instances.adaptive_instance(seed)
    res = capacity_adaptive(AdaptiveProblem(ch, q, deltas))
    for st, d in zip(ch.states, deltas):
        assert delta_preimage_membership(res.optimizer, q, st.kernel_z, d + 1e-8)
