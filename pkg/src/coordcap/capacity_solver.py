"""Max-min mutual information over (Delta-)pre-image polytopes.

Both capacity regions reduce to the same program

    maximize   min_s I(N J_s)
    subject to N in the simplex,  || N K_s - Q_s ||_1 <= Delta_s  for every state s,

where ``J_s`` is the state's Y-kernel and ``K_s`` its Z-kernel.  Exact
pre-image constraints are the case ``Delta_s = 0``, relaxed internally to
an l1 radius of 1e-9.

The solver is a fully corrective Frank-Wolfe method.  Linear
subproblems are LPs over the constraint polytope (l1 balls linearised with
auxiliary variables); the restricted problem over the convex hull of the
collected atoms is a small smooth epigraph program.  Termination uses the
max-min linearisation gap, which upper-bounds the distance to the optimum:
by concavity every ``I_s`` lies below its tangent plane, so
``max_V min_s [I_s(N) + g_s . (V - N)]`` over the polytope bounds the optimum.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.special import entr

from .errors import InputError, ResourceError
from .info_measures import LN2, mi_gradient, mi_value
from .types_core import CompoundChannel, Distribution, as_distribution, lattice_points

log = logging.getLogger(__name__)

EXACT_RELAX = 1e-9
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100_000
ACTIVE_TOL = 1e-6
ENUMERATION_GUARD = 10_000_000
_SMOOTH = 1e-12
_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


@dataclass(frozen=True)
class MultipleProblem:
    channel: CompoundChannel
    targets: tuple[Distribution, ...]

    def __post_init__(self):
        targets = tuple(as_distribution(q) for q in self.targets)
        if len(targets) != self.channel.num_states:
            raise InputError(f"{len(targets)} targets for {self.channel.num_states} states")
        for q in targets:
            if q.size != self.channel.z_alphabet.size:
                raise InputError("target does not match the Z alphabet")
        object.__setattr__(self, "targets", targets)

    def constraints(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        return [(np.asarray(st.kernel_z.rows), np.asarray(q.probs), 0.0)
                for st, q in zip(self.channel.states, self.targets)]


@dataclass(frozen=True)
class AdaptiveProblem:
    channel: CompoundChannel
    target: Distribution
    deltas: tuple[float, ...]

    def __post_init__(self):
        target = as_distribution(self.target)
        if target.size != self.channel.z_alphabet.size:
            raise InputError("target does not match the Z alphabet")
        deltas = tuple(float(d) for d in self.deltas)
        if len(deltas) != self.channel.num_states:
            raise InputError(f"{len(deltas)} deltas for {self.channel.num_states} states")
        if any(d < 0 or not math.isfinite(d) for d in deltas):
            raise InputError(f"deltas must be finite and nonnegative, got {deltas}")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "deltas", deltas)

    def constraints(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        q = np.asarray(self.target.probs)
        return [(np.asarray(st.kernel_z.rows), q, d)
                for st, d in zip(self.channel.states, self.deltas)]


@dataclass
class CapacityResult:
    feasible: bool
    rate_nats: Optional[float] = None
    rate_bits: Optional[float] = None
    optimizer: Optional[Distribution] = None
    per_state_mi: list[float] = field(default_factory=list)
    active_states: list[int] = field(default_factory=list)
    iterations: int = 0
    duality_gap_estimate: Optional[float] = None
    converged: bool = False
    boundary_smoothed: bool = False
    concavity_violations: int = 0

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "rate_nats": self.rate_nats,
            "rate_bits": self.rate_bits,
            "optimizer": None if self.optimizer is None else self.optimizer.probs.tolist(),
            "per_state_mi": list(self.per_state_mi),
            "active_states": list(self.active_states),
            "iterations": self.iterations,
            "duality_gap_estimate": self.duality_gap_estimate,
            "converged": self.converged,
            "boundary_smoothed": self.boundary_smoothed,
            "concavity_violations": self.concavity_violations,
        }


class _Polytope:
    """{N in simplex : ||N K_s - Q_s||_1 <= r_s} in LP form over v = [N, u_1, ..., u_S]."""

    def __init__(self, constraints):
        self.k = constraints[0][0].shape[0]
        blocks_ub, rhs_ub = [], []
        nvar = self.k + sum(kz.shape[1] for kz, _, _ in constraints)
        self.radii = []
        self.radius_rows = []
        col = self.k
        for kz, q, radius in constraints:
            z = kz.shape[1]
            r = max(radius, EXACT_RELAX)
            self.radii.append(r)
            ident = np.zeros((z, nvar))
            ident[:, col:col + z] = np.eye(z)
            pos = np.zeros((z, nvar))
            pos[:, : self.k] = kz.T
            blocks_ub += [pos - ident, -pos - ident]
            rhs_ub += [q, -q]
            row = np.zeros((1, nvar))
            row[0, col:col + z] = 1.0
            self.radius_rows.append(sum(len(b) for b in blocks_ub))
            blocks_ub.append(row)
            rhs_ub.append([r])
            col += z
        self.nvar = nvar
        self.a_ub = np.vstack(blocks_ub)
        self.b_ub = np.concatenate([np.ravel(b) for b in rhs_ub])
        self.a_eq = np.zeros((1, nvar))
        self.a_eq[0, : self.k] = 1.0
        self.constraints = constraints

    def maximize(self, c: np.ndarray) -> Optional[np.ndarray]:
        """argmax c . N over the polytope (None when infeasible)."""
        cost = np.zeros(self.nvar)
        cost[: self.k] = -c
        res = linprog(cost, A_ub=self.a_ub, b_ub=self.b_ub, A_eq=self.a_eq, b_eq=[1.0],
                      bounds=(0, None), method="highs", options=_HIGHS)
        return self._clean(res.x[: self.k]) if res.status == 0 else None

    def centered_point(self) -> Optional[np.ndarray]:
        """Feasible N maximising the smallest slack of the inequality constraints.

        Slack is measured on the simplex walls and on every l1 radius that is
        not an exact (relaxed) equality.
        """
        a_ub = np.hstack([self.a_ub, np.zeros((self.a_ub.shape[0], 1))])
        for row, r in zip(self.radius_rows, self.radii):
            if r > EXACT_RELAX:
                a_ub[row, -1] = 1.0
        walls = np.hstack([-np.eye(self.k), np.zeros((self.k, self.nvar - self.k)),
                           np.ones((self.k, 1))])
        cost = np.zeros(self.nvar + 1)
        cost[-1] = -1.0
        res = linprog(cost, A_ub=np.vstack([a_ub, walls]),
                      b_ub=np.concatenate([self.b_ub, np.zeros(self.k)]),
                      A_eq=np.hstack([self.a_eq, [[0.0]]]), b_eq=[1.0],
                      bounds=[(0, None)] * self.nvar + [(0, 1)], method="highs", options=_HIGHS)
        if res.status != 0:
            return None
        return self._clean(res.x[: self.k])

    def linearization_bound(self, values, grads, point) -> tuple[float, np.ndarray]:
        """max over V of min_s [values_s + grads_s . (V - point)]; returns (bound, V)."""
        nv = self.nvar + 1
        cost = np.zeros(nv)
        cost[-1] = -1.0
        rows = []
        rhs = []
        for v, g in zip(values, grads):
            row = np.zeros(nv)
            row[: self.k] = -g
            row[-1] = 1.0
            rows.append(row)
            rhs.append(v - g @ point)
        a_ub = np.vstack([np.hstack([self.a_ub, np.zeros((self.a_ub.shape[0], 1))]),
                          np.vstack(rows)])
        b_ub = np.concatenate([self.b_ub, rhs])
        a_eq = np.hstack([self.a_eq, [[0.0]]])
        bounds = [(0, None)] * self.nvar + [(None, None)]
        res = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds,
                      method="highs", options=_HIGHS)
        if res.status != 0:
            raise RuntimeError(f"linearisation LP failed: {res.message}")
        return float(res.x[-1]), self._clean(res.x[: self.k])

    @staticmethod
    def _clean(n: np.ndarray) -> np.ndarray:
        n = np.clip(n, 0.0, None)
        return n / n.sum()


def _interior(n: np.ndarray) -> tuple[np.ndarray, bool]:
    if np.all(n > 0):
        return n, False
    return (1 - n.size * _SMOOTH) * n + _SMOOTH, True


class _Objective:
    def __init__(self, kernels_y: Sequence[np.ndarray]):
        self.kernels = [np.asarray(k, dtype=float) for k in kernels_y]

    def values(self, n: np.ndarray) -> np.ndarray:
        return np.array([mi_value(n, k) for k in self.kernels])

    def grads(self, n: np.ndarray) -> np.ndarray:
        return np.array([mi_gradient(n, k) for k in self.kernels])

    def __call__(self, n: np.ndarray) -> float:
        return float(self.values(n).min())


def _solve_master(obj: _Objective, atoms: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Maximise min_s I_s(atoms^T alpha) over the weight simplex."""
    m = atoms.shape[0]
    if m == 1:
        return np.ones(1)
    x0 = np.append(start, obj(start @ atoms))

    def cons_val(x):
        n = x[:m] @ atoms
        return obj.values(np.clip(n, 0, None)) - x[m]

    def cons_jac(x):
        n, _ = _interior(np.clip(x[:m] @ atoms, 0, None))
        g = obj.grads(n) @ atoms.T
        return np.hstack([g, -np.ones((g.shape[0], 1))])

    res = minimize(
        lambda x: -x[m], x0, jac=lambda x: np.append(np.zeros(m), -1.0), method="SLSQP",
        bounds=[(0, 1)] * m + [(None, None)],
        constraints=[{"type": "ineq", "fun": cons_val, "jac": cons_jac},
                     {"type": "eq", "fun": lambda x: x[:m].sum() - 1.0,
                      "jac": lambda x: np.append(np.ones(m), 0.0)}],
        options={"ftol": 1e-15, "maxiter": 500},
    )
    alpha = np.clip(res.x[:m], 0, None)
    alpha /= alpha.sum()
    # SLSQP may stop early on hard kinks; never accept a worse point
    if obj(alpha @ atoms) < obj(start @ atoms):
        return start
    return alpha


def _solve(constraints, kernels_y, tol: float, max_iter: int) -> CapacityResult:
    if not tol > 0:
        raise InputError(f"tol must be positive, got {tol}")
    poly = _Polytope(constraints)
    start = poly.centered_point()
    if start is None:
        return CapacityResult(feasible=False)
    obj = _Objective(kernels_y)
    atoms = start[None, :]
    alpha = np.ones(1)
    n = start
    gap = math.inf
    smoothed = False
    violations = 0
    it = 0
    prev = None
    for it in range(1, max_iter + 1):
        ni, moved = _interior(n)
        smoothed |= moved
        vals, grads = obj.values(ni), obj.grads(ni)
        bound, v_hat = poly.linearization_bound(vals, grads, ni)
        f_n = obj(n)
        gap = max(bound - f_n, 0.0)
        if prev is not None:
            mid = 0.5 * (n + prev)
            if obj(mid) < 0.5 * (f_n + obj(prev)) - tol:
                violations += 1
        if gap <= tol:
            break
        new = [v_hat]
        for s in np.flatnonzero(vals <= vals.min() + ACTIVE_TOL):
            vert = poly.maximize(grads[s])
            if vert is not None:
                new.append(vert)
        for cand in new:
            if np.min(np.abs(atoms - cand).sum(axis=1)) > 1e-12:
                atoms = np.vstack([atoms, cand])
                alpha = np.append(alpha, 0.0)
        alpha = _solve_master(obj, atoms, alpha)
        keep = alpha > 1e-14
        atoms, alpha = atoms[keep], alpha[keep] / alpha[keep].sum()
        prev, n = n, alpha @ atoms
    vals = obj.values(n)
    rate = float(vals.min())
    if gap > tol:
        log.warning("capacity solve stopped at the iteration cap with gap %.3g", gap)
    return CapacityResult(
        feasible=True,
        rate_nats=rate,
        rate_bits=rate / LN2,
        optimizer=Distribution(n),
        per_state_mi=vals.tolist(),
        active_states=np.flatnonzero(vals <= rate + ACTIVE_TOL).tolist(),
        iterations=it,
        duality_gap_estimate=float(gap),
        converged=gap <= tol,
        boundary_smoothed=smoothed,
        concavity_violations=violations,
    )


def feasibility_multiple(problem: MultipleProblem) -> tuple[bool, Optional[Distribution]]:
    """Is the intersection of exact pre-images nonempty?  Returns a centred witness."""
    w = _Polytope(problem.constraints()).centered_point()
    return (w is not None, None if w is None else Distribution(w))


def feasibility_adaptive(problem: AdaptiveProblem) -> tuple[bool, Optional[Distribution]]:
    w = _Polytope(problem.constraints()).centered_point()
    return (w is not None, None if w is None else Distribution(w))


def capacity_multiple(problem: MultipleProblem, tol: float = DEFAULT_TOL,
                      max_iter: int = DEFAULT_MAX_ITER) -> CapacityResult:
    return _solve(problem.constraints(), problem.channel.kernels_y(), tol, max_iter)


def capacity_adaptive(problem: AdaptiveProblem, tol: float = DEFAULT_TOL,
                      max_iter: int = DEFAULT_MAX_ITER) -> CapacityResult:
    return _solve(problem.constraints(), problem.channel.kernels_y(), tol, max_iter)


@dataclass
class SweepRow:
    deltas: tuple[float, ...]
    result: CapacityResult

    @property
    def rate(self) -> Optional[float]:
        return self.result.rate_nats


def _expand_delta(d, num_states: int) -> tuple[float, ...]:
    if np.ndim(d) == 0:
        return (float(d),) * num_states
    d = tuple(float(v) for v in d)
    if len(d) != num_states:
        raise InputError(f"delta vector {d} has wrong length for {num_states} states")
    return d


def region_sweep(channel: CompoundChannel, target, delta_grid, tol: float = DEFAULT_TOL,
                 threads: Optional[int] = None) -> list[SweepRow]:
    """Solve the adaptive program at each grid point (scalars apply to every state)."""
    grid = [_expand_delta(d, channel.num_states) for d in delta_grid]
    q = as_distribution(target)

    def cell(d):
        return SweepRow(d, capacity_adaptive(AdaptiveProblem(channel, q, d), tol=tol))

    workers = threads or os.cpu_count() or 1
    if workers == 1 or len(grid) < 2:
        return [cell(d) for d in grid]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(cell, grid))


def brute_force_capacity(problem, lattice_n: int) -> float:
    """Maximum of min_s I(N J_s) over denominator-``lattice_n`` types.

    Constraints are checked with slack ``1 / lattice_n`` on the variational
    distance.  Returns NaN when no lattice point qualifies.
    """
    channel = problem.channel
    k = channel.x_alphabet.size
    count = math.comb(lattice_n + k - 1, k - 1)
    if count > ENUMERATION_GUARD:
        raise ResourceError(f"{count} lattice points exceed the enumeration guard")
    pts = lattice_points(lattice_n, k) / lattice_n
    ok = np.ones(len(pts), dtype=bool)
    for kz, q, radius in problem.constraints():
        dist = np.abs(pts @ kz - q[None, :]).sum(axis=1)
        ok &= dist <= radius + 1.0 / lattice_n
    if not ok.any():
        return math.nan
    pts = pts[ok]
    best = np.full(len(pts), np.inf)
    for ky in channel.kernels_y():
        mi = entr(pts @ ky).sum(axis=1) - pts @ entr(ky).sum(axis=1)
        best = np.minimum(best, mi)
    return float(best.max())
