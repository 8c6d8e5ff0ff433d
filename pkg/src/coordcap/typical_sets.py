"""Strong typicality predicates and the closed-form typical-set brackets.

The predicates follow the two-clause definition literally: every joint
count frequency deviates from the target by strictly less than
``epsilon / (|X| |Y|)`` and no symbol pair outside the target's support
occurs.  Brackets are returned raw; values outside [0, 1] for a
probability are flagged ``vacuous`` instead of clamped.

Besides the brackets this module carries exact evaluators (dynamic
programming over per-symbol count windows) and Monte Carlo estimators for
the quantities the brackets talk about.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .errors import InputError, PreconditionError
from .info_measures import conditional_entropy, entropy, kl_divergence, mutual_information
from .types_core import (
    Distribution,
    JointDistribution,
    as_distribution,
    as_kernel,
    joint_type,
    lattice_points,
    type_of_sequence,
)

TIER_BASIC = "epsilon"
TIER_STRICT = "epsilon/(2|Y|)"


@dataclass(frozen=True)
class TypicalityParams:
    epsilon: float
    n: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InputError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.n) != self.n or self.n < 1:
            raise InputError(f"n must be a positive integer, got {self.n}")


@dataclass(frozen=True)
class BoundReport:
    lower: float
    upper: float
    epsilon_m: float
    delta_t: float
    vacuous: bool = False
    tier: Optional[str] = None

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"bracket is inverted: {self.lower} > {self.upper}")
        if self.delta_t < 0:
            raise ValueError("delta_t must be nonnegative")

    def contains(self, value: float, rtol: float = 1e-12) -> bool:
        slack = rtol * max(1.0, abs(value))
        return self.lower - slack <= value <= self.upper + slack

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "epsilon_m": self.epsilon_m,
                "delta_t": self.delta_t, "vacuous": self.vacuous, "tier": self.tier}


def _probs(p) -> np.ndarray:
    if isinstance(p, (Distribution, JointDistribution)):
        return np.asarray(p.probs)
    return np.asarray(p, dtype=float)


def _joint(p) -> JointDistribution:
    return p if isinstance(p, JointDistribution) else JointDistribution(np.asarray(p, dtype=float))


def epsilon_m(p, epsilon: float) -> float:
    """-epsilon * log(smallest positive probability of p)."""
    arr = _probs(p).ravel()
    pos = arr[arr > 0]
    if pos.size == 0:
        raise InputError("distribution has no positive entry")
    return float(-epsilon * math.log(pos.min()))


def log_delta_t(n: int, epsilon: float, joint_alphabet_size: int) -> float:
    k = joint_alphabet_size
    return k * math.log(n + 1) - n * epsilon ** 2 / (2 * k ** 2)


def delta_t(n: int, epsilon: float, joint_alphabet_size: int) -> float:
    """(n+1)^k exp(-n eps^2 / (2 k^2)) with k = |X||Y| (the "log e" factor is 1 in nats).

    Exceeds 1 for small n, in which case the brackets using it are vacuous.
    """
    if n < 1 or epsilon <= 0 or joint_alphabet_size < 1:
        raise InputError("delta_t needs n >= 1, epsilon > 0 and a nonempty alphabet")
    return math.exp(log_delta_t(n, epsilon, joint_alphabet_size))


# ---------------------------------------------------------------- predicates

def _typical_counts(counts: np.ndarray, n: int, target: np.ndarray, epsilon: float) -> bool:
    freq = counts / n
    if np.any(freq[target == 0] != 0):
        return False
    return bool(np.all(np.abs(freq - target) < epsilon / target.size))


def is_strongly_typical(seq, q, epsilon: float) -> bool:
    """Single-sequence strong typicality (threshold ``epsilon / |X|``)."""
    qd = as_distribution(q)
    t = type_of_sequence(seq, qd.size)
    return _typical_counts(t.probs * t.denominator, t.denominator, np.asarray(qd.probs), epsilon)


def is_strongly_jointly_typical(pair, p, epsilon: float) -> bool:
    seq_x, seq_y = pair
    pj = _joint(p)
    jt = joint_type(seq_x, seq_y, pj.shape[0], pj.shape[1])
    counts = np.round(jt.probs * jt.denominator)
    return _typical_counts(counts, jt.denominator, np.asarray(pj.probs), epsilon)


def is_conditionally_typical(y, x, p, epsilon: float) -> bool:
    """Whether ``y`` lies in the conditional typical set of ``p`` given ``x``."""
    return is_strongly_jointly_typical((x, y), p, epsilon)


def marginal_tier(x, p, epsilon: float) -> Optional[str]:
    """Strictest typicality tier the input sequence ``x`` meets w.r.t. the X-marginal of p.

    Returns ``TIER_STRICT`` when ``x`` is typical at epsilon/(2|Y|),
    ``TIER_BASIC`` when only at epsilon, else None.
    """
    pj = _joint(p)
    qx = pj.marginal_x()
    ny = pj.shape[1]
    if is_strongly_typical(x, qx, epsilon / (2 * ny)):
        return TIER_STRICT
    if is_strongly_typical(x, qx, epsilon):
        return TIER_BASIC
    return None


def _require_tier(x, pj, params: "TypicalityParams") -> str:
    if len(x) != params.n:
        raise InputError(f"sequence length {len(x)} does not match n = {params.n}")
    tier = marginal_tier(x, pj, params.epsilon)
    if tier is None:
        raise PreconditionError("input sequence is not strongly typical for the X-marginal")
    return tier


# ------------------------------------------------------------------ brackets

def jointly_typical_set_size_bounds(p, params: TypicalityParams) -> BoundReport:
    pj = _joint(p)
    n, eps = params.n, params.epsilon
    k = pj.probs.size
    em = epsilon_m(pj, eps)
    h = entropy(pj)
    dt = delta_t(n, eps, k)
    lower = (1 - dt) * math.exp(n * (h - em))
    upper = math.exp(n * (h + em))
    return BoundReport(lower, upper, em, dt, vacuous=dt >= 1)


def conditional_sequence_probability_bounds(p, x, params: TypicalityParams) -> BoundReport:
    """Bracket on Pr(y | x) for any y in the conditional typical set."""
    pj = _joint(p)
    tier = _require_tier(x, pj, params)
    n = params.n
    em = epsilon_m(pj, params.epsilon)
    hc = conditional_entropy(pj.marginal_x(), pj.conditional())
    return BoundReport(math.exp(-n * (hc + em)), math.exp(-n * (hc - em)), em, 0.0,
                       vacuous=hc - em < 0, tier=tier)


def conditional_set_probability_bounds(p, x, params: TypicalityParams) -> BoundReport:
    """Bracket on the total probability of the conditional typical set under p_{Y|X}.

    The lower bound ``1 - delta_t(n, eps/2)`` needs the stricter tier;
    otherwise only the trivial bracket [0, 1] is available.
    """
    pj = _joint(p)
    tier = _require_tier(x, pj, params)
    em = epsilon_m(pj, params.epsilon)
    dt = delta_t(params.n, params.epsilon / 2, pj.probs.size)
    if tier == TIER_STRICT:
        return BoundReport(1 - dt, 1.0, em, dt, vacuous=dt >= 1, tier=tier)
    return BoundReport(0.0, 1.0, em, dt, vacuous=True, tier=tier)


def conditional_set_size_bounds(p, x, params: TypicalityParams) -> BoundReport:
    pj = _joint(p)
    tier = _require_tier(x, pj, params)
    n = params.n
    em = epsilon_m(pj, params.epsilon)
    hc = conditional_entropy(pj.marginal_x(), pj.conditional())
    dt = delta_t(n, params.epsilon / 2, pj.probs.size)
    upper = math.exp(n * (hc + em))
    if tier == TIER_STRICT:
        return BoundReport((1 - dt) * math.exp(n * (hc - em)), upper, em, dt,
                           vacuous=dt >= 1, tier=tier)
    return BoundReport(0.0, upper, em, dt, vacuous=True, tier=tier)


def cross_probability_bound(p, q_y, x, params: TypicalityParams) -> BoundReport:
    """Bracket on the probability of the conditional typical set under an i.i.d. law q_Y."""
    pj = _joint(p)
    qd = as_distribution(q_y)
    if qd.size != pj.shape[1]:
        raise InputError("q_Y does not match the Y alphabet of the joint")
    tier = _require_tier(x, pj, params)
    n, eps = params.n, params.epsilon
    em_p = epsilon_m(pj, eps)
    em_q = epsilon_m(qd, eps)
    info = mutual_information(pj)
    div = kl_divergence(pj.marginal_y(), qd)
    dt = delta_t(n, eps / 2, pj.probs.size)
    upper = math.exp(-n * (info + div - em_p - em_q)) if math.isfinite(div) else 0.0
    if tier == TIER_STRICT and math.isfinite(div):
        lower = (1 - dt) * math.exp(-n * (info + div + em_p + em_q))
        return BoundReport(lower, upper, em_p + em_q, dt, vacuous=dt >= 1 or upper >= 1,
                           tier=tier)
    return BoundReport(0.0, upper, em_p + em_q, dt, vacuous=True, tier=tier)


# ---------------------------------------------------------- exact evaluators

def cell_windows(target: np.ndarray, n: int, epsilon: float, c_max: int) -> np.ndarray:
    """Boolean mask ``allowed[i, j, k]``: may cell (i, j) hold count ``k``?

    Uses the same arithmetic as the predicate, so the exact evaluators agree
    with it bit for bit.
    """
    target = np.asarray(target, dtype=float)
    k = np.arange(c_max + 1)
    freq = k / n
    thr = epsilon / target.size
    ok = np.abs(freq[None, None, :] - target[:, :, None]) < thr
    ok &= (target[:, :, None] > 0) | (k[None, None, :] == 0)
    return ok


def _log_group_mass(c: int, log_w: np.ndarray, allowed: np.ndarray) -> float:
    """log sum over compositions k of c into h parts with allowed[j, k_j] of
    multinomial(c; k) prod_j w_j^{k_j}."""
    ks = np.arange(c + 1)
    with np.errstate(invalid="ignore"):
        terms = np.where(ks[None, :] == 0, 0.0, ks[None, :] * log_w[:, None])
    terms = terms - gammaln(ks + 1)[None, :]
    terms = np.where(allowed[:, : c + 1], terms, -np.inf)
    acc = terms[0]
    for j in range(1, len(log_w)):
        nxt = np.full(c + 1, -np.inf)
        for k in np.flatnonzero(np.isfinite(terms[j])):
            np.logaddexp(nxt[k:], acc[: c + 1 - k] + terms[j, k], out=nxt[k:])
        acc = nxt
    if not np.isfinite(acc[c]):
        return -np.inf
    return float(acc[c] + gammaln(c + 1))


def log_prob_typical_by_groups(group_counts, laws, allowed) -> float:
    """log-probability that the joint counts fall in ``allowed``.

    Positions are grouped by the symbol of the conditioning sequence
    (``group_counts[i]`` positions with symbol ``i``); in group ``i`` the
    other sequence is i.i.d. ``laws[i]``.  ``allowed[i, j, k]`` says whether
    the pair (i, j) may occur exactly ``k`` times.
    """
    total = 0.0
    for i, c in enumerate(group_counts):
        with np.errstate(divide="ignore"):
            lw = np.log(np.asarray(laws[i], dtype=float))
        total += _log_group_mass(int(c), lw, allowed[i])
        if total == -np.inf:
            break
    return total


def conditional_set_probability_exact(p, x, kernel, epsilon: float) -> float:
    """Exact probability that (x, y) is jointly typical when y_i ~ kernel(.|x_i)."""
    pj = _joint(p)
    k = as_kernel(kernel)
    tx = type_of_sequence(x, pj.shape[0])
    n = tx.denominator
    counts = np.round(tx.probs * n).astype(int)
    allowed = cell_windows(np.asarray(pj.probs), n, epsilon, n)
    return math.exp(log_prob_typical_by_groups(counts, np.asarray(k.rows), allowed))


def cross_set_probability_exact(p, q_y, x, epsilon: float) -> float:
    """Exact probability of the conditional typical set when y is i.i.d. q_Y."""
    pj = _joint(p)
    qd = as_distribution(q_y)
    laws = np.tile(np.asarray(qd.probs), (pj.shape[0], 1))
    return conditional_set_probability_exact(pj, x, laws, epsilon)


def typical_set_size_exact(p, n: int, epsilon: float) -> int:
    """|A*(P)| by summing multinomial coefficients over typical joint types."""
    pj = _joint(p)
    target = np.asarray(pj.probs).ravel()
    total = 0
    for counts in lattice_points(n, target.size):
        if _typical_counts(counts.astype(float), n, target, epsilon):
            coef = math.factorial(n)
            for c in counts:
                coef //= math.factorial(int(c))
            total += coef
    return total


def conditional_set_size_exact(p, x, epsilon: float) -> int:
    """Number of y with (x, y) jointly typical (exact for desk-scale n)."""
    pj = _joint(p)
    ny = pj.shape[1]
    tx = type_of_sequence(x, pj.shape[0])
    n = tx.denominator
    counts = np.round(tx.probs * n).astype(int)
    allowed = cell_windows(np.asarray(pj.probs), n, epsilon, n)
    laws = np.full((pj.shape[0], ny), 1.0 / ny)
    lp = log_prob_typical_by_groups(counts, laws, allowed)
    return 0 if lp == -np.inf else round(math.exp(lp + n * math.log(ny)))


# ------------------------------------------------------------- Monte Carlo

def mc_conditional_set_probability(p, x, kernel, epsilon: float, trials: int,
                                   rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo estimate (mean, standard error) of the conditional-set probability."""
    pj = _joint(p)
    k = np.asarray(as_kernel(kernel).rows)
    xs = np.asarray(x, dtype=np.int64)
    n = xs.size
    cdf = np.cumsum(k, axis=1)
    cdf[:, -1] = 1.0
    target = np.asarray(pj.probs).ravel()
    ny = k.shape[1]
    hits = 0
    for _ in range(trials):
        u = rng.random(n)
        y = (u[:, None] > cdf[xs]).sum(axis=1)
        counts = np.bincount(xs * ny + y, minlength=target.size).astype(float)
        hits += _typical_counts(counts, n, target, epsilon)
    mean = hits / trials
    return mean, math.sqrt(max(mean * (1 - mean), 0.0) / trials)
