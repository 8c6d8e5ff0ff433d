"""Monte Carlo random coding over a compound channel with hidden state.

Each trial draws a codebook i.i.d. from the input PMF, sends a uniformly
chosen message through every state of the channel in turn, decodes with
the joint-typicality rule (unique message typical under *some* state's
joint law) and records both the decoding outcome and the variational
distance between the observer's output type and the coordination target.

Three codebook modes are supported:

``fresh``
    a new explicit codebook per trial and state (the ensemble average);
``shared``
    one explicit codebook for the whole batch (a fixed deployed code);
``ensemble``
    fresh per trial, but only the transmitted codeword is materialised.
    The number of competing codewords that look typical is drawn from its
    exact binomial law, with the per-codeword probability computed by
    :func:`coordcap.typical_sets.log_prob_typical_by_groups`.  This is the
    only mode usable when ``exp(n R)`` codewords cannot be stored.
``auto`` (default)
    ``fresh`` when the codebook fits the memory guard, else ``ensemble``.

Randomness comes from counter-based Philox streams keyed by
``(seed, purpose, trial, state)``, so results do not depend on the order
or thread in which trials run.
"""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from .errors import InputError, PreconditionError, ResourceError
from .typical_sets import _typical_counts, cell_windows, log_prob_typical_by_groups
from .types_core import (
    CompoundChannel,
    Distribution,
    as_distribution,
    as_kernel,
    delta_preimage_membership,
)

MEMORY_GUARD = 10_000_000
DEFAULT_EPSILON = 0.2
DEFAULT_EPSILON1 = 0.02
CODEBOOK_MODES = ("auto", "fresh", "shared", "ensemble")
V_BINS = np.linspace(0.0, 2.0, 41)

_STREAM_TRIAL = 0
_STREAM_SHARED = 1
_STREAM_LEMMA = 2


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed) % 2 ** 64, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SimConfig:
    channel: CompoundChannel
    input_pmf: Distribution
    rate_nats: float
    blocklength: int
    trials: int
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    target: Optional[Distribution] = None
    deltas: Optional[tuple[float, ...]] = None
    targets: Optional[tuple[Distribution, ...]] = None
    epsilon1: float = DEFAULT_EPSILON1
    codebook_mode: str = "auto"
    memory_guard: int = MEMORY_GUARD

    def __post_init__(self):
        object.__setattr__(self, "input_pmf", as_distribution(self.input_pmf))
        if self.input_pmf.size != self.channel.x_alphabet.size:
            raise InputError("input PMF does not match the X alphabet")
        if self.rate_nats < 0 or not math.isfinite(self.rate_nats):
            raise InputError(f"rate must be finite and nonnegative, got {self.rate_nats}")
        if self.blocklength < 1 or self.trials < 1:
            raise InputError("blocklength and trials must be positive")
        if not self.epsilon > 0:
            raise InputError("epsilon must be positive")
        if self.codebook_mode not in CODEBOOK_MODES:
            raise InputError(f"codebook mode must be one of {CODEBOOK_MODES}")
        s = self.channel.num_states
        if self.target is not None:
            object.__setattr__(self, "target", as_distribution(self.target))
        if self.targets is not None:
            targets = tuple(as_distribution(q) for q in self.targets)
            if len(targets) != s:
                raise InputError(f"{len(targets)} targets for {s} states")
            object.__setattr__(self, "targets", targets)
        if self.deltas is not None:
            deltas = tuple(float(d) for d in self.deltas)
            if len(deltas) != s or any(d < 0 for d in deltas):
                raise InputError("need one nonnegative delta per state")
            if self.target is None:
                raise InputError("deltas need a target")
            object.__setattr__(self, "deltas", deltas)
        if self.target is None and self.targets is None:
            raise InputError("a coordination target (target or per-state targets) is required")

    def reference(self, state: int) -> np.ndarray:
        """Coordination target the observer's type is compared against in ``state``."""
        q = self.targets[state] if self.targets is not None else self.target
        return np.asarray(q.probs)

    def log_codebook_size(self) -> float:
        return max(self.blocklength * (self.rate_nats - self.epsilon1), 0.0)

    def codebook_size(self) -> int:
        """ceil(exp(n (R - eps1))), at least one codeword."""
        e = self.log_codebook_size()
        if e > 700:
            raise ResourceError(f"codebook of exp({e:.1f}) codewords cannot be materialised")
        return max(1, math.ceil(math.exp(e) - 1e-9))

    def fits_memory(self) -> bool:
        e = self.log_codebook_size()
        return e + math.log(self.blocklength) <= math.log(self.memory_guard) + 1e-12 and \
            self.codebook_size() * self.blocklength <= self.memory_guard

    def resolved_mode(self) -> str:
        if self.codebook_mode != "auto":
            return self.codebook_mode
        return "fresh" if self.fits_memory() else "ensemble"

    def to_dict(self) -> dict:
        return {
            "input_pmf": self.input_pmf.probs.tolist(),
            "rate_nats": self.rate_nats,
            "blocklength": self.blocklength,
            "trials": self.trials,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "epsilon1": self.epsilon1,
            "target": None if self.target is None else self.target.probs.tolist(),
            "targets": None if self.targets is None else [q.probs.tolist() for q in self.targets],
            "deltas": None if self.deltas is None else list(self.deltas),
            "codebook_mode": self.codebook_mode,
        }


@dataclass(frozen=True)
class Codebook:
    codewords: np.ndarray

    def __post_init__(self):
        cw = np.asarray(self.codewords)
        if cw.ndim != 2:
            raise InputError("codewords must form a 2-D array (messages x blocklength)")
        cw = cw.astype(np.int64)
        cw.setflags(write=False)
        object.__setattr__(self, "codewords", cw)

    def __len__(self) -> int:
        return self.codewords.shape[0]

    @property
    def blocklength(self) -> int:
        return self.codewords.shape[1]


@dataclass(frozen=True)
class DecodeOutcome:
    message: Optional[int]
    status: str  # "decoded", "none_typical" or "ambiguous"


def _sample(pmf: np.ndarray, size, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(pmf)
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, pmf.size - 1)


def generate_codebook(config: SimConfig, rng: Optional[np.random.Generator] = None) -> Codebook:
    """I.i.d. codebook of ``codebook_size()`` words; seeded from the config by default."""
    m = config.codebook_size()
    if m * config.blocklength > config.memory_guard:
        raise ResourceError(f"codebook of {m} x {config.blocklength} symbols exceeds the "
                            f"memory guard of {config.memory_guard}")
    if rng is None:
        rng = substream(config.seed, _STREAM_SHARED)
    words = _sample(np.asarray(config.input_pmf.probs), (m, config.blocklength), rng)
    return Codebook(words)


def _through(seq: np.ndarray, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(rows, axis=1)
    u = rng.random(seq.size)
    out = (u[:, None] >= cdf[seq]).sum(axis=1)
    return np.minimum(out, rows.shape[1] - 1)


def transmit(x, state_index: int, channel: CompoundChannel,
             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Pass ``x`` through state ``state_index``: y and z drawn independently per symbol."""
    if not 0 <= state_index < channel.num_states:
        raise InputError(f"state {state_index} out of range")
    xs = channel.x_alphabet.encode(x)
    st = channel.states[state_index]
    y = _through(xs, np.asarray(st.kernel_y.rows), rng)
    z = _through(xs, np.asarray(st.kernel_z.rows), rng)
    return y, z


def _joint_targets(n_pmf, state_kernels) -> list[np.ndarray]:
    nd = np.asarray(as_distribution(n_pmf).probs)
    return [nd[:, None] * np.asarray(as_kernel(k).rows) for k in state_kernels]


def _typical_any(x: np.ndarray, y: np.ndarray, targets: list[np.ndarray], epsilon: float) -> bool:
    ny = targets[0].shape[1]
    counts = np.bincount(x * ny + y, minlength=targets[0].size).astype(float)
    return any(_typical_counts(counts, x.size, t.ravel(), epsilon) for t in targets)


def decode(y, codebook: Codebook, n_pmf, state_kernels: Sequence, epsilon: float) -> DecodeOutcome:
    """Joint-typicality decoder over all candidate states.

    Succeeds iff exactly one codeword is jointly typical with ``y`` under at
    least one state's joint law.  Several states certifying the same message
    still count as a unique decision.
    """
    targets = _joint_targets(n_pmf, state_kernels)
    nx, ny = targets[0].shape
    ys = np.asarray(y, dtype=np.int64)
    cw = codebook.codewords
    if cw.shape[1] != ys.size:
        raise InputError("received sequence length does not match the codebook")
    n = ys.size
    pair = cw * ny + ys[None, :]
    counts = np.zeros((len(cw), nx * ny))
    for c in range(nx * ny):
        counts[:, c] = (pair == c).sum(axis=1)
    freq = counts / n
    hit = np.zeros(len(cw), dtype=bool)
    for t in targets:
        flat = t.ravel()
        thr = epsilon / flat.size
        ok = np.all(np.abs(freq - flat[None, :]) < thr, axis=1)
        ok &= np.all(freq[:, flat == 0] == 0, axis=1)
        hit |= ok
    found = np.flatnonzero(hit)
    if found.size == 1:
        return DecodeOutcome(int(found[0]), "decoded")
    if found.size == 0:
        return DecodeOutcome(None, "none_typical")
    return DecodeOutcome(None, "ambiguous")


class _CompetitorModel:
    """Law of the number of wrong codewords that look typical, given y."""

    def __init__(self, n_pmf: np.ndarray, targets: list[np.ndarray], n: int, epsilon: float):
        self.n_pmf = n_pmf
        self.n = n
        # windows are indexed by (y symbol, x symbol, count)
        self.windows = [cell_windows(t.T, n, epsilon, n) for t in targets]
        self.cache: dict[tuple, float] = {}

    def log_prob(self, y_counts: tuple) -> float:
        """log Pr over x ~ N^n that (x, y) is typical for at least one state."""
        hit = self.cache.get(y_counts)
        if hit is not None:
            return hit
        laws = np.tile(self.n_pmf, (len(y_counts), 1))
        terms = []
        s = len(self.windows)
        for size in range(1, s + 1):
            for subset in itertools.combinations(range(s), size):
                allowed = self.windows[subset[0]]
                for j in subset[1:]:
                    allowed = allowed & self.windows[j]
                lp = log_prob_typical_by_groups(y_counts, laws, allowed)
                if lp > -np.inf:
                    terms.append((lp, 1.0 if size % 2 else -1.0))
        if not terms:
            out = -np.inf
        else:
            top = max(lp for lp, _ in terms)
            total = sum(sign * math.exp(lp - top) for lp, sign in terms)
            out = top + math.log(total) if total > 0 else -np.inf
        self.cache[y_counts] = out
        return out


def _competitor_class(log_m1: float, m1_is_zero: bool, log_p: float, u: float) -> int:
    """Sample min(K, 2) for K ~ Binomial(M - 1, p) using one uniform ``u``."""
    if m1_is_zero or log_p == -np.inf:
        return 0
    p = math.exp(log_p)
    if p >= 1.0:
        return 2
    log_neg = log_p if log_p < -30 else math.log(-math.log1p(-p))
    # log Pr(K=0) = (M-1) log(1-p);  log Pr(K=1) = log(M-1) + log p + (M-2) log(1-p)
    a = log_m1 + log_neg
    lp0 = -math.exp(a) if a < 700 else -np.inf
    if u < math.exp(lp0):
        return 0
    lp1 = log_m1 + log_p + lp0 + (math.exp(log_neg) if lp0 > -np.inf else 0.0)
    return 1 if u < math.exp(lp0) + math.exp(lp1) else 2


@dataclass
class SimReport:
    per_state_error_rate: list[float]
    per_state_error_ci: list[tuple[float, float]]
    max_state_error: float
    per_state_mean_V: list[float]
    per_state_V_stderr: list[float]
    per_state_V_histogram: list[list[int]]
    per_state_failures: list[dict]
    trials_run: int
    seed_used: int
    codebook_mode: str
    log_codebook_size: float
    V_bin_edges: list[float] = field(default_factory=lambda: V_BINS.tolist())
    per_state_delta: Optional[list[float]] = None
    coordination_within_delta: Optional[list[bool]] = None

    def to_dict(self) -> dict:
        return {
            "per_state_error_rate": self.per_state_error_rate,
            "per_state_error_ci": [list(ci) for ci in self.per_state_error_ci],
            "max_state_error": self.max_state_error,
            "per_state_mean_V": self.per_state_mean_V,
            "per_state_V_stderr": self.per_state_V_stderr,
            "per_state_V_histogram": self.per_state_V_histogram,
            "V_bin_edges": self.V_bin_edges,
            "per_state_failures": self.per_state_failures,
            "per_state_delta": self.per_state_delta,
            "coordination_within_delta": self.coordination_within_delta,
            "trials_run": self.trials_run,
            "seed_used": self.seed_used,
            "codebook_mode": self.codebook_mode,
            "log_codebook_size": self.log_codebook_size,
        }


def wilson_interval(errors: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(errors, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def _variational(ref: np.ndarray, z: np.ndarray) -> float:
    counts = np.bincount(z, minlength=ref.size)
    return float(np.abs(counts / z.size - ref).sum())


def run_trials(config: SimConfig, threads: Optional[int] = None) -> SimReport:
    """Simulate ``config.trials`` transmissions per channel state and aggregate."""
    ch = config.channel
    n = config.blocklength
    pmf = np.asarray(config.input_pmf.probs)
    kernels_y = [st.kernel_y for st in ch.states]
    targets = _joint_targets(pmf, kernels_y)
    ny = ch.y_alphabet.size

    mode = config.resolved_mode()
    shared = None
    if mode == "shared":
        shared = generate_codebook(config)
    elif mode == "fresh" and not config.fits_memory():
        raise ResourceError(f"codebook of exp({config.log_codebook_size():.1f}) x {n} symbols "
                            f"exceeds the memory guard of {config.memory_guard}")

    if mode == "ensemble":
        log_m = config.log_codebook_size()
        m_small = math.ceil(math.exp(log_m) - 1e-9) if log_m < 700 else None
        m1_zero = m_small is not None and m_small <= 1
        if m_small is not None and m_small > 1:
            log_m1 = math.log(m_small - 1)
        else:
            log_m1 = log_m
        competitors = _CompetitorModel(pmf, targets, n, config.epsilon)

    def one(trial: int, state: int) -> tuple[str, float]:
        rng = substream(config.seed, _STREAM_TRIAL, trial, state)
        if mode == "ensemble":
            x = _sample(pmf, n, rng)
            y, z = transmit(x, state, ch, rng)
            true_ok = _typical_any(x, y, targets, config.epsilon)
            y_counts = tuple(np.bincount(y, minlength=ny).tolist())
            k = _competitor_class(log_m1, m1_zero, competitors.log_prob(y_counts), rng.random())
            if true_ok:
                status = "decoded" if k == 0 else "ambiguous"
            else:
                status = ("none_typical", "wrong_message", "ambiguous")[k]
        else:
            book = shared if shared is not None else generate_codebook(config, rng)
            msg = int(rng.integers(len(book)))
            y, z = transmit(book.codewords[msg], state, ch, rng)
            out = decode(y, book, pmf, kernels_y, config.epsilon)
            if out.status == "decoded":
                status = "decoded" if out.message == msg else "wrong_message"
            else:
                status = out.status
        return status, _variational(config.reference(state), z)

    jobs = [(t, s) for s in range(ch.num_states) for t in range(config.trials)]
    workers = threads or int(os.environ.get("COORDCAP_THREADS", 0)) or os.cpu_count() or 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: one(*job), jobs))
    else:
        results = [one(t, s) for t, s in jobs]

    rates, cis, means, stderrs, hists, fails = [], [], [], [], [], []
    for s in range(ch.num_states):
        chunk = results[s * config.trials:(s + 1) * config.trials]
        statuses = [r[0] for r in chunk]
        vs = np.array([r[1] for r in chunk])
        errors = sum(st != "decoded" for st in statuses)
        rates.append(errors / config.trials)
        cis.append(wilson_interval(errors, config.trials))
        means.append(float(vs.mean()))
        stderrs.append(float(vs.std(ddof=1) / math.sqrt(vs.size)) if vs.size > 1 else 0.0)
        hists.append(np.histogram(vs, bins=V_BINS)[0].tolist())
        fails.append({kind: statuses.count(kind)
                      for kind in ("none_typical", "ambiguous", "wrong_message")})
    within = None
    if config.deltas is not None:
        within = [m <= d for m, d in zip(means, config.deltas)]
    return SimReport(
        per_state_error_rate=rates,
        per_state_error_ci=cis,
        max_state_error=max(rates),
        per_state_mean_V=means,
        per_state_V_stderr=stderrs,
        per_state_V_histogram=hists,
        per_state_failures=fails,
        trials_run=config.trials,
        seed_used=config.seed,
        codebook_mode=mode,
        log_codebook_size=config.log_codebook_size(),
        per_state_delta=None if config.deltas is None else list(config.deltas),
        coordination_within_delta=within,
    )


def expected_type(pmf_sequence: Sequence) -> Distribution:
    """Mean of the per-position marginals: the expectation of the empirical type."""
    pmfs = [np.asarray(as_distribution(p).probs) for p in pmf_sequence]
    if not pmfs:
        raise InputError("need at least one position")
    if len({p.size for p in pmfs}) != 1:
        raise InputError("all positions must share one alphabet")
    return Distribution(np.mean(pmfs, axis=0))


def sample_independent(pmf_sequence: Sequence, rng: np.random.Generator) -> np.ndarray:
    """One sequence with position k drawn from ``pmf_sequence[k]`` independently."""
    pmfs = np.array([np.asarray(as_distribution(p).probs) for p in pmf_sequence])
    cdf = np.cumsum(pmfs, axis=1)
    u = rng.random(len(pmfs))
    return np.minimum((u[:, None] >= cdf).sum(axis=1), pmfs.shape[1] - 1)


@dataclass
class LemmaRow:
    n: int
    exceed_prob: float
    exceed_ci: tuple[float, float]
    mean_V: float


@dataclass
class LemmaReport:
    theta: float
    rows: list[LemmaRow]

    @property
    def decreasing(self) -> bool:
        probs = [r.exceed_prob for r in self.rows]
        return all(b <= a for a, b in zip(probs, probs[1:]))

    def to_dict(self) -> dict:
        return {"theta": self.theta, "decreasing": self.decreasing,
                "rows": [{"n": r.n, "exceed_prob": r.exceed_prob, "exceed_ci": list(r.exceed_ci),
                          "mean_V": r.mean_V} for r in self.rows]}


def coordination_lemma_check(n_pmf, kernel, q, n_list: Sequence[int], trials: int,
                             theta: float = 0.05, seed: int = 0) -> LemmaReport:
    """Empirical Pr(V(Q, P_y) > theta) for i.i.d. inputs from N through ``kernel``.

    ``N`` must lie in the exact pre-image of ``Q``.
    """
    nd = as_distribution(n_pmf)
    k = as_kernel(kernel)
    qd = np.asarray(as_distribution(q).probs)
    if not delta_preimage_membership(nd, qd, k, 0.0):
        raise PreconditionError("N is not in the pre-image of Q under the kernel")
    rows = []
    for n in n_list:
        exceed = 0
        total_v = 0.0
        for t in range(trials):
            rng = substream(seed, _STREAM_LEMMA, n, t)
            x = _sample(np.asarray(nd.probs), n, rng)
            y = _through(x, np.asarray(k.rows), rng)
            v = _variational(qd, y)
            exceed += v > theta
            total_v += v
        rows.append(LemmaRow(n, exceed / trials, wilson_interval(exceed, trials), total_v / trials))
    return LemmaReport(theta, rows)


def empirical_mean_type(pmf_sequence: Sequence, samples: int, seed: int = 0,
                        chunk: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of the type over ``samples`` independent draws."""
    pmfs = np.array([np.asarray(as_distribution(p).probs) for p in pmf_sequence])
    n, k = pmfs.shape
    cdf = np.cumsum(pmfs, axis=1)
    rng = substream(seed, _STREAM_LEMMA, 0)
    total = np.zeros(k)
    total_sq = np.zeros(k)
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        u = rng.random((m, n))
        seqs = np.minimum((u[:, :, None] >= cdf[None, :, :]).sum(axis=2), k - 1)
        types = np.stack([(seqs == a).mean(axis=1) for a in range(k)], axis=1)
        total += types.sum(axis=0)
        total_sq += (types ** 2).sum(axis=0)
        done += m
    mean = total / samples
    var = np.maximum(total_sq / samples - mean ** 2, 0.0) * samples / max(samples - 1, 1)
    return mean, np.sqrt(var / samples)
