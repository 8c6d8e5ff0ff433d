"""Finite-alphabet distributions, empirical types and pre-image predicates.

Every object here is immutable after construction.  Numeric payloads are
numpy arrays with the write flag cleared, so they can be shared freely.
"""
from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .errors import InputError

PROB_TOL = 1e-9
PREIMAGE_TOL = 1e-9


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Alphabet:
    size: int
    labels: Optional[tuple] = None

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise InputError(f"alphabet size must be a positive integer, got {self.size!r}")
        object.__setattr__(self, "size", int(self.size))
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != self.size:
                raise InputError(f"{len(labels)} labels given for alphabet of size {self.size}")
            if len(set(labels)) != len(labels):
                raise InputError("alphabet labels must be distinct")
            object.__setattr__(self, "labels", labels)

    def index(self, symbol: Any) -> int:
        """Map a symbol (label or integer index) to its integer index."""
        if self.labels is not None and symbol in self.labels:
            return self.labels.index(symbol)
        if isinstance(symbol, (int, np.integer)) and not isinstance(symbol, bool):
            if 0 <= symbol < self.size:
                return int(symbol)
        raise InputError(f"symbol {symbol!r} is not in the alphabet")

    def encode(self, seq: Iterable) -> np.ndarray:
        """Convert a symbol sequence to an integer index array."""
        seq = list(seq) if not isinstance(seq, np.ndarray) else seq
        if isinstance(seq, np.ndarray) and seq.dtype.kind in "iu":
            if seq.size and (seq.min() < 0 or seq.max() >= self.size):
                raise InputError("sequence contains symbols outside the alphabet")
            return seq.astype(np.int64, copy=False)
        return np.fromiter((self.index(s) for s in seq), dtype=np.int64, count=len(seq))

    def __len__(self) -> int:
        return self.size


@dataclass(frozen=True)
class Distribution:
    """A PMF over a finite alphabet; a type when ``denominator`` is set."""

    probs: np.ndarray
    denominator: Optional[int] = None
    alphabet: Optional[Alphabet] = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise InputError("probability vector must be one-dimensional and nonempty")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InputError(f"probability vector has negative or non-finite entries: {p}")
        total = p.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise InputError(f"probabilities sum to {total!r}, not 1")
        p = p / total
        if self.denominator is not None:
            n = int(self.denominator)
            if n != self.denominator or n < 1:
                raise InputError("type denominator must be a positive integer")
            counts = p * n
            if np.max(np.abs(counts - np.round(counts))) > PROB_TOL:
                raise InputError(f"entries are not multiples of 1/{n}")
            object.__setattr__(self, "denominator", n)
        alphabet = self.alphabet or Alphabet(p.size)
        if alphabet.size != p.size:
            raise InputError("alphabet size does not match probability vector")
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def size(self) -> int:
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, i):
        return self.probs[i]

    def matches(self, other: "Distribution | Sequence[float]") -> bool:
        """Matching relation: entrywise equality within 1e-9."""
        q = as_distribution(other)
        return q.size == self.size and bool(np.all(np.abs(q.probs - self.probs) <= PROB_TOL))


@dataclass(frozen=True)
class Kernel:
    """Row-stochastic matrix; row ``a`` is the output law given input ``a``.

    Rows may be flagged undefined (conditional types of inputs that never
    occur); such rows hold NaN and ``defined[a]`` is False.
    """

    rows: np.ndarray
    defined: Optional[np.ndarray] = None
    input_alphabet: Optional[Alphabet] = None
    output_alphabet: Optional[Alphabet] = None

    def __post_init__(self):
        m = np.array(self.rows, dtype=float)
        if m.ndim != 2 or m.size == 0:
            raise InputError("kernel must be a nonempty 2-D matrix")
        defined = (np.ones(m.shape[0], dtype=bool) if self.defined is None
                   else np.array(self.defined, dtype=bool))
        if defined.shape != (m.shape[0],):
            raise InputError("defined mask length must equal the number of rows")
        for a in range(m.shape[0]):
            if not defined[a]:
                m[a] = np.nan
                continue
            row = m[a]
            if not np.all(np.isfinite(row)) or np.any(row < 0):
                raise InputError(f"kernel row {a} has negative or non-finite entries")
            s = row.sum()
            if abs(s - 1.0) > PROB_TOL:
                raise InputError(f"kernel row {a} sums to {s!r}, not 1")
            m[a] = row / s
        ia = self.input_alphabet or Alphabet(m.shape[0])
        oa = self.output_alphabet or Alphabet(m.shape[1])
        if ia.size != m.shape[0] or oa.size != m.shape[1]:
            raise InputError("kernel shape does not match its alphabets")
        defined.setflags(write=False)
        object.__setattr__(self, "rows", _frozen(m))
        object.__setattr__(self, "defined", defined)
        object.__setattr__(self, "input_alphabet", ia)
        object.__setattr__(self, "output_alphabet", oa)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.rows, dtype=dtype)

    def row(self, a: int) -> Distribution:
        if not self.defined[a]:
            raise InputError(f"kernel row {a} is undefined")
        return Distribution(self.rows[a], alphabet=self.output_alphabet)

    @classmethod
    def identity(cls, k: int) -> "Kernel":
        return cls(np.eye(k))

    @classmethod
    def constant(cls, row: Sequence[float], k: int) -> "Kernel":
        return cls(np.tile(np.asarray(row, dtype=float), (k, 1)))


@dataclass(frozen=True)
class JointDistribution:
    """Joint PMF (or joint type) over X x Y, stored as a |X| x |Y| matrix."""

    probs: np.ndarray
    denominator: Optional[int] = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2 or p.size == 0:
            raise InputError("joint distribution must be a nonempty 2-D matrix")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InputError("joint distribution has negative or non-finite entries")
        total = p.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise InputError(f"joint probabilities sum to {total!r}, not 1")
        p = p / total
        if self.denominator is not None:
            n = int(self.denominator)
            counts = p * n
            if n < 1 or np.max(np.abs(counts - np.round(counts))) > PROB_TOL:
                raise InputError(f"entries are not multiples of 1/{self.denominator}")
            object.__setattr__(self, "denominator", n)
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def marginal_x(self) -> Distribution:
        return Distribution(self.probs.sum(axis=1), denominator=self.denominator)

    def marginal_y(self) -> Distribution:
        return Distribution(self.probs.sum(axis=0), denominator=self.denominator)

    def conditional(self) -> Kernel:
        """Marginal conditional of Y given X; rows with zero X-mass are undefined."""
        qx = self.probs.sum(axis=1)
        defined = qx > 0
        rows = np.full(self.shape, np.nan)
        rows[defined] = self.probs[defined] / qx[defined, None]
        return Kernel(rows, defined=defined)

    @classmethod
    def from_input_and_kernel(cls, n: "Distribution | Sequence[float]",
                              kernel: "Kernel | np.ndarray") -> "JointDistribution":
        """Chain rule P(a, b) = N(a) J(b|a); undefined rows must carry zero mass."""
        nd = as_distribution(n)
        k = as_kernel(kernel)
        if k.shape[0] != nd.size:
            raise InputError("input distribution does not match kernel input alphabet")
        rows = np.where(k.defined[:, None], k.rows, 0.0)
        if np.any(nd.probs[~k.defined] > 0):
            raise InputError("input puts mass on an undefined kernel row")
        return cls(nd.probs[:, None] * rows)


@dataclass(frozen=True)
class ChannelState:
    kernel_y: Kernel
    kernel_z: Kernel


@dataclass(frozen=True)
class CompoundChannel:
    """Finite family of (p_{Y|X,s}, p_{Z|X,s}) kernel pairs on shared alphabets."""

    x_alphabet: Alphabet
    y_alphabet: Alphabet
    z_alphabet: Alphabet
    states: tuple[ChannelState, ...] = field(default_factory=tuple)
    name: Optional[str] = None
    description: Optional[str] = None

    def __post_init__(self):
        states = tuple(self.states)
        if not states:
            raise InputError("a compound channel needs at least one state")
        for s, st in enumerate(states):
            if st.kernel_y.shape != (self.x_alphabet.size, self.y_alphabet.size):
                raise InputError(f"state {s}: kernel_y shape {st.kernel_y.shape} does not match "
                                 f"alphabets ({self.x_alphabet.size}, {self.y_alphabet.size})")
            if st.kernel_z.shape != (self.x_alphabet.size, self.z_alphabet.size):
                raise InputError(f"state {s}: kernel_z shape {st.kernel_z.shape} does not match "
                                 f"alphabets ({self.x_alphabet.size}, {self.z_alphabet.size})")
            if not (st.kernel_y.defined.all() and st.kernel_z.defined.all()):
                raise InputError(f"state {s}: channel kernels must have every row defined")
        object.__setattr__(self, "states", states)

    @property
    def num_states(self) -> int:
        return len(self.states)

    @classmethod
    def from_matrices(cls, kernels_y: Sequence, kernels_z: Sequence, **kw) -> "CompoundChannel":
        ky = [as_kernel(k) for k in kernels_y]
        kz = [as_kernel(k) for k in kernels_z]
        if len(ky) != len(kz):
            raise InputError("need one kernel_z per kernel_y")
        if not ky:
            raise InputError("a compound channel needs at least one state")
        states = tuple(ChannelState(a, b) for a, b in zip(ky, kz))
        return cls(Alphabet(ky[0].shape[0]), Alphabet(ky[0].shape[1]), Alphabet(kz[0].shape[1]),
                   states, **kw)

    def kernels_y(self) -> list[np.ndarray]:
        return [st.kernel_y.rows for st in self.states]

    def kernels_z(self) -> list[np.ndarray]:
        return [st.kernel_z.rows for st in self.states]


def as_distribution(p: Any) -> Distribution:
    if isinstance(p, Distribution):
        return p
    return Distribution(np.asarray(p, dtype=float))


def as_kernel(k: Any) -> Kernel:
    if isinstance(k, Kernel):
        return k
    return Kernel(np.asarray(k, dtype=float))


def _encode_pair(seq_x, seq_y, alphabet_x, alphabet_y):
    x = alphabet_x.encode(seq_x)
    y = alphabet_y.encode(seq_y)
    if x.size != y.size:
        raise InputError(f"sequence lengths differ: {x.size} != {y.size}")
    if x.size == 0:
        raise InputError("sequences must be nonempty")
    return x, y


def _alphabet_for(alphabet: "Alphabet | int | None", seq) -> Alphabet:
    if isinstance(alphabet, Alphabet):
        return alphabet
    if alphabet is not None:
        return Alphabet(int(alphabet))
    arr = np.asarray(seq)
    if arr.size == 0 or arr.dtype.kind not in "iu":
        raise InputError("an alphabet is required for non-integer or empty sequences")
    return Alphabet(int(arr.max()) + 1)


def type_of_sequence(seq, alphabet: "Alphabet | int | None" = None) -> Distribution:
    """Empirical distribution (type) of ``seq``; entries are count / n."""
    alph = _alphabet_for(alphabet, seq)
    x = alph.encode(seq)
    if x.size == 0:
        raise InputError("cannot take the type of an empty sequence")
    counts = np.bincount(x, minlength=alph.size)
    return Distribution(counts / x.size, denominator=x.size, alphabet=alph)


def joint_type(seq_x, seq_y, alphabet_x=None, alphabet_y=None) -> JointDistribution:
    ax = _alphabet_for(alphabet_x, seq_x)
    ay = _alphabet_for(alphabet_y, seq_y)
    x, y = _encode_pair(seq_x, seq_y, ax, ay)
    counts = np.bincount(x * ay.size + y, minlength=ax.size * ay.size)
    return JointDistribution(counts.reshape(ax.size, ay.size) / x.size, denominator=x.size)


def conditional_type(seq_y, seq_x, alphabet_y=None, alphabet_x=None) -> Kernel:
    """Conditional type of ``seq_y`` given ``seq_x``.

    Rows for input symbols that never occur in ``seq_x`` are flagged
    undefined rather than filled in.
    """
    ax = _alphabet_for(alphabet_x, seq_x)
    ay = _alphabet_for(alphabet_y, seq_y)
    x, y = _encode_pair(seq_x, seq_y, ax, ay)
    counts = np.bincount(x * ay.size + y, minlength=ax.size * ay.size).reshape(ax.size, ay.size)
    nx = counts.sum(axis=1)
    defined = nx > 0
    rows = np.full(counts.shape, np.nan)
    rows[defined] = counts[defined] / nx[defined, None]
    return Kernel(rows, defined=defined, input_alphabet=ax, output_alphabet=ay)


def variational_distance(p, q) -> float:
    """l1 distance sum_a |P(a) - Q(a)|, in [0, 2]."""
    pa = np.asarray(as_distribution(p).probs)
    qa = np.asarray(as_distribution(q).probs)
    if pa.shape != qa.shape:
        raise InputError(f"alphabet mismatch: sizes {pa.size} and {qa.size}")
    return float(np.abs(pa - qa).sum())


def in_delta_neighborhood(q, n, delta: float) -> bool:
    if delta < 0:
        raise InputError(f"delta must be nonnegative, got {delta}")
    return variational_distance(q, n) <= delta


def push_forward(n, kernel) -> Distribution:
    """Output law M(b) = sum_a N(a) kernel[a][b]."""
    nd = as_distribution(n)
    k = as_kernel(kernel)
    if k.shape[0] != nd.size:
        raise InputError(f"distribution over {nd.size} symbols does not match a kernel "
                         f"with {k.shape[0]} inputs")
    rows = np.where(k.defined[:, None], k.rows, 0.0)
    if np.any(nd.probs[~k.defined] > 0):
        raise InputError("distribution puts mass on an undefined kernel row")
    out = nd.probs @ rows
    return Distribution(out / out.sum(), alphabet=k.output_alphabet)


def delta_preimage_membership(n, q, kernel, delta: float) -> bool:
    """Whether the push-forward of ``n`` lies within ``delta`` of ``q``.

    ``delta == 0`` tests exact pre-image membership up to 1e-9 on V.
    """
    if delta < 0:
        raise InputError(f"delta must be nonnegative, got {delta}")
    m = push_forward(n, kernel)
    qd = as_distribution(q)
    if qd.size != m.size:
        raise InputError("target alphabet does not match kernel output alphabet")
    return variational_distance(m, qd) <= delta + (PREIMAGE_TOL if delta == 0 else 0.0)


def lattice_points(n: int, k: int) -> np.ndarray:
    """All count vectors of length ``k`` summing to ``n`` (rows), as int array."""
    if k == 1:
        return np.array([[n]], dtype=np.int64)
    out = []
    for first in range(n, -1, -1):
        rest = lattice_points(n - first, k - 1)
        out.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
    return np.vstack(out)
