"""Entropy, divergence and mutual information on types and PMFs.

All quantities are in nats.  ``0 log 0`` is taken as 0 and a divergence
whose first argument is not absolutely continuous w.r.t. the second is
``math.inf``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import entr, rel_entr

from .errors import InputError
from .types_core import (
    Distribution,
    JointDistribution,
    as_distribution,
    as_kernel,
)

LN2 = math.log(2.0)
SMOOTHING = 1e-12


def to_bits(nats: float) -> float:
    return nats / LN2


def _probs(p) -> np.ndarray:
    if isinstance(p, (Distribution, JointDistribution)):
        return np.asarray(p.probs)
    return np.asarray(p, dtype=float)


def entropy(p) -> float:
    """Shannon entropy of a distribution (or joint distribution)."""
    return float(entr(_probs(p)).sum())


def conditional_entropy(q, kernel) -> float:
    """H_Q(J) = sum_a Q(a) H(J(.|a)); rows with Q(a) = 0 contribute nothing."""
    qd = as_distribution(q)
    k = as_kernel(kernel)
    if k.shape[0] != qd.size:
        raise InputError("distribution does not match kernel input alphabet")
    total = 0.0
    for a in np.flatnonzero(qd.probs > 0):
        if not k.defined[a]:
            raise InputError(f"positive mass on undefined kernel row {a}")
        total += qd.probs[a] * entr(k.rows[a]).sum()
    return float(total)


def kl_divergence(p, b) -> float:
    pa, ba = _probs(p), _probs(b)
    if pa.shape != ba.shape:
        raise InputError(f"shape mismatch: {pa.shape} vs {ba.shape}")
    return float(rel_entr(pa, ba).sum())


def mutual_information(joint) -> float:
    """I(P) = D(P || P_X P_Y)."""
    p = _probs(joint)
    if p.ndim != 2:
        raise InputError("mutual information needs a joint (2-D) distribution")
    product = np.outer(p.sum(axis=1), p.sum(axis=0))
    return max(kl_divergence(p, product), 0.0)


def mi_of_input_through(n, kernel) -> float:
    """Mutual information of the joint law N(a) J(b|a)."""
    return mutual_information(JointDistribution.from_input_and_kernel(n, kernel))


def mi_value(n: np.ndarray, rows: np.ndarray) -> float:
    """Fast path of :func:`mi_of_input_through` for raw arrays (no validation).

    Uses I = H(M) - H_N(J) with M the push-forward of ``n``.
    """
    m = n @ rows
    return float(entr(m).sum() - n @ entr(rows).sum(axis=1))


def mi_gradient(n: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Gradient of ``mi_value`` in ``n``: D(J(.|a) || M) - 1 per input symbol."""
    m = n @ rows
    return rel_entr(rows, m[None, :]).sum(axis=1) - 1.0


def smoothed_interior(n) -> tuple[np.ndarray, bool]:
    """Return ``n`` pulled into the open simplex by 1e-12 mixing, and whether it moved."""
    arr = np.asarray(as_distribution(n).probs, dtype=float)
    if np.all(arr > 0):
        return arr, False
    k = arr.size
    return (1 - k * SMOOTHING) * arr + SMOOTHING, True


def mi_supergradient(n, kernel) -> np.ndarray:
    """Gradient of ``N -> I(N J)`` at an interior point.

    Component ``a`` is ``D(J(.|a) || M) - 1`` with ``M = N J``.  The
    function is concave, so this is also a supergradient.  A point on the
    simplex boundary is first mixed with 1e-12 of the uniform law; callers
    that need to know can check :func:`smoothed_interior`.
    """
    k = as_kernel(kernel)
    arr, _ = smoothed_interior(n)
    if k.shape[0] != arr.size:
        raise InputError("distribution does not match kernel input alphabet")
    return mi_gradient(arr, np.asarray(k.rows))
