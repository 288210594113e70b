# wmsn/entropy.py
"""
Source-correlation model: conditional entropies H(S | sources - S) in bits.

Sessions carry an explicit table keyed by subset. For jointly Gaussian
sources the table can be generated from a covariance matrix.
"""

import math
from typing import TYPE_CHECKING, Dict, Iterable, Sequence, Tuple

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .models import SessionSpec

LOG2_2PIE = math.log2(2.0 * math.pi * math.e)


def subset_key(subset: Iterable[str]) -> str:
    return ",".join(subset)


def conditional_entropy(session: "SessionSpec", subset: Sequence[str]) -> float:
    """Table lookup of H(subset | remaining sources), bits."""
    members = tuple(s for s in session.sources if s in set(subset))
    if not subset or len(members) != len(set(subset)):
        raise KeyError(f"session {session.id}: {set(subset)!r} is not a nonempty subset of its sources")
    return session.entropy_table[subset_key(members)]


def gaussian_entropy(cov: np.ndarray) -> float:
    """Differential entropy of a Gaussian vector, bits. Empty vector -> 0."""
    k = cov.shape[0]
    if k == 0:
        return 0.0
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise ValueError("covariance matrix must be positive definite")
    return 0.5 * (k * LOG2_2PIE + logdet / math.log(2.0))


def gaussian_entropy_table(sources: Sequence[str], covariance) -> Dict[str, float]:
    """
    H(S | complement) = h(all) - h(complement) for every nonempty subset S.

    Negative differential entropies are floored at 0 because session tables
    must be nonnegative.
    """
    cov = np.asarray(covariance, dtype=float)
    k = len(sources)
    if cov.shape != (k, k):
        raise ValueError(f"covariance must be {k}x{k}")
    if not np.allclose(cov, cov.T):
        raise ValueError("covariance matrix must be symmetric")
    joint = gaussian_entropy(cov)
    table: Dict[str, float] = {}
    for mask in range(1, 2 ** k):
        members: Tuple[int, ...] = tuple(i for i in range(k) if mask >> i & 1)
        rest = [i for i in range(k) if not mask >> i & 1]
        value = joint - gaussian_entropy(cov[np.ix_(rest, rest)])
        table[subset_key(sources[i] for i in members)] = max(0.0, value)
    return table
