"""Treatment assignment mechanisms and the importance weight ``W``.

A design answers two exact probability queries per cluster: the probability
of a full cluster assignment, and the marginal probability of the assignment
of everybody except one unit. Both are evaluated in log space.

The estimator weight of sender ``j`` is
``P_alpha(z without j) / P_beta(z)`` where ``alpha`` is the hypothetical design
and ``beta`` the design that actually generated ``z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import BadParam, LengthMismatch, ZeroRealizedProbability
from .network import ClusteredNetwork

__all__ = [
    "AssignmentDesign",
    "bernoulli",
    "complete_randomization",
    "prob_cluster",
    "prob_excluding",
    "estimator_weight",
    "estimator_weights",
    "excluding_log_probs",
    "cluster_log_probs",
    "sample",
    "make_rng",
]

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


@dataclass(frozen=True)
class AssignmentDesign:
    """``iid_bernoulli`` with probability ``p``, or ``complete_randomization``
    with ``treated_counts`` either a single count or one count per cluster."""

    kind: str
    p: float | None = None
    treated_counts: int | tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind == "iid_bernoulli":
            if self.p is None or not (0.0 < float(self.p) < 1.0):
                raise BadParam(f"Bernoulli probability must lie in (0, 1), got {self.p}")
        elif self.kind == "complete_randomization":
            if self.treated_counts is None:
                raise BadParam("complete randomization needs treated_counts")
            if not isinstance(self.treated_counts, int):
                object.__setattr__(self, "treated_counts", tuple(int(m) for m in self.treated_counts))
        else:
            raise BadParam(f"unknown design kind {self.kind!r}")

    @property
    def is_bernoulli(self) -> bool:
        return self.kind == "iid_bernoulli"

    def treated_count(self, k: int, n: int) -> int:
        """Number treated in cluster ``k`` of size ``n`` (CR designs only)."""
        tc = self.treated_counts
        m = tc if isinstance(tc, int) else tc[k]  # type: ignore[index]
        if not (0 < m < n):
            raise BadParam(f"cluster {k}: treated count {m} must satisfy 0 < m < {n}")
        return m

    def marginal_prob(self, k: int, n: int) -> float:
        """``P(z_i = 1)`` for any unit of cluster ``k``."""
        if self.is_bernoulli:
            return float(self.p)  # type: ignore[arg-type]
        return self.treated_count(k, n) / n

    def validate_for(self, network: ClusteredNetwork) -> None:
        if not self.is_bernoulli:
            if not isinstance(self.treated_counts, int) and len(self.treated_counts) != network.n_clusters:  # type: ignore[arg-type]
                raise LengthMismatch(
                    f"{len(self.treated_counts)} treated counts for {network.n_clusters} clusters"  # type: ignore[arg-type]
                )
            for k, n in enumerate(network.sizes):
                self.treated_count(k, int(n))


def bernoulli(p: float) -> AssignmentDesign:
    return AssignmentDesign("iid_bernoulli", p=float(p))


def complete_randomization(treated_counts: int | Sequence[int]) -> AssignmentDesign:
    tc = treated_counts if isinstance(treated_counts, int) else tuple(treated_counts)
    return AssignmentDesign("complete_randomization", treated_counts=tc)


def _log_comb(n: int, m: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(m + 1) - math.lgamma(n - m + 1)


def _as_binary(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    if z.size and not np.all((z == 0) | (z == 1)):
        raise BadParam("treatment vectors must be binary")
    return z.astype(np.int64)


def _log_prob(design: AssignmentDesign, z: np.ndarray, n_total: int, k: int) -> np.ndarray:
    """Log probability of the last axis of ``z`` being the full assignment of
    cluster ``k`` (size ``n_total``) or, when ``z`` is one shorter, the
    excluding-marginal of the remaining units."""
    s = z.sum(axis=-1)
    length = z.shape[-1]
    if design.is_bernoulli:
        p = float(design.p)  # type: ignore[arg-type]
        return s * math.log(p) + (length - s) * math.log1p(-p)
    m = design.treated_count(k, n_total)
    if length == n_total:
        hit = s == m
    else:
        hit = (s == m) | (s == m - 1)
    with np.errstate(divide="ignore"):
        return np.where(hit, -_log_comb(n_total, m), -np.inf)


def prob_cluster(design: AssignmentDesign, z_k: Sequence[int], k: int = 0, n: int | None = None) -> float:
    """Probability of the full assignment ``z_k`` of cluster ``k``."""
    z = _as_binary(np.asarray(z_k))
    if n is not None and len(z) != n:
        raise LengthMismatch(f"assignment has length {len(z)}, cluster size is {n}")
    return float(np.exp(_log_prob(design, z, len(z), k)))


def prob_excluding(
    design: AssignmentDesign, j: int, z_minus_j: Sequence[int], k: int = 0, n: int | None = None
) -> float:
    """Marginal probability that everybody except unit ``j`` is assigned ``z_minus_j``.

    ``n`` defaults to ``len(z_minus_j) + 1``. The value does not depend on
    ``j`` for the built-in exchangeable designs, but ``j`` is validated.
    """
    z = _as_binary(np.asarray(z_minus_j))
    n_total = len(z) + 1 if n is None else n
    if len(z) != n_total - 1:
        raise LengthMismatch(f"expected {n_total - 1} entries, got {len(z)}")
    if not (0 <= j < n_total):
        raise LengthMismatch(f"unit {j} outside cluster of size {n_total}")
    return float(np.exp(_log_prob(design, z, n_total, k)))


def estimator_weight(
    alpha: AssignmentDesign, beta: AssignmentDesign, j: int, z_k: Sequence[int], k: int = 0
) -> float:
    """Importance weight of sender ``j`` given the realized cluster assignment."""
    z = _as_binary(np.asarray(z_k))
    n = len(z)
    log_b = float(_log_prob(beta, z, n, k))
    if log_b == -np.inf:
        raise ZeroRealizedProbability(f"cluster {k}: realized assignment impossible under beta")
    if alpha.is_bernoulli and alpha == beta:
        p = float(alpha.p)  # type: ignore[arg-type]
        return 1.0 / p if z[j] == 1 else 1.0 / (1.0 - p)
    log_a = float(_log_prob(alpha, np.delete(z, j), n, k))
    return float(np.exp(log_a - log_b))


def cluster_log_probs(design: AssignmentDesign, z: np.ndarray, k: int) -> np.ndarray:
    """Log probability of each row of a ``(m, n_k)`` batch of assignments."""
    z = np.asarray(z, dtype=np.int64)
    return np.asarray(_log_prob(design, z, z.shape[-1], k), dtype=np.float64)


def excluding_log_probs(design: AssignmentDesign, z: np.ndarray, k: int) -> np.ndarray:
    """``out[r, j] = log P(z_r without unit j)`` for a ``(m, n_k)`` batch."""
    z = np.asarray(z, dtype=np.int64)
    n = z.shape[-1]
    s = z.sum(axis=-1, keepdims=True) - z
    if design.is_bernoulli:
        p = float(design.p)  # type: ignore[arg-type]
        return s * math.log(p) + (n - 1 - s) * math.log1p(-p)
    m = design.treated_count(k, n)
    with np.errstate(divide="ignore"):
        return np.where((s == m) | (s == m - 1), -_log_comb(n, m), -np.inf)


def estimator_weights(
    alpha: AssignmentDesign,
    beta: AssignmentDesign,
    network: ClusteredNetwork,
    z: np.ndarray,
) -> np.ndarray:
    """Weights of every unit as sender, for one assignment ``(N,)`` or a batch ``(m, N)``."""
    z = np.asarray(z)
    if z.shape[-1] != network.n_units:
        raise LengthMismatch(f"expected {network.n_units} treatments, got {z.shape[-1]}")
    zf = z.astype(np.float64)
    if alpha.is_bernoulli and alpha == beta:
        p = float(alpha.p)  # type: ignore[arg-type]
        return np.where(z == 1, 1.0 / p, 1.0 / (1.0 - p))
    starts = network.offsets[:-1]
    sizes = network.sizes
    counts = np.add.reduceat(zf, starts, axis=-1)  # treated per cluster
    counts_u = np.repeat(counts, sizes, axis=-1)
    n_u = np.repeat(sizes, sizes).astype(np.float64)

    if beta.is_bernoulli:
        pb = float(beta.p)  # type: ignore[arg-type]
        log_b = counts_u * math.log(pb) + (n_u - counts_u) * math.log1p(-pb)
    else:
        m_u = np.repeat([beta.treated_count(k, int(n)) for k, n in enumerate(sizes)], sizes)
        lc = np.repeat([_log_comb(int(n), beta.treated_count(k, int(n))) for k, n in enumerate(sizes)], sizes)
        mismatch = (counts_u != m_u).reshape(-1, network.n_units).any(axis=0)
        if mismatch.any():
            bad = int(network.cluster_of[np.flatnonzero(mismatch)[0]])
            raise ZeroRealizedProbability(f"cluster {bad}: realized assignment impossible under beta")
        log_b = -lc + np.zeros_like(counts_u)

    s = counts_u - zf  # treated among the other units
    if alpha.is_bernoulli:
        pa = float(alpha.p)  # type: ignore[arg-type]
        log_a = s * math.log(pa) + (n_u - 1 - s) * math.log1p(-pa)
    else:
        m_u = np.repeat([alpha.treated_count(k, int(n)) for k, n in enumerate(sizes)], sizes)
        lc = np.repeat([_log_comb(int(n), alpha.treated_count(k, int(n))) for k, n in enumerate(sizes)], sizes)
        with np.errstate(divide="ignore"):
            log_a = np.where((s == m_u) | (s == m_u - 1), -lc, -np.inf)
    return np.exp(log_a - log_b)


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample(design: AssignmentDesign, network: ClusteredNetwork, seed: SeedLike) -> np.ndarray:
    """Draw one assignment for every unit, independently across clusters."""
    rng = make_rng(seed)
    N = network.n_units
    u = rng.random(N)
    if design.is_bernoulli:
        return (u < float(design.p)).astype(np.int8)  # type: ignore[arg-type]
    # rank units within each cluster by a uniform key; the m lowest are treated
    order = np.lexsort((u, network.cluster_of))
    rank = np.empty(N, dtype=np.int64)
    rank[order] = np.arange(N) - np.repeat(network.offsets[:-1], network.sizes)
    m_u = np.repeat(
        [design.treated_count(k, int(n)) for k, n in enumerate(network.sizes)], network.sizes
    )
    return (rank < m_u).astype(np.int8)
