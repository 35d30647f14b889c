"""Estimand weights over ordered within-cluster dyads.

Entry ``e`` assigns weight ``weight[e]`` to the dyad in which ``sender[e]``
changes treatment and ``receiver[e]`` is the unit whose outcome is measured.
Indices are global unit indices. The decomposition factors each weight as
``sender_marginal * receiver_given_sender`` and as
``receiver_marginal * sender_given_receiver``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import BadParam, EmptyConditional, EmptyEstimand, InvalidEdge, LengthMismatch
from .network import ClusteredNetwork

__all__ = [
    "Decomposition",
    "EstimandWeights",
    "build_weights",
    "build_conditional_weights",
    "from_triplets",
    "conditional_restrict",
    "decompose",
    "rescale",
]


@dataclass(frozen=True)
class Decomposition:
    sender_marginal: np.ndarray  # per unit
    receiver_given_sender: np.ndarray  # per entry
    receiver_marginal: np.ndarray  # per unit
    sender_given_receiver: np.ndarray  # per entry
    scheme: str


@dataclass(frozen=True)
class EstimandWeights:
    network: ClusteredNetwork
    receiver: np.ndarray
    sender: np.ndarray
    weight: np.ndarray
    s_n: float
    kind: str
    decomposition: Decomposition | None = None
    # S_N before rescaling; equals s_n for weights that were never rescaled
    original_s_n: float | None = None
    # ("receiver" | "sender", constant marginal) for the built-in split
    builtin_split: tuple[str, float] | None = None

    def __post_init__(self) -> None:
        if self.original_s_n is None:
            object.__setattr__(self, "original_s_n", float(self.s_n))

    @property
    def n_entries(self) -> int:
        return int(len(self.weight))

    @property
    def cluster(self) -> np.ndarray:
        return self.network.cluster_of[self.receiver]

    def sender_totals(self) -> np.ndarray:
        return np.bincount(self.sender, weights=self.weight, minlength=self.network.n_units)

    def receiver_totals(self) -> np.ndarray:
        return np.bincount(self.receiver, weights=self.weight, minlength=self.network.n_units)

    def dense(self, k: int) -> np.ndarray:
        """``S[i, j]`` for cluster ``k`` in local indices."""
        n = int(self.network.sizes[k])
        base = int(self.network.offsets[k])
        sel = self.cluster == k
        out = np.zeros((n, n))
        out[self.receiver[sel] - base, self.sender[sel] - base] = self.weight[sel]
        return out

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {
            (int(i), int(j)): float(w) for i, j, w in zip(self.receiver, self.sender, self.weight)
        }


def _make(
    network: ClusteredNetwork,
    receiver: np.ndarray,
    sender: np.ndarray,
    weight: np.ndarray,
    kind: str,
    s_n: float | None = None,
    builtin_split: tuple[str, float] | None = None,
) -> EstimandWeights:
    receiver = np.asarray(receiver, dtype=np.int64)
    sender = np.asarray(sender, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    keep = weight > 0
    receiver, sender, weight = receiver[keep], sender[keep], weight[keep]
    order = np.lexsort((sender, receiver))
    receiver, sender, weight = receiver[order], sender[order], weight[order]
    total = float(weight.sum())
    return EstimandWeights(
        network=network,
        receiver=receiver,
        sender=sender,
        weight=weight,
        s_n=total if s_n is None else float(s_n),
        kind=kind,
        builtin_split=builtin_split,
    )


def _all_pairs(network: ClusteredNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Every ordered within-cluster pair ``(receiver, sender)``, receiver-major."""
    recv: list[np.ndarray] = []
    send: list[np.ndarray] = []
    for k in range(network.n_clusters):
        n = int(network.sizes[k])
        base = int(network.offsets[k])
        i, j = np.nonzero(~np.eye(n, dtype=bool))
        recv.append(i + base)
        send.append(j + base)
    return np.concatenate(recv), np.concatenate(send)


def build_weights(
    network: ClusteredNetwork,
    kind: str,
    direction_variant: bool = False,
    scheme: str = "builtin",
) -> EstimandWeights:
    """Outward, inward or pairwise weights with a decomposition attached.

    outward: each sender with out-degree > 0 spreads ``1 / N_out`` evenly over
    its out-neighbors. With ``direction_variant`` the receivers are the
    sender's in-neighbors instead.
    inward: each receiver with in-degree > 0 spreads ``1 / N_in`` evenly over
    its in-neighbors; the variant uses out-neighbors as senders.
    pairwise: ``1 / N`` on every ordered within-cluster pair.
    """
    N = network.n_units
    src, dst = network.src, network.dst
    if kind == "outward":
        # edge src -> dst: sender src, receiver dst (variant: receiver is an in-neighbor)
        sender, receiver = (dst, src) if direction_variant else (src, dst)
        deg = np.bincount(sender, minlength=N)
        n_active = int(np.sum(deg > 0))
        if n_active == 0:
            raise EmptyEstimand("no unit has a neighbor to send effects to")
        w = 1.0 / (n_active * deg[sender])
        out = _make(network, receiver, sender, w, kind, s_n=1.0, builtin_split=("receiver", 1.0 / n_active))
    elif kind == "inward":
        # edge src -> dst: receiver dst hears from in-neighbor src
        receiver, sender = (src, dst) if direction_variant else (dst, src)
        deg = np.bincount(receiver, minlength=N)
        n_active = int(np.sum(deg > 0))
        if n_active == 0:
            raise EmptyEstimand("no unit has a neighbor to receive effects from")
        w = 1.0 / (n_active * deg[receiver])
        out = _make(network, receiver, sender, w, kind, s_n=1.0, builtin_split=("sender", 1.0 / n_active))
    elif kind == "pairwise":
        receiver, sender = _all_pairs(network)
        w = np.full(len(receiver), 1.0 / N)
        s_n = float(np.sum(network.sizes * (network.sizes - 1))) / N
        out = _make(network, receiver, sender, w, kind, s_n=s_n)
    else:
        raise BadParam(f"unknown estimand kind {kind!r}")
    if direction_variant:
        out = replace(out, kind=f"{kind}_variant")
    return decompose(out, scheme)


def build_conditional_weights(
    network: ClusteredNetwork,
    kind: str,
    covariates: np.ndarray,
    x: float,
    scheme: str = "builtin",
) -> EstimandWeights:
    """Conditional outward, inward or pairwise weights restricted to senders
    whose covariate equals ``x``, each normalized within its own support."""
    X = np.asarray(covariates, dtype=np.float64)
    if X.shape != (network.n_units,):
        raise LengthMismatch(f"expected {network.n_units} covariates, got {X.shape}")
    hit = X == x
    N = network.n_units
    src, dst = network.src, network.dst
    if kind == "outward":
        deg = np.bincount(src, minlength=N)
        active = (deg > 0) & hit
        n_active = int(active.sum())
        if n_active == 0:
            raise EmptyConditional(f"no sender with covariate {x} has out-neighbors")
        sel = active[src]
        w = 1.0 / (n_active * deg[src[sel]])
        out = _make(network, dst[sel], src[sel], w, "conditional_outward", s_n=1.0)
    elif kind == "inward":
        sel = hit[src]
        deg_x = np.bincount(dst[sel], minlength=N)
        n_active = int(np.sum(deg_x > 0))
        if n_active == 0:
            raise EmptyConditional(f"no receiver has an in-neighbor with covariate {x}")
        w = 1.0 / (n_active * deg_x[dst[sel]])
        out = _make(
            network, dst[sel], src[sel], w, "conditional_inward", s_n=1.0,
            builtin_split=("sender", 1.0 / n_active),
        )
    elif kind == "pairwise":
        n_x = int(hit.sum())
        if n_x == 0:
            raise EmptyConditional(f"no unit has covariate {x}")
        receiver, sender = _all_pairs(network)
        sel = hit[sender]
        w = np.full(int(sel.sum()), 1.0 / n_x)
        out = _make(network, receiver[sel], sender[sel], w, "conditional_pairwise")
    else:
        raise BadParam(f"unknown estimand kind {kind!r}")
    return decompose(out, scheme)


def from_triplets(
    network: ClusteredNetwork,
    cluster: np.ndarray,
    receiver: np.ndarray,
    sender: np.ndarray,
    weight: np.ndarray,
    kind: str = "custom",
) -> EstimandWeights:
    """Custom weights given in per-cluster local indices."""
    cluster = np.asarray(cluster, dtype=np.int64)
    receiver = np.asarray(receiver, dtype=np.int64)
    sender = np.asarray(sender, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    if not (len(cluster) == len(receiver) == len(sender) == len(weight)):
        raise LengthMismatch("triplet columns differ in length")
    if np.any((cluster < 0) | (cluster >= network.n_clusters)):
        raise InvalidEdge("cluster id out of range")
    n = network.sizes[cluster]
    if np.any((receiver < 0) | (receiver >= n) | (sender < 0) | (sender >= n)):
        raise InvalidEdge("unit index out of range for its cluster")
    if np.any(receiver == sender):
        raise InvalidEdge("a unit cannot send effects to itself")
    if np.any(~np.isfinite(weight)) or np.any(weight <= 0):
        raise BadParam("custom weights must be finite and positive")
    base = network.offsets[cluster]
    g_recv, g_send = receiver + base, sender + base
    key = g_recv * network.n_units + g_send
    if len(np.unique(key)) != len(key):
        raise InvalidEdge("duplicate (receiver, sender) pair in custom weights")
    if len(weight) == 0:
        raise EmptyEstimand("custom weights are empty")
    return decompose(_make(network, g_recv, g_send, weight, kind), "generic")


def conditional_restrict(weights: EstimandWeights, covariates: np.ndarray, x: float) -> EstimandWeights:
    """Keep only entries whose sender has covariate ``x``; ``S_N`` becomes their sum."""
    X = np.asarray(covariates, dtype=np.float64)
    if X.shape != (weights.network.n_units,):
        raise LengthMismatch(f"expected {weights.network.n_units} covariates, got {X.shape}")
    sel = X[weights.sender] == x
    if not sel.any():
        raise EmptyConditional(f"no weighted sender has covariate {x}")
    return _make(
        weights.network,
        weights.receiver[sel],
        weights.sender[sel],
        weights.weight[sel],
        f"{weights.kind}|x={x:g}",
    )


def _generic_side(weight: np.ndarray, group: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    marginal = np.bincount(group, weights=weight, minlength=N)
    denom = marginal[group]
    conditional = np.divide(weight, denom, out=np.zeros_like(weight), where=denom > 0)
    return marginal, conditional


def _constant_side(weight: np.ndarray, group: np.ndarray, c: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    # the constant applies to units that carry weight on this side; others stay at zero
    marginal = np.zeros(N)
    marginal[group] = c
    return marginal, weight / c


def decompose(weights: EstimandWeights, scheme: str = "builtin") -> EstimandWeights:
    """Attach marginal and conditional factors on both sides.

    ``generic`` uses row and column sums. ``builtin`` differs only on
    the side recorded in ``builtin_split``, where the marginal is a constant
    across units; all other kinds fall back to the generic split.
    """
    if scheme not in ("builtin", "generic"):
        raise BadParam(f"unknown decomposition scheme {scheme!r}")
    N = weights.network.n_units
    w = weights.weight
    s_marg, r_given_s = _generic_side(w, weights.sender, N)
    r_marg, s_given_r = _generic_side(w, weights.receiver, N)
    used = "generic"
    if scheme == "builtin" and weights.builtin_split is not None:
        side, c = weights.builtin_split
        if side == "receiver":
            r_marg, s_given_r = _constant_side(w, weights.receiver, c, N)
        else:
            s_marg, r_given_s = _constant_side(w, weights.sender, c, N)
        used = "builtin"
    dec = Decomposition(
        sender_marginal=s_marg,
        receiver_given_sender=r_given_s,
        receiver_marginal=r_marg,
        sender_given_receiver=s_given_r,
        scheme=used,
    )
    return replace(weights, decomposition=dec)


def rescale(weights: EstimandWeights) -> EstimandWeights:
    """Divide entries by ``S_N`` so they sum to one.

    The original ``S_N`` is kept in ``original_s_n``. Marginals of the
    decomposition are divided by ``S_N``; conditionals are left unchanged so
    the product identity still holds.
    """
    s_n = float(weights.s_n)
    dec = weights.decomposition
    if dec is not None:
        dec = replace(
            dec,
            sender_marginal=dec.sender_marginal / s_n,
            receiver_marginal=dec.receiver_marginal / s_n,
        )
    builtin = weights.builtin_split
    if builtin is not None:
        builtin = (builtin[0], builtin[1] / s_n)
    return replace(
        weights,
        weight=weights.weight / s_n,
        s_n=1.0,
        original_s_n=weights.original_s_n,
        decomposition=dec,
        builtin_split=builtin,
    )
