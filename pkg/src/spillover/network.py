"""Clustered directed networks.

Units carry a global index ``0..N-1``; clusters occupy contiguous ranges
given by ``offsets``. Edges are stored as global ``(src, dst)`` arrays sorted
by ``(src, dst)``, which keeps every cluster's edges contiguous as well.
An edge ``src -> dst`` means ``dst`` is an out-neighbor of ``src``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import BadParam, ClusterTooSmall, InvalidEdge, LengthMismatch

__all__ = [
    "ClusteredNetwork",
    "DegreeStats",
    "build_network",
    "generate",
    "degree_stats",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ClusteredNetwork:
    sizes: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    offsets: np.ndarray = field(init=False)
    cluster_of: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        sizes = _frozen(np.asarray(self.sizes, dtype=np.int64))
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "src", _frozen(np.asarray(self.src, dtype=np.int64)))
        object.__setattr__(self, "dst", _frozen(np.asarray(self.dst, dtype=np.int64)))
        object.__setattr__(self, "offsets", _frozen(offsets))
        object.__setattr__(
            self, "cluster_of", _frozen(np.repeat(np.arange(len(sizes)), sizes))
        )

    @property
    def n_clusters(self) -> int:
        return int(len(self.sizes))

    @property
    def n_units(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_edges(self) -> int:
        return int(len(self.src))

    @property
    def out_degree(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.n_units)

    @property
    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_units)

    def cluster_slice(self, k: int) -> slice:
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def local_edges(self, k: int) -> np.ndarray:
        """Edges of cluster ``k`` as an ``(E_k, 2)`` array of local indices."""
        lo, hi = np.searchsorted(self.src, [self.offsets[k], self.offsets[k + 1]])
        base = self.offsets[k]
        return np.column_stack([self.src[lo:hi] - base, self.dst[lo:hi] - base])

    def adjacency(self, k: int) -> np.ndarray:
        """Dense 0/1 matrix ``A`` of cluster ``k`` with ``A[src, dst] = 1``."""
        n = int(self.sizes[k])
        a = np.zeros((n, n), dtype=np.float64)
        e = self.local_edges(k)
        a[e[:, 0], e[:, 1]] = 1.0
        return a

    def out_neighbors(self, u: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.src, [u, u + 1])
        return self.dst[lo:hi]

    def in_neighbors(self, u: int) -> np.ndarray:
        return np.sort(self.src[self.dst == u])

    def edge_lists(self) -> list[set[tuple[int, int]]]:
        return [set(map(tuple, self.local_edges(k).tolist())) for k in range(self.n_clusters)]


def build_network(
    cluster_sizes: Sequence[int],
    edge_lists: Sequence[Iterable[tuple[int, int]]],
) -> ClusteredNetwork:
    """Validate per-cluster edge sets given in local indices."""
    sizes = [int(s) for s in cluster_sizes]
    if len(edge_lists) != len(sizes):
        raise LengthMismatch(
            f"{len(sizes)} cluster sizes but {len(edge_lists)} edge lists"
        )
    srcs: list[np.ndarray] = []
    dsts: list[np.ndarray] = []
    offset = 0
    for k, (n, edges) in enumerate(zip(sizes, edge_lists)):
        if n < 2:
            raise ClusterTooSmall(f"cluster {k} has size {n}; at least 2 required")
        pairs = [(int(a), int(b)) for a, b in edges]
        seen: set[tuple[int, int]] = set()
        for a, b in pairs:
            if not (0 <= a < n and 0 <= b < n):
                raise InvalidEdge(f"cluster {k}: edge ({a}, {b}) outside 0..{n - 1}")
            if a == b:
                raise InvalidEdge(f"cluster {k}: self-loop on unit {a}")
            if (a, b) in seen:
                raise InvalidEdge(f"cluster {k}: duplicate edge ({a}, {b})")
            seen.add((a, b))
        arr = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        srcs.append(arr[:, 0] + offset)
        dsts.append(arr[:, 1] + offset)
        offset += n
    src = np.concatenate(srcs) if srcs else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dsts) if dsts else np.zeros(0, dtype=np.int64)
    return ClusteredNetwork(np.array(sizes, dtype=np.int64), src, dst)


def _from_masks(masks: np.ndarray) -> ClusteredNetwork:
    """Build from a stack of ``(K, n, n)`` boolean adjacency masks."""
    K, n, _ = masks.shape
    k, a, b = np.nonzero(masks)
    return ClusteredNetwork(np.full(K, n, dtype=np.int64), k * n + a, k * n + b)


def generate(kind: str, K: int, n: int, param: float, seed: int = 0) -> ClusteredNetwork:
    """Random or deterministic clustered digraphs with ``K`` clusters of size ``n``.

    ``er_directed`` includes each ordered pair independently with probability
    ``param``. ``regular_circulant`` links unit ``i`` to ``i+1, ..., i+d``
    (mod ``n``) with ``d = param``.
    """
    if K < 1:
        raise BadParam(f"K must be positive, got {K}")
    if n < 2:
        raise ClusterTooSmall(f"cluster size {n}; at least 2 required")
    if kind == "er_directed":
        p = float(param)
        if not (0.0 < p <= 1.0):
            raise BadParam(f"edge probability must lie in (0, 1], got {p}")
        rng = np.random.default_rng(seed)
        masks = rng.random((K, n, n)) < p
        masks[:, np.arange(n), np.arange(n)] = False
        return _from_masks(masks)
    if kind == "regular_circulant":
        d = int(param)
        if d != param or not (0 < d < n):
            raise BadParam(f"degree must be an integer in 1..{n - 1}, got {param}")
        mask = np.zeros((n, n), dtype=bool)
        rows = np.repeat(np.arange(n), d)
        cols = (rows + np.tile(np.arange(1, d + 1), n)) % n
        mask[rows, cols] = True
        return _from_masks(np.broadcast_to(mask, (K, n, n)))
    raise BadParam(f"unknown network kind {kind!r}")


@dataclass(frozen=True)
class DegreeStats:
    out_degree: np.ndarray
    in_degree: np.ndarray
    n_out: int
    n_in: int
    # keyed by covariate value; only filled when covariates are supplied
    n_out_by_x: Mapping[float, int] = field(default_factory=dict)
    in_degree_by_x: Mapping[float, np.ndarray] = field(default_factory=dict)
    n_in_by_x: Mapping[float, int] = field(default_factory=dict)

    @property
    def isolated_senders(self) -> np.ndarray:
        return np.flatnonzero(self.out_degree == 0)

    @property
    def isolated_receivers(self) -> np.ndarray:
        return np.flatnonzero(self.in_degree == 0)


def degree_stats(network: ClusteredNetwork, covariates: np.ndarray | None = None) -> DegreeStats:
    out_deg = network.out_degree
    in_deg = network.in_degree
    n_out_x: dict[float, int] = {}
    in_deg_x: dict[float, np.ndarray] = {}
    n_in_x: dict[float, int] = {}
    if covariates is not None:
        x = np.asarray(covariates, dtype=np.float64)
        if x.shape != (network.n_units,):
            raise LengthMismatch(f"expected {network.n_units} covariates, got {x.shape}")
        for v in np.unique(x):
            key = float(v)
            n_out_x[key] = int(np.sum((out_deg > 0) & (x == v)))
            deg = np.bincount(
                network.dst, weights=(x[network.src] == v).astype(float), minlength=network.n_units
            ).astype(np.int64)
            in_deg_x[key] = deg
            n_in_x[key] = int(np.sum(deg > 0))
    return DegreeStats(
        out_degree=out_deg,
        in_degree=in_deg,
        n_out=int(np.sum(out_deg > 0)),
        n_in=int(np.sum(in_deg > 0)),
        n_out_by_x=n_out_x,
        in_degree_by_x=in_deg_x,
        n_in_by_x=n_in_x,
    )
