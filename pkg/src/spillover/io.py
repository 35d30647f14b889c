"""Reading and writing datasets, custom weights and YAML configuration.

Three CSV formats, each with a required header row:

* edges: ``cluster_id,src_unit,dst_unit``
* units: ``cluster_id,unit_id,x,z,y`` (``x`` may be blank when unused)
* weights: ``cluster_id,receiver,sender,weight``

Cluster and unit ids are arbitrary integers. Clusters are ordered by id and
units by id within their cluster; that order defines the internal indices.
Parse errors name the file and the 1-based line.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

import numpy as np
import yaml

from .design import AssignmentDesign, bernoulli, complete_randomization
from .errors import BadParam, InvalidEdge, MissingCovariate, ParseError, SpilloverError
from .estimands import EstimandWeights, from_triplets
from .network import ClusteredNetwork, build_network

__all__ = [
    "DatasetBundle",
    "DEFAULT_CONFIG",
    "read_bundle",
    "write_bundle",
    "read_weights",
    "write_weights",
    "load_config",
    "merge_config",
    "design_from_config",
]

EDGE_HEADER = ("cluster_id", "src_unit", "dst_unit")
UNIT_HEADER = ("cluster_id", "unit_id", "x", "z", "y")
WEIGHT_HEADER = ("cluster_id", "receiver", "sender", "weight")

# every numeric default used by the command line lives here
DEFAULT_CONFIG: dict[str, Any] = {
    "level": 0.95,
    "design": {"kind": "iid_bernoulli", "p": 0.5},
    "alpha": None,
    "estimate": {
        "estimands": ["outward"],
        "formulations": ["dyadic", "receiver", "sender"],
        "weights_file": None,
        "scheme": "builtin",
        "path": "explicit",
    },
    "cse": {"x": [], "strategy": "parametric"},
    "simulate": {"preset": "smoke"},
    "verify": {
        "seeds": 20,
        "max_clusters": 3,
        "max_cluster_size": 8,
        "residual_cluster_size": 6,
        "probabilities": [0.3, 0.5, 0.22],
        "lambda_probabilities": [0.2, 0.5, 0.8],
        "cap": 14,
        "identity_tolerance": 1e-9,
        "oracle_tolerance": 1e-10,
        "inject_bug": False,
        "perturbation": 0.01,
    },
}


@dataclass(frozen=True)
class DatasetBundle:
    """A network with per-unit covariate, treatment and outcome, plus the original ids."""

    network: ClusteredNetwork
    X: np.ndarray  # NaN where the covariate is blank
    Z: np.ndarray
    Y: np.ndarray
    cluster_ids: np.ndarray  # per cluster
    unit_ids: np.ndarray  # per unit

    def covariates(self) -> np.ndarray:
        if np.isnan(self.X).any():
            missing = int(np.flatnonzero(np.isnan(self.X))[0])
            raise MissingCovariate(
                f"unit {self.unit_ids[missing]} in cluster "
                f"{self.cluster_ids[self.network.cluster_of[missing]]} has no covariate"
            )
        return self.X

    def local_index(self) -> dict[tuple[int, int], int]:
        """``(cluster_id, unit_id) -> global index``."""
        return {
            (int(self.cluster_ids[self.network.cluster_of[u]]), int(self.unit_ids[u])): u
            for u in range(self.network.n_units)
        }


def _rows(path: Path, header: tuple[str, ...]) -> Iterator[tuple[int, list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected header {','.join(header)}") from None
        if tuple(c.strip() for c in first) != header:
            raise ParseError(f"{path}:1: expected header {','.join(header)}, got {','.join(first)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, [c.strip() for c in row]


def _int(path: Path, line: int, name: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{path}:{line}: {name} must be an integer, got {text!r}") from None


def _float(path: Path, line: int, name: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{path}:{line}: {name} must be a number, got {text!r}") from None
    if not np.isfinite(value):
        raise ParseError(f"{path}:{line}: {name} must be finite, got {text!r}")
    return value


def read_bundle(edge_path: str | Path, units_path: str | Path) -> DatasetBundle:
    """Parse an edge list and a units table into a validated bundle."""
    edge_path, units_path = Path(edge_path), Path(units_path)
    units: dict[tuple[int, int], tuple[float, int, float]] = {}
    for line, (c, u, x, z, y) in _rows(units_path, UNIT_HEADER):
        key = (_int(units_path, line, "cluster_id", c), _int(units_path, line, "unit_id", u))
        if key in units:
            raise ParseError(f"{units_path}:{line}: duplicate unit {key[1]} in cluster {key[0]}")
        zv = _int(units_path, line, "z", z)
        if zv not in (0, 1):
            raise ParseError(f"{units_path}:{line}: z must be 0 or 1, got {z}")
        xv = float("nan") if x == "" else _float(units_path, line, "x", x)
        units[key] = (xv, zv, _float(units_path, line, "y", y))
    if not units:
        raise ParseError(f"{units_path}: no unit rows")

    cluster_ids = np.array(sorted({c for c, _ in units}), dtype=np.int64)
    ordered = sorted(units)
    position: dict[tuple[int, int], tuple[int, int]] = {}
    sizes = []
    for k, cid in enumerate(cluster_ids):
        members = [key for key in ordered if key[0] == cid]
        sizes.append(len(members))
        for local, key in enumerate(members):
            position[key] = (k, local)

    edges: list[list[tuple[int, int]]] = [[] for _ in cluster_ids]
    for line, (c, s, d) in _rows(edge_path, EDGE_HEADER):
        cid = _int(edge_path, line, "cluster_id", c)
        src = (cid, _int(edge_path, line, "src_unit", s))
        dst = (cid, _int(edge_path, line, "dst_unit", d))
        for end in (src, dst):
            if end not in position:
                raise ParseError(f"{edge_path}:{line}: unit {end[1]} of cluster {cid} missing from the units table")
        edges[position[src][0]].append((position[src][1], position[dst][1]))
    try:
        net = build_network(sizes, edges)
    except InvalidEdge as exc:
        raise ParseError(f"{edge_path}: {exc}") from exc

    values = np.array([units[key] for key in ordered], dtype=np.float64)
    return DatasetBundle(
        network=net,
        X=values[:, 0],
        Z=values[:, 1].astype(np.int8),
        Y=values[:, 2],
        cluster_ids=cluster_ids,
        unit_ids=np.array([u for _, u in ordered], dtype=np.int64),
    )


def write_bundle(bundle: DatasetBundle, edge_path: str | Path, units_path: str | Path) -> None:
    net = bundle.network
    with open(edge_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_HEADER)
        for s, d in zip(net.src, net.dst):
            w.writerow([int(bundle.cluster_ids[net.cluster_of[s]]), int(bundle.unit_ids[s]), int(bundle.unit_ids[d])])
    with open(units_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(UNIT_HEADER)
        for u in range(net.n_units):
            x = "" if np.isnan(bundle.X[u]) else repr(float(bundle.X[u]))
            w.writerow([
                int(bundle.cluster_ids[net.cluster_of[u]]), int(bundle.unit_ids[u]),
                x, int(bundle.Z[u]), repr(float(bundle.Y[u])),
            ])


def read_weights(path: str | Path, bundle: DatasetBundle) -> EstimandWeights:
    """Custom estimand weights keyed by the bundle's cluster and unit ids."""
    path = Path(path)
    index = bundle.local_index()
    net = bundle.network
    cluster, receiver, sender, weight = [], [], [], []
    for line, (c, r, s, wt) in _rows(path, WEIGHT_HEADER):
        cid = _int(path, line, "cluster_id", c)
        ends = []
        for name, text in (("receiver", r), ("sender", s)):
            key = (cid, _int(path, line, name, text))
            if key not in index:
                raise ParseError(f"{path}:{line}: {name} {key[1]} of cluster {cid} is not a known unit")
            ends.append(index[key])
        value = _float(path, line, "weight", wt)
        if value <= 0:
            raise ParseError(f"{path}:{line}: weight must be positive, got {wt}")
        k = int(net.cluster_of[ends[0]])
        cluster.append(k)
        receiver.append(ends[0] - int(net.offsets[k]))
        sender.append(ends[1] - int(net.offsets[k]))
        weight.append(value)
    try:
        return from_triplets(net, np.array(cluster), np.array(receiver), np.array(sender), np.array(weight))
    except SpilloverError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_weights(weights: EstimandWeights, bundle: DatasetBundle, path: str | Path) -> None:
    net = bundle.network
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WEIGHT_HEADER)
        for r, s, wt in zip(weights.receiver, weights.sender, weights.weight):
            w.writerow([
                int(bundle.cluster_ids[net.cluster_of[r]]),
                int(bundle.unit_ids[r]), int(bundle.unit_ids[s]), repr(float(wt)),
            ])


def merge_config(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Recursive merge; keys absent from ``base`` are rejected."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise BadParam(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict) and key != "simulate":
            out[key] = merge_config(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None) -> dict[str, Any]:
    """Defaults overlaid with the YAML file at ``path`` (if any)."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f":{mark.line + 1}" if mark is not None else ""
        raise ParseError(f"{path}{where}: invalid YAML") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    return merge_config(DEFAULT_CONFIG, data)


def design_from_config(section: dict[str, Any]) -> AssignmentDesign:
    """``{kind: iid_bernoulli, p}`` or ``{kind: complete_randomization, m}``."""
    kind = section.get("kind", "iid_bernoulli")
    if kind == "iid_bernoulli":
        if "p" not in section:
            raise BadParam("Bernoulli design needs p")
        return bernoulli(float(section["p"]))
    if kind == "complete_randomization":
        if "m" not in section:
            raise BadParam("complete randomization needs m (scalar or per cluster)")
        m = section["m"]
        return complete_randomization(int(m) if isinstance(m, int) else [int(v) for v in m])
    raise BadParam(f"unknown design kind {kind!r}")
