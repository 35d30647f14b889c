"""Weighted least squares formulations for average and conditional spillover effects.

Three row layouts target the same estimand:

* ``dyadic``: one row per ordered within-cluster pair.
* ``receiver``: per-unit rows carrying sender contributions aggregated by
  sender treatment (2 rows per unit for ASE, 4 for CSE).
* ``sender``: one row per unit with a weighted mean of its receivers' outcomes.

Two computation paths are provided. The explicit path materializes
:class:`WlsSystem` and is meant for small data and testing. The streaming path
accumulates per-cluster sufficient statistics over the nonzero dyads only and
accepts a leading batch axis of assignments, which the Monte Carlo engine
uses. Both must agree to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .design import AssignmentDesign, estimator_weights
from .errors import (
    BadParam,
    DegenerateArm,
    LengthMismatch,
    MissingCovariate,
    MissingDecomposition,
    SingularDesign,
)
from .estimands import EstimandWeights, rescale
from .network import ClusteredNetwork

__all__ = [
    "FORMULATIONS",
    "RCOND_MIN",
    "WlsSystem",
    "WlsFit",
    "BatchFit",
    "Problem",
    "prepare",
    "demeaned_covariates",
    "transformed_regressors",
    "aggregated_covariate",
    "build_system",
    "solve",
    "cluster_scores",
    "hajek_ase",
    "estimate",
    "fit_batch",
]

FORMULATIONS = ("dyadic", "receiver", "sender")
MODES = ("ase", "cse")
RCOND_MIN = 1e-12

_COLUMNS = {
    "ase": ("intercept", "treatment"),
    "cse": ("intercept", "covariate", "treatment", "treatment_x_covariate"),
}


def _check_choice(name: str, value: str, allowed: Sequence[str]) -> None:
    if value not in allowed:
        raise BadParam(f"{name} must be one of {tuple(allowed)}, got {value!r}")


# ---------------------------------------------------------------------------
# covariate transforms


def demeaned_covariates(rescaled_weights: EstimandWeights, X: np.ndarray) -> tuple[float, np.ndarray]:
    """Weighted sender mean of ``X`` and the centered covariate."""
    X = np.asarray(X, dtype=np.float64)
    w = rescaled_weights.weight / rescaled_weights.s_n
    x_bar = float(np.dot(w, X[rescaled_weights.sender]))
    return x_bar, X - x_bar


def transformed_regressors(Z: np.ndarray, x_tilde: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Treatment and treatment-by-covariate regressors with the half-weight
    projection onto ``(1, x_tilde)`` removed."""
    z = np.asarray(Z, dtype=np.float64)
    xt = np.asarray(x_tilde, dtype=np.float64)
    return z - 0.5, z * xt - 0.5 * xt


def aggregated_covariate(weights: EstimandWeights, X: np.ndarray) -> np.ndarray:
    """Receiver-level covariate aggregated over senders, centered by the
    receiver-marginal weighted mean."""
    dec = weights.decomposition
    if dec is None:
        raise MissingDecomposition("receiver-side decomposition required")
    if weights.s_n != 1.0:
        weights = rescale(weights)
        dec = weights.decomposition
        assert dec is not None
    X = np.asarray(X, dtype=np.float64)
    N = weights.network.n_units
    raw = np.bincount(
        weights.receiver, weights=dec.sender_given_receiver * X[weights.sender], minlength=N
    )
    return raw - float(np.dot(dec.receiver_marginal, raw))


# ---------------------------------------------------------------------------
# shared preparation


class _Segments:
    """Sums over runs of a sorted id array, with empty runs reported as zero."""

    def __init__(self, ids: np.ndarray, n: int) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        self.n = n
        if ids.size:
            self.starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
            self.targets = ids[self.starts]
        else:
            self.starts = np.zeros(0, dtype=np.int64)
            self.targets = np.zeros(0, dtype=np.int64)

    def sum(self, vals: np.ndarray) -> np.ndarray:
        out = np.zeros(vals.shape[:-1] + (self.n,))
        if self.starts.size:
            out[..., self.targets] = np.add.reduceat(vals, self.starts, axis=-1)
        return out


@dataclass(frozen=True)
class Problem:
    """Everything that stays fixed while the treatment vector varies."""

    network: ClusteredNetwork
    weights: EstimandWeights
    alpha: AssignmentDesign
    beta: AssignmentDesign
    mode: str
    s_n: float
    entry_weight: np.ndarray  # raw S for ase, S / S_N for cse
    X: np.ndarray | None
    x_bar: float | None
    x_tilde: np.ndarray | None
    x_dagger: np.ndarray | None
    decomposition_scheme: str | None
    _by_receiver: _Segments
    _entry_cluster: _Segments
    _unit_cluster: _Segments
    _sender_order: np.ndarray
    _by_sender: _Segments
    # scales W by 1 +/- w_perturb alternating over units; used only to test the checks
    w_perturb: float = 0.0

    @property
    def n_params(self) -> int:
        return 2 if self.mode == "ase" else 4


def prepare(
    network: ClusteredNetwork,
    weights: EstimandWeights,
    alpha: AssignmentDesign,
    beta: AssignmentDesign,
    mode: str = "ase",
    X: np.ndarray | None = None,
    w_perturb: float = 0.0,
) -> Problem:
    _check_choice("mode", mode, MODES)
    if weights.network is not network and weights.network.n_units != network.n_units:
        raise LengthMismatch("weights were built on a different network")
    alpha.validate_for(network)
    beta.validate_for(network)
    s_n = float(weights.original_s_n)  # type: ignore[arg-type]
    x_bar = x_tilde = x_dagger = None
    Xa = None
    scheme = weights.decomposition.scheme if weights.decomposition is not None else None
    if mode == "cse":
        if X is None:
            raise MissingCovariate("conditional estimation needs a covariate")
        Xa = np.asarray(X, dtype=np.float64)
        if Xa.shape != (network.n_units,):
            raise LengthMismatch(f"expected {network.n_units} covariates, got {Xa.shape}")
        rw = rescale(weights)
        entry_weight = rw.weight
        x_bar, x_tilde = demeaned_covariates(rw, Xa)
        if rw.decomposition is not None:
            x_dagger = aggregated_covariate(rw, Xa)
    else:
        entry_weight = weights.weight
    order = np.argsort(weights.sender, kind="stable")
    return Problem(
        network=network,
        weights=weights,
        alpha=alpha,
        beta=beta,
        mode=mode,
        s_n=s_n,
        entry_weight=entry_weight,
        X=Xa,
        x_bar=x_bar,
        x_tilde=x_tilde,
        x_dagger=x_dagger,
        decomposition_scheme=scheme,
        _by_receiver=_Segments(weights.receiver, network.n_units),
        _entry_cluster=_Segments(network.cluster_of[weights.receiver], network.n_clusters),
        _unit_cluster=_Segments(network.cluster_of, network.n_clusters),
        _sender_order=order,
        _by_sender=_Segments(weights.sender[order], network.n_units),
        w_perturb=float(w_perturb),
    )


def _sender_weights(problem: Problem, Z: np.ndarray) -> np.ndarray:
    W = estimator_weights(problem.alpha, problem.beta, problem.network, Z)
    if problem.w_perturb:
        W = W * _perturbation(problem.network.n_units, problem.w_perturb)
    return W


def _perturbation(n_units: int, size: float) -> np.ndarray:
    # a per-arm constant factor would cancel in the ratio form, so alternate the sign
    return 1.0 + size * np.where(np.arange(n_units) % 2 == 0, 1.0, -1.0)


def _check_vectors(problem: Problem, Z: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Z = np.asarray(Z)
    Y = np.asarray(Y, dtype=np.float64)
    N = problem.network.n_units
    if Z.shape[-1] != N or Y.shape[-1] != N:
        raise LengthMismatch(f"expected {N} treatments and outcomes")
    if Z.shape != Y.shape:
        raise LengthMismatch("treatment and outcome arrays differ in shape")
    if Z.size and not np.all((Z == 0) | (Z == 1)):
        raise BadParam("treatments must be binary")
    return Z.astype(np.float64), Y


# ---------------------------------------------------------------------------
# explicit path


@dataclass(frozen=True)
class WlsSystem:
    outcomes: np.ndarray
    weights: np.ndarray
    design: np.ndarray
    cluster_blocks: np.ndarray  # row offsets, length K + 1
    formulation: str
    mode: str
    s_n: float
    columns: tuple[str, ...]

    @property
    def n_rows(self) -> int:
        return int(len(self.outcomes))

    def block(self, k: int) -> slice:
        return slice(int(self.cluster_blocks[k]), int(self.cluster_blocks[k + 1]))


def _cse_columns(problem: Problem, z: np.ndarray, units: np.ndarray) -> list[np.ndarray]:
    assert problem.x_tilde is not None
    xt = problem.x_tilde[units]
    zs, zxs = transformed_regressors(z[units], xt)
    return [np.ones(len(units)), xt, zs, zxs]


def _cluster_major(blocks: int, network: ClusteredNetwork) -> np.ndarray:
    """Row order placing each cluster's ``blocks`` stacked unit blocks together."""
    N = network.n_units
    unit = np.tile(np.arange(N), blocks)
    block = np.repeat(np.arange(blocks), N)
    return np.lexsort((unit, block, network.cluster_of[unit]))


def _build_from_problem(problem: Problem, formulation: str, z: np.ndarray, y: np.ndarray) -> WlsSystem:
    net = problem.network
    N, K = net.n_units, net.n_clusters
    W = _sender_weights(problem, z)
    wts = problem.weights
    mode = problem.mode
    if formulation == "dyadic":
        sizes = net.sizes
        pair_counts = sizes * (sizes - 1)
        blocks = np.zeros(K + 1, dtype=np.int64)
        np.cumsum(pair_counts, out=blocks[1:])
        recv = np.repeat(np.arange(N), np.repeat(sizes - 1, sizes))
        # senders: every other unit of the receiver's cluster, in order
        send = np.empty(int(blocks[-1]), dtype=np.int64)
        pos = 0
        for k in range(K):
            n, base = int(sizes[k]), int(net.offsets[k])
            i, j = np.nonzero(~np.eye(n, dtype=bool))
            send[pos : pos + len(j)] = j + base
            pos += len(j)
        s_full = np.zeros(len(recv))
        li = wts.receiver - net.offsets[net.cluster_of[wts.receiver]]
        lj = wts.sender - net.offsets[net.cluster_of[wts.sender]]
        n_e = sizes[net.cluster_of[wts.receiver]]
        idx = blocks[net.cluster_of[wts.receiver]] + li * (n_e - 1) + np.where(lj < li, lj, lj - 1)
        s_full[idx] = problem.entry_weight
        b = s_full * W[send]
        if mode == "ase":
            design = np.column_stack([np.ones(len(recv)), z[send]])
        else:
            design = np.column_stack(_cse_columns(problem, z, send))
        return WlsSystem(y[recv], b, design, blocks, formulation, mode, problem.s_n, _COLUMNS[mode])

    if formulation == "receiver":
        bw = problem.entry_weight * W[wts.sender]
        zs = z[wts.sender]
        b1 = np.bincount(wts.receiver, weights=bw * zs, minlength=N)
        b0 = np.bincount(wts.receiver, weights=bw * (1.0 - zs), minlength=N)
        one, zero = np.ones(N), np.zeros(N)
        if mode == "ase":
            bw_blocks = [b1, b0]
            v_blocks = [np.column_stack([one, one]), np.column_stack([one, zero])]
        else:
            xd = problem.x_dagger
            if xd is None:
                raise MissingDecomposition("receiver formulation needs a receiver-side decomposition")
            bw_blocks = [b1, b0, b1, b0]
            v_blocks = [
                np.column_stack([one, zero, one, zero]),
                np.column_stack([one, zero, zero, zero]),
                np.column_stack([zero, xd, zero, xd]),
                np.column_stack([zero, xd, zero, zero]),
            ]
        nb = len(bw_blocks)
        order = _cluster_major(nb, net)
        b = np.concatenate(bw_blocks)[order]
        design = np.vstack(v_blocks)[order]
        outcomes = np.tile(y, nb)[order]
        return WlsSystem(outcomes, b, design, net.offsets * nb, formulation, mode, problem.s_n, _COLUMNS[mode])

    if formulation == "sender":
        dec = wts.decomposition
        scale = 1.0 if mode == "ase" else 1.0 / float(wts.s_n)
        if dec is not None:
            # tilde-S_j = sum_i S_{i|j}; row weight tilde-S_j * S_j * W_j
            tilde = np.bincount(wts.sender, weights=dec.receiver_given_sender, minlength=N)
            row_w = tilde * dec.sender_marginal * scale
            ysum = np.bincount(wts.sender, weights=dec.receiver_given_sender * y[wts.receiver], minlength=N)
        else:
            tilde = np.bincount(wts.sender, weights=problem.entry_weight, minlength=N)
            row_w = tilde
            ysum = np.bincount(wts.sender, weights=problem.entry_weight * y[wts.receiver], minlength=N)
        y_s = np.divide(ysum, tilde, out=np.zeros(N), where=tilde > 0)
        b = row_w * W
        units = np.arange(N)
        if mode == "ase":
            design = np.column_stack([np.ones(N), z])
        else:
            design = np.column_stack(_cse_columns(problem, z, units))
        return WlsSystem(y_s, b, design, net.offsets.copy(), formulation, mode, problem.s_n, _COLUMNS[mode])

    raise BadParam(f"formulation must be one of {FORMULATIONS}, got {formulation!r}")


def build_system(
    mode: str,
    formulation: str,
    network: ClusteredNetwork,
    weights: EstimandWeights,
    alpha: AssignmentDesign,
    beta: AssignmentDesign,
    Z: np.ndarray,
    Y: np.ndarray,
    X: np.ndarray | None = None,
) -> WlsSystem:
    """Materialize outcome vector, weight vector and design matrix."""
    _check_choice("formulation", formulation, FORMULATIONS)
    problem = prepare(network, weights, alpha, beta, mode, X)
    z, y = _check_vectors(problem, Z, Y)
    if z.ndim != 1:
        raise BadParam("build_system takes a single assignment")
    return _build_from_problem(problem, formulation, z, y)


def _bread(system: WlsSystem) -> np.ndarray:
    bv = system.design * system.weights[:, None]
    return system.design.T @ bv


def _check_rcond(a: np.ndarray) -> None:
    rc = _rcond(a)
    if not rc >= RCOND_MIN:
        raise SingularDesign(f"normal equations are singular (rcond {rc:.3g})")


def _rcond(a: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.linalg.cond(a)
    return np.where(np.isfinite(cond), 1.0 / cond, 0.0)


def solve(system: WlsSystem) -> np.ndarray:
    """Coefficient vector of the weighted normal equations."""
    a = _bread(system)
    _check_rcond(a)
    rhs = system.design.T @ (system.weights * system.outcomes)
    return np.linalg.solve(a, rhs)


def cluster_scores(system: WlsSystem, beta_hat: np.ndarray) -> np.ndarray:
    """Per-cluster score sums ``V_k' B_k (Y_k - V_k beta)`` as a ``(K, p)`` array."""
    resid = system.outcomes - system.design @ beta_hat
    contrib = system.design * (system.weights * resid)[:, None]
    K = len(system.cluster_blocks) - 1
    out = np.zeros((K, system.design.shape[1]))
    starts = system.cluster_blocks[:-1]
    nonempty = system.cluster_blocks[1:] > starts
    if nonempty.any():
        out[nonempty] = np.add.reduceat(contrib, starts[nonempty], axis=0)
    return out


# ---------------------------------------------------------------------------
# streaming path


def _accumulate(
    groups: list[tuple[np.ndarray, np.ndarray, list[np.ndarray | float | None]]],
    seg: _Segments,
    p: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster ``V'BV`` and ``V'BY`` over row groups sharing one segmentation.

    Each group is ``(b, y, cols)`` where a column is an array, the scalar 1.0,
    or None for an all-zero column.
    """
    lead = groups[0][0].shape[:-1]
    M = np.zeros(lead + (seg.n, p, p))
    c = np.zeros(lead + (seg.n, p))
    for b, y, cols in groups:
        for a in range(p):
            ca = cols[a]
            if ca is None:
                continue
            ba = b * ca
            c[..., a] += seg.sum(ba * y)
            for q in range(a, p):
                cq = cols[q]
                if cq is None:
                    continue
                M[..., a, q] += seg.sum(ba * cq)
    iu = np.triu_indices(p, 1)
    M[..., iu[1], iu[0]] = M[..., iu[0], iu[1]]
    return M, c


def cluster_statistics(problem: Problem, formulation: str, Z: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster ``(V'BV, V'BY)`` for one assignment or a batch.

    Returns arrays shaped ``(..., K, p, p)`` and ``(..., K, p)``.
    """
    _check_choice("formulation", formulation, FORMULATIONS)
    z, y = _check_vectors(problem, Z, Y)
    net = problem.network
    W = _sender_weights(problem, Z)
    wts = problem.weights
    p = problem.n_params
    cse = problem.mode == "cse"
    recv, send, sw = wts.receiver, wts.sender, problem.entry_weight

    if formulation == "dyadic":
        b = sw * W[..., send]
        zs = z[..., send]
        if cse:
            xt = problem.x_tilde[send]  # type: ignore[index]
            zstar, zxstar = transformed_regressors(zs, xt)
            cols: list = [1.0, xt, zstar, zxstar]
        else:
            cols = [1.0, zs]
        return _accumulate([(b, y[..., recv], cols)], problem._entry_cluster, p)

    if formulation == "receiver":
        bw = sw * W[..., send]
        zs = z[..., send]
        b1 = problem._by_receiver.sum(bw * zs)
        b0 = problem._by_receiver.sum(bw - bw * zs)
        if cse:
            xd = problem.x_dagger
            if xd is None:
                raise MissingDecomposition("receiver formulation needs a receiver-side decomposition")
            groups = [
                (b1, y, [1.0, None, 1.0, None]),
                (b0, y, [1.0, None, None, None]),
                (b1, y, [None, xd, None, xd]),
                (b0, y, [None, xd, None, None]),
            ]
        else:
            groups = [(b1, y, [1.0, 1.0]), (b0, y, [1.0, None])]
        return _accumulate(groups, problem._unit_cluster, p)

    if formulation == "sender":
        order = problem._sender_order
        sw_o = sw[order]
        col_tot = problem._by_sender.sum(sw_o)
        ysum = problem._by_sender.sum(sw_o * y[..., recv[order]])
        y_s = np.divide(ysum, col_tot, out=np.zeros_like(ysum), where=col_tot > 0)
        b = col_tot * W
        if cse:
            xt = problem.x_tilde
            zstar, zxstar = transformed_regressors(z, xt)  # type: ignore[arg-type]
            cols = [1.0, xt, zstar, zxstar]
        else:
            cols = [1.0, z]
        return _accumulate([(b, y_s, cols)], problem._unit_cluster, p)

    raise BadParam(f"formulation must be one of {FORMULATIONS}, got {formulation!r}")


# ---------------------------------------------------------------------------
# Hajek closed form


def hajek_ase(
    network: ClusteredNetwork,
    weights: EstimandWeights,
    alpha: AssignmentDesign,
    beta: AssignmentDesign,
    Z: np.ndarray,
    Y: np.ndarray,
    w_perturb: float = 0.0,
) -> float:
    """Weighted treated-sender mean minus weighted control-sender mean, times ``S_N``."""
    z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(Y, dtype=np.float64)
    if z.shape != (network.n_units,) or y.shape != (network.n_units,):
        raise LengthMismatch(f"expected {network.n_units} treatments and outcomes")
    W = estimator_weights(alpha, beta, network, z)
    if w_perturb:
        W = W * _perturbation(network.n_units, w_perturb)
    b = weights.weight * W[weights.sender]
    zs = z[weights.sender]
    yr = y[weights.receiver]
    d1 = float(np.sum(b * zs))
    d0 = float(np.sum(b * (1.0 - zs)))
    if d1 <= 0.0 or d0 <= 0.0:
        raise DegenerateArm("one treatment arm carries zero weight")
    n1 = float(np.sum(b * zs * yr))
    n0 = float(np.sum(b * (1.0 - zs) * yr))
    return float(weights.original_s_n) * (n1 / d1 - n0 / d0)  # type: ignore[arg-type]


# ---------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class WlsFit:
    mode: str
    formulation: str
    estimate: float
    coefficients: np.ndarray
    bread: np.ndarray  # V'BV
    cluster_scores: np.ndarray  # (K, p)
    contrast: np.ndarray  # estimate = contrast @ coefficients
    s_n: float
    x_bar: float | None = None
    x: float | None = None
    decomposition_scheme: str | None = None
    system: WlsSystem | None = None


def contrast_vector(mode: str, s_n: float, x: float | None = None, x_bar: float | None = None) -> np.ndarray:
    if mode == "ase":
        return np.array([0.0, s_n])
    assert x is not None and x_bar is not None
    return s_n * np.array([0.0, 0.0, 1.0, x - x_bar])


def estimate(
    mode: str,
    formulation: str,
    network: ClusteredNetwork,
    weights: EstimandWeights,
    alpha: AssignmentDesign,
    beta: AssignmentDesign,
    Z: np.ndarray,
    Y: np.ndarray,
    X: np.ndarray | None = None,
    x: float | None = None,
    path: str = "explicit",
    w_perturb: float = 0.0,
) -> WlsFit:
    """Point estimate and everything the variance estimator needs.

    ASE: ``S_N * beta_2``. CSE: ``S_N * (beta_3 + beta_4 * (x - x_bar))``.
    """
    _check_choice("path", path, ("explicit", "streaming"))
    _check_choice("formulation", formulation, FORMULATIONS)
    if mode == "cse" and x is None:
        raise BadParam("conditional estimation needs an evaluation point x")
    if mode == "ase" and x is not None:
        raise BadParam("x is only meaningful for conditional estimation")
    problem = prepare(network, weights, alpha, beta, mode, X, w_perturb)
    z, y = _check_vectors(problem, Z, Y)
    if z.ndim != 1:
        raise BadParam("estimate takes a single assignment; use fit_batch for batches")
    system = None
    if path == "explicit":
        system = _build_from_problem(problem, formulation, z, y)
        coef = solve(system)
        bread = _bread(system)
        scores = cluster_scores(system, coef)
    else:
        M, c = cluster_statistics(problem, formulation, z, y)
        bread = M.sum(axis=0)
        _check_rcond(bread)
        coef = np.linalg.solve(bread, c.sum(axis=0))
        scores = c - M @ coef
    con = contrast_vector(mode, problem.s_n, x, problem.x_bar)
    return WlsFit(
        mode=mode,
        formulation=formulation,
        estimate=float(con @ coef),
        coefficients=coef,
        bread=bread,
        cluster_scores=scores,
        contrast=con,
        s_n=problem.s_n,
        x_bar=problem.x_bar,
        x=x,
        decomposition_scheme=problem.decomposition_scheme,
        system=system,
    )


@dataclass(frozen=True)
class BatchFit:
    """Streaming results for a batch of assignments; failed rows hold NaN."""

    coefficients: np.ndarray  # (m, p)
    bread: np.ndarray  # (m, p, p)
    gamma: np.ndarray  # (m, p, p)
    ok: np.ndarray  # (m,) bool

    def sigma(self) -> np.ndarray:
        inv = np.full_like(self.bread, np.nan)
        if self.ok.any():
            inv[self.ok] = np.linalg.inv(self.bread[self.ok])
        return inv @ self.gamma @ inv


def fit_batch(problem: Problem, formulation: str, Z: np.ndarray, Y: np.ndarray) -> BatchFit:
    """Solve a batch of assignments ``(m, N)`` with the streaming path."""
    Z = np.atleast_2d(Z)
    Y = np.atleast_2d(Y)
    M, c = cluster_statistics(problem, formulation, Z, Y)
    bread = M.sum(axis=1)
    rhs = c.sum(axis=1)
    ok = _rcond(bread) >= RCOND_MIN
    m, p = rhs.shape
    coef = np.full((m, p), np.nan)
    if ok.any():
        coef[ok] = np.linalg.solve(bread[ok], rhs[ok][..., None])[..., 0]
    scores = c - np.einsum("mkpq,mq->mkp", M, np.nan_to_num(coef))
    gamma = np.einsum("mkp,mkq->mpq", scores, scores)
    gamma[~ok] = np.nan
    return BatchFit(coefficients=coef, bread=bread, gamma=gamma, ok=ok)
