"""Exact ground truth for small clusters by enumerating every assignment.

Everything here is an expectation over the design and is computed by summing
over all ``2^n_k`` assignments of one cluster at a time. Clusters larger than
``cap`` are refused rather than approximated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import scipy.sparse as sp

from .design import AssignmentDesign, cluster_log_probs, estimator_weights, excluding_log_probs, sample
from .errors import (
    BadParam,
    ClusterTooLargeForOracle,
    EmptyConditional,
    LengthMismatch,
    MissingDecomposition,
    SingularDesign,
)
from .estimands import EstimandWeights, rescale
from .network import ClusteredNetwork, build_network
from .wls import FORMULATIONS, RCOND_MIN, Problem, _rcond, aggregated_covariate, cluster_statistics, prepare

__all__ = [
    "DEFAULT_CAP",
    "PotentialOutcomeModel",
    "Moments",
    "all_assignments",
    "treated_weight_share",
    "exact_apo",
    "pairwise_effects",
    "exact_estimand",
    "exact_moments",
    "closed_form_beta_r",
    "beta_r_slope_formula",
    "residual_moment_check",
    "exact_gamma",
    "population_quantities",
    "assumption_diagnostics",
    "oracle_report",
]

DEFAULT_CAP = 14
MODEL_FORMS = ("model1", "model2", "model3", "custom")

OutcomeFn = Callable[[int, np.ndarray], np.ndarray]
ThetaFn = Callable[[EstimandWeights, AssignmentDesign], "tuple[np.ndarray, np.ndarray]"]


@dataclass(frozen=True)
class PotentialOutcomeModel:
    """Fixed potential outcomes over a clustered network.

    Built-in forms, with ``s_i`` the number of treated in-neighbors of ``i``
    and ``sx_i`` the sum of their covariates:

    * ``model1``: ``c1 + c2 z_i + c3 s_i + eps``
    * ``model2``: ``model1 + c4 z_i s_i``
    * ``model3``: ``c1 + c2 X_i + c3 z_i + c4 z_i X_i + c5 s_i + c6 sx_i + eps``

    ``coefficients`` has one row of six values per unit; unused columns are
    ignored. ``custom`` models supply ``outcome_fn(k, zmat)`` returning
    outcomes for a ``(m, n_k)`` batch of cluster assignments, and optionally
    ``theta_fn`` for structural coefficients.
    """

    network: ClusteredNetwork
    form: str
    coefficients: np.ndarray | None = None
    eps: np.ndarray | None = None
    X: np.ndarray | None = None
    outcome_fn: OutcomeFn | None = None
    theta_fn: ThetaFn | None = None
    _in_matrix: Any = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.form not in MODEL_FORMS:
            raise BadParam(f"unknown model form {self.form!r}")
        N = self.network.n_units
        if self.form == "custom":
            if self.outcome_fn is None:
                raise BadParam("custom models need an outcome function")
        else:
            coef = np.asarray(self.coefficients, dtype=np.float64)
            if coef.shape != (N, 6):
                raise LengthMismatch(f"expected coefficients of shape ({N}, 6), got {coef.shape}")
            object.__setattr__(self, "coefficients", coef)
        eps = np.zeros(N) if self.eps is None else np.asarray(self.eps, dtype=np.float64)
        if eps.shape != (N,):
            raise LengthMismatch(f"expected {N} noise terms")
        object.__setattr__(self, "eps", eps)
        if self.X is not None:
            x = np.asarray(self.X, dtype=np.float64)
            if x.shape != (N,):
                raise LengthMismatch(f"expected {N} covariates")
            object.__setattr__(self, "X", x)
        if self.form == "model3" and self.X is None:
            raise BadParam("model3 needs covariates")
        net = self.network
        # row i sums the treatments of i's in-neighbors
        m = sp.csr_matrix((np.ones(net.n_edges), (net.dst, net.src)), shape=(N, N))
        object.__setattr__(self, "_in_matrix", m)

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Outcomes for a full assignment ``(N,)`` or a batch ``(m, N)``."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.network.n_units:
            raise LengthMismatch(f"expected {self.network.n_units} treatments")
        if self.form == "custom":
            zb = np.atleast_2d(z)
            out = np.empty_like(zb)
            for k in range(self.network.n_clusters):
                sl = self.network.cluster_slice(k)
                out[:, sl] = self.outcome_fn(k, zb[:, sl])  # type: ignore[misc]
            return out.reshape(z.shape)
        c = self.coefficients.T  # type: ignore[union-attr]
        s = (self._in_matrix @ z.T).T
        if self.form == "model3":
            x = self.X
            sx = (self._in_matrix @ (z * x).T).T
            return c[0] + c[1] * x + c[2] * z + c[3] * z * x + c[4] * s + c[5] * sx + self.eps
        y = c[0] + c[1] * z + c[2] * s + self.eps
        if self.form == "model2":
            y = y + c[3] * z * s
        return y

    def evaluate_cluster(self, k: int, zmat: np.ndarray) -> np.ndarray:
        """Outcomes of cluster ``k`` for a ``(m, n_k)`` batch of its assignments."""
        zmat = np.atleast_2d(np.asarray(zmat, dtype=np.float64))
        sl = self.network.cluster_slice(k)
        if self.form == "custom":
            return np.asarray(self.outcome_fn(k, zmat), dtype=np.float64)  # type: ignore[misc]
        a = self.network.adjacency(k)
        c = self.coefficients[sl].T  # type: ignore[index]
        s = zmat @ a
        eps = self.eps[sl]  # type: ignore[index]
        if self.form == "model3":
            x = self.X[sl]  # type: ignore[index]
            sx = (zmat * x) @ a
            return c[0] + c[1] * x + c[2] * zmat + c[3] * zmat * x + c[4] * s + c[5] * sx + eps
        y = c[0] + c[1] * zmat + c[2] * s + eps
        if self.form == "model2":
            y = y + c[3] * zmat * s
        return y

    def thetas(self, weights: EstimandWeights, alpha: AssignmentDesign) -> tuple[np.ndarray, np.ndarray]:
        """Structural coefficients ``(theta_3, theta_4)`` per weight entry.

        The pairwise effect of entry ``e`` is ``theta_3 + theta_4 * X_sender``.
        Only in-neighbor senders affect a receiver, so both are zero elsewhere.
        """
        if self.form == "custom":
            if self.theta_fn is None:
                raise BadParam("custom model has no structural coefficient map")
            return self.theta_fn(weights, alpha)
        net = self.network
        recv, send = weights.receiver, weights.sender
        key = net.dst * net.n_units + net.src
        linked = np.isin(recv * net.n_units + send, key).astype(np.float64)
        c = self.coefficients
        if self.form == "model3":
            return c[recv, 4] * linked, c[recv, 5] * linked  # type: ignore[index]
        theta3 = c[recv, 2]  # type: ignore[index]
        if self.form == "model2":
            k = net.cluster_of[recv]
            pi = np.array([alpha.marginal_prob(int(kk), int(net.sizes[kk])) for kk in k])
            theta3 = theta3 + c[recv, 3] * pi  # type: ignore[index]
        return theta3 * linked, np.zeros(len(recv))


def all_assignments(n: int) -> np.ndarray:
    """Every binary vector of length ``n`` as rows of a ``(2^n, n)`` array."""
    return ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(np.int8)


def treated_weight_share(
    alpha: AssignmentDesign, beta: AssignmentDesign, n: int, cap: int = DEFAULT_CAP
) -> np.ndarray:
    """``E_beta[W_j Z_j] / E_beta[W_j]`` for every unit ``j`` of one cluster of size ``n``.

    Computed by brute force over all assignments, independently of the
    regression moments.
    """
    if n > cap:
        raise ClusterTooLargeForOracle(f"cluster of size {n} exceeds enumeration cap {cap}")
    net = build_network([n], [[]])
    zs = all_assignments(n)
    prob = np.exp(cluster_log_probs(beta, zs, 0))
    zs, prob = zs[prob > 0], prob[prob > 0]
    W = estimator_weights(alpha, beta, net, zs)
    return (prob @ (W * zs)) / (prob @ W)


def _check_cap(network: ClusteredNetwork, cap: int) -> None:
    big = int(network.sizes.max())
    if big > cap:
        raise ClusterTooLargeForOracle(f"cluster of size {big} exceeds enumeration cap {cap}")


def exact_apo(
    model: PotentialOutcomeModel,
    alpha: AssignmentDesign,
    k: int,
    i: int,
    j: int,
    z_j: int,
    cap: int = DEFAULT_CAP,
) -> float:
    """Average outcome of ``i`` with ``j`` fixed at ``z_j``, everybody else drawn from ``alpha``.

    Indices are local to cluster ``k``. Loops over completions one at a time;
    :func:`pairwise_effects` is the vectorized route.
    """
    n = int(model.network.sizes[k])
    if n > cap:
        raise ClusterTooLargeForOracle(f"cluster of size {n} exceeds enumeration cap {cap}")
    rest = all_assignments(n - 1)
    total = 0.0
    for zr in rest:
        z = np.insert(zr, j, z_j)
        p = float(np.exp(_excluding_one(alpha, zr, k, n)))
        if p == 0.0:
            continue
        total += p * float(model.evaluate_cluster(k, z[None, :])[0, i])
    return total


def _excluding_one(alpha: AssignmentDesign, z_rest: np.ndarray, k: int, n: int) -> float:
    # append a dummy unit so the batched helper sees a full-length row, then drop it
    z = np.append(z_rest, 0)[None, :]
    return float(excluding_log_probs(alpha, z, k)[0, n - 1])


def pairwise_effects(
    model: PotentialOutcomeModel, alpha: AssignmentDesign, k: int, cap: int = DEFAULT_CAP
) -> tuple[np.ndarray, np.ndarray]:
    """Matrices ``apo1[i, j]`` and ``apo0[i, j]`` for cluster ``k`` (local indices)."""
    n = int(model.network.sizes[k])
    if n > cap:
        raise ClusterTooLargeForOracle(f"cluster of size {n} exceeds enumeration cap {cap}")
    z = all_assignments(n)
    y = model.evaluate_cluster(k, z)
    # every z_{-j} appears exactly once with z_j = 1 and once with z_j = 0
    pex = np.exp(excluding_log_probs(alpha, z, k))
    zf = z.astype(np.float64)
    apo1 = y.T @ (pex * zf)
    apo0 = y.T @ (pex * (1.0 - zf))
    return apo1, apo0


def _entry_apos(
    model: PotentialOutcomeModel, weights: EstimandWeights, alpha: AssignmentDesign, cap: int
) -> tuple[np.ndarray, np.ndarray]:
    net = model.network
    _check_cap(net, cap)
    apo1 = np.empty(weights.n_entries)
    apo0 = np.empty(weights.n_entries)
    cl = weights.cluster
    for k in range(net.n_clusters):
        sel = np.flatnonzero(cl == k)
        if sel.size == 0:
            continue
        a1, a0 = pairwise_effects(model, alpha, k, cap)
        base = net.offsets[k]
        i = weights.receiver[sel] - base
        j = weights.sender[sel] - base
        apo1[sel] = a1[i, j]
        apo0[sel] = a0[i, j]
    return apo1, apo0


def exact_estimand(
    model: PotentialOutcomeModel,
    weights: EstimandWeights,
    alpha: AssignmentDesign,
    x: float | None = None,
    covariates: np.ndarray | None = None,
    cap: int = DEFAULT_CAP,
) -> float:
    """Weighted sum of pairwise effects.

    Without ``x`` this is the average effect under ``weights``. With ``x`` the
    entries are restricted to senders with covariate ``x``, renormalized to
    sum to one, and multiplied by the weights' original total, which is the
    quantity the conditional estimators target.
    """
    apo1, apo0 = _entry_apos(model, weights, alpha, cap)
    tau = apo1 - apo0
    if x is None:
        return float(np.dot(weights.weight, tau))
    X = model.X if covariates is None else np.asarray(covariates, dtype=np.float64)
    if X is None:
        raise BadParam("conditional truth needs covariates")
    sel = X[weights.sender] == x
    if not sel.any():
        raise EmptyConditional(f"no weighted sender has covariate {x}")
    w = weights.weight[sel]
    return float(weights.original_s_n) * float(np.dot(w, tau[sel]) / w.sum())  # type: ignore[arg-type]


# ---------------------------------------------------------------------------
# expected WLS moments


@dataclass(frozen=True)
class Moments:
    bread: np.ndarray  # E[V'BV]
    cross: np.ndarray  # E[V'BY]
    beta_r: np.ndarray

    @property
    def treated_share(self) -> float:
        """``E[sum B Z] / E[sum B]`` read off the ASE layout."""
        return float(self.bread[0, 1] / self.bread[0, 0])


def _cluster_enumeration(problem: Problem, model: PotentialOutcomeModel, k: int, base: np.ndarray):
    """Full-length assignments varying only cluster ``k``, with their beta probabilities."""
    net = problem.network
    n = int(net.sizes[k])
    zk = all_assignments(n)
    prob = np.exp(cluster_log_probs(problem.beta, zk, k))
    keep = prob > 0
    zk, prob = zk[keep], prob[keep]
    z = np.repeat(base[None, :], len(zk), axis=0)
    z[:, net.cluster_slice(k)] = zk
    return z, prob


def _expected_stats(
    problem: Problem,
    model: PotentialOutcomeModel,
    formulation: str,
    cap: int,
    beta_vec: np.ndarray | None = None,
):
    """Sum over clusters of ``E[M_k]``, ``E[c_k]`` and, given ``beta_vec``,
    ``E[g_k g_k']`` with ``g_k = c_k - M_k beta_vec``."""
    net = problem.network
    _check_cap(net, cap)
    p = problem.n_params
    base = sample(problem.beta, net, 0).astype(np.int64)
    EM = np.zeros((p, p))
    Ec = np.zeros(p)
    Egg = np.zeros((p, p))
    for k in range(net.n_clusters):
        z, prob = _cluster_enumeration(problem, model, k, base)
        y = model.evaluate(z)
        M, c = cluster_statistics(problem, formulation, z, y)
        Mk, ck = M[:, k], c[:, k]
        EM += np.einsum("m,mpq->pq", prob, Mk)
        Ec += prob @ ck
        if beta_vec is not None:
            g = ck - Mk @ beta_vec
            Egg += np.einsum("m,mp,mq->pq", prob, g, g)
    return EM, Ec, Egg


def _problem(
    model: PotentialOutcomeModel,
    weights: EstimandWeights,
    alpha: AssignmentDesign,
    beta: AssignmentDesign,
    mode: str,
    X: np.ndarray | None,
    w_perturb: float = 0.0,
) -> Problem:
    if mode == "cse" and X is None:
        X = model.X
    return prepare(model.network, weights, alpha, beta, mode, X, w_perturb=w_perturb)


def exact_moments(
    model: PotentialOutcomeModel,
    weights: EstimandWeights,
    alpha: AssignmentDesign,
    beta: AssignmentDesign,
    mode: str,
    formulation: str,
    X: np.ndarray | None = None,
    cap: int = DEFAULT_CAP,
    w_perturb: float = 0.0,
) -> Moments:
    """Exact ``E[V'BV]``, ``E[V'BY]`` and their ratio ``beta_r``."""
    if formulation not in FORMULATIONS:
        raise BadParam(f"formulation must be one of {FORMULATIONS}")
    problem = _problem(model, weights, alpha, beta, mode, X, w_perturb)
    EM, Ec, _ = _expected_stats(problem, model, formulation, cap)
    return Moments(EM, Ec, _solve_expected(EM, Ec))


def _solve_expected(EM: np.ndarray, Ec: np.ndarray) -> np.ndarray:
    if not _rcond(EM) >= RCOND_MIN:
        raise SingularDesign("expected normal equations are singular")
    return np.linalg.solve(EM, Ec)


def closed_form_beta_r(
    model: PotentialOutcomeModel,
    weights: EstimandWeights,
    alpha: AssignmentDesign,
    mode: str,
    formulation: str,
    X: np.ndarray | None = None,
    cap: int = DEFAULT_CAP,
) -> np.ndarray:
    """``beta_r`` assembled directly from average potential outcomes.

    ASE uses the raw weights; CSE uses the rescaled ones, with the dyadic and
    sender systems sharing one form and the receiver system another.
    """
    apo1, apo0 = _entry_apos(model, weights, alpha, cap)
    tau = apo1 - apo0
    if mode == "ase":
        s_n = float(weights.original_s_n)  # type: ignore[arg-type]
        return np.array([weights.weight @ apo0 / s_n, weights.weight @ tau / s_n])
    if X is None:
        X = model.X
    if X is None:
        raise BadParam("conditional moments need covariates")
    rw = rescale(weights)
    w = rw.weight
    x_bar = float(w @ X[rw.sender])
    if formulation == "receiver":
        a = aggregated_covariate(rw, X)[rw.receiver]
        b = float(w @ a**2)
        if b <= 0.0:
            raise SingularDesign("aggregated covariate has no spread")
        return np.array([w @ apo0, (w * a) @ apo0 / b, w @ tau, (w * a) @ tau / b])
    a = X[rw.sender] - x_bar
    sq = float(w @ a**2)
    if sq <= 0.0:
        raise SingularDesign("sender covariate has no spread")
    tot = apo1 + apo0
    return np.array([w @ tot / 2.0, (w * a) @ tot / (2.0 * sq), w @ tau, (w * a) @ tau / sq])


def beta_r_slope_formula(
    model: PotentialOutcomeModel,
    weights: EstimandWeights,
    alpha: AssignmentDesign,
    formulation: str,
    X: np.ndarray | None = None,
    cap: int = DEFAULT_CAP,
) -> float:
    """Covariate slope of ``beta_r`` as ``sum S a tau / sum S a^2``."""
    return float(closed_form_beta_r(model, weights, alpha, "cse", formulation, X, cap)[3])


def residual_moment_check(
    model: PotentialOutcomeModel,
    weights: EstimandWeights,
    alpha: AssignmentDesign,
    beta: AssignmentDesign,
    mode: str,
    formulation: str,
    X: np.ndarray | None = None,
    beta_vec: np.ndarray | None = None,
    cap: int = DEFAULT_CAP,
    w_perturb: float = 0.0,
) -> float:
    """``max |E[V'B(Y - V beta)]|`` with ``beta`` the closed-form ``beta_r`` unless overridden."""
    if beta_vec is None:
        beta_vec = closed_form_beta_r(model, weights, alpha, mode, formulation, X, cap)
    m = exact_moments(model, weights, alpha, beta, mode, formulation, X, cap, w_perturb)
    return float(np.max(np.abs(m.cross - m.bread @ np.asarray(beta_vec, dtype=np.float64))))


def exact_gamma(
    model: PotentialOutcomeModel,
    weights: EstimandWeights,
    alpha: AssignmentDesign,
    beta: AssignmentDesign,
    mode: str,
    formulation: str,
    X: np.ndarray | None = None,
    beta_vec: np.ndarray | None = None,
    cap: int = DEFAULT_CAP,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``(E[V'BV], sum_k E[g_k g_k'])`` with scores evaluated at ``beta_r``."""
    problem = _problem(model, weights, alpha, beta, mode, X)
    if beta_vec is None:
        EM, Ec, _ = _expected_stats(problem, model, formulation, cap)
        beta_vec = _solve_expected(EM, Ec)
    EM, _, Egg = _expected_stats(problem, model, formulation, cap, np.asarray(beta_vec))
    return EM, Egg


# ---------------------------------------------------------------------------
# population quantities and diagnostics


def _receiver_theta(weights: EstimandWeights, theta: np.ndarray) -> np.ndarray:
    """Per-receiver coefficient: conditional-weighted average over its senders."""
    dec = weights.decomposition
    assert dec is not None
    N = weights.network.n_units
    num = np.bincount(weights.receiver, weights=dec.sender_given_receiver * theta, minlength=N)
    den = np.bincount(weights.receiver, weights=dec.sender_given_receiver, minlength=N)
    return np.divide(num, den, out=np.zeros(N), where=den > 0)


def population_quantities(
    theta3: np.ndarray, theta4: np.ndarray, weights: EstimandWeights, X: np.ndarray
) -> dict[str, float]:
    """Population-weighted coefficient averages.

    ``beta_p3`` averages ``theta3 + theta4 * x_bar`` with the rescaled weights.
    The two slope averages weight ``theta4`` by ``S * x_tilde^2`` over dyads
    and by ``S_i * x_dagger^2`` over receivers.
    """
    if weights.decomposition is None:
        raise MissingDecomposition("receiver-side decomposition required")
    X = np.asarray(X, dtype=np.float64)
    rw = rescale(weights)
    w = rw.weight
    x_bar = float(w @ X[rw.sender])
    xt = X[rw.sender] - x_bar
    p3 = float(w @ (theta3 + theta4 * x_bar))
    p4_ds = float((w * xt**2) @ theta4 / (w @ xt**2))
    xd = aggregated_covariate(rw, X)
    s_i = rw.decomposition.receiver_marginal  # type: ignore[union-attr]
    th4_i = _receiver_theta(rw, theta4)
    wr = s_i * xd**2
    p4_r = float(wr @ th4_i / wr.sum())
    return {"beta_p3": p3, "beta_p4_DS": p4_ds, "beta_p4_R": p4_r, "x_bar": x_bar}


def _levels(values: np.ndarray, decimals: int = 12) -> np.ndarray:
    return np.unique(np.round(values, decimals))


def assumption_diagnostics(
    theta3: np.ndarray,
    theta4: np.ndarray,
    weights: EstimandWeights,
    X: np.ndarray,
    x: float,
    decimals: int = 12,
) -> dict[str, Any]:
    """Magnitudes behind the heterogeneity and independence conditions.

    Keys:

    * ``level_imbalance``: per coefficient and level ``a``,
      ``S_N |sum S^r x_tilde 1{theta = a}|``
    * ``receiver_row_sum_deviation``: largest ``|sum_j S^r_{j|i} - 1|``
    * ``sender_homogeneous``: whether each receiver sees one coefficient level
    * ``receiver_level_imbalance``: the receiver-side analogue of the first
    * ``independence_gaps``: ``S_N`` times the distance between the overall
      and the ``x``-restricted coefficient averages, and between the
      population slopes and the restricted slope

    Values near zero mean the condition holds for this finite population.
    Coefficient levels are identified after rounding to ``decimals`` places.
    """
    X = np.asarray(X, dtype=np.float64)
    s_n = float(weights.original_s_n)  # type: ignore[arg-type]
    rw = rescale(weights)
    w = rw.weight
    x_bar = float(w @ X[rw.sender])
    xt = X[rw.sender] - x_bar
    thetas = {3: np.asarray(theta3, dtype=np.float64), 4: np.asarray(theta4, dtype=np.float64)}
    out: dict[str, Any] = {"x_bar": x_bar}

    level_sums: dict[str, dict[str, float]] = {}
    for h, th in thetas.items():
        r = np.round(th, decimals)
        level_sums[f"theta{h}"] = {
            f"{a:g}": s_n * abs(float((w * xt) @ (r == a))) for a in _levels(th, decimals)
        }
    out["level_imbalance"] = level_sums

    dec = rw.decomposition
    if dec is not None:
        N = rw.network.n_units
        row = np.bincount(rw.receiver, weights=dec.sender_given_receiver, minlength=N)
        has = np.bincount(rw.receiver, minlength=N) > 0
        out["receiver_row_sum_deviation"] = float(np.max(np.abs(row[has] - 1.0))) if has.any() else 0.0
        homog = {}
        for h, th in thetas.items():
            r = np.round(th, decimals)
            lo = np.full(N, np.inf)
            hi = np.full(N, -np.inf)
            np.minimum.at(lo, rw.receiver, r)
            np.maximum.at(hi, rw.receiver, r)
            homog[f"theta{h}"] = bool(np.all(lo[has] == hi[has]))
        out["sender_homogeneous"] = homog
        raw = np.bincount(rw.receiver, weights=dec.sender_given_receiver * X[rw.sender], minlength=N)
        receiver_sums: dict[str, dict[str, float]] = {}
        for h, th in thetas.items():
            th_i = np.round(_receiver_theta(rw, th), decimals)
            receiver_sums[f"theta{h}"] = {
                f"{a:g}": s_n
                * abs(float(np.sum(dec.receiver_marginal[has] * (raw[has] - x_bar) * (th_i[has] == a))))
                for a in np.unique(th_i[has])
            }
        out["receiver_level_imbalance"] = receiver_sums

    sel = X[rw.sender] == x
    if sel.any():
        wx = w[sel] / w[sel].sum()
        gaps = {}
        theta_x = {}
        for h, th in thetas.items():
            tp = float(w @ th)
            tx = float(wx @ th[sel])
            theta_x[h] = tx
            gaps[f"theta{h}"] = s_n * abs(tp - tx)
        if dec is not None:
            pq = population_quantities(theta3, theta4, weights, X)
            gaps["beta_p4_DS"] = s_n * abs(pq["beta_p4_DS"] - theta_x[4])
            gaps["beta_p4_R"] = s_n * abs(pq["beta_p4_R"] - theta_x[4])
        out["independence_gaps"] = gaps
    else:
        out["independence_gaps"] = None
    return out


def oracle_report(
    model: PotentialOutcomeModel,
    weights: EstimandWeights,
    alpha: AssignmentDesign,
    beta: AssignmentDesign,
    xs: list[float] | None = None,
    cap: int = DEFAULT_CAP,
) -> dict[str, Any]:
    """Truth, targets and diagnostics for one world as a JSON-ready mapping."""
    report: dict[str, Any] = {"tau_ase": exact_estimand(model, weights, alpha, cap=cap)}
    beta_r: dict[str, list[float]] = {}
    resid = 0.0
    for f in FORMULATIONS:
        m = exact_moments(model, weights, alpha, beta, "ase", f, cap=cap)
        beta_r[f"ase_{f}"] = m.beta_r.tolist()
        resid = max(resid, residual_moment_check(model, weights, alpha, beta, "ase", f, cap=cap))
    if model.X is not None:
        report["tau_cse"] = {
            f"{x:g}": exact_estimand(model, weights, alpha, x=x, cap=cap) for x in (xs or [])
        }
        for f in FORMULATIONS:
            if f == "receiver" and weights.decomposition is None:
                continue
            m = exact_moments(model, weights, alpha, beta, "cse", f, cap=cap)
            beta_r[f"cse_{f}"] = m.beta_r.tolist()
            resid = max(resid, residual_moment_check(model, weights, alpha, beta, "cse", f, cap=cap))
        try:
            th3, th4 = model.thetas(weights, alpha)
        except BadParam:
            th3 = th4 = None
        if th3 is not None:
            report["beta_p"] = population_quantities(th3, th4, weights, model.X)
            report["diagnostics"] = {
                f"{x:g}": assumption_diagnostics(th3, th4, weights, model.X, x) for x in (xs or [])
            }
    report["beta_r"] = beta_r
    report["residual_moment_max"] = resid
    return report
