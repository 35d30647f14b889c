"""Randomized self-checks of the exact identities the estimators rest on.

Each check draws small random worlds, evaluates an identity two independent
ways and records the largest deviation. Instances whose conditional systems
are singular (an empty treatment-by-covariate cell) are redrawn.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .design import bernoulli, sample
from .errors import DegenerateArm, SingularDesign
from .estimands import EstimandWeights, build_weights
from .network import ClusteredNetwork, build_network
from .oracle import (
    PotentialOutcomeModel,
    beta_r_slope_formula,
    exact_estimand,
    exact_moments,
    residual_moment_check,
    treated_weight_share,
)
from .wls import FORMULATIONS, estimate, hajek_ase

__all__ = ["CheckResult", "VerifySettings", "random_world", "run_checks"]

ESTIMAND_KINDS = ("outward", "inward", "pairwise")
MAX_REDRAWS = 200


@dataclass(frozen=True)
class VerifySettings:
    seeds: int = 20
    max_clusters: int = 3
    max_cluster_size: int = 8
    residual_cluster_size: int = 6
    probabilities: tuple[float, ...] = (0.3, 0.5, 0.22)
    lambda_probabilities: tuple[float, ...] = (0.2, 0.5, 0.8)
    cap: int = 14
    identity_tolerance: float = 1e-9
    oracle_tolerance: float = 1e-10
    perturbation: float = 0.0

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "VerifySettings":
        d = dict(data)
        inject = bool(d.pop("inject_bug", False))
        size = d.pop("perturbation", 0.01)
        for key in ("probabilities", "lambda_probabilities"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(perturbation=float(size) if inject else 0.0, **d)


@dataclass
class CheckResult:
    name: str
    tolerance: float
    max_deviation: float = 0.0
    instances: int = 0
    redraws: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.instances > 0 and self.max_deviation <= self.tolerance

    def update(self, deviation: float) -> None:
        self.instances += 1
        if not np.isfinite(deviation):
            self.max_deviation = float("inf")
        else:
            self.max_deviation = max(self.max_deviation, float(deviation))

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "max_deviation": self.max_deviation,
            "tolerance": self.tolerance,
            "instances": self.instances,
            "redraws": self.redraws,
        }


@dataclass(frozen=True)
class World:
    network: ClusteredNetwork
    weights: EstimandWeights
    model: PotentialOutcomeModel
    X: np.ndarray
    p: float


def random_world(rng: np.random.Generator, max_clusters: int, max_size: int, probabilities) -> World:
    """Random ER clusters, estimand kind, heterogeneous linear-in-z model and binary covariate."""
    K = int(rng.integers(1, max_clusters + 1))
    sizes = rng.integers(3, max_size + 1, size=K)
    edges = []
    for n in sizes:
        dens = rng.uniform(0.3, 0.8)
        mask = rng.random((n, n)) < dens
        np.fill_diagonal(mask, False)
        edges.append([(int(a), int(b)) for a, b in zip(*np.nonzero(mask))])
    net = build_network(sizes.tolist(), edges)
    kind = ESTIMAND_KINDS[int(rng.integers(len(ESTIMAND_KINDS)))]
    weights = build_weights(net, kind)
    N = net.n_units
    X = (rng.random(N) < 0.5).astype(np.float64)
    coef = rng.normal([0.8, 2.0, 0.5, 0.7, 0.5, 0.4], 0.3, size=(N, 6))
    model = PotentialOutcomeModel(net, "model3", coef, rng.normal(0, 0.2, N), X)
    p = float(probabilities[int(rng.integers(len(probabilities)))])
    return World(net, weights, model, X, p)


def _relative(values: list[float]) -> float:
    v = np.asarray(values, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(v))))
    return float((v.max() - v.min()) / scale)


def _with_redraws(result: CheckResult, rng: np.random.Generator, attempt: Callable[[], float]) -> None:
    for _ in range(MAX_REDRAWS):
        try:
            result.update(attempt())
            return
        except (SingularDesign, DegenerateArm):
            result.redraws += 1
    result.notes.append("no admissible instance found")
    result.max_deviation = float("inf")


def _estimator_identities(
    settings: VerifySettings, rng: np.random.Generator, ase: CheckResult, cse: CheckResult
) -> None:
    def draw():
        w = random_world(rng, settings.max_clusters, settings.max_cluster_size, settings.probabilities)
        design = bernoulli(w.p)
        z = sample(design, w.network, rng)
        y = w.model.evaluate(z)
        return w, design, z, y

    def ase_attempt() -> float:
        w, design, z, y = draw()
        vals = [hajek_ase(w.network, w.weights, design, design, z, y, settings.perturbation)]
        for f in FORMULATIONS:
            vals.append(estimate("ase", f, w.network, w.weights, design, design, z, y,
                                 w_perturb=settings.perturbation).estimate)
        return _relative(vals)

    def cse_attempt() -> float:
        w, design, z, y = draw()
        hj = hajek_ase(w.network, w.weights, design, design, z, y)
        fits = {
            f: estimate("cse", f, w.network, w.weights, design, design, z, y, X=w.X, x=1.0)
            for f in FORMULATIONS
        }
        d, s, r = (fits[f].coefficients for f in ("dyadic", "sender", "receiver"))
        s_n = fits["receiver"].s_n
        return max(_relative([d[2], s[2]]), _relative([d[3], s[3]]), _relative([s_n * r[2], hj]))

    _with_redraws(ase, rng, ase_attempt)
    _with_redraws(cse, rng, cse_attempt)


def _oracle_identities(
    settings: VerifySettings, rng: np.random.Generator, prop4: CheckResult, slope: CheckResult
) -> None:
    def attempt_ase() -> float:
        w = random_world(rng, settings.max_clusters, settings.max_cluster_size, settings.probabilities)
        design = bernoulli(w.p)
        m = exact_moments(w.model, w.weights, design, design, "ase", "dyadic", cap=settings.cap)
        tau = exact_estimand(w.model, w.weights, design, cap=settings.cap)
        return abs(float(w.weights.original_s_n) * m.beta_r[1] - tau)

    def attempt_slope() -> float:
        w = random_world(rng, settings.max_clusters, settings.max_cluster_size, settings.probabilities)
        design = bernoulli(w.p)
        dev = 0.0
        for f in FORMULATIONS:
            m = exact_moments(w.model, w.weights, design, design, "cse", f, X=w.X, cap=settings.cap)
            dev = max(dev, abs(m.beta_r[3] - beta_r_slope_formula(w.model, w.weights, design, f, w.X, settings.cap)))
        return dev

    _with_redraws(prop4, rng, attempt_ase)
    _with_redraws(slope, rng, attempt_slope)


def _residual_moments(settings: VerifySettings, rng: np.random.Generator, result: CheckResult) -> None:
    def attempt() -> float:
        w = random_world(rng, settings.max_clusters, settings.residual_cluster_size, settings.probabilities)
        design = bernoulli(w.p)
        dev = 0.0
        for mode in ("ase", "cse"):
            for f in FORMULATIONS:
                dev = max(dev, residual_moment_check(
                    w.model, w.weights, design, design, mode, f,
                    X=w.X if mode == "cse" else None, cap=settings.cap, w_perturb=settings.perturbation,
                ))
        return dev

    _with_redraws(result, rng, attempt)


def _treated_share(settings: VerifySettings, result: CheckResult) -> None:
    for p in settings.lambda_probabilities:
        for n in range(2, settings.max_cluster_size + 1):
            d = bernoulli(p)
            share = treated_weight_share(d, d, n, settings.cap)
            result.update(float(np.max(np.abs(share - 0.5))))


def run_checks(settings: VerifySettings, seed: int = 0) -> list[CheckResult]:
    """Every identity over ``settings.seeds`` random instances."""
    results = {
        "ase_formulations_agree": CheckResult("ase_formulations_agree", settings.identity_tolerance),
        "cse_dyadic_sender_receiver": CheckResult("cse_dyadic_sender_receiver", settings.identity_tolerance),
        "ratio_target_equals_estimand": CheckResult("ratio_target_equals_estimand", settings.oracle_tolerance),
        "cse_slope_formula": CheckResult("cse_slope_formula", settings.oracle_tolerance),
        "residual_moments_zero": CheckResult("residual_moments_zero", settings.oracle_tolerance),
        "treated_share_half": CheckResult("treated_share_half", settings.oracle_tolerance),
    }
    for s in range(settings.seeds):
        rng = np.random.default_rng([seed, s])
        _estimator_identities(settings, rng, results["ase_formulations_agree"], results["cse_dyadic_sender_receiver"])
        _oracle_identities(settings, rng, results["ratio_target_equals_estimand"], results["cse_slope_formula"])
        _residual_moments(settings, rng, results["residual_moments_zero"])
    _treated_share(settings, results["treated_share_half"])
    return list(results.values())
