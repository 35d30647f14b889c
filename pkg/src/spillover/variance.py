"""Cluster-robust sandwich variance, normal intervals and the variance-gap diagnostic.

The sandwich is stored unscaled: ``Sigma = A^{-1} Gamma A^{-1}`` with
``A = V'BV`` and ``Gamma`` the sum over clusters of outer products of the
cluster score ``V_k' B_k (Y_k - V_k beta_hat)``. Rescaling ``A`` by the weight
total cancels in the sandwich, so the unscaled form is used throughout. The
estimate's ``S_N`` factor lives in the contrast vector, so
``var(estimate) = c' Sigma c`` needs no further scaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.stats import norm

from .errors import BadParam, LengthMismatch, SingularDesign
from .wls import RCOND_MIN, WlsFit, WlsSystem, cluster_scores

__all__ = [
    "EstimateReport",
    "cluster_robust_sigma",
    "sigma_from_parts",
    "confidence_interval",
    "summarize",
    "variance_gap",
]


def sigma_from_parts(bread: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Sandwich from the unscaled bread and ``(K, p)`` cluster scores."""
    bread = np.asarray(bread, dtype=np.float64)
    with np.errstate(divide="ignore"):
        cond = np.linalg.cond(bread)
    if not (np.isfinite(cond) and 1.0 / cond >= RCOND_MIN):
        raise SingularDesign("bread matrix is singular")
    inv = np.linalg.inv(bread)
    gamma = scores.T @ scores
    sigma = inv @ gamma @ inv
    return 0.5 * (sigma + sigma.T)


def cluster_robust_sigma(system: WlsSystem, beta_hat: np.ndarray) -> np.ndarray:
    design = system.design
    bread = design.T @ (design * system.weights[:, None])
    return sigma_from_parts(bread, cluster_scores(system, np.asarray(beta_hat, dtype=np.float64)))


def confidence_interval(estimate: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    """Two-sided normal interval."""
    if not (0.0 < level < 1.0):
        raise BadParam(f"level must lie in (0, 1), got {level}")
    if variance < 0:
        raise BadParam(f"variance must be nonnegative, got {variance}")
    half = float(norm.ppf(0.5 + level / 2.0)) * float(np.sqrt(variance))
    return estimate - half, estimate + half


@dataclass(frozen=True)
class EstimateReport:
    estimate: float
    coefficients: np.ndarray
    sigma_hat: np.ndarray
    se: float
    ci: tuple[float, float]
    level: float
    formulation: str
    mode: str
    estimand: str = ""
    x: float | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "estimate": self.estimate,
            "se": self.se,
            "ci_lower": self.ci[0],
            "ci_upper": self.ci[1],
            "level": self.level,
            "formulation": self.formulation,
            "mode": self.mode,
            "estimand": self.estimand,
            "coefficients": [float(c) for c in self.coefficients],
            "diagnostics": dict(self.diagnostics),
        }
        if self.x is not None:
            out["x"] = self.x
        return out


def summarize(fit: WlsFit, level: float = 0.95, estimand: str = "") -> EstimateReport:
    """Attach the sandwich, standard error and interval to a fit."""
    sigma = sigma_from_parts(fit.bread, fit.cluster_scores)
    var = max(float(fit.contrast @ sigma @ fit.contrast), 0.0)
    diagnostics: dict[str, Any] = {"s_n": fit.s_n}
    if fit.x_bar is not None:
        diagnostics["x_bar"] = fit.x_bar
    if fit.decomposition_scheme is not None and fit.formulation == "receiver" and fit.mode == "cse":
        diagnostics["decomposition"] = fit.decomposition_scheme
    return EstimateReport(
        estimate=fit.estimate,
        coefficients=fit.coefficients,
        sigma_hat=sigma,
        se=float(np.sqrt(var)),
        ci=confidence_interval(fit.estimate, var, level),
        level=level,
        formulation=fit.formulation,
        mode=fit.mode,
        estimand=estimand,
        x=fit.x,
        diagnostics=diagnostics,
    )


def variance_gap(
    gamma_ds: np.ndarray,
    gamma_r: np.ndarray,
    x_tilde: float,
    x_tilde_sq_ave: float,
    x_dagger_sq_ave: float,
    s_n: float = 1.0,
) -> float:
    """Dyadic/sender minus receiver asymptotic variance of the conditional estimate at ``x``.

    ``gamma_ds`` and ``gamma_r`` are the 4x4 score covariances of the
    dyadic/sender and receiver systems with rescaled weights. ``x_tilde`` is
    ``x - x_bar``. Negative means the dyadic/sender variance is smaller.
    """
    g_a = np.asarray(gamma_ds, dtype=np.float64)
    g_r = np.asarray(gamma_r, dtype=np.float64)
    if g_a.shape != (4, 4) or g_r.shape != (4, 4):
        raise LengthMismatch(f"expected two 4x4 matrices, got {g_a.shape} and {g_r.shape}")
    a, b = float(x_tilde_sq_ave), float(x_dagger_sq_ave)
    if a <= 0 or b <= 0:
        raise BadParam("covariate second moments must be positive")
    # zero-based indices: column 3 of the text is index 2, column 4 is index 3
    const = 4 * g_a[2, 2] - (g_r[0, 0] - 4 * g_r[0, 2] + 4 * g_r[2, 2])
    linear = 4 * g_a[3, 2] / a - (g_r[1, 0] - 2 * g_r[1, 2] - 2 * g_r[0, 3] + 4 * g_r[2, 3]) / b
    quad = 4 * g_a[3, 3] / a**2 - (g_r[1, 1] - 4 * g_r[1, 3] + 4 * g_r[3, 3]) / b**2
    return float(s_n**2 * (const + 2 * x_tilde * linear + x_tilde**2 * quad))
