"""Design-based Monte Carlo: one fixed world per cluster count, treatments redrawn each replication.

Replication ``r`` at cluster count ``K`` draws its treatment from its own
stream ``SeedSequence(seed, spawn_key=(K, r))``. Replications are processed in
fixed-size chunks whose results land at their replication index, so the
output does not depend on how many worker threads run the chunks.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.stats import norm

from .design import AssignmentDesign, bernoulli, sample
from .errors import BadParam
from .estimands import EstimandWeights, build_weights, rescale
from .network import ClusteredNetwork, generate
from .oracle import PotentialOutcomeModel
from .variance import variance_gap
from .wls import FORMULATIONS, Problem, contrast_vector, fit_batch, prepare

__all__ = [
    "SimConfig",
    "World",
    "SimulationTable",
    "PRESETS",
    "preset",
    "make_world",
    "evaluate_outcomes",
    "truth",
    "monte_carlo",
]

TABLE_COLUMNS = ("K", "formulation", "mean_est", "bias", "emp_sd", "mean_se", "coverage", "n_failed")

# (mean, sd) of each coefficient column for the random-coefficient models
_RANDOM_COEFS = {
    "model1": [(0.8, 0.2), (2.0, 0.5), (1.0, 0.1), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
    "model2": [(0.8, 0.2), (2.0, 0.5), (0.5, 0.1), (1.0, 0.2), (0.0, 0.0), (0.0, 0.0)],
}
_FIXED_MODEL3 = (0.8, 2.0, 0.5, 0.7, 0.5, 0.4)


@dataclass(frozen=True)
class SimConfig:
    name: str = "custom"
    network_kind: str = "er_directed"
    cluster_size: int = 20
    # edge probability for er_directed (default 4 / cluster_size), degree for regular_circulant
    network_param: float | None = None
    model: str = "model2"
    estimand: str = "outward"
    mode: str = "ase"
    x: float | None = None
    x_prob: float = 0.5
    noise_sd: float = 0.2
    formulations: tuple[str, ...] = FORMULATIONS
    alpha_p: float = 0.5
    beta_p: float = 0.5
    cluster_counts: tuple[int, ...] = (50, 200, 500)
    replications: int = 500
    seed: int = 20240101
    level: float = 0.95
    chunk_size: int = 25
    workers: int = 1

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise BadParam("replications must be at least 1")
        if self.model not in ("model1", "model2", "model3"):
            raise BadParam(f"unknown model {self.model!r}")
        if self.mode not in ("ase", "cse"):
            raise BadParam(f"unknown mode {self.mode!r}")
        if self.mode == "cse" and self.x is None:
            raise BadParam("conditional simulations need x")
        if self.estimand not in ("outward", "inward", "pairwise"):
            raise BadParam(f"unknown estimand {self.estimand!r}")
        for f in self.formulations:
            if f not in FORMULATIONS:
                raise BadParam(f"unknown formulation {f!r}")
        if not (0.0 < self.x_prob < 1.0):
            raise BadParam("x_prob must lie in (0, 1)")
        if self.chunk_size < 1 or self.workers < 1:
            raise BadParam("chunk_size and workers must be positive")
        if not self.cluster_counts or min(self.cluster_counts) < 1:
            raise BadParam("cluster_counts must be positive")
        object.__setattr__(self, "formulations", tuple(self.formulations))
        object.__setattr__(self, "cluster_counts", tuple(int(k) for k in self.cluster_counts))

    @property
    def edge_param(self) -> float:
        if self.network_param is not None:
            return float(self.network_param)
        return 4.0 / self.cluster_size if self.network_kind == "er_directed" else 4.0

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "SimConfig":
        data = dict(data)
        base = data.pop("preset", None)
        if base is not None and base not in PRESETS:
            raise BadParam(f"unknown preset {base!r}")
        start = asdict(PRESETS[base]) if base is not None else {}
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise BadParam(f"unknown simulation keys: {sorted(unknown)}")
        start.update(data)
        for key in ("formulations", "cluster_counts"):
            if key in start:
                start[key] = tuple(start[key])
        return cls(**start)

    def digest(self) -> str:
        """Hash of the fully resolved configuration, workers excluded."""
        d = asdict(self)
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


PRESETS: dict[str, SimConfig] = {
    "table1_desk": SimConfig(name="table1_desk"),
    "conditional_desk": SimConfig(
        name="conditional_desk",
        network_kind="regular_circulant",
        network_param=4,
        model="model3",
        mode="cse",
        x=1.0,
        # the reported coefficient targets (0.5 + 0.4 * x_bar = 0.8) imply x_bar = 0.75
        x_prob=0.75,
    ),
    "smoke": SimConfig(name="smoke", cluster_counts=(20,), replications=20),
}


def preset(name: str, **overrides: Any) -> SimConfig:
    if name not in PRESETS:
        raise BadParam(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SimConfig.from_mapping({"preset": name, **overrides})


@dataclass(frozen=True)
class World:
    network: ClusteredNetwork
    model: PotentialOutcomeModel
    covariates: np.ndarray

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (
            self.network.sizes,
            self.network.src,
            self.network.dst,
            self.model.coefficients,
            self.model.eps,
            self.covariates,
        ):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def make_world(config: SimConfig, K: int) -> World:
    """Graph, coefficients, noise and covariates, drawn once from ``(seed, K)``."""
    ss = np.random.SeedSequence([config.seed, K])
    net_seed, coef_seq = ss.spawn(2)
    net = generate(
        config.network_kind, K, config.cluster_size, config.edge_param,
        seed=int(net_seed.generate_state(1)[0]),
    )
    rng = np.random.default_rng(coef_seq)
    N = net.n_units
    X = (rng.random(N) < config.x_prob).astype(np.float64)
    if config.model == "model3":
        coef = np.tile(np.array(_FIXED_MODEL3), (N, 1))
    else:
        spec = _RANDOM_COEFS[config.model]
        coef = np.column_stack([rng.normal(m, s, N) if s > 0 else np.full(N, m) for m, s in spec])
    eps = rng.normal(0.0, config.noise_sd, N)
    model = PotentialOutcomeModel(net, config.model, coef, eps, X)
    return World(net, model, X)


def evaluate_outcomes(model: PotentialOutcomeModel, z: np.ndarray) -> np.ndarray:
    return model.evaluate(z)


def truth(world: World, weights: EstimandWeights, alpha: AssignmentDesign, x: float | None = None) -> float:
    """Closed-form estimand from the models' linearity in the treatments."""
    th3, th4 = world.model.thetas(weights, alpha)
    tau = th3 + th4 * world.covariates[weights.sender]
    if x is None:
        return float(weights.weight @ tau)
    sel = world.covariates[weights.sender] == x
    w = weights.weight[sel]
    return float(weights.original_s_n) * float(w @ tau[sel] / w.sum())  # type: ignore[arg-type]


@dataclass
class Row:
    K: int
    formulation: str
    mean_est: float
    bias: float
    emp_sd: float
    mean_se: float
    coverage: float
    n_failed: int


@dataclass
class SimulationTable:
    config: SimConfig
    rows: list[Row] = field(default_factory=list)
    truths: dict[int, float] = field(default_factory=dict)
    # per K and formulation: mean standard error of the covariate slope (conditional runs)
    slope_se: dict[tuple[int, str], float] = field(default_factory=dict)
    # per K: mean estimated variance gap, dyadic minus receiver (conditional runs)
    variance_gaps: dict[int, float] = field(default_factory=dict)
    world_fingerprints: dict[int, str] = field(default_factory=dict)

    def row(self, K: int, formulation: str) -> Row:
        for r in self.rows:
            if r.K == K and r.formulation == formulation:
                return r
        raise KeyError((K, formulation))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in self.rows:
            w.writerow([
                r.K, r.formulation, _fmt(r.mean_est), _fmt(r.bias), _fmt(r.emp_sd),
                _fmt(r.mean_se), _fmt(r.coverage), r.n_failed,
            ])
        return buf.getvalue()

    def summary(self) -> dict[str, Any]:
        return {
            "config": asdict(self.config),
            "config_digest": self.config.digest(),
            "truth": {str(k): v for k, v in self.truths.items()},
            "slope_se": {f"{k}:{f}": v for (k, f), v in self.slope_se.items()},
            "variance_gap": {str(k): v for k, v in self.variance_gaps.items()},
        }


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.10g}"


@dataclass
class _Draws:
    estimate: np.ndarray
    se: np.ndarray
    slope_se: np.ndarray
    gamma: np.ndarray


def _replication_z(config: SimConfig, beta: AssignmentDesign, net: ClusteredNetwork, K: int, reps: range) -> np.ndarray:
    return np.stack([
        sample(beta, net, np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(K, r))))
        for r in reps
    ])


def _run_chunk(config, beta, world, problems, contrasts, K, reps):
    Z = _replication_z(config, beta, world.network, K, reps)
    Y = world.model.evaluate(Z)
    out = {}
    for f, prob in problems.items():
        fit = fit_batch(prob, f, Z, Y)
        sigma = fit.sigma()
        c = contrasts[f]
        est = fit.coefficients @ c
        var = np.einsum("p,mpq,q->m", c, sigma, c)
        slope = np.sqrt(np.maximum(sigma[:, -1, -1], 0.0)) * prob.s_n
        out[f] = (est, np.sqrt(np.maximum(var, 0.0)), slope, fit.gamma)
    return reps, out


def _simulate_k(config: SimConfig, K: int) -> tuple[World, float, dict[str, _Draws], Problem]:
    world = make_world(config, K)
    alpha, beta = bernoulli(config.alpha_p), bernoulli(config.beta_p)
    weights = build_weights(world.network, config.estimand)
    X = world.covariates if config.mode == "cse" else None
    problems = {f: prepare(world.network, weights, alpha, beta, config.mode, X) for f in config.formulations}
    any_p = next(iter(problems.values()))
    contrasts = {f: contrast_vector(config.mode, p.s_n, config.x, p.x_bar) for f, p in problems.items()}
    tau = truth(world, weights, alpha, config.x if config.mode == "cse" else None)

    M = config.replications
    p = any_p.n_params
    draws = {
        f: _Draws(np.empty(M), np.empty(M), np.empty(M), np.empty((M, p, p))) for f in config.formulations
    }
    chunks = [range(s, min(s + config.chunk_size, M)) for s in range(0, M, config.chunk_size)]

    def run(reps):
        return _run_chunk(config, beta, world, problems, contrasts, K, reps)

    if config.workers == 1:
        results = map(run, chunks)
    else:
        pool = ThreadPoolExecutor(max_workers=config.workers)
        results = pool.map(run, chunks)
    for reps, out in results:
        sl = slice(reps.start, reps.stop)
        for f, (est, se, slope, gamma) in out.items():
            d = draws[f]
            d.estimate[sl], d.se[sl], d.slope_se[sl], d.gamma[sl] = est, se, slope, gamma
    if config.workers > 1:
        pool.shutdown()
    return world, tau, draws, any_p


def _aggregate(K: int, f: str, d: _Draws, tau: float, level: float) -> Row:
    ok = np.isfinite(d.estimate) & np.isfinite(d.se)
    est, se = d.estimate[ok], d.se[ok]
    n_ok = int(ok.sum())
    if n_ok == 0:
        nan = float("nan")
        return Row(K, f, nan, nan, nan, nan, nan, int((~ok).sum()))
    q = float(norm.ppf(0.5 + level / 2.0))
    covered = np.abs(est - tau) <= q * se
    mean_est = float(np.mean(est))
    return Row(
        K=K,
        formulation=f,
        mean_est=mean_est,
        bias=mean_est - tau,
        emp_sd=float(np.std(est, ddof=1)) if n_ok > 1 else 0.0,
        mean_se=float(np.mean(se)),
        coverage=float(np.mean(covered)),
        n_failed=int((~ok).sum()),
    )


def _mean_gap(config: SimConfig, draws: dict[str, _Draws], problem: Problem) -> float | None:
    ds = "dyadic" if "dyadic" in draws else ("sender" if "sender" in draws else None)
    if config.mode != "cse" or ds is None or "receiver" not in draws or problem.x_dagger is None:
        return None
    rw = rescale(problem.weights)
    xt = problem.x_tilde[rw.sender]  # type: ignore[index]
    a = float(rw.weight @ xt**2)
    b = float(rw.weight @ problem.x_dagger[rw.receiver] ** 2)
    x_t = float(config.x) - float(problem.x_bar)  # type: ignore[arg-type]
    gaps = [
        variance_gap(g_d, g_r, x_t, a, b, problem.s_n)
        for g_d, g_r in zip(draws[ds].gamma, draws["receiver"].gamma)
        if np.all(np.isfinite(g_d)) and np.all(np.isfinite(g_r))
    ]
    return float(np.mean(gaps)) if gaps else None


def monte_carlo(config: SimConfig) -> SimulationTable:
    table = SimulationTable(config)
    for K in config.cluster_counts:
        world, tau, draws, problem = _simulate_k(config, K)
        table.truths[K] = tau
        table.world_fingerprints[K] = world.fingerprint()
        for f in config.formulations:
            table.rows.append(_aggregate(K, f, draws[f], tau, config.level))
            if config.mode == "cse":
                ok = np.isfinite(draws[f].slope_se)
                table.slope_se[(K, f)] = float(np.mean(draws[f].slope_se[ok])) if ok.any() else float("nan")
        gap = _mean_gap(config, draws, problem)
        if gap is not None:
            table.variance_gaps[K] = gap
    return table

