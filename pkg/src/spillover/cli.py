"""Command-line entry point: ``spillover estimate | simulate | verify``.

Exit codes: 0 success, 1 a verification identity failed, 2 bad input.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np

from .errors import EstimationError, InputError, SpilloverError
from .estimands import EstimandWeights, build_conditional_weights, build_weights, conditional_restrict, decompose
from .io import DatasetBundle, design_from_config, load_config, read_bundle, read_weights
from .sim import SimConfig, monte_carlo
from .variance import summarize
from .verify import VerifySettings, run_checks
from .wls import FORMULATIONS, estimate

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VERIFY_FAILED, EXIT_INPUT = 0, 1, 2
ESTIMAND_KINDS = ("outward", "inward", "pairwise", "custom")


def _input_errors(fn: Callable[..., Any]) -> Callable[..., Any]:
    """Map library input errors to exit code 2 with a one-line message."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except (InputError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INPUT)

    return wrapper


def _write(text: str, output: str | None) -> None:
    if output is None:
        click.echo(text, nl=not text.endswith("\n"))
    else:
        Path(output).write_text(text)


@click.group()
@click.version_option(package_name="artifact")
def cli() -> None:
    """Spillover effects in clustered network experiments."""


# ---------------------------------------------------------------------------
# estimate


def _base_weights(kind: str, bundle: DatasetBundle, est_cfg: dict[str, Any], config_dir: Path) -> EstimandWeights:
    if kind == "custom":
        path = est_cfg.get("weights_file")
        if not path:
            raise InputError("estimand 'custom' needs estimate.weights_file")
        path = Path(path)
        if not path.is_absolute():
            path = config_dir / path
        return decompose(read_weights(path, bundle), est_cfg["scheme"])
    return build_weights(bundle.network, kind, scheme=est_cfg["scheme"])


def _estimate_records(bundle: DatasetBundle, cfg: dict[str, Any], config_dir: Path) -> list[dict[str, Any]]:
    est_cfg, cse_cfg = cfg["estimate"], cfg["cse"]
    beta = design_from_config(cfg["design"])
    alpha = design_from_config(cfg["alpha"]) if cfg["alpha"] else beta
    level = float(cfg["level"])
    formulations = list(est_cfg["formulations"])
    for f in formulations:
        if f not in FORMULATIONS:
            raise InputError(f"unknown formulation {f!r}; choose from {FORMULATIONS}")
    strategy = cse_cfg["strategy"]
    if strategy not in ("parametric", "stratified"):
        raise InputError(f"cse.strategy must be parametric or stratified, got {strategy!r}")
    xs = cse_cfg["x"]
    xs = [float(v) for v in (xs if isinstance(xs, list) else [xs])]
    X = bundle.covariates() if xs else None

    records: list[dict[str, Any]] = []
    for kind in est_cfg["estimands"]:
        if kind not in ESTIMAND_KINDS:
            raise InputError(f"unknown estimand {kind!r}; choose from {ESTIMAND_KINDS}")
        weights = _base_weights(kind, bundle, est_cfg, config_dir)
        groups: list[tuple[str, float | None]] = [("ase", None)] + [("cse", x) for x in xs]
        for mode, x in groups:
            label = kind if x is None else f"conditional_{kind}"
            extrapolated = False
            if x is not None and X is not None and not (X.min() <= x <= X.max()):
                extrapolated = True
                click.echo(f"warning: x={x:g} lies outside the observed covariate range "
                           f"[{X.min():g}, {X.max():g}]", err=True)
            for f in formulations:
                base = {"estimand": label, "formulation": f}
                if x is not None:
                    base.update(x=x, strategy=strategy)
                try:
                    if x is None:
                        fit = estimate("ase", f, bundle.network, weights, alpha, beta, bundle.Z, bundle.Y,
                                       path=est_cfg["path"])
                    elif strategy == "parametric":
                        fit = estimate("cse", f, bundle.network, weights, alpha, beta, bundle.Z, bundle.Y,
                                       X=X, x=x, path=est_cfg["path"])
                    else:
                        if kind == "custom":
                            cw = decompose(conditional_restrict(weights, X, x), est_cfg["scheme"])
                        else:
                            cw = build_conditional_weights(bundle.network, kind, X, x, est_cfg["scheme"])
                        fit = estimate("ase", f, bundle.network, cw, alpha, beta, bundle.Z, bundle.Y,
                                       path=est_cfg["path"])
                    report = summarize(fit, level, label).to_dict()
                except (EstimationError, InputError) as exc:
                    click.echo(f"warning: {label} / {f}"
                               f"{'' if x is None else f' / x={x:g}'}: {exc}", err=True)
                    records.append({**base, "error": f"{type(exc).__name__}: {exc}"})
                    continue
                report.update(base)
                if x is not None and strategy == "stratified":
                    report["mode"] = "cse"
                if extrapolated:
                    report["diagnostics"]["extrapolated"] = True
                records.append(report)
    return records


@cli.command("estimate")
@click.argument("edges", type=click.Path(exists=True, dir_okay=False))
@click.argument("units", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML configuration.")
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="Write the JSON report here.")
@_input_errors
def estimate_cmd(edges: str, units: str, config_path: str | None, output: str | None) -> None:
    """Point estimates, cluster-robust standard errors and intervals."""
    cfg = load_config(config_path)
    bundle = read_bundle(edges, units)
    config_dir = Path(config_path).parent if config_path else Path.cwd()
    records = _estimate_records(bundle, cfg, config_dir)
    report = {
        "schema_version": SCHEMA_VERSION,
        "n_clusters": bundle.network.n_clusters,
        "n_units": bundle.network.n_units,
        "n_edges": bundle.network.n_edges,
        "level": float(cfg["level"]),
        "cse_strategy": cfg["cse"]["strategy"],
        "records": records,
    }
    _write(json.dumps(report, indent=2) + "\n", output)


# ---------------------------------------------------------------------------
# simulate


@cli.command("simulate")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML configuration.")
@click.option("--preset", help="Start from a named preset (overrides simulate.preset).")
@click.option("--workers", type=int, help="Worker threads; results do not depend on it.")
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="Write the CSV table here.")
@click.option("--summary", type=click.Path(dir_okay=False), help="Write truths and diagnostics as JSON here.")
@_input_errors
def simulate_cmd(
    config_path: str | None, preset: str | None, workers: int | None, output: str | None, summary: str | None
) -> None:
    """Monte Carlo table of bias, spread, standard errors and coverage."""
    section = dict(load_config(config_path)["simulate"] or {})
    if preset is not None:
        section["preset"] = preset
    if workers is not None:
        section["workers"] = workers
    config = SimConfig.from_mapping(section)
    if config.workers < 1:
        raise InputError("workers must be at least 1")
    click.echo(f"config digest: {config.digest()}", err=True)
    table = monte_carlo(config)
    _write(table.to_csv(), output)
    if summary is not None:
        Path(summary).write_text(json.dumps(table.summary(), indent=2, default=float) + "\n")


# ---------------------------------------------------------------------------
# verify


@cli.command("verify")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML configuration.")
@click.option("--inject-bug", is_flag=True, help="Perturb the estimator weight to show the checks have power.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", "-o", type=click.Path(dir_okay=False), help="Write the JSON report here.")
@_input_errors
def verify_cmd(config_path: str | None, inject_bug: bool, seed: int, output: str | None) -> None:
    """Check the exact identities on random small instances."""
    section = dict(load_config(config_path)["verify"])
    if inject_bug:
        section["inject_bug"] = True
    try:
        settings = VerifySettings.from_mapping(section)
    except TypeError as exc:
        raise InputError(f"bad verify section: {exc}") from exc
    results = run_checks(settings, seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        click.echo(f"{status}  {r.name:32s} max deviation {r.max_deviation:.3e} "
                   f"(tolerance {r.tolerance:.0e}, {r.instances} instances)")
    ok = all(r.passed for r in results)
    if output is not None:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "passed": ok,
            "perturbation": settings.perturbation,
            "checks": [r.to_dict() for r in results],
        }
        Path(output).write_text(json.dumps(payload, indent=2) + "\n")
    sys.exit(EXIT_OK if ok else EXIT_VERIFY_FAILED)


def main() -> None:
    try:
        cli()
    except SpilloverError as exc:  # anything not mapped above
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INPUT)


if __name__ == "__main__":
    main()
