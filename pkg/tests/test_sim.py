import numpy as np
import pytest

from spillover.design import bernoulli
from spillover.errors import BadParam
from spillover.estimands import build_weights
from spillover.oracle import PotentialOutcomeModel, exact_estimand
from spillover.sim import SimConfig, evaluate_outcomes, make_world, monte_carlo, preset, truth

SETTING_ONE = np.array([0.8, 2.0, 0.5, 0.7, 0.5, 0.4])


def test_fixed_coefficients_for_conditional_model():
    world = make_world(preset("conditional_desk"), 10)
    np.testing.assert_array_equal(world.model.coefficients, np.tile(SETTING_ONE, (200, 1)))


def test_random_coefficient_draws():
    world = make_world(SimConfig(model="model1"), 500)
    c = world.model.coefficients
    n = len(c)
    assert abs(c[:, 2].mean() - 1.0) < 4 * 0.1 / np.sqrt(n)
    assert c[:, 2].std() == pytest.approx(0.1, rel=0.05)
    assert abs(c[:, 0].mean() - 0.8) < 4 * 0.2 / np.sqrt(n)
    world2 = make_world(SimConfig(model="model2"), 500)
    assert abs(world2.model.coefficients[:, 3].mean() - 1.0) < 4 * 0.2 / np.sqrt(n)


def test_worlds_are_reproducible():
    cfg = preset("table1_desk")
    assert make_world(cfg, 50).fingerprint() == make_world(cfg, 50).fingerprint()
    other = preset("table1_desk", seed=cfg.seed + 1)
    assert make_world(other, 50).fingerprint() != make_world(cfg, 50).fingerprint()


def test_untreated_outcomes():
    world = make_world(SimConfig(model="model2"), 5)
    m = world.model
    np.testing.assert_allclose(evaluate_outcomes(m, np.zeros(100)), m.coefficients[:, 0] + m.eps)


def test_fully_treated_conditional_outcome():
    world = make_world(preset("conditional_desk"), 3)
    m = world.model
    ones = np.ones(m.network.n_units)
    model = PotentialOutcomeModel(m.network, "model3", m.coefficients, m.eps, ones)
    np.testing.assert_allclose(evaluate_outcomes(model, ones), 7.6 + m.eps)


def test_interaction_vanishes_for_untreated_receivers():
    world = make_world(SimConfig(model="model2"), 4)
    m = world.model
    linear = PotentialOutcomeModel(m.network, "model1", m.coefficients, m.eps)
    z = np.random.default_rng(0).integers(0, 2, m.network.n_units)
    untreated = z == 0
    np.testing.assert_allclose(m.evaluate(z)[untreated], linear.evaluate(z)[untreated])


@pytest.mark.parametrize("config, x", [
    (SimConfig(model="model2", cluster_size=8, network_param=0.4), None),
    (SimConfig(model="model1", cluster_size=8, network_param=0.4, estimand="pairwise"), None),
    (SimConfig(model="model3", cluster_size=8, network_kind="regular_circulant", network_param=3,
               mode="cse", x=1.0, estimand="inward"), 1.0),
])
def test_closed_form_truth_matches_enumeration(config, x):
    world = make_world(config, 3)
    w = build_weights(world.network, config.estimand)
    alpha = bernoulli(config.alpha_p)
    assert truth(world, w, alpha, x) == pytest.approx(exact_estimand(world.model, w, alpha, x=x), abs=1e-12)


def test_smoke_table_layout():
    table = monte_carlo(preset("smoke"))
    lines = table.to_csv().splitlines()
    assert lines[0] == "K,formulation,mean_est,bias,emp_sd,mean_se,coverage,n_failed"
    assert len(lines) == 4
    rows = [table.row(20, f) for f in ("dyadic", "receiver", "sender")]
    assert rows[0].mean_est == pytest.approx(rows[1].mean_est, rel=1e-9)
    assert rows[0].mean_est == pytest.approx(rows[2].mean_est, rel=1e-9)
    assert all(0 <= r.coverage <= 1 and r.n_failed == 0 for r in rows)


def test_spread_shrinks_with_cluster_count():
    cfg = preset("table1_desk", cluster_counts=(125, 500), replications=200, formulations=("dyadic",))
    table = monte_carlo(cfg)
    ratio = table.row(500, "dyadic").emp_sd / table.row(125, "dyadic").emp_sd
    assert 0.35 <= ratio <= 0.65


def test_world_is_fixed_across_replications():
    cfg = preset("smoke", replications=30)
    before = make_world(cfg, 20).fingerprint()
    table = monte_carlo(cfg)
    assert table.world_fingerprints[20] == before == make_world(cfg, 20).fingerprint()


def test_failed_replications_are_counted():
    cfg = SimConfig(cluster_size=3, network_kind="regular_circulant", network_param=1,
                    cluster_counts=(1,), replications=40, estimand="pairwise")
    row = monte_carlo(cfg).row(1, "dyadic")
    # a single cluster of three units has both arms with probability 3/4
    assert 0 < row.n_failed < 40
    assert np.isfinite(row.mean_est)


def test_single_replication_coverage_is_binary():
    table = monte_carlo(preset("smoke", replications=1))
    for r in table.rows:
        assert r.coverage in (0.0, 1.0)
        assert r.emp_sd == 0.0


def test_worker_count_does_not_change_output():
    cfg = preset("smoke", replications=60, chunk_size=7)
    one = monte_carlo(cfg).to_csv()
    many = monte_carlo(preset("smoke", replications=60, chunk_size=7, workers=4)).to_csv()
    assert one == many


def test_config_validation():
    with pytest.raises(BadParam):
        SimConfig(replications=0)
    with pytest.raises(BadParam):
        SimConfig(mode="cse")
    with pytest.raises(BadParam):
        SimConfig.from_mapping({"preset": "smoke", "replicatons": 3})
    with pytest.raises(BadParam):
        preset("table9")
    assert preset("smoke", workers=8).digest() == preset("smoke").digest()
