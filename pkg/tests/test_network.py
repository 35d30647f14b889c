import numpy as np
import pytest

from spillover.errors import BadParam, ClusterTooSmall, InvalidEdge
from spillover.network import build_network, degree_stats, generate


def test_minimal_cluster_has_one_sender_and_one_receiver():
    net = build_network([2], [{(0, 1)}])
    stats = degree_stats(net)
    assert net.n_clusters == 1
    assert (stats.n_out, stats.n_in) == (1, 1)
    np.testing.assert_array_equal(stats.out_degree, [1, 0])
    np.testing.assert_array_equal(stats.in_degree, [0, 1])


@pytest.mark.parametrize(
    "sizes, edges, err",
    [
        ([3], [{(0, 0)}], InvalidEdge),
        ([3], [{(0, 3)}], InvalidEdge),
        ([3], [[(0, 1), (0, 1)]], InvalidEdge),
        ([1], [set()], ClusterTooSmall),
    ],
)
def test_invalid_inputs_are_rejected(sizes, edges, err):
    with pytest.raises(err):
        build_network(sizes, edges)


def test_circulant_is_regular_both_ways():
    net = generate("regular_circulant", 1, 5, 2, seed=7)
    stats = degree_stats(net)
    assert np.all(stats.out_degree == 2) and np.all(stats.in_degree == 2)
    assert stats.n_out == 5
    assert set(map(tuple, net.local_edges(0))) == {(i, (i + s) % 5) for i in range(5) for s in (1, 2)}


def test_setting_one_topology():
    net = generate("regular_circulant", 50, 20, 4)
    assert net.n_units == 1000 and net.n_edges == 50 * 20 * 4
    assert np.all(net.out_degree == 4) and np.all(net.in_degree == 4)


def test_complete_graph_when_probability_is_one():
    net = generate("er_directed", 1, 20, 1.0, seed=3)
    assert net.n_edges == 380


def test_er_mean_out_degree_matches_binomial_mean():
    n, p, seeds = 20, 4 / 20, 1000
    degs = np.concatenate([generate("er_directed", 1, n, p, seed=s).out_degree for s in range(seeds)])
    # (n - 1) p = 3.8
    se = np.sqrt((n - 1) * p * (1 - p) / len(degs))
    assert abs(degs.mean() - 3.8) < 3 * se


def test_er_is_reproducible_per_seed():
    a = generate("er_directed", 5, 20, 0.2, seed=11)
    b = generate("er_directed", 5, 20, 0.2, seed=11)
    np.testing.assert_array_equal(a.src, b.src)
    np.testing.assert_array_equal(a.dst, b.dst)


def test_degree_sums_agree_per_cluster():
    net = generate("er_directed", 4, 12, 0.3, seed=5)
    for k in range(net.n_clusters):
        sl = net.cluster_slice(k)
        assert net.out_degree[sl].sum() == net.in_degree[sl].sum() == len(net.local_edges(k))


@pytest.mark.parametrize("kind, param", [("er_directed", 0.0), ("er_directed", 1.5), ("regular_circulant", 0),
                                         ("regular_circulant", 5), ("regular_circulant", 2.5), ("lattice", 1)])
def test_generator_parameters_are_validated(kind, param):
    with pytest.raises(BadParam):
        generate(kind, 1, 5, param)


def test_isolated_units_and_covariate_counts():
    net = build_network([4], [{(0, 1), (2, 1)}])
    X = np.array([1.0, 0.0, 0.0, 1.0])
    stats = degree_stats(net, X)
    np.testing.assert_array_equal(stats.isolated_senders, [1, 3])
    np.testing.assert_array_equal(stats.isolated_receivers, [0, 2, 3])
    assert stats.n_out_by_x == {0.0: 1, 1.0: 1}
    np.testing.assert_array_equal(stats.in_degree_by_x[1.0], [0, 1, 0, 0])
    assert stats.n_in_by_x == {0.0: 1, 1.0: 1}
