import numpy as np
import pytest

from minenav.estimation import (
    GraphOptimizationError,
    PoseGraph,
    add_odometry_factor,
    optimize_graph,
    total_cost,
)
from minenav.estimation.posegraph import se3_right_jacobian_inverse
from minenav.geometry import (
    make_transform,
    planar_pose,
    se3_exp,
    se3_log,
    so3_exp,
    so3_log,
    transform_inverse,
)

INFO_ODOM = np.diag([2500.0] * 3 + [40000.0] * 3)
PRIOR_INFO = np.diag([1e6] * 6)


def test_right_jacobian_inverse_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(10):
        xi = rng.normal(0, 0.6, 6)
        J = se3_right_jacobian_inverse(xi)
        E = se3_exp(xi)
        h = 1e-6
        Jnum = np.zeros((6, 6))
        for k in range(6):
            u = np.zeros(6)
            u[k] = h
            Jnum[:, k] = (se3_log(E @ se3_exp(u)) - se3_log(E @ se3_exp(-u))) / (2 * h)
        assert np.abs(J - Jnum).max() < 1e-7


def _square_graph(yaw_error=1.02):
    true = [planar_pose(0, 0, 0), planar_pose(10, 0, np.pi / 2),
            planar_pose(10, 10, np.pi), planar_pose(0, 10, -np.pi / 2)]
    rels = [transform_inverse(true[i]) @ true[i + 1] for i in range(3)]
    meas = []
    for r in rels:
        xi = se3_log(r)
        xi[5] *= yaw_error
        meas.append(se3_exp(xi))
    g = PoseGraph()
    g.add_node(true[0])
    cur = true[0]
    for m in meas:
        cur = cur @ m
        g.add_node(cur)
    g.add_prior(0, true[0], PRIOR_INFO)
    for i, m in enumerate(meas):
        add_odometry_factor(g, i, i + 1, m, INFO_ODOM)
    g.add_loop_factor(0, 3, transform_inverse(true[0]) @ true[3],
                      np.diag([10000.0] * 3 + [40000.0] * 3))
    return g, true


def test_single_node_prior_unchanged():
    g = PoseGraph()
    T = planar_pose(1.0, 2.0, 0.5)
    g.add_node(T)
    g.add_prior(0, T, PRIOR_INFO)
    optimize_graph(g)
    assert np.array_equal(g.nodes[0], T)
    assert total_cost(g) == pytest.approx(0.0, abs=1e-18)


def test_chain_exact_measurements_zero_residual():
    rng = np.random.default_rng(1)
    true = [planar_pose(0, 0, 0), planar_pose(1, 0, 0.3), planar_pose(2, 0.5, 0.7)]
    g = PoseGraph()
    g.add_node(true[0])
    for T in true[1:]:
        g.add_node(T @ se3_exp(rng.normal(0, 0.1, 6)))
    g.add_prior(0, true[0], PRIOR_INFO)
    for i in range(2):
        add_odometry_factor(g, i, i + 1,
                            transform_inverse(true[i]) @ true[i + 1], INFO_ODOM)
    optimize_graph(g)
    for i in range(1, 3):
        assert np.abs(g.nodes[i] - true[i]).max() < 1e-6
    # consistent measurements: residual is zero at the composed poses
    assert total_cost(g) < 1e-12


def test_square_loop_matches_brute_force_minimizer():
    # brute-force oracle: numerical minimization of the same cost over the
    # free pose parameters (node 0 anchored, matching the optimizer's gauge)
    from scipy.optimize import minimize

    g, _ = _square_graph()
    init_nodes = [n.copy() for n in g.nodes]

    def params_to_nodes(p):
        nodes = [init_nodes[0]]
        for k in range(3):
            nodes.append(make_transform(so3_exp(p[6 * k + 3:6 * k + 6]),
                                        p[6 * k:6 * k + 3]))
        return nodes

    p0 = np.concatenate([
        np.concatenate([init_nodes[k][:3, 3], so3_log(init_nodes[k][:3, :3])])
        for k in range(1, 4)])
    res = minimize(lambda p: total_cost(g, params_to_nodes(p)), p0,
                   method="BFGS", options={"gtol": 1e-12, "maxiter": 20000})
    brute_nodes = params_to_nodes(res.x)

    optimize_graph(g)
    assert total_cost(g) <= res.fun + 1e-9
    for k in range(1, 4):
        assert np.abs(brute_nodes[k] - g.nodes[k]).max() < 1e-4


def test_cost_never_increases_and_anchor_fixed():
    g, _ = _square_graph()
    anchor_bytes = g.nodes[0].tobytes()
    c0 = total_cost(g)
    optimize_graph(g)
    assert total_cost(g) <= c0
    assert g.nodes[0].tobytes() == anchor_bytes


def test_zero_residual_factor_leaves_optimum():
    g, _ = _square_graph()
    optimize_graph(g)
    cost = total_cost(g)
    nodes = [n.copy() for n in g.nodes]
    # add a factor already satisfied at the optimum
    rel = transform_inverse(g.nodes[1]) @ g.nodes[3]
    g.add_loop_factor(1, 3, rel, np.diag([100.0] * 6))
    optimize_graph(g)
    assert total_cost(g) == pytest.approx(cost, abs=1e-9)
    for a, b in zip(nodes, g.nodes):
        assert np.abs(a - b).max() < 1e-7


def test_duplicate_factor_allowed():
    g = PoseGraph()
    g.add_node(planar_pose(0, 0, 0))
    g.add_node(planar_pose(1, 0, 0))
    g.add_prior(0, planar_pose(0, 0, 0), PRIOR_INFO)
    rel = planar_pose(1, 0, 0)
    add_odometry_factor(g, 0, 1, rel, INFO_ODOM)
    add_odometry_factor(g, 0, 1, rel, INFO_ODOM)
    assert len(g.factors) == 3
    optimize_graph(g)
    assert np.abs(g.nodes[1] - planar_pose(1, 0, 0)).max() < 1e-9


def test_missing_node_rejected():
    g = PoseGraph()
    g.add_node(planar_pose(0, 0, 0))
    with pytest.raises(ValueError):
        add_odometry_factor(g, 0, 5, np.eye(4), INFO_ODOM)


def test_non_spd_information_rejected():
    g = PoseGraph()
    g.add_node(planar_pose(0, 0, 0))
    g.add_node(planar_pose(1, 0, 0))
    bad = np.diag([1.0, 1.0, 1.0, 1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        add_odometry_factor(g, 0, 1, np.eye(4), bad)
    asym = np.eye(6)
    asym[0, 1] = 0.5
    with pytest.raises(ValueError):
        add_odometry_factor(g, 0, 1, np.eye(4), asym)


def test_under_constrained_subgraph_reports_nodes():
    g = PoseGraph()
    g.add_node(planar_pose(0, 0, 0))
    g.add_node(planar_pose(1, 0, 0))
    g.add_node(planar_pose(5, 5, 0))   # disconnected
    g.add_prior(0, planar_pose(0, 0, 0), PRIOR_INFO)
    add_odometry_factor(g, 0, 1, planar_pose(1, 0, 0), INFO_ODOM)
    with pytest.raises(GraphOptimizationError) as exc:
        optimize_graph(g)
    assert exc.value.node_ids == [2]


def test_single_prior_enforced():
    g = PoseGraph()
    g.add_node(planar_pose(0, 0, 0))
    g.add_prior(0, planar_pose(0, 0, 0), PRIOR_INFO)
    with pytest.raises(ValueError):
        g.add_prior(0, planar_pose(0, 0, 0), PRIOR_INFO)
