"""Keyframe pose graph: odometry/loop/prior factors and LM optimization.

Node 0 is anchored by the prior and held fixed, which both removes the gauge
freedom and guarantees the anchor pose is returned bit-unchanged. Updates are
manifold-aware (right multiplication by se3 exp) with analytic Jacobians via
the exact SE(3) right-Jacobian inverse. Loop factors get a Huber kernel;
odometry factors stay quadratic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..geometry import hat, se3_exp, se3_log, so3_exp, transform_inverse


class GraphOptimizationError(RuntimeError):
    def __init__(self, message: str, node_ids: list[int] | None = None):
        super().__init__(message)
        self.node_ids = node_ids or []


@dataclass
class Factor:
    kind: str                      # 'prior' | 'odometry' | 'loop'
    i: int
    j: int                         # == i for priors
    measurement: np.ndarray        # 4x4 relative (or absolute for prior)
    information: np.ndarray        # 6x6 SPD
    robust: bool = False


def _check_spd(information: np.ndarray) -> None:
    information = np.asarray(information)
    if information.shape != (6, 6):
        raise ValueError("information matrix must be 6x6")
    if not np.allclose(information, information.T, atol=1e-9):
        raise ValueError("information matrix must be symmetric")
    if np.linalg.eigvalsh(information).min() <= 0:
        raise ValueError("information matrix must be positive definite")


@dataclass
class PoseGraph:
    nodes: list[np.ndarray] = field(default_factory=list)
    factors: list[Factor] = field(default_factory=list)
    huber_delta: float = 0.1       # meters of loop translation error before downweight

    def add_node(self, pose: np.ndarray) -> int:
        self.nodes.append(pose.copy())
        return len(self.nodes) - 1

    def add_prior(self, node: int, pose: np.ndarray, information: np.ndarray) -> None:
        if any(f.kind == "prior" for f in self.factors):
            raise ValueError("graph already has a prior factor")
        self._check_node(node)
        _check_spd(information)
        self.factors.append(Factor("prior", node, node, pose.copy(),
                                   np.asarray(information, dtype=float)))

    def add_loop_factor(self, i: int, j: int, relative: np.ndarray,
                        information: np.ndarray) -> None:
        self._check_node(i)
        self._check_node(j)
        _check_spd(information)
        self.factors.append(Factor("loop", i, j, relative.copy(),
                                   np.asarray(information, dtype=float), robust=True))

    def _check_node(self, idx: int) -> None:
        if not 0 <= idx < len(self.nodes):
            raise ValueError(f"factor references missing node {idx}")

    @property
    def num_loop_factors(self) -> int:
        return sum(1 for f in self.factors if f.kind == "loop")


def add_odometry_factor(graph: PoseGraph, i: int, j: int, relative: np.ndarray,
                        information: np.ndarray) -> PoseGraph:
    """Append a relative-pose factor between existing nodes i -> j."""
    graph._check_node(i)
    graph._check_node(j)
    _check_spd(information)
    graph.factors.append(Factor("odometry", i, j, relative.copy(),
                                np.asarray(information, dtype=float)))
    return graph


def _factor_residual(f: Factor, nodes: list[np.ndarray]) -> np.ndarray:
    if f.kind == "prior":
        return se3_log(transform_inverse(f.measurement) @ nodes[f.i])
    rel = transform_inverse(nodes[f.i]) @ nodes[f.j]
    return se3_log(transform_inverse(f.measurement) @ rel)


def _robust_terms(f: Factor, r: np.ndarray, huber_delta: float,
                  sigma_scale: float) -> tuple[float, float]:
    """(cost contribution, IRLS weight) for one factor residual."""
    e2 = float(r @ f.information @ r)
    if not f.robust:
        return e2, 1.0
    e = np.sqrt(max(e2, 1e-300))
    k = huber_delta * sigma_scale
    if e <= k:
        return e2, 1.0
    return 2.0 * k * e - k * k, k / e


def _loop_sigma_scale(f: Factor) -> float:
    # whitened-units equivalent of the metric Huber threshold
    return float(np.sqrt(np.mean(np.diag(f.information)[:3])))


def total_cost(graph: PoseGraph, nodes: list[np.ndarray] | None = None) -> float:
    """Robust total cost of the graph at the given (default current) poses."""
    nodes = graph.nodes if nodes is None else nodes
    cost = 0.0
    for f in graph.factors:
        r = _factor_residual(f, nodes)
        c, _ = _robust_terms(f, r, graph.huber_delta, _loop_sigma_scale(f))
        cost += c
    return cost


# --- exact SE(3) right-Jacobian inverse -----------------------------------

def _so3_left_jacobian_inverse(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    W = hat(phi)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * W + (W @ W) / 12.0
    half = theta / 2.0
    coef = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * W + coef * (W @ W)


def _se3_Q(xi: np.ndarray) -> np.ndarray:
    rho, phi = xi[:3], xi[3:]
    Cr = hat(rho)
    Cp = hat(phi)
    theta = float(np.linalg.norm(phi))
    if theta < 1e-6:
        c1, c2, c3 = 1.0 / 6.0, 1.0 / 24.0, 1.0 / 120.0
    else:
        t2, t3, t4, t5 = theta**2, theta**3, theta**4, theta**5
        c1 = (theta - np.sin(theta)) / t3
        c2 = (1.0 - t2 / 2.0 - np.cos(theta)) / t4
        c3 = 0.5 * (c2 - 3.0 * (theta - np.sin(theta) - t3 / 6.0) / t5)
    return (0.5 * Cr
            + c1 * (Cp @ Cr + Cr @ Cp + Cp @ Cr @ Cp)
            - c2 * (Cp @ Cp @ Cr + Cr @ Cp @ Cp - 3.0 * Cp @ Cr @ Cp)
            - c3 * (Cp @ Cr @ Cp @ Cp + Cp @ Cp @ Cr @ Cp))


def _se3_left_jacobian_inverse(xi: np.ndarray) -> np.ndarray:
    Jinv = _so3_left_jacobian_inverse(xi[3:])
    Q = _se3_Q(xi)
    out = np.zeros((6, 6))
    out[:3, :3] = Jinv
    out[3:, 3:] = Jinv
    out[:3, 3:] = -Jinv @ Q @ Jinv
    return out


def se3_right_jacobian_inverse(xi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian: d/d(eps) log(exp(xi) exp(eps)) at eps = 0."""
    return _se3_left_jacobian_inverse(-xi)


def se3_adjoint(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    t = T[:3, 3]
    out = np.zeros((6, 6))
    out[:3, :3] = R
    out[3:, 3:] = R
    out[:3, 3:] = hat(t) @ R
    return out


def _factor_jacobians(f: Factor, nodes: list[np.ndarray],
                      r: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Jacobians of the residual w.r.t. right-perturbations of (i, j)."""
    Jr_inv = se3_right_jacobian_inverse(r)
    if f.kind == "prior":
        return Jr_inv, None
    Ji = -Jr_inv @ se3_adjoint(transform_inverse(nodes[f.j]) @ nodes[f.i])
    Jj = Jr_inv
    return Ji, Jj


def _connected_from_anchor(graph: PoseGraph) -> list[int]:
    n = len(graph.nodes)
    adj: list[list[int]] = [[] for _ in range(n)]
    for f in graph.factors:
        if f.kind != "prior":
            adj[f.i].append(f.j)
            adj[f.j].append(f.i)
    seen = [False] * n
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return [i for i, s in enumerate(seen) if not s]


def optimize_graph(graph: PoseGraph, max_iterations: int = 100,
                   cost_tolerance: float = 1e-9) -> PoseGraph:
    """Levenberg-Marquardt over node poses; node 0 stays bit-identical.

    Raises GraphOptimizationError for an under-constrained graph, reporting
    the unreachable node ids.
    """
    priors = [f for f in graph.factors if f.kind == "prior"]
    if len(priors) != 1:
        raise GraphOptimizationError(f"graph needs exactly one prior, has {len(priors)}")
    orphans = _connected_from_anchor(graph)
    if orphans:
        raise GraphOptimizationError(
            f"under-constrained nodes: {orphans}", node_ids=orphans)

    n = len(graph.nodes)
    if n <= 1:
        return graph
    free = n - 1                               # node 0 anchored
    dim = 6 * free
    poses = [p.copy() for p in graph.nodes]
    cost = total_cost(graph, poses)
    lam = 1e-6

    base6 = np.arange(6)

    for _ in range(max_iterations):
        blk_i, blk_j, blk_data = [], [], []
        b = np.zeros(dim)

        def scatter(ni: int, nj: int, block: np.ndarray):
            if ni < 1 or nj < 1:
                return
            blk_i.append(ni - 1)
            blk_j.append(nj - 1)
            blk_data.append(block)

        for f in graph.factors:
            r = _factor_residual(f, poses)
            _, w = _robust_terms(f, r, graph.huber_delta, _loop_sigma_scale(f))
            omega = w * f.information
            Ji, Jj = _factor_jacobians(f, poses, r)
            if f.kind == "prior":
                if f.i >= 1:
                    JtO = Ji.T @ omega
                    scatter(f.i, f.i, JtO @ Ji)
                    b[6 * (f.i - 1):6 * f.i] += JtO @ r
                continue
            if f.i >= 1:
                JtOi = Ji.T @ omega
                scatter(f.i, f.i, JtOi @ Ji)
                b[6 * (f.i - 1):6 * f.i] += JtOi @ r
            if f.j >= 1:
                JtOj = Jj.T @ omega
                scatter(f.j, f.j, JtOj @ Jj)
                b[6 * (f.j - 1):6 * f.j] += JtOj @ r
            if f.i >= 1 and f.j >= 1:
                cross = Ji.T @ omega @ Jj
                scatter(f.i, f.j, cross)
                scatter(f.j, f.i, cross.T)

        bi = np.asarray(blk_i)
        bj = np.asarray(blk_j)
        data = np.asarray(blk_data)
        rows = (6 * bi[:, None, None] + base6[None, :, None] + 0 * base6[None, None, :])
        cols = (6 * bj[:, None, None] + 0 * base6[None, :, None] + base6[None, None, :])
        H = sp.csr_matrix((data.ravel(), (rows.ravel(), cols.ravel())),
                          shape=(dim, dim))
        diag = H.diagonal()

        accepted = False
        for _ in range(10):
            Hlm = H + sp.diags(lam * np.maximum(diag, 1e-12))
            try:
                if dim <= 240:
                    delta = np.linalg.solve(Hlm.toarray(), -b)
                else:
                    delta = spla.spsolve(Hlm.tocsc(), -b)
            except Exception as exc:
                raise GraphOptimizationError(f"normal equations singular: {exc}")
            if not np.all(np.isfinite(delta)):
                raise GraphOptimizationError("normal equations singular (non-finite step)")
            candidate = [poses[0]]
            for k in range(1, n):
                candidate.append(poses[k] @ se3_exp(delta[6 * (k - 1):6 * k]))
            new_cost = total_cost(graph, candidate)
            if new_cost <= cost:
                poses = candidate
                accepted = True
                break
            lam *= 5.0
        if not accepted:
            break
        lam = max(lam / 3.0, 1e-12)
        if cost - new_cost < cost_tolerance:
            cost = new_cost
            break
        cost = new_cost

    graph.nodes = poses
    return graph
