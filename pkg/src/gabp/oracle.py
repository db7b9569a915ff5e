"""Centralized ground truth for cross-checking message passing.

Stack every observation into one linear-Gaussian model

    y = A_bar @ x + z,   x ~ N(0, W_bar),   z ~ N(0, R_bar),

with x the concatenation of all node variables (ascending id) and y the
concatenation of all observations (ascending id).  The exact posterior is

    Cov = (W_bar^{-1} + A_bar^T R_bar^{-1} A_bar)^{-1}
    mean = Cov @ A_bar^T R_bar^{-1} y.

On a cycle-free factor graph the message passing fixed point reproduces
these marginals exactly; on loopy graphs the means still agree at the
fixed point but the marginal covariances do not, so comparisons must say
which regime they are in.
"""

import dataclasses

import networkx as nx
import numpy as np

from . import cones

__all__ = [
    "JointSystem",
    "build_joint",
    "centralized_posterior",
    "marginals",
    "factor_graph_is_tree",
    "CompareReport",
    "compare",
]


@dataclasses.dataclass(frozen=True)
class JointSystem:
    """The stacked model matrices plus the index bookkeeping."""

    a_bar: np.ndarray
    r_bar: np.ndarray
    w_bar: np.ndarray
    y_bar: np.ndarray
    var_spans: dict
    obs_spans: dict


def build_joint(net):
    ids = net.ids
    var_spans = {}
    off = 0
    for i in ids:
        var_spans[i] = slice(off, off + net.var_dim(i))
        off += net.var_dim(i)
    total_var = off
    obs_spans = {}
    off = 0
    for n in ids:
        obs_spans[n] = slice(off, off + net.obs_dim(n))
        off += net.obs_dim(n)
    total_obs = off
    a_bar = np.zeros((total_obs, total_var))
    r_bar = np.zeros((total_obs, total_obs))
    w_bar = np.zeros((total_var, total_var))
    y_bar = np.zeros(total_obs)
    for n in ids:
        node = net.node(n)
        r_bar[obs_spans[n], obs_spans[n]] = node.noise_cov
        y_bar[obs_spans[n]] = node.obs
        w_bar[var_spans[n], var_spans[n]] = node.prior_cov
        for j in net.factor_scope(n):
            a_bar[obs_spans[n], var_spans[j]] = node.coeff[j]
    return JointSystem(a_bar, r_bar, w_bar, y_bar, var_spans, obs_spans)


def centralized_posterior(net):
    """Exact joint posterior (mean, cov) over all variables."""
    joint = build_joint(net)
    r_inv_a = cones.solve_pd(joint.r_bar, joint.a_bar, context="joint noise covariance")
    w_inv = cones.inv_pd(joint.w_bar, context="joint prior covariance")
    prec = cones.symmetrize(w_inv + joint.a_bar.T @ r_inv_a)
    cov = cones.inv_pd(prec, context="joint posterior precision")
    mean = cov @ (r_inv_a.T @ joint.y_bar)
    return mean, cov


def marginals(net):
    """Per-variable posterior marginals {id: (mean_i, cov_i)}."""
    mean, cov = centralized_posterior(net)
    joint = build_joint(net)
    out = {}
    for i in net.ids:
        s = joint.var_spans[i]
        out[i] = (mean[s].copy(), cov[s, s].copy())
    return out


def factor_graph_is_tree(net):
    """True when the bipartite factor graph has no cycle.

    The factor graph has a variable vertex per node and a factor vertex
    per observation, with an edge for every (factor, variable in scope)
    pair.  A network edge whose both endpoints observe each other creates
    a 4-cycle here, so network trees are not automatically factor trees.
    """
    g = nx.Graph()
    for i in net.ids:
        g.add_node(("v", i))
        g.add_node(("f", i))
    for n in net.ids:
        for j in net.factor_scope(n):
            g.add_edge(("f", n), ("v", j))
    return nx.is_forest(g)


@dataclasses.dataclass(frozen=True)
class CompareReport:
    """Outcome of checking beliefs against the centralized posterior.

    ``applicable`` is False when the run never converged, in which case
    the error fields are NaN.  ``cov_comparable`` marks whether covariance
    agreement is even expected (only on factor trees); mean agreement is
    expected at any fixed point.
    """

    applicable: bool
    is_tree: bool
    cov_comparable: bool
    mean_errors: dict
    cov_errors: dict
    max_mean_error: float
    max_cov_error: float

    def to_dict(self):
        return {
            "applicable": self.applicable,
            "is_tree": self.is_tree,
            "cov_comparable": self.cov_comparable,
            "mean_errors": {str(k): v for k, v in sorted(self.mean_errors.items())},
            "cov_errors": {str(k): v for k, v in sorted(self.cov_errors.items())},
            "max_mean_error": self.max_mean_error,
            "max_cov_error": self.max_cov_error,
        }


def compare(net, beliefs, converged=True):
    """Compare belief marginals to the exact centralized marginals.

    ``beliefs`` maps id -> Belief.  Mean errors are infinity norms, cov
    errors Frobenius norms, both per variable.
    """
    is_tree = factor_graph_is_tree(net)
    if not converged:
        nan = float("nan")
        return CompareReport(False, is_tree, is_tree, {}, {}, nan, nan)
    truth = marginals(net)
    mean_errors = {}
    cov_errors = {}
    for i in net.ids:
        b = beliefs[i]
        t_mean, t_cov = truth[i]
        mean_errors[i] = float(np.max(np.abs(b.mean - t_mean))) if t_mean.size else 0.0
        cov_errors[i] = float(np.linalg.norm(b.cov - t_cov, ord="fro"))
    return CompareReport(
        applicable=True,
        is_tree=is_tree,
        cov_comparable=is_tree,
        mean_errors=mean_errors,
        cov_errors=cov_errors,
        max_mean_error=max(mean_errors.values()),
        max_cov_error=max(cov_errors.values()),
    )
