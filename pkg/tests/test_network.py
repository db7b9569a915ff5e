import json

import numpy as np
import pytest

from gabp import network
from gabp.network import (
    DirectedEdge,
    GaussianNetwork,
    NodeSpec,
    SchemaError,
    SemanticError,
)


def make_node(i, dim=1, coeff=None, obs_dim=None, prior=None, noise=None, obs=None):
    coeff = coeff if coeff is not None else {i: np.eye(dim)}
    m = obs_dim if obs_dim is not None else next(iter(coeff.values())).shape[0]
    return NodeSpec(
        id=i,
        dim=dim,
        prior_cov=prior if prior is not None else np.eye(dim),
        noise_cov=noise if noise is not None else np.eye(m),
        obs=obs if obs is not None else np.zeros(m),
        coeff=coeff,
    )


class TestNodeSpec:
    def test_coerces_and_freezes_arrays(self):
        n = make_node(1, dim=2)
        assert n.prior_cov.dtype == float
        with pytest.raises(ValueError):
            n.prior_cov[0, 0] = 5.0
        with pytest.raises(ValueError):
            n.coeff[1][0, 0] = 5.0

    def test_prior_shape_must_match_dim(self):
        with pytest.raises(ValueError, match="prior_cov"):
            NodeSpec(1, 2, np.eye(3), np.eye(2), np.zeros(2), {1: np.eye(2)})

    def test_obs_length_must_match_noise(self):
        with pytest.raises(ValueError, match="obs length"):
            NodeSpec(1, 1, np.eye(1), np.eye(2), np.zeros(3), {1: np.ones((2, 1))})

    def test_coeff_rows_must_match_obs(self):
        with pytest.raises(ValueError, match="rows"):
            NodeSpec(1, 1, np.eye(1), np.eye(2), np.zeros(2), {1: np.ones((3, 1))})

    def test_must_reference_self(self):
        with pytest.raises(ValueError, match="own id"):
            NodeSpec(1, 1, np.eye(1), np.eye(1), np.zeros(1), {2: np.eye(1)})

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            make_node(1, obs=np.array([np.nan]))

    def test_scope_sorted(self):
        n = NodeSpec(
            2, 1, np.eye(1), np.eye(3), np.zeros(3),
            {3: np.ones((3, 1)), 1: np.ones((3, 1)), 2: np.ones((3, 1))},
        )
        assert n.scope() == (1, 2, 3)


class TestGaussianNetwork:
    def build_pair(self):
        a = make_node(1, coeff={1: np.eye(1), 2: np.eye(1)}, obs_dim=1)
        b = make_node(2, coeff={1: np.eye(1), 2: np.eye(1)}, obs_dim=1)
        return GaussianNetwork([a, b], [(1, 2)])

    def test_requires_nodes(self):
        with pytest.raises(ValueError, match="at least one node"):
            GaussianNetwork([], [])

    def test_duplicate_ids(self):
        with pytest.raises(ValueError, match="duplicate node ids"):
            GaussianNetwork([make_node(1), make_node(1)], [])

    def test_edge_to_unknown_node(self):
        with pytest.raises(ValueError, match="unknown node"):
            GaussianNetwork([make_node(1), make_node(2)], [(1, 9)])

    def test_self_loop(self):
        with pytest.raises(ValueError, match="self loop"):
            GaussianNetwork([make_node(1)], [(1, 1)])

    def test_duplicate_edge(self):
        with pytest.raises(ValueError, match="duplicate edge"):
            GaussianNetwork([make_node(1), make_node(2)], [(1, 2), (2, 1)])

    def test_coeff_must_point_at_neighbor(self):
        bad = make_node(1, coeff={1: np.eye(1), 3: np.eye(1)})
        others = [make_node(2), make_node(3)]
        with pytest.raises(ValueError, match="not a neighbor"):
            GaussianNetwork([bad] + others, [(1, 2), (2, 3)])

    def test_coeff_columns_must_match_target_dim(self):
        a = make_node(1, coeff={1: np.eye(1), 2: np.ones((1, 3))})
        b = make_node(2, dim=2, coeff={2: np.eye(2)})
        with pytest.raises(ValueError, match="columns"):
            GaussianNetwork([a, b], [(1, 2)])

    def test_derived_maps(self):
        net = network.two_node_symmetric()
        assert net.ids == (1, 2)
        assert net.neighbors(1) == (2,)
        assert net.factor_scope(1) == (1, 2)
        assert net.var_factors(2) == (1, 2)
        assert net.directed_edges == (
            DirectedEdge(1, 1),
            DirectedEdge(1, 2),
            DirectedEdge(2, 1),
            DirectedEdge(2, 2),
        )

    def test_chain_has_reduced_scope(self):
        net = network.two_node_chain()
        assert net.factor_scope(1) == (1, 2)
        assert net.factor_scope(2) == (2,)
        assert net.var_factors(1) == (1,)
        assert net.var_factors(2) == (1, 2)
        assert len(net.directed_edges) == 3

    def test_prior_info_cached_and_correct(self):
        net = network.two_node_symmetric()
        w1 = net.prior_info(1)
        assert np.allclose(w1, np.eye(1))
        assert net.prior_info(1) is w1

    def test_equality(self):
        assert network.two_node_symmetric() == network.two_node_symmetric()
        assert network.two_node_symmetric() != network.two_node_chain()
        assert network.two_node_symmetric() != network.two_node_symmetric(y=(1.0, 0.0))

    def test_with_obs(self):
        net = network.two_node_symmetric()
        shifted = net.with_obs({1: [9.0]})
        assert shifted.node(1).obs[0] == 9.0
        assert shifted.node(2).obs[0] == net.node(2).obs[0]
        # structure untouched
        assert shifted.edges == net.edges


class TestValidate:
    def test_valid_instance_is_clean(self):
        assert network.validate(network.two_node_symmetric()) == []

    def test_prior_not_pd(self):
        node = make_node(1, prior=np.array([[0.0]]))
        out = network.validate(GaussianNetwork([node], []))
        assert any(v.rule == "prior-not-pd" and v.where == "1" for v in out)

    def test_noise_not_pd(self):
        node = make_node(1, noise=np.array([[-1.0]]))
        out = network.validate(GaussianNetwork([node], []))
        assert any(v.rule == "noise-not-pd" for v in out)

    def test_rank_deficient_coeff(self):
        # A[1][2] is a 2x1 zero matrix: shapes fine, rank 0.
        a = NodeSpec(
            1, 1, np.eye(1), np.eye(2), np.zeros(2),
            {1: np.ones((2, 1)), 2: np.zeros((2, 1))},
        )
        b = make_node(2, coeff={2: np.eye(1)})
        out = network.validate(GaussianNetwork([a, b], [(1, 2)]))
        assert [str(v) for v in out] == ["rank-deficient@(1,2): shape (2, 1) has rank 0"]

    def test_ids_not_dense(self):
        net = GaussianNetwork([make_node(1), make_node(3)], [(1, 3)])
        out = network.validate(net)
        assert any(v.rule == "ids-not-dense" for v in out)

    def test_not_connected(self):
        net = GaussianNetwork([make_node(1), make_node(2)], [])
        out = network.validate(net)
        assert any(v.rule == "not-connected" for v in out)

    def test_violations_sorted_by_node(self):
        bad1 = make_node(1, prior=np.array([[-1.0]]))
        bad2 = make_node(2, noise=np.array([[0.0]]))
        out = network.validate(GaussianNetwork([bad1, bad2], [(1, 2)]))
        assert [v.where for v in out] == ["1", "2"]


class TestGenerateRandom:
    @pytest.mark.parametrize("topology", network.TOPOLOGIES)
    def test_topologies_valid(self, topology):
        net = network.generate_random(3, 6, topology, grid_shape=(2, 3))
        assert network.validate(net) == []
        assert net.num_nodes == 6

    def test_reproducible(self):
        a = network.generate_random(11, 7, "er")
        b = network.generate_random(11, 7, "er")
        assert a == b
        c = network.generate_random(12, 7, "er")
        assert a != c

    def test_dims_within_range(self):
        net = network.generate_random(5, 9, "er", dim_range=(2, 4))
        dims = [net.var_dim(i) for i in net.ids]
        assert min(dims) >= 2 and max(dims) <= 4

    def test_full_scopes_on_er(self):
        net = network.generate_random(13, 6, "er")
        for i in net.ids:
            assert net.factor_scope(i) == tuple(sorted({i} | set(net.neighbors(i))))

    def test_tree_scopes_are_thin(self):
        net = network.generate_random(21, 9, "tree")
        sizes = sorted(len(net.factor_scope(i)) for i in net.ids)
        assert sizes[0] == 1           # the root observes only itself
        assert set(sizes) <= {1, 2}    # everyone else: self + parent

    def test_ring_and_star_and_complete_edge_counts(self):
        assert len(network.generate_random(1, 5, "ring").edges) == 5
        assert len(network.generate_random(1, 5, "star").edges) == 4
        assert len(network.generate_random(1, 5, "complete").edges) == 10

    def test_grid_shape_must_cover(self):
        with pytest.raises(ValueError, match="grid"):
            network.generate_random(1, 6, "grid", grid_shape=(2, 2))

    def test_unknown_topology(self):
        with pytest.raises(ValueError, match="unknown topology"):
            network.generate_random(1, 4, "torus")

    def test_obs_dim_matches_scope(self):
        net = network.generate_random(17, 5, "er")
        for i in net.ids:
            want = sum(net.var_dim(j) for j in net.factor_scope(i))
            assert net.obs_dim(i) == want


class TestFileFormat:
    def test_round_trip(self, tmp_path):
        net = network.generate_random(8, 6, "er", dim_range=(1, 3))
        path = tmp_path / "inst.json"
        network.save(net, path)
        back = network.load(path)
        assert back == net

    def test_round_trip_preserves_floats_exactly(self, tmp_path):
        net = network.generate_random(9, 4, "ring")
        back = network.loads(network.dumps(net))
        for i in net.ids:
            assert np.array_equal(back.node(i).prior_cov, net.node(i).prior_cov)
            assert np.array_equal(back.node(i).obs, net.node(i).obs)

    def test_dumps_is_deterministic(self):
        net = network.generate_random(10, 5, "er")
        assert network.dumps(net) == network.dumps(net)

    def test_schema_shape(self):
        doc = json.loads(network.dumps(network.two_node_chain()))
        assert set(doc) == {"nodes", "edges"}
        assert set(doc["nodes"][0]) == {"id", "dim", "W", "R", "y", "A"}
        assert doc["edges"] == [[1, 2]]
        assert list(doc["nodes"][1]["A"]) == ["2"]

    def test_not_json(self):
        with pytest.raises(SchemaError, match="not valid JSON"):
            network.loads("{nodes: ")

    def test_missing_top_key(self):
        with pytest.raises(SchemaError, match="missing key 'edges'"):
            network.loads('{"nodes": []}')

    def test_missing_node_key_reports_location(self):
        doc = json.loads(network.dumps(network.two_node_chain()))
        del doc["nodes"][1]["W"]
        with pytest.raises(SchemaError, match=r"nodes\[1\]: missing key 'W'"):
            network.loads(json.dumps(doc))

    def test_bad_coeff_key(self):
        doc = json.loads(network.dumps(network.two_node_chain()))
        doc["nodes"][0]["A"]["x"] = [[1.0]]
        with pytest.raises(SchemaError, match="not an integer node id"):
            network.loads(json.dumps(doc))

    def test_non_numeric_matrix(self):
        doc = json.loads(network.dumps(network.two_node_chain()))
        doc["nodes"][0]["W"] = [["a"]]
        with pytest.raises(SchemaError, match=r"nodes\[0\].W"):
            network.loads(json.dumps(doc))

    def test_bad_edge_entry(self):
        doc = json.loads(network.dumps(network.two_node_chain()))
        doc["edges"] = [[1, 2, 3]]
        with pytest.raises(SchemaError, match=r"edges\[0\]"):
            network.loads(json.dumps(doc))

    def test_edge_to_missing_node_is_semantic(self):
        doc = json.loads(network.dumps(network.two_node_chain()))
        doc["edges"] = [[1, 9]]
        with pytest.raises(SemanticError, match="unknown node"):
            network.loads(json.dumps(doc))

    def test_invalid_statistics_are_semantic_with_rule_ids(self):
        doc = json.loads(network.dumps(network.two_node_chain()))
        doc["nodes"][0]["W"] = [[-1.0]]
        with pytest.raises(SemanticError, match="prior-not-pd@1") as err:
            network.loads(json.dumps(doc))
        assert err.value.violations[0].rule == "prior-not-pd"

    def test_extra_top_level_keys_tolerated(self):
        doc = json.loads(network.dumps(network.two_node_chain()))
        doc["meta"] = {"note": "anything"}
        net = network.loads(json.dumps(doc))
        assert net == network.two_node_chain()
