import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pointer_probs_reference
from pointroute.errors import (
    EmptyRouteError,
    NoCandidatesError,
    ParameterError,
    ShapeError,
)
from pointroute.instance import Instance, generate_instances
from pointroute.model import (
    ContextState,
    ModelConfig,
    N_FEATURES,
    NodeEmbeddings,
    angle_feature,
    advance_context,
    context_query,
    encode,
    featurize,
    init_params,
    initial_context,
    pointer_distribution,
    pointer_keys,
    zero_pointer_params,
)


class TestModelConfig:
    def test_defaults_match_reference_setup(self):
        cfg = ModelConfig()
        assert (cfg.d, cfg.n_t, cfg.heads, cfg.H, cfg.d_k, cfg.C) == (128, 6, 8, 8, 128, 50.0)

    def test_rejects_indivisible_heads(self):
        with pytest.raises(ParameterError):
            ModelConfig(d=30, heads=4)

    def test_rejects_nonpositive(self):
        with pytest.raises(ParameterError):
            ModelConfig(d=0)
        with pytest.raises(ParameterError):
            ModelConfig(C=-1)


class TestFeaturize:
    def test_width_is_24(self):
        inst = generate_instances(seed=1, n=9, count=1)[0]
        feats = featurize(inst)
        assert feats.shape == (9, N_FEATURES)
        assert N_FEATURES == 24

    def test_center_fixed_point(self):
        inst = Instance(coords=[[0.5, 0.5], [0.25, 0.75]])
        row = featurize(inst)[0].reshape(8, 3)
        for triple in row:
            np.testing.assert_allclose(triple, row[0])
        assert len(set(np.round(row[0], 12))) <= 3

    def test_identity_transform_of_x_axis_point(self):
        inst = Instance(coords=[[1.0, 0.0], [0.5, 0.5]])
        x, y, eta = featurize(inst)[0, :3]
        assert (x, y, eta) == (1.0, 0.0, 0.0)

    def test_requires_normalized_coords(self):
        inst = Instance(coords=[[0.0, 0.0], [10.0, 0.0]])
        with pytest.raises(ParameterError, match="normalize"):
            featurize(inst)

    def test_atanh_mode_is_finite_everywhere(self):
        inst = generate_instances(seed=5, n=50, count=1)[0]
        feats = featurize(inst, angle_mode="atanh")
        assert np.all(np.isfinite(feats))
        assert angle_feature(np.array(0.0), np.array(0.0), "atanh") == 0.0

    def test_angle_is_atan2(self):
        assert angle_feature(np.array(1.0), np.array(1.0)) == pytest.approx(np.pi / 4)
        assert angle_feature(np.array(0.0), np.array(1.0)) == pytest.approx(np.pi / 2)
        assert angle_feature(np.array(0.0), np.array(0.0)) == 0.0


class TestEncode:
    def test_permutation_equivariance(self, tiny_config, tiny_store):
        inst = generate_instances(seed=3, n=8, count=1)[0]
        base = encode(tiny_store, tiny_config, featurize(inst))
        perm = np.random.default_rng(0).permutation(8)
        permuted = encode(tiny_store, tiny_config, featurize(inst)[perm])
        np.testing.assert_allclose(permuted.per_node, base.per_node[perm], atol=1e-5)
        np.testing.assert_allclose(permuted.graph, base.graph, atol=1e-4)

    def test_zero_weights_give_zero_embeddings(self, tiny_config):
        store = init_params(tiny_config, seed=0)
        for name, t in store.tensors.items():
            if not name.endswith("_ln.g"):
                t[...] = 0.0
        inst = generate_instances(seed=3, n=5, count=1)[0]
        emb = encode(store, tiny_config, featurize(inst))
        assert np.all(emb.per_node == 0.0)
        assert np.all(emb.graph == 0.0)

    def test_graph_embedding_is_row_sum(self, tiny_config, tiny_store):
        inst = generate_instances(seed=4, n=11, count=1)[0]
        emb = encode(tiny_store, tiny_config, featurize(inst))
        independent = np.zeros(tiny_config.d, dtype=np.float64)
        for row in np.asarray(emb.per_node):
            independent += row
        assert np.abs(emb.graph - independent).max() <= 1e-4

    def test_wrong_feature_width(self, tiny_config, tiny_store):
        with pytest.raises(ShapeError):
            encode(tiny_store, tiny_config, np.zeros((5, 7)))

    def test_config_param_mismatch(self, tiny_config, tiny_store):
        other = ModelConfig(d=32, n_t=2, heads=4, H=2, d_k=8)
        with pytest.raises(ShapeError):
            encode(tiny_store, other, np.zeros((5, 24)))


class TestContextQuery:
    def test_depot_only(self, rng):
        n, d = 6, 4
        per_node = rng.normal(size=(n, d)).astype(np.float32)
        emb = NodeEmbeddings(per_node=per_node, graph=per_node.sum(axis=0))
        state = initial_context(emb, start=2)
        q = context_query(emb, state, n)
        depot = per_node[2].astype(np.float64)
        expected = (emb.graph.astype(np.float64) + depot) / n + 2 * depot
        np.testing.assert_allclose(q, expected, atol=1e-6)

    def test_zero_embeddings(self):
        emb = NodeEmbeddings(per_node=np.zeros((4, 3)), graph=np.zeros(3))
        q = context_query(emb, initial_context(emb, 0), 4)
        assert np.all(q == 0.0)

    def test_matches_independent_recomputation(self, rng):
        n, d = 7, 5
        per_node = rng.normal(size=(n, d))
        emb = NodeEmbeddings(per_node=per_node, graph=per_node.sum(axis=0))
        state = initial_context(emb, start=1)
        for node in (4, 2, 6):
            advance_context(state, emb, node)
        q = context_query(emb, state, n)
        route = per_node[[1, 4, 2, 6]].sum(axis=0)
        expected = (per_node.sum(axis=0) + route) / n + per_node[6] + per_node[1]
        assert np.abs(q - expected).max() <= 1e-5
        assert state.t == 4

    def test_empty_route_rejected(self):
        emb = NodeEmbeddings(per_node=np.zeros((4, 3)), graph=np.zeros(3))
        state = ContextState(h_first=np.zeros(3), h_last=np.zeros(3),
                             h_route=np.zeros(3), t=0)
        with pytest.raises(EmptyRouteError):
            context_query(emb, state, 4)


def _random_decode_state(config, store, n, seed):
    rng = np.random.default_rng(seed)
    inst = generate_instances(seed=seed, n=n, count=1)[0]
    emb = encode(store, config, featurize(inst))
    visited = np.zeros(n, dtype=bool)
    order = rng.permutation(n)[: rng.integers(1, n)]
    visited[order] = True
    state = initial_context(emb, int(order[0]))
    for node in order[1:]:
        advance_context(state, emb, int(node))
    q = context_query(emb, state, n)
    return inst, emb, q, int(order[-1]), visited


class TestPointerDistribution:
    def test_zero_weights_pick_nearest_unvisited(self, tiny_config):
        store = zero_pointer_params(tiny_config, seed=0)
        inst, emb, q, last, visited = _random_decode_state(tiny_config, store, 9, seed=8)
        p = pointer_distribution(store, q, emb, last, inst, visited, C=tiny_config.C)
        dist = inst.distance_matrix()[last].copy()
        dist[visited] = np.inf
        assert int(np.argmax(p)) == int(np.argmin(dist))

    def test_single_candidate_gets_probability_one(self, tiny_config, tiny_store):
        inst, emb, q, last, visited = _random_decode_state(tiny_config, tiny_store, 5, seed=3)
        visited[:] = True
        visited[3] = False
        last = int(np.flatnonzero(visited)[0])
        p = pointer_distribution(tiny_store, q, emb, last, inst, visited, C=tiny_config.C)
        assert p[3] == 1.0
        assert np.all(p[visited] == 0.0)

    def test_matches_slow_reference(self, tiny_config, tiny_store):
        for seed in (1, 2, 3):
            inst, emb, q, last, visited = _random_decode_state(tiny_config, tiny_store, 5, seed=seed)
            p = pointer_distribution(tiny_store, q, emb, last, inst, visited, C=tiny_config.C)
            ref = pointer_probs_reference(
                np.asarray(tiny_store["dec.wq"], dtype=np.float64),
                np.asarray(tiny_store["dec.wk"], dtype=np.float64),
                q, np.asarray(emb.per_node, dtype=np.float64),
                inst.distance_matrix()[last], visited, tiny_config.C)
            np.testing.assert_allclose(p, ref, atol=1e-5)

    def test_all_visited_rejected(self, tiny_config, tiny_store):
        inst, emb, q, last, visited = _random_decode_state(tiny_config, tiny_store, 5, seed=4)
        visited[:] = True
        with pytest.raises(NoCandidatesError):
            pointer_distribution(tiny_store, q, emb, last, inst, visited, C=tiny_config.C)

    def test_unvisited_last_rejected(self, tiny_config, tiny_store):
        inst, emb, q, last, visited = _random_decode_state(tiny_config, tiny_store, 5, seed=5)
        unvisited = int(np.flatnonzero(~visited)[0])
        with pytest.raises(ParameterError):
            pointer_distribution(tiny_store, q, emb, unvisited, inst, visited, C=tiny_config.C)

    @given(st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_masking_and_normalization(self, seed):
        config = ModelConfig(d=16, n_t=1, heads=4, H=2, d_k=8, C=50.0)
        store = init_params(config, seed=99)
        inst, emb, q, last, visited = _random_decode_state(config, store, 8, seed=seed)
        p = pointer_distribution(store, q, emb, last, inst, visited, C=config.C)
        assert np.all(p[visited] == 0.0)
        assert abs(p[~visited].sum() - 1.0) <= 1e-6

    def test_entropy_non_increasing_in_clipping_constant(self, tiny_config, tiny_store):
        # same raw scores, growing C: sharper distributions, smaller entropy
        for seed in range(5):
            inst, emb, q, last, visited = _random_decode_state(
                tiny_config, tiny_store, 10, seed=seed)
            entropies = []
            for c in (1.0, 10.0, 50.0, 100.0):
                p = pointer_distribution(tiny_store, q, emb, last, inst, visited, C=c)
                candidates = p[~visited]
                entropies.append(float(-np.sum(candidates * np.log(candidates + 1e-300))))
            assert all(a >= b - 1e-12 for a, b in zip(entropies, entropies[1:])), entropies

    def test_keys_precomputation_matches(self, tiny_config, tiny_store):
        inst, emb, q, last, visited = _random_decode_state(tiny_config, tiny_store, 6, seed=12)
        keys = pointer_keys(tiny_store, emb)
        direct = pointer_distribution(tiny_store, q, emb, last, inst, visited, C=5.0)
        cached = pointer_distribution(tiny_store, q, emb, last, inst, visited, C=5.0, keys=keys)
        np.testing.assert_array_equal(direct, cached)
