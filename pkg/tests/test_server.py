"""Fusion recursion, finalization, and the centralized oracle."""

import numpy as np
import pytest

from apfl.client import LocalKnowledge, compute_local_primary
from apfl.data import one_hot
from apfl.errors import DuplicateClientError, IncompleteFusionError, ShapeError
from apfl.server import (
    centralized_oracle,
    finalize,
    fuse,
    fuse_all,
    fusion_weights,
    init_fusion,
)


def scalar_knowledge(client_id, a, g):
    return LocalKnowledge(
        client_id=client_id,
        a=np.array([[float(a)]]),
        g_local=np.array([[float(g)]]),
        n_samples=1,
    )


class TestScalarWorkedCase:
    """Two one-dimensional clients with gamma = 1, checked end to end by hand.

    Client 1 holds phi = [1, 1]^T, y = [1, 1]^T: a = 3, local solution 2/3.
    Client 2 holds phi = [2], y = [0]: a = 5, local solution 0.
    Pooled ridge: (6 + 1)^-1 * 2 = 2/7.
    """

    def test_client_uploads(self):
        kn1 = compute_local_primary([[1.0], [1.0]], [[1.0], [1.0]], gamma=1.0, client_id=1)
        kn2 = compute_local_primary([[2.0]], [[0.0]], gamma=1.0, client_id=2)
        assert np.allclose(kn1.a, [[3.0]], atol=1e-15)
        assert np.allclose(kn1.g_local, [[2.0 / 3.0]], atol=1e-15)
        assert np.allclose(kn2.a, [[5.0]], atol=1e-15)
        assert np.allclose(kn2.g_local, [[0.0]], atol=1e-15)

    def test_init_state(self):
        state = init_fusion(scalar_knowledge(1, 3.0, 2.0 / 3.0), gamma=1.0)
        assert state.clients_fused == 1
        assert np.allclose(state.agg_a, [[3.0]], atol=1e-15)
        assert np.allclose(state.fused, [[2.0 / 3.0]], atol=1e-15)

    def test_fusion_weights_intermediates(self):
        lam_w, delta_w, agg_new = fusion_weights(
            np.array([[3.0]]), np.array([[5.0]])
        )
        assert abs(lam_w[0, 0] - 3.0 / 8.0) <= 1e-12
        assert abs(delta_w[0, 0] - 5.0 / 8.0) <= 1e-12
        assert abs(agg_new[0, 0] - 8.0) <= 1e-12

    def test_fused_knowledge_and_final_stream(self):
        state = init_fusion(scalar_knowledge(1, 3.0, 2.0 / 3.0), gamma=1.0)
        state = fuse(state, scalar_knowledge(2, 5.0, 0.0))
        assert abs(state.fused[0, 0] - 0.25) <= 1e-12
        assert abs(state.agg_a[0, 0] - 8.0) <= 1e-12
        g = finalize(state, 2)
        assert abs(g[0, 0] - 2.0 / 7.0) <= 1e-12

    def test_matches_pooled_oracle(self):
        pooled_phi = np.array([[1.0], [1.0], [2.0]])
        pooled_y = np.array([[1.0], [1.0], [0.0]])
        oracle = centralized_oracle(pooled_phi, pooled_y, gamma=1.0)
        assert abs(oracle[0, 0] - 2.0 / 7.0) <= 1e-12


def random_clients(rng, k, d_p, c, gamma):
    knowledges, phis, ys = [], [], []
    for j in range(k):
        n = int(rng.integers(5, 60))
        phi = rng.standard_normal((n, d_p))
        y = one_hot(rng.integers(0, c, n), c)
        phis.append(phi)
        ys.append(y)
        knowledges.append(compute_local_primary(phi, y, gamma, client_id=j))
    return knowledges, phis, ys


class TestFusion:
    def test_single_client_finalize_returns_local_stream(self):
        rng = np.random.default_rng(31)
        (kn,), _, _ = random_clients(rng, 1, 6, 3, gamma=0.5)
        state = init_fusion(kn, gamma=0.5)
        g = finalize(state, 1)
        assert np.allclose(g, kn.g_local, atol=1e-12)

    def test_fused_shape_contract(self):
        rng = np.random.default_rng(32)
        knowledges, _, _ = random_clients(rng, 3, 5, 4, gamma=0.2)
        state = fuse_all(knowledges, gamma=0.2)
        assert state.fused.shape == (5, 4)
        assert state.agg_a.shape == (5, 5)
        assert state.clients_fused == 3

    def test_loop_invariant_after_every_fuse(self):
        # agg_a @ fused stays equal to the running sum of A_i @ G_i
        rng = np.random.default_rng(33)
        gamma = 0.7
        knowledges, _, _ = random_clients(rng, 6, 10, 3, gamma)
        state = init_fusion(knowledges[0], gamma)
        running = knowledges[0].a @ knowledges[0].g_local
        for kn in knowledges[1:]:
            state = fuse(state, kn)
            running = running + kn.a @ kn.g_local
            rel = np.linalg.norm(state.agg_a @ state.fused - running) / np.linalg.norm(
                running
            )
            assert rel <= 1e-9

    def test_duplicate_client_rejected(self):
        rng = np.random.default_rng(34)
        knowledges, _, _ = random_clients(rng, 2, 4, 2, gamma=0.4)
        state = init_fusion(knowledges[0], gamma=0.4)
        with pytest.raises(DuplicateClientError):
            fuse(state, knowledges[0])

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(35)
        knowledges, _, _ = random_clients(rng, 1, 4, 2, gamma=0.4)
        other = compute_local_primary(
            rng.standard_normal((8, 5)), one_hot(rng.integers(0, 2, 8), 2), 0.4, 9
        )
        state = init_fusion(knowledges[0], gamma=0.4)
        with pytest.raises(ShapeError):
            fuse(state, other)

    def test_incomplete_fusion_rejected(self):
        rng = np.random.default_rng(36)
        knowledges, _, _ = random_clients(rng, 3, 4, 2, gamma=0.4)
        state = fuse_all(knowledges[:2], gamma=0.4)
        with pytest.raises(IncompleteFusionError):
            finalize(state, 3)


class TestCentralizedEquivalence:
    @pytest.mark.parametrize("k,d_p", [(2, 8), (5, 16), (8, 32)])
    def test_matches_pooled_oracle(self, k, d_p):
        rng = np.random.default_rng(1000 + k)
        gamma = 0.3
        knowledges, phis, ys = random_clients(rng, k, d_p, 5, gamma)
        state = fuse_all(knowledges, gamma)
        got = finalize(state, k)
        want = centralized_oracle(np.vstack(phis), np.vstack(ys), gamma)
        rel = np.linalg.norm(got - want) / np.linalg.norm(want)
        assert rel <= 1e-8

    def test_zero_stream_client_still_pools_exactly(self):
        # one client whose labels are all-zero contributes only its gram
        # matrix; the fused result must still match the pooled oracle
        rng = np.random.default_rng(42)
        gamma = 0.5
        phi1 = rng.standard_normal((20, 6))
        y1 = one_hot(rng.integers(0, 3, 20), 3)
        phi2 = rng.standard_normal((15, 6))
        y2 = np.zeros((15, 3))
        kn1 = compute_local_primary(phi1, y1, gamma, 0)
        kn2 = compute_local_primary(phi2, y2, gamma, 1)
        got = finalize(fuse_all([kn1, kn2], gamma), 2)
        want = centralized_oracle(np.vstack([phi1, phi2]), np.vstack([y1, y2]), gamma)
        assert np.linalg.norm(got - want) / np.linalg.norm(want) <= 1e-9

    def test_order_invariance(self):
        rng = np.random.default_rng(43)
        gamma = 0.2
        knowledges, _, _ = random_clients(rng, 6, 12, 4, gamma)
        outputs = []
        for _ in range(10):
            order = rng.permutation(6)
            outputs.append(finalize(fuse_all([knowledges[i] for i in order], gamma), 6))
        for i in range(len(outputs)):
            for j in range(i + 1, len(outputs)):
                rel = np.linalg.norm(outputs[i] - outputs[j]) / np.linalg.norm(outputs[i])
                assert rel <= 1e-8

    def test_identical_clients_match_pooled_scale(self):
        # K copies of the same shard pool to the same data stacked K times
        rng = np.random.default_rng(44)
        gamma = 0.4
        phi = rng.standard_normal((12, 5))
        y = one_hot(rng.integers(0, 3, 12), 3)
        kns = [compute_local_primary(phi, y, gamma, j) for j in range(4)]
        got = finalize(fuse_all(kns, gamma), 4)
        want = centralized_oracle(np.vstack([phi] * 4), np.vstack([y] * 4), gamma)
        assert np.linalg.norm(got - want) / np.linalg.norm(want) <= 1e-9

    def test_skipping_overcount_correction_breaks_equivalence(self):
        rng = np.random.default_rng(45)
        gamma = 1.0
        knowledges, phis, ys = random_clients(rng, 5, 8, 3, gamma)
        state = fuse_all(knowledges, gamma)
        broken = finalize(state, 5, overcount_correction=False)
        want = centralized_oracle(np.vstack(phis), np.vstack(ys), gamma)
        assert np.linalg.norm(broken - want) / np.linalg.norm(want) > 1e-8


class TestCentralizedOracle:
    def test_single_client_equals_local(self):
        rng = np.random.default_rng(46)
        phi = rng.standard_normal((18, 7))
        y = one_hot(rng.integers(0, 4, 18), 4)
        kn = compute_local_primary(phi, y, 0.9, 0)
        want = centralized_oracle(phi, y, 0.9)
        assert np.max(np.abs(kn.g_local - want)) <= 1e-12

    def test_row_order_invariance(self):
        rng = np.random.default_rng(47)
        phi = rng.standard_normal((25, 6))
        y = one_hot(rng.integers(0, 3, 25), 3)
        perm = rng.permutation(25)
        a = centralized_oracle(phi, y, 0.3)
        b = centralized_oracle(phi[perm], y[perm], 0.3)
        assert np.linalg.norm(a - b) / np.linalg.norm(a) <= 1e-12
