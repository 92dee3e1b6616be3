from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgtuner.errors import UnsupportedModelError
from kgtuner.models import (EmbeddingState, GradAccumulator, ModelKind, load_state, relation_width, save_state,
                            score, score_batch_all_heads, score_batch_all_tails, score_grad)
from kgtuner.training.init import init_embeddings

KINDS = list(ModelKind)


def _state(kind, n_ent=6, n_rel=3, dim=4, seed=0):
    return init_embeddings(kind, n_ent, n_rel, dim, "normal", np.random.default_rng(seed))


def _manual(kind, state, h, r, t):
    """Textbook scoring formulas written independently of the query/match split."""
    eh, et, rv = state.entity[h], state.entity[t], state.relation[r]
    if kind is ModelKind.TRANSE:
        return -np.abs(eh + rv - et).sum()
    if kind is ModelKind.DISTMULT:
        return (eh * rv * et).sum()
    if kind is ModelKind.COMPLEX:
        half = state.dim // 2
        ch = eh[:half] + 1j * eh[half:]
        cr = rv[:half] + 1j * rv[half:]
        ct = et[:half] + 1j * et[half:]
        return float(np.real(np.sum(ch * cr * np.conj(ct))))
    if kind is ModelKind.RESCAL:
        return eh @ rv.reshape(state.dim, state.dim) @ et
    half = state.dim // 2
    ch = eh[:half] + 1j * eh[half:]
    ct = et[:half] + 1j * et[half:]
    return -np.abs(ch * np.exp(1j * rv) - ct).sum()


class TestScores:
    def test_transe_zero_vectors(self):
        st_ = EmbeddingState(ModelKind.TRANSE, 2, np.zeros((2, 2)), np.zeros((1, 2)))
        assert score("TransE", st_, 0, 0, 1) == 0.0

    def test_distmult_hand_value(self):
        st_ = EmbeddingState(ModelKind.DISTMULT, 2, np.array([[1.0, 1.0]]), np.array([[2.0, 3.0]]))
        assert score("DistMult", st_, 0, 0, 0) == 5.0

    def test_complex_reduces_to_distmult_on_real_parts(self):
        rng = np.random.default_rng(1)
        ent = np.concatenate([rng.normal(size=(4, 3)), np.zeros((4, 3))], axis=1)
        rel = np.concatenate([rng.normal(size=(2, 3)), np.zeros((2, 3))], axis=1)
        cx = EmbeddingState(ModelKind.COMPLEX, 6, ent, rel)
        dm = EmbeddingState(ModelKind.DISTMULT, 3, ent[:, :3], rel[:, :3])
        for h, r, t in [(0, 0, 1), (2, 1, 3), (3, 0, 3)]:
            assert score("ComplEx", cx, h, r, t) == pytest.approx(score("DistMult", dm, h, r, t), rel=1e-12)

    def test_rescal_identity_is_dot_product(self):
        rng = np.random.default_rng(2)
        ent = rng.normal(size=(3, 4))
        st_ = EmbeddingState(ModelKind.RESCAL, 4, ent, np.eye(4).reshape(1, 16))
        assert score("RESCAL", st_, 0, 0, 2) == pytest.approx(ent[0] @ ent[2], rel=1e-12)

    def test_rotate_zero_phase_is_negative_modulus_distance(self):
        rng = np.random.default_rng(3)
        ent = rng.normal(size=(2, 6))
        st_ = EmbeddingState(ModelKind.ROTATE, 6, ent, np.zeros((1, 3)))
        diff = (ent[0, :3] - ent[1, :3]) + 1j * (ent[0, 3:] - ent[1, 3:])
        assert score("RotatE", st_, 0, 0, 1) == pytest.approx(-np.abs(diff).sum(), rel=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_textbook_formula(self, kind):
        state = _state(kind, seed=4)
        for h, r, t in [(0, 0, 1), (5, 2, 3), (4, 1, 4)]:
            assert score(kind, state, h, r, t) == pytest.approx(_manual(kind, state, h, r, t), rel=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    def test_batched_tails_and_heads_equal_looped_scores(self, kind):
        state = _state(kind, seed=5)
        tails = score_batch_all_tails(kind, state, 2, 1)
        heads = score_batch_all_heads(kind, state, 1, 2)
        looped_t = [score(kind, state, 2, 1, e) for e in range(state.num_entities)]
        looped_h = [score(kind, state, e, 1, 2) for e in range(state.num_entities)]
        np.testing.assert_allclose(tails, looped_t, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(heads, looped_h, rtol=1e-10, atol=1e-12)

    def test_distmult_batch_is_matrix_product(self):
        state = _state(ModelKind.DISTMULT, seed=6)
        expected = (state.entity[0] * state.relation[1]) @ state.entity.T
        np.testing.assert_allclose(score_batch_all_tails("DistMult", state, 0, 1), expected, rtol=1e-12)

    def test_out_of_range_id(self):
        with pytest.raises(IndexError):
            score("DistMult", _state(ModelKind.DISTMULT), 0, 0, 99)

    @pytest.mark.parametrize("name", ["ConvE", "TuckER", "HolE"])
    def test_unsupported_models(self, name):
        with pytest.raises(UnsupportedModelError):
            ModelKind.parse(name)

    def test_parse_is_case_insensitive(self):
        assert ModelKind.parse("complex") is ModelKind.COMPLEX

    def test_relation_widths(self):
        assert relation_width("RESCAL", 5) == 25
        assert relation_width("RotatE", 6) == 3
        with pytest.raises(ValueError):
            relation_width("ComplEx", 5)


class TestScoreGradient:
    @pytest.mark.parametrize("kind", KINDS)
    def test_finite_differences(self, kind):
        rng = np.random.default_rng(7)
        state = _state(kind, seed=8)
        eps = 1e-5
        for _ in range(20):
            h, r, t = int(rng.integers(6)), int(rng.integers(3)), int(rng.integers(6))
            de, dr = score_grad(kind, state, h, r, t).to_dense(state)
            for table, dense in ((state.entity, de), (state.relation, dr)):
                for i in set((h, t)) if table is state.entity else {r}:
                    for j in range(table.shape[1]):
                        old = table[i, j]
                        table[i, j] = old + eps
                        plus = score(kind, state, h, r, t)
                        table[i, j] = old - eps
                        minus = score(kind, state, h, r, t)
                        table[i, j] = old
                        fd = (plus - minus) / (2 * eps)
                        assert abs(fd - dense[i, j]) / max(1.0, abs(fd)) < 1e-4

    def test_transe_subgradient(self):
        state = EmbeddingState(ModelKind.TRANSE, 3, np.array([[1.0, 0.0, -2.0], [0.0, 0.0, 0.0]]),
                               np.array([[0.0, 0.0, 1.0]]))
        de, _ = score_grad("TransE", state, 0, 0, 1, upstream=2.0).to_dense(state)
        np.testing.assert_array_equal(de[0], -np.sign([1.0, 0.0, -1.0]) * 2.0)

    @pytest.mark.parametrize("kind", KINDS)
    def test_zero_upstream(self, kind):
        g = score_grad(kind, _state(kind), 0, 1, 2, upstream=0.0)
        assert not np.any(g.entity_values) and not np.any(g.relation_values)


class TestGradAccumulator:
    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(0, 9), min_size=1, max_size=200), st.integers(0, 2 ** 31 - 1))
    def test_coalescing_sums_duplicate_rows(self, rows, seed):
        vals = np.random.default_rng(seed).normal(size=(len(rows), 3))
        acc = GradAccumulator(3, 2)
        acc.add_entity(rows, vals)
        g = acc.result()
        expected = np.zeros((10, 3))
        np.add.at(expected, rows, vals)
        np.testing.assert_array_equal(g.entity_rows, np.unique(rows))
        np.testing.assert_allclose(g.entity_values, expected[np.unique(rows)], rtol=1e-12, atol=1e-12)

    def test_large_batches_use_the_same_sums(self):
        rng = np.random.default_rng(9)
        rows = rng.integers(0, 50, size=20000)
        vals = rng.normal(size=(20000, 4))
        acc = GradAccumulator(4, 1)
        acc.add_entity(rows, vals)
        g = acc.result()
        expected = np.zeros((50, 4))
        np.add.at(expected, rows, vals)
        np.testing.assert_allclose(g.entity_values, expected[g.entity_rows], rtol=1e-10, atol=1e-10)

    def test_dense_part_is_added(self):
        acc = GradAccumulator(2, 2)
        acc.add_entity([1], np.ones((1, 2)))
        acc.add_entity_dense(np.full((3, 2), 0.5))
        g = acc.result()
        np.testing.assert_array_equal(g.entity_rows, [0, 1, 2])
        np.testing.assert_array_equal(g.entity_values, [[0.5, 0.5], [1.5, 1.5], [0.5, 0.5]])


class TestCheckpoint:
    @pytest.mark.parametrize("kind", KINDS)
    def test_round_trip(self, kind, tmp_path):
        state = _state(kind, seed=10)
        save_state(state, tmp_path / "s.bin")
        back = load_state(tmp_path / "s.bin")
        assert back.kind is kind and back.dim == state.dim
        np.testing.assert_array_equal(back.entity, state.entity)
        np.testing.assert_array_equal(back.relation, state.relation)

    def test_rejects_foreign_file(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"\0" * 64)
        with pytest.raises(ValueError):
            load_state(tmp_path / "x.bin")
