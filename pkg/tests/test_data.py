from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgtuner.data import (FilterIndex, KnowledgeGraph, add_inverse_relations, from_triples, load_kg,
                          load_kg_dir, read_vocab, write_triples, write_vocab)
from kgtuner.errors import InvalidDatasetError, ParseError
from kgtuner.toy import bundled_toy_kg, complete_kg, toy_kg


def _write(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


class TestLoading:
    def test_three_line_file(self, tmp_path):
        train = _write(tmp_path / "train.txt", ["a\tr\tb", "b\tr\tc", "a\tr\tc"])
        kg = load_kg(train)
        assert kg.num_entities == 3
        assert kg.num_relations == 1
        assert len(kg.train) == 3
        assert len(kg.valid) == 0 and len(kg.test) == 0
        assert kg.entity_names == ("a", "b", "c")

    def test_ids_follow_first_appearance_across_splits(self, tmp_path):
        _write(tmp_path / "train.txt", ["x\tp\ty"])
        _write(tmp_path / "valid.txt", ["y\tq\tz"])
        _write(tmp_path / "test.txt", ["w\tp\tx"])
        kg = load_kg_dir(tmp_path)
        assert kg.entity_names == ("x", "y", "z", "w")
        assert kg.relation_names == ("p", "q")
        np.testing.assert_array_equal(kg.test, [[3, 0, 0]])

    def test_malformed_line_reports_location(self, tmp_path):
        train = _write(tmp_path / "train.txt", ["a\tr\tb", "a r b"])
        with pytest.raises(ParseError) as info:
            load_kg(train)
        assert info.value.line_number == 2

    def test_empty_train_is_rejected(self, tmp_path):
        train = _write(tmp_path / "train.txt", [])
        with pytest.raises(InvalidDatasetError):
            load_kg(train)

    def test_duplicates_are_dropped(self, tmp_path):
        train = _write(tmp_path / "train.txt", ["a\tr\tb", "a\tr\tb", "b\tr\ta"])
        assert len(load_kg(train).train) == 2

    def test_overlapping_splits_are_rejected(self):
        with pytest.raises(InvalidDatasetError):
            KnowledgeGraph(2, 1, np.array([[0, 0, 1]]), np.array([[0, 0, 1]]))

    def test_out_of_range_ids_are_rejected(self):
        with pytest.raises(InvalidDatasetError):
            KnowledgeGraph(2, 1, np.array([[0, 0, 2]]))

    def test_round_trip_through_files(self, tmp_path):
        kg = toy_kg()
        write_triples(kg, tmp_path)
        again = load_kg_dir(tmp_path)
        assert again.stats() == kg.stats()

    def test_vocab_files(self, tmp_path):
        kg = bundled_toy_kg()
        write_vocab(kg, tmp_path)
        assert tuple(read_vocab(tmp_path / "entities.dict")) == kg.entity_names
        assert tuple(read_vocab(tmp_path / "relations.dict")) == kg.relation_names

    def test_bundled_toy_is_small(self):
        kg = bundled_toy_kg()
        assert kg.num_entities <= 100
        assert len(kg.valid) > 0 and len(kg.test) > 0

    def test_triples_are_read_only(self):
        with pytest.raises(ValueError):
            toy_kg().train[0, 0] = 5


triples_strategy = st.lists(
    st.tuples(st.integers(0, 7), st.integers(0, 2), st.integers(0, 7)), min_size=1, max_size=60)


class TestFilterIndex:
    @settings(max_examples=60, deadline=None)
    @given(triples_strategy)
    def test_matches_python_sets(self, triples):
        idx = FilterIndex(np.array(triples), 8, 3)
        tails, heads = {}, {}
        for h, r, t in triples:
            tails.setdefault((h, r), set()).add(t)
            heads.setdefault((r, t), set()).add(h)
        for h in range(8):
            for r in range(3):
                assert set(idx.tails(h, r).tolist()) == tails.get((h, r), set())
        for r in range(3):
            for t in range(8):
                assert set(idx.heads(r, t).tolist()) == heads.get((r, t), set())
        probe = np.array([(h, r, t) for h in range(8) for r in range(3) for t in range(8)])
        expected = [tuple(p) in set(triples) for p in probe.tolist()]
        np.testing.assert_array_equal(idx.contains(*probe.T), expected)

    def test_batch_lookup_rows(self):
        idx = FilterIndex(np.array([[0, 0, 1], [0, 0, 2], [1, 0, 2]]), 3, 1)
        rows, ents = idx.tails_batch([0, 1, 2], [0, 0, 0])
        assert sorted(zip(rows.tolist(), ents.tolist())) == [(0, 1), (0, 2), (1, 2)]

    def test_filter_index_spans_all_splits(self):
        kg = from_triples([(0, 0, 1)], valid=[(0, 0, 2)], test=[(1, 0, 2)])
        assert set(kg.filter_index.tails(0, 0).tolist()) == {1, 2}
        assert set(kg.train_index.tails(0, 0).tolist()) == {1}


class TestInverseRelations:
    def test_appends_reversed_triples(self):
        kg = complete_kg(4)
        inv = add_inverse_relations(kg)
        assert inv.num_relations == 2
        assert len(inv.train) == 2 * len(kg.train)
        np.testing.assert_array_equal(inv.train[len(kg.train):], kg.train[:, [2, 1, 0]] + [0, 1, 0])
        np.testing.assert_array_equal(inv.valid, kg.valid)

    def test_not_idempotent(self):
        kg = toy_kg()
        twice = add_inverse_relations(add_inverse_relations(kg))
        assert twice.num_relations == 4 * kg.num_relations
