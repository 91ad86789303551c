import math

import numpy as np
import pytest

from arokit.embedding_store import (
    EmbeddingSet,
    Kind,
    cosine_matrix,
    load,
    manifest_path,
    normalize,
    read_neighbor_table,
    save,
    top_k_neighbors,
    write_neighbor_table,
)
from arokit.errors import ConfigError, DataFormatError, NumericalError


def random_set(n=10, dim=8, seed=0, kind=Kind.IMAGE):
    rng = np.random.default_rng(seed)
    return EmbeddingSet(
        ids=[f"item-{i:03d}" for i in range(n)],
        kind=kind,
        vectors=rng.standard_normal((n, dim)).astype(np.float32),
    )


class TestEmbeddingSet:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataFormatError, match="duplicate"):
            EmbeddingSet(ids=["a", "a"], kind=Kind.TEXT, vectors=np.zeros((2, 3)))

    def test_id_count_must_match_rows(self):
        with pytest.raises(DataFormatError):
            EmbeddingSet(ids=["a"], kind=Kind.TEXT, vectors=np.zeros((2, 3)))

    def test_vectors_must_be_2d(self):
        with pytest.raises(DataFormatError):
            EmbeddingSet(ids=["a"], kind=Kind.TEXT, vectors=np.zeros(3))

    def test_row_lookup(self):
        emb = random_set(n=4)
        np.testing.assert_array_equal(emb.row("item-002"), emb.vectors[2])
        with pytest.raises(KeyError):
            emb.row("missing")

    def test_kind_labels(self):
        assert Kind.IMAGE.label == "image"
        assert Kind.from_label("text") is Kind.TEXT
        with pytest.raises(DataFormatError):
            Kind.from_label("audio")


class TestFileFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        emb = random_set(n=10, dim=8, seed=3)
        path = tmp_path / "a.aroe"
        save(emb, path)
        loaded = load(path)
        assert loaded.ids == emb.ids
        assert loaded.kind is emb.kind
        assert loaded.vectors.dtype == np.float32
        np.testing.assert_array_equal(loaded.vectors, emb.vectors)

    def test_resave_is_byte_identical(self, tmp_path):
        emb = random_set(n=10, dim=8, seed=3)
        p1, p2 = tmp_path / "a.aroe", tmp_path / "b.aroe"
        save(emb, p1)
        save(load(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert manifest_path(p1).read_text() == manifest_path(p2).read_text()

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "a.aroe"
        save(random_set(), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(raw)
        with pytest.raises(DataFormatError, match="magic"):
            load(path)

    def test_wrong_version_rejected(self, tmp_path):
        path = tmp_path / "a.aroe"
        save(random_set(), path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(raw)
        with pytest.raises(DataFormatError, match="version"):
            load(path)

    def test_unknown_kind_code_rejected(self, tmp_path):
        path = tmp_path / "a.aroe"
        save(random_set(), path)
        raw = bytearray(path.read_bytes())
        raw[8] = 7
        path.write_bytes(raw)
        with pytest.raises(DataFormatError, match="kind"):
            load(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "a.aroe"
        save(random_set(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(DataFormatError, match="payload"):
            load(path)

    def test_missing_manifest_rejected(self, tmp_path):
        path = tmp_path / "a.aroe"
        save(random_set(), path)
        manifest_path(path).unlink()
        with pytest.raises(DataFormatError, match="manifest"):
            load(path)

    def test_manifest_row_count_mismatch_rejected(self, tmp_path):
        path = tmp_path / "a.aroe"
        save(random_set(n=3), path)
        lines = manifest_path(path).read_text().splitlines()
        manifest_path(path).write_text("\n".join(lines[:2]) + "\n")
        with pytest.raises(DataFormatError, match="manifest rows"):
            load(path)

    def test_manifest_out_of_order_rejected(self, tmp_path):
        path = tmp_path / "a.aroe"
        save(random_set(n=3), path)
        lines = manifest_path(path).read_text().splitlines()
        manifest_path(path).write_text("\n".join([lines[1], lines[0], lines[2]]) + "\n")
        with pytest.raises(DataFormatError, match="out of order"):
            load(path)

    def test_manifest_kind_contradiction_rejected(self, tmp_path):
        path = tmp_path / "a.aroe"
        save(random_set(n=2, kind=Kind.IMAGE), path)
        text = manifest_path(path).read_text().replace('"image"', '"text"')
        manifest_path(path).write_text(text)
        with pytest.raises(DataFormatError, match="contradicts"):
            load(path)


class TestNormalizeAndCosine:
    def test_normalize_gives_unit_rows(self):
        unit = normalize(random_set(n=20, dim=16, seed=1))
        norms = np.linalg.norm(unit.vectors.astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_zero_norm_row_reported_with_id(self):
        emb = EmbeddingSet(
            ids=["ok", "degenerate"],
            kind=Kind.TEXT,
            vectors=np.array([[1.0, 0.0], [0.0, 0.0]], dtype=np.float32),
        )
        with pytest.raises(NumericalError, match="degenerate"):
            normalize(emb)

    def test_identical_unit_vectors_give_one(self):
        emb = EmbeddingSet(ids=["a"], kind=Kind.IMAGE, vectors=np.array([[0.6, 0.8]]))
        sim = cosine_matrix(emb, emb)
        np.testing.assert_allclose(sim.values, [[1.0]], atol=1e-12)

    def test_orthogonal_unit_vectors_give_zero(self):
        a = EmbeddingSet(ids=["a"], kind=Kind.IMAGE, vectors=np.array([[1.0, 0.0]]))
        b = EmbeddingSet(ids=["b"], kind=Kind.TEXT, vectors=np.array([[0.0, 1.0]]))
        np.testing.assert_allclose(cosine_matrix(a, b).values, [[0.0]], atol=1e-12)

    def test_matches_triple_loop_oracle(self):
        a = random_set(n=5, dim=3, seed=10, kind=Kind.IMAGE)
        b = random_set(n=4, dim=3, seed=11, kind=Kind.TEXT)
        got = cosine_matrix(a, b).values
        for i in range(5):
            for j in range(4):
                u = a.vectors[i].astype(np.float64)
                v = b.vectors[j].astype(np.float64)
                num = sum(float(x) * float(y) for x, y in zip(u, v))
                den = math.sqrt(sum(float(x) ** 2 for x in u)) * math.sqrt(
                    sum(float(y) ** 2 for y in v)
                )
                assert abs(got[i, j] - num / den) < 1e-12

    def test_self_similarity_has_unit_diagonal(self):
        emb = random_set(n=30, dim=12, seed=4)
        sim = cosine_matrix(emb, emb)
        np.testing.assert_allclose(np.diag(sim.values), 1.0, atol=1e-6)

    def test_dim_mismatch_rejected(self):
        a = random_set(n=2, dim=3)
        b = random_set(n=2, dim=4, kind=Kind.TEXT)
        with pytest.raises(DataFormatError, match="mismatch"):
            cosine_matrix(a, b)

    def test_accumulation_matches_compensated_sum(self):
        # Stored in 32-bit, accumulated in 64-bit: the dot product of a
        # d=4096 pair must agree with math.fsum to 1e-10.
        rng = np.random.default_rng(5)
        a = rng.standard_normal(4096).astype(np.float32)
        b = rng.standard_normal(4096).astype(np.float32)
        emb_a = EmbeddingSet(ids=["a"], kind=Kind.IMAGE, vectors=a[None, :])
        emb_b = EmbeddingSet(ids=["b"], kind=Kind.TEXT, vectors=b[None, :])
        got = cosine_matrix(emb_a, emb_b).values[0, 0]
        a64 = [float(x) for x in a]
        b64 = [float(x) for x in b]
        dot = math.fsum(x * y for x, y in zip(a64, b64))
        na = math.sqrt(math.fsum(x * x for x in a64))
        nb = math.sqrt(math.fsum(y * y for y in b64))
        assert abs(got - dot / (na * nb)) < 1e-10


class TestNeighbors:
    def hand_fixture(self):
        return EmbeddingSet(
            ids=["e1", "e2", "e3"],
            kind=Kind.IMAGE,
            vectors=np.array([[1.0, 0.0], [0.8, 0.6], [0.0, 1.0]], dtype=np.float32),
        )

    def test_hand_cosines(self):
        table = top_k_neighbors(self.hand_fixture(), k=1)
        assert table.neighbors[0][0][0] == "e2"  # cos 0.8 beats 0.0
        assert table.neighbors[1][0][0] == "e1"  # cos 0.8 beats 0.6
        assert table.neighbors[2][0][0] == "e2"  # cos 0.6 beats 0.0

    def test_k_equal_n_minus_one_returns_all_sorted(self):
        table = top_k_neighbors(self.hand_fixture(), k=2)
        assert [nid for nid, _ in table.neighbors[0]] == ["e2", "e3"]
        sims = [s for _, s in table.neighbors[0]]
        assert sims == sorted(sims, reverse=True)

    def test_k_larger_than_n_is_capped(self):
        table = top_k_neighbors(self.hand_fixture(), k=10)
        assert all(len(nbrs) == 2 for nbrs in table.neighbors)

    def test_k_below_one_rejected(self):
        with pytest.raises(ConfigError):
            top_k_neighbors(self.hand_fixture(), k=0)

    def test_single_item_rejected(self):
        emb = EmbeddingSet(ids=["a"], kind=Kind.IMAGE, vectors=np.ones((1, 2)))
        with pytest.raises(DataFormatError):
            top_k_neighbors(emb, k=1)

    def test_ties_break_by_ascending_id(self):
        emb = EmbeddingSet(
            ids=["idC", "idA", "idB"],
            kind=Kind.IMAGE,
            vectors=np.ones((3, 2), dtype=np.float32),
        )
        table = top_k_neighbors(emb, k=2)
        assert [nid for nid, _ in table.neighbors[0]] == ["idA", "idB"]
        assert [nid for nid, _ in table.neighbors[1]] == ["idB", "idC"]

    def test_row_order_invariance(self):
        base = random_set(n=12, dim=5, seed=8)
        shuffled = EmbeddingSet(
            ids=list(reversed(base.ids)),
            kind=base.kind,
            vectors=base.vectors[::-1].copy(),
        )
        t1 = top_k_neighbors(base, k=3)
        t2 = top_k_neighbors(shuffled, k=3)
        by_id_1 = dict(zip(t1.ids, t1.neighbors))
        by_id_2 = dict(zip(t2.ids, t2.neighbors))
        for item_id in base.ids:
            ids1 = [nid for nid, _ in by_id_1[item_id]]
            ids2 = [nid for nid, _ in by_id_2[item_id]]
            assert ids1 == ids2

    def test_self_never_appears(self):
        table = top_k_neighbors(random_set(n=6, dim=4, seed=2), k=5)
        for item_id, nbrs in zip(table.ids, table.neighbors):
            assert item_id not in [nid for nid, _ in nbrs]

    def test_matches_full_sort_oracle(self):
        emb = random_set(n=100, dim=6, seed=13)
        sims = cosine_matrix(emb, emb).values
        for k in (1, 3, 9):
            table = top_k_neighbors(emb, k)
            for i in range(len(emb)):
                ranked = sorted(
                    (j for j in range(len(emb)) if j != i),
                    key=lambda j: (-sims[i, j], emb.ids[j]),
                )[:k]
                expect = [emb.ids[j] for j in ranked]
                assert [nid for nid, _ in table.neighbors[i]] == expect


class TestNeighborTableIO:
    def test_round_trip(self, tmp_path):
        table = top_k_neighbors(random_set(n=5, dim=3, seed=6), k=2)
        path = tmp_path / "nbrs.jsonl"
        write_neighbor_table(table, path, provenance={"seed": 6})
        loaded = read_neighbor_table(path)
        assert loaded.ids == table.ids
        assert loaded.k == table.k
        for got, want in zip(loaded.neighbors, table.neighbors):
            assert [n for n, _ in got] == [n for n, _ in want]
            np.testing.assert_allclose(
                [s for _, s in got], [s for _, s in want], atol=1e-12
            )

    def test_missing_k_header_rejected(self, tmp_path):
        path = tmp_path / "nbrs.jsonl"
        path.write_text('{"id": "a", "neighbors": []}\n')
        with pytest.raises(DataFormatError, match="missing k"):
            read_neighbor_table(path)
