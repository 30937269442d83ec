import numpy as np
import pytest

from temprel.corpus import Document, Event
from temprel.embeddings import (HashedEmbeddings, NumericEmbeddings,
                                SidecarEmbeddings, hashed_vector,
                                read_sidecar, resolve_embeddings,
                                write_sidecar)
from temprel.errors import DataError


def tiny_doc():
    return Document(id="d", tokens=["storm", "hit", "."], pos=[0, 1, 2],
                    sentences=[(0, 3)], events=[Event("e1", 1)], relations=[])


def test_hashed_vectors_are_stable_units():
    v1 = hashed_vector("storm", 32)
    v2 = hashed_vector("storm", 32)
    assert np.array_equal(v1, v2)
    assert v1.shape == (32,)
    assert np.linalg.norm(v1) == pytest.approx(1.0)
    assert not np.array_equal(v1, hashed_vector("calm", 32))
    assert not np.array_equal(v1, hashed_vector("storm", 16)[:16])


def test_hashed_source_matches_per_token():
    doc = tiny_doc()
    mat = HashedEmbeddings(8).vectors_for(doc)
    assert mat.shape == (3, 8)
    for k, tok in enumerate(doc.tokens):
        assert np.array_equal(mat[k], hashed_vector(tok, 8))


def test_numeric_descriptor_thermometer():
    doc = Document(id="d", tokens=["iv3x7", "storm"], pos=[0, 1],
                   sentences=[(0, 2)], events=[Event("e1", 0)], relations=[])
    mat = NumericEmbeddings(40).vectors_for(doc)
    levels = (40 - 4) // 2
    want = np.zeros(40)
    want[:3] = 1.0                      # start 3 clears thresholds 0..2
    want[levels:levels + 7] = 1.0       # end 7 clears thresholds 0..6
    want[-4:] = (3 / 16, 7 / 16, 4 / 16, 1.0)
    assert np.array_equal(mat[0], want)
    # non-descriptor tokens take the hashed route unchanged
    assert np.array_equal(mat[1], hashed_vector("storm", 40))


def test_numeric_needs_room_for_thresholds():
    with pytest.raises(DataError, match="dimension >= 38"):
        NumericEmbeddings(37)
    assert NumericEmbeddings(38).dim == 38


@pytest.mark.parametrize("mode", ["binary", "text"])
def test_sidecar_round_trip(tmp_path, mode):
    rng = np.random.default_rng(0)
    table = {("d", k): rng.standard_normal(5).astype(np.float32).astype(np.float64)
             for k in range(3)}
    path = tmp_path / f"vecs.{mode}"
    write_sidecar(table, 5, path, mode=mode)
    src = read_sidecar(path)
    assert src.dim == 5
    mat = src.vectors_for(tiny_doc())
    want = np.stack([table[("d", k)] for k in range(3)])
    # storage is 32-bit; inputs already are, so equality is exact
    assert np.array_equal(mat, want)


def test_sidecar_missing_token():
    src = SidecarEmbeddings(4, {("d", 0): np.zeros(4)})
    with pytest.raises(DataError, match="token 1"):
        src.vectors_for(tiny_doc())


def test_sidecar_text_errors(tmp_path):
    bad = tmp_path / "vecs.txt"
    bad.write_text("emb-text 3 1\nd 0 1.0 2.0\n")
    with pytest.raises(DataError, match="expected 5 fields"):
        read_sidecar(bad)
    bad.write_text("emb-text 2 2\nd 0 1.0 2.0\n")
    with pytest.raises(DataError, match="promises 2 records"):
        read_sidecar(bad)
    bad.write_text("wordvec 2 1\n")
    with pytest.raises(DataError, match="not a sidecar"):
        read_sidecar(bad)


def test_binary_truncation(tmp_path):
    table = {("d", 0): np.ones(4, dtype=np.float32)}
    path = tmp_path / "vecs.bin"
    write_sidecar(table, 4, path, mode="binary")
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(DataError, match="truncated"):
        read_sidecar(path)


def test_resolve_embeddings(tmp_path):
    assert isinstance(resolve_embeddings("hashed", 6), HashedEmbeddings)
    assert isinstance(resolve_embeddings("numeric", 40), NumericEmbeddings)
    path = tmp_path / "vecs.bin"
    write_sidecar({("d", 0): np.zeros(6, dtype=np.float32)}, 6, path)
    assert isinstance(resolve_embeddings(str(path), 6), SidecarEmbeddings)
    with pytest.raises(DataError, match="conflicts"):
        resolve_embeddings(str(path), 12)
    with pytest.raises(DataError, match="unknown sidecar mode"):
        write_sidecar({}, 4, tmp_path / "x", mode="xml")
