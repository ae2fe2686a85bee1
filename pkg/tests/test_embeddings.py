"""Embedding store format, fetch semantics, and synthetic generators."""

from __future__ import annotations

import numpy as np
import pytest

from taxoprobe.embeddings import (
    EmbeddingError,
    EmbeddingStore,
    fetch,
    generate_planted,
    generate_random,
    matrix_for_keys,
    read_store,
    verify_store,
    write_store,
)
from taxoprobe.synthetic import synthetic_taxonomy


def small_store():
    values = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 12)
    return EmbeddingStore(keys=["a#0", "b#0"], layer_count=3, dim_per_layer=4, values=values)


# ---------------------------------------------------------------------------
# binary format


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    store = EmbeddingStore(
        keys=[f"s{i:02d}#{j}" for i in range(7) for j in range(2)],
        layer_count=2,
        dim_per_layer=5,
        values=rng.standard_normal((14, 10)).astype(np.float32),
    )
    path = str(tmp_path / "store.emb")
    write_store(store, path)
    loaded = read_store(path)
    assert loaded.keys == store.keys
    assert loaded.layer_count == 2 and loaded.dim_per_layer == 5
    assert loaded.values.dtype == np.float32
    assert np.array_equal(loaded.values, store.values)
    # writing the loaded store again produces identical bytes
    path2 = str(tmp_path / "store2.emb")
    write_store(loaded, path2)
    assert open(path, "rb").read() == open(path2, "rb").read()


def test_file_size_arithmetic(tmp_path):
    store = small_store()
    path = str(tmp_path / "s.emb")
    write_store(store, path)
    index_bytes = sum(2 + len(k.encode()) for k in store.keys)
    expected = 4 + 4 + 4 + 4 + index_bytes + 2 * 3 * 4 * 4
    assert len(open(path, "rb").read()) == expected


def test_corrupt_magic_rejected(tmp_path):
    path = str(tmp_path / "s.emb")
    write_store(small_store(), path)
    blob = bytearray(open(path, "rb").read())
    blob[:4] = b"NOPE"
    open(path, "wb").write(bytes(blob))
    with pytest.raises(EmbeddingError) as err:
        read_store(path)
    assert err.value.code == "bad-magic"


def test_truncated_file_rejected(tmp_path):
    path = str(tmp_path / "s.emb")
    write_store(small_store(), path)
    blob = open(path, "rb").read()
    for cut in (3, 10, len(blob) - 5):
        open(path, "wb").write(blob[:cut])
        with pytest.raises(EmbeddingError) as err:
            read_store(path)
        assert err.value.code == "truncated"


def test_non_finite_values_rejected(tmp_path):
    store = small_store()
    store.values[1, 3] = np.nan
    with pytest.raises(EmbeddingError) as err:
        write_store(store, str(tmp_path / "s.emb"))
    assert err.value.code == "non-finite"
    # and on read, when the bytes are patched behind the writer's back
    good = small_store()
    path = str(tmp_path / "ok.emb")
    write_store(good, path)
    blob = bytearray(open(path, "rb").read())
    blob[-4:] = np.array([np.inf], dtype="<f4").tobytes()
    open(path, "wb").write(bytes(blob))
    with pytest.raises(EmbeddingError) as err:
        read_store(path)
    assert err.value.code == "non-finite"


def test_duplicate_keys_rejected(tmp_path):
    values = np.zeros((2, 4), dtype=np.float32)
    store = EmbeddingStore(keys=["a#0", "a#0"], layer_count=1, dim_per_layer=4, values=values)
    with pytest.raises(EmbeddingError) as err:
        write_store(store, str(tmp_path / "s.emb"))
    assert err.value.code == "duplicate-key"


def test_verify_store_clean_and_dirty(tmp_path):
    path = str(tmp_path / "s.emb")
    write_store(small_store(), path)
    assert verify_store(path) == []
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[: len(blob) - 2])
    warnings = verify_store(path)
    assert warnings and "truncated" in warnings[0]


def test_failed_write_leaves_no_file(tmp_path):
    store = small_store()
    store.values[0, 0] = np.inf
    path = tmp_path / "dir" / "s.emb"
    with pytest.raises(EmbeddingError):
        write_store(store, str(path))
    assert not path.exists()


# ---------------------------------------------------------------------------
# fetch


def test_fetch_single_layer_slices():
    store = EmbeddingStore(
        keys=["k#0"],
        layer_count=3,
        dim_per_layer=2,
        values=np.array([[1, 2, 3, 4, 5, 6]], dtype=np.float32),
    )
    assert fetch(store, "k#0", layer=1).tolist() == [3.0, 4.0]
    assert fetch(store, "k#0").tolist() == [1, 2, 3, 4, 5, 6]


def test_fetch_all_layers_equals_slice_concat():
    rng = np.random.default_rng(5)
    store = EmbeddingStore(
        keys=["a#0", "b#1"],
        layer_count=4,
        dim_per_layer=3,
        values=rng.standard_normal((2, 12)).astype(np.float32),
    )
    for key in store.keys:
        parts = [fetch(store, key, layer=k) for k in range(4)]
        assert np.array_equal(fetch(store, key), np.concatenate(parts))


def test_fetch_errors():
    store = small_store()
    with pytest.raises(EmbeddingError) as err:
        fetch(store, "ghost#0")
    assert err.value.code == "missing-key"
    with pytest.raises(EmbeddingError) as err:
        fetch(store, "a#0", layer=3)
    assert err.value.code == "bad-layer"


def test_matrix_for_keys_matches_fetch():
    store = small_store()
    mat = matrix_for_keys(store, ["b#0", "a#0"], layer=2)
    assert mat.dtype == np.float64
    assert np.array_equal(mat[0], fetch(store, "b#0", layer=2).astype(np.float64))
    assert np.array_equal(mat[1], fetch(store, "a#0", layer=2).astype(np.float64))


# ---------------------------------------------------------------------------
# random generator


def test_random_store_statistics_and_determinism():
    keys = [f"s{i:03d}#0" for i in range(500)]
    store = generate_random(keys, dim=20, seed=9)
    assert store.layer_count == 1 and store.dim_per_layer == 20
    assert abs(float(store.values.mean())) < 0.05
    assert abs(float(store.values.std()) - 1.0) < 0.05
    again = generate_random(keys, dim=20, seed=9)
    assert np.array_equal(store.values, again.values)
    other = generate_random(keys, dim=20, seed=10)
    assert not np.array_equal(store.values, other.values)


# ---------------------------------------------------------------------------
# planted generator


def test_planted_requires_enough_dimensions():
    g = synthetic_taxonomy(30, 2)
    with pytest.raises(EmbeddingError) as err:
        generate_planted(g, dim=10, noise=0.0, layers=1, seed=1)
    assert err.value.code == "dim-too-small"


def test_planted_is_deterministic_and_keyed_by_occurrence():
    g = synthetic_taxonomy(25, 2)
    s1 = generate_planted(g, dim=32, noise=0.1, layers=2, seed=4, occurrences=3)
    s2 = generate_planted(g, dim=32, noise=0.1, layers=2, seed=4, occurrences=3)
    assert s1.keys == s2.keys
    assert np.array_equal(s1.values, s2.values)
    assert len(s1.keys) == 25 * 3
    assert s1.keys[:3] == ["s000#0", "s000#1", "s000#2"]
    assert s1.layer_count == 2 and s1.dim_per_layer == 32


def test_planted_sigma_zero_separable_by_logistic_oracle():
    # with no noise, ancestor membership must be linearly decodable from
    # recovered indicator products, including on synsets never seen in training
    from sklearn.linear_model import LogisticRegression

    g = synthetic_taxonomy(50, 6)
    ids = g.nodes()
    store = generate_planted(g, dim=64, noise=0.0, layers=1, seed=6, occurrences=1)

    # recover the indicator matrix through the pseudo-inverse of the projection
    emb = np.stack([fetch(store, f"{sid}#0").astype(np.float64) for sid in ids])
    indicators = np.zeros((len(ids), len(ids)))
    for i, sid in enumerate(ids):
        for j, other in enumerate(ids):
            if other == sid or g.is_ancestor(other, sid):
                indicators[i, j] = 1.0
    projection = np.linalg.lstsq(indicators, emb, rcond=None)[0]
    recovered = emb @ np.linalg.pinv(projection)
    assert np.allclose(recovered, indicators, atol=1e-6)

    held_out = set(ids[::5])
    train_rows, train_labels, test_rows, test_labels = [], [], [], []
    for i, x in enumerate(ids):
        for j, y in enumerate(ids):
            if x == y:
                continue
            feats = np.array([recovered[i] @ recovered[j], recovered[j] @ recovered[j]])
            label = int(g.is_ancestor(y, x))
            if x in held_out or y in held_out:
                test_rows.append(feats)
                test_labels.append(label)
            else:
                train_rows.append(feats)
                train_labels.append(label)
    clf = LogisticRegression(max_iter=2000, C=1e4)
    clf.fit(np.array(train_rows), np.array(train_labels))
    accuracy = clf.score(np.array(test_rows), np.array(test_labels))
    assert accuracy == 1.0


def test_planted_noise_profile_grows_per_layer():
    g = synthetic_taxonomy(30, 2)
    store = generate_planted(g, dim=32, noise=0.2, layers=3, seed=8, occurrences=4, noise_growth=5.0)
    clean = generate_planted(g, dim=32, noise=0.0, layers=1, seed=8, occurrences=1)
    base = {sid: fetch(clean, f"{sid}#0").astype(np.float64) for sid in g.nodes()}
    spreads = []
    for k in range(3):
        errs = []
        for sid in g.nodes():
            for occ in range(4):
                vec = fetch(store, f"{sid}#{occ}", layer=k).astype(np.float64)
                errs.append(vec - base[sid])
        spreads.append(float(np.std(np.stack(errs))))
    assert spreads[0] < spreads[1] < spreads[2]
    assert spreads[0] == pytest.approx(0.2, rel=0.15)
    assert spreads[1] == pytest.approx(1.0, rel=0.15)
    assert spreads[2] == pytest.approx(5.0, rel=0.15)


def test_planted_huge_sigma_looks_random():
    g = synthetic_taxonomy(30, 2)
    store = generate_planted(g, dim=40, noise=1e4, layers=1, seed=3, occurrences=2)
    flat = store.values.astype(np.float64) / 1e4
    assert abs(float(flat.mean())) < 0.05
    assert abs(float(flat.std()) - 1.0) < 0.05
