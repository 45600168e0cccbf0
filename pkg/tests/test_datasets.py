import json

import numpy as np
import pytest

from dafno.container import (
    MagicMismatchError,
    TruncatedFileError,
    UnknownDTypeError,
    decode_json,
    encode_json,
    from_bytes,
    read_container,
    to_bytes,
    write_container,
)
from dafno.datasets import (
    FieldSet,
    convert_raw,
    gen_poisson_dataset,
    poisson_grid,
    solve_poisson,
    split,
    split_sizes,
)
from dafno.geometry import BoxGrid, Disk


# ---------------------------------------------------------------- container


def test_container_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "a": rng.standard_normal((3, 4)),
        "b": rng.standard_normal(5).astype(np.float32),
        "mask": (rng.random((2, 2)) > 0.5).astype(np.uint8),
        "z": rng.standard_normal(3) + 1j * rng.standard_normal(3),
        "scalar": np.array(2.5),
        "meta": encode_json({"k": [1, 2]}),
    }
    write_container(tmp_path / "x.dafn", arrays)
    back = read_container(tmp_path / "x.dafn")
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype and back[k].shape == arrays[k].shape
        assert back[k].tobytes() == arrays[k].tobytes()
    assert decode_json(back["meta"]) == {"k": [1, 2]}


def test_container_errors():
    data = to_bytes({"a": np.arange(4.0)})
    with pytest.raises(MagicMismatchError):
        from_bytes(b"XXXX" + data[4:])
    with pytest.raises(TruncatedFileError):
        from_bytes(data[:-3])
    bad = bytearray(data)
    bad[4 + 8 + 2 + 1] = 9  # dtype code of the first entry
    with pytest.raises(UnknownDTypeError):
        from_bytes(bytes(bad))
    with pytest.raises(UnknownDTypeError):
        to_bytes({"i": np.arange(3, dtype=np.int32)})


def test_empty_container():
    assert from_bytes(to_bytes({})) == {}


# ------------------------------------------------------------------ Poisson


def test_zero_source_zero_solution():
    grid = BoxGrid(1.0, 32)
    u, chi = solve_poisson(Disk((0.5, 0.5), 0.4), grid, np.zeros(grid.shape))
    assert not u.any() and chi.sum() > 0


def test_disk_center_value():
    grid = BoxGrid(1.0, 64)
    R = 0.4
    u, chi = solve_poisson(Disk((0.5, 0.5), R), grid, np.ones(grid.shape))
    X, Y = grid.mesh()
    r2 = (X - 0.5) ** 2 + (Y - 0.5) ** 2
    i = np.unravel_index(np.argmin(r2), r2.shape)
    exact = (R**2 - r2[i]) / 4
    assert abs(u[i] - exact) / exact < 0.02


def test_second_order_convergence():
    R = 0.4
    a = np.pi / (2 * R)
    errs = []
    for n in (16, 32, 64):
        grid = BoxGrid(1.0, n)
        X, Y = grid.mesh()
        r = np.hypot(X - 0.5, Y - 0.5)
        rs = np.maximum(r, 1e-300)
        g = a * a * np.cos(a * r) + np.where(r > 0, a * np.sin(a * r) / rs, a * a)
        u, chi = solve_poisson(Disk((0.5, 0.5), R), grid, g)
        errs.append(np.max(np.abs(u - np.cos(a * r)) * chi))
    ratios = [errs[k] / errs[k + 1] for k in range(2)]
    assert all(3.0 < q < 5.0 for q in ratios), ratios


def test_poisson_dataset_shapes_and_determinism(tmp_path):
    d1 = gen_poisson_dataset(3, 16, seed=5)
    d2 = gen_poisson_dataset(3, 16, seed=5)
    assert d1.g.shape == (3, 16, 16, 1) and d1.u.shape == (3, 16, 16, 1)
    d1.save(tmp_path / "a.dafn")
    d2.save(tmp_path / "b.dafn")
    assert (tmp_path / "a.dafn").read_bytes() == (tmp_path / "b.dafn").read_bytes()
    back = FieldSet.load(tmp_path / "a.dafn")
    np.testing.assert_array_equal(back.u, d1.u)
    assert back.meta == d1.meta
    assert np.all(d1.u[d1.chi == 0] == 0)
    # sample i depends only on (seed, i)
    np.testing.assert_array_equal(gen_poisson_dataset(2, 16, seed=5).u, d1.u[:2])


def test_poisson_dataset_regenerates_at_finer_grid():
    coarse = gen_poisson_dataset(1, 16, seed=1)
    fine = gen_poisson_dataset(1, 32, seed=1)
    assert coarse.meta["samples"][0]["shape"] == fine.meta["samples"][0]["shape"]
    pooled = fine.u[0, ..., 0].reshape(16, 2, 16, 2).mean((1, 3))
    inside = coarse.chi[0] > 0
    rel = np.linalg.norm((pooled - coarse.u[0, ..., 0])[inside]) / np.linalg.norm(coarse.u[0, ..., 0][inside])
    assert rel < 0.25


# ------------------------------------------------------------------ splits


def test_split_sizes_and_rules():
    assert split_sizes(14, (0.5, 0.25, 0.25)) == [7, 3, 4]
    tr, va, te = split(10, (1.0, 0.0, 0.0), 0)
    assert len(tr) == 10 and len(va) == 0 and len(te) == 0
    a = split(20, (0.6, 0.2, 0.2), 3)
    b = split(20, (0.6, 0.2, 0.2), 3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sorted(np.concatenate(a).tolist()) == list(range(20))
    with pytest.raises(ValueError):
        split_sizes(2, (0.3, 0.3, 0.4))
    with pytest.raises(ValueError):
        split_sizes(10, (0.5, 0.6))


def test_split_fieldset():
    d = gen_poisson_dataset(4, 16, seed=0)
    parts = split(d, (0.5, 0.25, 0.25), 1)
    assert [len(p) for p in parts] == [2, 1, 1]
    idx = sorted(s["index"] for p in parts for s in p.meta["samples"])
    assert idx == [0, 1, 2, 3]


# ---------------------------------------------------------------- converter


def test_convert_raw(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    a = np.arange(6.0).reshape(2, 3)
    a.astype("<f8").tofile(raw / "a.bin")
    np.save(raw / "b.npy", np.ones(4, np.float32))
    manifest = {
        "arrays": {
            "a": {"file": "a.bin", "dtype": "real64", "shape": [2, 3]},
            "b": {"file": "b.npy"},
        },
        "meta": {"origin": "test"},
    }
    (raw / "manifest.json").write_text(json.dumps(manifest))
    convert_raw(raw, tmp_path / "out.dafn")
    back = read_container(tmp_path / "out.dafn")
    np.testing.assert_array_equal(back["a"], a)
    assert back["b"].dtype == np.float32
    assert decode_json(back["meta"]) == {"origin": "test"}
