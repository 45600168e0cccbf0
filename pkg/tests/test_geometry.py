import math

import numpy as np
import pytest

from dafno.geometry import (
    BoxGrid,
    CrackedPlate,
    DegenerateShapeError,
    Disk,
    FullBox,
    VoidCell,
    airfoil_map_forward,
    airfoil_map_inverse,
    distance_field,
    evolve_chi,
    rasterize,
    sample_log_radius,
    sample_void_shape,
    shape_from_dict,
    shape_to_dict,
    smooth_chi,
    void_variance,
)


def test_full_box_all_ones():
    assert rasterize(FullBox(), BoxGrid(1.0, 8)).all()


def test_disk_area_fraction():
    grid = BoxGrid(1.0, 64)
    chi = rasterize(Disk((0.5, 0.5), 0.25), grid)
    rng = np.random.default_rng(0)
    pts = rng.random((10**6, 2))
    mc = np.mean((pts[:, 0] - 0.5) ** 2 + (pts[:, 1] - 0.5) ** 2 <= 0.0625)
    assert abs(chi.mean() - mc) < 2 / 64
    assert abs(mc - math.pi * 0.0625) < 3e-3


def test_cracked_plate_band_count():
    grid = BoxGrid(1.0, 32)
    h = grid.spacing[0]
    crack = ((0.0, 0.5), (0.4, 0.5))
    chi = rasterize(CrackedPlate(0.0, 0.0, 1.0, 1.0, (crack,)), grid)
    X, Y = grid.mesh()
    band = 0
    for x, y in zip(X.ravel(), Y.ravel()):
        t = min(max(x / 0.4, 0.0), 1.0)
        if math.hypot(x - 0.4 * t, y - 0.5) <= h:
            band += 1
    assert chi.sum() == grid.shape[0] * grid.shape[1] - band


def test_degenerate_and_out_of_box():
    with pytest.raises(DegenerateShapeError):
        rasterize(Disk((0.5, 0.5), 0.0), BoxGrid(1.0, 8))
    with pytest.raises(ValueError):
        rasterize(Disk((0.9, 0.5), 0.3), BoxGrid(1.0, 8))


def test_distance_half_plane():
    grid = BoxGrid(1.0, 16)
    k = 6
    chi = np.zeros((16, 16))
    chi[k:] = 1
    d = distance_field(chi, grid)
    i = np.arange(16)
    expected = np.where(i >= k, i - k + 1, k - i) * grid.spacing[0]
    np.testing.assert_allclose(d, np.broadcast_to(expected[:, None], d.shape), atol=1e-15)


def test_distance_point_source():
    grid = BoxGrid(1.0, 9)
    chi = np.ones((9, 9))
    chi[4, 3] = 0
    d = distance_field(chi, grid)
    X, Y = grid.mesh()
    x0, y0 = X[4, 3], Y[4, 3]
    ref = np.hypot(X - x0, Y - y0)
    mask = chi > 0
    np.testing.assert_allclose(d[mask], ref[mask], atol=1e-14)


def test_distance_matches_bruteforce():
    grid = BoxGrid(1.0, 16)
    chi = (np.random.default_rng(1).random((16, 16)) > 0.6).astype(float)
    d = distance_field(chi, grid)
    X, Y = grid.mesh()
    for i in range(16):
        for j in range(16):
            other = chi != chi[i, j]
            ref = np.min(np.hypot(X[other] - X[i, j], Y[other] - Y[i, j]))
            assert d[i, j] == ref


def test_distance_needs_two_phases():
    with pytest.raises(ValueError):
        distance_field(np.ones((4, 4)), BoxGrid(1.0, 4))


def test_smoothing_values():
    assert smooth_chi(1.0, 0.0, 10.0) == 0.5
    assert smooth_chi(0.0, 0.0, 10.0) == 0.5
    assert smooth_chi(1.0, 0.2, 10.0) == pytest.approx(0.5 * math.tanh(2) + 0.5)
    assert abs(smooth_chi(1.0, 0.2, 10.0) - 0.982014) < 1e-6
    assert smooth_chi(0.0, 1e3, 10.0) == pytest.approx(0.0, abs=1e-300)
    with pytest.raises(ValueError):
        smooth_chi(1.0, 0.1, 0.0)


def test_void_radius_bounds():
    flat = VoidCell((0.0, 0.0), 1.0, (0.0,) * 3, (0.0,) * 3)
    np.testing.assert_allclose(flat.radius(np.linspace(0, 6, 7)), 0.3)
    th = np.linspace(0, 2 * np.pi, 400)
    for seed in range(20):
        r = sample_void_shape(seed).radius(th)
        assert r.min() > 0.2 and r.max() < 0.4


def test_void_variance_matches_kl():
    rng = np.random.default_rng(0)
    th = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    k = np.arange(65)
    vals = []
    for _ in range(10_000):
        a, b = sample_log_radius(rng)
        kt = np.multiply.outer(th, k)
        vals.append(np.cos(kt) @ a + np.sin(kt) @ b)
    emp = np.var(np.array(vals), axis=0)
    # analytic: eigenvalues 16 / (k^2 + 9) over the orthonormal circle basis
    lam = 16.0 / (k**2 + 9.0)
    analytic = lam[0] / (2 * np.pi) + lam[1:].sum() / np.pi
    assert analytic == pytest.approx(void_variance())
    assert np.all(np.abs(emp / analytic - 1) < 0.05)


def test_shape_dict_roundtrip():
    s = sample_void_shape(3, origin=(0.1, 0.1))
    assert shape_from_dict(shape_to_dict(s)) == s


def test_airfoil_maps():
    assert airfoil_map_forward(0.0, 0.0) == (0.0, 0.0)
    assert airfoil_map_inverse(0.0, 0.0) == (0.0, 0.0)
    x, _ = airfoil_map_forward(0.5, 0.0)
    assert float(x) == pytest.approx(0.909 * math.atan(1.965 * 0.5), abs=1e-15)
    g = np.linspace(-0.8, 0.8, 21)
    X, Y = np.meshgrid(g, g, indexing="ij")
    Xr, Yr = airfoil_map_inverse(*airfoil_map_forward(X, Y))
    assert max(np.max(np.abs(Xr - X)), np.max(np.abs(Yr - Y))) < 1e-2


def test_evolve_chi_rules():
    prev = np.array([1.0, 1.0, 0.0])
    assert np.array_equal(evolve_chi(np.zeros(3), 0.5, prev), prev)
    assert not evolve_chi(np.ones(3), 0.5, prev).any()
    chi = np.ones(5)
    for phi in np.linspace(0, 1, 11):
        new = evolve_chi(np.linspace(0, 1, 5) * phi, 0.35, chi)
        assert np.all(new <= chi)
        chi = new
