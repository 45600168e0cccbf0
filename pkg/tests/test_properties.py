import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dafno.container import from_bytes, to_bytes
from dafno.datasets import split, split_sizes
from dafno.geometry import evolve_chi, smooth_chi
from dafno.peridynamics import PDConfig, make_stencil, neighbour_valid, pd_force
from dafno.spectral import SpectralKernel, spectral_conv

finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.integers(3, 200), st.integers(0, 10_000), st.floats(0.2, 0.6), st.floats(0.1, 0.3))
def test_split_is_a_partition(n, seed, a, b):
    fr = (a, b, 1.0 - a - b)
    sizes = [int(np.floor(f * n + 1e-9)) for f in fr[:2]]
    sizes.append(n - sum(sizes))
    if 0 in sizes:
        return
    parts = split(n, fr, seed)
    assert [len(p) for p in parts] == split_sizes(n, fr) == sizes
    flat = np.concatenate(parts)
    assert len(flat) == n and len(set(flat.tolist())) == n


@given(
    st.dictionaries(
        st.text(min_size=1, max_size=8),
        hnp.arrays(st.sampled_from([np.float64, np.float32, np.uint8, np.complex128]), hnp.array_shapes(max_dims=3, max_side=4)),
        max_size=4,
    )
)
def test_container_roundtrip(arrays):
    back = from_bytes(to_bytes(arrays))
    assert list(back) == list(arrays)
    for k, v in arrays.items():
        assert back[k].tobytes() == np.ascontiguousarray(v).tobytes() and back[k].shape == v.shape


@given(hnp.arrays(np.float64, 10, elements=st.floats(0, 10)), st.floats(0.1, 100))
def test_smoothing_range_and_order(dist, beta):
    inside = smooth_chi(np.ones(10), dist, beta)
    outside = smooth_chi(np.zeros(10), dist, beta)
    assert np.all((inside >= 0.5) & (inside <= 1.0)) and np.all((outside >= 0.0) & (outside <= 0.5))
    order = np.argsort(dist)
    assert np.all(np.diff(inside[order]) >= 0)


@given(hnp.arrays(np.float64, (5, 6), elements=st.floats(0, 1)), st.floats(0.05, 0.95))
def test_evolve_chi_never_restores(damage, thr):
    prev = (damage < 0.5).astype(float)
    out = evolve_chi(damage, thr, prev)
    assert np.all(out <= prev)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), finite, finite)
def test_spectral_conv_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    k = SpectralKernel.random((2, 2), 2, 2, rng)
    x, y = rng.standard_normal((2, 8, 8, 2))
    lhs = spectral_conv(a * x + b * y, k).data
    rhs = a * spectral_conv(x, k).data + b * spectral_conv(y, k).data
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * (abs(a) + abs(b) + 1))


_PD = PDConfig().replace(n=12, delta=3 * 44.14e-3 / 12)
_ST = make_stencil(_PD.delta, _PD.spacing)
_MU = neighbour_valid((12, 12), _ST)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pd_force_balances(seed):
    rng = np.random.default_rng(seed)
    u = 1e-5 * rng.standard_normal((12, 12, 2))
    chi = (rng.random((12, 12)) > 0.2).astype(float)
    L = pd_force(u, _MU, chi, _PD, _ST)
    assert np.all(np.abs(L.sum(axis=(0, 1))) <= 1e-10 * np.abs(L).sum() + 1e-300)
    assert not L[chi == 0].any()
