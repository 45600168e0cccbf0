"""2D transforms on the periodic box and the truncated-mode spectral convolution.

Convention: unnormalized forward transform, ``1/(n1*n2)`` on the inverse.
Only the Hermitian-reduced half spectrum of real fields is stored. A kernel
with ``modes = (m1, m2)`` keeps rows ``0..m1-1`` and ``n1-m1..n1-1`` of the
first spectral axis and columns ``0..m2-1`` of the reduced axis.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeError, Tensor

__all__ = [
    "SpectralKernel",
    "fft2",
    "ifft2",
    "spectral_conv",
    "spectral_matrix",
    "kernel_from_stencil",
    "band_forward",
    "band_inverse",
    "mode_mix",
    "pointwise_matvec",
]


def _check_field(x: Tensor):
    if x.ndim < 3:
        raise ShapeError(f"expected a field [..., n1, n2, d], got shape {x.shape}")
    n1, n2 = x.shape[-3], x.shape[-2]
    if n1 < 2 or n2 < 2:
        raise ShapeError(f"grid {n1}x{n2} is too small for a 2D transform")
    return n1, n2


def fft2(field) -> Tensor:
    """Reduced spectrum ``[..., n1, n2//2+1, d]`` of a real field ``[..., n1, n2, d]``."""
    field = ad.as_tensor(field)
    _check_field(field)
    return ad.rfft2(field, axes=(-3, -2))


def ifft2(spec, out_shape, src_shape=None) -> Tensor:
    """Real field on ``out_shape = (N1, N2)`` from a reduced spectrum.

    When ``out_shape`` matches the source grid this is the exact inverse. A
    larger ``out_shape`` zero-pads the spectrum, which evaluates the source's
    trigonometric interpolant on the finer nodes (Nyquist terms split evenly
    between the two signed frequencies). ``src_shape`` is only needed to
    disambiguate an odd second extent when resampling.
    """
    spec = ad.as_tensor(spec)
    if spec.ndim < 3:
        raise ShapeError(f"expected a spectrum [..., k1, k2, d], got shape {spec.shape}")
    k1, k2 = spec.shape[-3], spec.shape[-2]
    N1, N2 = (int(v) for v in out_shape)
    if src_shape is None and N1 == k1 and N2 // 2 + 1 == k2:
        return ad.irfft2(spec, s=(N1, N2), axes=(-3, -2))
    n1, n2 = src_shape if src_shape is not None else (k1, 2 * (k2 - 1))
    if k1 != n1 or k2 != n2 // 2 + 1:
        raise ShapeError(f"spectrum shape {spec.shape} inconsistent with source grid {(n1, n2)}")
    if (N1, N2) == (n1, n2):
        return ad.irfft2(spec, s=(N1, N2), axes=(-3, -2))
    if N1 < n1 or N2 < n2:
        raise ShapeError(f"cannot resample {(n1, n2)} down to {(N1, N2)}")

    # Hermitian-consistent split of Nyquist terms before padding
    w = np.ones((k1, k2))
    if n1 % 2 == 0:
        w[n1 // 2, :] *= 0.5
    if n2 % 2 == 0:
        w[:, n2 // 2] *= 0.5
    scaled = ad.mul(spec, w[..., None] * (N1 * N2) / (n1 * n2))

    lead = spec.shape[:-3]
    full = (*lead, N1, N2 // 2 + 1, spec.shape[-1])
    pos = n1 // 2 + 1  # rows 0..n1//2
    neg = n1 - pos + (1 if n1 % 2 == 0 else 0)  # rows carrying negative frequencies
    e = Ellipsis
    top = ad.embed(scaled[e, :pos, :, :], full, (e, slice(0, pos), slice(0, k2), slice(None)))
    parts = [top]
    if neg > 0:
        bottom = scaled[e, n1 - neg :, :, :]
        parts.append(ad.embed(bottom, full, (e, slice(N1 - neg, N1), slice(0, k2), slice(None))))
    out = parts[0]
    for p in parts[1:]:
        out = ad.add(out, p)
    return ad.irfft2(out, s=(N1, N2), axes=(-3, -2))


class SpectralKernel:
    """Learnable per-mode channel-mixing matrices ``[2*m1, m2, d_in, d_out]``.

    Rows ``0..m1-1`` hold the non-negative first-axis frequencies, rows
    ``m1..2*m1-1`` the negative ones (``-m1..-1``).
    """

    def __init__(self, coeffs, name: str = "kernel"):
        if not isinstance(coeffs, Parameter):
            coeffs = Parameter(np.asarray(coeffs, dtype=np.complex128), name=name)
        if coeffs.ndim != 4 or coeffs.shape[0] % 2:
            raise ShapeError(f"kernel coefficients must be [2*m1, m2, d_in, d_out], got {coeffs.shape}")
        self.coeffs = coeffs

    @classmethod
    def random(cls, modes, d_in, d_out, rng, name="kernel"):
        m1, m2 = modes
        scale = 1.0 / (d_in * m1 * m2)
        shape = (2 * m1, m2, d_in, d_out)
        c = scale * (rng.random(shape) + 1j * rng.random(shape))
        return cls(Parameter(c, name=name))

    @classmethod
    def zeros(cls, modes, d_in, d_out, name="kernel"):
        m1, m2 = modes
        return cls(Parameter(np.zeros((2 * m1, m2, d_in, d_out), dtype=np.complex128), name=name))

    @property
    def modes(self):
        return self.coeffs.shape[0] // 2, self.coeffs.shape[1]

    @property
    def d_in(self):
        return self.coeffs.shape[2]

    @property
    def d_out(self):
        return self.coeffs.shape[3]

    def max_resolution_check(self, n1, n2):
        m1, m2 = self.modes
        if 2 * m1 > n1 or m2 > n2 // 2 + 1:
            raise ShapeError(
                f"kernel modes {(m1, m2)} exceed the reduced spectrum of a {n1}x{n2} grid"
            )


def _half_weights(n2: int, m2: int):
    w = np.full(m2, 2.0)
    w[0] = 1.0
    if n2 % 2 == 0 and m2 == n2 // 2 + 1:
        w[-1] = 1.0
    return w


class _BandBasis:
    """Partial DFT matrices for the retained modes of an ``n1 x n2`` grid."""

    _cache: dict = {}

    def __new__(cls, n1, n2, m1, m2):
        key = (n1, n2, m1, m2)
        if key not in cls._cache:
            self = super().__new__(cls)
            k1 = np.r_[0:m1, -m1:0]
            k2 = np.arange(m2)
            # forward: H[k1, k2] = sum_xy h e^{-i(k1 x + k2 y)}
            self.F1 = np.exp(-2j * np.pi * np.outer(k1, np.arange(n1)) / n1)  # [2m1, n1]
            self.F2 = np.exp(-2j * np.pi * np.outer(k2, np.arange(n2)) / n2)  # [m2, n2]
            # band-restricted inverse with Hermitian multiplicities folded in
            w = _half_weights(n2, m2) / (n1 * n2)
            self.E1 = np.conj(self.F1).T.copy()  # [n1, 2m1]
            self.E2 = (np.conj(self.F2) * w[:, None]).T.copy()  # [n2, m2]
            self.F1H = np.conj(self.F1).T.copy()
            self.F2H = np.conj(self.F2).T.copy()
            self.E1H = np.conj(self.E1).T.copy()
            self.E2H = np.conj(self.E2).T.copy()
            # real stacked forms: one real matmul replaces a complex one with real input/output
            self.F2s = np.concatenate([self.F2.real, self.F2.imag], axis=0)  # [2m2, n2]
            self.F2Hs = np.concatenate([self.F2H.real, -self.F2H.imag], axis=1)  # [n2, 2m2]
            self.E2s = np.concatenate([self.E2.real, -self.E2.imag], axis=1)  # [n2, 2m2]
            self.E2sT = self.E2s.T.copy()
            cls._cache[key] = self
        return cls._cache[key]


def _split(shape, ax):
    lead = shape[:ax]
    tail = shape[ax + 2 :]
    return lead, int(np.prod(lead, dtype=int)), tail, int(np.prod(tail, dtype=int))


def band_forward(x, m1: int, m2: int, lead: int) -> Tensor:
    """Retained modes ``[..., 2m1, m2, *tail]`` of a real field ``[..., n1, n2, *tail]``.

    ``lead`` is the number of trailing channel axes after the grid axes.
    Equal to slicing the corner blocks out of ``rfft2``.
    """
    x = ad.as_tensor(x)
    ax = x.ndim - 2 - lead
    n1, n2 = x.shape[ax], x.shape[ax + 1]
    basis = _BandBasis(n1, n2, m1, m2)
    head, nb, tail, P = _split(x.shape, ax)
    xd = x.data.reshape(nb * n1, n2, P)
    S = basis.F2s @ xd
    T = S[:, :m2] + 1j * S[:, m2:]  # [nb*n1, m2, P]
    Y = basis.F1 @ T.reshape(nb, n1, m2 * P)
    out = Y.reshape(*head, 2 * m1, m2, *tail)

    def back(g):
        gT = basis.F1H @ g.reshape(nb, 2 * m1, m2 * P)
        gT = gT.reshape(nb * n1, m2, P)
        gx = basis.F2Hs @ np.concatenate([gT.real, gT.imag], axis=1)
        return (gx.reshape(x.shape),)

    return ad._make(out, (x,), back)


def band_inverse(C, n1: int, n2: int, lead: int) -> Tensor:
    """Real field from retained modes; equals ``irfft2`` of the zero-filled spectrum."""
    C = ad.as_tensor(C)
    ax = C.ndim - 2 - lead
    m1, m2 = C.shape[ax] // 2, C.shape[ax + 1]
    basis = _BandBasis(n1, n2, m1, m2)
    head, nb, tail, P = _split(C.shape, ax)
    T = (basis.E1 @ C.data.reshape(nb, 2 * m1, m2 * P)).reshape(nb * n1, m2, P)
    Y = basis.E2s @ np.concatenate([T.real, T.imag], axis=1)  # [nb*n1, n2, P]
    out = Y.reshape(*head, n1, n2, *tail)

    def back(g):
        S = basis.E2sT @ g.reshape(nb * n1, n2, P)
        gT = S[:, :m2] + 1j * S[:, m2:]
        gC = basis.E1H @ gT.reshape(nb, n1, m2 * P)
        return (gC.reshape(C.shape),)

    return ad._make(out, (C,), back)


def pointwise_matvec(h, M) -> Tensor:
    """``out[..., o] = sum_i h[..., i] M[..., i, o]`` at every node."""
    h, M = ad.as_tensor(h), ad.as_tensor(M)
    if M.shape[:-1] != h.shape:
        raise ShapeError(f"matrix field {M.shape} does not match vector field {h.shape}")
    hd, Md = h.data, M.data
    out = (hd[..., None, :] @ Md)[..., 0, :]

    def back(g):
        gh = (Md @ g[..., :, None])[..., 0]
        gM = hd[..., :, None] * g[..., None, :]
        return gh, gM

    return ad._make(out, (h, M), back)


def mode_mix(H, R) -> Tensor:
    """``out[..., k, o] = sum_i H[..., k, i] R[k, i, o]`` for every retained mode ``k``."""
    H, R = ad.as_tensor(H), ad.as_tensor(R)
    single = H.ndim == 3
    Hd = H.data[None] if single else H.data
    Ht = np.moveaxis(Hd, 0, 2)  # [2m1, m2, B, i]
    Rd = R.data
    out = np.moveaxis(Ht @ Rd, 2, 0)
    out = out[0] if single else out

    def back(g):
        gt = np.moveaxis(g[None] if single else g, 0, 2)  # [2m1, m2, B, o]
        gH = np.moveaxis(gt @ np.conj(np.swapaxes(Rd, -1, -2)), 2, 0)
        gR = np.conj(np.swapaxes(Ht, -1, -2)) @ gt
        return (gH[0] if single else gH), gR

    return ad._make(out, (H, R), back)


def spectral_conv(h, kernel: SpectralKernel) -> Tensor:
    """``F^-1[R . F[h]]`` with ``R`` nonzero only on the retained modes.

    ``h`` is ``[n1, n2, d_in]`` or batched ``[B, n1, n2, d_in]``.
    """
    h = ad.as_tensor(h)
    n1, n2 = _check_field(h)
    if h.ndim not in (3, 4):
        raise ShapeError(f"unsupported field rank {h.ndim}")
    kernel.max_resolution_check(n1, n2)
    if h.shape[-1] != kernel.d_in:
        raise ShapeError(f"field has {h.shape[-1]} channels, kernel expects {kernel.d_in}")
    m1, m2 = kernel.modes
    H = band_forward(h, m1, m2, lead=1)
    mixed = mode_mix(H, kernel.coeffs)
    return band_inverse(mixed, n1, n2, lead=1)


def spectral_matrix(chi, kernel: SpectralKernel) -> Tensor:
    """Matrix field ``M(x) = sum_y kappa(x - y) chi(y)`` of shape ``[..., n1, n2, d_in, d_out]``.

    ``chi`` is a scalar field ``[n1, n2]`` or ``[B, n1, n2]``. Applying it as
    ``h(x) @ M(x)`` gives the nonlocal term that cancels the convolution of a
    constant field.
    """
    chi = ad.as_tensor(chi)
    if chi.ndim not in (2, 3):
        raise ShapeError(f"expected a scalar field [..., n1, n2], got shape {chi.shape}")
    n1, n2 = chi.shape[-2], chi.shape[-1]
    kernel.max_resolution_check(n1, n2)
    m1, m2 = kernel.modes
    X = band_forward(chi, m1, m2, lead=0)
    mixed = ad.mul(X[..., None, None], kernel.coeffs)
    return band_inverse(mixed, n1, n2, lead=2)


def kernel_from_stencil(stencil, cell_area: float) -> SpectralKernel:
    """Full-mode kernel equivalent to circular convolution with ``stencil``.

    ``stencil`` has shape ``[n1, n2, d_in, d_out]`` (even ``n1``); the result
    reproduces ``sum_y h(y) @ stencil(x - y) * cell_area``.
    """
    stencil = np.asarray(stencil, dtype=np.float64)
    n1, n2 = stencil.shape[:2]
    if n1 % 2:
        raise ShapeError("full-mode kernels need an even first extent")
    S = np.fft.rfft2(stencil, axes=(0, 1)) * cell_area
    m1 = n1 // 2
    coeffs = np.concatenate([S[:m1], S[n1 - m1 :]], axis=0)
    return SpectralKernel(coeffs)
