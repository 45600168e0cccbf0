"""Synthetic datasets, splitting, and the raw-array converter.

The Poisson task places one unit cell with a random void in a slightly larger
periodic box (two grid cells of padding at 32x32) and solves ``-lap u = g``
on the perforated cell with homogeneous Dirichlet data. The finite-difference
solver treats the curved boundary with unequal-arm (Shortley-Weller)
stencils, so it is second order on smooth domains.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .container import decode_json, encode_json, read_container, write_container
from .geometry import BoxGrid, distance_field, sample_void_shape, shape_to_dict, smooth_chi

__all__ = [
    "SolverError",
    "FieldSet",
    "poisson_grid",
    "sample_source",
    "eval_source",
    "poisson_system",
    "solve_poisson",
    "gen_poisson_dataset",
    "gen_pd_dataset",
    "split",
    "split_sizes",
    "convert_raw",
    "sample_seed",
]

CELL_OFFSET = 1.0 / 14.0
BOX_EXTENT = 1.0 + 2 * CELL_OFFSET
DEFAULT_BETA = 10.0
SOURCE_AMPLITUDE = 0.25


class SolverError(RuntimeError):
    pass


def sample_seed(master_seed: int, index: int) -> np.random.Generator:
    """Independent per-sample stream derived from ``(master_seed, index)``."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


# ------------------------------------------------------------------ fields


@dataclass
class FieldSet:
    """A batch of samples sharing one grid.

    ``g`` is the physical input ``[N, n1, n2, d_g]``, ``u`` the target
    ``[N, n1, n2, d_u]``. ``dist`` holds the distance to the opposite phase
    (``inf`` for uniform samples) so the smoothed indicator can be rebuilt
    for any ``beta``.
    """

    coords: np.ndarray
    g: np.ndarray
    chi: np.ndarray
    dist: np.ndarray
    u: np.ndarray
    beta: float = DEFAULT_BETA
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.g)
        for name in ("chi", "dist", "u"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} samples, g has {n}")
        if self.coords.shape[:2] != self.g.shape[1:3]:
            raise ValueError("coords and samples are on different grids")

    def __len__(self):
        return len(self.g)

    @property
    def grid_shape(self):
        return self.g.shape[1:3]

    @property
    def chi_smooth(self) -> np.ndarray:
        return smooth_chi(self.chi, self.dist, self.beta)

    def with_beta(self, beta: float) -> "FieldSet":
        return FieldSet(self.coords, self.g, self.chi, self.dist, self.u, float(beta), dict(self.meta))

    def subset(self, idx) -> "FieldSet":
        idx = np.asarray(idx, dtype=int)
        meta = dict(self.meta)
        if "samples" in meta:
            meta["samples"] = [meta["samples"][i] for i in idx]
        return FieldSet(self.coords, self.g[idx], self.chi[idx], self.dist[idx], self.u[idx], self.beta, meta)

    def to_arrays(self) -> dict:
        meta = dict(self.meta, beta=self.beta)
        return {
            "coords": self.coords,
            "g": self.g,
            "chi": self.chi.astype(np.uint8),
            "dist": self.dist,
            "chi_smooth": self.chi_smooth,
            "u": self.u,
            "meta": encode_json(meta),
        }

    @classmethod
    def from_arrays(cls, arrays: dict) -> "FieldSet":
        meta = decode_json(arrays["meta"]) if "meta" in arrays else {}
        beta = float(meta.pop("beta", DEFAULT_BETA))
        return cls(
            np.asarray(arrays["coords"], dtype=float),
            np.asarray(arrays["g"], dtype=float),
            np.asarray(arrays["chi"], dtype=float),
            np.asarray(arrays["dist"], dtype=float),
            np.asarray(arrays["u"], dtype=float),
            beta,
            meta,
        )

    def save(self, path):
        write_container(path, self.to_arrays())

    @classmethod
    def load(cls, path) -> "FieldSet":
        return cls.from_arrays(read_container(path))

    @classmethod
    def concat(cls, parts) -> "FieldSet":
        parts = list(parts)
        first = parts[0]
        meta = dict(first.meta)
        meta["samples"] = [s for p in parts for s in p.meta.get("samples", [{}] * len(p))]
        return cls(
            first.coords,
            np.concatenate([p.g for p in parts]),
            np.concatenate([p.chi for p in parts]),
            np.concatenate([p.dist for p in parts]),
            np.concatenate([p.u for p in parts]),
            first.beta,
            meta,
        )


def uniform_distance(chi, grid: BoxGrid) -> np.ndarray:
    """Distance field that tolerates single-phase fields (returns ``inf``)."""
    chi = np.asarray(chi)
    if chi.min() == chi.max():
        return np.full(chi.shape, np.inf)
    return distance_field(chi, grid)


# ----------------------------------------------------------------- Poisson


def poisson_grid(n: int) -> BoxGrid:
    return BoxGrid((BOX_EXTENT, BOX_EXTENT), (n, n))


def sample_source(rng, n_terms: int = 4, max_freq: int = 2, amplitude: float = SOURCE_AMPLITUDE):
    """Coefficients of ``g = 1 + sum a cos(2 pi (kx x + ky y) + phase)`` on the unit cell.

    Amplitudes ``a`` are ``amplitude * N(0, 1)``.
    """
    k = rng.integers(0, max_freq + 1, size=(n_terms, 2))
    k[(k == 0).all(axis=1), 0] = 1
    amp = amplitude * rng.standard_normal(n_terms)
    phase = rng.uniform(0.0, 2 * np.pi, n_terms)
    return {"k": k.tolist(), "amp": amp.tolist(), "phase": phase.tolist()}


def eval_source(params, x, y, origin=(CELL_OFFSET, CELL_OFFSET)):
    x = np.asarray(x, dtype=float) - origin[0]
    y = np.asarray(y, dtype=float) - origin[1]
    g = np.ones(np.broadcast(x, y).shape)
    for (kx, ky), a, ph in zip(params["k"], params["amp"], params["phase"]):
        g = g + a * np.cos(2 * np.pi * (kx * x + ky * y) + ph)
    return g


def _crossing(shape, px, py, qx, qy, iters: int = 60):
    """Fraction ``t`` along ``p -> q`` where ``shape`` is left (p inside, q outside)."""
    lo = np.zeros(px.shape)
    hi = np.ones(px.shape)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = shape.contains(px + mid * (qx - px), py + mid * (qy - py))
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


def poisson_system(shape, grid: BoxGrid, min_fraction: float = 1e-3):
    """Sparse matrix for ``-lap`` on the nodes inside ``shape`` with zero boundary data.

    Returns ``(A, chi, index)`` where ``index`` maps interior nodes to unknowns
    (``-1`` elsewhere).
    """
    X, Y = grid.mesh()
    chi = shape.contains(X, Y, grid.spacing)
    n1, n2 = grid.shape
    index = -np.ones((n1, n2), dtype=int)
    index[chi] = np.arange(int(chi.sum()))
    I, J = np.nonzero(chi)
    rows, cols, vals = [], [], []
    diag = np.zeros(len(I))
    for axis, h in ((0, grid.spacing[0]), (1, grid.spacing[1])):
        arms = []
        for sgn in (-1, 1):
            ni = I + sgn * (axis == 0)
            nj = J + sgn * (axis == 1)
            valid = (ni >= 0) & (ni < n1) & (nj >= 0) & (nj < n2)
            nb_in = np.zeros(len(I), dtype=bool)
            nb_in[valid] = chi[ni[valid], nj[valid]]
            arm = np.full(len(I), h)
            out = ~nb_in
            if out.any():
                px, py = X[I[out], J[out]], Y[I[out], J[out]]
                qx = px + sgn * h * (axis == 0)
                qy = py + sgn * h * (axis == 1)
                t = _crossing(shape, px, py, qx, qy)
                arm[out] = h * np.maximum(t, min_fraction)
            arms.append((arm, nb_in, ni, nj))
        (hl, in_l, il, jl), (hr, in_r, ir, jr) = arms
        s = 2.0 / (hl + hr)
        diag += s * (1.0 / hl + 1.0 / hr)
        k = np.arange(len(I))
        for arm, nb_in, ni, nj in ((hl, in_l, il, jl), (hr, in_r, ir, jr)):
            rows.append(k[nb_in])
            cols.append(index[ni[nb_in], nj[nb_in]])
            vals.append(-s[nb_in] / arm[nb_in])
    rows.append(np.arange(len(I)))
    cols.append(np.arange(len(I)))
    vals.append(diag)
    A = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(I), len(I))
    )
    return A, chi.astype(float), index


def solve_poisson(shape, grid: BoxGrid, g, tol: float = 1e-10):
    """Solve ``-lap u = g`` inside ``shape``, ``u = 0`` on its boundary and outside.

    Returns ``(u, chi)``; raises :class:`SolverError` if the relative
    residual of the discrete system exceeds ``tol``.
    """
    A, chi, index = poisson_system(shape, grid)
    g = np.asarray(g, dtype=float)
    b = g[chi > 0]
    if not len(b):
        raise SolverError("domain contains no grid nodes")
    x = spsolve(A.tocsc(), b)
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b)
    if not np.isfinite(res) or res > tol * bnorm:
        raise SolverError(f"relative residual {res / max(bnorm, 1e-300):.3e} exceeds {tol}")
    u = np.zeros(grid.shape)
    u[chi > 0] = x
    return u, chi


def gen_poisson_dataset(n_samples: int, grid_n: int, seed: int, beta: float = DEFAULT_BETA) -> FieldSet:
    """Voided unit cells with smooth random sources.

    Sample ``i`` depends only on ``(seed, i)``, so the same dataset can be
    regenerated at any resolution (used for super-resolution tests).
    """
    if grid_n < 16:
        raise ValueError(f"grid must be at least 16x16, got {grid_n}")
    grid = poisson_grid(grid_n)
    X, Y = grid.mesh()
    gs, chis, dists, us, records = [], [], [], [], []
    for i in range(n_samples):
        rng = sample_seed(seed, i)
        shape = sample_void_shape(rng, origin=(CELL_OFFSET, CELL_OFFSET), size=1.0)
        src = sample_source(rng)
        g = eval_source(src, X, Y)
        u, chi = solve_poisson(shape, grid, g)
        gs.append(g[..., None])
        chis.append(chi)
        dists.append(distance_field(chi, grid))
        us.append(u[..., None])
        records.append({"index": i, "shape": shape_to_dict(shape), "source": src})
    meta = {
        "task": "poisson",
        "grid": [grid_n, grid_n],
        "extent": list(grid.extent),
        "seed": int(seed),
        "samples": records,
    }
    return FieldSet(grid.coords(), np.array(gs), np.array(chis), np.array(dists), np.array(us), beta, meta)


# -------------------------------------------------------------- PD samples


def gen_pd_dataset(config=None, n_crack: int = 100, modes: int = 8, traction=None) -> FieldSet:
    """Crack-growth snapshots followed by the intact sinusoidal family.

    Inputs are ``(u1, u2)``, targets ``(L1, L2)``; ``meta['samples']`` tags
    every sample with its source (``crack`` or ``sine``).
    """
    from . import peridynamics as pd

    config = config or pd.PDConfig.desk()
    if traction is not None:
        config = config.replace(traction=traction)
    crack = pd.crack_snapshots(config, n_crack)
    sine = pd.gen_sinusoidal_dataset(config, modes)
    return FieldSet.concat([crack, sine])


# --------------------------------------------------------------- splitting


def split_sizes(n: int, fractions) -> list:
    """Floor every share except the last, which takes the remainder."""
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be non-negative and sum to 1, got {fractions}")
    sizes = [int(np.floor(f * n + 1e-9)) for f in fractions[:-1]]
    sizes.append(n - sum(sizes))
    for f, s in zip(fractions, sizes):
        if f > 0 and s == 0:
            raise ValueError(f"split with fraction {f} of {n} samples is empty")
    return sizes


def split(data, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Disjoint, exhaustive, seed-deterministic partition.

    ``data`` is a :class:`FieldSet` or a sample count; index arrays are
    returned for a count.
    """
    n = data if isinstance(data, (int, np.integer)) else len(data)
    sizes = split_sizes(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    parts, start = [], 0
    for s in sizes:
        parts.append(np.sort(perm[start : start + s]))
        start += s
    if isinstance(data, (int, np.integer)):
        return tuple(parts)
    return tuple(data.subset(p) for p in parts)


# --------------------------------------------------------------- converter

_RAW_DTYPES = {"real32": "<f4", "real64": "<f8", "uint8": "u1", "complex128": "<c16"}


def convert_raw(directory, out_path) -> dict:
    """Pack a directory of raw arrays described by ``manifest.json``.

    Manifest schema::

        {"arrays": {"name": {"file": "x.bin", "dtype": "real64", "shape": [..]}, ...},
         "meta": {...}}

    ``.npy`` files are read with numpy (``dtype``/``shape`` then optional);
    anything else is read as headerless little-endian data. Intended for
    external datasets saved outside this package.
    """
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if "arrays" not in manifest or not isinstance(manifest["arrays"], dict):
        raise ValueError("manifest needs an 'arrays' object")
    arrays = {}
    for name, spec in manifest["arrays"].items():
        path = os.path.join(directory, spec["file"])
        if path.endswith(".npy"):
            arr = np.load(path, allow_pickle=False)
        else:
            if spec.get("dtype") not in _RAW_DTYPES:
                raise ValueError(f"{name}: dtype must be one of {sorted(_RAW_DTYPES)}")
            arr = np.fromfile(path, dtype=_RAW_DTYPES[spec["dtype"]])
            shape = tuple(spec["shape"])
            if int(np.prod(shape)) != arr.size:
                raise ValueError(f"{name}: {arr.size} values do not fill shape {shape}")
            arr = arr.reshape(shape)
        arrays[name] = arr
    if "meta" in manifest:
        arrays["meta"] = encode_json(manifest["meta"])
    write_container(out_path, arrays)
    return arrays
