"""Bond-based peridynamics on a node-centred grid, with brittle bond failure.

Units are SI with unit plate thickness, so force densities are N/m^3.
Bond status lives on a per-node stencil: ``mu[i, j, k]`` is the bond from
node ``(i, j)`` to ``(i, j) + offsets[k]``. Every bond appears twice (once
from each end) and both copies are always updated together.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .container import encode_json, write_container
from .geometry import BoxGrid, Rectangle, evolve_chi, rasterize

__all__ = [
    "PDConfig",
    "PDState",
    "Stencil",
    "Trajectory",
    "SimulationError",
    "PDForce",
    "SurrogatePair",
    "make_stencil",
    "pd_force",
    "pd_force_bruteforce",
    "bond_stretch",
    "damage",
    "damage_update",
    "mirror_bonds",
    "traction_body_force",
    "initial_state",
    "velocity_verlet_step",
    "simulate",
    "run_ground_truth",
    "run_surrogate",
    "crack_snapshots",
    "sinusoid_field",
    "gen_sinusoidal_dataset",
    "relative_error",
]


class SimulationError(FloatingPointError):
    def __init__(self, step, message=None):
        super().__init__(message or f"non-finite state at step {step}")
        self.step = step


@dataclass(frozen=True)
class PDConfig:
    E: float = 150e9
    nu: float = 0.33
    rho: float = 1000.0
    G0: float = 200.0
    delta: float = 2.07e-3
    box: float = 44.14e-3
    n: int = 64
    dt: float = 2e-8
    traction: float = 4e6
    plate: float = 40e-3
    crack_length: float = 10e-3
    no_fail: int | None = None  # rows; None -> traction band width
    symmetric: bool = False
    chi_threshold: float = 0.5
    steps: int = 450
    every: int = 1

    def __post_init__(self):
        if not self.delta >= 2 * self.spacing * (1 - 1e-9):
            raise ValueError(f"horizon {self.delta} spans fewer than two cells of {self.spacing}")
        if not self.dt > 0:
            raise ValueError("time step must be positive")

    @classmethod
    def desk(cls, **kw) -> "PDConfig":
        """Desk-scale 32x32 setup (horizon of three cells, as at full scale)."""
        base = dict(
            n=32, delta=3 * 44.14e-3 / 32, dt=4e-8, G0=5.0, chi_threshold=0.35, steps=300, every=3, symmetric=True
        )
        base.update(kw)
        return cls(**base)

    def replace(self, **kw) -> "PDConfig":
        return replace(self, **kw)

    @property
    def spacing(self) -> float:
        return self.box / self.n

    @property
    def grid(self) -> BoxGrid:
        return BoxGrid((self.box, self.box), (self.n, self.n))

    @property
    def micromodulus(self) -> float:
        return 9.0 * self.E / (math.pi * self.delta**3)

    @property
    def critical_stretch(self) -> float:
        return math.sqrt(4.0 * math.pi * self.G0 / (9.0 * self.E * self.delta))

    @property
    def band(self) -> int:
        """Rows of the traction layer (``ceil(delta / spacing)``)."""
        return int(math.ceil(self.delta / self.spacing - 1e-9))

    @property
    def no_fail_rows(self) -> int:
        return self.band if self.no_fail is None else int(self.no_fail)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------- stencils


@dataclass(frozen=True)
class Stencil:
    offsets: np.ndarray  # [K, 2] integer
    xi: np.ndarray  # [K, 2] bond vectors (m)
    length: np.ndarray  # [K]
    unit: np.ndarray  # [K, 2]
    reverse: np.ndarray  # [K] index of -offset
    mirror: np.ndarray  # [K] index of (di, -dj)
    radius: int


def make_stencil(delta: float, spacing: float) -> Stencil:
    """All integer offsets with ``|offset| * spacing <= delta`` (centre-in-ball)."""
    R = int(math.floor(delta / spacing + 1e-9))
    offs = [
        (di, dj)
        for di in range(-R, R + 1)
        for dj in range(-R, R + 1)
        if (di or dj) and math.hypot(di, dj) * spacing <= delta * (1 + 1e-12)
    ]
    offs = np.array(offs, dtype=int)
    lookup = {tuple(o): k for k, o in enumerate(offs)}
    xi = offs * spacing
    length = np.hypot(xi[:, 0], xi[:, 1])
    reverse = np.array([lookup[(-a, -b)] for a, b in offs])
    mirror = np.array([lookup[(a, -b)] for a, b in offs])
    return Stencil(offs, xi, length, xi / length[:, None], reverse, mirror, R)


def _shift(a, off, R):
    """``a[i + di, j + dj]`` with zero fill outside; ``a`` is padded by ``R``."""
    n1, n2 = a.shape[0] - 2 * R, a.shape[1] - 2 * R
    di, dj = off
    return a[R + di : R + di + n1, R + dj : R + dj + n2]


def _pad(a, R):
    pad = [(R, R), (R, R)] + [(0, 0)] * (a.ndim - 2)
    return np.pad(a, pad)


def neighbour_valid(shape, st: Stencil) -> np.ndarray:
    """``[n1, n2, K]`` flags for neighbours that lie on the grid."""
    n1, n2 = shape
    I, J = np.indices((n1, n2))
    out = np.empty((n1, n2, len(st.offsets)), dtype=bool)
    for k, (di, dj) in enumerate(st.offsets):
        out[..., k] = (I + di >= 0) & (I + di < n1) & (J + dj >= 0) & (J + dj < n2)
    return out


# ------------------------------------------------------------------ force


def pd_force(u, mu, chi, config: PDConfig, stencil: Stencil | None = None) -> np.ndarray:
    """Internal force density ``sum_k mu c s e V`` over intact bonds in the horizon.

    ``u`` is ``[n1, n2, 2]`` (m), ``mu`` ``[n1, n2, K]`` bool, ``chi``
    ``[n1, n2]``; bonds count only when both ends have ``chi = 1``.
    """
    st = stencil or make_stencil(config.delta, config.spacing)
    u = np.asarray(u, dtype=float)
    chi = np.asarray(chi, dtype=float)
    R = st.radius
    up = _pad(u, R)
    cp = _pad(chi, R)
    scale = config.micromodulus * config.spacing**2
    L = np.zeros_like(u)
    for k, off in enumerate(st.offsets):
        eta = _shift(up, off, R) - u
        e = st.unit[k]
        s = (eta[..., 0] * e[0] + eta[..., 1] * e[1]) / st.length[k]
        w = mu[..., k] * chi * _shift(cp, off, R)
        f = w * s
        L[..., 0] += f * e[0]
        L[..., 1] += f * e[1]
    return L * scale


def pd_force_bruteforce(u, mu, chi, config: PDConfig, stencil: Stencil | None = None) -> np.ndarray:
    """Reference double loop over node pairs (slow; for testing)."""
    st = stencil or make_stencil(config.delta, config.spacing)
    u = np.asarray(u, dtype=float)
    n1, n2 = chi.shape
    h = config.spacing
    c = config.micromodulus
    lookup = {tuple(o): k for k, o in enumerate(st.offsets)}
    L = np.zeros_like(u)
    for i in range(n1):
        for j in range(n2):
            for p in range(n1):
                for q in range(n2):
                    k = lookup.get((p - i, q - j))
                    if k is None or not mu[i, j, k] or chi[i, j] != 1 or chi[p, q] != 1:
                        continue
                    xi = np.array([(p - i) * h, (q - j) * h])
                    r = math.sqrt(xi @ xi)
                    e = xi / r
                    s = (u[p, q] - u[i, j]) @ e / r
                    L[i, j] += c * s * e * h * h
    return L


def bond_stretch(u, config: PDConfig, stencil: Stencil) -> np.ndarray:
    """Linearized stretch ``(u(y) - u(x)) . e / |xi|`` for every stencil bond."""
    R = stencil.radius
    up = _pad(np.asarray(u, dtype=float), R)
    s = np.zeros(u.shape[:2] + (len(stencil.offsets),))
    for k, off in enumerate(stencil.offsets):
        eta = _shift(up, off, R) - u
        e = stencil.unit[k]
        s[..., k] = (eta[..., 0] * e[0] + eta[..., 1] * e[1]) / stencil.length[k]
    return s


# ----------------------------------------------------------------- damage


def mirror_bonds(mu, stencil: Stencil) -> np.ndarray:
    """Bond field reflected about the horizontal midline (``j -> n2 - 1 - j``)."""
    return mu[:, ::-1, :][..., stencil.mirror]


def _reverse_consistent(mu, stencil: Stencil):
    """Break the partner copy of every broken bond."""
    R = stencil.radius
    broken = _pad(~mu, R)
    out = mu.copy()
    for k, off in enumerate(stencil.offsets):
        out[..., k] &= ~_shift(broken[..., stencil.reverse[k]], off, R)
    return out


def damage(mu, family) -> np.ndarray:
    """Fraction of broken bonds among the node's initial family."""
    total = family.sum(axis=-1)
    intact = (mu & family).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(total > 0, 1.0 - intact / np.maximum(total, 1), 0.0)
    return phi


@dataclass
class PDState:
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    chi: np.ndarray
    t: float = 0.0
    step: int = 0
    family: np.ndarray | None = None
    protect: np.ndarray | None = None

    def copy(self) -> "PDState":
        return PDState(
            self.u.copy(),
            self.v.copy(),
            self.a.copy(),
            self.mu.copy(),
            self.phi.copy(),
            self.chi.copy(),
            self.t,
            self.step,
            self.family,
            self.protect,
        )


def damage_update(state: PDState, config: PDConfig, stencil: Stencil):
    """Break intact bonds whose tensile stretch exceeds the critical stretch.

    The bond energy ``c s^2 |xi| / 2`` exceeds its critical value exactly when
    ``|s| > s0``; only tensile bonds between two live (``chi = 1``) nodes
    are allowed to fail. Protected (no-fail) bonds never break.
    Returns ``(mu, phi)``.
    """
    s = bond_stretch(state.u, config, stencil)
    fail = s > config.critical_stretch
    # bonds touching removed material carry no load and are left alone
    R = stencil.radius
    cp = _pad(np.asarray(state.chi) > 0, R)
    for k, off in enumerate(stencil.offsets):
        fail[..., k] &= cp[R:-R, R:-R] & _shift(cp, off, R)
    if state.protect is not None:
        fail &= ~state.protect
    mu = state.mu & ~fail
    mu = _reverse_consistent(mu, stencil)
    if config.symmetric:
        mu = mu & mirror_bonds(mu, stencil)
    family = state.family if state.family is not None else np.ones_like(mu)
    return mu, damage(mu, family)


# ---------------------------------------------------------------- loading


def _segments_cross(p, q, a, b):
    """Proper or touching intersection of segments ``p-q`` (arrays) with ``a-b``."""

    def orient(o, s, t):
        return (s[..., 0] - o[..., 0]) * (t[..., 1] - o[..., 1]) - (s[..., 1] - o[..., 1]) * (t[..., 0] - o[..., 0])

    a = np.broadcast_to(np.asarray(a, float), p.shape)
    b = np.broadcast_to(np.asarray(b, float), p.shape)
    d1, d2 = orient(a, b, p), orient(a, b, q)
    d3, d4 = orient(p, q, a), orient(p, q, b)
    return (d1 * d2 <= 0) & (d3 * d4 <= 0) & ~((d1 == 0) & (d2 == 0))


def plate_geometry(config: PDConfig):
    """Plate indicator and the pre-crack segment (left edge, mid-height)."""
    pad = 0.5 * (config.box - config.plate)
    plate = Rectangle(pad, pad, pad + config.plate, pad + config.plate)
    chi = rasterize(plate, config.grid)
    y = 0.5 * config.box
    crack = ((pad - config.spacing, y), (pad + config.crack_length, y))
    return chi, crack


def traction_body_force(chi, config: PDConfig) -> np.ndarray:
    """Opposite vertical tractions on the top/bottom plate edges as body force.

    The edge load ``sigma`` (N/m) is spread over the outermost ``band`` rows.
    """
    b = np.zeros(chi.shape + (2,))
    rows = np.nonzero(chi.any(axis=0))[0]
    if not len(rows) or config.traction == 0:
        return b
    nb = config.band
    density = config.traction / (nb * config.spacing)
    lo, hi = rows[:nb], rows[-nb:]
    b[:, lo, 1] = -density * chi[:, lo]
    b[:, hi, 1] = density * chi[:, hi]
    return b


def _protected(chi, config: PDConfig, stencil: Stencil):
    rows = np.nonzero(chi.any(axis=0))[0]
    nf = config.no_fail_rows
    zone = np.zeros(chi.shape, dtype=bool)
    if nf > 0 and len(rows):
        zone[:, rows[:nf]] = True
        zone[:, rows[-nf:]] = True
    R = stencil.radius
    zp = _pad(zone, R)
    out = np.empty(chi.shape + (len(stencil.offsets),), dtype=bool)
    for k, off in enumerate(stencil.offsets):
        out[..., k] = zone | _shift(zp, off, R)
    return out


def initial_state(config: PDConfig, stencil: Stencil | None = None, precrack: bool = True) -> PDState:
    """Quiescent plate with the pre-crack bonds already broken."""
    st = stencil or make_stencil(config.delta, config.spacing)
    chi0, crack = plate_geometry(config)
    R = st.radius
    cp = _pad(chi0, R)
    family = neighbour_valid(chi0.shape, st) & (chi0 > 0)[..., None]
    for k, off in enumerate(st.offsets):
        family[..., k] &= _shift(cp, off, R) > 0
    mu = family.copy()
    if precrack:
        X, Y = config.grid.mesh()
        p = np.stack([X, Y], axis=-1)
        for k in range(len(st.offsets)):
            q = p + st.xi[k]
            mu[..., k] &= ~_segments_cross(p, q, *crack)
    phi = damage(mu, family)
    chi = evolve_chi(phi, config.chi_threshold, chi0)
    z = np.zeros(chi0.shape + (2,))
    return PDState(z, z.copy(), z.copy(), mu, phi, chi, 0.0, 0, family, _protected(chi0, config, st))


# ------------------------------------------------------------ integration


class PDForce:
    """Ground-truth force source."""

    def __init__(self, config: PDConfig, stencil: Stencil | None = None):
        self.config = config
        self.stencil = stencil or make_stencil(config.delta, config.spacing)

    def __call__(self, state: PDState) -> np.ndarray:
        return pd_force(state.u, state.mu, state.chi, self.config, self.stencil)


def velocity_verlet_step(state: PDState, force_source, body_force, config: PDConfig, stencil=None, damage_on=True):
    """Kick-drift-kick with the bond/indicator update between drift and force.

    ``force_source(state) -> L``. Nodes outside ``chi`` feel no force and
    stop moving.
    """
    st = stencil or make_stencil(config.delta, config.spacing)
    s = state.copy()
    dt = config.dt
    v_half = s.v + 0.5 * dt * s.a
    s.u = s.u + dt * v_half
    if damage_on:
        s.mu, s.phi = damage_update(s, config, st)
        s.chi = evolve_chi(s.phi, config.chi_threshold, s.chi)
    L = force_source(s)
    s.a = s.chi[..., None] * (L + body_force) / config.rho
    # removed material is frozen in place rather than left in free flight
    s.v = s.chi[..., None] * (v_half + 0.5 * dt * s.a)
    s.t = state.t + dt
    s.step = state.step + 1
    if not (np.isfinite(s.u).all() and np.isfinite(s.v).all()):
        raise SimulationError(s.step)
    return s


@dataclass
class Trajectory:
    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    u: list = field(default_factory=list)
    v: list = field(default_factory=list)
    chi: list = field(default_factory=list)
    phi: list = field(default_factory=list)
    L: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # (step, chi_err, u_err)
    config: PDConfig | None = None
    final_state: PDState | None = None

    def record(self, state: PDState, L):
        self.steps.append(state.step)
        self.times.append(state.t)
        self.u.append(state.u.copy())
        self.v.append(state.v.copy())
        self.chi.append(state.chi.copy())
        self.phi.append(state.phi.copy())
        self.L.append(np.array(L, copy=True))

    def __len__(self):
        return len(self.steps)

    def to_arrays(self) -> dict:
        u, v, L = np.array(self.u), np.array(self.v), np.array(self.L)
        meta = {
            "time": list(map(float, self.times)),
            "step": list(map(int, self.steps)),
            "config": self.config.to_dict() if self.config else None,
            "config_hash": self.config.digest() if self.config else None,
        }
        return {
            "u1": u[..., 0],
            "u2": u[..., 1],
            "v1": v[..., 0],
            "v2": v[..., 1],
            "chi": np.array(self.chi),
            "phi": np.array(self.phi),
            "L1": L[..., 0],
            "L2": L[..., 1],
            "meta": encode_json(meta),
        }

    def save(self, path):
        write_container(path, self.to_arrays())

    @classmethod
    def from_arrays(cls, arrays: dict) -> "Trajectory":
        from .container import decode_json

        meta = decode_json(arrays["meta"])
        tr = cls(config=PDConfig(**meta["config"]) if meta.get("config") else None)
        tr.steps, tr.times = list(meta["step"]), list(meta["time"])
        tr.u = list(np.stack([arrays["u1"], arrays["u2"]], axis=-1))
        tr.v = list(np.stack([arrays["v1"], arrays["v2"]], axis=-1))
        tr.chi, tr.phi = list(arrays["chi"]), list(arrays["phi"])
        tr.L = list(np.stack([arrays["L1"], arrays["L2"]], axis=-1))
        return tr


def relative_error(a, ref) -> float:
    a, ref = np.asarray(a, float), np.asarray(ref, float)
    den = np.linalg.norm(ref)
    num = np.linalg.norm(a - ref)
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return float(num / den)


def simulate(config: PDConfig, force_source, steps=None, every=None, reference=None, state=None):
    """Run the loaded plate and record every ``every`` steps (step 0 included).

    Recorded ``L`` is always the exact internal force of the recorded state,
    whatever drives the dynamics.

    ``reference`` (a :class:`Trajectory` recorded every step) enables the
    per-step relative errors of ``chi`` and ``u``.
    """
    st = make_stencil(config.delta, config.spacing)
    steps = config.steps if steps is None else steps
    every = config.every if every is None else every
    s = state or initial_state(config, st)
    b = traction_body_force(plate_geometry(config)[0], config)
    s.a = s.chi[..., None] * (force_source(s) + b) / config.rho
    traj = Trajectory(config=config)
    traj.record(s, pd_force(s.u, s.mu, s.chi, config, st))
    ref_at = {}
    if reference is not None:
        ref_at = {k: i for i, k in enumerate(reference.steps)}

    def track(state):
        if state.step in ref_at:
            i = ref_at[state.step]
            traj.errors.append(
                (state.step, relative_error(state.chi, reference.chi[i]), relative_error(state.u, reference.u[i]))
            )

    track(s)
    for n in range(1, steps + 1):
        s = velocity_verlet_step(s, force_source, b, config, st)
        if n % every == 0:
            traj.record(s, pd_force(s.u, s.mu, s.chi, config, st))
        track(s)
    traj.final_state = s
    return traj


def run_ground_truth(config: PDConfig, steps=None, every=None, path=None) -> Trajectory:
    traj = simulate(config, PDForce(config), steps, every)
    if path is not None:
        traj.save(path)
    return traj


def run_surrogate(pair, config: PDConfig, steps=None, every=None, reference=None, path=None) -> Trajectory:
    """Same loop with the learned (or wrapped) force source."""
    traj = simulate(config, pair, steps, every, reference)
    if path is not None:
        traj.save(path)
    return traj


# ----------------------------------------------------------- surrogates


class SurrogatePair:
    """Two operator models predicting ``L1`` and ``L2`` from ``(u1, u2)`` and ``chi``.

    ``scales`` are the training-set normalizations of each model.
    """

    def __init__(self, model1, model2, scales1, scales2, coords):
        if model1.config.variant != model2.config.variant:
            raise ValueError("both surrogates must use the same layer type")
        self.models = (model1, model2)
        self.scales = (scales1, scales2)
        self.coords = np.asarray(coords, dtype=float)

    def predict(self, u, chi) -> np.ndarray:
        out = []
        with ad.no_grad():
            for model, sc in zip(self.models, self.scales):
                g = np.asarray(u, dtype=float) / sc.g
                c = np.asarray(chi, dtype=float)
                out.append(model(g, self.coords, c).data[..., 0] * sc.u)
        return np.stack(out, axis=-1) * np.asarray(chi, dtype=float)[..., None]

    def __call__(self, state: PDState) -> np.ndarray:
        return self.predict(state.u, state.chi)


# ------------------------------------------------------------- datasets


def crack_snapshots(config: PDConfig, n_snapshots: int):
    """``n_snapshots`` ground-truth frames as a :class:`FieldSet` ``(u, chi) -> L``."""
    from .datasets import FieldSet, uniform_distance

    traj = run_ground_truth(config, steps=n_snapshots * config.every, every=config.every)
    idx = list(range(1, n_snapshots + 1))  # skip the quiescent frame
    grid = config.grid
    chi = np.array([traj.chi[i] for i in idx])
    meta = {
        "task": "pd",
        "grid": [config.n, config.n],
        "config": config.to_dict(),
        "samples": [{"source": "crack", "step": int(traj.steps[i])} for i in idx],
    }
    return FieldSet(
        grid.coords(),
        np.array([traj.u[i] for i in idx]),
        chi,
        np.array([uniform_distance(c, grid) for c in chi]),
        np.array([traj.L[i] for i in idx]),
        1.0,
        meta,
    )


def sinusoid_field(m, n, component, config: PDConfig, amplitude=None):
    """``c sin(2 m pi x / L) sin(2 n pi y / L)`` in one displacement component."""
    if 2 * max(m, n) >= config.n:
        raise ValueError(f"mode ({m}, {n}) aliases on a {config.n}-point grid")
    c = amplitude if amplitude is not None else 0.01 / 32 * 1e-3
    X, Y = config.grid.mesh()
    L = config.box
    u = np.zeros(X.shape + (2,))
    u[..., component] = c * np.sin(2 * m * math.pi * X / L) * np.sin(2 * n * math.pi * Y / L)
    return u


def gen_sinusoidal_dataset(config: PDConfig, modes: int = 8, amplitude=None):
    """``2 * modes^2`` intact-material samples with ``chi = 1`` everywhere."""
    from .datasets import FieldSet

    if 2 * modes >= config.n:
        raise ValueError(f"{modes} modes alias on a {config.n}-point grid")
    st = make_stencil(config.delta, config.spacing)
    shape = (config.n, config.n)
    chi = np.ones(shape)
    mu = neighbour_valid(shape, st)
    us, Ls, tags = [], [], []
    for comp in (0, 1):
        for m in range(1, modes + 1):
            for n in range(1, modes + 1):
                u = sinusoid_field(m, n, comp, config, amplitude)
                us.append(u)
                Ls.append(pd_force(u, mu, chi, config, st))
                tags.append({"source": "sine", "m": m, "n": n, "component": comp})
    N = len(us)
    meta = {"task": "pd", "grid": list(shape), "config": config.to_dict(), "samples": tags}
    return FieldSet(
        config.grid.coords(),
        np.array(us),
        np.ones((N,) + shape),
        np.full((N,) + shape, np.inf),
        np.array(Ls),
        1.0,
        meta,
    )
