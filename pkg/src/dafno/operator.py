"""Fourier neural operators with explicit domain encoding.

Three layer types share one lift and one projection:

* ``fno``     ``sigma(W h + c + K h)``
* ``edafno``  ``sigma(chi (K(chi h) - h K(chi) + W h + c))`` with per-layer parameters
* ``idafno``  ``h + sigma(chi (...)) / L`` with one parameter block reused ``L`` times

``K`` is the truncated spectral convolution and ``h K(chi)`` applies the
matrix field of :func:`dafno.spectral.spectral_matrix` pointwise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeError, Tensor
from .spectral import SpectralKernel, pointwise_matvec, spectral_conv, spectral_matrix

__all__ = [
    "ModelConfig",
    "LayerParams",
    "OperatorModel",
    "lift",
    "fno_layer",
    "edafno_layer",
    "idafno_layer",
    "dafno_core",
    "project",
    "forward",
    "count_parameters",
]

VARIANTS = ("fno", "edafno", "idafno")


@dataclass
class ModelConfig:
    variant: str = "edafno"
    layers: int = 4
    modes: int = 12
    width: int = 32
    activation: str = "gelu"
    in_channels: int = 2
    out_channels: int = 1
    proj_width: int = 128

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.layers < 1 or self.modes < 1 or self.width < 1:
            raise ValueError("layers, modes and width must all be >= 1")
        if self.activation not in ("relu", "gelu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def shared(self) -> bool:
        return self.variant == "idafno"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text) -> "ModelConfig":
        return cls(**json.loads(text))


class LayerParams:
    def __init__(self, W: Parameter, c: Parameter, kernel: SpectralKernel):
        self.W = W
        self.c = c
        self.kernel = kernel

    def parameters(self):
        return [self.W, self.c, self.kernel.coeffs]


def _uniform(rng, fan_in, shape, name):
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape), name=name)


class OperatorModel:
    """Lift, Fourier layers and a two-layer pointwise projection."""

    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        d, cin = config.width, config.in_channels
        modes = (config.modes, config.modes)
        self.P = _uniform(rng, cin, (cin, d), "lift.P")
        self.p = Parameter(np.zeros(d), name="lift.p")
        n_blocks = 1 if config.shared else config.layers
        self.layers = []
        for l in range(n_blocks):
            tag = "shared" if config.shared else str(l)
            self.layers.append(
                LayerParams(
                    _uniform(rng, d, (d, d), f"layer.{tag}.W"),
                    Parameter(np.zeros(d), name=f"layer.{tag}.c"),
                    SpectralKernel.random(modes, d, d, rng, name=f"layer.{tag}.kernel"),
                )
            )
        hid = config.proj_width
        self.Q1 = _uniform(rng, d, (d, hid), "proj.Q1")
        self.q1 = Parameter(np.zeros(hid), name="proj.q1")
        self.Q2 = _uniform(rng, hid, (hid, config.out_channels), "proj.Q2")
        self.q2 = Parameter(np.zeros(config.out_channels), name="proj.q2")

    def layer(self, l: int) -> LayerParams:
        return self.layers[0] if self.config.shared else self.layers[l]

    def parameters(self):
        out = [self.P, self.p]
        for lp in self.layers:
            out.extend(lp.parameters())
        out.extend([self.Q1, self.q1, self.Q2, self.q2])
        return out

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"{name}: expected {p.shape}, got {value.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def __call__(self, g, coords, chi_s=None):
        return forward(self, g, coords, chi_s)


def count_parameters(model: OperatorModel, part: str = "all") -> int:
    """Real degrees of freedom; complex entries count twice.

    ``part`` is ``"all"``, ``"fourier"``, ``"lift"`` or ``"proj"``.
    """
    total = 0
    for p in model.parameters():
        section = p.name.split(".")[0]
        if part == "fourier" and section != "layer":
            continue
        if part in ("lift", "proj") and section != part:
            continue
        total += p.data.size * (2 if p.is_complex else 1)
    return total


# ----------------------------------------------------------------- blocks


def lift(g, coords, model: OperatorModel) -> Tensor:
    """``h0 = [x, g(x)] P + p`` at every node."""
    g = ad.as_tensor(g)
    coords = ad.as_tensor(coords)
    if coords.ndim == g.ndim - 1:
        coords = Tensor(np.broadcast_to(coords.data, g.shape[:1] + coords.shape))
    if coords.shape[:-1] != g.shape[:-1]:
        raise ShapeError(f"coords {coords.shape} and input {g.shape} are on different grids")
    x = ad.concat([coords, g], axis=-1)
    if x.shape[-1] != model.P.shape[0]:
        raise ShapeError(f"lift expects {model.P.shape[0]} input channels, got {x.shape[-1]}")
    return ad.channel_linear(x, model.P, model.p)


def _batched(h: Tensor, chi_s=None):
    if h.ndim == 3:
        h = h[None]
        if chi_s is not None:
            chi_s = chi_s[None]
        return h, chi_s, True
    return h, chi_s, False


def fno_layer(h, params: LayerParams, model: OperatorModel) -> Tensor:
    h = ad.as_tensor(h)
    z = ad.add(ad.channel_linear(h, params.W, params.c), spectral_conv(h, params.kernel))
    return ad.activation(model.config.activation, z)


def dafno_core(h, chi_s, params: LayerParams) -> Tensor:
    """Pre-activation ``chi (K(chi h) - h K(chi) + W h + c)``."""
    h = ad.as_tensor(h)
    chi_s = ad.as_tensor(chi_s)
    h, chi_s, squeeze = _batched(h, chi_s)
    if chi_s.shape != h.shape[:-1]:
        raise ShapeError(f"characteristic field {chi_s.shape} does not match grid {h.shape[:-1]}")
    chi_c = chi_s[..., None]
    interior = spectral_conv(ad.mul(chi_c, h), params.kernel)
    M = spectral_matrix(chi_s, params.kernel)
    self_term = pointwise_matvec(h, M)
    local = ad.channel_linear(h, params.W, params.c)
    z = ad.mul(chi_c, ad.add(ad.sub(interior, self_term), local))
    return z[0] if squeeze else z


def edafno_layer(h, chi_s, params: LayerParams, model: OperatorModel) -> Tensor:
    return ad.activation(model.config.activation, dafno_core(h, chi_s, params))


def idafno_layer(h, chi_s, shared_params: LayerParams, model: OperatorModel) -> Tensor:
    tau = 1.0 / model.config.layers
    update = ad.activation(model.config.activation, dafno_core(h, chi_s, shared_params))
    return ad.add(h, ad.mul(update, tau))


def project(hL, model: OperatorModel) -> Tensor:
    """``Q2 sigma(Q1 h + q1) + q2`` at every node."""
    hL = ad.as_tensor(hL)
    if hL.shape[-1] != model.Q1.shape[0]:
        raise ShapeError(f"projection expects {model.Q1.shape[0]} channels, got {hL.shape[-1]}")
    z = ad.activation(model.config.activation, ad.channel_linear(hL, model.Q1, model.q1))
    return ad.channel_linear(z, model.Q2, model.q2)


def forward(model: OperatorModel, g, coords, chi_s=None) -> Tensor:
    """Full evaluation; ``g`` is ``[n1, n2, d_g]`` or ``[B, n1, n2, d_g]``.

    ``chi_s`` is ignored by the ``fno`` variant (feed it as an input channel
    for the masked ablations instead).
    """
    cfg = model.config
    g = ad.as_tensor(g)
    single = g.ndim == 3
    if single:
        g = g[None]
        if chi_s is not None:
            chi_s = ad.as_tensor(chi_s)[None]
    h = lift(g, coords, model)
    if cfg.variant != "fno":
        if chi_s is None:
            raise ValueError(f"variant {cfg.variant} needs a characteristic field")
        chi_s = ad.as_tensor(chi_s)
    for l in range(cfg.layers):
        params = model.layer(l)
        if cfg.variant == "fno":
            h = fno_layer(h, params, model)
        elif cfg.variant == "edafno":
            h = edafno_layer(h, chi_s, params, model)
        else:
            h = idafno_layer(h, chi_s, params, model)
    u = project(h, model)
    return u[0] if single else u
