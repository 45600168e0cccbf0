"""Loss, optimizers, schedule, training loop and the multi-seed protocol."""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .container import decode_json, encode_json, read_container, write_container
from .operator import ModelConfig, OperatorModel, forward

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "RunReport",
    "Scales",
    "TrainingDiverged",
    "VARIANTS",
    "rel_l2",
    "rel_l2_np",
    "adam_step",
    "sgd_step",
    "lr_at",
    "model_inputs",
    "build_model",
    "predict",
    "evaluate",
    "train",
    "run_protocol",
    "sweep_beta",
    "classify_sweep",
    "grid_search",
    "save_checkpoint",
    "load_checkpoint",
    "write_curve_csv",
]

EPOCH_CAP = 500
VARIANTS = ("edafno", "idafno", "fno-mask", "fno-smooth")


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch, message=None):
        super().__init__(message or f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 5e-3
    decay: float = 0.5
    weight_decay: float = 1e-5
    epochs: int = 200
    batch_size: int = 10
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    beta: float | None = 10.0
    variant: str = "edafno"
    model: dict = field(default_factory=dict)
    optimizer: str = "adamw"
    allow_long: bool = False
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("invalid training config:\n  " + "\n  ".join(errors))

    def validate(self) -> list:
        errs = []
        if not self.lr >= 0:
            errs.append(f"lr: must be >= 0, got {self.lr}")
        if not 0 < self.decay <= 1:
            errs.append(f"decay: must be in (0, 1], got {self.decay}")
        if not self.weight_decay >= 0:
            errs.append(f"weight_decay: must be >= 0, got {self.weight_decay}")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            errs.append(f"epochs: must be a positive integer, got {self.epochs}")
        elif self.epochs > EPOCH_CAP and not self.allow_long:
            errs.append(f"epochs: {self.epochs} exceeds the cap of {EPOCH_CAP} (pass allow_long)")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            errs.append(f"batch_size: must be a positive integer, got {self.batch_size}")
        if not self.seeds:
            errs.append("seeds: need at least one seed")
        if self.beta is not None and not self.beta > 0:
            errs.append(f"beta: must be positive or null, got {self.beta}")
        if self.variant not in VARIANTS:
            errs.append(f"variant: must be one of {VARIANTS}, got {self.variant!r}")
        if self.optimizer not in ("adamw", "sgd"):
            errs.append(f"optimizer: must be 'adamw' or 'sgd', got {self.optimizer!r}")
        if not isinstance(self.model, dict):
            errs.append("model: must be an object of ModelConfig fields")
        else:
            unknown = set(self.model) - set(ModelConfig.__dataclass_fields__)
            if unknown:
                errs.append(f"model: unknown fields {sorted(unknown)}")
        return errs

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"invalid training config:\n  unknown fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class RunReport:
    curve: list = field(default_factory=list)  # (epoch, train, val, lr)
    test_rel_l2: float | None = None
    best_epoch: int | None = None
    best_val: float | None = None
    per_seed: dict = field(default_factory=dict)
    mean: float | None = None
    std: float | None = None

    def summary(self) -> dict:
        return {
            "test_rel_l2": self.test_rel_l2,
            "best_epoch": self.best_epoch,
            "best_val": self.best_val,
            "per_seed": {str(k): v for k, v in self.per_seed.items()},
            "mean": self.mean,
            "std": self.std,
        }


# -------------------------------------------------------------------- loss


def _mask_shape(mask, pred_shape):
    mask = np.asarray(mask, dtype=float)
    if mask.ndim == len(pred_shape) - 1:
        mask = mask[..., None]
    return mask


def rel_l2(pred, truth, mask=None) -> ad.Tensor:
    """Differentiable mean over the batch of ``|(p - t) m| / |t m|``.

    Accepts ``[n1, n2, d]`` or ``[B, n1, n2, d]``; ``mask`` omits the channel axis.
    """
    pred = ad.as_tensor(pred)
    truth = np.asarray(truth.data if isinstance(truth, ad.Tensor) else truth, dtype=float)
    if pred.shape != truth.shape:
        raise ad.ShapeError(f"prediction {pred.shape} and truth {truth.shape} differ")
    single = pred.ndim == 3
    m = np.ones_like(truth) if mask is None else _mask_shape(mask, truth.shape) * np.ones_like(truth)
    if single:
        pred, truth, m = pred[None], truth[None], m[None]
    axes = tuple(range(1, truth.ndim))
    den = np.sqrt(np.sum((truth * m) ** 2, axis=axes))
    if np.any(den == 0):
        raise ValueError("truth has zero norm over the mask")
    diff = ad.mul(ad.sub(pred, truth), m)
    num = ad.sqrt(ad.sum(ad.square(diff), axis=axes))
    return ad.mean(ad.div(num, den))


def rel_l2_np(pred, truth, mask=None) -> np.ndarray:
    """Per-sample relative L2 error (no tape)."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ")
    if pred.ndim == 3:
        pred, truth = pred[None], truth[None]
        mask = None if mask is None else np.asarray(mask)[None]
    m = 1.0 if mask is None else _mask_shape(mask, truth.shape)
    axes = tuple(range(1, truth.ndim))
    den = np.sqrt(np.sum((truth * m) ** 2, axis=axes))
    if np.any(den == 0):
        raise ValueError("truth has zero norm over the mask")
    return np.sqrt(np.sum(((pred - truth) * m) ** 2, axis=axes)) / den


# -------------------------------------------------------------- optimizers


def _real_view(a):
    return a.view(np.float64) if a.dtype.kind == "c" else a


def adam_step(params, state: OptimizerState, lr: float, weight_decay: float = 0.0):
    """One bias-corrected Adam step with decoupled weight decay.

    Complex parameters are updated componentwise through their float64 view.
    """
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {getattr(p, 'name', '?')} has no gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p in params:
        key = p.name
        w = _real_view(p.data)
        g = _real_view(np.asarray(p.grad, dtype=p.data.dtype))
        if key not in state.m:
            state.m[key] = np.zeros_like(w)
            state.v[key] = np.zeros_like(w)
        m, v = state.m[key], state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            w *= 1.0 - lr * weight_decay
        w -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def sgd_step(params, lr: float, weight_decay: float = 0.0):
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {getattr(p, 'name', '?')} has no gradient")
    for p in params:
        w = _real_view(p.data)
        if weight_decay:
            w *= 1.0 - lr * weight_decay
        w -= lr * _real_view(np.asarray(p.grad, dtype=p.data.dtype))


def lr_at(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.lr * config.decay ** (epoch // 100)


# --------------------------------------------------------- model plumbing


def _variant_model(variant: str) -> str:
    return {"edafno": "edafno", "idafno": "idafno", "fno-mask": "fno", "fno-smooth": "fno"}[variant]


def model_inputs(data, variant: str, beta):
    """``(g, chi_layer, mask)`` for a dataset under one of the four variants.

    DAFNO variants receive the indicator inside every layer; the FNO
    ablations append it (sharp or smoothed) as an extra input channel. The
    loss mask is always the sharp indicator.
    """
    chi = data.chi
    chi_s = data.with_beta(beta).chi_smooth if beta is not None else chi
    if variant in ("edafno", "idafno"):
        return data.g, chi_s, chi
    if variant == "fno-mask":
        return np.concatenate([data.g, chi[..., None]], axis=-1), None, chi
    if variant == "fno-smooth":
        return np.concatenate([data.g, chi_s[..., None]], axis=-1), None, chi
    raise ValueError(f"unknown variant {variant!r}")


def build_model(config: TrainConfig, data, seed) -> OperatorModel:
    extra = 1 if config.variant.startswith("fno") else 0
    fields = dict(config.model)
    fields["variant"] = _variant_model(config.variant)
    fields["in_channels"] = 2 + data.g.shape[-1] + extra
    fields["out_channels"] = data.u.shape[-1]
    return OperatorModel(ModelConfig(**fields), seed)


@dataclass
class Scales:
    """Scalar input/target normalization fixed from the training set."""

    g: float = 1.0
    u: float = 1.0

    @classmethod
    def fit(cls, data):
        m = data.chi[..., None] > 0
        gs = float(np.sqrt(np.mean(data.g[np.broadcast_to(m, data.g.shape)] ** 2)))
        us = float(np.sqrt(np.mean(data.u[np.broadcast_to(m, data.u.shape)] ** 2)))
        return cls(gs if gs > 0 else 1.0, us if us > 0 else 1.0)


def _prepare(g, scales: Scales, n_phys: int):
    g = np.array(g, dtype=float, copy=True)
    g[..., :n_phys] /= scales.g
    return g


def predict(model, data, variant: str, beta, scales: Scales, batch: int = 20, coords=None) -> np.ndarray:
    g, chi_l, _ = model_inputs(data, variant, beta)
    g = _prepare(g, scales, data.g.shape[-1])
    coords = data.coords if coords is None else coords
    out = []
    with ad.no_grad():
        for s in range(0, len(g), batch):
            c = None if chi_l is None else chi_l[s : s + batch]
            out.append(forward(model, g[s : s + batch], coords, c).data * scales.u)
    return np.concatenate(out)


def evaluate(model, data, variant, beta, scales, batch: int = 20) -> np.ndarray:
    """Per-sample relative L2 error over the sharp domain."""
    pred = predict(model, data, variant, beta, scales, batch)
    return rel_l2_np(pred, data.u, data.chi)


# ------------------------------------------------------------------ train


def train(model: OperatorModel, datasets, config: TrainConfig, seed: int = 0, log=None):
    """Fit ``model`` on ``datasets = (train, val[, test])``.

    Returns ``(report, best_state, scales)``; ``model`` is left holding the
    best-validation parameters.
    """
    train_set, val_set = datasets[0], datasets[1]
    test_set = datasets[2] if len(datasets) > 2 else None
    variant, beta = config.variant, config.beta
    scales = Scales.fit(train_set)
    g, chi_l, mask = model_inputs(train_set, variant, beta)
    g = _prepare(g, scales, train_set.g.shape[-1])
    u = train_set.u / scales.u
    coords = train_set.coords
    params = model.parameters()
    state = OptimizerState()
    rng = np.random.default_rng(seed)
    report = RunReport()
    best_state, best_val = model.state_dict(), math.inf
    n = len(g)
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        order = rng.permutation(n)
        errs = []
        for s in range(0, n, config.batch_size):
            idx = np.sort(order[s : s + config.batch_size])
            model.zero_grad()
            c = None if chi_l is None else chi_l[idx]
            pred = forward(model, g[idx], coords, c)
            loss = rel_l2(pred, u[idx], mask[idx])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(epoch)
            ad.backward(loss)
            if config.optimizer == "adamw":
                adam_step(params, state, lr, config.weight_decay)
            else:
                sgd_step(params, lr, config.weight_decay)
            errs.append(float(loss.data) * len(idx))
        train_err = sum(errs) / n
        val_err = float(np.mean(evaluate(model, val_set, variant, beta, scales)))
        if not np.isfinite(val_err):
            raise TrainingDiverged(epoch, f"non-finite validation error at epoch {epoch}")
        report.curve.append((epoch, train_err, val_err, lr))
        if val_err < best_val:
            best_val, best_state = val_err, model.state_dict()
            report.best_epoch = epoch
        if log:
            log(epoch, train_err, val_err, lr)
    report.best_val = best_val
    model.load_state_dict(best_state)
    if test_set is not None:
        report.test_rel_l2 = float(np.mean(evaluate(model, test_set, variant, beta, scales)))
    return report, best_state, scales


# ------------------------------------------------------------ checkpoints


def save_checkpoint(path, model: OperatorModel, scales: Scales, config: TrainConfig | None = None):
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    arrays["config"] = encode_json(json.loads(model.config.to_json()))
    arrays["scales"] = np.array([scales.g, scales.u])
    if config is not None:
        arrays["train_config"] = encode_json(json.loads(config.to_json()))
    write_container(path, arrays)


def load_checkpoint(path):
    """Returns ``(model, scales, train_config or None)``."""
    arrays = read_container(path)
    model = OperatorModel(ModelConfig(**decode_json(arrays["config"])), 0)
    model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
    s = arrays["scales"]
    tc = TrainConfig.from_dict(decode_json(arrays["train_config"])) if "train_config" in arrays else None
    return model, Scales(float(s[0]), float(s[1])), tc


def write_curve_csv(path, report: RunReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_rel_l2", "val_rel_l2", "lr"])
        for row in report.curve:
            w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


# --------------------------------------------------------------- protocol


def run_protocol(config: TrainConfig, datasets, out_dir=None, log=None):
    """Train once per seed and aggregate test errors.

    With ``out_dir`` set, writes ``seed<k>_metrics.csv``, ``seed<k>.ckpt``
    and ``aggregate.csv`` (``seed,test_rel_l2``).
    Returns ``(report, models)`` where ``models[seed] = (model, scales)``.
    """
    if not config.seeds:
        raise ValueError("need at least one seed")
    agg = RunReport()
    models = {}
    tests = []
    for k, seed in enumerate(config.seeds):
        model = build_model(config, datasets[0], seed)
        rep, _, scales = train(model, datasets, config, seed=seed, log=log)
        tests.append(rep.test_rel_l2)
        agg.per_seed[seed] = rep.test_rel_l2
        models[seed] = (model, scales)
        if k == 0:
            agg.curve = rep.curve
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            write_curve_csv(os.path.join(out_dir, f"seed{seed}_metrics.csv"), rep)
            save_checkpoint(os.path.join(out_dir, f"seed{seed}.ckpt"), model, scales, config)
    tests = np.array(tests, dtype=float)
    agg.mean = float(np.mean(tests))
    agg.test_rel_l2 = agg.mean
    agg.std = float(np.std(tests, ddof=1)) if len(tests) >= 2 else None
    if out_dir is not None:
        with open(os.path.join(out_dir, "aggregate.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "test_rel_l2"])
            for seed, t in zip(config.seeds, tests):
                w.writerow([seed, repr(float(t))])
    return agg, models


SWEEP_HEADER = ["beta", "lr", "decay", "weight_decay", "train_rel_l2", "test_rel_l2"]


def sweep_beta(config: TrainConfig, betas, datasets, seed: int = 0, out_path=None, log=None) -> list:
    """One training run per ``beta`` (duplicates run independently).

    Each row reports the best-validation model's mean error on the train
    and test splits.
    """
    rows = []
    for k, beta in enumerate(betas):
        cfg = config.replace(beta=float(beta))
        model = build_model(cfg, datasets[0], seed + k)
        rep, _, scales = train(model, datasets, cfg, seed=seed + k, log=log)
        tr = float(np.mean(evaluate(model, datasets[0], cfg.variant, cfg.beta, scales)))
        rows.append(
            {
                "beta": float(beta),
                "lr": cfg.lr,
                "decay": cfg.decay,
                "weight_decay": cfg.weight_decay,
                "train_rel_l2": tr,
                "test_rel_l2": rep.test_rel_l2,
            }
        )
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SWEEP_HEADER)
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return rows


def classify_sweep(rows, key: str = "test_rel_l2", plateau_tol: float = 0.1) -> str:
    """``"interior"`` if the best beta is not at either end of the sorted sweep,
    ``"plateau"`` if the end-point optimum is within ``plateau_tol`` (relative)
    of its neighbour, else ``"boundary"``."""
    rows = sorted(rows, key=lambda r: r["beta"])
    errs = np.array([r[key] for r in rows], dtype=float)
    i = int(np.argmin(errs))
    if 0 < i < len(errs) - 1:
        return "interior"
    if len(errs) == 1:
        return "plateau"
    j = 1 if i == 0 else len(errs) - 2
    return "plateau" if errs[j] - errs[i] <= plateau_tol * errs[i] else "boundary"


def grid_search(config: TrainConfig, grid: dict, datasets, seed: int = 0) -> tuple:
    """Exhaustive search over ``grid`` (field -> values), selected by validation error.

    Returns ``(best_config, results)`` with one ``(overrides, best_val)`` per point.
    """
    keys = sorted(grid)
    results = []
    best = (math.inf, config)
    for values in itertools.product(*(grid[k] for k in keys)):
        over = dict(zip(keys, values))
        cfg = config.replace(**over)
        model = build_model(cfg, datasets[0], seed)
        rep, _, _ = train(model, datasets[:2], cfg, seed=seed)
        results.append((over, rep.best_val))
        if rep.best_val < best[0]:
            best = (rep.best_val, cfg)
    return best[1], results
