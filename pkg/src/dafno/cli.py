"""Command-line entry point: ``dafno <command> [flags]``.

Commands: ``gen-data``, ``train``, ``eval``, ``simulate``, ``sweep-beta``,
``convert``. Configuration precedence is built-in defaults, then the JSON
file given by ``--config``, then explicit flags. Every run writes one
``manifest.json`` next to its outputs.

Exit codes: 0 success, 2 usage or config error, 3 numerical abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .container import ContainerError, read_container
from .datasets import FieldSet, SolverError, convert_raw, gen_poisson_dataset, split
from .peridynamics import PDConfig, SimulationError, SurrogatePair, Trajectory, run_ground_truth, run_surrogate
from .training import (
    TrainConfig,
    TrainingDiverged,
    classify_sweep,
    load_checkpoint,
    predict,
    rel_l2_np,
    run_protocol,
    sweep_beta,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
DATA_FILE = "data.dafn"


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def _hash_inputs(paths, flags) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(flags, sort_keys=True, default=str).encode())
    for p in paths:
        if p and os.path.isfile(p):
            with open(p, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def write_manifest(out_dir, command, config, inputs, outputs, started, extra=None):
    manifest = {
        "command": command,
        "config": config,
        "input_hash": _hash_inputs(inputs, config),
        "inputs": list(inputs),
        "outputs": sorted(outputs),
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return manifest


def write_pgm(path, field) -> dict:
    """8-bit binary PGM, min/max normalized; rows run top (max y) to bottom."""
    f = np.asarray(field, dtype=float)
    lo, hi = float(np.min(f)), float(np.max(f))
    span = hi - lo if hi > lo else 1.0
    img = np.round((f - lo) / span * 255).astype(np.uint8).T[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())
    return {"min": lo, "max": hi}


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _beta(text):
    if text.lower() in ("none", "null", "sharp"):
        return None
    return float(text)


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def pd_config_for(grid: int, **kw) -> PDConfig:
    """Desk configuration rescaled to ``grid`` nodes per side (three-cell horizon)."""
    base = PDConfig.desk()
    return base.replace(n=grid, delta=3 * base.box / grid, dt=base.dt * 32 / grid, **kw)


# --------------------------------------------------------------- gen-data


def cmd_gen_data(args):
    started = _now()
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, DATA_FILE)
    cfg = {"task": args.task, "grid": args.grid, "samples": args.samples, "seed": args.seed}
    if args.task == "poisson":
        if args.samples is None:
            raise UsageError("--samples is required for --task poisson")
        data = gen_poisson_dataset(args.samples, args.grid, args.seed, beta=args.beta)
        cfg["beta"] = args.beta
    else:
        from .datasets import gen_pd_dataset
        from .peridynamics import crack_snapshots, gen_sinusoidal_dataset

        pdc = pd_config_for(args.grid, traction=args.traction)
        cfg["pd_config"] = pdc.to_dict()
        if args.task == "pd-crack":
            data = crack_snapshots(pdc, args.samples or 100)
        elif args.task == "pd-sine":
            modes = args.modes
            if args.samples is not None:
                m = int(round(np.sqrt(args.samples / 2)))
                if 2 * m * m != args.samples:
                    raise UsageError("--samples for pd-sine must be 2*M^2 (M modes per axis)")
                modes = m
            data = gen_sinusoidal_dataset(pdc, modes)
        else:
            data = gen_pd_dataset(pdc, n_crack=args.samples or 100, modes=args.modes)
    data.save(path)
    write_manifest(args.out, "gen-data", cfg, [], [path], started, {"n_samples": len(data)})
    print(f"wrote {len(data)} samples to {path}")


# ------------------------------------------------------------------ train


def _load_train_config(args) -> TrainConfig:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
    over = {
        "variant": args.variant,
        "beta": args.beta if args.beta is not ... else ...,
        "seeds": args.seeds,
        "epochs": args.epochs,
        "lr": args.lr,
        "decay": args.decay,
        "weight_decay": args.weight_decay,
        "batch_size": args.batch_size,
        "allow_long": True if args.allow_long else None,
    }
    for k, v in over.items():
        if v is not None and v is not ...:
            raw[k] = v
    if getattr(args, "data", None):
        raw.setdefault("data", {})
        raw["data"] = dict(raw["data"], path=args.data)
    for key in ("fractions", "split_seed", "target"):
        val = getattr(args, key, None)
        if val is not None:
            raw.setdefault("data", {})
            raw["data"] = dict(raw["data"], **{key: val})
    try:
        return TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _datasets(cfg: TrainConfig):
    d = cfg.data or {}
    if "path" not in d:
        raise UsageError("no dataset: pass --data or set data.path in the config")
    data = FieldSet.load(d["path"])
    target = d.get("target")
    if target is not None:
        data = FieldSet(data.coords, data.g, data.chi, data.dist, data.u[..., [int(target)]], data.beta, data.meta)
    parts = split(data, d.get("fractions", (0.8, 0.1, 0.1)), d.get("split_seed", 0))
    return data, parts


def cmd_train(args):
    started = _now()
    cfg = _load_train_config(args)
    data, parts = _datasets(cfg)
    os.makedirs(args.out, exist_ok=True)

    def log(epoch, tr, va, lr):
        if args.verbose:
            print(f"epoch {epoch:4d}  train {tr:.5f}  val {va:.5f}  lr {lr:.3g}", flush=True)

    report, _ = run_protocol(cfg, parts, out_dir=args.out, log=log)
    # record the training grid alongside every checkpoint
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(dict(report.summary(), grid=list(data.grid_shape)), fh, indent=2)
    outputs = [os.path.join(args.out, f) for f in os.listdir(args.out) if f != "manifest.json"]
    write_manifest(args.out, "train", json.loads(cfg.to_json()), [cfg.data["path"]], outputs, started)
    std = "n/a" if report.std is None else f"{report.std:.5f}"
    print(f"test rel-L2 mean {report.mean:.5f} std {std} over seeds {cfg.seeds}")


# ------------------------------------------------------------------- eval


def _train_grid(ckpt_path):
    rep = os.path.join(os.path.dirname(os.path.abspath(ckpt_path)), "report.json")
    if os.path.isfile(rep):
        with open(rep) as fh:
            return tuple(json.load(fh).get("grid", ()))
    return None


def cmd_eval(args):
    started = _now()
    model, scales, tcfg = load_checkpoint(args.checkpoint)
    tcfg = tcfg or TrainConfig()
    data = FieldSet.load(args.data)
    if tcfg.data.get("target") is not None:
        t = int(tcfg.data["target"])
        data = FieldSet(data.coords, data.g, data.chi, data.dist, data.u[..., [t]], data.beta, data.meta)
    if args.subset != "all":
        parts = split(data, tcfg.data.get("fractions", (0.8, 0.1, 0.1)), tcfg.data.get("split_seed", 0))
        data = parts[("train", "val", "test").index(args.subset)]
    grid = _train_grid(args.checkpoint)
    if args.resolution is not None:
        if data.meta.get("task") != "poisson":
            raise UsageError("--resolution regenerates Poisson samples only")
        idx = [s["index"] for s in data.meta["samples"]]
        full = gen_poisson_dataset(max(idx) + 1, args.resolution, data.meta["seed"], beta=data.beta)
        data = full.subset(idx)
    elif grid and tuple(data.grid_shape) != tuple(grid):
        raise UsageError(
            f"dataset grid {tuple(data.grid_shape)} differs from training grid {tuple(grid)}; "
            "pass --resolution for a super-resolution evaluation"
        )
    pred = predict(model, data, tcfg.variant, tcfg.beta, scales)
    mask = None if args.no_mask else data.chi
    errs = rel_l2_np(pred, data.u, mask)
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "eval.csv")
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "rel_l2"])
        for i, e in enumerate(errs):
            w.writerow([i, repr(float(e))])
    outputs, images = [out_csv], {}
    if args.dump_fields:
        for i in range(min(args.dump_count, len(data))):
            for name, f in (("pred", pred[i, ..., 0]), ("truth", data.u[i, ..., 0])):
                p = os.path.join(args.out, f"sample{i}_{name}.pgm")
                images[os.path.basename(p)] = write_pgm(p, f * (data.chi[i] if mask is not None else 1))
                outputs.append(p)
            p = os.path.join(args.out, f"sample{i}_error.pgm")
            err = np.abs(pred[i, ..., 0] - data.u[i, ..., 0]) * (data.chi[i] if mask is not None else 1)
            images[os.path.basename(p)] = write_pgm(p, err)
            outputs.append(p)
    mean = float(np.mean(errs))
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    write_manifest(
        args.out, "eval", flags, [args.checkpoint, args.data], outputs, started, {"mean_rel_l2": mean, "images": images}
    )
    print(f"mean rel-L2 {mean:.6f} over {len(errs)} samples")


# --------------------------------------------------------------- simulate


def cmd_simulate(args):
    started = _now()
    pdc = pd_config_for(args.grid, traction=args.traction, symmetric=not args.no_symmetric)
    if args.steps is not None:
        pdc = pdc.replace(steps=args.steps)
    if args.every is not None:
        pdc = pdc.replace(every=args.every)
    os.makedirs(args.out, exist_ok=True)
    reference = Trajectory.from_arrays(read_container(args.reference)) if args.reference else None
    if args.force_source == "pd":
        force = None
    else:
        if not args.surrogate or len(args.surrogate.split(",")) != 2:
            raise UsageError("--force-source surrogate needs --surrogate L1.ckpt,L2.ckpt")
        loaded = [load_checkpoint(p) for p in args.surrogate.split(",")]
        force = SurrogatePair(loaded[0][0], loaded[1][0], loaded[0][1], loaded[1][1], pdc.grid.coords())
    path = os.path.join(args.out, "trajectory.dafn")
    try:
        if force is None:
            from .peridynamics import PDForce, simulate

            traj = simulate(pdc, PDForce(pdc), reference=reference)
            traj.save(path)
        else:
            traj = run_surrogate(force, pdc, reference=reference, path=path)
    except SimulationError as exc:
        raise SimulationError(exc.step, f"simulation unstable; last stable step {exc.step - 1}") from None
    outputs = [path]
    if reference is not None:
        ep = os.path.join(args.out, "errors.csv")
        with open(ep, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "chi_rel_err", "u_rel_err"])
            for row in traj.errors:
                w.writerow([row[0], repr(row[1]), repr(row[2])])
        outputs.append(ep)
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    flags["pd_config"] = pdc.to_dict()
    write_manifest(args.out, "simulate", flags, [p for p in [args.reference] if p], outputs, started)
    print(f"wrote {len(traj)} snapshots to {path}")


# ------------------------------------------------------------- sweep-beta


def cmd_sweep_beta(args):
    started = _now()
    cfg = _load_train_config(args)
    _, parts = _datasets(cfg)
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "sweep.csv")
    rows = sweep_beta(cfg, args.betas, parts, seed=cfg.seeds[0], out_path=out_csv)
    verdict = classify_sweep(rows)
    write_manifest(
        args.out, "sweep-beta", dict(json.loads(cfg.to_json()), betas=args.betas), [cfg.data["path"]],
        [out_csv], started, {"verdict": verdict},
    )
    print(f"beta sweep: {verdict}")


# ---------------------------------------------------------------- convert


def cmd_convert(args):
    started = _now()
    arrays = convert_raw(args.input, args.out)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    write_manifest(out_dir, "convert", {"input": args.input}, [], [args.out], started, {"arrays": sorted(arrays)})
    print(f"wrote {len(arrays)} arrays to {args.out}")


# ----------------------------------------------------------------- parser


def _train_flags(p):
    p.add_argument("--config", help="JSON training config (see README for the schema)")
    p.add_argument("--data", help="dataset container")
    p.add_argument("--variant", choices=["edafno", "idafno", "fno-mask", "fno-smooth"])
    p.add_argument("--beta", type=_beta, default=..., help="smoothing coefficient, or 'none' for sharp")
    p.add_argument("--seeds", type=_ints)
    p.add_argument("--epochs", type=int)
    p.add_argument("--allow-long", action="store_true", help="lift the 500-epoch cap")
    p.add_argument("--lr", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--fractions", type=_floats)
    p.add_argument("--split-seed", type=int, dest="split_seed")
    p.add_argument("--target", type=int, help="train on a single target channel")
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dafno", description=__doc__.split("\n")[0])
    parser.add_argument("--threads", type=int, default=1, help="worker cap (computation is single-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset container")
    p.add_argument("--task", choices=["poisson", "pd", "pd-crack", "pd-sine"], required=True)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--traction", type=float, default=4e6)
    p.add_argument("--modes", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="multi-seed training run")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subset", choices=["all", "train", "val", "test"], default="all")
    p.add_argument("--resolution", type=int)
    p.add_argument("--no-mask", action="store_true")
    p.add_argument("--dump-fields", action="store_true")
    p.add_argument("--dump-count", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="crack-growth simulation")
    p.add_argument("--force-source", choices=["pd", "surrogate"], required=True)
    p.add_argument("--surrogate", help="two checkpoints L1,L2")
    p.add_argument("--traction", type=float, default=4e6)
    p.add_argument("--steps", type=int)
    p.add_argument("--every", type=int)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--reference")
    p.add_argument("--no-symmetric", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-beta", help="smoothing-coefficient sweep")
    _train_flags(p)
    p.add_argument("--betas", type=_floats, default=[5, 10, 20, 50, 100])
    p.set_defaults(func=cmd_sweep_beta)

    p = sub.add_parser("convert", help="pack raw arrays + manifest.json into a container")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, SimulationError, SolverError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ContainerError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
