"""
Command-line front end.

Subcommands ``run``, ``landscape``, ``sweep`` and ``check``. Configuration
comes from an optional flat JSON file; any field can be overridden by the
flag of the same name. Exit status is 0 on success, 2 for usage or
configuration errors and 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import secrets
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .devices import DEFAULT_KERNEL, CrosstalkModel
from .distances import LossKind
from .errors import InvalidDimensionError, NumericalFailure, UnitaryMeshError
from .experiments import (
    JOBS_ENV,
    TrialConfig,
    batch_report,
    config_from_flat,
    config_to_flat,
    delta_sweep,
    pca_trajectory,
    run_trials,
)
from .gradients import GradientMode, LossObjective, gradient_check, parse_delta

logger = logging.getLogger("unitary_mesh")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
MANIFEST_SCHEMA = 1


class UsageError(Exception):
    pass


def _bool(text) -> bool:
    t = str(text).lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="flat JSON config file")
    p.add_argument("--arch", choices=["mplc", "clements"])
    p.add_argument("--n", type=int, help="number of modes")
    p.add_argument("--m", type=int, help="number of layers")
    p.add_argument("--loss", choices=[k.value for k in LossKind])
    p.add_argument("--grad", help="'analytic', 'fd' (with --delta) or 'fd:<delta>'")
    p.add_argument("--delta", help="finite-difference step, e.g. 2^-10")
    p.add_argument("--crosstalk", type=_bool, help="apply the default nearest-neighbor kernel")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="base seed (drawn at random and recorded if absent)")
    p.add_argument("--record-history", dest="record_history", type=_bool)
    p.add_argument("--vary-target", dest="vary_target", type=_bool)
    p.add_argument("--output-phases", dest="output_phases", type=_bool)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--history-size", dest="history_size", type=int)
    p.add_argument("--grad-tol", dest="grad_tol", type=float)
    p.add_argument("--ftol", type=float)
    p.add_argument("--history-stride", dest="history_stride", type=int)
    p.add_argument("--jobs", type=int, help=f"concurrent trials (env {JOBS_ENV} takes precedence)")
    p.add_argument("--out", type=Path, required=True, help="output directory")


_FLAG_KEYS = (
    "arch", "n", "m", "loss", "grad", "delta", "crosstalk", "trials", "seed",
    "record_history", "vary_target", "output_phases",
    "max_iterations", "history_size", "grad_tol", "ftol", "history_stride",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unitary-mesh", description="Numerical configuration of programmable unitary meshes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a batch of optimization trials")
    _add_config_flags(run)

    sweep = sub.add_parser("sweep", help="repeat a batch over finite-difference steps")
    _add_config_flags(sweep)
    sweep.add_argument(
        "--deltas",
        default=",".join(f"2^-{k}" for k in (6, 9, 12, 15, 18)),
        help="comma-separated steps",
    )

    land = sub.add_parser("landscape", help="PCA projection and loss grid for one recorded trial")
    land.add_argument("results", type=Path, help="directory written by 'run' with --record-history true")
    land.add_argument("--trial", type=int, default=0)
    land.add_argument("--resolution", type=int, default=41)
    land.add_argument("--out", type=Path, help="output file (default <results>/trajectory.json)")

    check = sub.add_parser("check", help="gradient check and invariant suite")
    check.add_argument("--trials", type=int, default=3)
    check.add_argument("--seed", type=int, default=0)
    return parser


# Config resolution


def _load_flat(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a JSON object")
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise UsageError(f"{path}: config must be flat, field {nested[0]!r} is an object")
    return data


def resolve_config(args) -> tuple[TrialConfig, dict]:
    flat = _load_flat(getattr(args, "config", None))
    for key in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            flat[key] = value
    if isinstance(flat.get("grad"), str) and flat["grad"].lower().startswith("fd:"):
        flat["delta"] = flat["grad"][3:]
        flat["grad"] = "fd"
    if flat.get("delta") is not None:
        try:
            flat["delta"] = parse_delta(flat["delta"])
        except ValueError as exc:
            raise UsageError(f"field 'delta': {exc}") from exc
        flat.setdefault("grad", "fd")
    if flat.get("seed") is None:
        flat["seed"] = secrets.randbits(63)
        logger.info("no seed given, using %d", flat["seed"])
    try:
        cfg = config_from_flat(flat)
    except (UnitaryMeshError, ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    return cfg, config_to_flat(cfg)


def _jobs(args) -> int | None:
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"{JOBS_ENV} must be an integer, got {env!r}") from exc
    return args.jobs


# Artifacts


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=False) + "\n")
    return path


def write_traces(path: Path, results) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "iteration", "loss"])
        for r in results:
            for i, v in enumerate(r.result.trace):
                w.writerow([r.trial, i, repr(float(v))])
    return path


def write_manifest(out: Path, flat: dict, files: list[Path], extra: dict | None = None) -> Path:
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "version": __version__,
        "config": flat,
        "output_directory": str(out),
        "files": [{"path": f.name, "sha256": _sha256(f)} for f in files],
    }
    if extra:
        manifest.update(extra)
    return write_json(out / "manifest.json", manifest)


def load_manifest_config(out: Path) -> TrialConfig:
    data = json.loads((out / "manifest.json").read_text())
    return config_from_flat(data["config"])


def _emit_batch(out: Path, cfg: TrialConfig, flat: dict, results, prefix: str = "") -> list[Path]:
    files = [write_traces(out / f"{prefix}traces.csv", results)]
    summary = {"config": flat, **batch_report(cfg, results)}
    files.append(write_json(out / f"{prefix}summary.json", summary))
    if cfg.record_param_history:
        hist = {
            f"trial_{r.trial}": np.asarray(r.result.param_history)
            for r in results
            if r.result.param_history
        }
        path = out / f"{prefix}param_history.npz"
        np.savez_compressed(path, **hist)
        files.append(path)
    return files


def _prepare_out(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    return out


# Subcommands


def cmd_run(args) -> int:
    cfg, flat = resolve_config(args)
    out = _prepare_out(args.out)
    results = run_trials(cfg, _jobs(args))
    files = _emit_batch(out, cfg, flat, results)
    write_manifest(out, flat, files)
    failed = sum(r.failed for r in results)
    print(f"{cfg.n_trials} trials, {failed} failed; results in {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, flat = resolve_config(args)
    try:
        deltas = [parse_delta(t) for t in str(args.deltas).split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"--deltas: {exc}") from exc
    if not deltas:
        raise UsageError("--deltas must list at least one step")
    if any(not d > 0 for d in deltas):
        raise UsageError("--deltas must be positive")
    cfg = replace(cfg, gradient=GradientMode.forward_difference(deltas[0]))
    flat = {**flat, "grad": "fd", "delta": deltas[0]}
    out = _prepare_out(args.out)
    sweep = delta_sweep(cfg, deltas, _jobs(args))
    files = []
    rows = []
    for delta, (report, results) in sweep.items():
        label = GradientMode.forward_difference(delta).label().split(":", 1)[1]
        sub_flat = {**flat, "grad": "fd", "delta": delta}
        prefix = f"fd_{label.replace('^', '')}_"
        files += _emit_batch(out, cfg, sub_flat, results, prefix)
        rows.append({
            "delta": delta,
            "label": label,
            "summary": f"{prefix}summary.json",
            **{f"final_{k}": v for k, v in report["final_loss"].items()},
            "n_evals_median": report["n_evals"].get("median"),
            "iterations_median": report["iterations"].get("median"),
        })
    files.append(write_json(out / "sweep.json", {"config": flat, "loss_normalization": "raw" if cfg.loss_scale() == 1 else "raw / 4N", "rows": rows}))
    write_manifest(out, flat, files, {"deltas": deltas})
    print(f"sweep over {len(deltas)} steps written to {out}")
    return EXIT_OK


def cmd_landscape(args) -> int:
    if args.resolution < 2:
        raise UsageError("--resolution must be >= 2")
    res_dir = args.results
    hist_path = res_dir / "param_history.npz"
    if not (res_dir / "manifest.json").exists():
        raise UsageError(f"{res_dir} has no manifest.json; run 'unitary-mesh run' first")
    if not hist_path.exists():
        raise UsageError(f"{res_dir} has no parameter history; rerun with --record-history true")
    cfg = load_manifest_config(res_dir)
    with np.load(hist_path) as data:
        key = f"trial_{args.trial}"
        if key not in data:
            raise UsageError(f"trial {args.trial} not found in {hist_path}")
        history = data[key]
    if len(history) < 3:
        raise UsageError(f"trial {args.trial} has fewer than 3 recorded iterates")
    obj = LossObjective(cfg.build_device(), cfg.target(args.trial), cfg.loss)
    record = pca_trajectory(history, obj, args.resolution)
    payload = {"trial": args.trial, **record.to_dict()}
    path = args.out or res_dir / "trajectory.json"
    write_json(path, payload)
    print(f"trajectory written to {path}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .devices import ClementsDevice, MplcDevice
    from .distances import frobenius_loss, phase_insensitive_loss, spectral_loss
    from .linalg import RngStream, haar_random_unitary

    failures = 0
    ct = CrosstalkModel(DEFAULT_KERNEL)
    for arch, n, m in (("mplc", 4, 5), ("clements", 4, 4)):
        for kind in LossKind:
            for crosstalk in (None, ct):
                rep = gradient_check(arch, n, m, kind, trials=args.trials, rng=RngStream(args.seed), crosstalk=crosstalk)
                status = "ok" if rep.ok else "FAIL"
                failures += not rep.ok
                print(f"gradient {arch:8s} N={n} m={m} {kind.value:17s} crosstalk={crosstalk is not None!s:5s} max_rel={rep.max_rel_error:.2e} {status}")

    gen = RngStream.named(args.seed, "check").generator()
    worst_identity = worst_phase = 0.0
    for _ in range(200):
        n = int(gen.choice([2, 4, 8]))
        x, u = haar_random_unitary(n, gen), haar_random_unitary(n, gen)
        worst_identity = max(worst_identity, abs(frobenius_loss(x, u) - spectral_loss(x, u)))
        d = np.exp(1j * gen.uniform(0, 2 * np.pi, n))
        worst_phase = max(worst_phase, abs(phase_insensitive_loss(d[:, None] * x, u) - phase_insensitive_loss(x, u)))
    for name, val in (("frobenius/spectral identity", worst_identity), ("phase invariance", worst_phase)):
        ok = val < 1e-10
        failures += not ok
        print(f"invariant {name:28s} max_dev={val:.2e} {'ok' if ok else 'FAIL'}")

    dev = MplcDevice.random(4, 5, RngStream.named(args.seed, "check-device"))
    p = gen.uniform(0, 2 * np.pi, dev.param_count)
    dev_err = float(np.max(np.abs(dev.forward(p) @ dev.forward(p).conj().T - np.eye(4))))
    cdev = ClementsDevice(4, 4, ct)
    q = gen.uniform(0, 2 * np.pi, cdev.param_count)
    dev_err = max(dev_err, float(np.max(np.abs(cdev.forward(q) @ cdev.forward(q).conj().T - np.eye(4)))))
    ok = dev_err < 1e-12
    failures += not ok
    print(f"invariant {'device output unitary':28s} max_dev={dev_err:.2e} {'ok' if ok else 'FAIL'}")
    if failures:
        raise NumericalFailure(f"{failures} check(s) failed")
    print("all checks passed")
    return EXIT_OK


_COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "landscape": cmd_landscape, "check": cmd_check}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidDimensionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
