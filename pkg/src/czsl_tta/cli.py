"""Command line entry point: ``czsl-tta {run,eval,gradcheck,synth}``.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 gradcheck
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import PRESETS, ConfigError, EngineConfig, Switches, preset
from .io import FormatError, load_bundle, load_manifest, read_records, save_bundle
from .learning import finite_difference_check, random_problem
from .metrics import MetricError, compute_metrics
from .space import ManifestError, build_composition_space

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3

log = logging.getLogger("czsl_tta")


class ValidationFailure(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("engine config (overrides --config)")
    for f in fields(EngineConfig):
        if f.name == "switches":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.type in ("int", int):
            g.add_argument(flag, dest=f.name, type=int, default=None)
        elif f.type in ("float", float):
            g.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            g.add_argument(flag, dest=f.name, default=None)
    s = p.add_argument_group("ablation switches")
    for f in fields(Switches):
        s.add_argument("--" + f.name.replace("_", "-"), dest=f.name, action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--all-off", action="store_true", help="disable every switch before applying others")


def _effective_config(args) -> EngineConfig:
    if args.preset:
        cfg = preset(args.preset)
    else:
        cfg = EngineConfig()
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        merged = cfg.to_dict()
        sw = dict(merged["switches"], **data.pop("switches", {}))
        merged.update(data)
        merged["switches"] = sw
        cfg = EngineConfig.from_dict(merged)
    if args.all_off:
        cfg = cfg.replace(switches=Switches.all_off())
    overrides = {
        f.name: getattr(args, f.name)
        for f in list(fields(EngineConfig)) + list(fields(Switches))
        if f.name != "switches" and getattr(args, f.name, None) is not None
    }
    return cfg.replace(**overrides) if overrides else cfg


def cmd_run(args) -> int:
    from .runner import run

    cfg = _effective_config(args)
    bundle = load_bundle(args.bundle)
    out = run(
        cfg,
        bundle,
        order_seed=args.order_seed,
        out_dir=args.out,
        world=args.world,
        save_queues=args.save_queues,
        stride=args.stride,
    )
    summary = {
        "config": out.config,
        "metrics": {k: out.metrics[k] for k in ("n_records", "accuracy")}
        | {"bias_sweep": {k: v for k, v in out.metrics["bias_sweep"].items() if k != "curve"}},
        "latency": out.latency,
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.world:
        manifest = dict(manifest, world=args.world)
    space = build_composition_space(manifest)
    records = read_records(args.records)
    metrics = compute_metrics(records, space, stride=args.stride)
    text = json.dumps(metrics, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def gradcheck(trials: int, seed: int, min_classes=2, max_classes=6, min_dim=2, max_dim=8, h=1e-5, tol=1e-4, inject_bug=False) -> dict:
    if trials <= 0:
        raise ValidationFailure("nothing to check: trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_block = None
    warnings = []
    failed = 0
    t0 = time.perf_counter()
    for _ in range(trials):
        n = int(rng.integers(min_classes, max_classes + 1))
        d = int(rng.integers(min_dim, max_dim + 1))
        problem, kam = random_problem(rng, n, d)
        grads = None
        if inject_bug:
            from .learning import compute_gradients

            _, grads = compute_gradients(problem, kam)
            grads.g_delta_v[:] = 0.0
        report = finite_difference_check(problem, kam, h=h, tol=tol, rng=rng, grads=grads)
        warnings.extend(w for w in report.warnings if w not in warnings)
        failed += not report.ok
        for b in report.blocks:
            if b.max_rel_error > worst:
                worst, worst_block = b.max_rel_error, b.name
    return {
        "trials": trials,
        "failed_trials": failed,
        "max_rel_error": worst,
        "worst_block": worst_block,
        "tolerance": tol,
        "h": h,
        "passed": failed == 0,
        "seconds": time.perf_counter() - t0,
        "warnings": warnings,
    }


def cmd_gradcheck(args) -> int:
    report = gradcheck(
        args.trials,
        args.seed,
        args.min_classes,
        args.max_classes,
        args.min_dim,
        args.max_dim,
        args.h,
        args.tol,
        args.inject_bug,
    )
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_GRADCHECK


def cmd_synth(args) -> int:
    from .datagen import SynthSpec, generate

    data = json.loads(Path(args.spec).read_text()) if args.spec else {}
    if args.seed is not None:
        data["seed"] = args.seed
    spec = SynthSpec.from_dict(data)
    out = save_bundle(generate(spec), args.out)
    print(json.dumps({"bundle": str(out), "spec": spec.to_dict()}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="czsl-tta", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="adapt online over a bundle's test stream")
    p.add_argument("--bundle", required=True, help="bundle directory (manifest.json + matrices)")
    p.add_argument("--config", help="JSON engine config")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--order-seed", type=int, default=None, help="shuffle the stream; file order when unset")
    p.add_argument("--world", choices=("closed", "open"), default=None)
    p.add_argument("--save-queues", action="store_true")
    p.add_argument("--stride", type=int, default=10, help="cumulative accuracy stride")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="recompute metrics from a records file")
    p.add_argument("--records", required=True)
    p.add_argument("--manifest", required=True, help="manifest.json or bundle directory")
    p.add_argument("--world", choices=("closed", "open"), default=None)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytical gradients")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-classes", type=int, default=2)
    p.add_argument("--max-classes", type=int, default=6)
    p.add_argument("--min-dim", type=int, default=2)
    p.add_argument("--max-dim", type=int, default=8)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--inject-bug", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic bundle")
    p.add_argument("--spec", help="JSON synth spec; defaults for missing keys")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationFailure, ConfigError, ManifestError, FormatError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
