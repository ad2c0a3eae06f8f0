"""Command-line surface.

Subcommands: gen-data, train, eval, sweep, export-embeddings. Logs go
to stderr; machine-readable results go to files or stdout. Exit codes:
0 success, 2 configuration/format problems, 3 runtime or numeric
failures.
"""

import argparse
import csv
import json
import statistics
import sys
from pathlib import Path

from . import config as cfgmod
from . import kernels
from .data import generate_synthetic, load_bundle, save_bundle
from .errors import ConfigError, FormatError, TdcssError
from .evaluation import evaluate_gzsl, export_embeddings_2d
from .trainer import load_checkpoint, train

ABLATIONS = ("tfd", "eps", "cps")


def _log(msg):
    print(msg, file=sys.stderr)


def _parse_sets(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _resolve_config(args, extra=None):
    overrides = _parse_sets(getattr(args, "set", None))
    if extra:
        for key, value in extra.items():
            overrides.setdefault(key, value)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    cfg = cfgmod.load_run_config(getattr(args, "config", None), overrides)
    return cfg, cfgmod.config_hash(cfg)


def cmd_gen_data(args):
    cfg, digest = _resolve_config(args)
    bundle = generate_synthetic(cfgmod.synth_config(cfg))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_bytes = save_bundle(bundle, out)
    meta = {"config": cfg, "config_hash": digest,
            "rows": bundle.n_rows, "bytes": n_bytes}
    out.with_suffix(out.suffix + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _log(f"wrote {out} ({n_bytes} bytes, {bundle.n_rows} rows, "
         f"config {digest})")
    return 0


def _apply_train_flags(args, overrides):
    if getattr(args, "paper_scale", False):
        overrides.setdefault("paper_dims", "true")
        overrides.setdefault("epochs", "1500")
    for name in getattr(args, "ablate", None) or []:
        if name not in ABLATIONS:
            raise ConfigError(
                f"--ablate expects one of {ABLATIONS}, got {name!r}")
        overrides[f"ablate_{name}"] = "true"
    if getattr(args, "fszu_shots", None) is not None:
        overrides["fszu_shots"] = str(args.fszu_shots)
    return overrides


def _write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def cmd_train(args):
    extra = _apply_train_flags(args, {})
    cfg, digest = _resolve_config(args, extra)
    bundle = load_bundle(args.bundle, test_frac=cfg["test_frac"])
    tcfg = cfgmod.train_config(cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def progress(epoch, record):
        if (epoch + 1) % 25 == 0 or epoch == 0:
            terms = ", ".join(f"{k}={v:.3f}" for k, v in record.items()
                              if k != "epoch")
            _log(f"epoch {epoch + 1}/{tcfg.epochs}: {terms}")

    model, report = train(bundle, tcfg, out_dir=out_dir,
                          resume=args.resume, progress=progress)
    _write_jsonl(out_dir / "train_report.jsonl",
                 [{**rec, "config_hash": digest} for rec in report.records])
    _write_jsonl(out_dir / "metrics.jsonl",
                 [{**entry, "split": "heldout", "seed": tcfg.seed,
                   "config_hash": digest} for entry in report.evals])
    final = evaluate_gzsl(model, bundle)
    (out_dir / "metrics_final.json").write_text(json.dumps(
        {**final.to_dict(), "config_hash": digest, "seed": tcfg.seed},
        indent=2, sort_keys=True) + "\n")
    (out_dir / "run_info.json").write_text(json.dumps({
        "config": cfg, "config_hash": digest,
        "wall_seconds": report.wall_seconds,
        "kernel_backend": kernels.BACKEND,
        "final_checkpoint": report.final_checkpoint_id,
        "best_checkpoint": report.best_checkpoint_id,
        "best_h": report.best_h, "best_epoch": report.best_epoch,
    }, indent=2, sort_keys=True) + "\n")
    _log(f"final heldout: u={final.u:.3f} s={final.s:.3f} H={final.h:.3f} "
         f"({report.wall_seconds:.1f}s)")
    return 0


def _percent(x):
    return f"{100.0 * x:.1f}"


def cmd_eval(args):
    model, _, meta = load_checkpoint(args.checkpoint)
    cfg, _ = _resolve_config(args)
    bundle = load_bundle(args.bundle, test_frac=cfg["test_frac"])
    if bundle.feature_dim != model.dims.feature_dim:
        raise ConfigError(
            f"bundle feature dim {bundle.feature_dim} does not match the "
            f"checkpoint's {model.dims.feature_dim}")
    if bundle.semantic_dim != model.dims.semantic_dim:
        raise ConfigError(
            f"bundle semantic dim {bundle.semantic_dim} does not match the "
            f"checkpoint's {model.dims.semantic_dim}")
    metrics = evaluate_gzsl(model, bundle)
    payload = {**metrics.to_dict(), "config_hash": meta["config_hash"]}
    if args.out:
        Path(args.out).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(f"unseen (u): {_percent(metrics.u)}%")
        print(f"seen   (s): {_percent(metrics.s)}%")
        print(f"harmonic H: {_percent(metrics.h)}%")
        print("per-class accuracy:")
        for cls in sorted(metrics.per_class):
            print(f"  class {cls:>3}: {_percent(metrics.per_class[cls])}%"
                  f"  (n={metrics.counts[cls]})")
    return 0


def _sweep_cells(grid):
    if grid == "ablations":
        return [("full", {}), ("no_tfd", {"ablate_tfd": "true"}),
                ("no_eps", {"ablate_eps": "true"}),
                ("no_cps", {"ablate_cps": "true"})]
    if grid == "shots":
        return [("all", {"fszu_shots": "0"}), ("10", {"fszu_shots": "10"}),
                ("5", {"fszu_shots": "5"}), ("2", {"fszu_shots": "2"})]
    raise ConfigError(f"unknown sweep grid {grid!r} "
                      "(expected 'ablations' or 'shots')")


def cmd_sweep(args):
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")
    cells = _sweep_cells(args.grid)
    base_cfg, digest = _resolve_config(args)
    bundle = load_bundle(args.bundle, test_frac=base_cfg["test_frac"])
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for setting, extra in cells:
        per_seed = []
        for seed in seeds:
            overrides = dict(_parse_sets(args.set))
            overrides.update(extra)
            overrides["seed"] = str(seed)
            cfg = cfgmod.load_run_config(args.config, overrides)
            model, _ = train(bundle, cfgmod.train_config(cfg))
            metrics = evaluate_gzsl(model, bundle)
            rows.append([setting, str(seed), repr(metrics.u),
                         repr(metrics.s), repr(metrics.h)])
            per_seed.append(metrics)
            _log(f"{setting} seed={seed}: u={metrics.u:.3f} "
                 f"s={metrics.s:.3f} H={metrics.h:.3f}")
        rows.append([setting, "median",
                     repr(statistics.median(m.u for m in per_seed)),
                     repr(statistics.median(m.s for m in per_seed)),
                     repr(statistics.median(m.h for m in per_seed))])
    out_path = out_dir / f"sweep_{args.grid}.csv"
    with open(out_path, "w", newline="") as fh:
        fh.write(f"# config_hash: {digest}\n")
        writer = csv.writer(fh)
        writer.writerow(["setting", "seed", "u", "s", "H"])
        writer.writerows(rows)
    _log(f"wrote {out_path}")
    return 0


def read_sweep_csv(path):
    """Parse a sweep CSV back into row dicts (comment lines skipped)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    out = []
    for row in reader:
        out.append({"setting": row["setting"], "seed": row["seed"],
                    "u": float(row["u"]), "s": float(row["s"]),
                    "H": float(row["H"])})
    return out


def cmd_export_embeddings(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    cfg, _ = _resolve_config(args)
    bundle = load_bundle(args.bundle, test_frac=cfg["test_frac"])
    n = export_embeddings_2d(model, bundle, args.out,
                             seed=cfg["seed"], eps_edge=cfg["eps_edge"])
    _log(f"wrote {args.out} ({n} embedded vectors)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tdcss",
        description="Generalized zero-shot learning via task-correlated "
                    "disentanglement and controllable pseudo-sample "
                    "synthesis.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one configuration key")
        p.add_argument("--seed", type=int, help="override the master seed")

    p = sub.add_parser("gen-data", help="generate a synthetic bundle")
    add_common(p)
    p.add_argument("--out", required=True, help="output bundle path")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a bundle")
    add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--ablate", action="append", choices=ABLATIONS,
                   help="disable one component (repeatable)")
    p.add_argument("--fszu-shots", type=int,
                   help="train with only K rows per seen class")
    p.add_argument("--paper-scale", action="store_true",
                   help="published layer widths and 1500 epochs")
    p.add_argument("--resume", help="continue from a checkpoint")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a bundle")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--json", action="store_true",
                   help="emit one JSON object on stdout")
    p.add_argument("--out", help="also write the JSON result here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="train a grid of settings x seeds")
    add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--grid", required=True, choices=("ablations", "shots"))
    p.add_argument("--seeds", default="0,1,2",
                   help="comma-separated seed list")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("export-embeddings",
                       help="write a 2-D PCA embedding CSV")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_embeddings)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError) as exc:
        _log(f"error: {exc}")
        return 2
    except TdcssError as exc:
        _log(f"error: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
