"""Command-line entry point: ``advdistill {gen-data,run,sweep}``.

Configuration resolves as defaults < ``--preset`` < ``--config`` file <
explicit flags.  Results land in ``<out>/<name>/`` as ``results.csv``,
``results.json``, ``results.md``, ``traces/`` and ``checkpoints/``; the
default ``<out>`` comes from ``$ADVDISTILL_OUT`` (else ``./runs``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import PRESETS, AdaptConfig, apply_overrides, dump_config, load_config_file, preset
from .data import GeneratorConfig, generate_domain_pair, load_manifest, write_dataset
from .evaluation import emit_table
from .pipeline import MethodSpec, checkpoint_name, run_experiment

OUT_ENV = "ADVDISTILL_OUT"
DEFAULT_SEEDS = 5
SWEEP_TEMPERATURES = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)

# flag dest -> AdaptConfig field
_CONFIG_FLAGS = {
    "temperature": "temperature", "epochs1": "epochs1", "epochs2": "epochs2", "lr1": "lr1",
    "lr2": "lr2", "lr_disc": "lr_disc", "batch": "batch", "clip_norm": "clip_norm",
    "clip_value": "clip_value", "weight_clip": "weight_clip", "kd_weight": "kd_weight",
    "d_steps": "d_steps_per_g_step", "align_weight": "align_weight",
    "dann_lambda": "dann_lambda", "mmd_bandwidth": "mmd_bandwidth", "hidden_dim": "hidden_dim",
    "embed_dim": "embed_dim",
}

log = logging.getLogger("advdistill")


class UsageError(ValueError):
    """Bad flags or configuration (exit status 2)."""


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def parse_seeds(text: str) -> list[int]:
    """``"5"`` means seeds 0..4; ``"3,7,11"`` (or ``"3,"``) is an explicit list."""
    try:
        if "," in text:
            seeds = [int(x) for x in text.split(",") if x.strip()]
        else:
            n = int(text)
            if n < 1:
                raise ValueError
            seeds = list(range(n))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seeds takes a positive count or a comma list, got {text!r}") from None
    if not seeds or len(set(seeds)) != len(seeds) or min(seeds) < 0:
        raise argparse.ArgumentTypeError(f"seed list must be non-empty, distinct and >= 0: {text!r}")
    return seeds


def _add_generator_flags(p: argparse.ArgumentParser, multi_rho: bool) -> None:
    g = p.add_argument_group("synthetic generator")
    if multi_rho:
        g.add_argument("--rho", type=_floats, default=[0.3],
                       help="pivot fraction(s); a comma list makes one pair per value (default 0.3)")
    else:
        g.add_argument("--rho", type=float, default=0.3, help="pivot fraction (default 0.3)")
    g.add_argument("--data-seed", type=int, default=0, help="generator seed (default 0)")
    g.add_argument("--per-class", type=int, default=1000)
    g.add_argument("--vocab-size", type=int, default=2000)
    g.add_argument("--class-words", type=int, default=40)
    g.add_argument("--class-token-rate", type=float, default=GeneratorConfig.class_token_rate)
    g.add_argument("--noise-rate", type=float, default=GeneratorConfig.noise_rate)
    g.add_argument("--min-len", type=int, default=20)
    g.add_argument("--max-len", type=int, default=128)


def _generator_config(args, rho: float) -> GeneratorConfig:
    cfg = GeneratorConfig(vocab_size=args.vocab_size, pivot_fraction=rho, per_class=args.per_class,
                          min_len=args.min_len, max_len=args.max_len,
                          class_token_rate=args.class_token_rate, noise_rate=args.noise_rate,
                          class_words=args.class_words, seed=args.data_seed)
    cfg.validate()
    return cfg


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", action="append", metavar="MANIFEST",
                     help="dataset manifest (repeatable, one pair each)")
    src.add_argument("--gen", action="store_true",
                     help="generate synthetic pairs from the generator flags (the default)")
    _add_generator_flags(p, multi_rho=True)
    p.add_argument("--seeds", type=parse_seeds, default=list(range(DEFAULT_SEEDS)),
                   help="seed count n (seeds 0..n-1) or comma list (default 5)")
    p.add_argument("--preset", choices=sorted(PRESETS), default="reference",
                   help="base hyperparameters; 'desk' raises the learning rates for the small model")
    p.add_argument("--config", metavar="FILE", help="flat 'key = value' file of config overrides")
    t = p.add_argument_group("training (override preset and config file)")
    t.add_argument("-t", "--temperature", type=float)
    t.add_argument("--epochs1", type=int)
    t.add_argument("--epochs2", type=int)
    t.add_argument("--lr1", type=float, help="step-1 learning rate (reference 5e-5)")
    t.add_argument("--lr2", type=float, help="step-2 learning rate (reference 1e-5)")
    t.add_argument("--lr-disc", type=float, help="discriminator learning rate (default: lr2)")
    t.add_argument("--batch", type=int, help="batch size (reference 64)")
    t.add_argument("--clip-norm", type=float, help="encoder gradient-norm clip (reference 1.0)")
    t.add_argument("--clip-value", type=float, help="discriminator clip (reference 0.01)")
    t.add_argument("--weight-clip", action="store_const", const=True,
                   help="clip discriminator weights instead of gradients")
    t.add_argument("--kd-weight", type=float)
    t.add_argument("--d-steps", type=int, help="discriminator updates per encoder update")
    t.add_argument("--align-weight", type=float)
    t.add_argument("--dann-lambda", type=float)
    t.add_argument("--mmd-bandwidth", type=float)
    t.add_argument("--hidden-dim", type=int)
    t.add_argument("--embed-dim", type=int)
    o = p.add_argument_group("output")
    o.add_argument("--out", type=Path, help=f"output root (default ${OUT_ENV} or ./runs)")
    o.add_argument("--name", help="experiment directory name")
    o.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    o.add_argument("--no-checkpoints", action="store_true", help="skip saving model bundles")
    o.add_argument("--dry-run", action="store_true", help="print the resolved setup and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advdistill", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic domain pair as JSONL + manifest")
    gen.add_argument("--out", type=Path, required=True, help="dataset directory")
    _add_generator_flags(gen, multi_rho=False)

    run = sub.add_parser("run", help="train and evaluate methods over seeds")
    run.add_argument("--methods", "--method", default="baseline,aad",
                     help="comma list from baseline, aad, aad-supervised, adda, ddc, dann, coral; "
                          "per-method overrides as aad:t=5")
    _add_run_flags(run)

    sweep = sub.add_parser("sweep", help="temperature sweep plus the supervised variant")
    sweep.add_argument("--temperatures", type=_floats, default=list(SWEEP_TEMPERATURES))
    sweep.add_argument("--no-supervised", action="store_true")
    sweep.add_argument("--baseline", action="store_true",
                       help="add a source-only column so cells can be starred")
    _add_run_flags(sweep)
    return parser


# ---------------------------------------------------------------------------

def resolve_config(args) -> AdaptConfig:
    """defaults < preset < config file < flags"""
    try:
        cfg = preset(args.preset)
        if args.config:
            cfg = apply_overrides(cfg, load_config_file(args.config))
        flags = {field: getattr(args, dest) for dest, field in _CONFIG_FLAGS.items()
                 if getattr(args, dest) is not None}
        return apply_overrides(cfg, flags)
    except (KeyError, ValueError, TypeError, OSError) as exc:
        raise UsageError(f"bad configuration: {exc}") from None


def resolve_pairs(args) -> tuple[dict, dict]:
    """Datasets by pair name, plus a description of where each came from."""
    pairs, origin = {}, {}
    try:
        if args.data:
            for path in args.data:
                ds = load_manifest(path)
                if ds.name in pairs:
                    raise UsageError(f"duplicate pair name {ds.name!r} ({path})")
                pairs[ds.name] = ds
                origin[ds.name] = {"manifest": ds.meta} if ds.meta else {"manifest": ds.name}
        else:
            for rho in args.rho:
                gcfg = _generator_config(args, rho)
                ds = generate_domain_pair(gcfg)
                pairs[ds.name] = ds
                origin[ds.name] = {"generator": ds.meta["generator"]}
    except (OSError, ValueError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(str(exc)) from None
    return pairs, origin


def _method_specs(args) -> list[MethodSpec]:
    if args.command == "sweep":
        specs = [MethodSpec("baseline", "baseline")] if args.baseline else []
        for t in args.temperatures:
            if not t > 0:
                raise UsageError(f"temperatures must be > 0, got {t}")
            specs.append(MethodSpec(f"t={t:g}", "aad", (("temperature", t),)))
        if not args.no_supervised:
            specs.append(MethodSpec("supervised", "aad-supervised"))
        return specs
    try:
        specs = [MethodSpec.parse(m) for m in args.methods.split(",") if m.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not specs:
        raise UsageError("no methods given")
    if len({s.label for s in specs}) != len(specs):
        raise UsageError("duplicate method")
    return specs


def _vocab_consistent(cfg: AdaptConfig, pairs: dict) -> AdaptConfig:
    sizes = {ds.vocab_size for ds in pairs.values()}
    if len(sizes) != 1:
        raise UsageError(f"pairs disagree on vocab_size: {sorted(sizes)}")
    classes = max(ds.num_classes for ds in pairs.values())
    return cfg.replace(vocab_size=sizes.pop(), num_classes=classes)


def _experiment_name(args, pairs: dict) -> str:
    return args.name or f"{args.command}-" + "+".join(pairs)


def _meta(args, cfg: AdaptConfig, specs, seeds, origin) -> dict:
    return {
        "version": __version__,
        "command": args.command,
        "seeds": list(seeds),
        "methods": [{"label": s.label, "method": s.method, "overrides": dict(s.overrides)}
                    for s in specs],
        "config": cfg.to_dict(),
        "pairs": origin,
    }


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def cmd_gen_data(args) -> int:
    try:
        gcfg = _generator_config(args, args.rho)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = generate_domain_pair(gcfg)
    try:
        manifest = write_dataset(ds, args.out)
    except OSError as exc:
        print(f"error: cannot write dataset to {args.out}: {exc}", file=sys.stderr)
        return 1
    sizes = ", ".join(f"{k}={v}" for k, v in ds.sizes().items())
    print(f"wrote {manifest} ({sizes})")
    return 0


def cmd_run(args) -> int:
    """Shared body of ``run`` and ``sweep``."""
    cfg = resolve_config(args)
    specs = _method_specs(args)
    pairs, origin = resolve_pairs(args)
    cfg = _vocab_consistent(cfg, pairs)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    for spec in specs:
        try:
            cfg.replace(**dict(spec.overrides))
        except (KeyError, ValueError) as exc:
            raise UsageError(f"{spec.label}: {exc}") from None
    seeds = args.seeds
    meta = _meta(args, cfg, specs, seeds, origin)
    name = _experiment_name(args, pairs)
    out_root = args.out or Path(os.environ.get(OUT_ENV, "runs"))
    out_dir = out_root / name

    if args.dry_run:
        print(f"# advdistill {__version__} {args.command} (dry run)")
        print(f"# output: {out_dir}")
        print(f"# pairs: {', '.join(pairs)}")
        print(f"# methods: {', '.join(s.label for s in specs)}")
        print(f"# seeds: {','.join(map(str, seeds))}")
        print(f"# runs: {len(pairs) * len(specs) * len(seeds)}")
        for spec in specs:
            if spec.overrides:
                print(f"# {spec.label}: " + ", ".join(f"{k} = {v}" for k, v in spec.overrides))
        print(dump_config(cfg), end="")
        return 0

    try:
        (out_dir / "traces").mkdir(parents=True, exist_ok=True)
        ckpt_dir = None
        if not args.no_checkpoints:
            ckpt_dir = out_dir / "checkpoints"
            ckpt_dir.mkdir(exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {out_dir}: {exc}", file=sys.stderr)
        return 1
    log.info("running %d runs into %s", len(pairs) * len(specs) * len(seeds), out_dir)
    table = run_experiment(pairs, specs, seeds, cfg, jobs=args.jobs, checkpoint_dir=ckpt_dir)

    _write(out_dir / "results.csv", emit_table(table, "csv", meta))
    _write(out_dir / "results.json", emit_table(table, "json", meta))
    _write(out_dir / "results.md", emit_table(table, "markdown", meta))
    for r in table.runs:
        doc = {"meta": {"version": __version__, "seeds": list(seeds)}, "run": r.to_dict()}
        _write(out_dir / "traces" / (checkpoint_name(r.pair, r.method, r.seed) + ".json"),
               json.dumps(doc, sort_keys=True) + "\n")
    print(emit_table(table, "markdown", meta), end="")
    print(f"results written to {out_dir}")

    failed = table.failed_runs
    for r in failed:
        print(f"error: run failed: pair={r.pair} method={r.method} seed={r.seed}: {r.error}",
              file=sys.stderr)
    return 1 if failed else 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        return cmd_run(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"advdistill: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
