"""Command-line entry point.

Exit codes: 0 success, 1 usage or validation failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


_TYPES = {"bool": bool, "int": int, "float": float, "str": str}


def _add_dataclass_flags(p, cls, prefix: str = ""):
    """One flag per field; defaults suppressed so only explicit flags override the config."""
    for f in dataclasses.fields(cls):
        if f.name == "model":
            continue
        dest = prefix + f.name
        kind = _TYPES[f.type] if isinstance(f.type, str) else f.type
        if kind is bool:
            p.add_argument(_flag(dest), dest=dest, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        else:
            p.add_argument(_flag(dest), dest=dest, type=kind, default=argparse.SUPPRESS, metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    from .recognizer import ModelConfig
    from .trainer import TrainConfig

    ap = _Parser(prog="visu", description="Character-alignment toolkit.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="render OGS samples to PGM files and a TSV manifest")
    g.add_argument("--lexicon", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--font-policy", choices=("char", "instance"), default="char")
    g.add_argument("--orient-policy", choices=("char", "instance"), default="instance")
    g.add_argument("--width", type=int, default=100)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--max-len", type=int, default=25, help="T; labels may hold at most T-1 characters")
    g.add_argument("--charset", choices=("alnum", "digits"), default="alnum")
    g.add_argument("--distort", action="store_true", help="apply the strong distortion family")

    c = sub.add_parser("gradcheck", help="check closed-form gradients against independent oracles")
    c.add_argument("--trials", type=int, default=100)
    c.add_argument("--eps", type=float, default=1e-6)
    c.add_argument("--tol", type=float, default=1e-6)
    c.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("dynamics", help="simulate embedding dynamics under CUA or CC")
    d.add_argument("--loss", choices=("cua", "cc"), default="cua")
    d.add_argument("--classes", type=int, default=3)
    d.add_argument("--points", type=int, default=8)
    d.add_argument("--dim", type=int, default=16)
    d.add_argument("--steps", type=int, default=500)
    d.add_argument("--lr", type=float, default=0.1)
    d.add_argument("--tau", type=float, default=0.1)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)

    t = sub.add_parser("train", help="semi-supervised training")
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--labeled", required=True, help="manifest directory of OGS-labeled samples")
    t.add_argument("--plain-labeled", help="manifest directory of non-OGS labeled samples")
    t.add_argument("--unlabeled", help="manifest directory whose labels are ignored")
    t.add_argument("--out", required=True, help="run directory (checkpoint.bin, log.jsonl)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--workers", type=int, default=1, help="batch-building threads (0: inline)")
    _add_dataclass_flags(t, TrainConfig)
    _add_dataclass_flags(t, ModelConfig, prefix="model_")

    e = sub.add_parser("eval", help="word accuracy of a checkpoint on a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--params", choices=("teacher", "student"), default="teacher")

    x = sub.add_parser("export-embeddings", help="write per-character features as CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--params", choices=("teacher", "student"), default="teacher")

    s = sub.add_parser("smoke", help="toy end-to-end comparison of the full method and a baseline")
    s.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    s.add_argument("--steps", type=int, default=3000)
    s.add_argument("--out", help="optional JSON report path")
    return ap


# ---------------------------------------------------------------------------


def _cmd_gen(a) -> int:
    from .charset import ALNUM36, DIGITS, Charset
    from .ogs import StylePolicy, generate_dataset, read_lexicon, write_manifest
    from .toydata import distort

    charset = Charset(ALNUM36 if a.charset == "alnum" else DIGITS)
    words = read_lexicon(a.lexicon)
    samples = generate_dataset(words, a.count, a.seed, StylePolicy(a.font_policy, a.orient_policy),
                               a.width, a.height, charset, a.max_len)
    if a.distort:
        for s in samples:
            s.image = distort(s.image, np.random.default_rng([s.seed, 1]))
    path = write_manifest(samples, a.out)
    print(f"wrote {len(samples)} samples to {path}")
    return EXIT_OK


def _cmd_gradcheck(a) -> int:
    from .gradcheck import run_gradcheck

    rep = run_gradcheck(a.trials, a.eps, a.tol, a.seed)
    print(rep.summary())
    return EXIT_OK if rep.passed else EXIT_INVALID


def _cmd_dynamics(a) -> int:
    from .dynamics import compare, dynamics_sim, format_comparison, write_run_csv

    run = dynamics_sim(a.loss, a.classes, a.points, a.dim, a.steps, a.lr, a.tau, a.seed)
    write_run_csv(run, a.out)
    print(f"{a.loss}: intra {run.trajectory[0].intra_mean:+.4f} -> {run.trajectory[-1].intra_mean:+.4f}")
    if a.classes >= 2:
        print(format_comparison(compare(a.classes, a.points, a.dim, a.steps, a.lr, a.tau, a.seed)))
    return EXIT_OK


def _load_dataset(directory, from_ogs: bool):
    from .ogs import read_manifest
    from .trainer import Dataset

    recs = read_manifest(directory)
    return Dataset([r.image for r in recs], [r.label for r in recs], [from_ogs] * len(recs))


def resolve_train_config(a):
    """Defaults, then the JSON config file, then explicit flags."""
    from .trainer import TrainConfig

    merged = {}
    if a.config:
        with open(a.config, encoding="utf-8") as fh:
            merged = json.load(fh)
        if not isinstance(merged, dict):
            raise ValueError(f"{a.config}: config must be a JSON object")
    model = dict(merged.get("model", {}))
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    for k, v in vars(a).items():
        if k.startswith("model_"):
            model[k[len("model_"):]] = v
        elif k in names:
            merged[k] = v
    if model:
        merged["model"] = model
    return TrainConfig.from_dict(merged)


def _cmd_train(a) -> int:
    from .trainer import Dataset, TrainState, load_checkpoint, save_checkpoint, train

    if a.resume:
        state = load_checkpoint(a.resume)
    else:
        state = TrainState.initialize(resolve_train_config(a))
    cfg = state.config
    labeled = _load_dataset(a.labeled, True)
    if a.plain_labeled:
        plain = _load_dataset(a.plain_labeled, False)
        labeled = Dataset(labeled.images + plain.images, labeled.labels + plain.labels,
                          labeled.from_ogs + plain.from_ogs)
    unlabeled = _load_dataset(a.unlabeled, False) if a.unlabeled else None
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    every = a.checkpoint_every or cfg.steps
    with open(out / "log.jsonl", "a", encoding="utf-8") as log:
        while state.step < cfg.steps:
            train(state, labeled, unlabeled, steps=min(state.step + every, cfg.steps), log=log,
                  workers=a.workers)
            save_checkpoint(state, out / "checkpoint.bin")
    print(f"trained to step {state.step}; checkpoint at {out / 'checkpoint.bin'}")
    return EXIT_OK


def _cmd_eval(a) -> int:
    from .trainer import evaluate, load_checkpoint

    state = load_checkpoint(a.checkpoint)
    data = _load_dataset(a.data, False)
    params = state.teacher if a.params == "teacher" else state.student
    acc = evaluate(params, data, state.config)
    print(json.dumps({"word_accuracy": acc, "samples": len(data), "params": a.params}))
    return EXIT_OK


def _cmd_export(a) -> int:
    from .export import export_embeddings

    n = export_embeddings(a.checkpoint, a.data, a.out, a.params)
    print(f"wrote {n} rows to {a.out}")
    return EXIT_OK


def _cmd_smoke(a) -> int:
    from .toydata import run_smoke, smoke_splits

    results = []
    for seed in a.seeds:
        splits = smoke_splits(seed)
        pair = {k: run_smoke(k, seed, splits, a.steps) for k in ("baseline", "visu")}
        results.append(pair)
        print(f"seed {seed}: full clean {pair['visu']['clean']:.3f} distorted {pair['visu']['distorted']:.3f}"
              f" | baseline clean {pair['baseline']['clean']:.3f} distorted {pair['baseline']['distorted']:.3f}")
    if a.out:
        Path(a.out).write_text(json.dumps(results, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {
    "gen": _cmd_gen,
    "gradcheck": _cmd_gradcheck,
    "dynamics": _cmd_dynamics,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "export-embeddings": _cmd_export,
    "smoke": _cmd_smoke,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_INVALID
    if not args.command:
        parser.print_usage(sys.stderr)
        print("visu: error: a subcommand is required", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except (ValueError, KeyError) as exc:
        print(f"visu {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"visu {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
