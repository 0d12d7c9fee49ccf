"""Command-line interface: ``nofe <command> [options]``.

Exit codes: 0 success, 1 validation or usage error, 2 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields

import numpy as np
from threadpoolctl import threadpool_limits

from .data import (
    SyntheticSpec,
    export_grid,
    gen_synthetic,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
    write_grid_csv,
)
from .errors import NumericError, ValidationError
from .experiments import (
    evaluate,
    gluing_experiment,
    nofe_embedder,
    pca_embedder,
    quadrant_experiment,
    superres_embed,
)
from .metrics import MetricReport, reports_to_json, reports_to_text
from .model import ModelConfig
from .training import TrainConfig, train, train_superres, write_loss_history

log = logging.getLogger("nofe")

MODEL_KEYS = {f.name: f.type for f in fields(ModelConfig) if f.name not in ("d_f", "d_x", "seed")}
TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)}
SYNTH_KEYS = {f.name: f.type for f in fields(SyntheticSpec)}
KNOWN_KEYS = set(MODEL_KEYS) | set(TRAIN_KEYS) | set(SYNTH_KEYS)
REQUIRED_KEYS = {"gen": ("d_f", "n_points", "n_samples")}


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _convert(key: str, raw: str):
    kind = {**SYNTH_KEYS, **TRAIN_KEYS, **MODEL_KEYS}[key]
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except ValueError:
        raise ValidationError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown keys are rejected."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def load_settings(args) -> dict:
    settings = {}
    if args.config:
        with open(args.config) as fh:
            settings.update(parse_config(fh.read()))
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = (p.strip() for p in item.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ValidationError(f"unknown key {key!r}")
        settings[key] = _convert(key, value)
    missing = [k for k in REQUIRED_KEYS.get(args.command, ()) if k not in settings]
    if missing:
        raise ValidationError(f"{args.command}: missing required config keys {missing}")
    return settings


def _pick(settings: dict, keys) -> dict:
    return {k: v for k, v in settings.items() if k in keys}


def _write_embeddings(path, rows: list[tuple[str, np.ndarray, np.ndarray]]):
    d_x, d_g = rows[0][1].shape[1], rows[0][2].shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id"] + [f"x_{i + 1}" for i in range(d_x)] + [f"z_{i + 1}" for i in range(d_g)])
        for sid, x, z in rows:
            for xi, zi in zip(x, z):
                w.writerow([sid] + [repr(float(v)) for v in xi] + [repr(float(v)) for v in zi])


def _read_embeddings(path, sample_id=None):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if sample_id is None or r[0] == sample_id]
    if not rows:
        raise ValidationError(f"no embedding rows for sample {sample_id!r} in {path}")
    if sample_id is None and len({r[0] for r in rows}) > 1:
        raise ValidationError("embedding file holds several samples; choose one with --sample")
    d_x = sum(h.startswith("x_") for h in header)
    table = np.array([[float(v) for v in r[1:]] for r in rows])
    return table[:, :d_x], table[:, d_x:]


def _write_report(out, payload: dict[str, MetricReport], fmt: str):
    if fmt == "json":
        text, suffix = reports_to_json(payload), ".json"
    else:
        text, suffix = reports_to_text(payload), ".txt"
    with open(out + suffix, "w") as fh:
        fh.write(text)
    print(reports_to_text(payload), end="")


def cmd_gen(args, settings):
    spec = SyntheticSpec(**_pick(settings, SYNTH_KEYS))
    save_dataset(gen_synthetic(spec, args.seed), args.out)


def _model_config(settings, samples, seed) -> ModelConfig:
    return ModelConfig(d_f=samples[0].d_f, d_x=samples[0].d_x, seed=seed, **_pick(settings, MODEL_KEYS))


def cmd_train(args, settings):
    samples = load_dataset(args.data)
    train_cfg = TrainConfig(**_pick(settings, TRAIN_KEYS))
    init = None
    if args.init:
        init, _ = load_checkpoint(args.init)
        model_cfg = init.config
    else:
        model_cfg = _model_config(settings, samples, args.seed)
    if args.superres:
        params, history = train_superres(samples, model_cfg, train_cfg, args.seed, args.n_input, args.n_query, init)
    else:
        params, history = train(samples, model_cfg, train_cfg, args.seed, init)
    save_checkpoint(params, args.out, train_cfg, args.seed)
    write_loss_history(f"{args.out}.loss.csv", history)


def cmd_embed(args, settings):
    params, _ = load_checkpoint(args.model)
    if params.dual:
        raise ValidationError("embed needs a point-to-point checkpoint; use superres for dual models")
    embed = nofe_embedder(params)
    rows = [(s.sample_id, s.coords, embed(s)) for s in load_dataset(args.data)]
    _write_embeddings(args.out, rows)


def cmd_superres(args, settings):
    params, _ = load_checkpoint(args.model)
    fixed_query = _read_query(args.query) if args.query else None
    rows = []
    for n, s in enumerate(load_dataset(args.data)):
        rng = np.random.default_rng((args.seed, n))
        if args.n_input > s.n_points:
            raise ValidationError(f"sample {s.sample_id!r} has only {s.n_points} points")
        source = s.subset(np.sort(rng.permutation(s.n_points)[: args.n_input]))
        if fixed_query is None:
            lo, hi = s.coords.min(axis=0), s.coords.max(axis=0)
            query = rng.uniform(lo, hi, size=(args.n_query, s.d_x))
        else:
            query = fixed_query
        rows.append((s.sample_id, query, superres_embed(params, source, query)))
    _write_embeddings(args.out, rows)


def _read_query(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    try:
        float(rows[0][0])
    except ValueError:
        rows = rows[1:]
    return np.array([[float(v) for v in r] for r in rows if r])


def _methods(params):
    return {"nofe": nofe_embedder(params), "pca": pca_embedder(params.config.d_g)}


def _point_model(path):
    params, _ = load_checkpoint(path)
    if params.dual:
        raise ValidationError("this command needs a point-to-point checkpoint")
    return params


def cmd_eval(args, settings):
    params = _point_model(args.model)
    samples = load_dataset(args.data)
    reports = evaluate(samples, _methods(params), params.config.k, args.border_width, args.overlap)
    _write_report(args.out, reports, args.format)


def cmd_patch_exp(args, settings):
    params = _point_model(args.model)
    samples = load_dataset(args.data)
    reports = {}
    for name, embed in _methods(params).items():
        res = [quadrant_experiment(s, embed, args.border_width) for s in samples]
        reports[name] = MetricReport(
            se_region=float(np.mean([r["se_region"] for r in res])),
            se_local=float(np.mean([r["se_local"] for r in res])),
        )
    _write_report(args.out, reports, args.format)


def cmd_glue_exp(args, settings):
    params = _point_model(args.model)
    samples = load_dataset(args.data)
    reports = {
        name: MetricReport(gluing_mse=float(np.mean([gluing_experiment(s, embed, args.overlap) for s in samples])))
        for name, embed in _methods(params).items()
    }
    _write_report(args.out, reports, args.format)


def cmd_export(args, settings):
    coords, z = _read_embeddings(args.embeddings, args.sample)
    write_grid_csv(args.out, export_grid(coords, z, args.resolution))


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "embed": cmd_embed,
    "superres": cmd_superres,
    "eval": cmd_eval,
    "patch-exp": cmd_patch_exp,
    "glue-exp": cmd_glue_exp,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    common.add_argument("--format", choices=("json", "text"), default="json")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="nofe", description="Neural operator function embedding")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--superres", action="store_true", help="train the dual-graph model")
    p.add_argument("--n-input", type=int, default=100)
    p.add_argument("--n-query", type=int, default=400)

    p = sub.add_parser("embed", parents=[common], help="point-to-point embeddings")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("superres", parents=[common], help="embeddings at query locations")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-input", type=int, default=100)
    p.add_argument("--n-query", type=int, default=1000)
    p.add_argument("--query", help="CSV of query coordinates (overrides --n-query)")

    for name, helptext in (
        ("eval", "full metric report, model vs PCA"),
        ("patch-exp", "four-quadrant patch-stitching experiment"),
        ("glue-exp", "two-patch gluing experiment"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True, help="report path prefix")
        p.add_argument("--border-width", type=float, default=0.05)
        p.add_argument("--overlap", type=float, default=0.2)

    p = sub.add_parser("export", parents=[common], help="nearest-neighbour grid CSV")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--sample", help="sample id to export")
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--out", required=True)
    return parser


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        settings = load_settings(args)
        with threadpool_limits(limits=args.threads):
            COMMANDS[args.command](args, settings)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ValidationError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
