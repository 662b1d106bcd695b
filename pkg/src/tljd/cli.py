"""Command-line entry point: ``tljd [--config FILE] [--out DIR] [--force] <command>``.

A run is described by one JSON document holding the training options, the
split protocol and exactly one data source (``data`` + ``schema`` files, or
a ``synth`` block).  Every training run leaves a checkpoint, a tab-separated
log and a manifest that is enough to repeat it.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    TYPES,
    SplitProtocol,
    SynthConfig,
    generate_synthetic,
    load_table,
    make_split,
    write_metadata,
    write_table,
)
from .errors import CompatibilityError, ConfigError, OverwriteError, TljdError, UndefinedMetricError
from .model import TljdModel, schema_hash
from .params import FORMAT_VERSION, atomic_write
from .training import TrainConfig, compute_metrics, train

log = logging.getLogger("tljd.cli")

MANIFEST_VERSION = 1
RUN_KEYS = {"data", "schema", "synth", "protocol", "out", "sweep"}
ABLATION_ROWS = (("full", "TLJD"), ("wo_moe", "w/o moe"), ("wo_ce", "w/o ce"))


# ------------------------------------------------------------------ run configuration


@dataclasses.dataclass
class RunConfig:
    train: TrainConfig
    protocol: SplitProtocol
    data: str | None = None
    schema: str | None = None
    synth: SynthConfig | None = None
    out: str | None = None
    sweep: list = dataclasses.field(default_factory=list)

    @classmethod
    def from_dict(cls, d, base_dir="."):
        d = dict(d)
        if "manifest_version" in d:  # a manifest replays its own snapshot
            d = dict(d["config"])
        train_keys = set(TrainConfig.__dataclass_fields__)
        unknown = set(d) - train_keys - RUN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        has_files = "data" in d or "schema" in d
        if has_files == ("synth" in d):
            raise ConfigError("config needs exactly one data source: 'data' + 'schema' files or a 'synth' block")
        if has_files and not ("data" in d and "schema" in d):
            raise ConfigError("file data source needs both 'data' and 'schema'")

        def resolve(p):
            p = Path(p)
            return str(p if p.is_absolute() else (Path(base_dir) / p).resolve())

        data = schema = None
        if has_files:
            data, schema = resolve(d["data"]), resolve(d["schema"])
            for p in (data, schema):
                if not os.path.isfile(p):
                    raise ConfigError(f"data file not found: {p}")
        sweep = d.get("sweep") or []
        if not isinstance(sweep, list) or not all(isinstance(s, dict) for s in sweep):
            raise ConfigError("'sweep' must be a list of option objects")
        for s in sweep:
            bad = set(s) - train_keys
            if bad:
                raise ConfigError(f"sweep entries may only override training options, got {sorted(bad)}")
        return cls(
            train=TrainConfig.from_dict({k: v for k, v in d.items() if k in train_keys}),
            protocol=SplitProtocol.parse(d.get("protocol", "ccp_mixed_year")),
            data=data,
            schema=schema,
            synth=SynthConfig.from_dict(d["synth"]) if "synth" in d else None,
            out=resolve(d["out"]) if d.get("out") else None,
            sweep=sweep,
        )

    def to_dict(self):
        d = dataclasses.asdict(self.train)
        d["protocol"] = str(self.protocol)
        if self.synth is not None:
            d["synth"] = self.synth.to_dict()
        else:
            d["data"], d["schema"] = self.data, self.schema
        return d

    def with_train(self, **changes):
        return dataclasses.replace(self, train=dataclasses.replace(self.train, **changes), sweep=[])


def load_run_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return RunConfig.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def load_source(cfg):
    if cfg.synth is not None:
        return generate_synthetic(cfg.synth)[0]
    return load_table(cfg.data, cfg.schema)


# ------------------------------------------------------------------ small helpers


def write_json(path, obj):
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def write_text(path, text):
    atomic_write(path, text.encode("utf-8"))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def refuse_overwrite(paths, force):
    existing = [str(p) for p in paths if os.path.exists(p)]
    if existing and not force:
        raise OverwriteError(f"refusing to overwrite {existing}; pass --force")


def metrics_or_partial(y, y_hat, split):
    try:
        return compute_metrics(y, y_hat, split).as_dict()
    except UndefinedMetricError as exc:
        return exc.report.as_dict() | {"r2": None}


def check_schema(model, table):
    """Raise CompatibilityError naming columns where the data and checkpoint disagree."""
    if schema_hash(model.schema) == schema_hash(table.schema):
        return
    want, got = dict(model.schema), dict(table.schema)
    missing = [n for n in want if n not in got]
    unexpected = [n for n in got if n not in want]
    retyped = [f"{n} ({want[n]} -> {got[n]})" for n in want if n in got and want[n] != got[n]]
    parts = []
    if missing:
        parts.append(f"missing {missing}")
    if unexpected:
        parts.append(f"unexpected {unexpected}")
    if retyped:
        parts.append(f"type changed {retyped}")
    if not parts:
        moved = [n for (n, _), (m, _) in zip(model.schema, table.schema) if n != m]
        parts.append(f"column order differs at {moved}")
    raise CompatibilityError("data schema does not match checkpoint: " + "; ".join(parts))


def quartile_summary(table, a):
    """Mean gate weights per FDI group; group 4 holds the top quarter.

    Rows are ranked by FDI in descending order (ties by city id, then year)
    and cut into four nearly equal groups.
    """
    order = sorted(range(len(table)), key=lambda i: (-table.y[i], table.city_ids[i], int(table.years[i])))
    rows = []
    for g, chunk in zip((4, 3, 2, 1), np.array_split(np.array(order, dtype=np.intp), 4)):
        if len(chunk) == 0:
            continue
        mean_a = a[chunk].mean(axis=0)
        rows.append([g, len(chunk)] + [float(v) for v in mean_a] + [float(table.y[chunk].mean())])
    return sorted(rows)


# ------------------------------------------------------------------ commands


def cmd_generate(args, cfg):
    if cfg is None or cfg.synth is None:
        raise ConfigError("generate needs a config with a 'synth' block")
    out = Path(args.out)
    paths = [out / "data.csv", out / "schema.csv", out / "metadata.txt"]
    refuse_overwrite(paths, args.force)
    out.mkdir(parents=True, exist_ok=True)
    table, meta = generate_synthetic(cfg.synth)
    write_table(table, paths[0], paths[1])
    write_metadata(meta, paths[2])
    print(f"wrote {len(table)} rows x {table.K + 3} columns to {paths[0]}")
    return 0


def run_training(cfg, out, force):
    """Train one configuration into ``out`` and return its manifest."""
    out = Path(out)
    manifest_path = out / "manifest.json"
    refuse_overwrite([manifest_path], force)
    out.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()

    table = load_source(cfg)
    split = make_split(table, cfg.protocol, cfg.train.seed)
    result = train(table, split, cfg.train,
                   progress=lambda r: log.info("epoch %d loss %.6g val mae %.6g", r.epoch, r.train_loss, r.val.mae))
    model = result.model
    ckpt = out / "model.ckpt"
    model.save(ckpt, {"run_seed": cfg.train.seed})
    write_text(out / "train_log.tsv", result.log_text())

    metrics = {}
    for name, idx in (("train", split.train), ("val", split.val), ("test", split.test)):
        if len(idx):
            sub = table.subset(idx)
            metrics[name] = metrics_or_partial(sub.y, model.predict_raw(sub.X)[0], name)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "format_version": FORMAT_VERSION,
        "tljd_version": __version__,
        "config": cfg.to_dict(),
        "seed": cfg.train.seed,
        "ablation": cfg.train.ablation,
        "protocol": str(cfg.protocol),
        "split_sizes": {"train": len(split.train), "val": len(split.val), "test": len(split.test)},
        "best_epoch": result.best_epoch,
        "checkpoint": ckpt.name,
        "checkpoint_sha256": sha256_file(ckpt),
        "log": "train_log.tsv",
        "metrics": metrics,
        "timing": "timing.json",
    }
    # wall-clock time lives beside the manifest so reruns stay byte-identical
    write_json(out / "timing.json", {"duration_seconds": round(time.monotonic() - started, 3)})
    write_json(manifest_path, manifest)
    return manifest


def _print_metrics(label, m):
    r2 = "nan" if m.get("r2") is None else f"{m['r2']:.4f}"
    print(f"{label}\tr2={r2}\trmse={m['rmse']:.4f}\tmae={m['mae']:.4f}\tn={m['n']}")


def cmd_train(args, cfg):
    if cfg is None:
        raise ConfigError("train needs --config")
    out = Path(args.out)
    if not cfg.sweep:
        manifest = run_training(cfg, out, args.force)
        for name, m in manifest["metrics"].items():
            _print_metrics(name, m)
        return 0
    lines = ["run\toptions\tval_mae\ttest_r2\ttest_rmse\ttest_mae"]
    best = None
    for i, overrides in enumerate(cfg.sweep):
        manifest = run_training(cfg.with_train(**overrides), out / f"sweep_{i:02d}", args.force)
        val, test = manifest["metrics"]["val"], manifest["metrics"]["test"]
        lines.append("\t".join([f"sweep_{i:02d}", json.dumps(overrides, sort_keys=True),
                                repr(val["mae"]), repr(test["r2"]), repr(test["rmse"]), repr(test["mae"])]))
        if best is None or val["mae"] < best[1]:
            best = (i, val["mae"])
    write_text(out / "sweep.tsv", "\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"best by validation MAE: sweep_{best[0]:02d}")
    return 0


def cmd_ablate(args, cfg):
    if cfg is None:
        raise ConfigError("ablate needs --config")
    out = Path(args.out)
    lines = ["model\tr2\trmse\tmae"]
    for ablation, label in ABLATION_ROWS:
        manifest = run_training(cfg.with_train(ablation=ablation), out / ablation, args.force)
        t = manifest["metrics"]["test"]
        lines.append("\t".join([label, repr(t["r2"]), repr(t["rmse"]), repr(t["mae"])]))
    write_text(out / "ablation.tsv", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def _model_and_table(args, cfg):
    ckpt = args.checkpoint or (os.path.join(args.out, "model.ckpt"))
    model = TljdModel.load(ckpt)
    if args.data or args.schema:
        if not (args.data and args.schema):
            raise ConfigError("--data and --schema go together")
        table = load_table(args.data, args.schema)
    elif cfg is not None:
        table = load_source(cfg)
    else:
        raise ConfigError("no data: pass --data/--schema or --config")
    check_schema(model, table)
    return model, table


def cmd_evaluate(args, cfg):
    model, table = _model_and_table(args, cfg)
    report = {}
    if cfg is not None and not args.data:
        split = make_split(table, cfg.protocol, cfg.train.seed)
        groups = (("train", split.train), ("val", split.val), ("test", split.test))
    else:
        groups = (("all", list(range(len(table)))),)
    for name, idx in groups:
        if len(idx):
            sub = table.subset(idx)
            report[name] = metrics_or_partial(sub.y, model.predict_raw(sub.X)[0], name)
            _print_metrics(name, report[name])
    Path(args.out).mkdir(parents=True, exist_ok=True)
    write_json(Path(args.out) / "evaluation.json", report)
    return 0


def cmd_predict(args, cfg):
    model, table = _model_and_table(args, cfg)
    y_hat = model.predict_raw(table.X)[0]
    out = Path(args.out)
    path = out / "predictions.csv"
    refuse_overwrite([path], args.force)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["city_id,year,y_hat"] + [f"{c},{int(y)},{v!r}" for c, y, v in
                                     zip(table.city_ids, table.years, y_hat.tolist())]
    write_text(path, "\n".join(rows) + "\n")
    _print_metrics("all", metrics_or_partial(table.y, y_hat, "all"))
    return 0


def cmd_weights(args, cfg):
    model, table = _model_and_table(args, cfg)
    if not model.has_experts:
        raise ConfigError("checkpoint has no experts (wo_moe variant); nothing to export")
    y_hat, a, experts = model.predict_raw(table.X)
    out = Path(args.out)
    paths = [out / "weights.csv", out / "weights_summary.csv"]
    refuse_overwrite(paths, args.force)
    out.mkdir(parents=True, exist_ok=True)
    lower = [t.lower() for t in TYPES]
    header = ["city_id", "year"] + [f"a_{t}" for t in lower] + ["y_hat"] + [f"y_hat_{t}" for t in lower]
    with open(paths[0], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(table)):
            w.writerow([table.city_ids[i], int(table.years[i])] + [repr(float(v)) for v in a[i]]
                       + [repr(float(y_hat[i]))] + [repr(float(v)) for v in experts[i]])
    summary = quartile_summary(table, a)
    lines = ["group,n," + ",".join(f"a_{t}" for t in lower) + ",mean_fdi"]
    lines += [",".join([str(r[0]), str(r[1])] + [repr(v) for v in r[2:]]) for r in summary]
    write_text(paths[1], "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "weights": cmd_weights,
    "ablate": cmd_ablate,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="run configuration (JSON)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--force", action="store_true", default=argparse.SUPPRESS,
                        help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="tljd", parents=[common],
                                     description="Train and inspect TLJD mixture-of-experts regressors.")
    parser.add_argument("--version", action="version", version=f"tljd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "ablate"):
        sub.add_parser(name, parents=[common])
    for name in ("evaluate", "predict", "weights"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--checkpoint", help="model checkpoint (default: <out>/model.ckpt)")
        p.add_argument("--data", help="data CSV")
        p.add_argument("--schema", help="schema CSV")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    for key, default in (("config", None), ("out", None), ("force", False), ("verbose", False)):
        if not hasattr(args, key):
            setattr(args, key, default)
    for key in ("checkpoint", "data", "schema"):
        if not hasattr(args, key):
            setattr(args, key, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_run_config(args.config) if args.config else None
        if args.out is None:
            args.out = (cfg.out if cfg is not None and cfg.out else "tljd_run")
        return COMMANDS[args.command](args, cfg)
    except (TljdError, OSError) as exc:
        print(f"tljd: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
