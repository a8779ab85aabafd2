"""Command-line entry point: gen, pretrain, train, eval, ablate, plot.

Failures exit nonzero with one JSON line on stderr:
2 config, 3 data (missing/malformed dataset or model), 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from .config import ConfigError
from .dataset import DatasetError, build_dataset, dataset_hash, read_dataset, write_dataset
from .metrics import toy_ap
from .pretext import load_pretrained, save_pretrained
from .trainer import (FLAGS, NumericalError, VARIANTS, ablate, dump_predictions, load_model,
                      pretrain_encoders, rows_to_csv, summarize, train)

log = logging.getLogger("graspda")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
RUN_MANIFEST = "run_manifest.json"


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load_doc(path) -> dict:
    """Raw config document (validated later, after flag overrides)."""
    if path is None:
        return {}
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def _read_data(path):
    try:
        return read_dataset(path), dataset_hash(path)
    except DatasetError as exc:
        raise DataError(f"dataset {path}: {exc}") from None
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"dataset {path}: {exc}") from None


def _manifest(args, command: str, cfg: dict, started: str, **extra) -> dict:
    return {"tool": "graspda", "version": __version__, "command": command, "argv": list(args.argv),
            "config": cfg, "started": started, "finished": _now(), **extra}


def _write_manifest(out: Path, manifest: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / RUN_MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _flag_overrides(args) -> dict:
    vals = {"total_steps": args.steps, "seed": args.seed}
    for f in FLAGS:
        v = getattr(args, f)
        if v is not None:
            vals[f] = v
    if args.variant is not None:
        vals.update(VARIANTS[args.variant])
    return vals


# -- commands --------------------------------------------------------------------

def cmd_gen(args) -> int:
    started = _now()
    doc = config_mod.override(_load_doc(args.config), "dataset", seed=args.seed)
    rc = config_mod.from_dict(doc)
    ds = build_dataset(rc.dataset)
    out = Path(args.out)
    run = _manifest(args, "gen", rc.to_dict(), started, seed=rc.dataset.seed, outputs={"dataset": str(out)})
    write_dataset(ds, out, run=run)
    h = dataset_hash(out)
    print(json.dumps({"dataset": str(out), "scenes": len(ds.scenes), "hash": h}))
    return 0


def cmd_pretrain(args) -> int:
    started = _now()
    doc = config_mod.override(_load_doc(args.config), "train", seed=args.seed, pretrain_steps=args.steps)
    rc = config_mod.from_dict(doc)
    ds, h = _read_data(args.data)
    t0 = time.perf_counter()
    weights = pretrain_encoders(ds, rc.net, rc.train.pretrain_steps, rc.train.seed, rc.train.pretrain_batch)
    out = Path(args.out)
    paths = save_pretrained(weights, out)
    _write_manifest(out, _manifest(args, "pretrain", rc.to_dict(), started, seed=rc.train.seed, dataset=str(args.data),
                                   dataset_hash=h, outputs={k: str(v) for k, v in paths.items()},
                                   seconds=round(time.perf_counter() - t0, 3)))
    print(json.dumps({"pretrained": str(out)}))
    return 0


def cmd_train(args) -> int:
    started = _now()
    doc = config_mod.override(_load_doc(args.config), "train", **_flag_overrides(args))
    rc = config_mod.from_dict(doc)
    ds, h = _read_data(args.data)
    init = None
    if args.init is not None:
        try:
            init = load_pretrained(args.init)
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"pretrained encoders {args.init}: {exc}") from None
    out = Path(args.out)
    t0 = time.perf_counter()
    res = train(rc.train, ds, init=init, net_cfg=rc.net, out_dir=out, log_every=args.log_every)
    _write_manifest(out, _manifest(args, "train", rc.to_dict(), started, seed=rc.train.seed, dataset=str(args.data),
                                   dataset_hash=h, init=args.init,
                                   outputs={"model": str(out / "model_final.json"), "metrics": str(out / "metrics.csv")},
                                   seconds=round(time.perf_counter() - t0, 3)))
    print(json.dumps({"model": str(out), "final_total": res.metrics[-1]["total"]}))
    return 0


def cmd_eval(args) -> int:
    started = _now()
    ds, h = _read_data(args.data)
    try:
        net = load_model(args.model, args.tag)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"model {args.model}: {exc}") from None
    scenes = ds.split(args.split)
    if not scenes:
        raise DataError(f"split {args.split!r} is empty in {args.data}")
    if not any(s.grasps for s in scenes):
        raise DataError(f"split {args.split!r} carries no labels")
    preds = net.predict(scenes)
    ap = toy_ap(preds, [s.grasps for s in scenes], net.cfg.jaw_height)
    report = {"split": args.split, "scenes": len(scenes), "toy_ap": ap}
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "predictions.json").write_text(dump_predictions(preds, scenes))
        (out / "report.json").write_text(json.dumps(report, indent=1))
        _write_manifest(out, _manifest(args, "eval", {}, started, model=str(args.model), dataset=str(args.data),
                                       dataset_hash=h, outputs={"predictions": str(out / "predictions.json"),
                                                                "report": str(out / "report.json")}))
    print(json.dumps(report))
    return 0


def cmd_ablate(args) -> int:
    started = _now()
    overrides = {}
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
    if args.variants is not None:
        overrides["variants"] = args.variants
    doc = config_mod.override(_load_doc(args.config), "ablation", **overrides)
    doc = config_mod.override(doc, "train", total_steps=args.steps)
    rc = config_mod.from_dict(doc)
    if args.data is not None:
        ds, h = _read_data(args.data)
    else:
        ds, h = build_dataset(rc.dataset), None
    out = Path(args.out)
    rows = ablate(rc.train, ds, rc.seeds, rc.variants, net_cfg=rc.net, out_dir=out / "runs")
    for r in rows:
        run_dir = out / "runs" / f"{r['variant']}_seed{r['seed']}"
        cfg = rc.to_dict()
        cfg["train"].update(seed=r["seed"], **VARIANTS[r["variant"]])
        _write_manifest(run_dir, _manifest(args, "ablate/run", cfg, started, seed=r["seed"], dataset_hash=h,
                                           outputs={"model": str(run_dir / "model_final.json")}))
    (out / "results.csv").write_text(rows_to_csv(rows))
    summary = summarize(rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    _write_manifest(out, _manifest(args, "ablate", rc.to_dict(), started, seed=list(rc.seeds), dataset=args.data,
                                   dataset_hash=h, outputs={"results": str(out / "results.csv"),
                                                            "summary": str(out / "summary.json")}))
    print(json.dumps(summary))
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_file
    try:
        plot_file(args.metrics, args.out, ablation=args.ablation)
    except FileNotFoundError as exc:
        raise DataError(f"{exc.filename}: not found") from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"{args.metrics}: {exc}") from None
    print(json.dumps({"svg": str(args.out)}))
    return 0


# -- parser ----------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="graspda", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="build the dual-domain dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen)

    pr = sub.add_parser("pretrain", help="rotation pretext pretraining of both encoders")
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--config")
    pr.add_argument("--steps", type=int)
    pr.add_argument("--seed", type=int)
    pr.set_defaults(func=cmd_pretrain)

    t = sub.add_parser("train", help="adaptation training")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--init", help="directory written by `pretrain`")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--variant", choices=list(VARIANTS))
    for f in FLAGS:
        t.add_argument(f"--{f.replace('_', '-')}", dest=f, type=_bool, metavar="BOOL")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="toy-AP of a trained model on one split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="real_eval", choices=["sim_train", "real_train", "real_eval"])
    e.add_argument("--tag", default="final")
    e.add_argument("--out", help="directory for predictions.json and report.json")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="variant x seed grid")
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--data", help="existing dataset directory (default: generate from config)")
    a.add_argument("--seeds", type=_int_list)
    a.add_argument("--variants", type=lambda s: [v for v in s.split(",") if v])
    a.add_argument("--steps", type=int)
    a.set_defaults(func=cmd_ablate)

    pl = sub.add_parser("plot", help="SVG of training curves or an ablation bar chart")
    pl.add_argument("--metrics", required=True, help="metrics.csv from `train` or results.csv from `ablate`")
    pl.add_argument("--ablation", help="optional results.csv to add a bar-chart panel")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def _fail(code: int, kind: str, message: str, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": message, **extra}) + "\n")
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        # non-finite values are caught and reported as exit 4; numpy's warnings would break the one-line contract
        with np.errstate(all="ignore"):
            return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except DataError as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc), component=exc.component, step=exc.step)


if __name__ == "__main__":
    sys.exit(main())
