"""``gcnsa`` command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fixtures
from .config import PRESETS, TrainConfig, check_search_grid, config_dict, dump_config, load_config
from .errors import ConfigError, DataError, NumericalError
from .graph import Graph, connected_components, homophily_ratio, load_graph, write_edge_csv
from .model import VARIANTS, GcnSaParams, PreparedGraph, forward, get_variant
from .tensor import Rng, no_grad
from .training import (INIT_STREAM, best_run, build_report, report_json, run_protocol,
                       runs_csv)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ENV = "GCNSA_DATA_DIR"

log = logging.getLogger("gcnsa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# Dataset and config resolution


def _candidates(name):
    root = os.environ.get(DATA_ENV)
    if not root:
        return []
    base = Path(root)
    names = dict.fromkeys([name, name.lower()])
    out = []
    for n in names:
        out += [base / n, base / f"{n}.json", base / f"{n}.json.gz", base / f"{n}.content", base / f"{n}.content.gz"]
    return out


def resolve_dataset(source: str, fmt: str | None = None) -> Graph:
    """A path, a name under ``$GCNSA_DATA_DIR``, or ``fixture:<name>``."""
    if source.startswith("fixture:"):
        key = source.split(":", 1)[1]
        builders = {**{k: (lambda k=k: fixtures.toy_graphs()[k]) for k in ("high-h", "low-h", "random")},
                    "webkb-like": fixtures.webkb_like}
        if key not in builders:
            raise DataError(f"unknown fixture {key!r}; available: {', '.join(builders)}")
        return builders[key]()
    drop = Path(source).name.lower().startswith("citeseer")
    p = Path(source)
    if p.exists():
        return _load(p, fmt, drop)
    for cand in _candidates(source):
        if cand.exists():
            return _load(cand, fmt, drop)
    where = f" or under ${DATA_ENV}={os.environ[DATA_ENV]}" if os.environ.get(DATA_ENV) else f" (set ${DATA_ENV})"
    raise DataError(f"dataset {source!r} not available: no such path{where}")


def _load(path, fmt, drop_dangling):
    if fmt in (None, "auto"):
        fmt = None
    kwargs = {}
    is_json = fmt == "json" or (fmt is None and path.name.endswith((".json", ".json.gz")))
    if not is_json:
        kwargs["drop_dangling"] = drop_dangling
    g = load_graph(path, fmt, **kwargs)
    return g


def dataset_key(source: str) -> str:
    name = Path(source.split(":", 1)[-1]).name.lower()
    for suffix in (".gz", ".json"):
        name = name[: -len(suffix)] if name.endswith(suffix) else name
    return name


def resolve_config(args) -> TrainConfig:
    key = dataset_key(args.dataset)
    if args.config:
        cfg = load_config(args.config)
    elif key in PRESETS:
        cfg = load_config(key)
    else:
        cfg = TrainConfig()
    overrides = {}
    for flag, field in (("runs", "runs"), ("epochs", "epochs"), ("patience", "patience"),
                        ("seed", "seed"), ("block_rows", "block_rows"),
                        ("residual_dropout_variant", "residual_dropout_variant"), ("dtype", "dtype")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        overrides[k] = v
    if overrides:
        from .config import config_from_mapping

        cfg = config_from_mapping(overrides, cfg)
    if getattr(args, "search_grid", False):
        check_search_grid(cfg)
    return cfg


# ---------------------------------------------------------------------------
# Commands


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")


def save_checkpoint(path: Path, state: dict, cfg: TrainConfig, variant: str, dataset: str):
    arrays = {f"param/{k}": v for k, v in state.items()}
    meta = json.dumps({"config": config_dict(cfg), "variant": variant, "dataset": dataset}, sort_keys=True)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, __meta__=np.array(meta), **arrays)


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {str(path)!r} not found")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        state = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    cfg = TrainConfig(**{**meta["config"], "ratios": tuple(meta["config"]["ratios"])})
    return state, cfg, meta["variant"], meta["dataset"]


def _campaign(g, cfg, variant, model, out: Path, dataset, args):
    def progress(r):
        status = "FAILED " + r.error if r.failed else f"test_acc={r.test_acc:.4f} best_epoch={r.best_epoch}"
        log.info("run %d (seed %d): %s", r.run, r.seed, status)

    results = run_protocol(g, cfg, variant, model, jobs=args.jobs, keep_state=True, progress=progress)
    report = build_report(cfg, results, dataset=dataset, variant=variant.name, model=model)
    _write(out / "report.json", report_json(report))
    _write(out / "runs.csv", runs_csv(results, record_time=args.record_time))
    _write(out / "timing.json", json.dumps({"seconds": [round(r.seconds, 3) for r in results]}) + "\n")
    _write(out / "config.cfg", dump_config(cfg))
    best = best_run(results)
    if best is not None:
        if best.a_star is not None:
            write_edge_csv(best.a_star, out / "astar_edges.csv")
        save_checkpoint(out / "checkpoint.npz", best.state, cfg, variant.name, dataset)
    return results, report


def _print_aggregate(agg, stream=None):
    stream = stream or sys.stdout
    mean, std = agg["test_acc_mean"], agg["test_acc_std"]
    if mean is None:
        print("no completed runs", file=stream)
        return
    std_txt = "n/a" if std is None else f"{100 * std:.1f}"
    line = f"test accuracy {100 * mean:.1f} +/- {std_txt} over {agg['completed']} run(s)"
    if agg["h_astar_mean"] is not None:
        line += f"; learned-graph homophily {agg['h_astar_mean']:.3f}"
    print(line, file=stream)


def cmd_train(args) -> int:
    g = resolve_dataset(args.dataset, args.format)
    cfg = resolve_config(args)
    variant = get_variant(args.variant)
    out = Path(args.out)
    results, report = _campaign(g, cfg, variant, args.model, out, dataset_key(args.dataset), args)
    _print_aggregate(report["aggregate"])
    if not report["aggregate"]["completed"]:
        print("error: every run failed numerically", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_ablate(args) -> int:
    g = resolve_dataset(args.dataset, args.format)
    cfg = resolve_config(args)
    names = args.variant.split(",") if args.variant else list(VARIANTS)
    variants = [get_variant(n.strip()) for n in names]
    out = Path(args.out)
    rows = []
    for v in variants:
        _, report = _campaign(g, cfg, v, "gcnsa", out / v.name, dataset_key(args.dataset), args)
        agg = report["aggregate"]
        rows.append((v.name, agg["test_acc_mean"], agg["test_acc_std"], agg["completed"]))
        print(f"{v.name:<14s}", end=" ")
        _print_aggregate(agg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "use_a", "use_a_star", "fusion1", "fusion2", "block_kind",
                "test_acc_mean", "test_acc_std", "completed"])
    for (name, mean, std, done), v in zip(rows, variants):
        w.writerow([name, int(v.use_a), int(v.use_a_star), int(v.fusion1), int(v.fusion2), v.block_kind,
                    "" if mean is None else repr(mean), "" if std is None else repr(std), done])
    _write(out / "ablation.csv", buf.getvalue())
    return EXIT_OK


def cmd_structure(args) -> int:
    g = resolve_dataset(args.dataset, args.format)
    if not args.untrained and not args.checkpoint:
        raise ConfigError("structure needs --checkpoint PATH or --untrained")
    h_orig = homophily_ratio(g) if g.num_edges else None
    out = Path(args.out)
    if args.checkpoint:
        state, cfg, vname, _ = load_checkpoint(args.checkpoint)
        variant = get_variant(vname)
        if not variant.use_a_star:
            raise ConfigError(f"checkpoint variant {vname!r} has no learned graph")
    else:
        cfg = resolve_config(args)
        variant = VARIANTS["full"]
    prep = PreparedGraph.from_graph(g, cfg.dtype)
    params = GcnSaParams.init(g.d, g.c, cfg, variant, Rng(cfg.seed).child(INIT_STREAM))
    with no_grad():
        rec_init = forward(prep, params, cfg, variant).reconnected
        h_init = homophily_ratio(g, rec_init.a_star()) if rec_init.pairs.size else None
        rec = rec_init
        h_learned = None
        if args.checkpoint:
            params.load_state_dict(state)
            rec = forward(prep, params, cfg, variant).reconnected
            h_learned = homophily_ratio(g, rec.a_star()) if rec.pairs.size else None
    a_star = rec.a_star()
    out.mkdir(parents=True, exist_ok=True)
    write_edge_csv(a_star, out / "astar_edges.csv")
    fmt = lambda v: "n/a" if v is None else f"{v:.3f}"  # noqa: E731
    print(f"h(original)    {fmt(h_orig)}")
    print(f"h(initialized) {fmt(h_init)}")
    if args.checkpoint:
        print(f"h(learned)     {fmt(h_learned)}")
    print(f"learned graph: {len(rec.pairs)} undirected edges, "
          f"{connected_components(a_star)} connected component(s)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    names = args.op or None
    if args.inject_broken:
        with gradcheck.broken_backward(args.inject_broken):
            results = gradcheck.run_checks(names)
    else:
        results = gradcheck.run_checks(names)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_homophily(args) -> int:
    g = resolve_dataset(args.dataset, args.format)
    print(f"{homophily_ratio(g):.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _dataset_args(p, required=True):
    p.add_argument("--dataset", required=required,
                   help=f"path, name under ${DATA_ENV}, or fixture:<high-h|low-h|random|webkb-like>")
    p.add_argument("--format", choices=["auto", "json", "content-cites"], default="auto")


def _config_args(p):
    p.add_argument("--config", help="key=value or JSON config file, or a preset name")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--runs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--block-rows", type=int, dest="block_rows")
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--residual-dropout-variant", choices=["raw", "dropped"], dest="residual_dropout_variant")
    p.add_argument("--paper-grid", action="store_true", dest="search_grid",
                   help="reject settings outside the published search ranges")


def _campaign_args(p, out_default):
    p.add_argument("--out", default=out_default)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--record-time", action="store_true", dest="record_time",
                   help="fill the seconds column of runs.csv (makes it machine dependent)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gcnsa", description="Graph convolution with learned structure and self-attention.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="run the multi-run training protocol")
    _dataset_args(p)
    _config_args(p)
    p.add_argument("--variant", default="full", help=f"one of {', '.join(VARIANTS)}")
    p.add_argument("--model", default="gcnsa", choices=["gcnsa", "gcn", "mlp"])
    _campaign_args(p, "gcnsa-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train several variants and tabulate them")
    _dataset_args(p)
    _config_args(p)
    p.add_argument("--variant", help="comma-separated variant names (default: all)")
    _campaign_args(p, "gcnsa-ablation")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("structure", help="export the learned graph and its homophily")
    _dataset_args(p)
    _config_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--untrained", action="store_true")
    p.add_argument("--out", default="gcnsa-structure")
    p.set_defaults(func=cmd_structure)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--op", action="append", help="restrict to one check (repeatable)")
    p.add_argument("--inject-broken", dest="inject_broken", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("homophily", help="edge homophily ratio of a dataset")
    _dataset_args(p)
    p.set_defaults(func=cmd_homophily)
    for p in sub.choices.values():
        p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
