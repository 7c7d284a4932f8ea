"""Adam, early stopping, the multi-run evaluation protocol and report writing."""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import TrainConfig, config_dict
from .errors import ConfigError, NumericalError
from .graph import SparseAdjacency, homophily_ratio, make_splits
from .model import (VARIANTS, GcnParams, GcnSaParams, MlpParams, PreparedGraph, VariantConfig,
                    forward, gcn_baseline_forward, mlp_baseline_forward)
from .tensor import Rng

MODELS = ("gcnsa", "gcn", "mlp")
BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8

# Rng sub-stream keys; splits depend only on seed + run index.
SPLIT_STREAM, INIT_STREAM, DROPOUT_STREAM = 0, 1, 2


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, wd: float) -> AdamState:
    """One in-place Adam update with coupled L2: g <- g + 2 wd theta."""
    if len(params) != len(state.m):
        raise ConfigError("optimizer state does not match the parameter list")
    state.t += 1
    c1 = 1.0 - BETA1 ** state.t
    c2 = 1.0 - BETA2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.data.shape:
            raise ConfigError(f"optimizer state shape {m.shape} does not match parameter {p.data.shape}")
        g = np.zeros_like(p.data) if g is None else g
        g = g + (2.0 * wd) * p.data
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        p.data -= step.astype(p.data.dtype)
    return state


def evaluate(z, labels, mask) -> float:
    """Accuracy of row-wise argmax over ``mask``; ties go to the smallest class index."""
    mask = np.asarray(mask)
    if mask.dtype == bool:
        mask = np.flatnonzero(mask)
    if mask.size == 0:
        raise ConfigError("accuracy over an empty node set is undefined")
    zd = z.data if isinstance(z, T.Tensor) else np.asarray(z)
    pred = np.argmax(zd[mask], axis=1)
    return float(np.mean(pred == np.asarray(labels)[mask]))


@dataclass
class RunResult:
    run: int
    seed: int
    best_epoch: int = -1
    test_acc: float = float("nan")
    val_acc: float = float("nan")
    val_loss: float = float("nan")
    h_astar: float | None = None
    seconds: float = 0.0
    epochs_run: int = 0
    failed: bool = False
    error: str = ""
    train_loss: list = field(default_factory=list, repr=False)
    state: dict | None = field(default=None, repr=False)
    a_star: SparseAdjacency | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "run": self.run, "seed": self.seed, "best_epoch": self.best_epoch,
            "test_acc": None if self.failed else self.test_acc,
            "val_acc": None if self.failed else self.val_acc,
            "val_loss": None if self.failed else self.val_loss,
            "h_astar": self.h_astar, "epochs_run": self.epochs_run,
            "failed": self.failed, "error": self.error,
        }


class _Model:
    """Uniform wrapper around GCN-SA and the two baselines."""

    def __init__(self, kind, prep: PreparedGraph, cfg: TrainConfig, variant: VariantConfig, rng: Rng):
        if kind not in MODELS:
            raise ConfigError(f"unknown model {kind!r}; choose from {MODELS}")
        self.kind, self.prep, self.cfg, self.variant = kind, prep, cfg, variant
        g = prep.graph
        if kind == "gcnsa":
            self.params = GcnSaParams.init(g.d, g.c, cfg, variant, rng)
        elif kind == "gcn":
            self.params = GcnParams.init(g.d, cfg.hidden, g.c, rng, cfg.dtype)
        else:
            self.params = MlpParams.init(g.d, cfg.hidden, g.c, rng, cfg.dtype)

    def __call__(self, rng, training, pairs=None):
        """Probabilities and the learned adjacency (or None)."""
        if self.kind == "gcnsa":
            out = forward(self.prep, self.params, self.cfg, self.variant, rng, training, pairs)
            return out.z, out.reconnected
        fn = gcn_baseline_forward if self.kind == "gcn" else mlp_baseline_forward
        return fn(self.prep, self.params, rng, training, self.cfg.dropout), None


def _prepare(g, cfg):
    return g if isinstance(g, PreparedGraph) else PreparedGraph.from_graph(g, cfg.dtype)


def train_one_run(g, cfg: TrainConfig, variant: VariantConfig = VARIANTS["full"],
                  run_index: int = 0, model: str = "gcnsa", keep_state: bool = False) -> RunResult:
    """Train from a fresh split and initialisation; test the best-validation snapshot."""
    prep = _prepare(g, cfg)
    graph = prep.graph
    seed = cfg.seed + run_index
    base = Rng(seed)
    splits = make_splits(graph, cfg.ratios, base.child(SPLIT_STREAM), cfg.min_per_class)
    if min(len(splits.train), len(splits.val), len(splits.test)) == 0:
        raise ConfigError("every split must contain at least one node")
    result = RunResult(run_index, seed)
    start = time.perf_counter()
    net = _Model(model, prep, cfg, variant, base.child(INIT_STREAM))
    params = net.params.parameters()
    state = AdamState.zeros_like(params)
    labels = prep.labels
    best = math.inf
    best_state = None
    best_test = None
    stale = 0
    # The selection made by the evaluation pass is reused by the next training
    # pass: parameters are unchanged in between, so it is the same selection.
    pairs = None
    try:
        for epoch in range(cfg.epochs):
            z, _ = net(base.child(DROPOUT_STREAM, epoch), True, pairs)
            objective = T.nll(z, labels, splits.train)
            for p in params:
                p.grad = None
            objective.backward()
            adam_step(params, [p.grad for p in params], state, cfg.lr, cfg.wd)
            result.train_loss.append(float(objective.data) / len(splits.train))
            with T.no_grad():
                z_eval, rec = net(None, False)
                val_loss = float(T.nll(z_eval, labels, splits.val).data) / len(splits.val)
            pairs = None if rec is None else rec.pairs
            if not math.isfinite(val_loss):
                raise NumericalError(f"validation loss became {val_loss}")
            result.epochs_run = epoch + 1
            if val_loss < best:
                best, stale = val_loss, 0
                best_state = net.params.state_dict()
                best_test = evaluate(z_eval, labels, splits.test)
                result.best_epoch = epoch
                result.val_loss = val_loss
                result.val_acc = evaluate(z_eval, labels, splits.val)
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        net.params.load_state_dict(best_state)
        with T.no_grad():
            z_best, rec = net(None, False)
        result.test_acc = evaluate(z_best, labels, splits.test)
        # The reported accuracy must come from the best-validation epoch.
        assert result.test_acc == best_test, "snapshot bookkeeping mismatch"
        if rec is not None:
            result.a_star = rec.a_star()
            if result.a_star.nnz:
                result.h_astar = homophily_ratio(graph, result.a_star)
        if keep_state:
            result.state = best_state
    except (NumericalError, FloatingPointError) as exc:
        result.failed = True
        result.error = f"numerical failure: {exc}"
    result.seconds = time.perf_counter() - start
    return result


def _run_star(args):
    return train_one_run(*args)


def run_protocol(g, cfg: TrainConfig, variant: VariantConfig = VARIANTS["full"], model="gcnsa",
                 runs=None, jobs=1, keep_state=False, progress=None):
    """Independent runs ``0..runs-1``; results ordered by run index."""
    runs = cfg.runs if runs is None else runs
    prep = _prepare(g, cfg)
    tasks = [(prep, cfg, variant, k, model, keep_state) for k in range(runs)]
    if jobs > 1 and runs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_star, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_run_star(t))
            if progress:
                progress(results[-1])
    return sorted(results, key=lambda r: r.run)


def _mean_std(values):
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), (float(arr.std(ddof=1)) if arr.size > 1 else None)


def aggregate(results) -> dict:
    """Mean and sample standard deviation over non-failed runs."""
    ok = [r for r in results if not r.failed]
    failed = [r.run for r in results if r.failed]
    if failed:
        warnings.warn(f"runs {failed} failed and are excluded from the aggregate", RuntimeWarning)
    acc_mean, acc_std = _mean_std([r.test_acc for r in ok])
    h_vals = [r.h_astar for r in ok if r.h_astar is not None]
    h_mean, h_std = _mean_std(h_vals)
    return {
        "runs": len(results), "completed": len(ok), "failed_runs": failed,
        "test_acc_mean": acc_mean, "test_acc_std": acc_std,
        "h_astar_mean": h_mean, "h_astar_std": h_std,
    }


def environment_block() -> dict:
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "platform": platform.platform()}


def build_report(cfg: TrainConfig, results, *, dataset="", variant="full", model="gcnsa",
                 include_environment=True) -> dict:
    report = {
        "dataset": dataset, "model": model, "variant": variant,
        "config": config_dict(cfg),
        "per_run": [r.summary() for r in results],
        "aggregate": aggregate(results),
    }
    if include_environment:
        report["environment"] = environment_block()
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


RUNS_CSV_COLUMNS = ("run", "seed", "best_epoch", "test_acc", "h_astar", "seconds")


def runs_csv(results, record_time=False) -> str:
    """One row per run; ``seconds`` stays empty unless ``record_time`` so the file is reproducible."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUNS_CSV_COLUMNS)
    for r in results:
        w.writerow([
            r.run, r.seed, r.best_epoch,
            "" if r.failed else repr(r.test_acc),
            "" if r.h_astar is None else repr(r.h_astar),
            f"{r.seconds:.3f}" if record_time else "",
        ])
    return buf.getvalue()


def best_run(results) -> RunResult | None:
    """Highest validation accuracy, then lowest validation loss, then lowest run index."""
    ok = [r for r in results if not r.failed]
    if not ok:
        return None
    return min(ok, key=lambda r: (-r.val_acc, r.val_loss, r.run))

