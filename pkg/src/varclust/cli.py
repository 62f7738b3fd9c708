"""varclust command line: generate, cluster, select, evaluate, benchmark.

Exit codes: 0 success, 1 usage, 2 IO, 3 not converged, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .cmvar import CmvarConfig, fit_cmvar
from .core import (
    InvalidArgument,
    NumericFailure,
    VarclustError,
    load_dataset_csv,
    read_labels_csv,
    write_labels_csv,
)
from .datagen import DatasetSpec, generate_dataset, write_dataset
from .klmvar import KlmvarConfig, fit_klmvar, naive_two_step
from .metrics import nmi_details, rand_index
from .modelsel import bic_surface
from .varfit import build_qr_cache

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NOCONV, EXIT_NUMERIC = 0, 1, 2, 3, 4
ALGOS = ("klmvar", "cmvar", "naive2step")
SUITES = ("precision", "scale-K", "scale-T", "scale-m", "twostep-T")
BENCH_HEADER = "# varclust-bench v1"
BENCH_COLUMNS = ["suite", "algo", "m", "p", "T", "K", "Nc", "seed", "ri", "nmi", "seconds", "failed"]

DEFAULTS = {
    "algo": "klmvar",
    "K": None,
    "p": None,
    "tol": 1e-8,
    "max_iters": 500,
    "seed": 0,
    "restarts": None,
    "threads": None,
    "gamma": 0.5,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_range(text: str) -> list[int]:
    """Parse ``a:i:b``, ``a:b``, ``a,b,c`` or a single integer."""
    text = str(text).strip()
    try:
        if ":" in text:
            parts = [int(x) for x in text.split(":")]
            if len(parts) == 2:
                a, i, b = parts[0], 1, parts[1]
            elif len(parts) == 3:
                a, i, b = parts
            else:
                raise ValueError
            if i <= 0 or b < a:
                raise ValueError
            return list(range(a, b + 1, i))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad range {text!r}; expected a:i:b, a:b or a comma list") from None


def _positive(name, value, allow_zero=False):
    if value is None:
        return
    if value < 0 or (value == 0 and not allow_zero):
        raise UsageError(f"--{name.replace('_', '-')} must be positive, got {value}")


def merged_config(args, keys) -> dict:
    """Flags override the JSON config file, which overrides the defaults."""
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(keys)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for k in keys:
        flag = getattr(args, k, None)
        if flag is not None:
            out[k] = flag
        elif k in file_cfg:
            out[k] = file_cfg[k]
        else:
            out[k] = DEFAULTS.get(k)
    for k in ("max_iters", "restarts", "threads", "K"):
        if out.get(k) is not None:
            out[k] = int(out[k])
            _positive(k, out[k])
    if out.get("tol") is not None:
        out["tol"] = float(out["tol"])
        _positive("tol", out["tol"])
    if out.get("seed") is not None:
        out["seed"] = int(out["seed"])
        _positive("seed", out["seed"], allow_zero=True)
    if out.get("algo") is not None and out["algo"] not in ALGOS:
        raise UsageError(f"unknown algorithm {out['algo']!r}")
    return out


def _dataset_path(path) -> Path:
    path = Path(path)
    return path / "data.csv" if path.is_dir() else path


def _load(path):
    p = _dataset_path(path)
    try:
        return load_dataset_csv(p)
    except InvalidArgument as exc:
        raise OSError(f"cannot read dataset {p}: {exc}") from exc


def _threads(value):
    if value is not None:
        return value
    env = os.environ.get("VARCLUST_THREADS")
    return int(env) if env and env.isdigit() and int(env) > 0 else 1


def _algo_config(algo, cfg):
    common = dict(max_iters=cfg["max_iters"], tol=cfg["tol"], seed=cfg["seed"],
                  threads=cfg.get("threads"))
    if cfg.get("restarts") is not None:
        common["restarts"] = cfg["restarts"]
    if algo == "cmvar":
        return CmvarConfig(**common)
    return KlmvarConfig(**common)


def run_algorithm(algo, data, K, orders, cfg, cache=None) -> dict:
    """Run one clustering job and gather everything a results file needs."""
    t0 = time.perf_counter()
    out = {"algo": algo, "K": K, "orders": list(orders), "seed": cfg["seed"], "flags": []}
    if algo == "naive2step":
        if len(set(orders)) != 1:
            raise UsageError("naive2step needs a single common order")
        lab, _, km = naive_two_step(data, K, orders[0], seed=cfg["seed"], cache=cache)
        out.update(labels=lab, converged=True, iterations=int(km.n_iter_),
                   trace=[float(km.inertia_)], objective=float(km.inertia_),
                   components=None, weights=None, underflow_dominated=False)
    elif algo == "klmvar":
        res = fit_klmvar(data, K, orders, _algo_config(algo, cfg), cache=cache)
        out.update(labels=res.label_vector, converged=res.converged, iterations=res.iterations,
                   trace=list(res.objective_trace), objective=res.objective,
                   components=[c.to_dict() for c in res.params.components], weights=None,
                   normalized_covariances=[np.asarray(c).tolist() for c in res.normalized_covariances],
                   cluster_sizes=[int(s) for s in res.cluster_sizes],
                   label_repeat=res.label_repeat, restart_repeats=res.restart_repeats,
                   underflow_dominated=False,
                   flags=sorted(res.flags))
    elif algo == "cmvar":
        res = fit_cmvar(data, K, orders, _algo_config(algo, cfg), cache=cache)
        out.update(labels=res.labels, converged=res.converged, iterations=res.iterations,
                   trace=list(res.loglik_trace), log_likelihood=res.log_likelihood,
                   components=[c.to_dict() for c in res.params.components],
                   weights=res.params.weights.tolist(), responsibilities=res.tau.tau.tolist(),
                   underflow_events=res.underflow_events,
                   naive_underflow_rows=res.naive_underflow_rows,
                   underflow_dominated=res.underflow_dominated,
                   flags=sorted(res.flags))
    else:
        raise UsageError(f"unknown algorithm {algo!r}")
    out["seconds"] = time.perf_counter() - t0
    return out


def _orders(p_arg, K):
    if p_arg is None:
        raise UsageError("--p is required")
    orders = parse_range(p_arg) if isinstance(p_arg, str) else [int(x) for x in np.atleast_1d(p_arg)]
    if len(orders) == 1:
        orders = orders * K
    if len(orders) != K:
        raise UsageError(f"got {len(orders)} orders for K={K}")
    if min(orders) < 1:
        raise UsageError("orders must be >= 1")
    return orders


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, set):
        return sorted(o)
    raise TypeError(type(o).__name__)


# commands

def cmd_generate(args) -> int:
    spec = DatasetSpec(m=args.m, p=args.p, T=args.T, K=args.K, n_per_cluster=args.Nc,
                       seed=args.seed, burn_in=args.burn_in)
    csv_path, json_path = write_dataset(spec, args.output)
    print(f"generated N={spec.K * spec.n_per_cluster} series (m={spec.m}, p={spec.p}, "
          f"T={spec.T}, K={spec.K}, seed={spec.seed})")
    print(f"data:  {csv_path}")
    print(f"truth: {json_path}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    cfg = merged_config(args, ["algo", "K", "p", "tol", "max_iters", "seed", "restarts", "threads"])
    if cfg["K"] is None:
        raise UsageError("--K is required")
    orders = _orders(cfg["p"], cfg["K"])
    cfg["threads"] = _threads(cfg["threads"])
    data = _load(args.data)
    if cfg["K"] > data.N:
        raise UsageError(f"K={cfg['K']} exceeds the number of series {data.N}")
    algo = cfg["algo"]
    try:
        res = run_algorithm(algo, data, cfg["K"], orders, cfg)
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    labels = np.asarray(res.pop("labels")) + 1
    res["labels"] = {sid: int(lab) for sid, lab in zip(data.ids, labels)}
    res["config"] = cfg
    (outdir / "result.json").write_text(json.dumps(res, indent=1, default=_json_default))
    write_labels_csv(outdir / "labels.csv", data.ids, labels)

    sizes = np.bincount(labels - 1, minlength=cfg["K"])
    print(f"{algo}: N={data.N} K={cfg['K']} iterations={res['iterations']} "
          f"converged={res['converged']} seconds={res['seconds']:.3f}")
    print(f"cluster sizes: {sizes.tolist()}")
    print(f"wrote {outdir / 'result.json'} and {outdir / 'labels.csv'}")
    if res.get("underflow_dominated"):
        print("cMVAR failure: the direct responsibility ratio underflows on every series from "
              f"the first E-step ({res.get('naive_underflow_rows', 0)} failing rows over "
              f"{res['iterations']} E-steps, {res.get('underflow_events', 0)} one-hot rows); "
              "the log-domain results were still written", file=sys.stderr)
        return EXIT_NUMERIC
    if res.get("underflow_events"):
        print(f"note: {res['underflow_events']} underflow events handled in the log domain")
    if not res["converged"]:
        print(f"not converged after {res['iterations']} iterations", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = merged_config(args, ["algo", "tol", "max_iters", "seed", "restarts", "threads", "gamma"])
    if cfg["algo"] == "naive2step":
        raise UsageError("select supports klmvar and cmvar")
    gamma = float(cfg["gamma"])
    if not 0.0 <= gamma <= 1.0:
        raise UsageError("--gamma must lie in [0, 1]")
    ks, ps = parse_range(args.K), parse_range(args.p)
    if not ks or not ps or min(ks) < 1 or min(ps) < 1:
        raise UsageError("candidate lists must be non-empty and positive")
    if cfg["restarts"] is None:
        cfg["restarts"] = 3
    threads = _threads(cfg["threads"])
    cfg["threads"] = 1
    data = _load(args.data)
    grid = bic_surface(data, ks, ps, gamma, cfg["algo"], _algo_config(cfg["algo"], cfg), threads)
    out = Path(args.output)
    if out.suffix.lower() != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "grid.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["K", "p", "gamma", "score", "converged", "seed"])
        for row in grid.rows():
            K, p, g, s, c, seed = row
            w.writerow([K, p, g, repr(s) if math.isfinite(s) else "inf", int(c), seed])
    for (K, p), err in sorted(grid.failures.items()):
        print(f"cell K={K} p={p} failed: {err}", file=sys.stderr)
    print(f"grid {len(ks)}x{len(ps)} written to {out}")
    if grid.best is None:
        print("every cell failed", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"best K={grid.best[0]} p={grid.best[1]}")
    return EXIT_OK


def _read_truth(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "truth.json"
    if path.suffix.lower() == ".json":
        obj = json.loads(path.read_text())
        truth = obj.get("truth", obj) if isinstance(obj, dict) else None
        if not isinstance(truth, dict):
            raise OSError(f"{path} has no truth map")
        return {str(k): int(v) for k, v in truth.items()}
    return read_labels_csv(path)


def _read_pred(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "labels.csv"
    return read_labels_csv(path)


def cmd_evaluate(args) -> int:
    pred = _read_pred(args.labels)
    truth = _read_truth(args.truth)
    if set(pred) != set(truth):
        missing = len(set(truth) - set(pred))
        extra = len(set(pred) - set(truth))
        raise UsageError(f"series ids differ: {missing} missing, {extra} unexpected")
    ids = sorted(truth)
    t = [truth[i] for i in ids]
    p = [pred[i] for i in ids]
    ri = rand_index(t, p)
    nmi_val, degenerate = nmi_details(t, p)
    metrics = {"N": len(ids), "ri": ri, "nmi": nmi_val, "nmi_single_cluster": degenerate}
    print(f"RI={ri:.6f} NMI={nmi_val:.6f}")
    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(metrics, indent=1))
    return EXIT_OK


# benchmark suites; each returns (fixed settings, the swept field, its grid)

def _scaled(value, scale, lo):
    return max(lo, int(round(value * scale)))


def suite_grid(suite, scale=1.0) -> list[dict]:
    if suite == "precision":
        base = dict(p=5, T=100, K=_scaled(8, scale, 2), Nc=_scaled(40, scale, 2))
        return [dict(base, m=m) for m in (3, 6, 9)]
    if suite == "scale-K":
        base = dict(m=6, p=5, T=100, Nc=_scaled(50, scale, 2))
        return [dict(base, K=k) for k in range(2, _scaled(84, scale, 2) + 1, 2)]
    if suite == "scale-T":
        base = dict(m=2, p=5, Nc=20, K=5)
        return [dict(base, T=t) for t in range(50, _scaled(1200, scale, 50) + 1, 50)]
    if suite == "scale-m":
        base = dict(p=5, T=150, Nc=20, K=5)
        return [dict(base, m=m) for m in range(2, _scaled(20, scale, 2) + 1)]
    if suite == "twostep-T":
        base = dict(m=3, p=5, K=_scaled(8, scale, 2), Nc=_scaled(40, scale, 2))
        return [dict(base, T=t) for t in range(100, _scaled(1500, scale, 100) + 1, 200)]
    raise UsageError(f"unknown suite {suite!r}")


def _override(grid, field, text):
    if text is None:
        return grid
    values = parse_range(text)
    if not values or min(values) < 1:
        raise UsageError(f"--{field} needs positive values")
    out = []
    seen = set()
    for cell in grid:
        for v in values:
            new = dict(cell, **{field: v})
            key = tuple(sorted(new.items()))
            if key not in seen:
                seen.add(key)
                out.append(new)
    return out


def benchmark_rows(suite, cells, algos, seeds, cfg):
    """Yield one benchmark record per (cell, seed, algo)."""
    for cell in cells:
        for seed in seeds:
            spec = DatasetSpec(m=cell["m"], p=cell["p"], T=cell["T"], K=cell["K"],
                               n_per_cluster=cell["Nc"], seed=seed)
            data, truth, _ = generate_dataset(spec)
            cache = build_qr_cache(data, [spec.p], spec.p, threads=cfg.get("threads"))
            for algo in algos:
                run_cfg = dict(cfg, seed=seed)
                row = dict(suite=suite, algo=algo, seed=seed, **cell)
                t0 = time.perf_counter()
                try:
                    res = run_algorithm(algo, data, spec.K, [spec.p] * spec.K, run_cfg, cache)
                    failed = bool(res.get("underflow_dominated"))
                    lab = np.asarray(res["labels"])
                    row.update(ri=rand_index(truth, lab), nmi=nmi_details(truth, lab)[0],
                               failed=int(failed), result=res)
                except (VarclustError, np.linalg.LinAlgError, FloatingPointError) as exc:
                    row.update(ri=float("nan"), nmi=float("nan"), failed=1, error=str(exc))
                row["seconds"] = time.perf_counter() - t0
                yield row


def cmd_benchmark(args) -> int:
    cfg = merged_config(args, ["tol", "max_iters", "restarts", "threads"])
    cfg["threads"] = _threads(cfg["threads"])
    if not 0 < args.scale <= 1:
        raise UsageError("--scale must lie in (0, 1]")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    bad = [a for a in algos if a not in ALGOS]
    if bad or not algos:
        raise UsageError(f"unknown algorithms {bad}")
    cells = suite_grid(args.suite, args.scale)
    for field in ("m", "p", "T", "K", "Nc"):
        cells = _override(cells, field, getattr(args, field))
    seeds = list(range(args.seed, args.seed + args.seeds))

    out = Path(args.output) if args.output else None
    fh = sys.stdout
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        new = not out.exists() or out.stat().st_size == 0
        fh = open(out, "a", newline="")
    else:
        new = True
    try:
        w = csv.writer(fh)
        if new:
            fh.write(BENCH_HEADER + "\n")
            w.writerow(BENCH_COLUMNS)
        for row in benchmark_rows(args.suite, cells, algos, seeds, cfg):
            w.writerow([row[c] if c not in ("ri", "nmi", "seconds") else f"{row[c]:.6g}"
                        for c in BENCH_COLUMNS])
            fh.flush()
            if "error" in row:
                print(f"{row['algo']} failed at {row['m']},{row['T']},{row['K']} "
                      f"seed {row['seed']}: {row['error']}", file=sys.stderr)
    finally:
        if out is not None:
            fh.close()
    return EXIT_OK


def read_benchmark_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != BENCH_HEADER:
            raise InvalidArgument(f"{path} is not a varclust-bench v1 file")
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    for r in rows:
        for k in ("m", "p", "T", "K", "Nc", "seed", "failed"):
            r[k] = int(r[k])
        for k in ("ri", "nmi", "seconds"):
            r[k] = float(r[k])
    return rows


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="varclust", description="Clustering of vector time series with VAR mixtures.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a labelled dataset")
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--p", type=int, required=True)
    g.add_argument("--T", type=int, required=True)
    g.add_argument("--K", type=int, required=True)
    g.add_argument("--Nc", type=int, required=True, help="series per cluster")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--burn-in", type=int, default=200)
    g.add_argument("-o", "--output", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    def run_flags(sp):
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iters", dest="max_iters", type=int)
        sp.add_argument("--restarts", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--config", help="JSON file with default parameters")

    c = sub.add_parser("cluster", help="cluster a dataset")
    c.add_argument("data", help="dataset CSV or a directory holding data.csv")
    c.add_argument("--algo", choices=ALGOS)
    c.add_argument("--K", type=int)
    c.add_argument("--p", help="order, or comma list of per-cluster orders")
    c.add_argument("--seed", type=int)
    run_flags(c)
    c.add_argument("-o", "--output", required=True, help="output directory")
    c.set_defaults(func=cmd_cluster)

    s = sub.add_parser("select", help="extended BIC over a (K, p) grid")
    s.add_argument("data")
    s.add_argument("--K", required=True, help="candidates, e.g. 2:2:20")
    s.add_argument("--p", required=True, help="candidates, e.g. 2:1:8")
    s.add_argument("--gamma", type=float)
    s.add_argument("--algo", choices=("klmvar", "cmvar"))
    s.add_argument("--seed", type=int)
    run_flags(s)
    s.add_argument("-o", "--output", required=True, help="grid CSV path or directory")
    s.set_defaults(func=cmd_select)

    e = sub.add_parser("evaluate", help="Rand Index and NMI against ground truth")
    e.add_argument("labels", help="labels CSV (or a cluster output directory)")
    e.add_argument("truth", help="truth.json, labels CSV or a dataset directory")
    e.add_argument("-o", "--output", help="metrics JSON path")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("benchmark", help="scaled-down experiment suites")
    b.add_argument("suite", choices=SUITES)
    b.add_argument("--scale", type=float, default=0.25, help="shrink factor for the grids")
    b.add_argument("--seeds", type=int, default=3)
    b.add_argument("--seed", type=int, default=0, help="first seed")
    b.add_argument("--algos", default="klmvar,cmvar,naive2step")
    for f in ("m", "p", "T", "K", "Nc"):
        b.add_argument(f"--{f}", help=f"override the {f} grid (a:i:b or list)")
    run_flags(b)
    b.add_argument("-o", "--output", help="CSV file (appended to); stdout if omitted")
    b.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if not getattr(args, "command", None):
        ap.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"varclust {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidArgument, ValueError) as exc:
        print(f"varclust {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"varclust {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"varclust {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except VarclustError as exc:
        print(f"varclust {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
