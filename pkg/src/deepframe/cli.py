"""Command-line front end.

Machine-readable output goes to stdout (JSON by default, CSV with
``--format csv``), a short human summary to stderr.  Exit status is 0 on
success, 1 on a usage or spec error and 2 when a computation fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from ._version import __version__
from .archspec import SpecError, expand_family, param_count, spec_hash, spec_to_dict
from .bound import chain_lower_bound, welch_bound
from .dictionary import MaterializationError, build_dictionary
from .gram import ZeroColumnError, count_offdiag, gram_blocks
from .minimize import MinimizationError, MinimizeConfig, MinimizeResult, minimize_potential, \
    score_architectures
from .potential import potential_report
from .sparse import invariant_suite
from .store import RecordStore, RunRecord, config_hash
from .validation import check_spec, load_spec_lines

logger = logging.getLogger("deepframe")

RANK_COLUMNS = ("id", "params", "potential", "bound", "seconds")
SWEEP_COLUMNS = ("family", "depth", "width", "input_dim", "params", "potential", "bound",
                 "n_offdiag", "seconds", "status")
DEFAULT_RUN_DIR = ".deepframe-runs"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# formatting


def fmt(value) -> str:
    """CSV cell: 12 significant digits for reals, empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        return f"{float(value):.12g}"
    return str(value)


def write_csv(rows, columns, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])


def matrix_csv(M: np.ndarray, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow([f"a{j}" for j in range(M.shape[1])])
    for row in M:
        w.writerow([fmt(v) for v in row])


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def emit_json(obj, stream=None) -> None:
    stream = stream or sys.stdout
    stream.write(json.dumps(obj, indent=2, default=_json_default) + "\n")


def summary(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_or_print(args, writer) -> str | None:
    """Send CSV to ``--out`` when given, else to stdout."""
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            writer(fh)
        return str(args.out)
    writer(sys.stdout)
    return None


# ---------------------------------------------------------------------------
# parsing helpers


def parse_int_list(text: str) -> list[int]:
    """``"2..5"`` or ``"2,4,8"`` (or a mix such as ``"2..4,8"``)."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                a, b = part.split("..")
                lo, hi = int(a), int(b)
                if hi < lo:
                    raise ValueError
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise UsageError(f"cannot parse integer list {text!r}") from None
    if not out:
        raise UsageError(f"empty integer list {text!r}")
    return out


def minimize_config(args) -> MinimizeConfig:
    try:
        return MinimizeConfig(max_iters=args.max_iters, restarts=args.restarts, rel_tol=args.tol,
                              seed=args.seed, step_rule=args.step_rule, init_step=args.init_step,
                              jobs=args.jobs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def collect_specs(paths) -> list:
    specs = []
    for p in map(Path, paths):
        if p.is_dir():
            files = sorted(p.glob("*.json")) + sorted(p.glob("*.jsonl"))
            if not files:
                raise UsageError(f"no spec files in {p}")
            specs.extend(collect_specs(files))
        elif p.suffix == ".jsonl":
            specs.extend(load_spec_lines(p))
        else:
            specs.append(check_spec(p))
    if not specs:
        raise UsageError("no specs given")
    return specs


class CachedMinimizer:
    """``minimize_potential`` served through the record store."""

    def __init__(self, store: RecordStore | None):
        self.store = store
        self.hits = 0

    def __call__(self, spec, config: MinimizeConfig):
        h = spec_hash(spec)
        cfg = config.to_dict()
        if self.store is not None:
            rec = self.store.lookup(h, config_hash("minimize", cfg))
            if rec is not None:
                self.hits += 1
                res = rec.result
                return MinimizeResult(res["best_potential"], np.asarray(res.get("best_params", [])),
                                      [], 0.0, res.get("best_restart", 0))
        result = minimize_potential(spec, config)
        if self.store is not None:
            self.store.append(RunRecord.create(spec.id, h, "minimize", cfg, result.to_dict()))
        return result


def _store(args) -> RecordStore | None:
    return None if args.no_cache else RecordStore(args.run_dir)


# ---------------------------------------------------------------------------
# subcommands


def cmd_describe(args) -> int:
    spec = check_spec(args.spec)
    d = build_dictionary(spec, init="zeros")
    out = {"spec": spec_to_dict(spec), "spec_hash": spec_hash(spec), "family": spec.family,
           "depth": spec.depth, "widths": list(spec.widths), "param_count": param_count(spec),
           "n_offdiag": count_offdiag(spec), "rows": d.n_rows, "atoms": d.n_atoms}
    emit_json(out)
    summary(f"{spec.family} depth {spec.depth}: {out['param_count']} parameters, "
            f"{out['atoms']} atoms, {out['n_offdiag']} structural off-diagonal Gram entries")
    return 0


def cmd_gram(args) -> int:
    spec = check_spec(args.spec)
    d = build_dictionary(spec, seed=args.seed)
    G = gram_blocks(d).dense()
    rep = potential_report(d)
    files = None
    if args.out:
        out = Path(args.out)
        abs_path = out.with_name(out.stem + "_abs" + (out.suffix or ".csv"))
        with open(out, "w", encoding="utf-8", newline="") as fh:
            matrix_csv(G, fh)
        with open(abs_path, "w", encoding="utf-8", newline="") as fh:
            matrix_csv(np.abs(G), fh)
        files = [str(out), str(abs_path)]
    if args.format == "csv" and not args.out:
        matrix_csv(G, sys.stdout)
    else:
        emit_json({"spec_hash": spec_hash(spec), "seed": args.seed, "atoms": int(G.shape[0]),
                   "n_offdiag": rep.n_offdiag, "frame_potential": rep.frame_potential,
                   "coherence": rep.coherence, "files": files})
    summary(f"Gram matrix {G.shape[0]}x{G.shape[1]}, F^2 = {rep.frame_potential:.6g}")
    return 0


def cmd_potential(args) -> int:
    spec = check_spec(args.spec)
    d = build_dictionary(spec, seed=args.seed)
    rep = potential_report(d)
    emit_json({"spec_hash": spec_hash(spec), "seed": args.seed, **rep.to_dict()})
    summary(f"F^2 = {rep.frame_potential:.6g}, mu = {rep.coherence:.6g} at seed {args.seed}")
    return 0


def cmd_minimize(args) -> int:
    spec = check_spec(args.spec)
    cfg = minimize_config(args)
    store = _store(args)
    h, ch = spec_hash(spec), config_hash("minimize", cfg.to_dict())
    t0 = time.perf_counter()
    rec = store.lookup(h, ch) if store is not None else None
    cached = rec is not None
    if rec is None:
        result = minimize_potential(spec, cfg)
        rec = RunRecord.create(spec.id, h, "minimize", cfg.to_dict(), result.to_dict())
        if store is not None:
            store.append(rec)
    out = {"spec_id": spec.id, "spec_hash": h, "config_hash": ch, "cached": cached,
           "seconds": time.perf_counter() - t0, "config": rec.config, "result": rec.result}
    if args.format == "csv":
        row = {"id": spec.id or h[:12], "params": param_count(spec),
               "potential": rec.result["best_potential"], "bound": None,
               "seconds": out["seconds"]}
        _write_or_print(args, lambda fh: write_csv([row], RANK_COLUMNS, fh))
    else:
        emit_json(out)
    summary(f"minimum F^2 = {rec.result['best_potential']:.12g}"
            f"{' (cached)' if cached else ''}")
    return 0


def cmd_bound(args) -> int:
    if args.widths:
        widths = parse_int_list(args.widths)
    elif args.spec:
        spec = check_spec(args.spec)
        if not spec.chain_form or spec.input_geom.is_conv or any(g.is_conv for g in spec.layers):
            raise UsageError("the analytic bound covers dense chain networks only")
        widths = list(spec.widths)
    else:
        raise UsageError("give a chain spec or --widths")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        b = chain_lower_bound(widths, mode=args.mode)
    out = {"widths": widths, **b.to_dict(), "n_offdiag": b.n_offdiag, "notes": b.notes,
           "welch_squared": welch_bound(widths[0], widths[1]) ** 2 if widths[1] > widths[0] else 0.0,
           "warnings": [str(w.message) for w in caught]}
    emit_json(out)
    summary(f"chain bound for {widths} ({args.mode}): {b.bound:.12g}")
    return 0


def cmd_rank(args) -> int:
    specs = collect_specs(args.specs)
    cfg = minimize_config(args)
    cm = CachedMinimizer(_store(args))
    rows = score_architectures(specs, MinimizeConfig(**{**cfg.to_dict(), "jobs": 1}),
                               jobs=args.jobs, minimizer=cm)
    if args.format == "csv" or args.out:
        path = _write_or_print(args, lambda fh: write_csv(rows, RANK_COLUMNS, fh))
        if args.format == "json":
            emit_json({"rows": rows, "out": path})
    else:
        emit_json({"rows": rows})
    failed = sum(r["status"] != "ok" for r in rows)
    summary(f"ranked {len(rows)} specs ({cm.hits} from cache, {failed} failed); "
            f"best: {rows[0]['id']}")
    return 0 if failed < len(rows) else 2


def cmd_sparse_check(args) -> int:
    spec = check_spec(args.spec)
    d = build_dictionary(spec, seed=args.seed)
    res = invariant_suite(d, trials=args.trials, seed=args.seed)
    emit_json({"spec_hash": spec_hash(spec), "seed": args.seed, **res})
    summary("sparse backbone checks " + ("passed" if res["passed"] else "FAILED"))
    return 0 if res["passed"] else 2


def cmd_sweep(args) -> int:
    families = [f.strip() for f in args.family.split(",") if f.strip()]
    depths = parse_int_list(args.depths)
    widths = parse_int_list(args.widths)
    cfg = minimize_config(args)
    cm = CachedMinimizer(_store(args))
    grid = [(f, dp, w) for f in families for dp in depths for w in widths]

    def one(item):
        fam, depth, width = item
        row = {"family": fam, "depth": depth, "width": width, "input_dim": args.input_dim,
               "params": None, "potential": None, "bound": None, "n_offdiag": None,
               "seconds": None, "status": "ok"}
        try:
            spec = expand_family(fam, depth, width, input_dim=args.input_dim)
            row["family"] = spec.family
            row["params"] = param_count(spec)
            row["n_offdiag"] = count_offdiag(spec)
            res = cm(spec, MinimizeConfig(**{**cfg.to_dict(), "jobs": 1}))
            row["potential"] = res.best_potential
            row["seconds"] = res.wall_time
            if spec.chain_form:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    row["bound"] = chain_lower_bound(spec.widths).bound
        except Exception as exc:  # flag the row, keep the sweep going
            row["status"] = f"failed: {exc}"
        return row

    if args.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(one, grid))
    else:
        rows = [one(g) for g in grid]
    if args.format == "csv" or args.out:
        path = _write_or_print(args, lambda fh: write_csv(rows, SWEEP_COLUMNS, fh))
        if args.format == "json":
            emit_json({"rows": rows, "out": path})
    else:
        emit_json({"rows": rows})
    failed = sum(r["status"] != "ok" for r in rows)
    summary(f"sweep: {len(rows)} rows, {failed} failed, {cm.hits} from cache")
    return 0 if failed < len(rows) else 2


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out", type=Path, default=None)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--no-cache", action="store_true")
    common.add_argument("--run-dir", type=Path, default=Path(DEFAULT_RUN_DIR))
    common.add_argument("--restarts", type=int, default=3)
    common.add_argument("--max-iters", type=int, default=20000)
    common.add_argument("--tol", type=float, default=1e-9)
    common.add_argument("--step-rule", choices=("adaptive", "fixed"), default="adaptive")
    common.add_argument("--init-step", type=float, default=1e-2)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="deepframe", description="Score network architectures by their "
                     "minimum deep frame potential.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("describe", parents=[common], help="canonical spec and structure counts")
    p.add_argument("spec")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("gram", parents=[common], help="Gram matrix of a seeded dictionary")
    p.add_argument("spec")
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("potential", parents=[common], help="potential and coherence at a seed")
    p.add_argument("spec")
    p.set_defaults(func=cmd_potential)

    p = sub.add_parser("minimize", parents=[common], help="minimum frame potential of one spec")
    p.add_argument("spec")
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("bound", parents=[common], help="lower bound for a dense chain")
    p.add_argument("spec", nargs="?")
    p.add_argument("--widths", default=None, help="comma-separated widths, e.g. 2,5,3")
    p.add_argument("--mode", choices=("per_unit", "uniform"), default="per_unit")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("rank", parents=[common], help="rank specs by minimum potential")
    p.add_argument("specs", nargs="+", help="spec files, directories or .jsonl files")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("sparse-check", parents=[common], help="sparse-coding invariant suite")
    p.add_argument("spec")
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_sparse_check)

    p = sub.add_parser("sweep", parents=[common], help="potential curves over a family grid")
    p.add_argument("--family", default="chain,residual,dense")
    p.add_argument("--depths", default="2..6")
    p.add_argument("--widths", default="4,8,16")
    p.add_argument("--input-dim", type=int, default=4)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except UsageError as exc:
        summary(f"usage error: {exc}")
        return 1
    except SpecError as exc:
        summary(f"invalid spec: {exc}")
        return 1
    except (MinimizationError, MaterializationError, ZeroColumnError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        summary(f"computation failed: {exc}")
        return 2
    except OSError as exc:
        summary(f"I/O error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
