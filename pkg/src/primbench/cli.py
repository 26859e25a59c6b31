"""Command-line driver: generate benchmarks, fit them, score and summarize.

Subcommands::

    primbench generate --out DIR --models N --seed S --density LO..HI --missing-frac F
    primbench fit --method ht|pg --input DIR [--config FILE] --out DIR
    primbench eval --gt DIR --pred DIR --out report.csv [--accuracy accuracy.csv]
    primbench report --in report.csv --boxplot boxplot.csv [--filter missing-data]

Exit codes: 0 success, 1 usage error, 2 data error, 3 partial failure.
``FIT4CAD_THREADS`` caps the number of worker processes used by ``fit``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import (
    FILE_NAMES,
    POINTS_FILE,
    DatasetError,
    GeneratorSpec,
    GroundTruthModel,
    generate_model,
    read_ground_truth,
    read_points,
    split_train_test,
    write_ground_truth,
)
from .growing import PgConfig, fit_pg
from .hough import HtConfig, fit_ht
from .metrics import (
    SCORE_NAMES,
    MetricsError,
    accuracy_row,
    boxplot_stats,
    model_report,
    read_report_csv,
    write_accuracy_csv,
    write_boxplot_csv,
    write_report_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3
MANIFEST = "manifest.json"
SPLIT_FILE = "split.json"
THREADS_ENV = "FIT4CAD_THREADS"
DEFAULT_TEST_FRACTION = 35 / 225

log = logging.getLogger("primbench")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _range(text: str, kind=int) -> tuple:
    try:
        lo, hi = (kind(t) for t in text.split("..", 1)) if ".." in text else (kind(text),) * 2
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return lo, hi


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _host() -> str:
    return f"{platform.system()} {platform.machine()} python {platform.python_version()}"


def model_dirs(root: Path) -> list[Path]:
    """Model subdirectories of ``root`` (those holding a point file), by name."""
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    return sorted(p for p in root.iterdir() if (p / POINTS_FILE).is_file())


def worker_count() -> int:
    cap = os.environ.get(THREADS_ENV, "")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(int(cap), 1))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return n


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    spec = GeneratorSpec(
        n_primitives=args.primitives,
        n_points=args.density,
        missing_fraction=args.missing_frac,
        noise=args.noise,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(args.models - 1)))
    ids, entries = [], []
    for i in range(args.models):
        mid = f"model_{i:0{width}d}"
        model = generate_model(spec, i)
        d = out / mid
        files = write_ground_truth(model, d)
        info = {k: v for k, v in model.info.items()}
        meta = {
            "id": mid,
            "seed": [args.seed, i],
            "n_points": model.n_points,
            "n_segments": len(model.segments),
            "info": info,
            "files": {f.name: sha256(f) for f in files},
        }
        _write_json(d / MANIFEST, meta)
        ids.append(mid)
        entries.append({"id": mid, "missing_data": bool(info.get("missing_data", False)), "manifest": sha256(d / MANIFEST)})
        log.info("generated %s (%d points, %d segments)", mid, model.n_points, len(model.segments))
    files = {}
    if args.models >= 2:
        train, test = split_train_test(ids, args.test_fraction, args.seed)
        _write_json(out / SPLIT_FILE, {"train": train, "test": test})
        files[SPLIT_FILE] = sha256(out / SPLIT_FILE)
    _write_json(
        out / MANIFEST,
        {
            "tool": "primbench",
            "version": tool_version(),
            "command": "generate",
            "seed": args.seed,
            "config": {
                "models": args.models,
                "n_primitives": list(spec.n_primitives),
                "n_points": list(spec.n_points),
                "missing_fraction": spec.missing_fraction,
                "hole_count": list(spec.hole_count),
                "hole_radius": list(spec.hole_radius),
                "noise": spec.noise,
                "test_fraction": args.test_fraction,
            },
            "host": _host(),
            "models": entries,
            "files": files,
        },
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def load_config(method: str, path: str | None) -> HtConfig | PgConfig:
    cls = HtConfig if method == "ht" else PgConfig
    if path is None:
        return cls()
    try:
        return cls.from_json(path)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: bad {method} config: {exc}") from None


def _fit_one(method: str, config, src: Path, dst: Path) -> tuple[float, list[str]]:
    cloud = read_points(src / POINTS_FILE)
    t0 = time.perf_counter()
    pred = fit_ht(cloud, config) if method == "ht" else fit_pg(cloud, config)
    elapsed = time.perf_counter() - t0
    files = write_ground_truth(pred, dst)
    return elapsed, [f.name for f in files]


def _fit_task(task):
    method, config, src, dst = task
    try:
        return _fit_one(method, config, src, dst), None
    except Exception as exc:  # one bad model must not stop the batch
        return None, f"{type(exc).__name__}: {exc}"


def cmd_fit(args: argparse.Namespace) -> int:
    config = load_config(args.method, args.config)
    src_root, out = Path(args.input), Path(args.out)
    sources = model_dirs(src_root)
    if not sources:
        raise DatasetError(f"{src_root}: no model directories with {POINTS_FILE}")
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(args.method, config, s, out / s.name) for s in sources]
    workers = min(worker_count(), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_fit_task, tasks))
    else:
        results = [_fit_task(t) for t in tasks]
    timings, failures, files = {}, {}, {}
    for s, (res, err) in zip(sources, results):
        if err is not None:
            log.error("fit failed on %s: %s", s.name, err)
            failures[s.name] = err
            continue
        timings[s.name], names = res
        files[s.name] = {n: sha256(out / s.name / n) for n in names}
    secs = list(timings.values())
    summary = {"min": min(secs), "mean": float(np.mean(secs)), "max": max(secs)} if secs else None
    _write_json(
        out / MANIFEST,
        {
            "tool": "primbench",
            "version": tool_version(),
            "command": "fit",
            "method": args.method,
            "input": os.path.relpath(src_root, out),
            "config": json.loads(config.to_json()),
            "host": _host(),
            "workers": workers,
            "timing_seconds": timings,
            "timing_summary": summary,
            "failures": failures,
            "files": files,
        },
    )
    if summary:
        log.info("fit %d models: min %.2fs mean %.2fs max %.2fs", len(secs), *summary.values())
    if not timings:
        return EXIT_DATA
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# eval / report
# ---------------------------------------------------------------------------


def _missing_flag(model_dir: Path) -> bool | None:
    path = model_dir / MANIFEST
    if not path.is_file():
        return None
    flag = json.loads(path.read_text(encoding="utf-8")).get("info", {}).get("missing_data")
    return None if flag is None else bool(flag)


def cmd_eval(args: argparse.Namespace) -> int:
    gt_dirs = {p.name: p for p in model_dirs(Path(args.gt))}
    pred_dirs = {p.name: p for p in model_dirs(Path(args.pred))}
    for mid in sorted(gt_dirs.keys() ^ pred_dirs.keys()):
        side = "ground truth" if mid in gt_dirs else "predictions"
        log.warning("skipping %s: only present in the %s", mid, side)
    common = sorted(gt_dirs.keys() & pred_dirs.keys())
    if not common:
        raise DatasetError("no model ids shared by ground truth and predictions")
    rows, acc = [], []
    for mid in common:
        gt = read_ground_truth(gt_dirs[mid], args.index_base)
        pred = read_ground_truth(pred_dirs[mid], args.index_base)
        if pred.n_points != gt.n_points:
            raise DatasetError(f"{mid}: prediction has {pred.n_points} points, ground truth {gt.n_points}")
        rows.append(model_report(gt, pred, mid, _missing_flag(gt_dirs[mid])))
        if pred.parametric is not None:
            acc.append(accuracy_row(gt, pred, mid))
    write_report_csv(rows, args.out)
    if args.accuracy:
        write_accuracy_csv(acc, args.accuracy)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    rows = read_report_csv(args.input)
    if not rows:
        raise MetricsError(f"{args.input}: no report rows")
    if args.filter == "missing-data":
        groups = [
            ("missing", [r for r in rows if r.missing_data]),
            ("complete", [r for r in rows if r.missing_data is False]),
        ]
        groups = [(g, rs) for g, rs in groups if rs]
    else:
        groups = [("all", rows)]
    out = []
    for metric in SCORE_NAMES:
        for group, rs in groups:
            values = [getattr(r, metric.lower()) for r in rs]
            values = [v for v in values if v is not None]
            if values:
                out.append((metric, group, len(values), boxplot_stats(values)))
    if not out:
        raise MetricsError(f"{args.input}: every metric is undefined")
    write_boxplot_csv(out, args.boxplot)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="primbench", description="Primitive-fitting benchmark on synthetic CAD point clouds.")
    p.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic benchmark tree")
    g.add_argument("--out", required=True)
    g.add_argument("--models", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--density", type=_range, default=(8000, 12000), help="points per model, LO..HI")
    g.add_argument("--primitives", type=_range, default=(5, 15), help="segments per model, LO..HI")
    g.add_argument("--missing-frac", type=float, default=0.0, help="share of models that get holes")
    g.add_argument("--noise", type=float, default=0.0, help="normal noise sigma, fraction of bbox diagonal")
    g.add_argument("--test-fraction", type=float, default=DEFAULT_TEST_FRACTION)
    g.set_defaults(run=cmd_generate)

    f = sub.add_parser("fit", help="segment every model with one method")
    f.add_argument("--method", choices=("ht", "pg"), required=True)
    f.add_argument("--input", required=True)
    f.add_argument("--config", help="JSON settings for the method")
    f.add_argument("--out", required=True)
    f.set_defaults(run=cmd_fit)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--out", required=True, help="per-model report CSV")
    e.add_argument("--accuracy", help="per-model MFE / Hausdorff / d1 CSV")
    e.add_argument("--index-base", type=int, choices=(0, 1), default=0, help="first point index in segment files")
    e.set_defaults(run=cmd_eval)

    r = sub.add_parser("report", help="boxplot statistics of a report CSV")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--boxplot", required=True)
    r.add_argument("--filter", choices=("missing-data",))
    r.set_defaults(run=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "generate" and args.models < 1:
        print("primbench generate: --models must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.run(args)
    except UsageError as exc:
        print(f"primbench {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, MetricsError, ValueError, OSError) as exc:
        print(f"primbench {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
