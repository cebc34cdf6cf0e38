"""Batch command-line surface for reproducible experiment runs.

Subcommands: generate, split, eval, sweep, postprocess, goal-eval,
validate. Every run writes machine-readable reports carrying the tool
version and the fully resolved configuration. Parameter precedence is
config file < environment (``SCOREFORGE_<NAME>``) < command-line flags;
``SCOREFORGE_LOG`` (error|warn|info|debug) controls logging.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Any

from . import __version__
from . import corpus as corpus_mod
from . import goaleval, metrics, saepost, synthgen
from .corpus import CorpusError, load_corpus, read_detections, validate_corpus, write_detections
from .imaging import BackgroundConfig

log = logging.getLogger("scoreforge.cli")

_REQUIRED = object()

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _setup_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("SCOREFORGE_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config_file(path: str) -> dict[str, Any]:
    p = Path(path)
    text = p.read_bytes()
    if p.suffix.lower() == ".toml":
        try:
            import tomllib  # type: ignore[import-not-found]
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text.decode("utf-8"))


def _coerce(raw: str, default: Any) -> Any:
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _resolve(args: argparse.Namespace, spec: dict[str, Any]) -> dict[str, Any]:
    """Merge file, environment, and flag values by precedence."""
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    resolved: dict[str, Any] = {}
    for name, default in spec.items():
        flag = getattr(args, name)
        env = os.environ.get(f"SCOREFORGE_{name.upper()}")
        if flag is not None:
            value = flag
        elif env is not None:
            value = _coerce(env, default if default is not _REQUIRED else None)
        elif name in file_cfg:
            value = file_cfg[name]
        else:
            value = default
        if value is _REQUIRED:
            raise CorpusError(f"missing required parameter --{name.replace('_', '-')}")
        resolved[name] = value
    return resolved


def _report(config: dict[str, Any], payload: dict[str, Any]) -> dict[str, Any]:
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()}
    return {"tool": "scoreforge", "tool_version": __version__, "config": cfg, **payload}


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n", "utf-8")


def _write_csv(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _check_page_universe(dets, corpus) -> None:
    known = {p.id for p in corpus.pages}
    bad = sorted({d.page_id for d in dets} - known)
    if bad:
        raise CorpusError(f"detections reference pages not in the corpus: {bad[:10]}")


# ---------------------------------------------------------------------------
# subcommands

GENERATE_SPEC: dict[str, Any] = {
    "corpus": _REQUIRED,
    "out": _REQUIRED,
    "n": 100,
    "seed": 0,
    "rotation_range": 3.0,
    "max_retries": 10,
    "sigma": None,
    "threads": 1,
}


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _resolve(args, GENERATE_SPEC)
    out = Path(cfg["out"])
    created: list[Path] = []
    try:
        source = load_corpus(cfg["corpus"])
        background = BackgroundConfig(sigma=cfg["sigma"]) if cfg["sigma"] else BackgroundConfig()
        gen_cfg = synthgen.GenConfig(
            n=int(cfg["n"]),
            seed=int(cfg["seed"]),
            rotation_range=float(cfg["rotation_range"]),
            max_retries=int(cfg["max_retries"]),
            background=background,
        )
        pages = synthgen.generate(source, gen_cfg, threads=int(cfg["threads"]))

        out.mkdir(parents=True, exist_ok=True)
        created = [out / "images", out / "annotations.json", out / "provenance.json", out / "report.json"]
        written = synthgen.write_synthetic_corpus(pages, out)
        load_corpus(out / "annotations.json")  # self-check: written corpus must validate

        skipped = sum(p.skipped for p in pages)
        _write_json(
            out / "report.json",
            _report(
                cfg,
                {
                    "pages": len(pages),
                    "regions": len(written.regions()),
                    "skipped_slots": skipped,
                },
            ),
        )
        print(f"generated {len(pages)} pages, {len(written.regions())} regions ({skipped} slots skipped) -> {out}")
        return 0
    except Exception:
        for p in created:
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            else:
                p.unlink(missing_ok=True)
        raise


SPLIT_SPEC: dict[str, Any] = {"corpus": _REQUIRED, "out": _REQUIRED, "seed": 0}


def cmd_split(args: argparse.Namespace) -> int:
    cfg = _resolve(args, SPLIT_SPEC)
    source = load_corpus(cfg["corpus"])
    plan = corpus_mod.make_splits(source, int(cfg["seed"]))

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(
        out / "splits.json",
        _report(
            cfg,
            {
                "seed": plan.seed,
                "train_subsets": {str(k): v for k, v in sorted(plan.train_subsets.items())},
                "validation": plan.validation,
                "test": plan.test,
            },
        ),
    )
    rows = []
    for k in sorted(plan.train_subsets):
        for pid in plan.train_subsets[k]:
            if not any(pid in plan.train_subsets[j] for j in plan.train_subsets if j < k):
                rows.append([pid, "train", k])
    rows += [[pid, "validation", ""] for pid in plan.validation]
    rows += [[pid, "test", ""] for pid in plan.test]
    _write_csv(out / "splits.csv", ["page_id", "role", "min_subset"], rows)
    print(
        f"split {len(source.pages)} pages: train ladder up to {plan.max_train_size}, "
        f"{len(plan.validation)} validation, {len(plan.test)} test -> {out}"
    )
    return 0


EVAL_SPEC: dict[str, Any] = {
    "corpus": _REQUIRED,
    "detections": _REQUIRED,
    "out": _REQUIRED,
    "conf_thr": 0.5,
    "iou_thr": 0.5,
}


def _grid_rows(sweep: metrics.SweepResult) -> list[list[Any]]:
    return [[c.conf_thr, c.iou_thr, c.macro_p, c.macro_r, c.macro_f1] for c in sweep.grid]


def _prf_dict(p: metrics.Prf) -> dict[str, float]:
    return {"precision": p.precision, "recall": p.recall, "f1": p.f1}


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args, EVAL_SPEC)
    source = load_corpus(cfg["corpus"])
    dets = read_detections(cfg["detections"], source.categories)
    _check_page_universe(dets, source)

    report = metrics.evaluate(
        dets, source.regions(), conf_thr=float(cfg["conf_thr"]), iou_thr=float(cfg["iou_thr"])
    )
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    assert report.sweep is not None
    _write_json(
        out / "eval_report.json",
        _report(
            cfg,
            {
                "per_class": {cls: _prf_dict(p) for cls, p in report.per_class.items()},
                "macro": _prf_dict(report.macro),
                "ap": {cls: {f"{t:.2f}": v for t, v in by.items()} for cls, by in report.ap.items()},
                "map": report.mean_ap,
                "map_pct_1dp": round(100.0 * report.mean_ap, 1),
                "sweep_winner": {
                    "conf_thr": report.sweep.best_conf,
                    "iou_thr": report.sweep.best_iou,
                    "macro_f1": report.sweep.best_f1,
                },
            },
        ),
    )
    _write_csv(out / "sweep_grid.csv", ["conf_thr", "iou_thr", "mP", "mR", "mF1"], _grid_rows(report.sweep))
    m = report.macro
    print(f"mAP={report.mean_ap:.4f} mP={m.precision:.4f} mR={m.recall:.4f} mF1={m.f1:.4f}")
    return 0


SWEEP_SPEC: dict[str, Any] = {"corpus": _REQUIRED, "detections": _REQUIRED, "out": _REQUIRED}


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _resolve(args, SWEEP_SPEC)
    source = load_corpus(cfg["corpus"])
    dets = read_detections(cfg["detections"], source.categories)
    _check_page_universe(dets, source)

    sweep = metrics.sweep_thresholds(dets, source.regions())
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(
        out / "sweep.json",
        _report(
            cfg,
            {
                "winner": {"conf_thr": sweep.best_conf, "iou_thr": sweep.best_iou, "macro_f1": sweep.best_f1},
                "cells": len(sweep.grid),
            },
        ),
    )
    _write_csv(out / "sweep_grid.csv", ["conf_thr", "iou_thr", "mP", "mR", "mF1"], _grid_rows(sweep))
    print(f"sweep winner: conf_thr={sweep.best_conf} iou_thr={sweep.best_iou} mF1={sweep.best_f1:.4f}")
    return 0


POSTPROCESS_SPEC: dict[str, Any] = {
    "corpus": _REQUIRED,
    "probmaps": _REQUIRED,
    "out": _REQUIRED,
    "prob_thr": 0.5,
    "min_area_frac": 0.001,
    "connectivity": 8,
    "expand_ratio": 0.2,
}


def cmd_postprocess(args: argparse.Namespace) -> int:
    cfg = _resolve(args, POSTPROCESS_SPEC)
    source = load_corpus(cfg["corpus"])
    pages = source.pages_by_id
    ratio = float(cfg["expand_ratio"])

    dets = []
    map_dir = Path(cfg["probmaps"])
    names = sorted(p.name for p in map_dir.glob("*.png"))
    if not names:
        raise CorpusError(f"no probability maps (*.png) found in {map_dir}")
    for name in names:
        page_id, class_name = saepost.parse_probmap_filename(name)
        if page_id not in pages:
            raise CorpusError(f"{name}: page {page_id} not in the corpus")
        if class_name not in source.categories.values():
            raise CorpusError(f"{name}: class {class_name!r} not in the category table")
        page = pages[page_id]
        probmap = saepost.read_probmap(map_dir / name)
        if probmap.shape != (page.height, page.width):
            raise CorpusError(
                f"{name}: map is {probmap.shape[1]}x{probmap.shape[0]}, "
                f"page is {page.width}x{page.height}"
            )
        for det in saepost.probmap_to_boxes(
            probmap,
            page_id,
            class_name,
            prob_thr=float(cfg["prob_thr"]),
            min_area_frac=float(cfg["min_area_frac"]),
            connectivity=int(cfg["connectivity"]),
        ):
            if ratio > 0:
                det = saepost.expand_pred_vertical(det, ratio, page.width, page.height)
            dets.append(det)

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_detections(dets, out / "detections.json", source.categories)
    _write_csv(
        out / "detections.csv",
        ["page_id", "class", "x", "y", "w", "h", "score"],
        [[d.page_id, d.class_name, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.confidence] for d in dets],
    )
    _write_json(out / "report.json", _report(cfg, {"maps": len(names), "detections": len(dets)}))
    print(f"extracted {len(dets)} detections from {len(names)} probability maps -> {out}")
    return 0


GOAL_EVAL_SPEC: dict[str, Any] = {
    "corpus": _REQUIRED,
    "detections": _REQUIRED,
    "ref": _REQUIRED,
    "hyp_gt": _REQUIRED,
    "hyp_det": _REQUIRED,
    "out": _REQUIRED,
    "iou_min": goaleval.DEFAULT_IOU_MIN,
    "conf_thr": goaleval.DEFAULT_CONF_THR,
    "class_name": "staff",
    "label": None,
}


def cmd_goal_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args, GOAL_EVAL_SPEC)
    source = load_corpus(cfg["corpus"])
    all_dets = read_detections(cfg["detections"], source.categories)
    _check_page_universe(all_dets, source)
    cls = cfg["class_name"]
    label = cfg["label"] or Path(cfg["corpus"]).stem

    indexed = [(i, d) for i, d in enumerate(all_dets) if d.class_name == cls]
    gts = [r for r in source.regions() if r.class_name == cls]
    pairs = goaleval.match_goal(
        [d for _, d in indexed], gts, iou_min=float(cfg["iou_min"]), det_ids=[i for i, _ in indexed]
    )
    tuples, warnings = goaleval.goal_tuples(
        pairs,
        ref=goaleval.read_transcriptions(cfg["ref"]),
        hyp_gt=goaleval.read_transcriptions(cfg["hyp_gt"]),
        hyp_det=goaleval.read_transcriptions(cfg["hyp_det"]),
    )
    for line in warnings:
        log.warning("%s", line)
    summary = goaleval.summarize(tuples, conf_thr=float(cfg["conf_thr"]))

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)

    def bucket(b: goaleval.Bucket) -> dict[str, Any]:
        return {"count": b.count, "mean_ser_delta": b.mean, "median_ser_delta": b.median}

    _write_json(
        out / "goal_summary.json",
        _report(
            cfg,
            {
                "pairs": len(pairs),
                "tuples": len(tuples),
                "skipped": len(warnings),
                "above_conf_thr": bucket(summary.above),
                "below_conf_thr": bucket(summary.below),
            },
        ),
    )
    _write_csv(
        out / "goal_scatter.csv",
        ["confidence", "iou", "ser_delta", "det_id", "gt_id", "corpus"],
        [[t.confidence, t.iou, t.ser_delta, t.det_region_id, t.gt_region_id, label] for t in tuples],
    )
    print(
        f"goal-eval: {len(tuples)} tuples "
        f"({summary.above.count} at confidence >= {summary.conf_thr}) -> {out}"
    )
    return 0


VALIDATE_SPEC: dict[str, Any] = {"corpus": _REQUIRED, "out": None}


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = _resolve(args, VALIDATE_SPEC)
    source = load_corpus(cfg["corpus"], validate=False)
    report = validate_corpus(source)
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        _write_json(
            out / "validation.json",
            _report(
                cfg,
                {
                    "valid": report.is_valid,
                    "findings": [
                        {"kind": f.kind, "message": f.message, "page_id": f.page_id, "region_id": f.region_id}
                        for f in report.findings
                    ],
                },
            ),
        )
    if report.is_valid:
        print(f"corpus valid: {len(source.pages)} pages, {len(source.regions())} regions")
        return 0
    for f in report.findings:
        print(f"{f.kind}: {f.message}")
    return 1


# ---------------------------------------------------------------------------
# parser

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON or TOML config file (lowest precedence)")
    sub.add_argument("--corpus", help="annotation JSON file")
    sub.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scoreforge",
        description="Semi-synthetic music-score page generation and region-detection evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"scoreforge {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("generate", help="build semi-synthetic pages from an annotated corpus")
    _add_common(p)
    p.add_argument("--n", type=int, help="number of pages to generate")
    p.add_argument("--seed", type=int)
    p.add_argument("--rotation-range", dest="rotation_range", type=float, help="max |angle| in degrees")
    p.add_argument("--max-retries", dest="max_retries", type=int)
    p.add_argument("--sigma", type=float, help="background blur sigma (default: page size / 100)")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_generate)

    p = subs.add_parser("split", help="build nested train/validation/test splits")
    _add_common(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_split)

    p = subs.add_parser("eval", help="P/R/F1, mAP, and threshold sweep for a detections file")
    _add_common(p)
    p.add_argument("--detections", help="COCO results JSON")
    p.add_argument("--conf-thr", dest="conf_thr", type=float)
    p.add_argument("--iou-thr", dest="iou_thr", type=float)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("sweep", help="confidence x IoU grid search maximizing macro-F1")
    _add_common(p)
    p.add_argument("--detections", help="COCO results JSON")
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("postprocess", help="convert probability maps into a detections file")
    _add_common(p)
    p.add_argument("--probmaps", help="directory of <page_id>.<class>.png maps")
    p.add_argument("--prob-thr", dest="prob_thr", type=float)
    p.add_argument("--min-area-frac", dest="min_area_frac", type=float)
    p.add_argument("--connectivity", type=int, choices=(4, 8))
    p.add_argument("--expand-ratio", dest="expand_ratio", type=float)
    p.set_defaults(func=cmd_postprocess)

    p = subs.add_parser("goal-eval", help="SER-delta analysis of matched staff detections")
    _add_common(p)
    p.add_argument("--detections", help="COCO results JSON")
    p.add_argument("--ref", help="reference transcriptions")
    p.add_argument("--hyp-gt", dest="hyp_gt", help="hypotheses from ground-truth regions")
    p.add_argument("--hyp-det", dest="hyp_det", help="hypotheses from detected regions")
    p.add_argument("--iou-min", dest="iou_min", type=float)
    p.add_argument("--conf-thr", dest="conf_thr", type=float)
    p.add_argument("--class", dest="class_name", help="region class to analyze")
    p.add_argument("--label", help="corpus label for the scatter CSV")
    p.set_defaults(func=cmd_goal_eval)

    p = subs.add_parser("validate", help="report structural problems in an annotation file")
    _add_common(p)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("unhandled error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
