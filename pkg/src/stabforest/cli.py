"""Command-line interface.

One verb per experiment family: ``validate`` (single scheme),
``trials`` (randomized-trials protocol), ``compare`` (scheme x seed
grid with agreement matrix), ``benchmark`` (wall-time table over
subsample sizes), ``stats`` (ranking agreement / per-feature tests),
``plot`` (SVG bars from a tally CSV).

Outputs land in --out: report.json always, plus CSVs and SVGs per
command. Exit code 0 only if everything requested completed; on
failure a machine-readable error.json is left behind. A flat
key = value config file can pre-set any flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

from .rng import parse_seed


def _configure_threads() -> None:
    """Cap kernel worker threads from STABFOREST_THREADS (default: all cores)."""
    want = os.environ.get("STABFOREST_THREADS")
    if not want:
        return
    n = max(1, int(want))
    if "numba" not in sys.modules:
        os.environ["NUMBA_NUM_THREADS"] = str(n)
    else:  # pragma: no cover - depends on import order
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _read_kv_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; '#' starts a comment."""
    out: dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: malformed line {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load_dataset(args):
    from .data import DEFAULT_NA_TOKENS, load_csv

    label = args.label
    subject = args.subject
    na = list(DEFAULT_NA_TOKENS)
    ordinal_spec: dict[str, list[str]] = {}
    if args.manifest:
        manifest = _read_kv_file(args.manifest)
        label = label or manifest.get("label") or manifest.get("label_column")
        subject = subject or manifest.get("subject") or manifest.get("subject_column")
        if "na" in manifest:
            na = manifest["na"].split(",")
        for key, value in manifest.items():
            if key.startswith("ordinal."):
                ordinal_spec[key[len("ordinal.") :]] = [
                    v.strip() for v in value.split(",")
                ]
    if args.na is not None:
        na = args.na.split(",")
    if not label:
        raise ValueError("no label column given (--label or manifest)")
    return load_csv(
        args.data,
        label_column=label,
        subject_column=subject,
        ordinal_spec=ordinal_spec or None,
        na_tokens=na,
    )


def _forest_config(args):
    from .forest import ForestConfig

    return ForestConfig(
        n_trees=args.trees,
        mtry=args.mtry,
        min_node_size=args.min_node_size,
        max_depth=args.max_depth,
        importance_method="oob" if args.importance == "oob" else "mdi",
    )


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _dataset_summary(dataset, profile) -> dict:
    return {
        "n_rows": dataset.n_rows,
        "n_features": dataset.n_features,
        "n_subjects": dataset.n_subjects,
        "feature_names": list(dataset.feature_names),
        "label_values": list(dataset.label_values),
        "profile": {
            "n_rows": profile.n_rows,
            "n_features": profile.n_features,
            "n_ordinals": profile.n_ordinals,
            "total_cardinality": profile.total_cardinality,
            "n_dropped_rows": profile.n_dropped_rows,
        },
    }


def cmd_validate(args, out: Path) -> dict:
    from .validation import run_scheme

    dataset, profile = _load_dataset(args)
    config = _forest_config(args)
    report = run_scheme(
        dataset,
        args.scheme,
        config,
        args.seed,
        k=args.k,
        test_fraction=args.test_fraction,
    )
    doc = {
        "command": "validate",
        "dataset": _dataset_summary(dataset, profile),
        "forest": config.to_dict(),
        "report": report.to_dict(),
    }
    _write_json(out / "report.json", doc)

    from .trials import top_k_features

    scores = report.mean_importance.scores
    order = top_k_features(scores, dataset.n_features)
    _write_csv(
        out / "rankings.csv",
        ["rank", "feature_index", "feature_name", "score"],
        [
            [rank + 1, f, dataset.feature_names[f], repr(float(scores[f]))]
            for rank, f in enumerate(order)
        ],
    )
    from .svg import render_svg_bars

    (out / "importance.svg").write_text(
        render_svg_bars(
            [dataset.feature_names[f] for f in order],
            [float(scores[f]) for f in order],
            f"{args.scheme} importance (seed {args.seed})",
        ),
        encoding="utf-8",
    )
    return doc


def _trials_config(args, master_seed=None):
    from .trials import TrialsConfig

    return TrialsConfig(
        max_trials_per_subject=args.max_trials,
        top_k=args.top_k,
        master_seed=args.seed if master_seed is None else master_seed,
        early_stop_window=args.early_stop_window,
        forest=_forest_config(args),
    )


def _write_trials_outputs(out: Path, dataset, report) -> None:
    rows = []
    for s, res in enumerate(report.per_subject):
        for rank, f in enumerate(res.ranking, start=1):
            rows.append(
                [
                    s,
                    res.trials_run,
                    res.trials_correct,
                    rank,
                    f,
                    dataset.feature_names[f],
                    repr(float(res.tally.borda[f])),
                    int(res.tally.membership[f]),
                ]
            )
    _write_csv(
        out / "rankings.csv",
        [
            "subject",
            "trials_run",
            "trials_correct",
            "rank",
            "feature_index",
            "feature_name",
            "borda",
            "membership",
        ],
        rows,
    )
    ranking = report.group_ranking
    in_top = {f: i + 1 for i, f in enumerate(ranking)}
    _write_csv(
        out / "tally.csv",
        ["feature_index", "feature_name", "borda", "membership", "group_rank"],
        [
            [
                f,
                dataset.feature_names[f],
                repr(float(report.group_tally.borda[f])),
                int(report.group_tally.membership[f]),
                in_top.get(f, ""),
            ]
            for f in range(dataset.n_features)
        ],
    )
    from .svg import render_svg_bars

    (out / "group_tally.svg").write_text(
        render_svg_bars(
            list(dataset.feature_names),
            [float(v) for v in report.group_tally.borda],
            f"group Borda tally (seed {report.config.master_seed})",
        ),
        encoding="utf-8",
    )


def cmd_trials(args, out: Path) -> dict:
    from .trials import run_randomized_trials

    dataset, profile = _load_dataset(args)
    config = _trials_config(args)
    report = run_randomized_trials(dataset, config)
    doc = {
        "command": "trials",
        "dataset": _dataset_summary(dataset, profile),
        "report": report.to_dict(),
    }
    _write_json(out / "report.json", doc)
    _write_trials_outputs(out, dataset, report)
    return doc


def cmd_compare(args, out: Path) -> dict:
    from .stats import StatsError, set_jaccard, spearman_rho
    from .trials import run_randomized_trials, top_k_features
    from .validation import run_scheme

    dataset, profile = _load_dataset(args)
    config = _forest_config(args)
    seeds = [parse_seed(s) for s in args.seeds.split(",")]
    schemes = [s.strip() for s in args.schemes.split(",")]
    cells = []
    completed: list[dict] = []
    try:
        for scheme in schemes:
            for seed in seeds:
                if scheme == "trials":
                    report = run_randomized_trials(
                        dataset, _trials_config(args, master_seed=seed)
                    )
                    ranking = list(report.group_ranking)
                    scores = [float(v) for v in report.group_tally.borda]
                    accuracy = report.trial_accuracy
                    wall = report.wall_time_ms
                else:
                    vreport = run_scheme(
                        dataset,
                        scheme,
                        config,
                        seed,
                        k=args.k,
                        test_fraction=args.test_fraction,
                    )
                    scores = [float(v) for v in vreport.mean_importance.scores]
                    ranking = list(top_k_features(vreport.mean_importance, args.top_k))
                    accuracy = vreport.accuracy
                    wall = vreport.wall_time_ms
                cell = {
                    "scheme": scheme,
                    "seed": seed,
                    "accuracy": accuracy,
                    "top_k": ranking[: args.top_k],
                    "top_k_names": [dataset.feature_names[f] for f in ranking[: args.top_k]],
                    "scores": scores,
                    "wall_time_ms": wall,
                }
                cells.append(cell)
                completed.append({"scheme": scheme, "seed": seed})
    except Exception:
        _write_json(out / "error.json", {"command": "compare", "completed": completed})
        raise

    pairwise = []
    for i in range(len(cells)):
        for j in range(i + 1, len(cells)):
            a, b = cells[i], cells[j]
            try:
                rho = spearman_rho(a["scores"], b["scores"])
            except StatsError:
                rho = None
            pairwise.append(
                {
                    "a": {"scheme": a["scheme"], "seed": a["seed"]},
                    "b": {"scheme": b["scheme"], "seed": b["seed"]},
                    "jaccard_top_k": set_jaccard(a["top_k"], b["top_k"]),
                    "spearman_rho": rho,
                }
            )
    doc = {
        "command": "compare",
        "dataset": _dataset_summary(dataset, profile),
        "forest": config.to_dict(),
        "top_k": args.top_k,
        "cells": cells,
        "pairwise": pairwise,
    }
    _write_json(out / "report.json", doc)

    rows = []
    for idx, cell in enumerate(cells):
        for rank, f in enumerate(cell["top_k"], start=1):
            rows.append(
                [
                    idx,
                    cell["scheme"],
                    cell["seed"],
                    rank,
                    f,
                    dataset.feature_names[f],
                    repr(float(cell["scores"][f])),
                ]
            )
    _write_csv(
        out / "rankings.csv",
        ["cell", "scheme", "seed", "rank", "feature_index", "feature_name", "score"],
        rows,
    )
    from .svg import render_svg_grid

    panels = [
        (
            f'{cell["scheme"]} seed={cell["seed"]} acc={cell["accuracy"]:.4f}',
            [dataset.feature_names[f] for f in cell["top_k"]],
            [float(cell["scores"][f]) for f in cell["top_k"]],
        )
        for cell in cells
    ]
    (out / "compare.svg").write_text(
        render_svg_grid(panels, "importance rankings by scheme and seed"),
        encoding="utf-8",
    )
    return doc


def cmd_benchmark(args, out: Path) -> dict:
    from .trials import run_randomized_trials
    from .validation import run_scheme

    dataset, profile = _load_dataset(args)
    config = _forest_config(args)
    sizes = sorted(int(s) for s in args.sizes.split(","))
    schemes = [s.strip() for s in args.schemes.split(",")]
    if any(size > dataset.n_rows for size in sizes):
        raise ValueError("subsample size exceeds dataset rows")
    from .rng import shuffle

    rows = []
    name = Path(args.data).stem
    for size in sizes:
        idx = sorted(shuffle(dataset.n_rows, args.seed)[:size].tolist())
        subset = dataset.subset(idx)
        for scheme in schemes:
            start = time.perf_counter()
            if scheme == "trials":
                report = run_randomized_trials(
                    subset, _trials_config(args)
                )
                accuracy = report.trial_accuracy
            else:
                vreport = run_scheme(
                    subset,
                    scheme,
                    config,
                    args.seed,
                    k=args.k,
                    test_fraction=args.test_fraction,
                )
                accuracy = vreport.accuracy
            wall_ms = (time.perf_counter() - start) * 1000.0
            rows.append(
                {
                    "dataset": name,
                    "sample_size": size,
                    "scheme": scheme,
                    "wall_time_ms": wall_ms,
                    "accuracy": accuracy,
                }
            )
    doc = {
        "command": "benchmark",
        "dataset": _dataset_summary(dataset, profile),
        "forest": config.to_dict(),
        "rows": rows,
    }
    _write_json(out / "report.json", doc)
    _write_csv(
        out / "benchmark.csv",
        ["dataset", "sample_size", "scheme", "wall_time_ms", "accuracy"],
        [
            [r["dataset"], r["sample_size"], r["scheme"], repr(r["wall_time_ms"]), repr(r["accuracy"])]
            for r in rows
        ],
    )
    return doc


def _read_ranking_csv(path: str) -> tuple[list[str], list[float]]:
    """feature_name + score column (borda or score) from an emitted CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        score_col = next(
            (c for c in ("borda", "score") if c in reader.fieldnames), None
        )
        if score_col is None or "feature_name" not in reader.fieldnames:
            raise ValueError(f"{path}: need feature_name and borda/score columns")
        names, scores = [], []
        for row in reader:
            names.append(row["feature_name"])
            scores.append(float(row[score_col]))
    return names, scores


def cmd_stats(args, out: Path) -> dict:
    from .stats import StatsError, set_jaccard, spearman_rho, welch_t

    doc: dict = {"command": "stats"}
    if args.rankings:
        path_a, path_b = args.rankings
        names_a, scores_a = _read_ranking_csv(path_a)
        names_b, scores_b = _read_ranking_csv(path_b)
        lookup_a = dict(zip(names_a, scores_a))
        lookup_b = dict(zip(names_b, scores_b))
        common = sorted(set(lookup_a) & set(lookup_b))
        if len(common) < 2:
            raise ValueError("rankings share fewer than 2 features")
        va = [lookup_a[nm] for nm in common]
        vb = [lookup_b[nm] for nm in common]
        try:
            rho = spearman_rho(va, vb)
        except StatsError:
            rho = None
        k = min(args.top_k, len(common))
        top_a = set(sorted(lookup_a, key=lambda nm: (-lookup_a[nm], nm))[:k])
        top_b = set(sorted(lookup_b, key=lambda nm: (-lookup_b[nm], nm))[:k])
        doc["ranking_agreement"] = {
            "files": [str(path_a), str(path_b)],
            "n_common_features": len(common),
            "spearman_rho": rho,
            "top_k": k,
            "jaccard_top_k": set_jaccard(top_a, top_b),
        }
    if args.data:
        dataset, profile = _load_dataset(args)
        doc["dataset"] = _dataset_summary(dataset, profile)
        table = []
        rows_csv = []
        for f, name in enumerate(dataset.feature_names):
            col = dataset.features[:, f]
            group0 = col[dataset.labels == 0]
            group1 = col[dataset.labels == 1]
            entry: dict = {"feature_index": f, "feature_name": name}
            try:
                res = welch_t(group1, group0)
                entry.update(res.to_dict())
            except StatsError as exc:
                entry.update({"t": None, "df": None, "p_two_sided": None, "error": str(exc)})
            try:
                entry["spearman_vs_label"] = spearman_rho(col, dataset.labels)
            except StatsError:
                entry["spearman_vs_label"] = None
            table.append(entry)
            rows_csv.append(
                [
                    f,
                    name,
                    "" if entry.get("t") is None else repr(entry["t"]),
                    "" if entry.get("df") is None else repr(entry["df"]),
                    "" if entry.get("p_two_sided") is None else repr(entry["p_two_sided"]),
                    ""
                    if entry.get("spearman_vs_label") is None
                    else repr(entry["spearman_vs_label"]),
                ]
            )
        doc["per_feature"] = table
        _write_csv(
            out / "welch.csv",
            ["feature_index", "feature_name", "t", "df", "p_two_sided", "spearman_vs_label"],
            rows_csv,
        )
    if "ranking_agreement" not in doc and "per_feature" not in doc:
        raise ValueError("stats needs --rankings and/or --data")
    _write_json(out / "report.json", doc)
    return doc


def cmd_plot(args, out: Path) -> dict:
    from .svg import render_svg_bars

    names, scores = _read_ranking_csv(args.tally)
    svg = render_svg_bars(names, scores, args.title)
    target = out / (Path(args.tally).stem + ".svg")
    target.write_text(svg, encoding="utf-8")
    doc = {"command": "plot", "input": str(args.tally), "output": target.name}
    _write_json(out / "report.json", doc)
    return doc


_COMMANDS = {
    "validate": cmd_validate,
    "trials": cmd_trials,
    "compare": cmd_compare,
    "benchmark": cmd_benchmark,
    "stats": cmd_stats,
    "plot": cmd_plot,
}

# builtin defaults; a --config file may override, explicit flags always win
_DEFAULTS = {
    "scheme": "kfold",
    "k": 10,
    "test_fraction": 0.2,
    "seed": "42",
    "trees": 500,
    "mtry": None,
    "min_node_size": 1,
    "max_depth": None,
    "importance": "oob",
    "max_trials": 400,
    "top_k": 5,
    "early_stop_window": 50,
    "seeds": "42,43",
    "schemes": "holdout,kfold,loso",
    "sizes": "250,500,2000",
    "title": "feature tally",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stabforest",
        description="seed-stable random-forest validation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, data_required=True):
        p.add_argument("--data", required=data_required, help="input CSV")
        p.add_argument("--manifest", help="dataset manifest (key = value)")
        p.add_argument("--label", help="label column name")
        p.add_argument("--subject", help="subject column name")
        p.add_argument("--na", help="comma-separated missing-value tokens")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=parse_seed, help="master seed (decimal or 0x hex)")

    def add_forest(p):
        p.add_argument("--trees", type=int, help="number of trees")
        p.add_argument("--mtry", type=int, help="features tried per split")
        p.add_argument("--min-node-size", type=int, dest="min_node_size")
        p.add_argument("--max-depth", type=int, dest="max_depth")
        p.add_argument("--importance", choices=["mdi", "oob"])

    def add_trials(p):
        p.add_argument("--max-trials", type=int, dest="max_trials")
        p.add_argument("--top-k", type=int, dest="top_k")
        p.add_argument("--early-stop-window", type=int, dest="early_stop_window")

    p = sub.add_parser("validate", help="run one validation scheme")
    add_common(p)
    add_forest(p)
    p.add_argument("--scheme", choices=["holdout", "kfold", "loso", "loocv"])
    p.add_argument("--k", type=int, help="folds for kfold")
    p.add_argument("--test-fraction", type=float, dest="test_fraction")

    p = sub.add_parser("trials", help="randomized-trials protocol")
    add_common(p)
    add_forest(p)
    add_trials(p)

    p = sub.add_parser("compare", help="scheme x seed comparison grid")
    add_common(p)
    add_forest(p)
    add_trials(p)
    p.add_argument("--seeds", help="comma-separated master seeds")
    p.add_argument("--schemes", help="comma-separated schemes (may include trials)")
    p.add_argument("--k", type=int)
    p.add_argument("--test-fraction", type=float, dest="test_fraction")

    p = sub.add_parser("benchmark", help="wall-time table over subsample sizes")
    add_common(p)
    add_forest(p)
    add_trials(p)
    p.add_argument("--sizes", help="comma-separated subsample sizes")
    p.add_argument("--schemes", help="comma-separated schemes (may include trials)")
    p.add_argument("--k", type=int)
    p.add_argument("--test-fraction", type=float, dest="test_fraction")

    p = sub.add_parser("stats", help="ranking agreement and per-feature tests")
    add_common(p, data_required=False)
    p.add_argument("--rankings", nargs=2, metavar=("A", "B"), help="two ranking CSVs")
    p.add_argument("--top-k", type=int, dest="top_k")

    p = sub.add_parser("plot", help="SVG bars from a tally/ranking CSV")
    add_common(p, data_required=False)
    p.add_argument("--tally", required=True, help="tally or ranking CSV")
    p.add_argument("--title")

    return parser


_CASTS = {
    "seed": parse_seed,
    "k": int,
    "trees": int,
    "mtry": int,
    "min_node_size": int,
    "max_depth": int,
    "max_trials": int,
    "top_k": int,
    "early_stop_window": int,
    "test_fraction": float,
}


def _apply_config_defaults(args) -> None:
    config = _read_kv_file(args.config) if getattr(args, "config", None) else {}
    for key, builtin in _DEFAULTS.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) is not None:
            continue
        file_key = key.replace("_", "-")
        if file_key in config or key in config:
            raw = config.get(file_key, config.get(key))
            cast = _CASTS.get(key, str)
            setattr(args, key, cast(raw))
        elif key == "seed":
            setattr(args, key, parse_seed(builtin))
        else:
            setattr(args, key, builtin)


def main(argv=None) -> int:
    _configure_threads()
    parser = _build_parser()
    args = parser.parse_args(argv)
    _apply_config_defaults(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        _COMMANDS[args.command](args, out)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log = {
            "command": args.command,
            "error": str(exc),
            "error_type": type(exc).__name__,
        }
        existing = out / "error.json"
        if existing.exists():
            try:
                log = {**json.loads(existing.read_text()), **log}
            except json.JSONDecodeError:
                pass
        _write_json(existing, log)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
