"""Command-line interface.

Subcommands mirror the pipeline stages (synth, laplace, features, train,
cluster), plus ``pipeline`` for the whole chain and ``evaluate`` for scoring
a partition against ground truth.  Stage commands recompute cheap upstream
results (depth field, feature matrix) deterministically from the raw inputs
unless a saved CSV is passed in, so chained per-stage runs and a single
``pipeline`` run produce identical artifacts.

Exit codes: 0 ok, 1 generic failure, 2 I/O or parse error, 3 invalid data.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .cellgraph import knn_graph
from .community import save_partition, save_scan_report
from .config import PipelineConfig, apply_overrides, load_config
from .embed import load_embeddings, save_embeddings, save_loss_trace, train
from .errors import LaminaeError, ParseError, ValidationError
from .features import load_features, save_features
from .ingest import load_cells, load_roi_mask
from .laplace import save_field
from .pipeline import (
    cluster_embeddings,
    compute_depth,
    compute_features,
    evaluate_files,
    run_pipeline,
    stage,
    write_overlay,
)
from .synth import PRESETS, generate, make_preset, save_instance

log = logging.getLogger("laminae")


def _config_from_args(args) -> PipelineConfig:
    config = load_config(args.config)
    if args.set:
        config = apply_overrides(config, args.set)
    return config


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _align_rows(csv_ids: np.ndarray, values: np.ndarray, cells) -> np.ndarray:
    """Reorder CSV rows (sorted by id on disk) into cell order."""
    lookup = {int(i): r for r, i in enumerate(csv_ids)}
    extra = set(lookup) - {c.id for c in cells.cells}
    if extra:
        raise ValidationError(f"table has rows for unknown cell id {min(extra)}")
    try:
        rows = [lookup[c.id] for c in cells.cells]
    except KeyError as exc:
        raise ValidationError(f"table is missing cell id {exc.args[0]}") from exc
    return values[rows]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    config = make_preset(args.preset, seed=args.seed)
    with stage("synth"):
        cells, mask, truth = generate(config)
        log.info("[synth] %d cells in %d bands", cells.n, len(config.bands))
    paths = save_instance(cells, mask, truth, args.out)
    for key in ("cells", "mask", "truth"):
        print(paths[key])
    return 0


def cmd_laplace(args) -> int:
    config = _config_from_args(args)
    out = _out_dir(args)
    with stage("ingest"):
        cells = load_cells(args.cells)
        mask = load_roi_mask(args.mask)
    with stage("laplace"):
        field, _ = compute_depth(cells, mask, config)
        save_field(field, out / "laplace.pgm")
    print(out / "laplace.pgm")
    return 0


def cmd_features(args) -> int:
    config = _config_from_args(args)
    out = _out_dir(args)
    with stage("ingest"):
        cells = load_cells(args.cells)
        mask = load_roi_mask(args.mask)
    ell = None
    if config.features.include_laplace:
        with stage("laplace"):
            _, ell = compute_depth(cells, mask, config)
    with stage("features"):
        matrix = compute_features(cells, config, ell)
        save_features(matrix, cells, out / "features.csv")
    print(out / "features.csv")
    return 0


def cmd_train(args) -> int:
    config = _config_from_args(args)
    out = _out_dir(args)
    with stage("ingest"):
        cells = load_cells(args.cells)
        mask = load_roi_mask(args.mask)
    with stage("laplace"):
        _, ell = compute_depth(cells, mask, config)
    if args.features:
        csv_ids, matrix = load_features(args.features)
        values = _align_rows(csv_ids, matrix.values, cells)
    else:
        with stage("features"):
            values = compute_features(cells, config, ell).values
    with stage("embed"):
        graph = knn_graph(cells, config.knn_k)
        embeddings = train(values, graph, ell, config.contrastive)
        cell_ids = [c.id for c in cells.cells]
        save_embeddings(embeddings, cell_ids, out / "embeddings.csv")
        save_loss_trace(embeddings, out / "loss_trace.csv")
    print(out / "embeddings.csv")
    print(out / "loss_trace.csv")
    return 0


def cmd_cluster(args) -> int:
    config = _config_from_args(args)
    out = _out_dir(args)
    with stage("ingest"):
        cells = load_cells(args.cells)
    csv_ids, matrix = load_embeddings(args.embeddings)
    with stage("community"):
        partition = cluster_embeddings(matrix, config)
        save_partition(partition, csv_ids, out / "partition.csv")
        save_scan_report(partition, out / "scan.json")
        log.info("[community] K=%d at gamma=%.4g (exact=%s)",
                 partition.k, partition.resolution, partition.exact)
    with stage("overlay"):
        cell_labels = _align_rows(csv_ids, partition.labels, cells)
        write_overlay(cells, cell_labels, out / "overlay.svg")
    for name in ("partition.csv", "scan.json", "overlay.svg"):
        print(out / name)
    return 0


def cmd_pipeline(args) -> int:
    config = _config_from_args(args)
    result = run_pipeline(args.cells, args.mask, args.out, config)
    for path in result.paths.values():
        print(path)
    return 0


def cmd_evaluate(args) -> int:
    report = evaluate_files(args.partition, args.truth)
    print(report.to_json())
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_config_options(parser) -> None:
    parser.add_argument("--config", metavar="JSON", default=None,
                        help="config file; defaults are used when omitted")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value, e.g. --set contrastive.lambda2=0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="laminae",
        description="Self-supervised identification of layered tissue organization "
                    "from 2-D cell maps.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic layered instance with truth")
    p.add_argument("--preset", default="synthetic-cortex-5", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("laplace", help="solve the depth field for a masked section")
    p.add_argument("--cells", required=True, help="cell polygon JSON")
    p.add_argument("--mask", required=True, help="region mask PGM")
    p.add_argument("--out", required=True)
    _add_config_options(p)
    p.set_defaults(func=cmd_laplace)

    p = sub.add_parser("features", help="compute the per-cell feature matrix")
    p.add_argument("--cells", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    _add_config_options(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train embeddings on one section")
    p.add_argument("--cells", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--features", default=None,
                   help="reuse a saved features.csv instead of recomputing")
    p.add_argument("--out", required=True)
    _add_config_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="cluster saved embeddings into communities")
    p.add_argument("--cells", required=True)
    p.add_argument("--embeddings", required=True, help="embeddings.csv from train")
    p.add_argument("--out", required=True)
    _add_config_options(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("pipeline", help="run every stage and write all artifacts")
    p.add_argument("--cells", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    _add_config_options(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("evaluate", help="score a partition against ground truth")
    p.add_argument("--partition", required=True, help="partition.csv")
    p.add_argument("--truth", required=True, help="truth.csv")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:  # includes ValidationError
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except LaminaeError as exc:  # convergence/training/generation failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
