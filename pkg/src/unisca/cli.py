"""Experiment driver: generate data, fit, evaluate, retrieve, export scatters.

Subcommands: gen, fit, eval, retrieve, scatter, sweep. Every output directory
receives the effective config echo and seed; re-running with that echo
reproduces the numeric outputs bit-identically in MMD mode. `eval` exits
nonzero when a configured threshold fails, so pipelines can gate on it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import config as cfgmod
from . import datagen, embedio, matio, metrics, solver
from .numerics import ValidationError, substream

log = logging.getLogger("unisca")


def _setup_logging() -> None:
    level = os.environ.get("SCA_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ValidationError(f"SCA_LOG must be one of {sorted(levels)}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(message)s")


def _effective_config(args) -> dict:
    doc = cfgmod.load_config(args.config) if getattr(args, "config", None) else None
    merged = cfgmod.merged_with_defaults(doc)
    if getattr(args, "preset", None):
        merged["data"]["preset"] = args.preset
        merged["data"].pop("latent", None)
    if getattr(args, "n", None):
        merged["data"]["n"] = args.n
    if getattr(args, "seed", None) is not None:
        merged["seed"] = args.seed
    return cfgmod.validate_config(merged)


def _build_dataset(cfg: dict) -> datagen.SyntheticDataset:
    seed = cfg["seed"]
    data = cfg["data"]
    if "latent" in data:
        latent = datagen.LatentSpec.from_dict(data["latent"])
        template = datagen.MixingTemplate(
            d1=data.get("d1"), d2=data.get("d2"),
            homogeneous=data.get("homogeneous", False))
    else:
        latent, template = datagen.preset(
            data.get("preset", "thm1a"), substream(seed, "datagen", "preset"))
        template = datagen.MixingTemplate(
            d1=data.get("d1", template.d1), d2=data.get("d2", template.d2),
            homogeneous=data.get("homogeneous", template.homogeneous))
    mixing = template.realize(latent, substream(seed, "datagen", "mixing"))
    return datagen.generate_dataset(
        latent, mixing, data.get("n", 100000),
        substream(seed, "datagen", "samples"),
        test_fraction=data.get("test_fraction", 0.05),
        shuffle=data.get("shuffle", True))


def cmd_gen(args) -> int:
    cfg = _effective_config(args)
    dataset = _build_dataset(cfg)
    datagen.save_dataset(dataset, args.out, seed=cfg["seed"],
                         manifest_extra={"config": cfg}, csv=args.csv)
    cfgmod.dump_config(cfg, os.path.join(args.out, "config.json"))
    log.info("dataset written to %s (%d train / %d test rows)",
             args.out, dataset.x1.shape[0], dataset.x1_test.shape[0])
    return 0


def _solver_config(cfg: dict, dataset=None) -> solver.SolverConfig:
    section = dict(cfg.get("solver", {}))
    section.setdefault("seed", cfg["seed"])
    sc = solver.SolverConfig.from_dict(section)
    if dataset is not None and sc.mode == "with_private":
        if sc.d_p1 == 0:
            sc.d_p1 = dataset.p1.shape[1]
        if sc.d_p2 == 0:
            sc.d_p2 = dataset.p2.shape[1]
    return sc


def cmd_fit(args) -> int:
    cfg = _effective_config(args)
    if args.emb1 or args.emb2:
        if not (args.emb1 and args.emb2):
            raise ValidationError("--emb1 and --emb2 must be given together")
        x1 = embedio.read_vec_text(args.emb1).matrix
        x2 = embedio.read_vec_text(args.emb2).matrix
        x1 = x1 - x1.mean(axis=0)
        x2 = x2 - x2.mean(axis=0)
        dataset = None
    else:
        if not args.data:
            raise ValidationError("fit needs --data or --emb1/--emb2")
        dataset = datagen.load_dataset(args.data)
        x1, x2 = dataset.x1, dataset.x2
    sc = _solver_config(cfg, dataset)
    anchors = None
    if sc.mode == "weakly_supervised":
        if dataset is None:
            raise ValidationError("weak supervision requires a dataset directory")
        count = cfg.get("anchors", sc.d_c)
        pairs = datagen.sample_anchors(dataset, count,
                                       substream(sc.seed, "cli", "anchors"))
        anchors = solver.AnchorSet(pairs)
    if sc.mode == "with_private":
        result = solver.fit_with_private(x1, x2, sc)
    else:
        result = solver.fit(x1, x2, sc, anchors=anchors)
    solver.save_model(result, args.out)
    cfgmod.dump_config(cfg, os.path.join(args.out, "config.json"))
    log.info("model written to %s (%.1fs, final matcher %.4g)",
             args.out, result.wall_clock, result.trace[-1, 1])
    return 0


def cmd_eval(args) -> int:
    result = solver.load_model(args.model)
    dataset = datagen.load_dataset(args.data)
    report = metrics.evaluate_fit(result, dataset)
    thresholds = {}
    cfg_path = args.config or os.path.join(args.model, "config.json")
    if os.path.exists(cfg_path):
        cfg = cfgmod.load_config(cfg_path)
        thresholds = cfg.get("eval", {}).get("thresholds", {})
    doc = {"report": report.to_dict(), "thresholds": thresholds, "passed": {}}
    failed = False
    checks = {
        "leakage": max(report.leakage1, report.leakage2),
        "theta_rel_diff": report.theta_rel_diff,
        "pair_match_error": report.pair_match_error,
        "whitening_residual": max(report.whitening_residual1,
                                  report.whitening_residual2),
    }
    for name, bound in thresholds.items():
        ok = checks[name] <= bound
        doc["passed"][name] = bool(ok)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {checks[name]:.4f} "
              f"(threshold {bound})")
        failed |= not ok
    out = args.out or os.path.join(args.model, "report.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("report written to %s", out)
    return 1 if failed else 0


def cmd_retrieve(args) -> int:
    result = solver.load_model(args.model)
    queries = embedio.read_vec_text(args.queries)
    references = embedio.read_vec_text(args.references)
    dictionary = embedio.read_dictionary(args.dictionary)
    xq = queries.matrix - queries.matrix.mean(axis=0)
    xr = references.matrix - references.matrix.mean(axis=0)
    eq = result.q1.apply(xq)
    er = result.q2.apply(xr)
    ks = [int(k) for k in args.ks.split(",")]
    table = {}
    for scorer in ("nn", "csls"):
        for k in ks:
            table[f"{scorer}@{k}"] = metrics.retrieval_precision(
                eq, er, dictionary, k, scorer=scorer, k_csls=args.k_csls)
    print(f"{'scorer':8s}" + "".join(f"P@{k:<8d}" for k in ks))
    for scorer in ("nn", "csls"):
        row = "".join(f"{table[f'{scorer}@{k}']:<10.1f}" for k in ks)
        print(f"{scorer:8s}{row}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_scatter(args) -> int:
    result = solver.load_model(args.model)
    dataset = datagen.load_dataset(args.data)
    if args.split == "test":
        x1, x2, c = dataset.x1_test, dataset.x2_test, dataset.c_test
    else:
        x1, c = dataset.x1, dataset.c
        x2 = dataset.x2[dataset.alignment]
    chat1 = result.q1.apply(x1)
    chat2 = result.q2.apply(x2)
    d_c = c.shape[1]
    k = chat1.shape[1]
    columns = ([f"c_{i}" for i in range(d_c)]
               + [f"chat1_{i}" for i in range(k)]
               + [f"chat2_{i}" for i in range(k)])
    matio.write_csv(args.out, np.hstack([c, chat1, chat2]), columns)
    log.info("scatter data written to %s (%d rows)", args.out, c.shape[0])
    return 0


def _sweep_one(cfg: dict, seed: int, out_root: str) -> dict:
    sub = os.path.join(out_root, f"seed-{seed}")
    run_cfg = json.loads(json.dumps(cfg))
    run_cfg["seed"] = seed
    dataset = _build_dataset(run_cfg)
    data_dir = os.path.join(sub, "data")
    datagen.save_dataset(dataset, data_dir, seed=seed,
                         manifest_extra={"config": run_cfg})
    sc = _solver_config(run_cfg, dataset)
    anchors = None
    if sc.mode == "weakly_supervised":
        pairs = datagen.sample_anchors(dataset, run_cfg.get("anchors", sc.d_c),
                                       substream(seed, "cli", "anchors"))
        anchors = solver.AnchorSet(pairs)
    if sc.mode == "with_private":
        result = solver.fit_with_private(dataset.x1, dataset.x2, sc)
    else:
        result = solver.fit(dataset.x1, dataset.x2, sc, anchors=anchors)
    model_dir = os.path.join(sub, "model")
    solver.save_model(result, model_dir)
    cfgmod.dump_config(run_cfg, os.path.join(model_dir, "config.json"))
    report = metrics.evaluate_fit(result, dataset)
    with open(os.path.join(sub, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    log.info("seed %d done (pair_match_error %.3f)", seed,
             report.pair_match_error)
    return report.to_dict()


def cmd_sweep(args) -> int:
    cfg = _effective_config(args)
    base = cfg["seed"]
    seeds = [base + i for i in range(args.seeds)]
    os.makedirs(args.out, exist_ok=True)
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(lambda s: _sweep_one(cfg, s, args.out), seeds))
    else:
        reports = [_sweep_one(cfg, s, args.out) for s in seeds]
    medians = {
        "leakage": [statistics.median(r["leakage"][q] for r in reports)
                    for q in (0, 1)],
        "theta_rel_diff": statistics.median(r["theta_rel_diff"] for r in reports),
        "pair_match_error": statistics.median(r["pair_match_error"]
                                              for r in reports),
    }
    thresholds = cfg.get("eval", {}).get("thresholds", {})
    failed = False
    for name, bound in thresholds.items():
        if name == "leakage":
            value = max(medians["leakage"])
        elif name in medians:
            value = medians[name]
        else:
            continue
        ok = value <= bound
        print(f"{'PASS' if ok else 'FAIL'} median {name}: {value:.4f} "
              f"(threshold {bound})")
        failed |= not ok
    summary = {"seeds": seeds, "medians": medians, "reports": reports,
               "thresholds": thresholds}
    with open(os.path.join(args.out, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unisca",
        description="Shared component recovery from unaligned multimodal mixtures")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", help="experiment config JSON")
        if seed:
            p.add_argument("--seed", type=int, help="override config seed")

    p = sub.add_parser("gen", help="generate a synthetic dataset directory")
    common(p)
    p.add_argument("--preset", help="named synthetic setup")
    p.add_argument("--n", type=int, help="samples per modality")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", action="store_true", help="also export CSV matrices")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="fit projections on a dataset")
    common(p)
    p.add_argument("--data", help="dataset directory from gen")
    p.add_argument("--emb1", help="word-vector text file, modality 1")
    p.add_argument("--emb2", help="word-vector text file, modality 2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="score a model against hidden ground truth")
    p.add_argument("--config", help="config with eval thresholds "
                                    "(defaults to the model's echo)")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="report path (default <model>/report.json)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="cross-domain retrieval precision")
    p.add_argument("--model", required=True)
    p.add_argument("--queries", required=True, help="query .vec file")
    p.add_argument("--references", required=True, help="reference .vec file")
    p.add_argument("--dictionary", required=True, help="two-column id pairs")
    p.add_argument("--ks", default="1,5,10")
    p.add_argument("--k-csls", type=int, default=10, dest="k_csls")
    p.add_argument("--out", help="optional JSON output path")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("scatter", help="export (true c, recovered c) rows as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.set_defaults(func=cmd_scatter)

    p = sub.add_parser("sweep", help="multi-seed gen+fit+eval with medians")
    common(p)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, solver.DivergenceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
