"""Command-line pipeline: generate, learn, sweep, classify, reconstruct.

Every command writes a ``<prefix>.run.json`` echo of its resolved
configuration next to its outputs and is deterministic for fixed flags.
Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataio
from .classifier import (
    ModelMismatchError,
    classify_survey,
    confusion_matrix,
    cross_validate,
    export_class_map_csv,
    export_class_map_pgm,
    export_confusion_csv,
    pcc,
    svm_train_multiclass,
)
from .dictionary_learning import (
    LEARNERS,
    DegenerateTrainingError,
    Dictionary,
    TrainConfig,
)
from .gpr_synth import (
    PulseParams,
    SurveyDataset,
    default_layout,
    generate_survey,
    layout_from_dict,
    layout_to_dict,
    reduce_samples,
)
from .sparse_coding import DegenerateSupportError, StopRule, batch_omp
from .stats_metrics import (
    parameter_sweep,
    similarity_epdf,
    write_sweep_csv,
)

DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_GRID = tuple(2.0**e for e in range(-7, 4))


def save_survey_bundle(prefix, survey: SurveyDataset, config: dict) -> None:
    manifest = {
        "kind": "dataset",
        "seed": survey.seed,
        "geometry": list(survey.geometry),
        "labels": survey.labels.tolist(),
        "halos": [[int(c), p.tolist()] for c, p in survey.halos],
        "class_names": list(survey.class_names) if survey.class_names else None,
        "config": config,
    }
    dataio.save_bundle(prefix, survey.profiles, manifest)


def load_survey_bundle(prefix) -> tuple[SurveyDataset, dict]:
    profiles, manifest = dataio.load_bundle(prefix)
    if manifest["kind"] != "dataset":
        raise dataio.BundleError(f"expected a dataset bundle, got {manifest['kind']!r}")
    names = manifest.get("class_names")
    survey = SurveyDataset(
        profiles=profiles,
        labels=np.asarray(manifest["labels"], dtype=np.int64),
        halos=[(int(c), np.asarray(p, dtype=np.intp)) for c, p in manifest["halos"]],
        geometry=tuple(manifest["geometry"]),
        seed=manifest["seed"],
        class_names=tuple(names) if names else None,
    )
    return survey, manifest


def save_dictionary_bundle(prefix, dictionary: Dictionary, cfg: TrainConfig) -> None:
    manifest = {
        "kind": "dictionary",
        "seed": dictionary.seed,
        "n_atoms": dictionary.n_atoms,
        "n_features": dictionary.n_features,
        "config": cfg.canonical(),
    }
    dataio.save_bundle(prefix, dictionary.atoms, manifest)


def load_dictionary_bundle(prefix) -> tuple[Dictionary, TrainConfig]:
    atoms, manifest = dataio.load_bundle(prefix)
    if manifest["kind"] != "dictionary":
        raise dataio.BundleError(
            f"expected a dictionary bundle, got {manifest['kind']!r}"
        )
    cfg = config_from_dict(manifest["config"])
    return Dictionary(atoms, config_hash=manifest["config_hash"], seed=manifest["seed"]), cfg


def config_from_dict(doc: dict) -> TrainConfig:
    known = {f for f in TrainConfig.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return TrainConfig(**doc)


def _write_run_json(prefix, command: str, resolved: dict) -> None:
    doc = {"command": command, "resolved": resolved}
    with open(f"{prefix}.run.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jobs_default() -> int:
    return int(os.environ.get("SPARSEMINE_THREADS", "1"))


def cmd_generate(args) -> int:
    if args.layout is None:
        layout, pulse = default_layout(), PulseParams()
        layout_doc = layout_to_dict(layout, pulse)
    else:
        try:
            with open(args.layout) as fh:
                layout_doc = json.load(fh)
            layout, pulse = layout_from_dict(layout_doc)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            print(f"invalid layout: {exc}", file=sys.stderr)
            return 2
    survey = generate_survey(layout, pulse, args.seed)
    save_survey_bundle(args.out, survey, {"layout": layout_doc, "seed": args.seed})
    _write_run_json(args.out, "generate", {
        "layout": layout_doc, "seed": args.seed, "out": str(args.out),
    })
    names = survey.class_names or tuple(
        str(c) for c in np.unique(survey.labels).tolist()
    )
    print(f"{survey.n_pixels} pixels on a {layout.x_cells}x{layout.y_cells} grid")
    for cls in np.unique(survey.labels):
        name = names[cls] if cls < len(names) else str(cls)
        print(f"  class {cls} ({name}): {int(np.sum(survey.labels == cls))} pixels")
    return 0


def cmd_learn(args) -> int:
    survey, _ = load_survey_bundle(args.train)
    delta = "entropy" if args.entropy else args.delta
    cfg = TrainConfig(
        k=args.k, n_t=args.nt, k_s=args.ks, delta=delta, n_b=args.nb,
        n_r=args.nr, n_u=args.nu, chi=args.chi, lam=getattr(args, "lambda"),
        seed=args.seed,
    )
    learner = LEARNERS[args.algo]
    dictionary, _, report = learner(survey.profiles, cfg)
    save_dictionary_bundle(args.out, dictionary, cfg)
    with open(f"{args.out}.report.json", "w") as fh:
        json.dump({
            "algorithm": args.algo,
            "wall_time_s": report.wall_time,
            "iterations": report.iterations,
            "final_error": report.final_error,
            "atoms_replaced": report.atoms_replaced,
            "elements_dropped": report.elements_dropped,
            "converged": report.converged,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_json(args.out, "learn", {
        "algo": args.algo, "train": str(args.train), "config": cfg.canonical(),
        "out": str(args.out),
    })
    print(f"{args.algo}: {report.iterations} iterations in {report.wall_time:.3f} s")
    return 0


def cmd_sweep(args) -> int:
    survey, _ = load_survey_bundle(args.train)
    with open(args.grid) as fh:
        grid_docs = json.load(fh)
    with open(args.reference) as fh:
        ref_doc = json.load(fh)
    grid = [config_from_dict(d) for d in grid_docs]
    reference = config_from_dict(ref_doc)
    records = parameter_sweep(
        args.algo, grid, reference, survey.profiles, args.alpha, jobs=args.jobs
    )
    write_sweep_csv(records, f"{args.out}.csv")
    _write_run_json(args.out, "sweep", {
        "algo": args.algo, "train": str(args.train),
        "grid": [c.canonical() for c in grid],
        "reference": reference.canonical(), "alpha": args.alpha,
        "jobs": args.jobs, "out": str(args.out),
    })
    n_failed = sum(r.failed for r in records)
    print(f"{len(records)} grid points swept ({n_failed} failed)")
    return 0


def cmd_classify(args) -> int:
    dictionary, dict_cfg = load_dictionary_bundle(args.dict)
    train, _ = load_survey_bundle(args.train)
    test, _ = load_survey_bundle(args.test)
    test_classes = set(np.unique(test.labels).tolist())
    train_classes = set(np.unique(train.labels).tolist())
    missing = test_classes - train_classes
    if missing:
        raise dataio.BundleError(f"class absent from training set: {sorted(missing)}")

    # Resolve a data-driven residual rule once, on the training profiles.
    stop = StopRule(
        max_nonzeros=dict_cfg.k_s,
        max_residual=dict_cfg.resolve_delta(train.profiles),
    )
    train_codes = batch_omp(train.profiles, dictionary.atoms, stop)
    best_c, best_gamma, _ = cross_validate(
        train_codes, train.labels, args.c_grid, args.gamma_grid, folds=args.cv_folds
    )
    model = svm_train_multiclass(
        train_codes, train.labels, best_c, best_gamma,
        dict_config_hash=dictionary.config_hash,
    )

    mask = None
    if args.keep is not None and args.keep < 1.0:
        _, mask = reduce_samples(test.profiles, args.keep, args.seed)
        print(f"{mask.size} rows kept")
    class_map = classify_survey(dictionary, model, test, stop, mask=mask)

    names = test.class_names
    classes = np.asarray(sorted(train_classes | test_classes))
    cm = confusion_matrix(class_map.labels, test.labels, classes=classes,
                          class_names=names)
    pcc_values = pcc(class_map, test.halos, test.labels)
    export_class_map_pgm(class_map, f"{args.out}.map.pgm", n_classes=classes.size)
    export_class_map_csv(class_map, f"{args.out}.map.csv")
    export_confusion_csv(cm, f"{args.out}.confusion.csv")
    with open(f"{args.out}.pcc.json", "w") as fh:
        keyed = {
            (names[c] if names and c < len(names) else str(c)): v
            for c, v in pcc_values.items()
        }
        json.dump(keyed, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_json(args.out, "classify", {
        "dict": str(args.dict), "train": str(args.train), "test": str(args.test),
        "keep": args.keep, "seed": args.seed, "cv_folds": args.cv_folds,
        "c": best_c, "gamma": best_gamma, "out": str(args.out),
    })
    for cls, value in sorted(pcc_values.items()):
        name = names[cls] if names and cls < len(names) else str(cls)
        print(f"P_CC[{name}] = {value:.3f}")
    return 0


def cmd_reconstruct(args) -> int:
    dictionary, dict_cfg = load_dictionary_bundle(args.dict)
    survey, _ = load_survey_bundle(args.data)
    stop = StopRule(
        max_nonzeros=dict_cfg.k_s,
        max_residual=dict_cfg.resolve_delta(survey.profiles),
    )
    codes = batch_omp(survey.profiles, dictionary.atoms, stop)
    hist = similarity_epdf(survey.profiles, dictionary.atoms @ codes, args.bins)
    edges = np.linspace(0.0, 1.0, args.bins + 1)
    with open(f"{args.out}.csv", "w") as fh:
        fh.write("bin_low,bin_high,mass\n")
        for i in range(args.bins):
            fh.write(f"{edges[i]:.6f},{edges[i + 1]:.6f},{hist[i]:.17g}\n")
    _write_run_json(args.out, "reconstruct", {
        "dict": str(args.dict), "data": str(args.data), "bins": args.bins,
        "out": str(args.out),
    })
    print(f"similarity histogram over {args.bins} bins (mass {hist.sum():.6f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsemine",
        description="Dictionary learning and sparse-code classification "
        "for synthetic GPR surveys.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic survey bundle")
    p.add_argument("--layout", help="layout JSON file (default: built-in 4-class preset)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output bundle prefix")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("learn", help="learn a dictionary from a survey bundle")
    p.add_argument("--algo", required=True, choices=sorted(LEARNERS))
    p.add_argument("--train", required=True, help="training dataset bundle prefix")
    p.add_argument("--k", type=int, required=True, help="number of atoms")
    p.add_argument("--nt", type=int, default=50, help="iterations (ksvd, odl)")
    p.add_argument("--ks", type=int, default=8, help="sparsity target")
    p.add_argument("--delta", type=float, default=None, help="relative residual stop")
    p.add_argument("--entropy", action="store_true",
                   help="derive the residual stop from the data entropy")
    p.add_argument("--nb", type=int, default=30, help="new-element mini-batch")
    p.add_argument("--nr", type=int, default=10, help="previous-element mini-batch")
    p.add_argument("--nu", type=int, default=10, help="drop-off age")
    p.add_argument("--chi", type=float, default=None, help="convergence threshold")
    p.add_argument("--lambda", type=float, default=0.1, help="l1 weight (odl)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output bundle prefix")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("sweep", help="parameter sweep against a reference config")
    p.add_argument("--algo", required=True, choices=sorted(LEARNERS))
    p.add_argument("--train", required=True)
    p.add_argument("--grid", required=True, help="JSON list of config objects")
    p.add_argument("--reference", required=True, help="JSON config object")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--jobs", type=int, default=_jobs_default())
    p.add_argument("--out", required=True, help="output prefix (.csv appended)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("classify", help="train an SVM on codes and map a survey")
    p.add_argument("--dict", required=True, help="dictionary bundle prefix")
    p.add_argument("--train", required=True, help="training dataset bundle prefix")
    p.add_argument("--test", required=True, help="test dataset bundle prefix")
    p.add_argument("--keep", type=float, default=None,
                   help="fraction of signal rows to keep (random mask)")
    p.add_argument("--seed", type=int, default=0, help="row mask seed")
    p.add_argument("--cv-folds", type=int, default=10)
    p.add_argument("--c-grid", type=float, nargs="+", default=list(DEFAULT_C_GRID))
    p.add_argument("--gamma-grid", type=float, nargs="+",
                   default=list(DEFAULT_GAMMA_GRID))
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("reconstruct", help="similarity histogram of a coded dataset")
    p.add_argument("--dict", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True, help="output prefix (.csv appended)")
    p.set_defaults(func=cmd_reconstruct)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DegenerateSupportError, DegenerateTrainingError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (dataio.MatrixFormatError, dataio.BundleError, ModelMismatchError,
            json.JSONDecodeError, OSError, KeyError, TypeError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
