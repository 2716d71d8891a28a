"""Subcommand CLI chaining the decision pipeline over CSV/JSON files.

Every subcommand is deterministic given its inputs (randomness lives only in
``synth`` behind an explicit seed), exits 0 on success, and on failure prints
``error[<category>]: <message>`` to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io
from .config import AGGREGATION_RULES, PipelineConfig, load_config
from .ensemble import (
    MemberPredictions,
    aggregate_average,
    aggregate_majority,
    aggregate_max_prob,
    select_best_members,
)
from .errors import ConfigInvalid, MemberSampleMismatch, OpendermError
from .fusion import ClassConfidence, MetadataPriors, fuse_batch
from .metrics import class_weights, evaluate
from .openset import EntropyOutlierDetector
from .synth import SynthConfig, generate, write_fixture_files
from .taxonomy import ISIC2019_TRAIN_COUNTS


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OpendermError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openderm",
        description="Open-set decision engine over per-model class-probability files",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("aggregate", help="combine per-model probability files into one")
    _add_config(p)
    p.add_argument("--rule", choices=AGGREGATION_RULES, default="average")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("members", nargs="+", help="per-model probability CSV files")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("select-members", help="pick the best members by balanced accuracy")
    p.add_argument("--scores", required=True, help="CSV with columns model,balanced_accuracy")
    p.add_argument("-n", type=int, default=3)
    p.set_defaults(func=cmd_select_members)

    p = sub.add_parser("calibrate-entropy", help="fit the per-class entropy profile")
    _add_config(p)
    p.add_argument("--probs", required=True, help="validation probability CSV")
    p.add_argument("--truth", required=True, help="validation ground-truth CSV")
    p.add_argument("--similarity-mode", choices=("conjunctive", "standalone"))
    p.add_argument("-o", "--output", required=True, help="profile JSON path")
    p.set_defaults(func=cmd_calibrate_entropy)

    p = sub.add_parser("detect-unknown", help="flag unknown-class samples")
    _add_config(p)
    p.add_argument("--profile", required=True, help="profile JSON from calibrate-entropy")
    p.add_argument("--probs", required=True, help="probability CSV to scan")
    p.add_argument("-o", "--output", required=True, help="decision CSV path")
    p.add_argument("--submission", help="also write a challenge submission CSV here")
    p.set_defaults(func=cmd_detect_unknown)

    p = sub.add_parser("fit-priors", help="fit metadata priors and the confidence gate")
    _add_config(p)
    p.add_argument("--meta", required=True, help="training metadata CSV")
    p.add_argument("--truth", required=True, help="training ground-truth CSV")
    p.add_argument("--val-probs", required=True, help="validation probability CSV for the gate")
    p.add_argument("--age-bin-width", type=float)
    p.add_argument("-o", "--output", required=True, help="priors JSON path")
    p.set_defaults(func=cmd_fit_priors)

    p = sub.add_parser("fuse-meta", help="re-rank low-confidence predictions with metadata")
    _add_config(p)
    p.add_argument("--priors", required=True, help="priors JSON from fit-priors")
    p.add_argument("--probs", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("-o", "--output", required=True, help="fused decisions CSV path")
    p.set_defaults(func=cmd_fuse_meta)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    _add_config(p)
    p.add_argument("--probs", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", help="optional CSV of final labels (e.g. fuse-meta output)")
    p.add_argument("-o", "--output", help="report JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("weights", help="inverse-frequency class weights from sample counts")
    _add_config(p)
    p.add_argument("--counts", help="CSV with columns label,count (default: packaged challenge counts)")
    p.add_argument("-o", "--output", help="weights JSON path")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("synth", help="generate seeded synthetic fixture files")
    _add_config(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--n-validation", type=int, default=1000)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-models", type=int, default=3)
    p.add_argument("--outlier-fraction", type=float, default=0.10)
    p.add_argument("--confusion", type=float, default=0.15)
    p.add_argument("--missing-rate", type=float, default=0.10)
    p.add_argument("--class-mixture",
                   help="comma-separated class weights (default: packaged challenge frequencies)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="run the whole chain from one config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def _add_config(parser):
    parser.add_argument("--config", help="flat key=value config file (labels, tolerance, ...)")


def _load(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return PipelineConfig()


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _read_members(paths, taxonomy, tolerance) -> list[MemberPredictions]:
    members = []
    for path in paths:
        ids, proba = io.read_probability_csv(path, taxonomy, tolerance)
        members.append(MemberPredictions(name=_stem(path), ids=tuple(ids), proba=proba))
    return members


def _align_labels(ids, truth_ids, truth_y, what: str) -> np.ndarray:
    lookup = dict(zip(truth_ids, truth_y.tolist()))
    missing = [sid for sid in ids if sid not in lookup]
    if missing:
        raise MemberSampleMismatch(f"{what} lacks labels for {len(missing)} ids (first: {missing[:3]})")
    return np.array([lookup[sid] for sid in ids], dtype=np.int64)


def cmd_aggregate(args) -> int:
    cfg = _load(args)
    tax = cfg.taxonomy
    members = _read_members(args.members, tax, cfg.tolerance)
    if args.rule == "majority":
        io.write_votes_csv(args.output, aggregate_majority(members), tax)
    else:
        rule = aggregate_average if args.rule == "average" else aggregate_max_prob
        ids, proba = rule(members)
        io.write_probability_csv(args.output, ids, proba, tax)
    print(f"aggregated {len(members)} members ({args.rule}) -> {args.output}")
    return 0


def cmd_select_members(args) -> int:
    scores = io.read_scores_csv(args.scores)
    for name in select_best_members(scores, args.n):
        print(name)
    return 0


def cmd_calibrate_entropy(args) -> int:
    cfg = _load(args)
    tax = cfg.taxonomy
    mode = args.similarity_mode or cfg.similarity_mode
    ids, proba = io.read_probability_csv(args.probs, tax, cfg.tolerance)
    truth_ids, truth_y = io.read_truth_csv(args.truth, tax)
    y = _align_labels(ids, truth_ids, truth_y, args.truth)
    known = y >= 0
    if not known.all():
        print(f"note: skipping {int((~known).sum())} unknown-class truth rows", file=sys.stderr)
    detector = EntropyOutlierDetector(taxonomy=tax, similarity_mode=mode)
    detector.fit(proba[known], y[known])
    io.write_json(args.output, detector.profile_dict())
    fitted = int(detector.fittable_.sum())
    print(f"calibrated {fitted}/{tax.n_classes} classes on {int(known.sum())} samples -> {args.output}")
    return 0


def cmd_detect_unknown(args) -> int:
    cfg = _load(args)
    detector = EntropyOutlierDetector.from_profile(io.read_json(args.profile))
    tax = detector.taxonomy
    ids, proba = io.read_probability_csv(args.probs, tax, cfg.tolerance)
    decisions, summary = detector.flag_outliers(proba, ids)
    io.write_decisions_csv(args.output, decisions, tax)
    if args.submission:
        mask = np.array([d.is_unknown for d in decisions], dtype=bool)
        io.write_submission_csv(args.submission, ids, proba, mask, tax)
    print(f"unknown: {summary.unknown_count}/{summary.total} ({summary.percentage:.2f}%) -> {args.output}")
    return 0


def cmd_fit_priors(args) -> int:
    cfg = _load(args)
    tax = cfg.taxonomy
    width = args.age_bin_width if args.age_bin_width is not None else cfg.age_bin_width
    records = io.read_metadata_csv(args.meta)
    truth_ids, truth_y = io.read_truth_csv(args.truth, tax)
    y = _align_labels([r.sample_id for r in records], truth_ids, truth_y, args.truth)
    priors = MetadataPriors(taxonomy=tax, age_bin_width=width).fit(records, y)
    val_ids, val_proba = io.read_probability_csv(args.val_probs, tax, cfg.tolerance)
    confidence = ClassConfidence(taxonomy=tax).fit(val_proba)
    io.write_json(args.output, {"priors": priors.to_dict(), "confidence": confidence.to_dict()})
    print(
        f"fitted priors on {priors.n_complete_} complete records, "
        f"{len(priors.region_vocabulary_)} regions -> {args.output}"
    )
    return 0


def cmd_fuse_meta(args) -> int:
    cfg = _load(args)
    payload = io.read_json(args.priors)
    priors = MetadataPriors.from_dict(payload["priors"])
    confidence = ClassConfidence.from_dict(payload["confidence"], taxonomy=priors.taxonomy)
    tax = priors.taxonomy
    ids, proba = io.read_probability_csv(args.probs, tax, cfg.tolerance)
    metadata = io.read_metadata_csv(args.meta)
    results, summary = fuse_batch(ids, proba, metadata, priors, confidence)
    io.write_fusion_csv(args.output, results, tax)
    print(
        f"fused {summary.total} samples: applied {summary.applied_count}, "
        f"flipped {summary.flipped_count} -> {args.output}"
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    tax = cfg.taxonomy
    ids, proba = io.read_probability_csv(args.probs, tax, cfg.tolerance)
    truth_ids, truth_y = io.read_truth_csv(args.truth, tax)
    y = _align_labels(ids, truth_ids, truth_y, args.truth)
    if args.pred:
        pred_ids, pred_y = io.read_predictions_csv(args.pred, tax)
        y_pred = _align_labels(ids, pred_ids, pred_y, args.pred)
    else:
        y_pred = np.argmax(proba, axis=1)
    known = y >= 0
    if not known.all():
        print(f"note: scoring {int(known.sum())} known-truth rows, "
              f"skipping {int((~known).sum())} unknown-class rows", file=sys.stderr)
    report = evaluate(y[known], proba=proba[known], y_pred=y_pred[known], n_classes=tax.n_classes)
    print(report.format_table(tax))
    if args.output:
        io.write_json(args.output, report.to_dict(tax))
    return 0


def cmd_weights(args) -> int:
    cfg = _load(args)
    tax = cfg.taxonomy
    if args.counts:
        pairs = io.read_counts_csv(args.counts)
    else:
        pairs = [(lab, ISIC2019_TRAIN_COUNTS[lab]) for lab in tax.known_labels
                 if lab in ISIC2019_TRAIN_COUNTS]
        if len(pairs) != tax.n_classes:
            raise ConfigInvalid("no packaged counts for this taxonomy; pass --counts")
    counts = np.array([c for _, c in pairs], dtype=np.int64)
    weights = class_weights(counts)
    width = max(len(lab) for lab, _ in pairs)
    for (lab, count), w in zip(pairs, weights):
        print(f"{lab:>{width}}  {count:>7d}  {w:.5f}")
    if args.output:
        io.write_json(args.output, {lab: float(w) for (lab, _), w in zip(pairs, weights)})
    return 0


def cmd_synth(args) -> int:
    cfg = _load(args)
    seed = args.seed if args.seed is not None else cfg.seed
    mixture = None
    if args.class_mixture:
        try:
            mixture = tuple(float(part) for part in args.class_mixture.split(","))
        except ValueError as exc:
            raise ConfigInvalid(f"bad class mixture: {exc}") from exc
    synth_cfg = SynthConfig(
        n_samples=args.n_samples,
        n_validation=args.n_validation,
        n_train=args.n_train,
        n_models=args.n_models,
        outlier_fraction=args.outlier_fraction,
        confusion=args.confusion,
        missing_rate=args.missing_rate,
        class_mixture=mixture,
        seed=seed,
    )
    dataset = generate(synth_cfg, cfg.taxonomy)
    paths = write_fixture_files(dataset, args.out)
    print(f"wrote {len(paths)} fixture files to {args.out} "
          f"({len(dataset.outlier_ids)} planted outliers)")
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    run_pipeline(cfg)
    return 0


def run_pipeline(cfg: PipelineConfig) -> dict[str, str]:
    """Chain aggregate -> calibrate -> detect [-> fuse] [-> evaluate].

    Writes the same artifacts the individual subcommands would and returns a
    name -> path map. Majority voting is rejected here: it yields labels
    without probabilities, and the downstream stages need a distribution.
    """
    if cfg.rule == "majority":
        raise ConfigInvalid(
            "pipeline needs probability output; majority voting carries none "
            "(use rule = average or maxprob)"
        )
    if not cfg.test_probs or not cfg.val_probs or not cfg.val_truth:
        raise ConfigInvalid("pipeline requires test_probs, val_probs, and val_truth")
    tax = cfg.taxonomy
    os.makedirs(cfg.out_dir, exist_ok=True)
    paths: dict[str, str] = {}

    def _path(name: str) -> str:
        paths[name] = os.path.join(cfg.out_dir, name)
        return paths[name]

    rule = aggregate_average if cfg.rule == "average" else aggregate_max_prob
    val_ids, val_proba = rule(_read_members(cfg.val_probs, tax, cfg.tolerance))
    test_ids, test_proba = rule(_read_members(cfg.test_probs, tax, cfg.tolerance))
    io.write_probability_csv(_path("ensemble_val.csv"), val_ids, val_proba, tax)
    io.write_probability_csv(_path("ensemble_test.csv"), test_ids, test_proba, tax)

    truth_ids, truth_y = io.read_truth_csv(cfg.val_truth, tax)
    val_y = _align_labels(val_ids, truth_ids, truth_y, cfg.val_truth)
    known = val_y >= 0
    detector = EntropyOutlierDetector(taxonomy=tax, similarity_mode=cfg.similarity_mode)
    detector.fit(val_proba[known], val_y[known])
    io.write_json(_path("entropy_profile.json"), detector.profile_dict())

    decisions, summary = detector.flag_outliers(test_proba, test_ids)
    io.write_decisions_csv(_path("decisions.csv"), decisions, tax)
    unknown_mask = np.array([d.is_unknown for d in decisions], dtype=bool)
    print(f"unknown: {summary.unknown_count}/{summary.total} ({summary.percentage:.2f}%)")

    y_pred = np.argmax(test_proba, axis=1)
    fusion_ran = bool(cfg.train_meta and cfg.train_truth and cfg.test_meta)
    if fusion_ran:
        train_records = io.read_metadata_csv(cfg.train_meta)
        tr_ids, tr_y = io.read_truth_csv(cfg.train_truth, tax)
        train_y = _align_labels([r.sample_id for r in train_records], tr_ids, tr_y, cfg.train_truth)
        priors = MetadataPriors(taxonomy=tax, age_bin_width=cfg.age_bin_width).fit(train_records, train_y)
        confidence = ClassConfidence(taxonomy=tax).fit(val_proba)
        io.write_json(_path("priors.json"), {"priors": priors.to_dict(), "confidence": confidence.to_dict()})
        results, fsummary = fuse_batch(test_ids, test_proba, io.read_metadata_csv(cfg.test_meta),
                                       priors, confidence)
        io.write_fusion_csv(_path("fused.csv"), results, tax)
        print(f"fused {fsummary.total} samples: applied {fsummary.applied_count}, "
              f"flipped {fsummary.flipped_count}")
        by_id = {r.sample_id: r.label for r in results}
        y_pred = np.array([by_id[sid] for sid in test_ids], dtype=np.int64)

    io.write_submission_csv(_path("submission.csv"), test_ids, test_proba, unknown_mask, tax)

    if cfg.test_truth:
        t_ids, t_y = io.read_truth_csv(cfg.test_truth, tax)
        test_y = _align_labels(test_ids, t_ids, t_y, cfg.test_truth)
        mask = test_y >= 0
        report = evaluate(test_y[mask], proba=test_proba[mask], y_pred=y_pred[mask],
                          n_classes=tax.n_classes)
        io.write_json(_path("report.json"), report.to_dict(tax))
        print(report.format_table(tax))

    return paths


if __name__ == "__main__":
    raise SystemExit(main())
