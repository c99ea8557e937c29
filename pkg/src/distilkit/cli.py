"""Command-line pipeline: synthesize data, train the teacher, export
alignments, train students, evaluate, and run the full alignment ablation.

Exit codes: 0 success, 2 usage error, 1 runtime error. Diagnostics go to
stderr; data goes to files or stdout. DISTILKIT_THREADS caps worker threads
for the parallel (pure, order-preserving) evaluation/generation passes.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import alignments as al
from . import checkpoint, datagen, distillation, evaluation, kernels, layers, training
from .errors import ConfigError, DataError, DistilkitError
from .seeding import substream_seed


def _load_model_spec_json(path):
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: model spec must be a JSON object")
    for key in ("hidden", "context", "dnn_pre", "dnn_post"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        return layers.ModelSpec(**raw)
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from None


def _load_sweep_grid(arg, seed, minibatch_size, max_epochs, patience):
    if arg == "default":
        return training.default_sweep_grid(
            seed=seed, minibatch_size=minibatch_size,
            max_epochs=max_epochs, patience=patience)
    with open(arg, "r", encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{arg}: sweep file must be a non-empty JSON list")
    grid = []
    for item in raw:
        schedule = training.Schedule(
            kind=item.get("schedule", "constant"),
            rate=float(item["rate"]),
            factor=float(item.get("factor", 0.5)),
        )
        grid.append(training.TrainConfig(
            schedule=schedule,
            minibatch_size=int(item.get("minibatch_size", minibatch_size)),
            max_epochs=int(item.get("max_epochs", max_epochs)),
            patience=int(item.get("patience", patience)),
            seed=int(item.get("seed", seed)),
        ))
    return grid


def _hard_truth(utts):
    return [al.HardAlignment(utt_id=u.utt_id, labels=u.labels) for u in utts]


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synth(args):
    if args.spec_file:
        with open(args.spec_file, "r", encoding="utf-8") as f:
            spec = datagen.SynthSpec(**json.load(f))
    else:
        spec = datagen.SynthSpec(
            num_states=args.states, feature_dim=args.dim,
            train_utts=args.train_utts, dev_utts=args.dev_utts, test_utts=args.test_utts,
            min_frames=args.min_frames, max_frames=args.max_frames,
            self_loop=args.self_loop, noise_sigma=args.sigma, seed=args.seed)
    data = datagen.generate(spec)
    datagen.write_dataset(data, args.out)
    for split, frames in data.frame_counts().items():
        print(f"{split}: {len(data.splits[split])} utterances, {frames} frames")
    return 0


def _train_with_sweep(spec, init_seed, train_data, dev_set, targets, grid, out_path,
                      history_path):
    def save_best(params, record):
        checkpoint.save_checkpoint(out_path, spec, params)

    with open(history_path, "w", encoding="utf-8") as metrics:
        report = training.sweep(spec, layers.init_params(spec, init_seed),
                                train_data, dev_set, targets, grid,
                                metrics_stream=metrics, on_global_improve=save_best)
    # final rewrite so the file always holds the sweep winner
    checkpoint.save_checkpoint(out_path, spec, report.best_params)
    return report


def cmd_train_teacher(args):
    train_utts = datagen.read_split(args.data, "train")
    dev_utts = datagen.read_split(args.data, "dev")
    dim = train_utts[0].features.shape[1]
    states = int(max(u.labels.max() for u in train_utts + dev_utts)) + 1
    spec = _load_model_spec_json(args.spec) if args.spec else layers.teacher_spec(dim, states)

    features = [u.features for u in train_utts]
    targets = [distillation.SparseTargets.from_hard(u.labels, spec.num_states)
               for u in train_utts]
    dev_set = training.DevSet(
        features=[u.features for u in dev_utts],
        hard_labels=[u.labels for u in dev_utts])
    grid = _load_sweep_grid(args.sweep, substream_seed(args.seed, "shuffle/teacher"),
                            args.minibatch, args.max_epochs, args.patience)
    report = _train_with_sweep(spec, substream_seed(args.seed, "init/teacher"),
                               features, dev_set, targets, grid,
                               args.out, args.out + ".history.jsonl")

    best = report.best_run
    _, params = checkpoint.load_checkpoint(args.out)
    dev_truth = _hard_truth(dev_utts)
    fer = evaluation.frame_error_rate(
        evaluation.model_predictions(spec, params, dev_utts), dev_truth)
    counts = np.bincount(np.concatenate([u.labels for u in train_utts]),
                         minlength=spec.num_states)
    majority = int(np.argmax(counts))
    baseline = float(np.mean(np.concatenate([u.labels for u in dev_utts]) != majority))
    print(f"kernel: {kernels.active_kernel()}")
    print(f"best schedule: {best.config.schedule.describe()} "
          f"(dev CE {best.result.best_dev_ce:.5f}, epoch {best.result.best_epoch})")
    print(f"dev FER {fer:.4f} (majority-class baseline {baseline:.4f})")
    print(f"checkpoint: {args.out}")
    for run in report.runs:
        status = f"failed: {run.error}" if run.failed else f"dev CE {run.best_dev_ce:.5f}"
        print(f"  {run.config.schedule.describe():<20} {status}", file=sys.stderr)
    return 0


def cmd_gen_align(args):
    spec, params = checkpoint.load_checkpoint(args.teacher)
    utts = datagen.read_split(args.data, args.split)
    pairs = [(u.utt_id, u.features) for u in utts]
    for u in utts:
        if u.features.shape[1] != spec.input_dim:
            raise DataError(
                f"features have width {u.features.shape[1]}, model expects {spec.input_dim}")
    if args.mode == "soft":
        softs = distillation.generate_soft_alignments(spec, params, pairs, args.mass)
        stats = al.write_cache(softs, args.out)
        frames = stats.frames
        dense = al.estimate_full_cache_bytes(frames, spec.num_states, 4)
        print(f"wrote {stats.utterances} utterances, {frames} frames, "
              f"{stats.entries} entries ({stats.bytes_written} bytes)")
        if stats.min_retained_mass is not None:
            print(f"retained mass: min {stats.min_retained_mass:.6f}, "
                  f"mean {stats.mean_retained_mass:.6f} (threshold {args.mass})")
        print(f"dense baseline {dense} bytes; compression ratio "
              f"{dense / stats.bytes_written:.1f}x")
    else:
        preds = evaluation.model_predictions(spec, params, utts)
        al.write_hard_labels(preds, args.out)
        frames = sum(len(p.labels) for p in preds)
        print(f"wrote {len(preds)} utterances, {frames} frames of hard labels")
    return 0


def _read_targets_file(path):
    """Hard-label text or SPST cache, sniffed by magic."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == al.SPST_MAGIC:
        return al.read_cache(path)
    return al.read_hard_labels(path)


def cmd_train_student(args):
    train_utts = datagen.read_split(args.data, "train")
    dev_utts = datagen.read_split(args.data, "dev")
    dim = train_utts[0].features.shape[1]
    states = int(max(u.labels.max() for u in train_utts + dev_utts)) + 1
    spec = _load_model_spec_json(args.spec) if args.spec else layers.student_spec(dim, states)

    train_targets = _read_targets_file(args.targets)
    per_utt = evaluation.pack_alignment_targets(train_targets, train_utts, spec.num_states)
    targets = evaluation._concat_targets(per_utt)

    left, right = spec.context
    X_train = np.vstack([layers.context_windows(u.features, left, right) for u in train_utts])
    X_dev = np.vstack([layers.context_windows(u.features, left, right) for u in dev_utts])
    y_dev = np.concatenate([u.labels for u in dev_utts])

    dev_targets = None
    if args.dev_targets:
        dev_aligns = _read_targets_file(args.dev_targets)
        dev_targets = evaluation._concat_targets(
            evaluation.pack_alignment_targets(dev_aligns, dev_utts, spec.num_states))
    dev_set = training.DevSet(features=X_dev, hard_labels=y_dev, targets=dev_targets)

    grid = _load_sweep_grid(args.sweep, substream_seed(args.seed, "shuffle/student"),
                            args.minibatch, args.max_epochs, args.patience)
    report = _train_with_sweep(spec, substream_seed(args.seed, "init/student"),
                               X_train, dev_set, targets, grid,
                               args.out, args.out + ".history.jsonl")
    best = report.best_run
    _, params = checkpoint.load_checkpoint(args.out)
    dev_truth = _hard_truth(dev_utts)
    fer = evaluation.frame_error_rate(
        evaluation.model_predictions(spec, params, dev_utts), dev_truth)
    cse = evaluation.dataset_cse(spec, params, dev_utts, dev_truth)
    print(f"best schedule: {best.config.schedule.describe()} "
          f"(selection dev CE {best.result.best_dev_ce:.5f}, epoch {best.result.best_epoch})")
    print(f"dev FER {fer:.4f}, dev CE vs labels {cse:.5f}")
    print(f"checkpoint: {args.out}")
    return 0


def cmd_evaluate(args):
    spec, params = checkpoint.load_checkpoint(args.model)
    utts = datagen.read_split(args.data, args.split)
    ref_path = args.ref or os.path.join(args.data, f"{args.split}.labels")
    refs = al.read_hard_labels(ref_path)
    preds = evaluation.model_predictions(spec, params, utts)
    fer = evaluation.frame_error_rate(preds, refs)
    report = evaluation.dataset_loss(spec, params, utts, refs)
    print(f"{args.split}: FER {fer:.4f}  CE {report.cross_entropy:.5f} nats "
          f"({report.frame_count} frames)")
    if args.soft_ref:
        soft = al.read_cache(args.soft_ref)
        soft_report = evaluation.dataset_loss(spec, params, utts, soft)
        print(f"{args.split} vs soft targets: CE {soft_report.cross_entropy:.5f}  "
              f"KL {soft_report.kl_divergence:.5f} nats")
    return 0


def cmd_inspect_cache(args):
    stats = al.inspect_cache(args.cache)
    states = args.states
    if states is None:
        states = 0
        for soft in al.iter_cache(args.cache):
            for frame in soft.frames:
                states = max(states, int(frame.ids.max()) + 1)
    print(f"utterances: {stats['utterances']}")
    print(f"frames: {stats['frames']}")
    print(f"entries: {stats['entries']} "
          f"(per frame: mean {stats['mean_entries_per_frame']:.2f}, "
          f"min {stats['min_entries_per_frame']}, max {stats['max_entries_per_frame']})")
    print(f"stored mass per frame: min {stats['min_frame_mass']:.6f}, "
          f"mean {stats['mean_frame_mass']:.6f}")
    print(f"file bytes: {stats['file_bytes']}")
    if stats["frames"] and states:
        dense = al.estimate_full_cache_bytes(stats["frames"], states, 4)
        print(f"dense baseline ({states} states, f32): {dense} bytes; "
              f"ratio {dense / stats['file_bytes']:.1f}x")
    return 0


# ---------------------------------------------------------------------------
# ablation pipeline


def run_ablation(out_dir, master_seed, data_dir=None, synth_spec=None,
                 include_dnn_teacher=True, student=None, teacher=None,
                 dnn_teacher=None, mass=al.DEFAULT_MASS, minibatch_size=128,
                 max_epochs=20, patience=1, log=None):
    """Teacher training, alignment exports, and the four-condition student
    comparison; returns the AblationReport and leaves all artifacts in out_dir.
    """
    def say(msg):
        if log is not None:
            print(msg, file=log)

    os.makedirs(out_dir, exist_ok=True)
    if data_dir is None:
        spec = synth_spec or datagen.SynthSpec(seed=substream_seed(master_seed, "data"))
        data_dir = os.path.join(out_dir, "data")
        datagen.write_dataset(datagen.generate(spec), data_dir)
        say(f"generated synthetic data in {data_dir}")

    train_utts = datagen.read_split(data_dir, "train")
    dev_utts = datagen.read_split(data_dir, "dev")
    test_utts = datagen.read_split(data_dir, "test")
    dim = train_utts[0].features.shape[1]
    states = int(max(u.labels.max() for u in train_utts + dev_utts + test_utts)) + 1

    data = datagen.SynthData(spec=None)
    data.splits = {"train": train_utts, "dev": dev_utts, "test": test_utts}

    # 1. recurrent teacher on the ground-truth hard labels
    tspec = teacher or layers.teacher_spec(dim, states)
    grid = training.default_sweep_grid(
        seed=substream_seed(master_seed, "shuffle/teacher"),
        minibatch_size=minibatch_size, max_epochs=max_epochs, patience=patience)
    dev_set = training.DevSet(features=[u.features for u in dev_utts],
                              hard_labels=[u.labels for u in dev_utts])
    teacher_path = os.path.join(out_dir, "teacher.mdlp")
    report = _train_with_sweep(
        tspec, substream_seed(master_seed, "init/teacher"),
        [u.features for u in train_utts], dev_set,
        [distillation.SparseTargets.from_hard(u.labels, tspec.num_states)
         for u in train_utts],
        grid, teacher_path, teacher_path + ".history.jsonl")
    tspec, tparams = checkpoint.load_checkpoint(teacher_path)
    dev_truth = _hard_truth(dev_utts)
    teacher_dev_fer = evaluation.frame_error_rate(
        evaluation.model_predictions(tspec, tparams, dev_utts), dev_truth)
    teacher_dev_ce = evaluation.dataset_cse(tspec, tparams, dev_utts, dev_truth)
    say(f"teacher: {report.best_run.config.schedule.describe()}, "
        f"dev FER {teacher_dev_fer:.4f}, dev CE {teacher_dev_ce:.5f}")

    # 2. teacher alignments (soft cache + top-1 labels) for the train split;
    # every condition early-stops on the same dev metric (CE against the dev
    # hard labels), mirroring truth-based dev stopping
    softs = distillation.generate_soft_alignments(
        tspec, tparams, [(u.utt_id, u.features) for u in train_utts], mass)
    soft_path = os.path.join(out_dir, "soft_teacher.train.spst")
    al.write_cache(softs, soft_path)
    soft_teacher_train = al.read_cache(soft_path)
    hard_teacher_train = [al.hard_from_soft(s) for s in soft_teacher_train]
    al.write_hard_labels(hard_teacher_train,
                         os.path.join(out_dir, "hard_teacher.train.labels"))
    say("teacher alignments cached")

    conditions = [
        evaluation.AlignmentCondition(name="Hard-labels", train=_hard_truth(train_utts)),
        evaluation.AlignmentCondition(name="Hard-teacher", train=hard_teacher_train),
        evaluation.AlignmentCondition(name="Soft-teacher", train=soft_teacher_train),
    ]

    # 3. optional big feed-forward teacher for the fourth row
    if include_dnn_teacher:
        dspec = dnn_teacher or layers.student_spec(dim, states, hidden=(128, 128))
        dnn_path = os.path.join(out_dir, "dnn_teacher.mdlp")
        X_train = np.vstack([layers.context_windows(u.features, *dspec.context)
                             for u in train_utts])
        X_dev = np.vstack([layers.context_windows(u.features, *dspec.context)
                           for u in dev_utts])
        y_dev = np.concatenate([u.labels for u in dev_utts])
        dnn_targets = evaluation._concat_targets(
            [distillation.SparseTargets.from_hard(u.labels, dspec.num_states)
             for u in train_utts])
        dnn_grid = training.default_sweep_grid(
            seed=substream_seed(master_seed, "shuffle/dnn-teacher"),
            minibatch_size=minibatch_size, max_epochs=max_epochs, patience=patience)
        _train_with_sweep(dspec, substream_seed(master_seed, "init/dnn-teacher"),
                          X_train, training.DevSet(features=X_dev, hard_labels=y_dev),
                          dnn_targets, dnn_grid, dnn_path, dnn_path + ".history.jsonl")
        dspec, dparams = checkpoint.load_checkpoint(dnn_path)
        dnn_softs = distillation.generate_soft_alignments(
            dspec, dparams, [(u.utt_id, u.features) for u in train_utts], mass)
        dnn_soft_path = os.path.join(out_dir, "soft_dnn.train.spst")
        al.write_cache(dnn_softs, dnn_soft_path)
        conditions.append(evaluation.AlignmentCondition(
            name="Soft-DNN-teacher", train=al.read_cache(dnn_soft_path)))
        say("big-DNN teacher alignments cached")
    else:
        conditions.append(evaluation.AlignmentCondition(
            name="Soft-DNN-teacher", train=None))

    # 4. one student per condition, shared init/shuffle seeds
    sspec = student or layers.student_spec(dim, states)
    usable = [c for c in conditions if c.train is not None]
    ablation = evaluation.ablation_report(
        sspec, data, usable,
        init_seed=substream_seed(master_seed, "init/student"),
        shuffle_seed=substream_seed(master_seed, "shuffle/student"),
        minibatch_size=minibatch_size, max_epochs=max_epochs, patience=patience)
    for cond in conditions:
        if cond.train is None:
            ablation.rows.append(evaluation.AblationRow(
                condition=cond.name, status="skipped"))
    ablation.teacher_dev_fer = teacher_dev_fer
    ablation.teacher_dev_ce = teacher_dev_ce

    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as f:
        f.write(ablation.format_text() + "\n")
    with open(os.path.join(out_dir, "report.jsonl"), "w", encoding="utf-8") as f:
        f.write(json.dumps({"teacher_dev_fer": teacher_dev_fer,
                            "teacher_dev_ce": teacher_dev_ce,
                            "master_seed": master_seed}, sort_keys=True) + "\n")
        for row in ablation.rows:
            f.write(json.dumps(row.to_dict(), sort_keys=True) + "\n")
    return ablation


def cmd_ablation(args):
    report = run_ablation(
        out_dir=args.out, master_seed=args.seed, data_dir=args.data,
        include_dnn_teacher=not args.skip_dnn_teacher, mass=args.mass,
        minibatch_size=args.minibatch, max_epochs=args.max_epochs,
        patience=args.patience, log=sys.stderr)
    print(report.format_text())
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="distilkit",
        description="Train a recurrent teacher, export truncated soft alignments, "
                    "and distill small feed-forward students from them.",
        epilog="DISTILKIT_THREADS caps worker threads; DISTILKIT_KERNEL selects "
               "the recurrence kernel (auto|compiled|python).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate the synthetic corpus")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--spec-file", help="JSON file with generator fields")
    p.add_argument("--states", type=int, default=48)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--train-utts", type=int, default=400)
    p.add_argument("--dev-utts", type=int, default=50)
    p.add_argument("--test-utts", type=int, default=50)
    p.add_argument("--min-frames", type=int, default=40)
    p.add_argument("--max-frames", type=int, default=80)
    p.add_argument("--self-loop", type=float, default=0.85)
    p.add_argument("--sigma", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train-teacher", help="train the recurrent teacher on hard labels")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--spec", help="JSON model-spec file (default: desk-scale teacher)")
    p.add_argument("--sweep", default="default", help="'default' or a JSON grid file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--minibatch", type=int, default=128)
    p.add_argument("--max-epochs", type=int, default=20)
    p.add_argument("--patience", type=int, default=1)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("gen-align", help="export alignments from a trained model")
    p.add_argument("--teacher", required=True, help="model checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--mode", choices=("hard", "soft"), default="soft")
    p.add_argument("--mass", type=float, default=al.DEFAULT_MASS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_align)

    p = sub.add_parser("train-student", help="train the small model on hard or soft targets")
    p.add_argument("--data", required=True)
    p.add_argument("--targets", required=True, help="label file or SPST cache for train")
    p.add_argument("--dev-targets", help="optional dev targets for the stopping metric")
    p.add_argument("--spec", help="JSON model-spec file (default: desk-scale student)")
    p.add_argument("--sweep", default="default")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--minibatch", type=int, default=128)
    p.add_argument("--max-epochs", type=int, default=20)
    p.add_argument("--patience", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("evaluate", help="frame error rate and cross-entropy of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="dev")
    p.add_argument("--ref", help="reference label file (default <data>/<split>.labels)")
    p.add_argument("--soft-ref", help="optional SPST cache for soft-target losses")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-cache", help="statistics of an SPST cache file")
    p.add_argument("--cache", required=True)
    p.add_argument("--states", type=int, help="state count for the dense baseline")
    p.set_defaults(func=cmd_inspect_cache)

    p = sub.add_parser("ablation", help="full four-condition alignment comparison")
    p.add_argument("--out", required=True, help="report/artifact directory")
    p.add_argument("--data", help="existing dataset dir (default: generate)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--mass", type=float, default=al.DEFAULT_MASS)
    p.add_argument("--skip-dnn-teacher", action="store_true")
    p.add_argument("--minibatch", type=int, default=128)
    p.add_argument("--max-epochs", type=int, default=20)
    p.add_argument("--patience", type=int, default=1)
    p.set_defaults(func=cmd_ablation)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except DistilkitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
