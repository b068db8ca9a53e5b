"""Command-line entry point: ``rhythmseg <command> [--config FILE] [--set k=v ...] [--seed N]``.

Exit status is 0 on success, 2 for configuration errors, 3 for data errors and
4 for numeric failures.  Errors are reported on stderr as one line,
``error <CODE>: <detail>``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import signals
from .config import RunConfig, load_config
from .errors import ConfigurationError, ContractError, DataError, NumericError, RhythmSegError
from .explain import gradcam, write_heatmap_csv
from .gradcheck import model_gradcheck, reduced_config
from .postprocess import extract_events, write_events_csv
from .serialization import load_dataset, load_params, save_dataset
from .train import evaluate, infer_record, train

log = logging.getLogger("rhythmseg")

GRADCHECK_TOLERANCE = 1e-4


def _split(cfg: RunConfig, examples, split: str | None = None):
    split = split or cfg.eval_split
    if split == "all":
        return list(examples), []
    plan = signals.kfold(len(examples), cfg.folds, cfg.fold_seed)
    tr = [examples[i] for i in plan.train_indices(cfg.fold)]
    va = [examples[i] for i in plan.val_indices(cfg.fold)]
    return (tr, va) if split == "train" else (va, tr)


def _check_classes(cfg: RunConfig, examples):
    for ex in examples:
        if ex.num_classes != cfg.num_classes:
            raise ConfigurationError(f"dataset has {ex.num_classes} classes, config says {cfg.num_classes}")
        if len(ex.x) != cfg.input_len:
            raise ConfigurationError(f"dataset windows are {len(ex.x)} samples, config says input_len={cfg.input_len}")


def _load_checkpoint(cfg: RunConfig, path=None):
    path = Path(path or cfg.checkpoint_path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    return load_params(path)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args) -> int:
    records = signals.synth_generate(
        cfg.num_classes, cfg.synth_records, cfg.synth_fs, cfg.synth_seconds, seed=cfg.seed,
        short_fraction=cfg.synth_short_fraction)
    out = cfg.raw_dir
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        signals.write_signal_csv(rec, out / f"{rec.record_id}.csv")
        signals.write_interval_csv(signals.labels_to_intervals(rec.labels), out / f"{rec.record_id}.ann.csv")
    print(f"wrote {len(records)} records to {out}")
    return 0


def cmd_preprocess(cfg: RunConfig, args) -> int:
    raw = Path(args.input) if args.input else cfg.raw_dir
    paths = sorted(p for p in raw.glob("*.csv") if not p.name.endswith(".ann.csv"))
    if not paths:
        raise DataError(f"no signal CSVs in {raw}")
    records = []
    for p in paths:
        ann = p.with_name(p.stem + ".ann.csv")
        if not ann.exists():
            raise DataError(f"{p}: annotation file {ann.name} is missing")
        records.append(signals.load_annotated_record(p, ann))
    stride = cfg.window_stride or None
    examples = signals.build_windows(records, cfg.input_len, cfg.num_classes, stride, cfg.target_fs,
                                     cfg.highpass_cutoff, cfg.filter_order)
    if not examples:
        raise DataError("no complete windows; records are shorter than input_len")
    for ex in examples:
        if ex.labels.max() >= cfg.num_classes or ex.labels.min() < 0:
            raise DataError(f"{ex.source[0]}: class id outside [0, {cfg.num_classes})")
    cfg.dataset_path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(examples, cfg.dataset_path)
    print(f"wrote {len(examples)} windows from {len(records)} records to {cfg.dataset_path}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    examples = load_dataset(cfg.dataset_path)
    _check_classes(cfg, examples)
    tr, va = _split(cfg, examples, "train")
    mcfg = cfg.model_config()
    mcfg.validate()
    out = cfg.out_path
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(cfg.dumps())
    log.info("training on %d windows, validating on %d", len(tr), len(va))
    res = train(tr, va, mcfg, cfg.train_settings(), checkpoint_dir=out)
    if va:
        rep = evaluate(res.best_params, mcfg, va, cfg.iou_threshold, cfg.min_len, cfg.average)
        rep.write_csv(out / "val_report.csv")
    print(f"best epoch {res.best_epoch} val duration F1 {res.best_f1:.4f}; checkpoints in {out}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    examples = load_dataset(cfg.dataset_path)
    _check_classes(cfg, examples)
    subset, _ = _split(cfg, examples)
    if not subset:
        raise DataError(f"split {cfg.eval_split!r} is empty")
    mcfg = cfg.model_config()
    if args.oracle:
        # truth stands in for the final (already postprocessed) prediction
        rep = evaluate(None, mcfg, subset, cfg.iou_threshold, None, cfg.average,
                       predictions=[ex.labels for ex in subset])
    else:
        params = _load_checkpoint(cfg)
        rep = evaluate(params, mcfg, subset, cfg.iou_threshold, cfg.min_len, cfg.average)
    path = Path(args.output) if args.output else cfg.out_path / "report.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    rep.write_csv(path)
    print(rep.table())
    return 0


def cmd_infer(cfg: RunConfig, args) -> int:
    rec = signals.read_signal_csv(args.input)
    rec = signals.preprocess(rec, cfg.target_fs, cfg.highpass_cutoff, cfg.filter_order)
    if len(rec) < cfg.input_len:
        raise DataError(f"{args.input}: {len(rec)} samples after resampling, need at least {cfg.input_len}")
    if args.stride is not None and not 1 <= args.stride <= cfg.input_len:
        raise ConfigurationError(f"--stride must be in [1, {cfg.input_len}]")
    params = _load_checkpoint(cfg)
    _, events = infer_record(rec.samples, params, cfg.model_config(), args.stride, cfg.min_len)
    out = Path(args.output) if args.output else cfg.out_path / f"{rec.record_id or Path(args.input).stem}.events.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_events_csv(events, out)
    print(f"{len(events)} events at {cfg.target_fs:g} Hz written to {out}")
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    mcfg = reduced_config(num_classes=args.classes)
    results = model_gradcheck(mcfg, seed=cfg.seed, per_param=args.per_param)
    worst = max(results, key=lambda r: r.rel_error)
    print(f"checked {len(results)} coordinates over {len({r.name for r in results})} parameters")
    print(f"max relative error {worst.rel_error:.3e} ({worst.name}{list(worst.index)})")
    if worst.rel_error >= GRADCHECK_TOLERANCE:
        raise NumericError(f"max relative error {worst.rel_error:.3e} exceeds {GRADCHECK_TOLERANCE:g}")
    return 0


def cmd_gradcam(cfg: RunConfig, args) -> int:
    examples = load_dataset(cfg.dataset_path)
    _check_classes(cfg, examples)
    if not 0 <= args.index < len(examples):
        raise DataError(f"window index {args.index} outside [0, {len(examples)})")
    ex = examples[args.index]
    if args.span:
        try:
            a, b = (int(v) for v in args.span.split(":"))
        except ValueError as exc:
            raise ConfigurationError("--span must look like START:STOP") from exc
        span = (a, b)
    else:
        # longest true event of the target class, else the whole window
        own = [e for e in extract_events(ex.labels) if e.class_id == args.target_class]
        span = None if not own else max(own, key=lambda e: e.duration)[:2]
    params = _load_checkpoint(cfg)
    try:
        hm = gradcam(ex.x, params, cfg.model_config(), args.target_class, span)
    except ContractError as exc:
        raise ConfigurationError(str(exc)) from exc
    out = Path(args.output) if args.output else cfg.out_path / f"gradcam_{args.index}_{args.target_class}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_heatmap_csv(hm, out)
    print(f"heatmap for class {hm.target_class} over {list(hm.target_span)} written to {out}")
    return 0


COMMANDS = {
    "synth": (cmd_synth, "generate synthetic annotated records"),
    "preprocess": (cmd_preprocess, "resample, filter and window records into a dataset file"),
    "train": (cmd_train, "train on one fold, checkpointing every epoch"),
    "eval": (cmd_eval, "score a checkpoint on a dataset split"),
    "infer": (cmd_infer, "label a signal CSV with sliding windows"),
    "gradcheck": (cmd_gradcheck, "finite-difference gradient check on a reduced model"),
    "gradcam": (cmd_gradcam, "export a Grad-CAM heatmap for one window"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="shortcut for --set seed=N")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")

    parser = argparse.ArgumentParser(prog="rhythmseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    cmds = {name: sub.add_parser(name, parents=[common], help=text) for name, (_, text) in COMMANDS.items()}
    cmds["preprocess"].add_argument("--input", help="directory of signal CSVs (default: <data_dir>/raw)")
    cmds["eval"].add_argument("--oracle", action="store_true", help="score ground truth against itself, bypassing model and postprocessing")
    cmds["eval"].add_argument("--output", help="report CSV path")
    cmds["infer"].add_argument("--input", required=True, help="signal CSV")
    cmds["infer"].add_argument("--stride", type=int, help="window stride in samples (default: input_len)")
    cmds["infer"].add_argument("--output", help="event CSV path")
    cmds["gradcheck"].add_argument("--per-param", type=int, default=2, help="coordinates per parameter")
    cmds["gradcheck"].add_argument("--classes", type=int, default=4, help="class count of the reduced model")
    cmds["gradcam"].add_argument("--index", type=int, required=True, help="window index in the dataset")
    cmds["gradcam"].add_argument("--class", dest="target_class", type=int, required=True)
    cmds["gradcam"].add_argument("--span", help="START:STOP sample span (default: longest true event)")
    cmds["gradcam"].add_argument("--output", help="heatmap CSV path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    try:
        overrides = list(args.set) + ([f"seed = {args.seed}"] if args.seed is not None else [])
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command][0](cfg, args)
    except RhythmSegError as exc:
        print(f"error {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        print(f"error {DataError.code}: {exc}", file=sys.stderr)
        return DataError.exit_status


if __name__ == "__main__":
    sys.exit(main())
