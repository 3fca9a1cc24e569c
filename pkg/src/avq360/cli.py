"""Command-line entry points wiring the library into batch pipelines.

Every command is driven by one config file (see config.py); individual
keys can be overridden with repeated ``--set key=value`` flags, and each
override is echoed to stdout. Outputs land only under the configured
output directory and are byte-reproducible for a given config and seed.

Exit codes: 0 success, 2 validation error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import audiofe, hm, metrics, model, siti, subjective, synthetic
from .config import RunConfig, load_config
from .errors import DataError, NumericError, ValidationError
from .manifest import load_manifest, load_scores_csv, load_wav, load_y4m

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _config_from_args(args) -> RunConfig:
    cfg, applied = load_config(args.config, args.set or [])
    for line in applied:
        print(line)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg


def _require_file(path: Path, what: str) -> Path:
    if not Path(path).is_file():
        raise ValidationError(f"{what} not found: {path}")
    return Path(path)


def _manifest_entries(cfg: RunConfig):
    _require_file(cfg.manifest, "manifest")
    return load_manifest(cfg.manifest)


def _video_path(cfg: RunConfig, sequence_id: str) -> Path:
    video = cfg.media_root / f"{sequence_id}.y4m"
    if not video.is_file():
        raise DataError(f"missing video for sequence {sequence_id!r} under {cfg.media_root}")
    return video


def _media_paths(cfg: RunConfig, sequence_id: str) -> tuple[Path, Path]:
    video = cfg.media_root / f"{sequence_id}.y4m"
    audio = cfg.media_root / f"{sequence_id}.wav"
    if not video.is_file() or not audio.is_file():
        raise DataError(f"missing media for sequence {sequence_id!r} under {cfg.media_root}")
    return video, audio


def _load_split(path: Path) -> dict[str, str]:
    _require_file(path, "split file")
    assignment: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["sequence_id", "split"]:
            raise DataError(f"{path}: bad header {header}")
        for row in reader:
            if not row:
                continue
            seq, split = row[0], row[1]
            if split not in ("train", "test"):
                raise DataError(f"{path}: bad split label {split!r}")
            if seq in assignment and assignment[seq] != split:
                raise DataError(
                    f"{path}: split leakage, sequence {seq!r} assigned to both splits"
                )
            assignment[seq] = split
    if not assignment:
        raise DataError(f"{path}: empty split file")
    return assignment


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth_fixture(args) -> int:
    outdir = Path(args.out)
    sequences = synthetic.generate_corpus(outdir, seed=args.seed)
    print(f"wrote {len(sequences)} sequences under {outdir}")
    print(f"config: {outdir / 'config.txt'}")
    return EXIT_OK


def cmd_process_scores(args) -> int:
    cfg = _config_from_args(args)
    _require_file(cfg.scores, "scores file")
    records = load_scores_csv(cfg.scores)
    kept = subjective.exclude_ssq(records)
    n_flagged = len(records) - len(kept)
    if not kept:
        raise DataError("all rating records are SSQ-flagged; no scores left")
    results, filtered = subjective.screen_subjects(kept)
    rejected = [r for r in results if r.rejected]
    mos_records = subjective.compute_mos(filtered)
    out = cfg.resolved_mos_table()
    subjective.write_mos_csv(mos_records, out)
    print(f"records: {len(records)} total, {n_flagged} SSQ-excluded")
    print(f"subjects: {len(results)} screened, {len(rejected)} rejected"
          + (f" ({', '.join(r.subject_id for r in rejected)})" if rejected else ""))
    low = [m.sequence_id for m in mos_records if not m.meets_minimum()]
    if low:
        print(f"warning: {len(low)} sequence(s) below {subjective.MIN_VALID_RATINGS} valid ratings")
    print(f"mos table: {out} ({len(mos_records)} sequences)")
    return EXIT_OK


def cmd_siti(args) -> int:
    cfg = _config_from_args(args)
    entries = _manifest_entries(cfg)
    out = cfg.output_dir / "siti.csv"
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["sequence_id", "si_mean", "si_max", "ti_mean", "ti_max"])
        for entry in entries:
            seq = load_y4m(_video_path(cfg, entry.sequence_id))
            r = siti.summarize_siti(seq)
            writer.writerow(
                [entry.sequence_id, f"{r.si_mean:.6f}", f"{r.si_max:.6f}",
                 f"{r.ti_mean:.6f}", f"{r.ti_max:.6f}"]
            )
    print(f"siti table: {out} ({len(entries)} sequences)")
    return EXIT_OK


def cmd_hm_stats(args) -> int:
    cfg = _config_from_args(args)
    entries = _manifest_entries(cfg)
    rows = []
    for entry in entries:
        trace_path = cfg.hm_root / f"{entry.sequence_id}.csv"
        _require_file(trace_path, f"head-movement trace for {entry.sequence_id}")
        rows.append((entry.sequence_id, hm.hm_stats(hm.load_hm(trace_path))))
    out = cfg.output_dir / "hm_stats.csv"
    hm.write_hm_stats_csv(rows, out)
    print(f"hm stats: {out} ({len(rows)} traces)")
    return EXIT_OK


def cmd_split(args) -> int:
    cfg = _config_from_args(args)
    entries = _manifest_entries(cfg)
    n = len(entries)
    # floor for test, with a guard against float residue (10 * 0.2 -> 1.999...)
    n_test = int(np.floor(n * (1.0 - cfg.split_ratio) + 1e-9))
    if n_test < 1 or n - n_test < 1:
        raise ValidationError(
            f"split of {n} sequences at ratio {cfg.split_ratio} leaves an empty side"
        )
    rng = np.random.default_rng(cfg.split_seed)
    shuffled = rng.permutation(n)
    test_idx = set(int(i) for i in shuffled[:n_test])
    out = cfg.resolved_split_file()
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["sequence_id", "split"])
        for i, entry in enumerate(entries):
            writer.writerow([entry.sequence_id, "test" if i in test_idx else "train"])
    print(f"split: {out} ({n - n_test} train / {n_test} test)")
    return EXIT_OK


def cmd_extract_features(args) -> int:
    cfg = _config_from_args(args)
    entries = _manifest_entries(cfg)
    feat_dir = cfg.output_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    for entry in entries:
        video_path, audio_path = _media_paths(cfg, entry.sequence_id)
        feat = model.preprocess_sequence(
            load_y4m(video_path), load_wav(audio_path), cfg.model, entry.sequence_id
        )
        audiofe.write_features(feat_dir / f"{entry.sequence_id}_video.avqf", feat.video)
        audiofe.write_features(feat_dir / f"{entry.sequence_id}_audio.avqf", feat.audio)
    print(f"features: {feat_dir} ({len(entries)} sequences)")
    return EXIT_OK


def _gather_features(cfg: RunConfig, entries):
    feats = []
    for entry in entries:
        video_path, audio_path = _media_paths(cfg, entry.sequence_id)
        feats.append(
            model.preprocess_sequence(
                load_y4m(video_path), load_wav(audio_path), cfg.model, entry.sequence_id
            )
        )
    return feats


def _select_entries(cfg: RunConfig, entries, subset: str):
    """Resolve train/test/all membership from the split file (or manifest
    split column when no split file exists yet)."""
    if subset == "all":
        return entries
    split_path = cfg.resolved_split_file()
    if split_path.is_file():
        assignment = _load_split(split_path)
        unknown = [e.sequence_id for e in entries if e.sequence_id not in assignment]
        if unknown:
            raise DataError(f"split file lacks assignments for {unknown}")
        return [e for e in entries if assignment[e.sequence_id] == subset]
    labelled = [e for e in entries if e.split == subset]
    if not labelled:
        raise ValidationError(
            f"no sequences in subset {subset!r}: run the split command or "
            "set the manifest split column"
        )
    return labelled


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    entries = _manifest_entries(cfg)
    mos_path = cfg.resolved_mos_table()
    _require_file(mos_path, "MOS table (run process-scores first)")
    mos_map = subjective.read_mos_csv(mos_path)

    subset = args.on
    selected = _select_entries(cfg, entries, subset) if subset != "all" else entries
    if not selected:
        raise ValidationError("training subset is empty")
    missing_mos = [e.sequence_id for e in selected if e.sequence_id not in mos_map]
    if missing_mos:
        raise DataError(f"MOS table lacks sequences {missing_mos}")

    feats = _gather_features(cfg, selected)
    targets = np.array([mos_map[e.sequence_id].mos / 100.0 for e in selected])

    net = model.AVQAModel(cfg.model)
    result = model.train_model(net, feats, targets)
    ckpt = cfg.resolved_checkpoint()
    net.save(ckpt)
    model.write_train_log(result.history, cfg.output_dir / "train_log.csv")
    print(f"trained on {len(feats)} sequences for {len(result.history)} steps")
    if result.history:
        print(f"final batch loss: {result.final_loss:.6f}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    entries = _manifest_entries(cfg)
    ckpt = args.checkpoint or cfg.resolved_checkpoint()
    _require_file(ckpt, "checkpoint")
    mos_path = cfg.resolved_mos_table()
    _require_file(mos_path, "MOS table")
    mos_map = subjective.read_mos_csv(mos_path)

    selected = _select_entries(cfg, entries, args.on)
    if not selected:
        raise ValidationError(f"evaluation subset {args.on!r} is empty")
    missing = [e.sequence_id for e in selected if e.sequence_id not in mos_map]
    if missing:
        raise DataError(f"MOS table lacks sequences {missing}")

    net = model.AVQAModel.load(ckpt)
    feats = _gather_features(cfg, selected)
    preds = np.array([net.predict(f) for f in feats])
    mos = np.array([mos_map[e.sequence_id].mos for e in selected])
    report = metrics.evaluate_predictions(preds, mos)
    out = cfg.output_dir / "metrics.csv"
    metrics.write_report_csv(report, out)
    print(
        f"n={report.n} plcc={report.plcc:.4f} srocc={report.srocc:.4f} "
        f"krocc={report.krocc:.4f} rmse={report.rmse:.4f}"
    )
    print(f"report: {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _config_from_args(args)
    entries = _manifest_entries(cfg)
    by_id = {e.sequence_id: e for e in entries}
    if args.sequence not in by_id:
        raise ValidationError(f"sequence {args.sequence!r} not in manifest")
    ckpt = args.checkpoint or cfg.resolved_checkpoint()
    _require_file(ckpt, "checkpoint")
    net = model.AVQAModel.load(ckpt)
    video_path, audio_path = _media_paths(cfg, args.sequence)
    feat = model.preprocess_sequence(
        load_y4m(video_path), load_wav(audio_path), net.cfg, args.sequence
    )
    score = net.predict(feat)
    print(f"{args.sequence}: {score:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avq360",
        description="Audio-visual quality assessment pipelines for 360-degree video",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-fixture", help="generate the synthetic desk-scale corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=synthetic.DEFAULT_SEED)
    p.set_defaults(func=cmd_synth_fixture)

    def with_config(name, help_text):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--config", required=True, help="run config file")
        q.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        return q

    p = with_config("process-scores", "SSQ exclusion, subject screening, MOS table")
    p.set_defaults(func=cmd_process_scores)

    p = with_config("siti", "per-sequence SI/TI content statistics")
    p.set_defaults(func=cmd_siti)

    p = with_config("hm-stats", "head-movement trace summaries")
    p.set_defaults(func=cmd_hm_stats)

    p = with_config("split", "seeded train/test assignment")
    p.set_defaults(func=cmd_split)

    p = with_config("extract-features", "dump model input tensors as AVQF files")
    p.set_defaults(func=cmd_extract_features)

    p = with_config("train", "train the quality model")
    p.add_argument("--on", choices=("train", "all"), default="all",
                   help="train on the split's train side or on every sequence")
    p.set_defaults(func=cmd_train)

    p = with_config("evaluate", "logistic fit + PLCC/SROCC/KROCC/RMSE")
    p.add_argument("--on", choices=("train", "test", "all"), default="test")
    p.add_argument("--checkpoint", help="checkpoint path (defaults to config)")
    p.set_defaults(func=cmd_evaluate)

    p = with_config("predict", "score one sequence with a trained checkpoint")
    p.add_argument("--sequence", required=True, help="sequence id from the manifest")
    p.add_argument("--checkpoint", help="checkpoint path (defaults to config)")
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
