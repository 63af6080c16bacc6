"""Command-line entry point.

Subcommands cover each pipeline stage (preprocess, make-corpus, make-clips,
train-generator, embed, train-seg, predict, eval, stats) plus ``run``, which
executes the full feature-matrix experiment from a config file. Heavy
imports happen inside the handlers so ``--threads`` can pin the BLAS thread
pools before numpy loads.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, AudiosegError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _pin_threads(n: int) -> None:
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(var, str(n))


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="global seed (default 0)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="BLAS thread budget (default 1)")
    common.add_argument("--config", type=str, default=argparse.SUPPRESS,
                        help="config file (used by 'run')")

    parser = _Parser(prog="audioseg", description=__doc__.splitlines()[0], parents=[common])
    parser.set_defaults(seed=0, threads=1, config=None)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add_parser(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add_parser("preprocess", help="WAV directory -> spectrogram TNSR files")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--mode", choices=["fit", "chunk"], default="fit",
                   help="fit: pad/truncate each file to 1 s; chunk: emit every full 1 s chunk")

    p = add_parser("make-corpus", help="generate a synthetic show corpus")
    p.add_argument("--shows", type=int, required=True)
    p.add_argument("--topics", type=int, required=True)
    p.add_argument("--duration", type=float, default=120.0, help="target show seconds")
    p.add_argument("--audio-informative", action="store_true")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--fragment-seconds", type=float, nargs=2, default=(8.0, 16.0))
    p.add_argument("--intro-prob", type=float, default=0.45,
                   help="fraction of fragment openings marked by a reserved intro word")
    p.add_argument("--out", dest="out_dir", required=True)

    p = add_parser("make-clips", help="generate a labeled clip dataset for a generator task")
    p.add_argument("--task", choices=["sec", "fpc", "wc"], required=True)
    p.add_argument("--classes", type=int, default=8, help="sec: number of event classes")
    p.add_argument("--clips-per-class", type=int, default=12)
    p.add_argument("--clip-seconds", type=float, default=3.0)
    p.add_argument("--fragments", type=int, default=4, help="fpc: number of long fragments")
    p.add_argument("--fragment-seconds", type=float, default=120.0)
    p.add_argument("--jingles", type=int, default=4)
    p.add_argument("--words", type=int, default=20, help="wc: number of distinct words")
    p.add_argument("--samples-per-word", type=int, default=4)
    p.add_argument("--out", dest="out_dir", required=True)

    p = add_parser("train-generator", help="train an embedding generator from a clip manifest")
    p.add_argument("--task", choices=["sec", "fpc", "wc"], required=True)
    p.add_argument("--data", required=True, help="clip manifest (from make-clips or hand-written)")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--early-stop-train-acc", type=float, default=None)
    p.add_argument("--early-stop-val-acc", type=float, default=None)

    p = add_parser("embed", help="emit 30-d embeddings for WAV or TNSR spectrogram inputs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)

    p = add_parser("train-seg", help="train a boundary segmenter on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--features", required=True, help="feature tag, e.g. txt, txt+sec, all")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--generator", action="append", default=[], metavar="COMP=CKPT",
                   help="generator checkpoint per audio component (repeatable)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--bptt-window", type=int, default=256)
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.add_argument("--hidden", type=int, nargs="+", default=[32, 64, 128])
    p.add_argument("--lr", type=float, nargs="+", default=[1e-3, 1e-4])
    p.add_argument("--tau", type=float, nargs="+", default=[0.3, 0.5, 0.7])
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--word-table", type=str, default=None)

    p = add_parser("predict", help="per-token boundary probabilities for one show")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--show", required=True, help="show directory (show.wav + tokens.jsonl)")
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--generator", action="append", default=[], metavar="COMP=CKPT")
    p.add_argument("--word-table", type=str, default=None)

    p = add_parser("eval", help="WinPR@k evaluation of prediction files against a corpus")
    p.add_argument("--pred", nargs="+", required=True, help="pred.jsonl files, one per show")
    p.add_argument("--ref", required=True, help="corpus directory or manifest")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--method", default="METHOD", help="method label for the TSV rows")
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--figures", action="store_true", help="render figures next to the TSV")

    p = add_parser("stats", help="significance tests over a results.tsv")
    p.add_argument("--results", required=True)
    p.add_argument("--baseline", default="TXT")
    p.add_argument("--alpha", type=float, nargs="+", default=[0.02, 0.01])
    p.add_argument("--out", dest="out_path", required=True)

    add_parser("run", help="full experiment from --config")
    return parser


# ---- handlers -----------------------------------------------------------------


def _cmd_preprocess(args) -> int:
    from .dsp import fit_to_one_second, chunk_clip, ingest_wav, mel_spectrogram
    from .tnsr import write_tnsr

    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    wavs = sorted(in_dir.glob("*.wav"))
    if not wavs:
        raise AudiosegError(f"no .wav files in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for path in wavs:
        w = ingest_wav(path)
        if args.mode == "fit":
            clips = [fit_to_one_second(w)]
        else:
            clips = chunk_clip(w, 1.0)
        for i, clip in enumerate(clips):
            name = path.stem if args.mode == "fit" else f"{path.stem}_{i:03d}"
            write_tnsr(out_dir / f"{name}.tnsr", mel_spectrogram(clip).values)
            count += 1
    print(f"wrote {count} spectrograms to {out_dir}")
    return EXIT_OK


def _cmd_make_corpus(args) -> int:
    from .corpus import make_benchmark

    manifest = make_benchmark(
        n_shows=args.shows,
        topics=args.topics,
        seed=args.seed,
        audio_informative=args.audio_informative,
        out_dir=args.out_dir,
        duration_seconds=args.duration,
        train_fraction=args.train_fraction,
        fragment_seconds=tuple(args.fragment_seconds),
        intro_prob=args.intro_prob,
    )
    print(f"wrote {len(manifest['shows'])} shows to {args.out_dir}")
    return EXIT_OK


def _cmd_make_clips(args) -> int:
    from .corpus import synth_event_clips, synth_jingles, synth_part_fragments, synth_word_clips
    from .dsp import write_wav
    from .util import dump_json

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"task": args.task, "seed": args.seed}
    if args.task == "sec":
        clips = synth_event_clips(args.classes, args.clips_per_class, args.clip_seconds, args.seed)
        items = []
        for i, (w, label) in enumerate(clips):
            rel = f"clip_{i:04d}.wav"
            write_wav(out / rel, w)
            items.append({"path": rel, "label": label})
        manifest["items"] = items
    elif args.task == "fpc":
        frags = synth_part_fragments(args.fragments, args.fragment_seconds, args.seed)
        jingles = synth_jingles(args.jingles, args.seed + 1)
        manifest["fragments"] = []
        manifest["jingles"] = []
        for i, w in enumerate(frags):
            rel = f"fragment_{i:03d}.wav"
            write_wav(out / rel, w)
            manifest["fragments"].append(rel)
        for i, w in enumerate(jingles):
            rel = f"jingle_{i:03d}.wav"
            write_wav(out / rel, w)
            manifest["jingles"].append(rel)
    else:
        words = [f"w{i:03d}" for i in range(args.words)]
        clips = synth_word_clips(words, args.samples_per_word, args.seed)
        items = []
        for i, (w, word) in enumerate(clips):
            rel = f"word_{i:04d}.wav"
            write_wav(out / rel, w)
            items.append({"path": rel, "word": word})
        manifest["items"] = items
    dump_json(out / "manifest.json", manifest)
    print(f"wrote {args.task} clip dataset to {out}")
    return EXIT_OK


def _load_clip_manifest(path: Path) -> dict:
    from .util import load_json

    p = path if path.is_file() else path / "manifest.json"
    if not p.exists():
        raise AudiosegError(f"no clip manifest at {path}")
    manifest = load_json(p)
    if not isinstance(manifest, dict) or "task" not in manifest:
        raise AudiosegError(f"{p}: not a clip manifest")
    manifest["_root"] = str(Path(p).parent)
    return manifest


def _cmd_train_generator(args) -> int:
    from .dsp import ingest_wav
    from .generator import (
        GeneratorTrainConfig,
        build_fpc_dataset,
        build_sec_dataset,
        build_wc_dataset,
        save_checkpoint,
        train_generator,
    )

    manifest = _load_clip_manifest(Path(args.data))
    if manifest["task"] != args.task:
        raise AudiosegError(f"manifest task {manifest['task']!r} does not match --task {args.task}")
    root = Path(manifest["_root"])
    if args.task == "sec":
        clips = [(ingest_wav(root / item["path"]), item["label"]) for item in manifest["items"]]
        ds = build_sec_dataset(clips)
    elif args.task == "fpc":
        frags = [ingest_wav(root / rel) for rel in manifest["fragments"]]
        jingles = [ingest_wav(root / rel) for rel in manifest["jingles"]]
        ds = build_fpc_dataset(frags, jingles, seed=args.seed)
    else:
        clips = [(ingest_wav(root / item["path"]), item["word"]) for item in manifest["items"]]
        ds = build_wc_dataset(clips)
    cfg = GeneratorTrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        early_stop_train_acc=args.early_stop_train_acc,
        early_stop_val_acc=args.early_stop_val_acc,
    )
    model, log = train_generator(ds, cfg)
    save_checkpoint(model, args.out_dir, extra={"training_log": log})
    print(
        f"trained {args.task} generator: {len(log)} epochs, "
        f"val accuracy {model.metadata['val_accuracy']:.3f} -> {args.out_dir}"
    )
    return EXIT_OK


def _cmd_embed(args) -> int:
    from .dsp import MelSpectrogram, fit_to_one_second, ingest_wav, mel_spectrogram
    from .generator import embed, load_checkpoint
    from .tnsr import read_tnsr, write_tnsr

    model = load_checkpoint(args.ckpt)
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    inputs = sorted(list(in_dir.glob("*.wav")) + list(in_dir.glob("*.tnsr")))
    if not inputs:
        raise AudiosegError(f"no .wav or .tnsr inputs in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in inputs:
        if path.suffix == ".wav":
            spec = mel_spectrogram(fit_to_one_second(ingest_wav(path)))
        else:
            spec = MelSpectrogram(values=read_tnsr(path))
        vec = embed(model, spec)
        write_tnsr(out_dir / f"{path.stem}.tnsr", vec.values)
    print(f"wrote {len(inputs)} embeddings to {out_dir}")
    return EXIT_OK


def _parse_generator_args(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise AudiosegError(f"--generator expects COMP=CKPT, got {pair!r}")
        comp, path = pair.split("=", 1)
        out[comp.upper()] = path
    return out


def _cmd_train_seg(args) -> int:
    from .corpus import load_manifest, load_manifest_show, manifest_shows
    from .experiment import _split_shows
    from .generator import load_checkpoint
    from .segmenter import (
        HPGrid,
        SegTrainConfig,
        WordTable,
        assemble_features,
        parse_feature_tag,
        save_segmenter,
        train_segmenter,
    )

    components = parse_feature_tag(args.features)
    tag = "+".join(components)
    gen_paths = _parse_generator_args(args.generator)
    generators = {}
    for comp in components:
        if comp == "TXT":
            continue
        if comp not in gen_paths:
            raise AudiosegError(f"feature {comp} needs --generator {comp}=<ckpt>")
        generators[comp] = load_checkpoint(gen_paths[comp])
    manifest = load_manifest(args.corpus)
    train_entries, val_entries, _ = _split_shows(manifest, args.val_fraction)
    word_table = WordTable.load(args.word_table) if args.word_table else None

    def data_for(entries):
        data = []
        for e in entries:
            show = load_manifest_show(manifest, e)
            feats = assemble_features(show, generators, components, word_table=word_table)
            data.append((feats, show.labels))
        return data

    grid = HPGrid(
        hidden_sizes=tuple(args.hidden),
        learning_rates=tuple(args.lr),
        thresholds=tuple(args.tau),
    )
    model, search_log = train_segmenter(
        data_for(train_entries),
        data_for(val_entries),
        grid,
        SegTrainConfig(epochs=args.epochs, bptt_window=args.bptt_window),
        tag,
        seed=args.seed,
        eval_k=args.k,
    )
    save_segmenter(model, args.out_dir, extra={"generators": gen_paths, "search_log": search_log})
    print(
        f"trained segmenter [{tag}]: hidden={model.hidden} tau={model.tau} "
        f"val WinPR@{args.k} F1 {model.metadata['val_f1']:.3f} -> {args.out_dir}"
    )
    return EXIT_OK


def _cmd_predict(args) -> int:
    from .corpus import load_show
    from .generator import load_checkpoint
    from .segmenter import WordTable, assemble_features, load_segmenter, parse_feature_tag, predict

    model = load_segmenter(args.ckpt)
    components = parse_feature_tag(model.feature_tag)
    gen_paths = dict(model.metadata.get("generators", {}))
    from .util import load_json

    meta = load_json(Path(args.ckpt) / "metadata.json")
    gen_paths.update(meta.get("generators", {}))
    gen_paths.update(_parse_generator_args(args.generator))
    generators = {}
    for comp in components:
        if comp == "TXT":
            continue
        if comp not in gen_paths:
            raise AudiosegError(f"feature {comp} needs --generator {comp}=<ckpt>")
        generators[comp] = load_checkpoint(gen_paths[comp])
    show = load_show(args.show)
    word_table = WordTable.load(args.word_table) if args.word_table else None
    feats = assemble_features(show, generators, components, word_table=word_table)
    pred = predict(model, feats)
    out_path = Path(args.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        for i, (p, b) in enumerate(zip(pred.probs, pred.boundaries)):
            f.write(json.dumps({"index": i, "prob": round(float(p), 6), "boundary": int(b)}, sort_keys=True) + "\n")
    print(f"wrote {len(pred.probs)} token predictions to {out_path}")
    return EXIT_OK


def _read_predictions(path: Path):
    import numpy as np

    boundaries = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                boundaries.append((int(obj["index"]), int(obj["boundary"])))
            except (KeyError, ValueError) as e:
                raise AudiosegError(f"{path}:{line_no}: malformed prediction line ({e})") from e
    boundaries.sort()
    return np.asarray([b for _, b in boundaries], dtype=np.uint8)


def _cmd_eval(args) -> int:
    from .corpus import load_manifest, load_manifest_show, manifest_shows
    from .experiment import format_results_tsv, parse_results_tsv
    from .winpr import evaluate_corpus

    manifest = load_manifest(args.ref)
    by_id = {e["id"]: e for e in manifest_shows(manifest)}
    predictions = {}
    references = {}
    for pred_path in args.pred:
        p = Path(pred_path)
        sid = p.name.split(".")[0]
        if sid not in by_id:
            raise AudiosegError(f"{p}: no show named {sid!r} in the corpus")
        predictions[sid] = _read_predictions(p)
        references[sid] = load_manifest_show(manifest, by_id[sid]).labels
    per_show, macro = evaluate_corpus(predictions, references, k=args.k)
    rows = [
        {"show_id": sid, "method": args.method, "precision": r.precision, "recall": r.recall, "f1": r.f1}
        for sid, r in per_show
    ]
    rows.append(
        {"show_id": "MACRO", "method": args.method, "precision": macro[0], "recall": macro[1], "f1": macro[2]}
    )
    out_path = Path(args.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(format_results_tsv(rows, args.seed, "eval"), encoding="utf-8")
    parse_results_tsv(out_path)
    if args.figures:
        from .report import render_figures

        report = {
            "seed": args.seed,
            "config_hash": "eval",
            "eval_k": args.k,
            "methods": {args.method: {"precision": macro[0], "recall": macro[1], "f1": macro[2]}},
        }
        render_figures(report, out_path.parent / "figures")
    print(f"macro WinPR@{args.k}: P={macro[0]:.3f} R={macro[1]:.3f} F1={macro[2]:.3f} -> {out_path}")
    return EXIT_OK


def _cmd_stats(args) -> int:
    from .experiment import parse_results_tsv, stats_from_rows
    from .util import dump_json

    rows = parse_results_tsv(args.results)
    report = stats_from_rows(rows, args.baseline.upper(), tuple(args.alpha))
    out_path = Path(args.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    dump_json(out_path, report)
    print(
        f"omnibus statistic {report['omnibus']['statistic']:.4f} "
        f"(p={report['omnibus']['p_value']:.4g}) -> {out_path}"
    )
    return EXIT_OK


def _cmd_run(args) -> int:
    from .config import validate_config
    from .experiment import run_experiment

    if not args.config:
        raise AudiosegError("run needs --config <file>")
    cfg = validate_config(args.config)
    if args.seed_overridden:
        cfg.raw["seed"] = args.seed
        cfg.seed = args.seed
    report = run_experiment(cfg)
    out = Path(cfg.out_dir)
    print(f"experiment complete: {out / 'results.tsv'}")
    for tag, s in report["methods"].items():
        impr = s.get("improvement_pct")
        suffix = f" ({impr:+.1f}%)" if impr is not None else ""
        print(f"  {tag}: P={s['precision']:.3f} R={s['recall']:.3f} F1={s['f1']:.3f}{suffix}")
    return EXIT_OK


_HANDLERS = {
    "preprocess": _cmd_preprocess,
    "make-corpus": _cmd_make_corpus,
    "make-clips": _cmd_make_clips,
    "train-generator": _cmd_train_generator,
    "embed": _cmd_embed,
    "train-seg": _cmd_train_seg,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "stats": _cmd_stats,
    "run": _cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    args.seed_overridden = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    _pin_threads(max(1, args.threads))
    try:
        return _HANDLERS[args.command](args)
    except AudiosegError as e:
        print(f"audioseg {args.command}: error: {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"audioseg {args.command}: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as e:
        print(f"audioseg {args.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
