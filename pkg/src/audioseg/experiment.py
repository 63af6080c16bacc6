"""Full experiment orchestration: corpus, generators, the feature-matrix
sweep, evaluation and significance testing, with deterministic artifacts.

Artifacts under the configured output directory:
  corpus/           generated shows (unless an existing corpus is given)
  generators/<T>/   trained generator checkpoints, cached by config hash
  segmenters/<tag>/ selected segmenter per feature configuration
  predictions/<tag>/<show>.pred.jsonl
  results.tsv       per-show and macro rows (seed and config hash embedded)
  report.json       everything machine-readable
  report.md         the method table in markdown
  figures/          bar charts rendered next to the delimited output
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import generator as gen_mod
from . import segmenter as seg_mod
from .config import GeneratorSection, RunConfig
from .errors import AudiosegError, DataError, DegenerateDataError
from .stats import ScoreTable, bonferroni_dunn
from .util import config_hash, derive_seed, dump_json, load_json
from .winpr import evaluate_corpus, improvement, winpr

RESULTS_COLUMNS = ("show_id", "method", "precision", "recall", "f1")
MACRO_ROW_ID = "MACRO"


def _stage(name: str):
    class _StageContext:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, AudiosegError):
                exc.args = (f"stage '{name}' failed: {exc}",)
            return False

    return _StageContext()


# ---- corpus stage ---------------------------------------------------------------


def _corpus_stage(cfg: RunConfig, out: Path) -> dict:
    c = cfg.corpus
    if c.path:
        return corpus_mod.load_manifest(c.path)
    corpus_dir = out / "corpus"
    seed = derive_seed(cfg.seed, "corpus")
    wanted = {
        "n_shows": c.shows,
        "n_topics": c.topics,
        "duration_seconds": c.duration_seconds,
        "audio_informative": c.audio_informative,
        "train_fraction": c.train_fraction,
        "fragment_seconds": list(c.fragment_seconds),
        "word_seconds": list(c.word_seconds),
        "words_per_topic": c.words_per_topic,
        "shared_words": c.shared_words,
        "intro_prob": c.intro_prob,
        "seed": seed,
    }
    manifest_path = corpus_dir / "manifest.json"
    if manifest_path.exists():
        existing = corpus_mod.load_manifest(corpus_dir)
        if existing.get("config_hash") == config_hash(wanted):
            return existing
    corpus_mod.make_benchmark(
        n_shows=c.shows,
        topics=c.topics,
        seed=seed,
        audio_informative=c.audio_informative,
        out_dir=corpus_dir,
        duration_seconds=c.duration_seconds,
        train_fraction=c.train_fraction,
        fragment_seconds=c.fragment_seconds,
        word_seconds=c.word_seconds,
        words_per_topic=c.words_per_topic,
        shared_words=c.shared_words,
        intro_prob=c.intro_prob,
    )
    return corpus_mod.load_manifest(corpus_dir)


# ---- generator stage ---------------------------------------------------------------


def _generator_dataset(comp: str, sec: GeneratorSection, seed: int) -> gen_mod.LabeledClipDataset:
    if comp == "SEC":
        clips = corpus_mod.synth_event_clips(sec.classes, sec.clips_per_class, sec.clip_seconds, seed)
        return gen_mod.build_sec_dataset(clips)
    if comp == "FPC":
        frags = corpus_mod.synth_part_fragments(sec.fragments, sec.fragment_seconds, seed)
        jingles = corpus_mod.synth_jingles(sec.jingles, derive_seed(seed, "jingles"))
        return gen_mod.build_fpc_dataset(frags, jingles, seed=derive_seed(seed, "middle"))
    if comp == "WC":
        words = [f"w{i:03d}" for i in range(sec.words)]
        clips = corpus_mod.synth_word_clips(words, sec.samples_per_word, seed)
        return gen_mod.build_wc_dataset(clips)
    raise DataError(f"unknown generator task {comp}")


def _train_config(comp: str, sec: GeneratorSection, seed: int) -> dict:
    return {
        "task": comp,
        "data": {
            "classes": sec.classes,
            "clips_per_class": sec.clips_per_class,
            "clip_seconds": sec.clip_seconds,
            "fragments": sec.fragments,
            "fragment_seconds": sec.fragment_seconds,
            "jingles": sec.jingles,
            "words": sec.words,
            "samples_per_word": sec.samples_per_word,
        },
        "epochs": sec.epochs,
        "batch_size": sec.batch_size,
        "lr": sec.lr,
        "early_stop_train_acc": sec.early_stop_train_acc,
        "early_stop_val_acc": sec.early_stop_val_acc,
        "seed": seed,
    }


def _generator_stage(cfg: RunConfig, out: Path, components: list[str]) -> dict[str, gen_mod.GeneratorModel]:
    models: dict[str, gen_mod.GeneratorModel] = {}
    for comp in components:
        sec = cfg.generators[comp]
        if sec.checkpoint:
            models[comp] = gen_mod.load_checkpoint(sec.checkpoint)
            continue
        seed = derive_seed(cfg.seed, "generator", comp)
        train_cfg = _train_config(comp, sec, seed)
        ckpt_dir = out / "generators" / comp
        meta_path = ckpt_dir / "metadata.json"
        if meta_path.exists():
            meta = load_json(meta_path)
            if meta.get("train_config_hash") == config_hash(train_cfg):
                models[comp] = gen_mod.load_checkpoint(ckpt_dir)
                continue
        ds = _generator_dataset(comp, sec, derive_seed(seed, "data"))
        gcfg = gen_mod.GeneratorTrainConfig(
            epochs=sec.epochs,
            batch_size=sec.batch_size,
            lr=sec.lr,
            seed=seed,
            early_stop_train_acc=sec.early_stop_train_acc,
            early_stop_val_acc=sec.early_stop_val_acc,
        )
        model, _log = gen_mod.train_generator(ds, gcfg)
        gen_mod.save_checkpoint(model, ckpt_dir, extra={"train_config_hash": config_hash(train_cfg)})
        models[comp] = model
    return models


# ---- feature stage -----------------------------------------------------------------


def _split_shows(manifest: dict, val_fraction: float) -> tuple[list[dict], list[dict], list[dict]]:
    train_all = corpus_mod.manifest_shows(manifest, "train")
    test = corpus_mod.manifest_shows(manifest, "test")
    if not train_all:
        raise DataError("corpus has no training shows")
    if not test:
        raise DataError("corpus has no test shows")
    n_val = max(1, int(round(val_fraction * len(train_all)))) if len(train_all) > 1 else 0
    if n_val >= len(train_all):
        n_val = len(train_all) - 1
    train = train_all[: len(train_all) - n_val]
    val = train_all[len(train_all) - n_val :]
    if not val:
        val = train
    return train, val, test


def _feature_blocks(
    shows: dict[str, corpus_mod.Show],
    components: set[str],
    generators: dict[str, gen_mod.GeneratorModel],
    word_table,
) -> dict[str, dict[str, np.ndarray]]:
    """Per-component blocks per show, assembled once and reused across tags."""
    blocks: dict[str, dict[str, np.ndarray]] = {}
    for comp in sorted(components):
        per_show: dict[str, np.ndarray] = {}
        for sid, show in shows.items():
            per_show[sid] = seg_mod.assemble_features(
                show,
                generators if comp != "TXT" else {},
                (comp,),
                word_table=word_table if comp == "TXT" else None,
            )
        blocks[comp] = per_show
    return blocks


def _concat_features(blocks: dict[str, dict[str, np.ndarray]], components: tuple[str, ...], sid: str) -> np.ndarray:
    return np.concatenate([blocks[c][sid] for c in components], axis=1)


# ---- results writing -----------------------------------------------------------------


def format_results_tsv(rows: list[dict], seed: int, cfg_hash: str) -> str:
    lines = [f"# seed={seed} config={cfg_hash}", "\t".join(RESULTS_COLUMNS)]
    for row in rows:
        lines.append(
            "\t".join(
                [
                    row["show_id"],
                    row["method"],
                    f"{row['precision']:.6f}",
                    f"{row['recall']:.6f}",
                    f"{row['f1']:.6f}",
                ]
            )
        )
    return "\n".join(lines) + "\n"


def parse_results_tsv(path: str | Path) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8")
    rows = []
    header = None
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if header is None:
            if tuple(fields) != RESULTS_COLUMNS:
                raise DataError(f"{path}:{line_no}: unexpected columns {fields}")
            header = fields
            continue
        if len(fields) != len(RESULTS_COLUMNS):
            raise DataError(f"{path}:{line_no}: expected {len(RESULTS_COLUMNS)} fields")
        try:
            rows.append(
                {
                    "show_id": fields[0],
                    "method": fields[1],
                    "precision": float(fields[2]),
                    "recall": float(fields[3]),
                    "f1": float(fields[4]),
                }
            )
        except ValueError as e:
            raise DataError(f"{path}:{line_no}: malformed number ({e})") from e
    if header is None:
        raise DataError(f"{path}: missing header")
    return rows


def stats_from_rows(rows: list[dict], baseline: str, alpha_levels: tuple[float, ...]) -> dict:
    """Omnibus + post-hoc report from per-show F1 rows (macro rows excluded)."""
    per_show = [r for r in rows if r["show_id"] != MACRO_ROW_ID]
    methods = sorted({r["method"] for r in per_show})
    blocks = sorted({r["show_id"] for r in per_show})
    if len(methods) < 2:
        raise DataError("need at least two methods for significance testing")
    cell = {(r["show_id"], r["method"]): r["f1"] for r in per_show}
    missing = [(b, m) for b in blocks for m in methods if (b, m) not in cell]
    if missing:
        raise DataError(f"missing result cells: {missing[:3]}...")
    scores = np.array([[cell[(b, m)] for m in methods] for b in blocks])
    table = ScoreTable(methods=methods, blocks=blocks, scores=scores)
    report = bonferroni_dunn(table, baseline=baseline, alpha_levels=alpha_levels)
    return {
        "omnibus": {
            "statistic": report.omnibus_statistic,
            "p_value": report.omnibus_p,
            "test": "friedman-aligned-ranks",
        },
        "baseline": baseline,
        "alpha_levels": list(alpha_levels),
        "methods": {
            row.method: {
                "avg_rank": row.avg_rank,
                "z": row.z,
                "p_raw": row.p_raw,
                "p_adjusted": row.p_adjusted,
                "significant_at": row.significant_at,
            }
            for row in report.rows
        },
    }


# ---- the experiment --------------------------------------------------------------------


def run_experiment(cfg: RunConfig) -> dict:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = cfg.hash()

    with _stage("corpus"):
        manifest = _corpus_stage(cfg, out)
        train_entries, val_entries, test_entries = _split_shows(manifest, cfg.segmenter.val_fraction)
        shows = {
            e["id"]: corpus_mod.load_manifest_show(manifest, e)
            for e in train_entries + val_entries + test_entries
        }

    feature_sets = [seg_mod.parse_feature_tag(tag) for tag in cfg.features]
    audio_components = sorted({c for comps in feature_sets for c in comps if c != "TXT"})

    with _stage("generators"):
        generators = _generator_stage(cfg, out, audio_components)

    with _stage("features"):
        word_table = seg_mod.WordTable.load(cfg.word_table) if cfg.word_table else None
        all_components = {c for comps in feature_sets for c in comps}
        blocks = _feature_blocks(shows, all_components, generators, word_table)

    results_rows: list[dict] = []
    method_summaries: dict[str, dict] = {}
    for tag, components in zip(cfg.features, feature_sets):
        with _stage(f"segmenter[{tag}]"):
            train_data = [
                (_concat_features(blocks, components, e["id"]), shows[e["id"]].labels)
                for e in train_entries
            ]
            val_data = [
                (_concat_features(blocks, components, e["id"]), shows[e["id"]].labels)
                for e in val_entries
            ]
            grid = seg_mod.HPGrid(
                hidden_sizes=cfg.segmenter.hidden_sizes,
                learning_rates=cfg.segmenter.learning_rates,
                thresholds=cfg.segmenter.thresholds,
            )
            seg_cfg = seg_mod.SegTrainConfig(
                epochs=cfg.segmenter.epochs, bptt_window=cfg.segmenter.bptt_window
            )
            model, search_log = seg_mod.train_segmenter(
                train_data,
                val_data,
                grid,
                seg_cfg,
                tag,
                seed=derive_seed(cfg.seed, "segmenter", tag),
                eval_k=cfg.eval.k,
            )
            seg_mod.save_segmenter(
                model,
                out / "segmenters" / tag.replace("+", "_"),
                extra={"config_hash": cfg_hash, "generators": {c: str(out / "generators" / c) for c in components if c != "TXT"}},
            )

        with _stage(f"predict[{tag}]"):
            predictions: dict[str, np.ndarray] = {}
            pred_dir = out / "predictions" / tag.replace("+", "_")
            pred_dir.mkdir(parents=True, exist_ok=True)
            for e in test_entries:
                sid = e["id"]
                pred = seg_mod.predict(model, _concat_features(blocks, components, sid))
                predictions[sid] = pred.boundaries
                with open(pred_dir / f"{sid}.pred.jsonl", "w", encoding="utf-8") as f:
                    for i, (p, b) in enumerate(zip(pred.probs, pred.boundaries)):
                        f.write(
                            json.dumps(
                                {"index": i, "prob": round(float(p), 6), "boundary": int(b)},
                                sort_keys=True,
                            )
                            + "\n"
                        )

        with _stage(f"eval[{tag}]"):
            references = {e["id"]: shows[e["id"]].labels for e in test_entries}
            per_show, macro = evaluate_corpus(predictions, references, k=cfg.eval.k)
            for sid, res in per_show:
                results_rows.append(
                    {
                        "show_id": sid,
                        "method": tag,
                        "precision": res.precision,
                        "recall": res.recall,
                        "f1": res.f1,
                    }
                )
            method_summaries[tag] = {
                "precision": macro[0],
                "recall": macro[1],
                "f1": macro[2],
                "hyperparameters": {
                    "hidden": model.hidden,
                    "lr": model.metadata.get("lr"),
                    "tau": model.tau,
                },
                "val_f1": model.metadata.get("val_f1"),
                "search_log": search_log,
            }

    for tag in cfg.features:
        s = method_summaries[tag]
        results_rows.append(
            {
                "show_id": MACRO_ROW_ID,
                "method": tag,
                "precision": s["precision"],
                "recall": s["recall"],
                "f1": s["f1"],
            }
        )

    with _stage("stats"):
        baseline = cfg.stats.baseline
        stats_section = None
        stats_note = None
        if baseline in method_summaries and len(cfg.features) >= 2:
            try:
                stats_section = stats_from_rows(results_rows, baseline, cfg.stats.alpha_levels)
            except DegenerateDataError as e:
                stats_note = str(e)
        elif baseline not in method_summaries:
            stats_note = f"baseline {baseline} not among the evaluated methods"
        else:
            stats_note = "only one method evaluated"
        base_f1 = method_summaries.get(baseline, {}).get("f1")
        for tag in cfg.features:
            if base_f1 and tag != baseline:
                method_summaries[tag]["improvement_pct"] = improvement(base_f1, method_summaries[tag]["f1"])
            else:
                method_summaries[tag]["improvement_pct"] = None

    report = {
        "seed": cfg.seed,
        "config_hash": cfg_hash,
        "config": cfg.raw,
        "corpus": {
            "seed": manifest["seed"],
            "config_hash": manifest.get("config_hash"),
            "n_train": len(train_entries),
            "n_val": len(val_entries),
            "n_test": len(test_entries),
        },
        "eval_k": cfg.eval.k,
        "methods": {tag: method_summaries[tag] for tag in cfg.features},
        "stats": stats_section,
        "stats_note": stats_note,
        "per_show": [r for r in results_rows if r["show_id"] != MACRO_ROW_ID],
    }

    with _stage("report"):
        tsv_text = format_results_tsv(results_rows, cfg.seed, cfg_hash)
        (out / "results.tsv").write_text(tsv_text, encoding="utf-8")
        parse_results_tsv(out / "results.tsv")  # schema re-validated on write
        dump_json(out / "report.json", report)
        from .report import render_markdown

        (out / "report.md").write_text(render_markdown(report), encoding="utf-8")
        if cfg.figures:
            from .report import render_figures

            render_figures(report, out / "figures")
    return report
