"""Run configuration: a strict JSON document with nested sections.

Unknown keys are errors (no silent typos); every violation is reported with
its key path. Defaults are filled for optional sections so a minimal config
only needs a seed, an output directory, corpus parameters and the feature
list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .segmenter import parse_feature_tag
from .util import config_hash, load_json


@dataclass
class CorpusSection:
    path: str | None = None
    shows: int = 20
    topics: int = 8
    duration_seconds: float = 120.0
    audio_informative: bool = True
    train_fraction: float = 0.8
    fragment_seconds: tuple[float, float] = (8.0, 16.0)
    word_seconds: tuple[float, float] = (0.25, 0.75)
    words_per_topic: int = 30
    shared_words: int = 20
    intro_prob: float = 0.45


@dataclass
class GeneratorSection:
    checkpoint: str | None = None
    # training-data recipe knobs (used when no checkpoint is given)
    classes: int = 8
    clips_per_class: int = 12
    clip_seconds: float = 3.0
    fragments: int = 4
    fragment_seconds: float = 120.0
    jingles: int = 4
    words: int = 20
    samples_per_word: int = 4
    # optimizer knobs
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    early_stop_train_acc: float | None = 0.97
    early_stop_val_acc: float | None = None


@dataclass
class SegmenterSection:
    epochs: int = 30
    bptt_window: int = 256
    val_fraction: float = 0.25
    hidden_sizes: tuple[int, ...] = (32, 64, 128)
    learning_rates: tuple[float, ...] = (1e-3, 1e-4)
    thresholds: tuple[float, ...] = (0.3, 0.5, 0.7)


@dataclass
class EvalSection:
    k: int = 10


@dataclass
class StatsSection:
    baseline: str = "TXT"
    alpha_levels: tuple[float, ...] = (0.02, 0.01)


@dataclass
class RunConfig:
    seed: int
    out_dir: str
    features: list[str]
    corpus: CorpusSection = field(default_factory=CorpusSection)
    generators: dict[str, GeneratorSection] = field(default_factory=dict)
    segmenter: SegmenterSection = field(default_factory=SegmenterSection)
    eval: EvalSection = field(default_factory=EvalSection)
    stats: StatsSection = field(default_factory=StatsSection)
    threads: int = 1
    figures: bool = True
    word_table: str | None = None
    raw: dict = field(default_factory=dict, repr=False)

    def hash(self) -> str:
        return config_hash(self.raw)


class _Checker:
    def __init__(self):
        self.errors: list[str] = []

    def fail(self, path: str, message: str):
        self.errors.append(f"{path}: {message}")

    def expect_mapping(self, value, path: str) -> dict:
        if not isinstance(value, dict):
            self.fail(path, f"expected an object, got {type(value).__name__}")
            return {}
        return value

    def known_keys(self, value: dict, path: str, allowed: set[str]):
        for key in value:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else key, "unknown key")

    def get_int(self, obj: dict, key: str, path: str, default, minimum=None):
        if key not in obj:
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"{path}{key}", f"expected an integer, got {v!r}")
            return default
        if minimum is not None and v < minimum:
            self.fail(f"{path}{key}", f"must be >= {minimum}, got {v}")
            return default
        return v

    def get_number(self, obj: dict, key: str, path: str, default, minimum=None, maximum=None,
                   exclusive=False):
        if key not in obj:
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(f"{path}{key}", f"expected a number, got {v!r}")
            return default
        if minimum is not None and (v <= minimum if exclusive else v < minimum):
            self.fail(f"{path}{key}", f"must be {'>' if exclusive else '>='} {minimum}, got {v}")
            return default
        if maximum is not None and (v >= maximum if exclusive else v > maximum):
            self.fail(f"{path}{key}", f"must be {'<' if exclusive else '<='} {maximum}, got {v}")
            return default
        return float(v)

    def get_bool(self, obj: dict, key: str, path: str, default):
        if key not in obj:
            return default
        v = obj[key]
        if not isinstance(v, bool):
            self.fail(f"{path}{key}", f"expected true/false, got {v!r}")
            return default
        return v

    def get_str(self, obj: dict, key: str, path: str, default):
        if key not in obj:
            return default
        v = obj[key]
        if not isinstance(v, str) or not v:
            self.fail(f"{path}{key}", f"expected a non-empty string, got {v!r}")
            return default
        return v

    def get_pair(self, obj: dict, key: str, path: str, default, minimum=0.0):
        if key not in obj:
            return default
        v = obj[key]
        if (
            not isinstance(v, (list, tuple))
            or len(v) != 2
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v)
        ):
            self.fail(f"{path}{key}", f"expected [min, max], got {v!r}")
            return default
        lo, hi = float(v[0]), float(v[1])
        if lo < minimum or hi < lo:
            self.fail(f"{path}{key}", f"expected {minimum} <= min <= max, got {v!r}")
            return default
        return (lo, hi)


_CORPUS_KEYS = {
    "path", "shows", "topics", "duration_seconds", "audio_informative", "train_fraction",
    "fragment_seconds", "word_seconds", "words_per_topic", "shared_words", "intro_prob",
}
_GENERATOR_KEYS = {
    "checkpoint", "classes", "clips_per_class", "clip_seconds", "fragments",
    "fragment_seconds", "jingles", "words", "samples_per_word",
    "epochs", "batch_size", "lr", "early_stop_train_acc", "early_stop_val_acc",
}
_SEGMENTER_KEYS = {
    "epochs", "bptt_window", "val_fraction", "hidden_sizes", "learning_rates", "thresholds",
}
_TOP_KEYS = {
    "seed", "out_dir", "features", "corpus", "generators", "segmenter", "eval", "stats",
    "threads", "figures", "word_table",
}


def _parse_corpus(ck: _Checker, obj: dict) -> CorpusSection:
    ck.known_keys(obj, "corpus", _CORPUS_KEYS)
    d = CorpusSection()
    return CorpusSection(
        path=ck.get_str(obj, "path", "corpus.", d.path),
        shows=ck.get_int(obj, "shows", "corpus.", d.shows, minimum=1),
        topics=ck.get_int(obj, "topics", "corpus.", d.topics, minimum=2),
        duration_seconds=ck.get_number(obj, "duration_seconds", "corpus.", d.duration_seconds, minimum=0.0, exclusive=True),
        audio_informative=ck.get_bool(obj, "audio_informative", "corpus.", d.audio_informative),
        train_fraction=ck.get_number(obj, "train_fraction", "corpus.", d.train_fraction, minimum=0.0, maximum=1.0, exclusive=True),
        fragment_seconds=ck.get_pair(obj, "fragment_seconds", "corpus.", d.fragment_seconds, minimum=0.5),
        word_seconds=ck.get_pair(obj, "word_seconds", "corpus.", d.word_seconds, minimum=0.05),
        words_per_topic=ck.get_int(obj, "words_per_topic", "corpus.", d.words_per_topic, minimum=1),
        shared_words=ck.get_int(obj, "shared_words", "corpus.", d.shared_words, minimum=0),
        intro_prob=ck.get_number(obj, "intro_prob", "corpus.", d.intro_prob, minimum=0.0, maximum=1.0),
    )


def _parse_generator(ck: _Checker, obj: dict, path: str) -> GeneratorSection:
    ck.known_keys(obj, path, _GENERATOR_KEYS)
    p = path + "."
    d = GeneratorSection()
    early_train = obj.get("early_stop_train_acc", d.early_stop_train_acc)
    if early_train is not None:
        early_train = ck.get_number(obj, "early_stop_train_acc", p, d.early_stop_train_acc, minimum=0.0, maximum=1.0)
    early_val = obj.get("early_stop_val_acc", d.early_stop_val_acc)
    if early_val is not None:
        early_val = ck.get_number(obj, "early_stop_val_acc", p, d.early_stop_val_acc, minimum=0.0, maximum=1.0)
    return GeneratorSection(
        checkpoint=ck.get_str(obj, "checkpoint", p, d.checkpoint),
        classes=ck.get_int(obj, "classes", p, d.classes, minimum=2),
        clips_per_class=ck.get_int(obj, "clips_per_class", p, d.clips_per_class, minimum=1),
        clip_seconds=ck.get_number(obj, "clip_seconds", p, d.clip_seconds, minimum=1.0),
        fragments=ck.get_int(obj, "fragments", p, d.fragments, minimum=1),
        fragment_seconds=ck.get_number(obj, "fragment_seconds", p, d.fragment_seconds, minimum=18.0),
        jingles=ck.get_int(obj, "jingles", p, d.jingles, minimum=1),
        words=ck.get_int(obj, "words", p, d.words, minimum=2),
        samples_per_word=ck.get_int(obj, "samples_per_word", p, d.samples_per_word, minimum=2),
        epochs=ck.get_int(obj, "epochs", p, d.epochs, minimum=1),
        batch_size=ck.get_int(obj, "batch_size", p, d.batch_size, minimum=1),
        lr=ck.get_number(obj, "lr", p, d.lr, minimum=0.0, exclusive=True),
        early_stop_train_acc=early_train,
        early_stop_val_acc=early_val,
    )


def _parse_grid_values(ck: _Checker, obj: dict, key: str, path: str, default, kind):
    if key not in obj:
        return default
    v = obj[key]
    if not isinstance(v, list) or not v:
        ck.fail(f"{path}{key}", f"expected a non-empty list, got {v!r}")
        return default
    out = []
    for i, item in enumerate(v):
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            ck.fail(f"{path}{key}[{i}]", f"expected a number, got {item!r}")
            return default
        if kind == "int":
            if int(item) != item or item < 1:
                ck.fail(f"{path}{key}[{i}]", f"expected a positive integer, got {item!r}")
                return default
            out.append(int(item))
        elif kind == "tau":
            if not 0.0 < item < 1.0:
                ck.fail(f"{path}{key}[{i}]", f"threshold must be inside (0,1), got {item!r}")
                return default
            out.append(float(item))
        else:
            if item <= 0:
                ck.fail(f"{path}{key}[{i}]", f"must be > 0, got {item!r}")
                return default
            out.append(float(item))
    return tuple(out)


def _parse_segmenter(ck: _Checker, obj: dict) -> SegmenterSection:
    ck.known_keys(obj, "segmenter", _SEGMENTER_KEYS)
    p = "segmenter."
    d = SegmenterSection()
    return SegmenterSection(
        epochs=ck.get_int(obj, "epochs", p, d.epochs, minimum=1),
        bptt_window=ck.get_int(obj, "bptt_window", p, d.bptt_window, minimum=1),
        val_fraction=ck.get_number(obj, "val_fraction", p, d.val_fraction, minimum=0.0, maximum=1.0, exclusive=True),
        hidden_sizes=_parse_grid_values(ck, obj, "hidden_sizes", p, d.hidden_sizes, "int"),
        learning_rates=_parse_grid_values(ck, obj, "learning_rates", p, d.learning_rates, "pos"),
        thresholds=_parse_grid_values(ck, obj, "thresholds", p, d.thresholds, "tau"),
    )


def parse_config(raw: dict) -> RunConfig:
    """Validate a parsed JSON object; raises ConfigError listing every violation."""
    ck = _Checker()
    obj = ck.expect_mapping(raw, "<root>")
    ck.known_keys(obj, "", _TOP_KEYS)

    seed = ck.get_int(obj, "seed", "", None, minimum=0)
    if "seed" not in obj:
        ck.fail("seed", "required")
    out_dir = ck.get_str(obj, "out_dir", "", None)
    if "out_dir" not in obj:
        ck.fail("out_dir", "required")

    features_raw = obj.get("features")
    features: list[str] = []
    if not isinstance(features_raw, list) or not features_raw:
        ck.fail("features", "required non-empty list of feature tags")
    else:
        seen = set()
        for i, tag in enumerate(features_raw):
            if not isinstance(tag, str):
                ck.fail(f"features[{i}]", f"expected a string tag, got {tag!r}")
                continue
            try:
                components = parse_feature_tag(tag)
            except ConfigError as e:
                ck.fail(f"features[{i}]", str(e))
                continue
            canonical = "+".join(components)
            if canonical in seen:
                ck.fail(f"features[{i}]", f"duplicate feature configuration {canonical}")
                continue
            seen.add(canonical)
            features.append(canonical)

    corpus_sec = _parse_corpus(ck, ck.expect_mapping(obj.get("corpus", {}), "corpus"))

    generators: dict[str, GeneratorSection] = {}
    gens_raw = ck.expect_mapping(obj.get("generators", {}), "generators")
    for comp, sub in gens_raw.items():
        name = comp.upper()
        if name not in ("SEC", "FPC", "WC"):
            ck.fail(f"generators.{comp}", "unknown generator task (want SEC, FPC or WC)")
            continue
        generators[name] = _parse_generator(ck, ck.expect_mapping(sub, f"generators.{comp}"), f"generators.{comp}")

    seg_sec = _parse_segmenter(ck, ck.expect_mapping(obj.get("segmenter", {}), "segmenter"))

    eval_raw = ck.expect_mapping(obj.get("eval", {}), "eval")
    ck.known_keys(eval_raw, "eval", {"k"})
    eval_sec = EvalSection(k=ck.get_int(eval_raw, "k", "eval.", 10, minimum=1))

    stats_raw = ck.expect_mapping(obj.get("stats", {}), "stats")
    ck.known_keys(stats_raw, "stats", {"baseline", "alpha_levels"})
    alpha = stats_raw.get("alpha_levels", [0.02, 0.01])
    alpha_ok: list[float] = []
    if not isinstance(alpha, list) or not alpha:
        ck.fail("stats.alpha_levels", f"expected a non-empty list, got {alpha!r}")
    else:
        for i, a in enumerate(alpha):
            if isinstance(a, bool) or not isinstance(a, (int, float)) or not 0.0 < a < 1.0:
                ck.fail(f"stats.alpha_levels[{i}]", f"expected a level inside (0,1), got {a!r}")
            else:
                alpha_ok.append(float(a))
    stats_sec = StatsSection(
        baseline=ck.get_str(stats_raw, "baseline", "stats.", "TXT").upper(),
        alpha_levels=tuple(alpha_ok) if alpha_ok else (0.02, 0.01),
    )

    threads = ck.get_int(obj, "threads", "", 1, minimum=1)
    figures = ck.get_bool(obj, "figures", "", True)
    word_table = ck.get_str(obj, "word_table", "", None)

    # audio components need a generator recipe or checkpoint
    needed = {c for tag in features for c in tag.split("+") if c != "TXT"}
    for comp in sorted(needed):
        if comp not in generators:
            ck.fail(f"generators.{comp}", f"required by feature configuration but missing")

    if ck.errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(ck.errors))
    return RunConfig(
        seed=seed,
        out_dir=out_dir,
        features=features,
        corpus=corpus_sec,
        generators=generators,
        segmenter=seg_sec,
        eval=eval_sec,
        stats=stats_sec,
        threads=threads,
        figures=figures,
        word_table=word_table,
        raw=raw,
    )


def validate_config(path: str | Path) -> RunConfig:
    """Load and validate a config file."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = load_json(p)
    except ValueError as e:
        raise ConfigError(f"{p}: not valid JSON ({e})") from e
    return parse_config(raw)
