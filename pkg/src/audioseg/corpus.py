"""Synthetic topical audio with word-level transcripts and known boundaries.

Words are deterministic harmonic tone bursts: the fundamental (100-400 Hz)
is keyed by a stable hash of the word string, while the owning topic
colors the harmonics through a resonance center and a spectral tilt. A
fragment is a run of words drawn from one topic's vocabulary; shows are
Choi-style concatenations of fragments from distinct adjacent topics, with
y=1 on the first token of every non-initial fragment.

When a topic carries the boundary-cue flag its fragments open with a
chirp token (a 500->4000 Hz sweep, the jingle stand-in). The chirp's
transcript word is an ordinary vocabulary word: the cue is audible, never
visible to text features.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, Waveform, write_wav
from .errors import DataError
from .util import config_hash, derive_seed, dump_json, load_json

CHIRP_SECONDS = 0.5
CHIRP_F0 = 500.0
CHIRP_F1 = 4000.0
_N_HARMONICS = 8
_PEAK = 0.3


@dataclass
class TopicSpec:
    """Vocabulary distribution plus the tone signature of one topic.

    ``intro_words`` are reserved opener words that may appear only as a
    fragment's first transcript word (with probability ``intro_prob``), the
    text analogue of a signature opening phrase: they make a fraction of the
    boundaries visible to text features, while the chirp cue, when enabled,
    marks all of them in the audio.
    """

    topic_id: int
    words: list[str]
    base_freq: float  # resonance center in Hz
    tilt: float  # harmonic rolloff exponent
    word_probs: np.ndarray | None = None
    boundary_cue: bool = False
    duration: float = 10.0
    word_seconds: tuple[float, float] = (0.25, 0.75)
    intro_words: tuple[str, ...] = ()
    intro_prob: float = 0.0


@dataclass
class WordToken:
    word: str
    t0: float
    t1: float
    is_cue: bool = False


@dataclass
class Fragment:
    topic_id: int
    tokens: list[WordToken]
    audio: Waveform
    duration: float


@dataclass
class Show:
    tokens: list[WordToken]
    labels: np.ndarray  # uint8, one per token
    audio: Waveform
    fragment_spans: list[tuple[int, int]] = field(default_factory=list)
    show_id: str = ""

    def token_clip(self, index: int) -> Waveform:
        tok = self.tokens[index]
        a = int(round(tok.t0 * self.audio.sample_rate))
        b = int(round(tok.t1 * self.audio.sample_rate))
        return Waveform(samples=self.audio.samples[a:b].copy(), sample_rate=self.audio.sample_rate)


# ---- deterministic synthesis -------------------------------------------------


def word_hash(word: str) -> int:
    return int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "little")


def _envelope(n: int, sr: int) -> np.ndarray:
    ramp = min(int(0.01 * sr), max(1, n // 4))
    env = np.ones(n, dtype=np.float64)
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    env[:ramp] = fade
    env[n - ramp :] = fade[::-1]
    return env


def synth_word(
    word: str,
    base_freq: float,
    tilt: float,
    duration: float,
    sr: int = SAMPLE_RATE,
    detune: float = 1.0,
) -> np.ndarray:
    """Harmonic burst for one word; a pure function of its arguments."""
    f0 = (100.0 + 300.0 * ((word_hash(word) % 2**32) / 2**32)) * detune
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    out = np.zeros(n, dtype=np.float64)
    for h in range(1, _N_HARMONICS + 1):
        fk = h * f0
        if fk >= sr / 2:
            break
        resonance = math.exp(-(((fk - base_freq) / (0.5 * base_freq)) ** 2))
        amp = (h ** -tilt) * resonance
        out += amp * np.sin(2.0 * np.pi * fk * t)
    peak = np.abs(out).max()
    if peak > 0:
        out *= _PEAK / peak
    return (out * _envelope(n, sr)).astype(np.float32)


def synth_chirp(duration: float = CHIRP_SECONDS, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Linear 500->4000 Hz sweep, the audible boundary cue."""
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    phase = 2.0 * np.pi * (CHIRP_F0 * t + (CHIRP_F1 - CHIRP_F0) / (2.0 * duration) * t * t)
    out = _PEAK * np.sin(phase)
    return (out * _envelope(n, sr)).astype(np.float32)


def _draw_word(rng: np.random.Generator, topic: TopicSpec, first: bool) -> str:
    if first and topic.intro_words:
        if rng.uniform() < topic.intro_prob:
            return str(rng.choice(list(topic.intro_words)))
    return str(rng.choice(topic.words, p=topic.word_probs))


def synth_fragment(topic: TopicSpec, seed: int) -> Fragment:
    """One topical fragment; identical (topic, seed) pairs give identical audio."""
    if not topic.words:
        raise DataError(f"topic {topic.topic_id} has an empty vocabulary")
    rng = np.random.default_rng(np.random.PCG64(seed))
    sr = SAMPLE_RATE
    target = int(round(topic.duration * sr))
    lo, hi = topic.word_seconds
    tokens: list[WordToken] = []
    chunks: list[np.ndarray] = []
    cursor = 0
    if topic.boundary_cue:
        samples = synth_chirp(sr=sr)
        word = _draw_word(rng, topic, first=True)
        tokens.append(WordToken(word=word, t0=0.0, t1=len(samples) / sr, is_cue=True))
        chunks.append(samples)
        cursor = len(samples)
    while cursor < target:
        word = _draw_word(rng, topic, first=not tokens)
        dur = float(rng.uniform(lo, hi)) if hi > lo else lo
        samples = synth_word(word, topic.base_freq, topic.tilt, dur, sr=sr)
        tokens.append(WordToken(word=word, t0=cursor / sr, t1=(cursor + len(samples)) / sr))
        chunks.append(samples)
        cursor += len(samples)
    audio = Waveform(samples=np.concatenate(chunks), sample_rate=sr)
    return Fragment(topic_id=topic.topic_id, tokens=tokens, audio=audio, duration=cursor / sr)


# ---- show construction ------------------------------------------------------


def build_show(fragments: list[Fragment], target_duration: float) -> Show:
    """Concatenate fragments (whole) until the target duration is reached.

    The first token of every non-initial fragment is labeled a boundary.
    """
    if len(fragments) < 2:
        raise DataError(f"a show needs at least 2 fragments, got {len(fragments)}")
    sr = fragments[0].audio.sample_rate
    used: list[Fragment] = []
    total = 0
    target = int(round(target_duration * sr))
    for frag in fragments:
        if used and frag.topic_id == used[-1].topic_id:
            raise DataError("adjacent fragments share a topic")
        used.append(frag)
        total += len(frag.audio.samples)
        if total >= target:
            break
    if total < target and total < 0.1 * target:
        raise DataError(
            f"fragments exhausted at {total / sr:.1f}s, below 10% of the {target_duration}s target"
        )
    tokens: list[WordToken] = []
    labels: list[int] = []
    spans: list[tuple[int, int]] = []
    offset = 0
    audio_chunks = []
    for fi, frag in enumerate(used):
        start = len(tokens)
        for ti, tok in enumerate(frag.tokens):
            shift = offset / sr
            tokens.append(replace(tok, t0=tok.t0 + shift, t1=tok.t1 + shift))
            labels.append(1 if (fi > 0 and ti == 0) else 0)
        spans.append((start, len(tokens)))
        audio_chunks.append(frag.audio.samples)
        offset += len(frag.audio.samples)
    return Show(
        tokens=tokens,
        labels=np.asarray(labels, dtype=np.uint8),
        audio=Waveform(samples=np.concatenate(audio_chunks), sample_rate=sr),
        fragment_spans=spans,
    )


def default_topics(
    n_topics: int,
    boundary_cue: bool,
    words_per_topic: int = 30,
    shared_words: int = 20,
    shared_word_prob: float = 0.5,
    word_seconds: tuple[float, float] = (0.25, 0.75),
    intro_prob: float = 0.45,
    intro_words_per_topic: int = 3,
) -> list[TopicSpec]:
    """Topic specs with partially shared vocabularies and spread tone colors."""
    if n_topics < 2:
        raise DataError(f"need at least 2 topics, got {n_topics}")
    shared = [f"c{j:02d}" for j in range(shared_words)]
    topics = []
    for tid in range(n_topics):
        own = [f"t{tid:02d}w{j:02d}" for j in range(words_per_topic)]
        words = own + shared
        probs = np.concatenate(
            [
                np.full(len(own), (1.0 - shared_word_prob) / len(own)),
                np.full(len(shared), shared_word_prob / len(shared)) if shared else np.zeros(0),
            ]
        )
        if not shared:
            probs = np.full(len(own), 1.0 / len(own))
        frac = tid / max(1, n_topics - 1)
        base = 300.0 * (6000.0 / 300.0) ** frac
        tilt = 0.6 + 1.2 * ((tid * 7) % n_topics) / max(1, n_topics - 1)
        topics.append(
            TopicSpec(
                topic_id=tid,
                words=words,
                word_probs=probs / probs.sum(),
                base_freq=base,
                tilt=tilt,
                boundary_cue=boundary_cue,
                word_seconds=word_seconds,
                intro_words=tuple(f"t{tid:02d}intro{j}" for j in range(intro_words_per_topic)),
                intro_prob=intro_prob,
            )
        )
    return topics


def sample_show(
    topics: list[TopicSpec],
    target_duration: float,
    fragment_seconds: tuple[float, float],
    seed: int,
) -> tuple[Show, list[int]]:
    """Draw a fragment sequence (adjacent topics distinct) and build the show."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    fragments: list[Fragment] = []
    topic_sequence: list[int] = []
    total = 0.0
    prev = -1
    while total < target_duration or len(fragments) < 2:
        choices = [t for t in range(len(topics)) if t != prev]
        tid = int(rng.choice(choices))
        dur = float(rng.uniform(*fragment_seconds))
        frag = synth_fragment(
            replace(topics[tid], duration=dur), seed=derive_seed(seed, "fragment", len(fragments))
        )
        fragments.append(frag)
        topic_sequence.append(tid)
        total += frag.duration
        prev = tid
    show = build_show(fragments, target_duration)
    return show, topic_sequence[: len(show.fragment_spans)]


# ---- on-disk corpora ---------------------------------------------------------


def write_show(directory: str | Path, show: Show, topic_sequence: list[int], seed: int) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_wav(d / "show.wav", show.audio, fmt="pcm16")
    with open(d / "tokens.jsonl", "w", encoding="utf-8") as f:
        for tok, label in zip(show.tokens, show.labels):
            f.write(
                json.dumps(
                    {"word": tok.word, "t0": tok.t0, "t1": tok.t1, "label": int(label)},
                    sort_keys=True,
                )
                + "\n"
            )
    dump_json(d / "meta.json", {"topic_sequence": topic_sequence, "seed": seed})


def load_show(directory: str | Path, show_id: str = "") -> Show:
    from .dsp import load_wav

    d = Path(directory)
    audio = load_wav(d / "show.wav")
    tokens: list[WordToken] = []
    labels: list[int] = []
    with open(d / "tokens.jsonl", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                tokens.append(WordToken(word=obj["word"], t0=float(obj["t0"]), t1=float(obj["t1"])))
                labels.append(int(obj["label"]))
            except (KeyError, ValueError, TypeError) as e:
                raise DataError(f"{d / 'tokens.jsonl'}:{line_no}: malformed token line ({e})") from e
    if not tokens:
        raise DataError(f"{d}: show has no tokens")
    labels_arr = np.asarray(labels, dtype=np.uint8)
    spans = _spans_from_labels(labels_arr)
    return Show(tokens=tokens, labels=labels_arr, audio=audio, fragment_spans=spans, show_id=show_id or d.name)


def _spans_from_labels(labels: np.ndarray) -> list[tuple[int, int]]:
    starts = [0] + [i for i in range(1, len(labels)) if labels[i] == 1]
    ends = starts[1:] + [len(labels)]
    return list(zip(starts, ends))


def make_benchmark(
    n_shows: int,
    topics: int | list[TopicSpec],
    seed: int,
    audio_informative: bool,
    out_dir: str | Path,
    duration_seconds: float = 120.0,
    train_fraction: float = 0.8,
    fragment_seconds: tuple[float, float] = (8.0, 16.0),
    word_seconds: tuple[float, float] = (0.25, 0.75),
    words_per_topic: int = 30,
    shared_words: int = 20,
    intro_prob: float = 0.45,
) -> dict:
    """Generate a corpus of shows on disk and return its manifest."""
    if n_shows < 1:
        raise DataError(f"need at least 1 show, got {n_shows}")
    if isinstance(topics, int):
        topic_specs = default_topics(
            topics,
            boundary_cue=audio_informative,
            words_per_topic=words_per_topic,
            shared_words=shared_words,
            word_seconds=word_seconds,
            intro_prob=intro_prob,
        )
    else:
        topic_specs = topics
    if len(topic_specs) < 2:
        raise DataError("need at least 2 topics")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = {
        "n_shows": n_shows,
        "n_topics": len(topic_specs),
        "duration_seconds": duration_seconds,
        "audio_informative": audio_informative,
        "train_fraction": train_fraction,
        "fragment_seconds": list(fragment_seconds),
        "word_seconds": list(word_seconds),
        "words_per_topic": words_per_topic,
        "shared_words": shared_words,
        "intro_prob": intro_prob,
        "seed": seed,
    }
    n_train = min(max(int(round(train_fraction * n_shows)), 1), max(n_shows - 1, 1))
    entries = []
    for i in range(n_shows):
        show_id = f"show_{i:03d}"
        show, topic_sequence = sample_show(
            topic_specs, duration_seconds, fragment_seconds, seed=derive_seed(seed, "show", i)
        )
        write_show(out / show_id, show, topic_sequence, seed)
        entries.append(
            {
                "id": show_id,
                "path": show_id,
                "split": "train" if i < n_train else "test",
                "n_tokens": len(show.tokens),
                "duration_seconds": show.audio.duration,
            }
        )
    manifest = {"seed": seed, "config": cfg, "config_hash": config_hash(cfg), "shows": entries}
    dump_json(out / "manifest.json", manifest)
    return manifest


def load_manifest(corpus_dir: str | Path) -> dict:
    path = Path(corpus_dir)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise DataError(f"no corpus manifest at {path}")
    manifest = load_json(path)
    if not isinstance(manifest, dict) or "shows" not in manifest:
        raise DataError(f"{path}: not a corpus manifest")
    manifest["_root"] = str(Path(path).parent)
    return manifest


def manifest_shows(manifest: dict, split: str | None = None) -> list[dict]:
    rows = manifest["shows"]
    if split is not None:
        rows = [r for r in rows if r["split"] == split]
    return rows


def load_manifest_show(manifest: dict, entry: dict) -> Show:
    return load_show(Path(manifest["_root"]) / entry["path"], show_id=entry["id"])


# ---- synthetic classification datasets (stand-ins for real recordings) ------


def synth_event_clips(
    n_classes: int,
    clips_per_class: int,
    clip_seconds: float,
    seed: int,
) -> list[tuple[Waveform, str]]:
    """Labeled sound-event clips: each class occupies its own frequency band."""
    if n_classes < 2:
        raise DataError(f"need at least 2 event classes, got {n_classes}")
    rng = np.random.default_rng(np.random.PCG64(seed))
    clips = []
    for ci in range(n_classes):
        frac = ci / max(1, n_classes - 1)
        center = 200.0 * (4000.0 / 200.0) ** frac
        tilt = 0.5 + 1.5 * (ci % 3) / 2.0
        for k in range(clips_per_class):
            detune = float(rng.uniform(0.95, 1.05))
            word = f"event_{ci}_{k}"
            samples = synth_word(word, center, tilt, clip_seconds, detune=detune)
            clips.append((Waveform(samples=samples, sample_rate=SAMPLE_RATE), f"class_{ci:02d}"))
    return clips


def synth_part_fragments(
    n_fragments: int,
    fragment_seconds: float,
    seed: int,
    n_topics: int = 4,
) -> list[Waveform]:
    """Long fragments for begin/middle/end extraction."""
    topics = default_topics(max(2, n_topics), boundary_cue=False)
    out = []
    for i in range(n_fragments):
        spec = replace(topics[i % len(topics)], duration=fragment_seconds)
        out.append(synth_fragment(spec, seed=derive_seed(seed, "part-fragment", i)).audio)
    return out


def synth_jingles(n_jingles: int, seed: int, jingle_seconds: float = 2.0) -> list[Waveform]:
    """Chirp-based jingle clips."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    out = []
    reps = max(1, int(round(jingle_seconds / CHIRP_SECONDS)))
    for _ in range(n_jingles):
        gain = float(rng.uniform(0.6, 1.0))
        samples = np.concatenate([synth_chirp() for _ in range(reps)]) * gain
        out.append(Waveform(samples=samples.astype(np.float32), sample_rate=SAMPLE_RATE))
    return out


def synth_word_clips(
    words: list[str],
    samples_per_word: int,
    seed: int,
) -> list[tuple[Waveform, str]]:
    """Short per-word clips with mild duration and pitch jitter."""
    if not words:
        raise DataError("word list is empty")
    rng = np.random.default_rng(np.random.PCG64(seed))
    clips = []
    for word in words:
        for _ in range(samples_per_word):
            dur = float(rng.uniform(0.3, 0.9))
            detune = float(rng.uniform(0.97, 1.03))
            samples = synth_word(word, base_freq=800.0, tilt=1.0, duration=dur, detune=detune)
            clips.append((Waveform(samples=samples, sample_rate=SAMPLE_RATE), word))
    return clips
