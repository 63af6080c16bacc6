"""Word-level boundary prediction.

Per-token features concatenate a 300-dimensional word embedding with one
30-dimensional audio embedding per requested generator, in the fixed order
TXT, SEC, FPC, WC. A single-layer unidirectional LSTM emits one boundary
probability per token; training uses class-weighted binary cross-entropy
with truncated backpropagation, and a grid search over hidden size,
learning rate and decision threshold selects the model with the best
validation WinPR@10 F1.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .corpus import Show
from .dsp import fit_to_one_second, mel_spectrogram
from .errors import ConfigError, DataError, DimensionError, NumericError
from .generator import GeneratorModel, embed_batch
from .tnsr import load_named_arrays, save_named_arrays
from .util import derive_seed, dump_json, load_json

WORD_DIM = 300
AUDIO_DIM = 30
COMPONENT_ORDER = ("TXT", "SEC", "FPC", "WC")
_BCE_EPS = 1e-7


# ---- word embeddings -----------------------------------------------------------

_hash_cache: dict[str, np.ndarray] = {}


def word_embedding(word: str) -> np.ndarray:
    """Deterministic unit-norm 300-vector keyed by a stable hash of the word."""
    cached = _hash_cache.get(word)
    if cached is not None:
        return cached
    seed = int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "little")
    rng = np.random.default_rng(np.random.PCG64(seed))
    vec = rng.standard_normal(WORD_DIM)
    vec /= np.linalg.norm(vec)
    out = vec.astype(np.float32)
    if len(_hash_cache) < 200_000:
        _hash_cache[word] = out
    return out


class WordTable:
    """Optional external word-vector table (word TAB 300 floats per line);
    out-of-vocabulary words fall back to the hash embedding."""

    def __init__(self, vectors: dict[str, np.ndarray]):
        self.vectors = vectors

    @classmethod
    def load(cls, path: str | Path) -> "WordTable":
        vectors: dict[str, np.ndarray] = {}
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != WORD_DIM + 1:
                    raise DataError(
                        f"{path}:{line_no}: expected word + {WORD_DIM} values, got {len(parts)} fields"
                    )
                try:
                    vec = np.asarray([float(v) for v in parts[1:]], dtype=np.float32)
                except ValueError as e:
                    raise DataError(f"{path}:{line_no}: malformed number ({e})") from e
                vectors[parts[0]] = vec
        return cls(vectors)

    def lookup(self, word: str) -> np.ndarray:
        vec = self.vectors.get(word)
        return vec if vec is not None else word_embedding(word)


# ---- feature assembly ------------------------------------------------------------


def parse_feature_tag(tag: str) -> tuple[str, ...]:
    """Normalize a feature tag like "txt+sec" or "ALL" to ordered components."""
    cleaned = tag.strip().upper()
    if not cleaned:
        raise ConfigError("empty feature tag")
    if cleaned == "ALL":
        return COMPONENT_ORDER
    parts = [p.strip() for p in cleaned.split("+")]
    unknown = [p for p in parts if p not in COMPONENT_ORDER]
    if unknown:
        raise ConfigError(f"unknown feature components: {', '.join(unknown)}")
    if len(set(parts)) != len(parts):
        raise ConfigError(f"duplicate components in feature tag {tag!r}")
    return tuple(c for c in COMPONENT_ORDER if c in parts)


def feature_tag(components: tuple[str, ...]) -> str:
    return "+".join(components)


def feature_dim(components: tuple[str, ...]) -> int:
    return WORD_DIM * ("TXT" in components) + AUDIO_DIM * sum(c != "TXT" for c in components)


def assemble_features(
    show: Show,
    generators: dict[str, GeneratorModel],
    components: tuple[str, ...],
    word_table: WordTable | None = None,
) -> np.ndarray:
    """Per-token feature matrix [m, n] in the fixed component order."""
    if not components:
        raise DataError("no feature components requested")
    audio_parts = [c for c in components if c != "TXT"]
    missing = [c for c in audio_parts if c not in generators]
    if missing:
        raise DataError(f"no generator supplied for components: {', '.join(missing)}")
    m = len(show.tokens)
    if m == 0:
        raise DataError("show has no tokens")
    blocks: list[np.ndarray] = []
    if "TXT" in components:
        lookup = word_table.lookup if word_table is not None else word_embedding
        blocks.append(np.stack([lookup(tok.word) for tok in show.tokens]))
    if audio_parts:
        specs = [mel_spectrogram(fit_to_one_second(show.token_clip(i))) for i in range(m)]
        for comp in audio_parts:
            blocks.append(embed_batch(generators[comp], specs))
    out = np.concatenate(blocks, axis=1).astype(np.float32)
    if out.shape != (m, feature_dim(components)):
        raise DimensionError(f"assembled {out.shape}, expected ({m}, {feature_dim(components)})")
    return out


# ---- model -----------------------------------------------------------------------


@dataclass
class Prediction:
    probs: np.ndarray  # [m] in (0,1)
    boundaries: np.ndarray  # uint8 [m]


@dataclass
class SegmenterModel:
    lstm: T.LSTMParams
    w_out: T.Tensor  # [1, u]
    b_out: T.Tensor  # [1]
    tau: float
    feature_tag: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"threshold tau must be strictly inside (0,1), got {self.tau}")

    @property
    def hidden(self) -> int:
        return self.lstm.units

    @property
    def input_dim(self) -> int:
        return self.lstm.input_dim

    def param_list(self) -> list[T.Tensor]:
        return self.lstm.tensors() + [self.w_out, self.b_out]


def _init_model(input_dim: int, hidden: int, tau: float, tag: str, seed: int) -> SegmenterModel:
    rng = np.random.default_rng(np.random.PCG64(derive_seed(seed, "segmenter-init")))
    lstm = T.init_lstm_params(input_dim, hidden, rng)
    bound = 1.0 / np.sqrt(hidden)
    w_out = T.uniform_tensor((1, hidden), bound, rng)
    b_out = T.zeros_tensor((1,))
    return SegmenterModel(lstm=lstm, w_out=w_out, b_out=b_out, tau=tau, feature_tag=tag)


def predict(model: SegmenterModel, features: np.ndarray) -> Prediction:
    """Left-to-right pass over the token sequence; token 0 is never a boundary."""
    feats = np.asarray(features, dtype=np.float32)
    if feats.ndim != 2 or feats.shape[1] != model.input_dim:
        raise DimensionError(
            f"features {feats.shape} do not match model input dim {model.input_dim}"
        )
    m = feats.shape[0]
    u = model.hidden
    probs = np.zeros(m, dtype=np.float32)
    with T.no_grad():
        h = T.Tensor(np.zeros(u, dtype=np.float32))
        c = T.Tensor(np.zeros(u, dtype=np.float32))
        for i in range(m):
            h, c = T.lstm_step(T.Tensor(feats[i]), h, c, model.lstm)
            logit = T.dense(h, model.w_out, model.b_out)
            probs[i] = T.sigmoid(logit).data[0]
    boundaries = (probs >= model.tau).astype(np.uint8)
    boundaries[0] = 0
    return Prediction(probs=probs, boundaries=boundaries)


# ---- training ---------------------------------------------------------------------


@dataclass
class HPGrid:
    hidden_sizes: tuple[int, ...] = (32, 64, 128)
    learning_rates: tuple[float, ...] = (1e-3, 1e-4)
    thresholds: tuple[float, ...] = (0.3, 0.5, 0.7)

    def __post_init__(self):
        if not self.hidden_sizes or not self.learning_rates or not self.thresholds:
            raise ConfigError("hyper-parameter grid must not be empty")
        for tau in self.thresholds:
            if not 0.0 < tau < 1.0:
                raise ConfigError(f"threshold {tau} must be strictly inside (0,1)")


@dataclass
class SegTrainConfig:
    epochs: int = 30
    bptt_window: int = 256


def positive_class_weight(label_sets: list[np.ndarray]) -> float:
    pos = sum(int(np.sum(y)) for y in label_sets)
    neg = sum(len(y) - int(np.sum(y)) for y in label_sets)
    if pos == 0:
        raise DataError("no boundary tokens in the training data")
    return neg / pos


def _train_one(
    train_data: list[tuple[np.ndarray, np.ndarray]],
    hidden: int,
    lr: float,
    cfg: SegTrainConfig,
    tag: str,
    seed: int,
) -> tuple[SegmenterModel, list[float]]:
    input_dim = train_data[0][0].shape[1]
    model = _init_model(input_dim, hidden, 0.5, tag, seed)
    params = model.param_list()
    state = T.AdamState.for_params(params, lr=lr)
    pos_weight = positive_class_weight([y for _, y in train_data])
    order_rng = np.random.default_rng(np.random.PCG64(derive_seed(seed, "epochs")))
    epoch_losses: list[float] = []
    for _ in range(cfg.epochs):
        show_order = order_rng.permutation(len(train_data))
        total_loss = 0.0
        total_tokens = 0
        for si in show_order:
            feats, labels = train_data[si]
            u = model.lstm.units
            h = T.Tensor(np.zeros(u, dtype=np.float32))
            c = T.Tensor(np.zeros(u, dtype=np.float32))
            for start in range(0, len(labels), cfg.bptt_window):
                stop = min(start + cfg.bptt_window, len(labels))
                loss = None
                counted = 0
                for i in range(start, stop):
                    h, c = T.lstm_step(T.Tensor(feats[i]), h, c, model.lstm)
                    if i == 0:
                        # token 0 is non-boundary by convention, not learnable
                        continue
                    p = T.sigmoid(T.dense(h, model.w_out, model.b_out))
                    pc = T.clip(p, _BCE_EPS, 1.0 - _BCE_EPS)
                    if labels[i]:
                        term = T.log(pc) * (-pos_weight)
                    else:
                        term = T.log(1.0 - pc) * -1.0
                    loss = term if loss is None else loss + term
                    counted += 1
                if loss is None:
                    continue
                loss = loss * (1.0 / counted)
                if not np.isfinite(loss.data):
                    raise NumericError("segmenter training diverged")
                for p_ in params:
                    p_.grad = None
                loss.backward()
                T.adam_update(params, [p_.grad for p_ in params], state)
                total_loss += loss.item() * counted
                total_tokens += counted
                h = h.detach()
                c = c.detach()
        epoch_losses.append(total_loss / max(1, total_tokens))
    return model, epoch_losses


def train_segmenter(
    train_data: list[tuple[np.ndarray, np.ndarray]],
    val_data: list[tuple[np.ndarray, np.ndarray]],
    grid: HPGrid,
    cfg: SegTrainConfig,
    tag: str,
    seed: int,
    eval_k: int = 10,
) -> tuple[SegmenterModel, list[dict]]:
    """Grid search over (hidden, lr, tau); selection is validation WinPR@k F1.

    Training depends only on (hidden, lr), so each pair is trained once and
    the thresholds are scored on the shared predictions.
    """
    from .winpr import winpr

    if not train_data:
        raise DataError("no training shows")
    if not val_data:
        raise DataError("no validation shows")
    search_log: list[dict] = []
    best = None
    for hidden, lr in itertools.product(grid.hidden_sizes, grid.learning_rates):
        model, losses = _train_one(
            train_data, hidden, lr, cfg, tag, seed=derive_seed(seed, "grid", hidden, lr)
        )
        val_probs = [predict(model, feats).probs for feats, _ in val_data]
        for tau in grid.thresholds:
            f1s = []
            for probs, (_, labels) in zip(val_probs, val_data):
                hyp = (probs >= tau).astype(np.uint8)
                hyp[0] = 0
                f1s.append(winpr(labels, hyp, eval_k).f1)
            val_f1 = float(np.mean(f1s))
            search_log.append(
                {"hidden": hidden, "lr": lr, "tau": tau, "val_f1": val_f1, "final_loss": losses[-1]}
            )
            if best is None or val_f1 > best[0]:
                best = (val_f1, model, tau, hidden, lr, losses)
    val_f1, model, tau, hidden, lr, losses = best
    model.tau = tau
    model.metadata = {
        "feature_cfg": tag,
        "u": hidden,
        "lr": lr,
        "tau": tau,
        "seed": seed,
        "val_f1": val_f1,
        "epochs": cfg.epochs,
        "bptt_window": cfg.bptt_window,
        "epoch_losses": losses,
    }
    return model, search_log


# ---- checkpoints ---------------------------------------------------------------------


def save_segmenter(model: SegmenterModel, directory: str | Path, extra: dict | None = None) -> None:
    d = Path(directory)
    named = {
        "lstm.wx": model.lstm.wx.data,
        "lstm.wh": model.lstm.wh.data,
        "lstm.b": model.lstm.b.data,
        "out.weights": model.w_out.data,
        "out.bias": model.b_out.data,
    }
    save_named_arrays(d, named)
    meta = {
        "kind": "segmenter",
        "feature_cfg": model.feature_tag,
        "u": model.hidden,
        "input_dim": model.input_dim,
        "tau": model.tau,
        "metadata": model.metadata,
    }
    if extra:
        meta.update(extra)
    dump_json(d / "metadata.json", meta)


def load_segmenter(directory: str | Path) -> SegmenterModel:
    d = Path(directory)
    meta_path = d / "metadata.json"
    if not meta_path.exists():
        raise DataError(f"no segmenter checkpoint at {d}")
    meta = load_json(meta_path)
    if meta.get("kind") != "segmenter":
        raise DataError(f"{d}: not a segmenter checkpoint")
    arrays = load_named_arrays(d, ["lstm.wx", "lstm.wh", "lstm.b", "out.weights", "out.bias"])
    lstm = T.LSTMParams(
        wx=T.Tensor(arrays["lstm.wx"], requires_grad=True),
        wh=T.Tensor(arrays["lstm.wh"], requires_grad=True),
        b=T.Tensor(arrays["lstm.b"], requires_grad=True),
    )
    model = SegmenterModel(
        lstm=lstm,
        w_out=T.Tensor(arrays["out.weights"], requires_grad=True),
        b_out=T.Tensor(arrays["out.bias"], requires_grad=True),
        tau=float(meta["tau"]),
        feature_tag=meta["feature_cfg"],
        metadata=meta.get("metadata", {}),
    )
    return model
