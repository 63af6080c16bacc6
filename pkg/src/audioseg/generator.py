"""Audio-embedding generators: clip datasets, the downscaled VGG-style
classifier, training with best-validation checkpointing, and 30-dimensional
embedding extraction from the pre-softmax layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .dsp import MelSpectrogram, Waveform, chunk_clip, fit_to_one_second, mel_spectrogram
from .errors import DataError, DimensionError, NumericError
from .tnsr import load_named_arrays, save_named_arrays
from .util import config_hash, derive_seed, dump_json, load_json

EMBED_DIM = 30
CONV_WIDTHS = (16, 16, 32, 32, 64, 64, 128, 128)
DENSE_WIDTH = 256
INPUT_SHAPE = (1, 128, 87)
TASK_TAGS = ("SEC", "FPC", "WC", "custom")


@dataclass
class LabeledClipDataset:
    """1-second spectrogram clips with integer class labels."""

    items: list[tuple[MelSpectrogram, int]]
    class_names: list[str]
    task_tag: str

    def __post_init__(self):
        if self.task_tag not in TASK_TAGS:
            raise DataError(f"unknown task tag {self.task_tag!r}")
        for _, ci in self.items:
            if not 0 <= ci < len(self.class_names):
                raise DataError(f"class index {ci} out of range")

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(len(self.class_names), dtype=np.int64)
        for _, ci in self.items:
            counts[ci] += 1
        return counts


@dataclass
class AudioEmbedding:
    values: np.ndarray  # [30]
    source_task: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32).reshape(-1)
        if self.values.shape != (EMBED_DIM,):
            raise DimensionError(f"embedding must have {EMBED_DIM} dims, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NumericError("non-finite embedding")


# ---- dataset recipes ----------------------------------------------------------


def _label_indices(labels: list[str]) -> tuple[list[str], dict[str, int]]:
    names = sorted(set(labels))
    return names, {name: i for i, name in enumerate(names)}


def build_sec_dataset(clips: list[tuple[Waveform, str]]) -> LabeledClipDataset:
    """Chunk every labeled clip into 1-second pieces inheriting the label."""
    if not clips:
        raise DataError("no clips")
    names, index = _label_indices([label for _, label in clips])
    items: list[tuple[MelSpectrogram, int]] = []
    seen = np.zeros(len(names), dtype=np.int64)
    for w, label in clips:
        for chunk in chunk_clip(w, 1.0):
            items.append((mel_spectrogram(chunk), index[label]))
            seen[index[label]] += 1
    empty = [names[i] for i in range(len(names)) if seen[i] == 0]
    if empty:
        raise DataError(f"classes with no chunks after splitting: {', '.join(empty)}")
    return LabeledClipDataset(items=items, class_names=names, task_tag="SEC")


def build_fpc_dataset(
    fragments: list[Waveform],
    jingles: list[Waveform],
    seed: int,
    min_fragment_seconds: float = 120.0,
) -> LabeledClipDataset:
    """Begin/middle/end parts of long fragments plus a jingle class.

    Per fragment: drop the first and last 3 s, then take the first 4 s
    (begin), the last 4 s (end) and one random interior 4 s window (middle);
    each 4 s sample is chunked into 1 s items.
    """
    if not fragments or not jingles:
        raise DataError("need both fragments and jingles")
    rng = np.random.default_rng(np.random.PCG64(seed))
    names = ["begin", "end", "jingle", "middle"]
    index = {n: i for i, n in enumerate(names)}
    items: list[tuple[MelSpectrogram, int]] = []
    for fi, frag in enumerate(fragments):
        sr = frag.sample_rate
        if frag.duration < min_fragment_seconds:
            raise DataError(
                f"fragment {fi} is {frag.duration:.1f}s, the recipe needs >= {min_fragment_seconds:.0f}s"
            )
        body = frag.samples[3 * sr : len(frag.samples) - 3 * sr]
        begin = body[: 4 * sr]
        end = body[len(body) - 4 * sr :]
        interior = body[4 * sr : len(body) - 4 * sr]
        offset = int(rng.integers(0, len(interior) - 4 * sr + 1))
        middle = interior[offset : offset + 4 * sr]
        for name, sample in (("begin", begin), ("middle", middle), ("end", end)):
            for chunk in chunk_clip(Waveform(samples=sample, sample_rate=sr), 1.0):
                items.append((mel_spectrogram(chunk), index[name]))
    for j in jingles:
        for chunk in chunk_clip(j, 1.0):
            items.append((mel_spectrogram(chunk), index["jingle"]))
    return LabeledClipDataset(items=items, class_names=names, task_tag="FPC")


def build_wc_dataset(
    word_clips: list[tuple[Waveform, str]],
    min_samples: int = 2,
) -> LabeledClipDataset:
    """Zero-pad word clips to one second; classes are the distinct words."""
    if not word_clips:
        raise DataError("no word clips")
    counts: dict[str, int] = {}
    for _, word in word_clips:
        counts[word] = counts.get(word, 0) + 1
    thin = sorted(w for w, c in counts.items() if c < min_samples)
    if thin:
        raise DataError(f"words with fewer than {min_samples} samples: {', '.join(thin)}")
    names, index = _label_indices([w for _, w in word_clips])
    items = [
        (mel_spectrogram(fit_to_one_second(w)), index[word]) for w, word in word_clips
    ]
    return LabeledClipDataset(items=items, class_names=names, task_tag="WC")


# ---- network -------------------------------------------------------------------


class GeneratorModel:
    """Downscaled VGG-style classifier whose pre-softmax 30-unit layer is the
    embedding. Conv stacks of two 3x3 layers with ReLU, 2x2 pooling after
    each stack, then dense 256 -> dense 30 (linear) -> dense n_classes."""

    def __init__(
        self,
        n_classes: int,
        seed: int = 0,
        conv_widths: tuple[int, ...] = CONV_WIDTHS,
        dense_width: int = DENSE_WIDTH,
        input_shape: tuple[int, int, int] = INPUT_SHAPE,
        embedding_dim: int = EMBED_DIM,
        dtype=np.float32,
        task_tag: str = "custom",
    ):
        if n_classes < 2:
            raise DataError(f"need at least 2 classes, got {n_classes}")
        if embedding_dim != EMBED_DIM:
            raise DataError(f"embedding layer width is fixed at {EMBED_DIM}")
        if len(conv_widths) % 2 != 0:
            raise DataError("conv widths come in pairs (two convs per pool block)")
        self.n_classes = n_classes
        self.embedding_dim = embedding_dim
        self.conv_widths = tuple(conv_widths)
        self.dense_width = dense_width
        self.input_shape = tuple(input_shape)
        self.dtype = dtype
        self.task_tag = task_tag
        self.metadata: dict = {"seed": seed}
        rng = np.random.default_rng(np.random.PCG64(derive_seed(seed, "generator-init")))
        self.params: dict[str, T.Tensor] = {}
        c_prev, h, w = input_shape
        for i, width in enumerate(conv_widths):
            fan_in = c_prev * 9
            self.params[f"conv{i}.kernel"] = T.kaiming_uniform(
                (width, c_prev, 3, 3), fan_in, rng, dtype
            )
            c_prev = width
            if i % 2 == 1:
                h, w = h // 2, w // 2
                if h < 1 or w < 1:
                    raise DimensionError("input too small for the pooling stack")
        flat = c_prev * h * w
        self._flat_dim = flat
        self.params["fc1.weights"] = T.kaiming_uniform((dense_width, flat), flat, rng, dtype)
        self.params["fc1.bias"] = T.zeros_tensor((dense_width,), dtype)
        self.params["embed.weights"] = T.kaiming_uniform(
            (embedding_dim, dense_width), dense_width, rng, dtype
        )
        self.params["embed.bias"] = T.zeros_tensor((embedding_dim,), dtype)
        self.params["head.weights"] = T.kaiming_uniform(
            (n_classes, embedding_dim), embedding_dim, rng, dtype
        )
        self.params["head.bias"] = T.zeros_tensor((n_classes,), dtype)

    def param_list(self) -> list[T.Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def forward(self, x: np.ndarray | T.Tensor, mode: str = "probs") -> T.Tensor:
        """Run the network; ``mode`` selects "embedding", "logits" or "probs"."""
        t = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x, dtype=self.dtype))
        if t.data.shape[-3:] != self.input_shape:
            raise DimensionError(
                f"input shape {t.data.shape} does not end with {self.input_shape}"
            )
        out = t
        for i in range(len(self.conv_widths)):
            out = T.relu(T.conv2d(out, self.params[f"conv{i}.kernel"]))
            if i % 2 == 1:
                out = T.maxpool2x2(out)
        out = T.flatten(out)
        out = T.relu(T.dense(out, self.params["fc1.weights"], self.params["fc1.bias"]))
        emb = T.dense(out, self.params["embed.weights"], self.params["embed.bias"])
        if mode == "embedding":
            return emb
        logits = T.dense(emb, self.params["head.weights"], self.params["head.bias"])
        if mode == "logits":
            return logits
        if mode != "probs":
            raise DataError(f"unknown forward mode {mode!r}")
        return T.softmax(logits)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, arr in snap.items():
            self.params[name].data = arr.copy()


def build_network(n_classes: int, seed: int = 0, task_tag: str = "custom") -> GeneratorModel:
    """The standard-size generator for 128x87 spectrogram inputs."""
    return GeneratorModel(n_classes=n_classes, seed=seed, task_tag=task_tag)


# ---- training -------------------------------------------------------------------


@dataclass
class GeneratorTrainConfig:
    """Defaults follow the reference recipe (1400 epochs, lr 1e-6, batch 32);
    desk-scale runs override epochs/lr and may stop early on accuracy."""

    epochs: int = 1400
    batch_size: int = 32
    lr: float = 1e-6
    seed: int = 0
    early_stop_train_acc: float | None = None
    early_stop_val_acc: float | None = None

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "seed": self.seed,
            "early_stop_train_acc": self.early_stop_train_acc,
            "early_stop_val_acc": self.early_stop_val_acc,
        }


def stratified_split(
    labels: np.ndarray, val_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split; every class keeps at least one training item."""
    train_idx: list[int] = []
    val_idx: list[int] = []
    for ci in np.unique(labels):
        members = np.flatnonzero(labels == ci)
        members = members[rng.permutation(len(members))]
        n_val = min(int(round(val_fraction * len(members))), len(members) - 1)
        val_idx.extend(members[:n_val].tolist())
        train_idx.extend(members[n_val:].tolist())
    return (
        np.sort(np.asarray(train_idx, dtype=np.int64)),
        np.sort(np.asarray(val_idx, dtype=np.int64)),
    )


def _stack_inputs(ds: LabeledClipDataset) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([m.values for m, _ in ds.items])[:, None, :, :]
    y = np.asarray([ci for _, ci in ds.items], dtype=np.int64)
    return x, y


def _accuracy(model: GeneratorModel, x: np.ndarray, y: np.ndarray, batch: int = 64) -> float:
    if len(y) == 0:
        return 0.0
    correct = 0
    with T.no_grad():
        for i in range(0, len(y), batch):
            logits = model.forward(x[i : i + batch], mode="logits")
            correct += int((logits.data.argmax(axis=1) == y[i : i + batch]).sum())
    return correct / len(y)


def train_generator(
    ds: LabeledClipDataset, cfg: GeneratorTrainConfig
) -> tuple[GeneratorModel, list[dict]]:
    """Train the classifier with a stratified 90/10 split and return the
    checkpoint with the best validation accuracy plus the per-epoch log."""
    counts = ds.class_counts()
    thin = [ds.class_names[i] for i in np.flatnonzero(counts < 2)]
    if thin:
        raise DataError(f"cannot stratify, classes with < 2 items: {', '.join(thin)}")
    x, y = _stack_inputs(ds)
    rng = np.random.default_rng(np.random.PCG64(derive_seed(cfg.seed, "split")))
    train_idx, val_idx = stratified_split(y, 0.1, rng)
    x_train, y_train = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    model = build_network(len(ds.class_names), seed=cfg.seed, task_tag=ds.task_tag)
    params = model.param_list()
    state = T.AdamState.for_params(params, lr=cfg.lr)
    shuffle_rng = np.random.default_rng(np.random.PCG64(derive_seed(cfg.seed, "batches")))

    log: list[dict] = []
    best_val = -1.0
    best_snap = model.snapshot()
    epochs_run = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(y_train))
        correct = 0
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            batch = order[i : i + cfg.batch_size]
            probs = model.forward(x_train[batch], mode="probs")
            loss = T.cross_entropy(probs, y_train[batch])
            if not np.isfinite(loss.data):
                raise NumericError(f"training diverged at epoch {epoch}")
            correct += int((probs.data.argmax(axis=1) == y_train[batch]).sum())
            losses.append(loss.item())
            model.zero_grad()
            loss.backward()
            T.adam_update(params, [p.grad for p in params], state)
        train_acc = correct / max(1, len(y_train))
        val_acc = _accuracy(model, x_val, y_val)
        epochs_run = epoch + 1
        log.append(
            {
                "epoch": epoch,
                "train_accuracy": train_acc,
                "val_accuracy": val_acc,
                "mean_loss": float(np.mean(losses)),
            }
        )
        if val_acc > best_val:
            best_val = val_acc
            best_snap = model.snapshot()
        targets = []
        if cfg.early_stop_train_acc is not None:
            targets.append(train_acc >= cfg.early_stop_train_acc)
        if cfg.early_stop_val_acc is not None:
            targets.append(val_acc >= cfg.early_stop_val_acc)
        if targets and all(targets):
            break
    model.restore(best_snap)
    model.metadata = {
        "task_tag": ds.task_tag,
        "n_classes": len(ds.class_names),
        "class_names": ds.class_names,
        "val_accuracy": best_val,
        "epochs_trained": epochs_run,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }
    return model, log


# ---- embedding extraction ---------------------------------------------------------


def embed(model: GeneratorModel, spec: MelSpectrogram) -> AudioEmbedding:
    """Pre-softmax activations for one spectrogram; deterministic."""
    with T.no_grad():
        out = model.forward(spec.values[None, None, :, :], mode="embedding")
    return AudioEmbedding(values=out.data[0], source_task=model.task_tag)


def embed_batch(model: GeneratorModel, specs: list[MelSpectrogram], batch: int = 64) -> np.ndarray:
    """Embeddings for many spectrograms, [n, 30]."""
    if not specs:
        return np.zeros((0, EMBED_DIM), dtype=np.float32)
    x = np.stack([m.values for m in specs])[:, None, :, :]
    rows = []
    with T.no_grad():
        for i in range(0, len(specs), batch):
            rows.append(model.forward(x[i : i + batch], mode="embedding").data)
    out = np.concatenate(rows, axis=0)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite embeddings")
    return out


# ---- checkpoints --------------------------------------------------------------------


def save_checkpoint(model: GeneratorModel, directory: str | Path, extra: dict | None = None) -> None:
    d = Path(directory)
    save_named_arrays(d, {name: p.data for name, p in model.params.items()})
    meta = {
        "kind": "generator",
        "task_tag": model.task_tag,
        "n_classes": model.n_classes,
        "embedding_dim": model.embedding_dim,
        "conv_widths": list(model.conv_widths),
        "dense_width": model.dense_width,
        "input_shape": list(model.input_shape),
        "param_names": list(model.params.keys()),
        "metadata": model.metadata,
    }
    if extra:
        meta.update(extra)
    dump_json(d / "metadata.json", meta)


def load_checkpoint(directory: str | Path) -> GeneratorModel:
    d = Path(directory)
    meta_path = d / "metadata.json"
    if not meta_path.exists():
        raise DataError(f"no generator checkpoint at {d}")
    meta = load_json(meta_path)
    if meta.get("kind") != "generator":
        raise DataError(f"{d}: not a generator checkpoint")
    model = GeneratorModel(
        n_classes=meta["n_classes"],
        seed=meta.get("metadata", {}).get("seed", 0),
        conv_widths=tuple(meta["conv_widths"]),
        dense_width=meta["dense_width"],
        input_shape=tuple(meta["input_shape"]),
        embedding_dim=meta["embedding_dim"],
        task_tag=meta["task_tag"],
    )
    arrays = load_named_arrays(d, meta["param_names"])
    for name in meta["param_names"]:
        if arrays[name].shape != model.params[name].data.shape:
            raise DataError(f"{d}: checkpoint tensor {name} has unexpected shape")
        model.params[name].data = arrays[name].astype(np.float32)
    model.metadata = meta.get("metadata", {})
    return model


def checkpoint_config_hash(train_cfg: dict) -> str:
    return config_hash(train_cfg)
