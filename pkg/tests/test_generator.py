import numpy as np
import pytest

from audioseg import corpus, dsp, generator
from audioseg.errors import DataError, DimensionError

SR = dsp.SAMPLE_RATE


def tone_clip(freq, seconds=1.0, amp=0.4):
    t = np.arange(int(seconds * SR)) / SR
    return dsp.Waveform(samples=(amp * np.sin(2 * np.pi * freq * t)).astype(np.float32), sample_rate=SR)


# ---- dataset recipes -----------------------------------------------------------


def test_sec_dataset_chunk_counts():
    clips = [(tone_clip(300.0, 5.0), "a"), (tone_clip(900.0, 5.0), "b")]
    ds = generator.build_sec_dataset(clips)
    assert len(ds.items) == 10
    assert ds.class_names == ["a", "b"]
    assert ds.task_tag == "SEC"


def test_sec_dataset_single_item():
    ds = generator.build_sec_dataset([(tone_clip(500.0, 1.0), "only")])
    assert len(ds.items) == 1
    assert ds.class_names == ["only"]


def test_sec_dataset_balanced_synthetic_corpus():
    clips = corpus.synth_event_clips(5, 10, 3.0, seed=6)
    ds = generator.build_sec_dataset(clips)
    assert len(ds.items) == 150
    np.testing.assert_array_equal(ds.class_counts(), np.full(5, 30))


def test_fpc_dataset_recipe_arithmetic():
    frag = corpus.synth_fragment(
        corpus.TopicSpec(topic_id=0, words=["x", "y"], base_freq=500.0, tilt=1.0, duration=120.0),
        seed=1,
    ).audio
    jingles = corpus.synth_jingles(1, seed=2, jingle_seconds=2.0)
    ds = generator.build_fpc_dataset([frag], jingles, seed=3)
    names = ds.class_names
    counts = {names[i]: c for i, c in enumerate(ds.class_counts())}
    assert counts["begin"] == 4 and counts["middle"] == 4 and counts["end"] == 4
    assert counts["jingle"] == 2
    assert len(ds.items) == 14


def test_fpc_dataset_part_classes_balanced():
    frags = corpus.synth_part_fragments(2, 120.0, seed=4)
    ds = generator.build_fpc_dataset(frags, corpus.synth_jingles(2, seed=5), seed=6)
    counts = dict(zip(ds.class_names, ds.class_counts()))
    assert counts["begin"] == counts["middle"] == counts["end"]


def test_fpc_dataset_deterministic_middle_windows():
    frags = corpus.synth_part_fragments(1, 120.0, seed=7)
    jingles = corpus.synth_jingles(1, seed=8)
    a = generator.build_fpc_dataset(frags, jingles, seed=9)
    b = generator.build_fpc_dataset(frags, jingles, seed=9)
    for (ma, _), (mb, _) in zip(a.items, b.items):
        np.testing.assert_array_equal(ma.values, mb.values)


def test_fpc_rejects_short_fragment():
    with pytest.raises(DataError):
        generator.build_fpc_dataset([tone_clip(300.0, 30.0)], corpus.synth_jingles(1, seed=1), seed=2)


def test_wc_dataset_basic():
    clips = corpus.synth_word_clips(["uno", "dos"], 3, seed=10)
    ds = generator.build_wc_dataset(clips)
    assert len(ds.items) == 6
    assert ds.class_names == ["dos", "uno"]
    for m, _ in ds.items:
        assert m.values.shape == (128, 87)


def test_wc_dataset_single_word_two_clips():
    w = tone_clip(700.0, 0.4)
    ds = generator.build_wc_dataset([(w, "word"), (w, "word")])
    assert len(ds.class_names) == 1
    assert len(ds.items) == 2


def test_wc_dataset_min_samples():
    with pytest.raises(DataError):
        generator.build_wc_dataset([(tone_clip(700.0, 0.4), "lonely")])


def test_wc_dataset_balanced_synthetic():
    words = [f"w{i}" for i in range(20)]
    ds = generator.build_wc_dataset(corpus.synth_word_clips(words, 2, seed=11))
    assert len(ds.class_names) == 20
    np.testing.assert_array_equal(ds.class_counts(), np.full(20, 2))


# ---- network ----------------------------------------------------------------------


def test_network_head_width_matches_classes():
    for n in (50, 4, 2):
        model = generator.build_network(n, seed=0)
        assert model.params["head.weights"].shape == (n, 30)
        assert model.params["head.bias"].shape == (n,)


def test_network_embedding_width_is_30():
    model = generator.build_network(5, seed=0)
    assert model.params["embed.weights"].shape[0] == 30


def test_parameter_count_closed_form():
    conv = 0
    c_prev = 1
    for w in generator.CONV_WIDTHS:
        conv += w * c_prev * 9
        c_prev = w
    flat = 128 * 8 * 5
    expected = conv + (256 * flat + 256) + (30 * 256 + 30) + (2 * 30 + 2)
    model = generator.build_network(2, seed=0)
    assert model.parameter_count() == expected
    assert model.parameter_count() < 2_000_000


def test_network_rejects_single_class():
    with pytest.raises(DataError):
        generator.build_network(1, seed=0)


def test_forward_shapes():
    model = generator.build_network(3, seed=1)
    x = np.zeros((2, 1, 128, 87), dtype=np.float32)
    assert model.forward(x, mode="embedding").shape == (2, 30)
    assert model.forward(x, mode="logits").shape == (2, 3)
    probs = model.forward(x, mode="probs")
    np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-5)
    with pytest.raises(DimensionError):
        model.forward(np.zeros((1, 1, 64, 87), dtype=np.float32))


# ---- embedding ---------------------------------------------------------------------


GOLDEN_EMBEDDING = [
    0.38287416100502014, 0.3813880980014801, -0.02233520895242691, 0.14099407196044922,
    -0.591469943523407, 0.32153141498565674, -0.4556434750556946, -0.1304899901151657,
    0.9089092016220093, -0.2658892571926117, -0.386038601398468, 0.21661505103111267,
    0.9470818042755127, -0.2547968626022339, -1.99313223361969, -0.3219902515411377,
    -0.471099317073822, 0.37784233689308167, -0.8049501776695251, -1.0773282051086426,
    -0.4618241786956787, -0.33080288767814636, -0.36634862422943115, -0.3909860849380493,
    1.0146862268447876, 0.40827101469039917, 0.235282301902771, 0.35820651054382324,
    1.2196972370147705, 0.3945688009262085,
]


def test_embed_matches_golden_vector():
    model = generator.build_network(4, seed=1234)
    spec = dsp.mel_spectrogram(tone_clip(880.0))
    emb = generator.embed(model, spec)
    np.testing.assert_allclose(emb.values, GOLDEN_EMBEDDING, atol=1e-6)


def test_embed_deterministic_and_30d():
    model = generator.build_network(3, seed=7)
    spec = dsp.mel_spectrogram(tone_clip(440.0))
    a = generator.embed(model, spec)
    b = generator.embed(model, spec)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.values.shape == (30,)
    assert np.all(np.isfinite(a.values))


def test_embed_batch_matches_single():
    model = generator.build_network(3, seed=8)
    specs = [dsp.mel_spectrogram(tone_clip(f)) for f in (200.0, 1000.0, 3000.0)]
    batch = generator.embed_batch(model, specs)
    for i, s in enumerate(specs):
        np.testing.assert_allclose(batch[i], generator.embed(model, s).values, atol=1e-5)


# ---- training ------------------------------------------------------------------------


def test_stratified_split_properties():
    rng = np.random.default_rng(12)
    labels = np.repeat(np.arange(6), [20, 15, 10, 30, 2, 9])
    train_idx, val_idx = generator.stratified_split(labels, 0.1, rng)
    assert len(set(train_idx) & set(val_idx)) == 0
    assert len(train_idx) + len(val_idx) == len(labels)
    for ci, total in zip(range(6), [20, 15, 10, 30, 2, 9]):
        n_val = int(np.sum(labels[val_idx] == ci))
        assert abs(n_val - 0.1 * total) <= 1.0
        assert np.sum(labels[train_idx] == ci) >= 1


def test_train_rejects_singleton_class():
    ds = generator.build_sec_dataset(
        [(tone_clip(200.0, 2.0), "a"), (tone_clip(4000.0, 1.0), "b")]
    )
    with pytest.raises(DataError):
        generator.train_generator(ds, generator.GeneratorTrainConfig(epochs=1, seed=0))


def test_overfit_two_separable_tones():
    # 200 Hz vs 4 kHz, lr 1e-3: train accuracy must reach 99% within 50 epochs
    clips = []
    rng = np.random.default_rng(13)
    for i in range(10):
        f = 200.0 * float(rng.uniform(0.95, 1.05))
        clips.append((tone_clip(f, 2.0), "low"))
        f = 4000.0 * float(rng.uniform(0.95, 1.05))
        clips.append((tone_clip(f, 2.0), "high"))
    ds = generator.build_sec_dataset(clips)
    cfg = generator.GeneratorTrainConfig(epochs=50, lr=1e-3, seed=3, early_stop_train_acc=0.99)
    model, log = generator.train_generator(ds, cfg)
    assert log[-1]["train_accuracy"] >= 0.99
    assert model.metadata["val_accuracy"] >= max(r["val_accuracy"] for r in log) - 1e-12


def test_training_deterministic():
    clips = corpus.synth_event_clips(2, 4, 2.0, seed=14)
    ds = generator.build_sec_dataset(clips)
    cfg = generator.GeneratorTrainConfig(epochs=2, lr=1e-3, seed=5)
    m1, log1 = generator.train_generator(ds, cfg)
    m2, log2 = generator.train_generator(ds, cfg)
    assert log1 == log2
    for name in m1.params:
        np.testing.assert_array_equal(m1.params[name].data, m2.params[name].data)


def test_best_checkpoint_selection_dominates_log():
    clips = corpus.synth_event_clips(2, 5, 2.0, seed=15)
    ds = generator.build_sec_dataset(clips)
    cfg = generator.GeneratorTrainConfig(epochs=3, lr=1e-3, seed=6)
    model, log = generator.train_generator(ds, cfg)
    assert model.metadata["val_accuracy"] >= max(r["val_accuracy"] for r in log) - 1e-12


def test_discriminative_embeddings_after_overfit():
    clips = corpus.synth_event_clips(2, 6, 2.0, seed=16)
    ds = generator.build_sec_dataset(clips)
    cfg = generator.GeneratorTrainConfig(epochs=30, lr=1e-3, seed=7, early_stop_train_acc=0.99)
    model, _ = generator.train_generator(ds, cfg)
    embs = generator.embed_batch(model, [m for m, _ in ds.items])
    labels = np.array([ci for _, ci in ds.items])
    normed = embs / np.linalg.norm(embs, axis=1, keepdims=True)
    sims = normed @ normed.T
    mask_same = labels[:, None] == labels[None, :]
    np.fill_diagonal(mask_same, False)
    mask_diff = labels[:, None] != labels[None, :]
    assert sims[mask_same].mean() > sims[mask_diff].mean()


# ---- checkpoints -----------------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    clips = corpus.synth_event_clips(3, 3, 1.0, seed=17)
    ds = generator.build_sec_dataset(clips)
    cfg = generator.GeneratorTrainConfig(epochs=1, lr=1e-3, seed=8)
    model, _ = generator.train_generator(ds, cfg)
    generator.save_checkpoint(model, tmp_path / "ckpt")
    back = generator.load_checkpoint(tmp_path / "ckpt")
    assert back.n_classes == model.n_classes
    assert back.task_tag == model.task_tag
    spec = dsp.mel_spectrogram(tone_clip(750.0))
    np.testing.assert_array_equal(
        generator.embed(model, spec).values, generator.embed(back, spec).values
    )


def test_load_checkpoint_rejects_other_dirs(tmp_path):
    with pytest.raises(DataError):
        generator.load_checkpoint(tmp_path)
