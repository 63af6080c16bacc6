import numpy as np
import pytest

from audioseg import corpus, generator, segmenter


@pytest.fixture(scope="session")
def sec_generator():
    """Small trained sound-event generator shared across segmenter tests."""
    clips = corpus.synth_event_clips(5, 6, 2.0, seed=2)
    ds = generator.build_sec_dataset(clips)
    cfg = generator.GeneratorTrainConfig(epochs=20, lr=1e-3, seed=3, early_stop_train_acc=0.98)
    model, _ = generator.train_generator(ds, cfg)
    return model


@pytest.fixture(scope="session")
def cued_shows():
    """Two audio-informative shows with chirp cues at fragment starts."""
    topics = corpus.default_topics(4, boundary_cue=True)
    shows = []
    for i in range(2):
        show, _ = corpus.sample_show(topics, 40.0, (6.0, 10.0), seed=1000 + i)
        show.show_id = f"s{i}"
        shows.append(show)
    return shows


@pytest.fixture(scope="session")
def cued_features(sec_generator, cued_shows):
    return [
        segmenter.assemble_features(s, {"SEC": sec_generator}, ("SEC",)) for s in cued_shows
    ]
