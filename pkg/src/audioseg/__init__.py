"""audioseg: a desk-scale workbench for topic segmentation of audio shows.

Pipeline: WAV -> 128x87 log-Mel spectrograms -> CNN audio-embedding
generators -> per-word features (word embeddings + audio embeddings) ->
LSTM boundary labeler -> WinPR@k evaluation -> rank-based significance
tests. All model training runs on a small built-in autodiff core.
"""

__version__ = "0.1.0"
