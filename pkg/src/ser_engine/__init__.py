"""Speech emotion recognition engine: augmentation, features, a numpy CNN,
metrics and an ASR/MT/TTS stage orchestrator."""

__version__ = "0.1.0"
