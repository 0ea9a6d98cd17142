"""Neuromodulated plasticity in spiking networks, meta-learned end to end."""

from .config import TrainConfig, default_config, load_config
from .harness import evaluate, init_system, run_episode, sweep_cues, train

__version__ = "0.1.0"

__all__ = ["TrainConfig", "default_config", "load_config", "evaluate", "init_system", "run_episode", "sweep_cues", "train"]
