"""Typed run configuration, read from and written to TOML.

Every section is a dataclass; unknown keys and wrongly typed values are
rejected with :class:`ConfigError`. ``dump_config(default_config())`` is what
``metaplastic train --print-config`` prints.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli
import tomli_w


class ConfigError(ValueError):
    pass


@dataclass
class SpikeSection:
    mode: str = "hard"
    surrogate_scale: float = 0.25
    surrogate_magnitude: float = 0.3


@dataclass
class NeuronSection:
    alpha_v: float = 0.1
    alpha_u: float = 0.3
    v_rest: float = 0.0
    u_rest: float = 0.0
    R: float = 1.0
    v_th: float = 1.0


@dataclass
class NetworkSection:
    n_hidden: int = 48
    density: float = 0.5
    inhib_frac: float = 0.2
    w_init_scale: float = 0.1
    hidden_output_scale: float = 0.1
    readout_init: float = 0.01
    nm_sizes: list = field(default_factory=lambda: [64, 64])
    nm_input_scale: float = 0.5
    nm_readout_scale: float = 0.1
    nm_gain: float = 0.03
    hidden: NeuronSection = field(default_factory=lambda: NeuronSection(alpha_v=0.1, alpha_u=0.3))
    output: NeuronSection = field(default_factory=lambda: NeuronSection(alpha_v=0.1, alpha_u=0.05, R=0.02))
    nm: NeuronSection = field(default_factory=NeuronSection)
    sensory: NeuronSection = field(default_factory=NeuronSection)


@dataclass
class PlasticitySection:
    rule: str = "pair"
    eta_plus: float = 1.0
    eta_minus: float = 1.0
    eta_granularity: str = "layer"
    mu: float = 0.0
    w_min: float = 0.0
    w_max: float = 1.0
    trace_form: str = "linear"
    alpha_pre: float = 0.9
    alpha_post: float = 0.9
    alpha_slow: float = 0.97
    beta: float = 1.0
    x_max: float = 1.0
    gamma: float = 0.99
    alpha_e: float = 1.0
    alpha_e_granularity: str = "layer"
    detach_spike_factors: bool = True
    rate_scale: float = 0.001


@dataclass
class CueSection:
    n_sensory: int = 20
    group_size: int = 5
    p_active: float = 0.75
    p_background: float = 0.15
    cue_duration: int = 25
    inter_cue_gap: int = 30
    pre_decision_gap: int = 50
    decision_duration: int = 25
    n_cues: int = 3
    n_shot: int = 1


@dataclass
class CharacterSection:
    manifest: str = ""
    present_ms: int = 20
    n_phase2: int = 5
    test_frac: float = 0.2
    image_size: int = 28
    rotations: bool = True
    synthetic_classes: int = 200
    synthetic_samples: int = 20
    synthetic_dir: str = ""
    current_scale: float = 1.0
    # what the match neuron contributes per phase-2 step: "spikes" (counts) or
    # "current" (its synaptic current u, which separates slots even when it stays silent)
    score: str = "spikes"


@dataclass
class OptimizerSection:
    name: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    # per-parameter step multipliers keyed by name prefix, e.g. {w_in = 0.05}
    lr_scale: dict = field(default_factory=dict)


@dataclass
class TrainSection:
    task: str = "cue"
    seed: int = 0
    batch_episodes: int = 64
    outer_updates: int = 1000
    chunk_episodes: int = 32
    workers: int = 1
    checkpoint_every: int = 100
    plastic: bool = True
    learn: list = field(default_factory=lambda: ["all"])


@dataclass
class TrainConfig:
    train: TrainSection = field(default_factory=TrainSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    spike: SpikeSection = field(default_factory=SpikeSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    plasticity: PlasticitySection = field(default_factory=PlasticitySection)
    cue: CueSection = field(default_factory=CueSection)
    character: CharacterSection = field(default_factory=CharacterSection)

    def validate(self) -> "TrainConfig":
        t = self.train
        if t.task not in ("cue", "character"):
            raise ConfigError(f"train.task must be 'cue' or 'character', got {t.task!r}")
        if t.batch_episodes < 1 or t.chunk_episodes < 1 or t.workers < 1:
            raise ConfigError("batch_episodes, chunk_episodes and workers must be >= 1")
        if t.outer_updates < 0:
            raise ConfigError("outer_updates must be >= 0")
        if self.optimizer.name not in ("sgd", "adam"):
            raise ConfigError(f"optimizer.name must be 'sgd' or 'adam', got {self.optimizer.name!r}")
        if not self.optimizer.learning_rate > 0:
            raise ConfigError("optimizer.learning_rate must be positive")
        for key, f in self.optimizer.lr_scale.items():
            if isinstance(f, bool) or not isinstance(f, (int, float)) or not f >= 0:
                raise ConfigError(f"optimizer.lr_scale.{key} must be a non-negative number")
        if self.spike.mode not in ("hard", "smooth"):
            raise ConfigError("spike.mode must be 'hard' or 'smooth'")
        p = self.plasticity
        if p.rule not in ("pair", "triplet"):
            raise ConfigError("plasticity.rule must be 'pair' or 'triplet'")
        if p.eta_granularity not in ("layer", "synapse") or p.alpha_e_granularity not in ("layer", "synapse"):
            raise ConfigError("granularity must be 'layer' or 'synapse'")
        if not 0.0 <= p.mu <= 1.0:
            raise ConfigError("plasticity.mu must lie in [0, 1]")
        if not p.w_min < p.w_max:
            raise ConfigError("plasticity.w_min must be below w_max")
        if not 0.0 <= p.gamma <= 1.0:
            raise ConfigError("plasticity.gamma must lie in [0, 1]")
        if p.rule == "triplet" and not p.alpha_slow > p.alpha_post:
            raise ConfigError("plasticity.alpha_slow must exceed alpha_post (slower decay)")
        if p.trace_form not in ("linear", "saturating"):
            raise ConfigError("plasticity.trace_form must be 'linear' or 'saturating'")
        n = self.network
        if n.n_hidden < 1 or not 0 <= n.density <= 1 or not 0 <= n.inhib_frac <= 1:
            raise ConfigError("network sizes/probabilities out of range")
        c = self.cue
        if c.n_cues < 1:
            raise ConfigError("cue.n_cues must be >= 1")
        if c.n_sensory != 4 * c.group_size:
            raise ConfigError("cue.n_sensory must equal 4 * cue.group_size")
        if self.character.score not in ("spikes", "current"):
            raise ConfigError("character.score must be 'spikes' or 'current'")
        for name in ("hidden", "output", "nm", "sensory"):
            s = getattr(n, name)
            if not (0 <= s.alpha_u <= 1 and 0 <= s.alpha_v <= 1) or not s.v_th > s.v_rest:
                raise ConfigError(f"network.{name} neuron constants out of range")
        return self


def default_config() -> TrainConfig:
    return TrainConfig()


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _coerce(value, current, where):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected bool, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected number, got {value!r}")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected string, got {value!r}")
        return value
    if isinstance(current, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected list, got {value!r}")
        return list(value)
    if isinstance(current, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected table, got {value!r}")
        return dict(value)
    raise ConfigError(f"{where}: unsupported field type")


def _merge(obj, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a table")
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        if key not in names:
            raise ConfigError(f"unknown config key {path!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _merge(current, value, path)
        else:
            setattr(obj, key, _coerce(value, current, path))
    return obj


def from_dict(data: dict) -> TrainConfig:
    return _merge(default_config(), data, "").validate()


def load_config(path) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads_config(text)


def loads_config(text: str) -> TrainConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_dict(data)


def dump_config(cfg: TrainConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def override(cfg: TrainConfig, **dotted: Any) -> TrainConfig:
    """Return a copy with ``section__key=value`` style overrides applied."""
    data = to_dict(cfg)
    for key, value in dotted.items():
        parts = key.split("__")
        node = data
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = value
    return from_dict(data)
