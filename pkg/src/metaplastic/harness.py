"""Episode simulation, outer-loop meta-training, evaluation and sweeps.

An *episode* is simulated from a fresh inner state: plastic weights at their
initial values and all traces zero. Its trials run back to back with state
carried across them, and only the test trial's decision window feeds the
meta-loss. Training differentiates that loss with respect to the outer-loop
parameters ω and takes an optimizer step.

Episodes are seeded from ``SeedSequence([seed, stream, ...])`` so that any
episode can be regenerated independently of batching or worker count.
Gradients are accumulated over fixed-size chunks and summed in chunk order,
which makes the result independent of how many worker processes ran them.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import ops
from .autodiff import Tape, backward, data_of
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, default_config, dump_config, from_dict, override, to_dict
from .networks import (
    ConnectivityMask,
    build_dpsnn_config,
    build_nmsnn_config,
    cnn_encode,
    dpsnn_init_state,
    dpsnn_step,
    eligibility_rates,
    init_parameters,
    learnable_names,
    nmsnn_init_state,
    nmsnn_step,
    project_parameters,
    readout,
)
from .neuron import NeuronLayerState, NeuronParams, ShapeMismatchError, step_cuba
from .tasks import (
    LEFT,
    RIGHT,
    CharacterEpisodeSpec,
    CueEpisodeSpec,
    augment_rotations,
    build_cue_episode,
    generate_character_episode,
    generate_synthetic_glyphs,
    load_dataset_manifest,
    one_hot,
    split_train_test,
)

log = logging.getLogger(__name__)

TRAIN_STREAM = 0
EVAL_STREAM = 1
INIT_STREAM = 2
SPLIT_STREAM = 3

MANIFEST_ENV = "METAPLASTIC_CHAR_MANIFEST"


class NumericDivergenceError(FloatingPointError):
    pass


class MissingGradientError(KeyError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, update: int, cause: Exception):
        super().__init__(f"update {update}: {cause}")
        self.update = update
        self.cause = cause


# == system ====================================================================================


@dataclass
class System:
    """Configured network pair plus the current outer-loop parameters."""

    cfg: TrainConfig
    params: dict
    mask: ConnectivityMask

    def __post_init__(self):
        task = self.cfg.train.task
        if task == "cue":
            self.n_input, self.n_output, nm_extra = self.cfg.cue.n_sensory, 2, 2
        else:
            self.n_input, self.n_output, nm_extra = 196, 1, 0
        w = np.shape(self.params["w_in"])
        if w[0] != self.n_input or np.shape(self.params["w_ho"])[1] != self.n_output:
            raise ShapeMismatchError(
                f"parameters ({w[0]} inputs, {np.shape(self.params['w_ho'])[1]} outputs) do not fit the "
                f"{task} task ({self.n_input} inputs, {self.n_output} outputs)"
            )
        self.dp = build_dpsnn_config(self.cfg, self.n_input, self.n_output, self.mask)
        self.nm = build_nmsnn_config(self.cfg, self.n_input + self.cfg.network.n_hidden + nm_extra, self.n_input)
        self.learn = learnable_names(self.params, self.cfg.train.learn)


def init_system(cfg: TrainConfig) -> System:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.train.seed, INIT_STREAM]))
    cue = cfg.train.task == "cue"
    params, mask = init_parameters(
        cfg,
        n_input=cfg.cue.n_sensory if cue else 196,
        n_output=2 if cue else 1,
        nm_extra=2 if cue else 0,
        rng=rng,
        with_cnn=not cue,
    )
    return System(cfg, params, mask)


def system_from_checkpoint(ck: Checkpoint, cfg: TrainConfig | None = None) -> System:
    cfg = cfg if cfg is not None else from_dict(ck.config)
    mask = ConnectivityMask(present=ck.mask_present, sign=ck.mask_sign)
    return System(cfg, dict(ck.params), mask)


# == batches ===================================================================================


@dataclass
class CueBatch:
    inputs: np.ndarray  # (B, T, N)
    feedback: np.ndarray  # (B, T, 2)
    labels: np.ndarray  # (B,)
    window: tuple

    def __len__(self):
        return len(self.labels)


@dataclass
class CharacterBatch:
    images: np.ndarray  # (B, 1 + n_phase2, 28, 28)
    targets: np.ndarray  # (B,)
    spec: CharacterEpisodeSpec

    def __len__(self):
        return len(self.targets)


def stack_cue_episodes(episodes) -> CueBatch:
    windows = {e.eval_window for e in episodes}
    if len(windows) != 1:
        raise ValueError("episodes in a batch must share their timing")
    return CueBatch(
        np.stack([e.inputs for e in episodes]),
        np.stack([e.feedback for e in episodes]),
        np.array([e.label for e in episodes]),
        windows.pop(),
    )


def stack_character_episodes(episodes) -> CharacterBatch:
    return CharacterBatch(
        np.stack([e.images for e in episodes]),
        np.array([e.target for e in episodes]),
        episodes[0].spec,
    )


_DATA_CACHE: dict = {}


def character_data(cfg: TrainConfig):
    """Load (and cache) the train/test class splits for the character task.

    Uses ``character.manifest`` or the ``METAPLASTIC_CHAR_MANIFEST``
    environment variable; with neither set, a synthetic glyph set is generated
    (once) under ``character.synthetic_dir`` or the user cache directory.
    """
    ch = cfg.character
    manifest = ch.manifest or os.environ.get(MANIFEST_ENV, "")
    if not manifest:
        root = Path(ch.synthetic_dir) if ch.synthetic_dir else (
            Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "metaplastic"
        )
        d = root / f"glyphs-c{ch.synthetic_classes}-s{ch.synthetic_samples}"
        manifest = d / "manifest.txt"
        if not manifest.is_file():
            generate_synthetic_glyphs(d, ch.synthetic_classes, ch.synthetic_samples, seed=0)
    key = (str(manifest), ch.rotations, ch.test_frac, cfg.train.seed)
    if key not in _DATA_CACHE:
        idx = load_dataset_manifest(manifest, ch.image_size)
        if ch.rotations:
            idx = augment_rotations(idx)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.train.seed, SPLIT_STREAM]))
        _DATA_CACHE[key] = split_train_test(idx, ch.test_frac, rng)
    return _DATA_CACHE[key]


def episode_seed(seed: int, stream: int, *index) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(stream), *(int(i) for i in index)])


def make_batch(cfg: TrainConfig, seeds, split: str = "train", M: int | None = None):
    """Generate one batch of episodes, one per seed."""
    if cfg.train.task == "cue":
        spec = CueEpisodeSpec.from_config(cfg.cue, M)
        return stack_cue_episodes([build_cue_episode(spec, cfg.cue.n_shot == 1, np.random.default_rng(s)) for s in seeds])
    train, test = character_data(cfg)
    idx = train if split == "train" else test
    spec = CharacterEpisodeSpec(cfg.character.present_ms, cfg.character.n_phase2)
    return stack_character_episodes([generate_character_episode(idx, spec, np.random.default_rng(s)) for s in seeds])


# == simulation ================================================================================


@dataclass
class EpisodeResult:
    loss: object  # scalar, Value on the gradient path
    scores: np.ndarray
    predictions: np.ndarray
    correct: np.ndarray
    summary: dict = field(default_factory=dict)


def _nm_closure(system, P, holder, s_in, extra, gain):
    def nm_fn(hs):
        parts = [s_in, hs] + ([extra] if extra is not None else [])
        sig, holder["nm"] = nmsnn_step(holder["nm"], ops.concat(parts, axis=-1), P, system.nm, gain)
        holder["nm_spikes"] = holder.get("nm_spikes", 0.0) + float(np.mean(data_of(holder["nm"].layers[-1].s)))
        holder["nm_steps"] = holder.get("nm_steps", 0) + 1
        return sig

    return nm_fn


def _summary(spikes_h, spikes_o, steps, W0, W, holder):
    return {
        "nm_rate": holder.get("nm_spikes", 0.0) / max(holder.get("nm_steps", 0), 1),
        "hidden_rate": spikes_h / steps,
        "output_rate": spikes_o / steps,
        "weight_drift": float(np.mean(np.abs(data_of(W) - data_of(W0)))),
    }


def simulate_cue(system: System, P, batch: CueBatch, plastic=True, nm_gain=1.0, observer: Callable | None = None):
    """Run a batch of cue episodes; returns ``(scores, summary)``."""
    B, T, N = batch.inputs.shape
    if N != system.n_input:
        raise ShapeMismatchError(f"episode has {N} sensory channels, network expects {system.n_input}")
    state = dpsnn_init_state(B, P, system.dp)
    W0 = state.W
    rates = eligibility_rates(P, system.dp) if plastic else None
    holder = {"nm": nmsnn_init_state(B, system.nm)}
    gain = system.cfg.network.nm_gain * nm_gain
    w0, w1 = batch.window
    window = []
    sh = so = 0.0
    for t in range(T):
        s_in = batch.inputs[:, t]
        nm_fn = _nm_closure(system, P, holder, s_in, batch.feedback[:, t], gain) if plastic else None
        hs, os_, state, mod = dpsnn_step(state, s_in, None, P, system.dp, rates, plastic, nm_fn)
        if observer is not None:
            observer(t, state, mod)
        if w0 <= t < w1:
            window.append(os_)
        sh += float(np.mean(data_of(hs)))
        so += float(np.mean(data_of(os_)))
    return readout(window, P["readout"]), _summary(sh, so, T, W0, state.W, holder)


def simulate_character(system: System, P, batch: CharacterBatch, plastic=True, nm_gain=1.0,
                       observer: Callable | None = None):
    """Run a batch of character episodes; returns ``(slot scores (B, n_phase2), summary)``."""
    spec = batch.spec
    B, n_img = batch.images.shape[:2]
    cur = cnn_encode(batch.images.reshape(B * n_img, *batch.images.shape[2:]), P)
    cur = ops.mul(ops.reshape(cur, (B, n_img, -1)), system.cfg.character.current_scale)
    currents = [ops.apply("getitem", cur, idx=(slice(None), k)) for k in range(n_img)]
    sens_p = NeuronParams(**vars(system.cfg.network.sensory))
    sens = NeuronLayerState.rest((B, system.n_input), sens_p)
    state = dpsnn_init_state(B, P, system.dp)
    W0 = state.W
    rates = eligibility_rates(P, system.dp) if plastic else None
    holder = {"nm": nmsnn_init_state(B, system.nm)}
    gain = system.cfg.network.nm_gain * nm_gain
    m0, m1 = 0, spec.present_ms
    slots = [[] for _ in range(spec.n_phase2)]
    use_spikes = system.cfg.character.score == "spikes"
    sh = so = 0.0
    for t in range(spec.length):
        k = t // spec.present_ms
        sens = step_cuba(sens, currents[k], sens_p, system.dp.spike)
        s_in = sens.s
        active = plastic and m0 <= t < m1
        nm_fn = _nm_closure(system, P, holder, s_in, None, gain) if active else None
        hs, os_, state, mod = dpsnn_step(state, s_in, None, P, system.dp, rates, active, nm_fn)
        if observer is not None:
            observer(t, state, mod)
        if k >= 1:
            slots[k - 1].append(os_ if use_spikes else state.output.u)
        sh += float(np.mean(data_of(hs)))
        so += float(np.mean(data_of(os_)))
    scores = ops.concat([readout(s, P["readout"]) for s in slots], axis=-1)
    return scores, _summary(sh, so, spec.length, W0, state.W, holder)


def _bind(system: System, tape: Tape | None):
    if tape is None:
        return dict(system.params)
    P = dict(system.params)
    for name in system.learn:
        P[name] = tape.parameter(name, system.params[name])
    return P


def run_batch(system: System, batch, P=None, plastic=None, nm_gain=1.0, observer=None) -> EpisodeResult:
    """Simulate a batch and compute the summed meta-loss and predictions.

    ``P`` defaults to the system's parameters (no tape). ``plastic`` defaults
    to ``cfg.train.plastic``; ``False`` runs the non-plastic ablation.
    """
    P = dict(system.params) if P is None else P
    plastic = system.cfg.train.plastic if plastic is None else plastic
    if isinstance(batch, CueBatch):
        scores, summary = simulate_cue(system, P, batch, plastic, nm_gain, observer)
        losses = ops.bce_with_logits(scores, one_hot(batch.labels, 2))
        sd = np.asarray(data_of(scores))
        pred = np.where(sd[:, RIGHT] > sd[:, LEFT], RIGHT, LEFT)
        summary["ties"] = int(np.sum(sd[:, RIGHT] == sd[:, LEFT]))
        correct = pred == batch.labels
    else:
        scores, summary = simulate_character(system, P, batch, plastic, nm_gain, observer)
        losses = ops.softmax_cross_entropy(scores, batch.targets)
        sd = np.asarray(data_of(scores))
        pred = np.argmax(sd, axis=-1)
        summary["ties"] = int(np.sum(np.sum(sd == sd.max(axis=-1, keepdims=True), axis=-1) > 1))
        correct = pred == batch.targets
    return EpisodeResult(ops.sum_(losses), sd, pred, correct, summary)


def run_episode(system: System, episode, mode: str = "eval", plastic=None):
    """Run a single episode in ``"eval"`` or ``"train-grad"`` mode.

    Returns ``(loss, prediction, summary)``; in train-grad mode the summary
    also carries the gradients under ``"grads"``.
    """
    if mode not in ("eval", "train-grad"):
        raise ValueError(f"mode must be 'eval' or 'train-grad', got {mode!r}")
    batch = stack_cue_episodes([episode]) if hasattr(episode, "trials") else stack_character_episodes([episode])
    tape = Tape() if mode == "train-grad" else None
    res = run_batch(system, batch, _bind(system, tape), plastic)
    summary = dict(res.summary)
    if tape is not None:
        summary["grads"] = backward(res.loss)
    return float(data_of(res.loss)), int(res.predictions[0]), summary


def chunk_gradients(system: System, batch, with_grad=True):
    """Summed loss, gradients and correct count for one chunk."""
    tape = Tape() if with_grad else None
    res = run_batch(system, batch, _bind(system, tape))
    grads = backward(res.loss) if with_grad else {}
    return float(data_of(res.loss)), grads, int(np.sum(res.correct)), res.summary


# == optimisation ==============================================================================


@dataclass
class OptimizerState:
    name: str = "adam"
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_arrays(self) -> dict:
        out = {f"m/{k}": a for k, a in self.m.items()}
        out.update({f"v/{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def from_arrays(cls, name, step, arrays) -> "OptimizerState":
        st = cls(name, step)
        for key, a in arrays.items():
            kind, pname = key.split("/", 1)
            getattr(st, kind)[pname] = np.array(a)
        return st


def _step_scale(name: str, lr_scale) -> float:
    """Multiplier for ``name`` from the longest matching prefix in ``lr_scale``."""
    best, factor = -1, 1.0
    for prefix, f in (lr_scale or {}).items():
        if name.startswith(prefix) and len(prefix) > best:
            best, factor = len(prefix), float(f)
    return factor


def outer_update(params, grads, state: OptimizerState, lr: float, names=None, beta1=0.9, beta2=0.999, eps=1e-8,
                 lr_scale=None):
    """One outer-loop step. ``names`` defaults to the keys of ``grads``.

    sgd: ``w - lr * g``. adam: bias-corrected first/second moment update.
    ``lr_scale`` maps parameter-name prefixes to step multipliers; Adam's step
    is roughly ``lr`` per element whatever the parameter's magnitude, so small
    weights need a smaller multiplier to move at a comparable relative rate.
    """
    names = list(grads) if names is None else list(names)
    missing = [n for n in names if n not in grads]
    if missing:
        raise MissingGradientError(f"no gradient for parameter(s) {missing}")
    out = dict(params)
    if state.name == "sgd":
        for n in names:
            out[n] = params[n] - lr * _step_scale(n, lr_scale) * grads[n]
        state.step += 1
        return out, state
    if state.name != "adam":
        raise ValueError(f"unknown optimizer {state.name!r}")
    state.step += 1
    t = state.step
    for n in names:
        g = np.asarray(grads[n], dtype=np.float64)
        m = state.m.get(n, np.zeros_like(g))
        v = state.v.get(n, np.zeros_like(g))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[n], state.v[n] = m, v
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        out[n] = params[n] - lr * _step_scale(n, lr_scale) * mhat / (np.sqrt(vhat) + eps)
    return out, state


# == training ==================================================================================


@dataclass
class MetricsRecord:
    update: int
    loss: float
    accuracy: float
    grad_norm: float
    wall_time: float
    hidden_rate: float = 0.0
    output_rate: float = 0.0

    def to_json(self) -> str:
        return json.dumps(vars(self), sort_keys=True)


def _chunk_seeds(cfg: TrainConfig, update: int):
    B, C = cfg.train.batch_episodes, cfg.train.chunk_episodes
    seeds = [episode_seed(cfg.train.seed, TRAIN_STREAM, update, e) for e in range(B)]
    return [seeds[i : i + C] for i in range(0, B, C)]


def _worker_chunk(cfg_dict, params, present, sign, seeds, split, with_grad, M=None):
    cfg = from_dict(cfg_dict)
    system = System(cfg, params, ConnectivityMask(present, sign))
    batch = make_batch(cfg, seeds, split, M)
    loss, grads, correct, summary = chunk_gradients(system, batch, with_grad)
    return loss, grads, correct, summary, len(seeds)


class _Runner:
    """Runs chunks inline or on a process pool, always returning them in order."""

    def __init__(self, workers: int):
        self.workers = workers
        self.pool = ProcessPoolExecutor(workers) if workers > 1 else None

    def map(self, system: System, chunks, split, with_grad, M=None):
        args = (to_dict(system.cfg), system.params, system.mask.present, system.mask.sign)
        if self.pool is None:
            return [_worker_chunk(*args, c, split, with_grad, M) for c in chunks]
        futs = [self.pool.submit(_worker_chunk, *args, c, split, with_grad, M) for c in chunks]
        return [f.result() for f in futs]

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def batch_gradient(system: System, update: int, runner: _Runner | None = None):
    """Mean meta-loss, mean gradients and batch accuracy for one outer update."""
    cfg = system.cfg
    runner = runner or _Runner(1)
    results = runner.map(system, _chunk_seeds(cfg, update), "train", True)
    B = cfg.train.batch_episodes
    loss = sum(r[0] for r in results) / B
    grads = {n: sum(r[1][n] for r in results) / B for n in system.learn}
    acc = sum(r[2] for r in results) / B
    hr = sum(r[3]["hidden_rate"] * r[4] for r in results) / B
    orate = sum(r[3]["output_rate"] * r[4] for r in results) / B
    return loss, grads, acc, {"hidden_rate": hr, "output_rate": orate}


def _clip_grads(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        grads = {k: g * (max_norm / norm) for k, g in grads.items()}
    return grads, norm


def make_checkpoint(system: System, update: int, opt: OptimizerState) -> Checkpoint:
    return Checkpoint(
        config=to_dict(system.cfg),
        params={k: np.asarray(v, dtype=np.float64) for k, v in system.params.items()},
        update=update,
        rng={"seed": system.cfg.train.seed, "streams": "SeedSequence([seed, stream, ...])"},
        optimizer=opt.to_arrays(),
        optimizer_step=opt.step,
        mask_present=system.mask.present,
        mask_sign=system.mask.sign,
    )


def train(cfg: TrainConfig, out_dir=None, resume=None, stop_after: int | None = None,
          metrics_sink: Callable | None = None):
    """Meta-train ω; returns ``(system, checkpoint, metrics)``.

    Args:
        cfg: validated configuration.
        out_dir: when given, receives ``metrics.jsonl``, ``metrics.csv``,
            periodic ``ckpt_<update>.bin`` files and ``final.bin``.
        resume: checkpoint (or path) to continue from.
        stop_after: stop once this many updates are complete (for simulating
            an interruption); the checkpoint for that point is returned.
        metrics_sink: called with every :class:`MetricsRecord`.
    """
    cfg.validate()
    if resume is not None:
        ck = load_checkpoint(resume) if isinstance(resume, (str, os.PathLike)) else resume
        system = system_from_checkpoint(ck, cfg)
        opt = OptimizerState.from_arrays(cfg.optimizer.name, ck.optimizer_step, ck.optimizer)
        start = ck.update
    else:
        system = init_system(cfg)
        opt = OptimizerState(cfg.optimizer.name)
        start = 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.toml").write_text(dump_config(cfg))
    runner = _Runner(cfg.train.workers)
    metrics = []
    end = cfg.train.outer_updates if stop_after is None else min(cfg.train.outer_updates, stop_after)
    o = cfg.optimizer
    try:
        for u in range(start, end):
            t0 = time.perf_counter()
            try:
                loss, grads, acc, rates = batch_gradient(system, u, runner)
            except Exception as exc:  # attach the update index
                raise TrainingError(u, exc) from exc
            grads, gnorm = _clip_grads(grads, o.grad_clip)
            if not (math.isfinite(loss) and math.isfinite(gnorm)):
                raise NumericDivergenceError(f"non-finite loss or gradient at update {u}")
            new, opt = outer_update(system.params, grads, opt, o.learning_rate, system.learn, o.beta1, o.beta2, o.eps,
                                     o.lr_scale)
            system.params = project_parameters(new, cfg, system.mask)
            rec = MetricsRecord(u, loss, acc, gnorm, time.perf_counter() - t0, rates["hidden_rate"], rates["output_rate"])
            metrics.append(rec)
            if metrics_sink is not None:
                metrics_sink(rec)
            if out is not None:
                with open(out / "metrics.jsonl", "a") as fh:
                    fh.write(rec.to_json() + "\n")
                csv_path = out / "metrics.csv"
                new_file = not csv_path.exists()
                with open(csv_path, "a") as fh:
                    if new_file:
                        fh.write("update,loss,accuracy,grad_norm,wall_time\n")
                    fh.write(f"{u},{loss!r},{acc!r},{gnorm!r},{rec.wall_time:.3f}\n")
                every = cfg.train.checkpoint_every
                if every > 0 and (u + 1) % every == 0:
                    save_checkpoint(make_checkpoint(system, u + 1, opt), out / f"ckpt_{u + 1:06d}.bin")
    finally:
        runner.close()
    ck = make_checkpoint(system, end, opt)
    if out is not None and end == cfg.train.outer_updates:
        save_checkpoint(ck, out / "final.bin")
    return system, ck, metrics


# == evaluation ================================================================================


@dataclass
class EvalResult:
    accuracy: float
    ci_low: float
    ci_high: float
    n: int
    n_correct: int
    ties: int = 0
    mean_loss: float = 0.0

    @property
    def error(self) -> float:
        return 1.0 - self.accuracy

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2.0


def wilson_interval(k: int, n: int, confidence: float = 0.95):
    from scipy.stats import binomtest

    ci = binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def evaluate(source, n_episodes: int, cfg: TrainConfig | None = None, seed: int | None = None, M: int | None = None,
             plastic=None, workers: int = 1, chunk: int = 100, nm_gain: float = 1.0) -> EvalResult:
    """Accuracy on fresh test episodes with a 95% Wilson interval.

    Args:
        source: a :class:`System` or :class:`Checkpoint` (or path).
        n_episodes: number of test episodes (> 0).
        cfg: task configuration overriding the checkpoint's (e.g. a new M).
        seed: evaluation seed; defaults to the config seed.
        M: cue count override for the cue task.
        plastic: ``False`` evaluates the non-plastic ablation.
    """
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    if isinstance(source, System):
        system = source if cfg is None else System(cfg, source.params, source.mask)
    else:
        ck = load_checkpoint(source) if isinstance(source, (str, os.PathLike)) else source
        system = system_from_checkpoint(ck, cfg)
    if plastic is not None and plastic != system.cfg.train.plastic:
        system = System(override(system.cfg, train__plastic=bool(plastic)), system.params, system.mask)
    cfg = system.cfg
    if M is not None and cfg.train.task != "cue":
        raise ValueError("M applies to the cue task only")
    seed = cfg.train.seed if seed is None else seed
    tag = M if M is not None else cfg.cue.n_cues
    seeds = [episode_seed(seed, EVAL_STREAM, tag, i) for i in range(n_episodes)]
    chunks = [seeds[i : i + chunk] for i in range(0, n_episodes, chunk)]
    correct = ties = 0
    loss = 0.0
    if workers > 1 and nm_gain == 1.0:
        runner = _Runner(workers)
        try:
            res = runner.map(system, chunks, "test", False, M)
        finally:
            runner.close()
        for r in res:
            loss += r[0]
            correct += r[2]
            ties += r[3]["ties"]
    else:
        for c in chunks:
            batch = make_batch(cfg, c, "test", M)
            r = run_batch(system, batch, nm_gain=nm_gain)
            loss += float(data_of(r.loss))
            correct += int(np.sum(r.correct))
            ties += r.summary["ties"]
    lo, hi = wilson_interval(correct, n_episodes)
    return EvalResult(correct / n_episodes, lo, hi, n_episodes, correct, ties, loss / n_episodes)


def sweep_cues(source, m_values, n_episodes: int, csv_path=None, seed: int | None = None, workers: int = 1):
    """Evaluate a cue-task checkpoint at several cue counts; optional CSV output."""
    rows = []
    for M in m_values:
        if M < 1:
            raise ValueError(f"cue count must be >= 1, got {M}")
        r = evaluate(source, n_episodes, seed=seed, M=M, workers=workers)
        rows.append({"M": M, "accuracy": r.accuracy, "ci_low": r.ci_low, "ci_high": r.ci_high, "n": r.n})
    if csv_path is not None:
        with open(csv_path, "w") as fh:
            fh.write("M,accuracy,ci_low,ci_high,n\n")
            for row in rows:
                fh.write(f"{row['M']},{row['accuracy']!r},{row['ci_low']!r},{row['ci_high']!r},{row['n']}\n")
    return rows


__all__ = [
    "System",
    "init_system",
    "system_from_checkpoint",
    "run_episode",
    "run_batch",
    "outer_update",
    "train",
    "evaluate",
    "sweep_cues",
    "default_config",
]
