"""Episode generators for the two one-shot experiments.

Cue association: twenty sensory neurons split into right-cue, left-cue,
decision and noise groups, hidden behind a fresh random permutation in every
episode. A trial presents ``M`` cues, each followed by a gap, then a
pre-decision gap and a decision window; the label is the side holding the
majority of cues.

Character matching: one phase-1 image followed by five phase-2 images, one of
which shares the phase-1 class. Images come from a manifest of 8-bit PGM
files; :func:`generate_synthetic_glyphs` writes such a dataset when no real
handwriting corpus is available.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .autodiff import data_of

RIGHT = 0
LEFT = 1
SIDE_NAMES = {"right": RIGHT, "left": LEFT}
GROUPS = ("right", "left", "decision", "noise")


class InvalidCueCountError(ValueError):
    pass


class ProbabilityDomainError(ValueError):
    pass


class DatasetError(Exception):
    """Base class for dataset ingestion failures (CLI exit code 3)."""


class MissingFileError(DatasetError, FileNotFoundError):
    pass


class MalformedManifestError(DatasetError, ValueError):
    pass


class UndecodableImageError(DatasetError, ValueError):
    pass


class InsufficientClassesError(DatasetError, ValueError):
    pass


# == cue association ===========================================================================


@dataclass(frozen=True)
class CueEpisodeSpec:
    n_sensory: int = 20
    group_size: int = 5
    p_active: float = 0.75
    p_background: float = 0.15
    cue_duration: int = 25
    inter_cue_gap: int = 30
    pre_decision_gap: int = 50
    decision_duration: int = 25
    M: int = 5
    n_shot: int = 1

    def __post_init__(self):
        if self.M < 1:
            raise InvalidCueCountError(f"cue count M must be >= 1, got {self.M}")
        if self.n_sensory != 4 * self.group_size:
            raise ValueError("n_sensory must be four groups of group_size")

    @classmethod
    def from_config(cls, section, M: int | None = None) -> "CueEpisodeSpec":
        return cls(
            n_sensory=section.n_sensory,
            group_size=section.group_size,
            p_active=section.p_active,
            p_background=section.p_background,
            cue_duration=section.cue_duration,
            inter_cue_gap=section.inter_cue_gap,
            pre_decision_gap=section.pre_decision_gap,
            decision_duration=section.decision_duration,
            M=section.n_cues if M is None else M,
            n_shot=section.n_shot,
        )

    @property
    def decision_start(self) -> int:
        return self.M * (self.cue_duration + self.inter_cue_gap) + self.pre_decision_gap

    @property
    def trial_length(self) -> int:
        """Every cue is followed by a gap, then the pre-decision gap and decision window."""
        return self.decision_start + self.decision_duration

    def group(self, name: str) -> range:
        k = GROUPS.index(name)
        return range(k * self.group_size, (k + 1) * self.group_size)


@dataclass
class CueTrial:
    raster: np.ndarray  # (T, n_sensory) of {0, 1}
    feedback: np.ndarray  # (T, 2), channels [right, left]
    label: int  # RIGHT or LEFT
    sides: tuple  # cue side sequence
    is_test: bool = False


@dataclass
class CueEpisode:
    permutation: np.ndarray
    trials: list
    spec: CueEpisodeSpec
    eval_window: tuple = field(default=(0, 0))

    @property
    def inputs(self) -> np.ndarray:
        return np.concatenate([t.raster for t in self.trials], axis=0)

    @property
    def feedback(self) -> np.ndarray:
        return np.concatenate([t.feedback for t in self.trials], axis=0)

    @property
    def test_trial(self) -> CueTrial:
        return next(t for t in self.trials if t.is_test)

    @property
    def label(self) -> int:
        return self.test_trial.label


def sample_permutation(rng, n: int = 20) -> np.ndarray:
    """Uniform random permutation: logical channel ``k`` is physical neuron ``perm[k]``."""
    return np.random.default_rng(rng).permutation(n)


def _sample_sides(M: int, side: int, rng) -> tuple:
    # uniform over cue sequences whose strict majority is ``side``
    while True:
        seq = rng.integers(0, 2, size=M)
        if np.sum(seq == side) * 2 > M:
            return tuple(int(s) for s in seq)


def cue_rate_schedule(sides, spec: CueEpisodeSpec) -> np.ndarray:
    """Firing probabilities ``(T, n_sensory)`` in logical (unpermuted) channel order."""
    T = spec.trial_length
    rates = np.full((T, spec.n_sensory), spec.p_background)
    period = spec.cue_duration + spec.inter_cue_gap
    for c, s in enumerate(sides):
        group = spec.group("right" if s == RIGHT else "left")
        rates[c * period : c * period + spec.cue_duration, group.start : group.stop] = spec.p_active
    d = spec.group("decision")
    rates[spec.decision_start : T, d.start : d.stop] = spec.p_active
    return rates


def generate_cue_trial(perm, side, spec: CueEpisodeSpec, rng, train: bool = True) -> CueTrial:
    """Sample one trial's spike raster and feedback schedule.

    Args:
        perm: physical index for every logical channel.
        side: ``"left"``/``"right"`` or :data:`LEFT`/:data:`RIGHT`.
        spec: timing and rates.
        rng: numpy Generator.
        train: training trials carry one-hot feedback in the decision window.
    """
    if spec.M < 1:
        raise InvalidCueCountError("cue count M must be >= 1")
    side = SIDE_NAMES[side] if isinstance(side, str) else int(side)
    sides = _sample_sides(spec.M, side, rng)
    logical = (rng.random((spec.trial_length, spec.n_sensory)) < cue_rate_schedule(sides, spec)).astype(np.float64)
    raster = np.zeros_like(logical)
    raster[:, np.asarray(perm)] = logical
    feedback = np.zeros((spec.trial_length, 2))
    if train:
        feedback[spec.decision_start :, side] = 1.0
    return CueTrial(raster, feedback, side, sides, is_test=not train)


def build_cue_episode(spec: CueEpisodeSpec, one_shot: bool = True, rng=None) -> CueEpisode:
    """Fresh permutation, shuffled training trials (both sides), then one test trial."""
    rng = np.random.default_rng(rng)
    perm = sample_permutation(rng, spec.n_sensory)
    n_shot = 1 if one_shot else spec.n_shot
    sides = [RIGHT, LEFT] * n_shot
    rng.shuffle(sides)
    trials = [generate_cue_trial(perm, s, spec, rng, train=True) for s in sides]
    test_side = int(rng.integers(0, 2))
    trials.append(generate_cue_trial(perm, test_side, spec, rng, train=False))
    start = (len(trials) - 1) * spec.trial_length + spec.decision_start
    return CueEpisode(perm, trials, spec, (start, start + spec.decision_duration))


def meta_loss_bce(p, y):
    """Two-class binary cross entropy on probabilities, summed over classes.

    Raises :class:`ProbabilityDomainError` unless every ``p`` lies strictly
    inside (0, 1).
    """
    pd = np.asarray(data_of(p), dtype=np.float64)
    if np.any(~np.isfinite(pd)) or np.any(pd <= 0.0) or np.any(pd >= 1.0):
        raise ProbabilityDomainError("probabilities must lie strictly inside (0, 1)")
    yd = np.asarray(y, dtype=np.float64)
    pos = ops.mul(yd, ops.log(p))
    neg = ops.mul(1.0 - yd, ops.log(ops.sub(1.0, p)))
    return ops.neg(ops.sum_(ops.add(pos, neg), axis=-1))


def one_hot(labels, n: int = 2) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    return np.eye(n)[labels]


def export_raster_csv(raster, path) -> None:
    """Write a ``(T, N)`` raster as ``step,neuron,spike`` rows."""
    raster = np.asarray(raster)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "neuron", "spike"])
        for t in range(raster.shape[0]):
            for n in range(raster.shape[1]):
                w.writerow([t, n, int(raster[t, n])])


# == images ====================================================================================


def read_pgm(path) -> np.ndarray:
    """Decode a binary 8-bit PGM (P5) file into a ``uint8`` array."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise MissingFileError(f"image file not found: {path}") from exc
    tokens = []
    pos = 0
    try:
        while len(tokens) < 4:
            while raw[pos : pos + 1].isspace():
                pos += 1
            if raw[pos : pos + 1] == b"#":
                while raw[pos : pos + 1] not in (b"\n", b""):
                    pos += 1
                continue
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            if start == pos:
                raise IndexError
            tokens.append(raw[start:pos])
        pos += 1  # single whitespace before the raster
        if tokens[0] != b"P5":
            raise UndecodableImageError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
        width, height, maxval = (int(t) for t in tokens[1:])
    except (IndexError, ValueError) as exc:
        if isinstance(exc, UndecodableImageError):
            raise
        raise UndecodableImageError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise UndecodableImageError(f"{path}: unsupported bit depth (maxval {maxval}, expected 255)")
    data = raw[pos : pos + width * height]
    if len(data) != width * height:
        raise UndecodableImageError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, image) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + img.tobytes())


def normalize_image(pixels: np.ndarray, side: int = 28) -> np.ndarray:
    """Bilinear-resize to ``side`` x ``side`` and invert so the white background is 0."""
    from PIL import Image

    img = Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L")
    if img.size != (side, side):
        img = img.resize((side, side), Image.BILINEAR)
    return (1.0 - np.asarray(img, dtype=np.float32) / 255.0).astype(np.float32)


@dataclass
class CharacterClass:
    class_id: str
    paths: list
    images: np.ndarray  # (n, 28, 28) float32 in [0, 1]


@dataclass
class DatasetIndex:
    classes: list
    split: str = "all"

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def class_ids(self) -> list:
        return [c.class_id for c in self.classes]


def load_dataset_manifest(path, side: int = 28) -> DatasetIndex:
    """Read a ``class-id path`` manifest and decode every referenced image.

    Paths are resolved relative to the manifest's directory. Blank lines and
    lines starting with ``#`` are ignored.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    order: list[str] = []
    members: dict[str, list] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise MalformedManifestError(f"{path}:{lineno}: expected 'class-id path', got {line!r}")
        cid, rel = parts
        if cid not in members:
            members[cid] = []
            order.append(cid)
        members[cid].append(path.parent / rel)
    if not order:
        raise MalformedManifestError(f"{path}: manifest lists no images")
    classes = []
    for cid in order:
        imgs = np.stack([normalize_image(read_pgm(p), side) for p in members[cid]])
        classes.append(CharacterClass(cid, [str(p) for p in members[cid]], imgs))
    return DatasetIndex(classes)


def augment_rotations(idx: DatasetIndex) -> DatasetIndex:
    """Add 90/180/270 degree rotations of every class as new classes."""
    out = []
    for c in idx.classes:
        for k in range(4):
            imgs = np.ascontiguousarray(np.rot90(c.images, k=k, axes=(1, 2)))
            out.append(CharacterClass(f"{c.class_id}@rot{90 * k}", list(c.paths), imgs))
    return DatasetIndex(out, idx.split)


def split_train_test(idx: DatasetIndex, test_frac: float = 0.2, rng=None):
    """Class-level split; the test set gets ``floor(n * test_frac)`` classes."""
    if not 0.0 < test_frac < 1.0:
        raise ValueError("test_frac must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    n = len(idx.classes)
    n_test = int(np.floor(n * test_frac + 1e-9))
    order = rng.permutation(n)
    test = sorted(order[:n_test])
    train = sorted(order[n_test:])
    return (
        DatasetIndex([idx.classes[i] for i in train], "train"),
        DatasetIndex([idx.classes[i] for i in test], "test"),
    )


@dataclass(frozen=True)
class CharacterEpisodeSpec:
    present_ms: int = 20
    n_phase2: int = 5

    @property
    def length(self) -> int:
        return self.present_ms * (1 + self.n_phase2)

    def slot_window(self, k: int) -> tuple:
        start = self.present_ms * (1 + k)
        return start, start + self.present_ms


@dataclass
class CharacterEpisode:
    images: np.ndarray  # (1 + n_phase2, 28, 28): phase-1 image first
    target: int  # phase-2 slot holding the matching class
    class_ids: tuple
    spec: CharacterEpisodeSpec

    @property
    def modulation_window(self) -> tuple:
        return 0, self.spec.present_ms


def generate_character_episode(idx: DatasetIndex, spec: CharacterEpisodeSpec, rng) -> CharacterEpisode:
    """Pick ``n_phase2`` distinct classes; the first is also shown in phase 1.

    When the matching class has more than one sample, phase 1 and the match
    use different drawings.
    """
    rng = np.random.default_rng(rng)
    if len(idx.classes) < spec.n_phase2:
        raise InsufficientClassesError(f"need at least {spec.n_phase2} classes, have {len(idx.classes)}")
    chosen = rng.choice(len(idx.classes), size=spec.n_phase2, replace=False)
    target = int(rng.integers(spec.n_phase2))
    slots = list(chosen[1:])
    slots.insert(target, chosen[0])
    match = idx.classes[chosen[0]]
    if len(match.images) > 1:
        a, b = rng.choice(len(match.images), size=2, replace=False)
    else:
        a = b = 0
    images = [match.images[a]]
    for k, ci in enumerate(slots):
        c = idx.classes[ci]
        images.append(match.images[b] if k == target else c.images[rng.integers(len(c.images))])
    return CharacterEpisode(
        np.stack(images).astype(np.float64),
        target,
        tuple(idx.classes[i].class_id for i in slots),
        spec,
    )


# == synthetic glyphs ==========================================================================


def _glyph_strokes(rng):
    strokes = []
    for _ in range(rng.integers(2, 5)):
        n = rng.integers(2, 5)
        pts = [rng.uniform(0.15, 0.85, size=2)]
        for _ in range(n - 1):
            step = rng.normal(0.0, 0.25, size=2)
            pts.append(np.clip(pts[-1] + step, 0.1, 0.9))
        strokes.append(np.array(pts))
    return strokes


def _render(strokes, size, rng, jitter):
    from PIL import Image, ImageDraw

    img = Image.new("L", (size, size), 255)
    draw = ImageDraw.Draw(img)
    theta = rng.normal(0.0, 0.08)
    scale = 1.0 + rng.normal(0.0, 0.05)
    shift = rng.normal(0.0, 0.03, size=2)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    width = max(2, int(round(size / 14 + rng.normal(0.0, 0.5))))
    for pts in strokes:
        p = pts + rng.normal(0.0, jitter, size=pts.shape)
        p = (p - 0.5) @ rot.T * scale + 0.5 + shift
        xy = [tuple(q) for q in np.clip(p, 0.02, 0.98) * (size - 1)]
        draw.line(xy, fill=0, width=width, joint="curve")
    return np.asarray(img, dtype=np.uint8)


def generate_synthetic_glyphs(out_dir, n_classes: int = 200, n_samples: int = 20, seed: int = 0,
                              size: int = 56, jitter: float = 0.025) -> Path:
    """Write a handwriting-like stroke dataset as PGM files plus a manifest.

    Each class is a random set of 2-4 polyline strokes; each sample re-draws it
    with point jitter, a small random rotation/scale/shift and stroke width
    noise. Black ink on white, like scanned characters. Returns the manifest
    path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for c in range(n_classes):
        strokes = _glyph_strokes(rng)
        cdir = out / f"g{c:04d}"
        cdir.mkdir(exist_ok=True)
        for k in range(n_samples):
            rel = f"g{c:04d}/{k:02d}.pgm"
            write_pgm(out / rel, _render(strokes, size, rng, jitter))
            lines.append(f"g{c:04d} {rel}")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
