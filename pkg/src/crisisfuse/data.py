"""Corpus model, dataset IO, protocol splits, synthetic data.

A sample is an (image, text) pair annotated per modality: each side
carries its own class label, and the two may disagree. The four
evaluation protocols differ in how such inconsistent pairs are handled:

    A  train/dev/test on label-consistent pairs only
    B  like A, but inconsistent pairs join the training set and are
       flagged for forced text-side embedding swaps
    C  cross-event: train on events that finished before the test event
       started; test on the held-out event's consistent pairs
    D  random split with no consistency filter, dual-head evaluation
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime

import numpy as np

from .kernel import Rng


class ProtocolError(Exception):
    """A split request that violates its protocol's preconditions."""


@dataclass
class Sample:
    id: str
    label_image: str
    label_text: str
    event: str
    timestamp: datetime
    text: str | None = None
    image: np.ndarray | None = None
    image_vec: np.ndarray | None = None
    text_vec: np.ndarray | None = None

    @property
    def consistent(self) -> bool:
        return self.label_image == self.label_text


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    classes: tuple[str, ...]
    merges: dict[str, str] = field(default_factory=dict)
    text_follows_image: bool = False


# Task 1: is the pair informative at all. Task 2: humanitarian category,
# with the two person-centred source labels folded into one class before
# any splitting. Task 3: damage severity, annotated on images only; the
# text side inherits the image label for protocol bookkeeping.
TASKS: dict[int, TaskSpec] = {
    1: TaskSpec(1, ("informative", "not_informative")),
    2: TaskSpec(
        2,
        (
            "infrastructure_damage",
            "vehicle_damage",
            "rescue_volunteering_donation",
            "affected_individuals",
            "other_relevant",
        ),
        merges={
            "injured_or_dead_people": "affected_individuals",
            "missing_or_found_people": "affected_individuals",
            # raw-export spellings
            "infrastructure_and_utility_damage": "infrastructure_damage",
            "rescue_volunteering_or_donation_effort": "rescue_volunteering_donation",
            "other_relevant_information": "other_relevant",
        },
    ),
    3: TaskSpec(
        3,
        ("severe", "mild", "little_none"),
        merges={
            "severe_damage": "severe",
            "mild_damage": "mild",
            "little_or_no_damage": "little_none",
            "little_or_none": "little_none",
        },
        text_follows_image=True,
    ),
}


def resolve_task(task, corpus=None) -> TaskSpec:
    """Accept a TaskSpec, a task id, or None/0 (infer classes from data)."""
    if isinstance(task, TaskSpec):
        return task
    if task in (None, 0):
        if corpus is None:
            raise ValueError("cannot infer a class list without a corpus")
        labels = sorted({s.label_image for s in corpus} | {s.label_text for s in corpus})
        return TaskSpec(0, tuple(labels))
    if task in TASKS:
        return TASKS[task]
    raise ValueError(f"unknown task {task!r}")


def apply_task(corpus, task) -> tuple[list[Sample], TaskSpec]:
    """Map raw labels into the task's class set. Runs before any split."""
    spec = resolve_task(task, corpus)
    out = []
    for s in corpus:
        li = spec.merges.get(s.label_image, s.label_image)
        lt = spec.merges.get(s.label_text, s.label_text)
        if spec.text_follows_image:
            lt = li
        if li not in spec.classes:
            raise ValueError(f"sample {s.id!r}: image label {li!r} not in task classes")
        if lt not in spec.classes:
            raise ValueError(f"sample {s.id!r}: text label {lt!r} not in task classes")
        out.append(replace(s, label_image=li, label_text=lt))
    return out, spec


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

def _parse_timestamp(value: str) -> datetime:
    return datetime.fromisoformat(value.replace("Z", "+00:00"))


def _load_image_field(value, path, lineno):
    if isinstance(value, str):
        from PIL import Image

        with Image.open(value) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return arr
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"{path}:{lineno}: inline image must be HxW or HxWxC")
    return arr


def load_dataset(path) -> list[Sample]:
    """Read one JSON object per line into Samples.

    Required fields: id, label_image, label_text, event, timestamp, plus
    an image route (image or image_vec) and a text route (text or
    text_vec).
    """
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            for key in ("id", "label_image", "label_text", "event", "timestamp"):
                if key not in row:
                    raise ValueError(f"{path}:{lineno}: missing field {key!r}")
            if "image" not in row and "image_vec" not in row:
                raise ValueError(f"{path}:{lineno}: needs 'image' or 'image_vec'")
            if "text" not in row and "text_vec" not in row:
                raise ValueError(f"{path}:{lineno}: needs 'text' or 'text_vec'")
            samples.append(Sample(
                id=str(row["id"]),
                label_image=str(row["label_image"]),
                label_text=str(row["label_text"]),
                event=str(row["event"]),
                timestamp=_parse_timestamp(row["timestamp"]),
                text=row.get("text"),
                image=_load_image_field(row["image"], path, lineno) if "image" in row else None,
                image_vec=np.asarray(row["image_vec"], dtype=np.float64) if "image_vec" in row else None,
                text_vec=np.asarray(row["text_vec"], dtype=np.float64) if "text_vec" in row else None,
            ))
    return samples


def save_dataset(path, samples):
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            row = {
                "id": s.id,
                "label_image": s.label_image,
                "label_text": s.label_text,
                "event": s.event,
                "timestamp": s.timestamp.isoformat(),
            }
            if s.text is not None:
                row["text"] = s.text
            if s.image is not None:
                row["image"] = s.image.tolist()
            if s.image_vec is not None:
                row["image_vec"] = [float(v) for v in s.image_vec]
            if s.text_vec is not None:
                row["text_vec"] = [float(v) for v in s.text_vec]
            fh.write(json.dumps(row) + "\n")


# ---------------------------------------------------------------------------
# protocol splits
# ---------------------------------------------------------------------------

@dataclass
class Splits:
    train: list[Sample]
    dev: list[Sample]
    test: list[Sample]
    # sample ids whose text side gets a forced swap during training
    forced_ids: frozenset = frozenset()
    task: TaskSpec | None = None


def _largest_remainder(n: int, fractions) -> list[int]:
    total = float(sum(fractions))
    exact = [n * f / total for f in fractions]
    base = [int(np.floor(x)) for x in exact]
    short = n - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: exact[i] - base[i], reverse=True)
    for i in order[:short]:
        base[i] += 1
    return base


def _stratified_split(samples, fractions, rng: Rng):
    by_class: dict[str, list[Sample]] = {}
    for s in samples:
        by_class.setdefault(s.label_image, []).append(s)
    parts: list[list[Sample]] = [[] for _ in fractions]
    for label in sorted(by_class):
        group = by_class[label]
        order = rng.derive("strat", label).permutation(len(group))
        counts = _largest_remainder(len(group), fractions)
        start = 0
        for part, count in zip(parts, counts):
            part.extend(group[i] for i in order[start:start + count])
            start += count
    return parts


def _warn_missing_classes(splits: Splits):
    names = [("train", splits.train), ("dev", splits.dev), ("test", splits.test)]
    classes = splits.task.classes if splits.task else ()
    for c in classes:
        for name, part in names:
            if part and all(s.label_image != c for s in part):
                warnings.warn(f"class {c!r} absent from the {name} split")


DEFAULT_FRACTIONS_A = (0.70, 0.05, 0.25)
DEFAULT_FRACTIONS_D = (0.818, 0.182)


def split_setting_a(corpus, task=None, fractions=DEFAULT_FRACTIONS_A, seed=0) -> Splits:
    """Consistent pairs only, stratified by class into train/dev/test."""
    mapped, spec = apply_task(corpus, task)
    consistent = [s for s in mapped if s.consistent]
    rng = Rng(seed).derive("split_a")
    train, dev, test = _stratified_split(consistent, fractions, rng)
    out = Splits(train=train, dev=dev, test=test, task=spec)
    _warn_missing_classes(out)
    return out


def split_setting_b(corpus, task=None, setting_a: Splits | None = None,
                    fractions=DEFAULT_FRACTIONS_A, seed=0) -> Splits:
    """Setting A plus every inconsistent pair in the training set.

    Added pairs are flagged; the trainer forces their text-side swap.
    Dev and test are the Setting A lists themselves.
    """
    mapped, spec = apply_task(corpus, task)
    if setting_a is None:
        setting_a = split_setting_a(corpus, task, fractions, seed)
    inconsistent = [s for s in mapped if not s.consistent]
    return Splits(
        train=list(setting_a.train) + inconsistent,
        dev=setting_a.dev,
        test=setting_a.test,
        forced_ids=frozenset(s.id for s in inconsistent),
        task=spec,
    )


def split_setting_c(corpus, test_event: str, train_events=None, task=None) -> Splits:
    """Cross-event split with strict temporal precedence.

    Train takes every sample of the train events (consistency not
    required); test takes the consistent pairs of the test event. There
    is no dev set; callers carve a tuning holdout out of train.
    """
    mapped, spec = apply_task(corpus, task)
    by_event: dict[str, list[Sample]] = {}
    for s in mapped:
        by_event.setdefault(s.event, []).append(s)
    if test_event not in by_event:
        raise ProtocolError(f"test event {test_event!r} not present in the corpus")
    if train_events is None:
        train_events = [e for e in by_event if e != test_event]
    train_events = list(train_events)
    if test_event in train_events:
        raise ProtocolError(f"event {test_event!r} cannot be both train and test")
    test_start = min(s.timestamp for s in by_event[test_event])
    train: list[Sample] = []
    for ev in train_events:
        if ev not in by_event:
            raise ProtocolError(f"train event {ev!r} not present in the corpus")
        ev_end = max(s.timestamp for s in by_event[ev])
        if ev_end >= test_start:
            raise ProtocolError(
                f"train event {ev!r} does not strictly precede test event {test_event!r}"
            )
        train.extend(by_event[ev])
    test = [s for s in by_event[test_event] if s.consistent]
    return Splits(train=train, dev=[], test=test, task=spec)


def split_setting_d(corpus, task=None, fractions=DEFAULT_FRACTIONS_D, seed=0) -> Splits:
    """Plain random split; inconsistent pairs stay in both sides."""
    mapped, spec = apply_task(corpus, task)
    rng = Rng(seed).derive("split_d")
    order = rng.permutation(len(mapped))
    n_train = _largest_remainder(len(mapped), fractions)[0]
    train = [mapped[i] for i in order[:n_train]]
    test = [mapped[i] for i in order[n_train:]]
    return Splits(train=train, dev=[], test=test, task=spec)


def carve_holdout(samples, frac: float = 0.15, seed: int = 0):
    """Random (kept, holdout) partition; holdout gets ceil(frac * n)."""
    if not 0.0 < frac < 1.0:
        raise ValueError(f"holdout fraction must be in (0, 1), got {frac}")
    rng = Rng(seed).derive("holdout")
    order = rng.permutation(len(samples))
    n_hold = max(1, int(np.ceil(frac * len(samples)))) if samples else 0
    hold_idx = set(int(i) for i in order[:n_hold])
    kept = [s for i, s in enumerate(samples) if i not in hold_idx]
    holdout = [s for i, s in enumerate(samples) if i in hold_idx]
    return kept, holdout


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Knobs for the synthetic paired corpus.

    Every sample has a true class. A misleading sample carries the
    pattern of a *different* class in one modality; its labels stay
    consistent, so only the content lies. An inconsistent sample's text
    genuinely belongs to another class and is labelled accordingly.

    In vector mode each modality ends with a verifiability coordinate
    describing its PARTNER: flag_high when the other modality depicts
    the shared label, flag_low when the other modality is the lying
    side of a misleading pair. A modality's own vector carries no cue
    about its own honesty, so no single-modality reader can discount a
    lie. A lying block shouts at lie_scale times the honest amplitude,
    which pulls a purely additive reader toward the wrong class; the
    partner flag shifts every class score equally and is therefore
    useless additively, but it is decisive for anything that can weight
    one modality by what the other one says about it.
    """

    n: int = 2500
    n_classes: int = 5
    d_image: int = 24
    d_text: int = 24
    mode: str = "vec"  # "vec" or "raw"
    misleading_frac: float = 0.2
    inconsistent_frac: float = 0.0
    noise: float = 0.15
    flag_low: float = 0.1
    flag_high: float = 1.0
    lie_scale: float = 1.5
    n_events: int = 4
    seed: int = 0
    image_size: int = 12  # raw mode only

    def __post_init__(self):
        if self.mode not in ("vec", "raw"):
            raise ValueError(f"unknown synth mode {self.mode!r}")
        if self.misleading_frac + self.inconsistent_frac > 1.0:
            raise ValueError("misleading_frac + inconsistent_frac exceeds 1")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.mode == "vec" and min(self.d_image, self.d_text) < self.n_classes + 1:
            raise ValueError("feature dims must exceed the class count (one flag coordinate)")


def _class_name(c: int) -> str:
    return f"class_{c:02d}"


def _prototypes(dim: int, n_classes: int) -> np.ndarray:
    """Block one-hot prototypes over the first dim-1 coordinates; the
    last coordinate is reserved for the reliability flag."""
    width = (dim - 1) // n_classes
    protos = np.zeros((n_classes, dim))
    for c in range(n_classes):
        protos[c, c * width:(c + 1) * width] = 1.0
    return protos


def _vec(protos: np.ndarray, cls: int, honest: bool, partner_honest: bool,
         cfg: SynthConfig, rng: Rng) -> np.ndarray:
    v = protos[cls] * (1.0 if honest else cfg.lie_scale)
    # the flag vouches for the OTHER modality, not this one
    v[-1] = cfg.flag_high if partner_honest else cfg.flag_low
    return v + rng.normal(0.0, cfg.noise, v.shape)


def _raw_image(cls: int, partner_honest: bool, cfg: SynthConfig, rng: Rng) -> np.ndarray:
    size = cfg.image_size
    img = np.full((size, size, 1), 0.1)
    rows = max(1, size // cfg.n_classes)
    lo = (cls * rows) % size
    img[lo:lo + rows, :, 0] = 0.6
    # bright first column: the image corroborates the caption
    img[:, 0, 0] = 0.9 if partner_honest else 0.15
    img += rng.normal(0.0, cfg.noise * 0.1, img.shape)
    return np.clip(img, 0.0, 1.0)


def _raw_text(cls: int, partner_honest: bool, cfg: SynthConfig, rng: Rng) -> str:
    words = [f"sig{cls}w{j}" for j in range(3)]
    words.append("confirmed" if partner_honest else "rumour")
    words += [f"filler{int(rng.integers(0, 40))}" for _ in range(2)]
    if rng.random() < 0.15:
        words.append(f"https://t.co/{int(rng.integers(0, 10**6)):06d}")
    if rng.random() < 0.2:
        words = [w.upper() if rng.random() < 0.5 else w for w in words]
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order)


def generate_corpus(cfg: SynthConfig) -> list[Sample]:
    """Deterministic synthetic paired corpus (round-robin true classes)."""
    rng = Rng(cfg.seed).derive("synth")
    protos_img = _prototypes(cfg.d_image, cfg.n_classes)
    protos_txt = _prototypes(cfg.d_text, cfg.n_classes)
    samples = []
    for i in range(cfg.n):
        y = i % cfg.n_classes
        label_img = label_txt = _class_name(y)
        img_cls, img_ok = y, True
        txt_cls, txt_ok = y, True
        r = rng.random()
        if r < cfg.inconsistent_frac:
            # text honestly depicts another class and is labelled so
            z = (y + 1 + int(rng.integers(0, cfg.n_classes - 1))) % cfg.n_classes
            txt_cls = z
            label_txt = _class_name(z)
        elif r < cfg.inconsistent_frac + cfg.misleading_frac:
            # one side lies about the shared label
            z = (y + 1 + int(rng.integers(0, cfg.n_classes - 1))) % cfg.n_classes
            if rng.random() < 0.5:
                img_cls, img_ok = z, False
            else:
                txt_cls, txt_ok = z, False
        event_idx = int(rng.integers(0, cfg.n_events))
        # one calendar month per event, strictly ordered so any earlier
        # event fully precedes any later one
        ts = datetime(
            2017 + event_idx // 12, 1 + event_idx % 12, 1 + (i % 27), (i * 7) % 24
        )
        sample = Sample(
            id=f"s{i:05d}",
            label_image=label_img,
            label_text=label_txt,
            event=f"event_{event_idx:02d}",
            timestamp=ts,
        )
        if cfg.mode == "vec":
            sample.image_vec = _vec(protos_img, img_cls, img_ok, txt_ok, cfg, rng)
            sample.text_vec = _vec(protos_txt, txt_cls, txt_ok, img_ok, cfg, rng)
        else:
            sample.image = _raw_image(img_cls, txt_ok, cfg, rng)
            sample.text = _raw_text(txt_cls, img_ok, cfg, rng)
        samples.append(sample)
    return samples
