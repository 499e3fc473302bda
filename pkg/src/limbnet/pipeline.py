"""Windowing, leave-one-subject-out splits, shuffling and the optional denoise stage."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from limbnet.dataset import DEFAULT_LABEL_MAP, Dataset, Recording
from limbnet.errors import (CohortMismatchError, OverlapError, SplitError, UnknownSubjectError,
                            ValidationError)
from limbnet.wavelet import DenoiseConfig, wavelet_denoise

WINDOW_LEN = 256
STRIDE = 192          # 256-sample windows sharing 64 samples with their neighbour


class ShortRecordingWarning(UserWarning):
    pass


@dataclass
class WindowFrame:
    data: np.ndarray          # (4, window_len)
    label: int
    subject_id: str
    source_offset: int


def window_offsets(n_samples: int, window_len: int = WINDOW_LEN, stride: int = STRIDE) -> range:
    if window_len < 1 or stride < 1:
        raise ValidationError("window_len and stride must be positive")
    if n_samples < window_len:
        return range(0)
    return range(0, (n_samples - window_len) // stride * stride + 1, stride)


def slide_windows(recording: Recording, window_len: int = WINDOW_LEN, stride: int = STRIDE,
                  label_map: dict[str, int] | None = None) -> list[WindowFrame]:
    """Cut a recording into ``floor((N - window_len) / stride) + 1`` frames.

    A recording shorter than one window yields no frames and a
    :class:`ShortRecordingWarning`.
    """
    label = (label_map or DEFAULT_LABEL_MAP)[recording.activity]
    offsets = window_offsets(recording.n_samples, window_len, stride)
    if not offsets:
        warnings.warn(f"recording {recording.meta.subject_id}/{recording.activity} has "
                      f"{recording.n_samples} samples, fewer than one {window_len}-sample window",
                      ShortRecordingWarning, stacklevel=2)
    return [WindowFrame(recording.semg[:, o:o + window_len].copy(), label,
                        recording.meta.subject_id, o) for o in offsets]


def denoise_recording(recording: Recording, config: DenoiseConfig) -> Recording:
    """Per-channel wavelet denoising of the whole recording (before windowing)."""
    if not config.enabled:
        return recording
    if 2 ** config.levels > recording.n_samples:
        return recording          # too short to decompose; yields no windows anyway
    semg = np.stack([wavelet_denoise(ch, config) for ch in recording.semg])
    return Recording(recording.meta, recording.activity, semg, recording.sample_rate,
                     recording.knee_angle)


def build_frames(dataset: Dataset, subjects, window_len: int = WINDOW_LEN, stride: int = STRIDE,
                 denoise: DenoiseConfig | None = None) -> list[WindowFrame]:
    """Frames of the given subjects, in manifest order (denoise, then window)."""
    denoise = denoise or DenoiseConfig()
    frames = []
    for rec in dataset.for_subjects(subjects):
        frames += slide_windows(denoise_recording(rec, denoise), window_len, stride,
                                dataset.label_map)
    return frames


def stack_frames(frames: list[WindowFrame]) -> tuple[np.ndarray, np.ndarray]:
    if not frames:
        raise ValidationError("no frames to stack")
    return (np.stack([f.data for f in frames]),
            np.array([f.label for f in frames], dtype=np.int64))


def shuffle_frames(frames: list, rng: np.random.Generator) -> list:
    return [frames[i] for i in rng.permutation(len(frames))]


# ---------------------------------------------------------------- subject splits

@dataclass(frozen=True)
class SplitPlan:
    train_subjects: tuple[str, ...]
    val_subjects: tuple[str, ...]
    test_subjects: tuple[str, ...]

    def partition(self, name: str) -> tuple[str, ...]:
        try:
            return {"train": self.train_subjects, "val": self.val_subjects,
                    "test": self.test_subjects}[name]
        except KeyError:
            raise ValidationError(f"unknown partition {name!r} (train, val or test)") from None

    def to_dict(self) -> dict:
        return {"train": list(self.train_subjects), "val": list(self.val_subjects),
                "test": list(self.test_subjects)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        try:
            plan = cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]))
        except (KeyError, TypeError) as exc:
            raise SplitError(f"malformed split: {exc}") from None
        parts = [set(plan.train_subjects), set(plan.val_subjects), set(plan.test_subjects)]
        for i in range(3):
            for j in range(i + 1, 3):
                common = parts[i] & parts[j]
                if common:
                    raise OverlapError(f"subject {sorted(common)[0]} appears in two partitions")
        return plan

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SplitPlan":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def make_split(dataset: Dataset, val_pair: tuple[str, str],
               test_pair: tuple[str, str]) -> SplitPlan:
    """Hold out one (healthy, abnormal) pair for validation and one for testing.

    Everyone else trains. Pairs are given as ``(healthy_id, abnormal_id)``.
    """
    subjects = dataset.subjects()
    named = list(val_pair) + list(test_pair)
    for sid in named:
        if sid not in subjects:
            raise UnknownSubjectError(f"subject {sid} is not in the dataset")
    seen = set()
    for sid in named:
        if sid in seen:
            raise OverlapError(f"subject {sid} is named more than once in the validation/test pairs")
        seen.add(sid)
    for pair_name, pair in (("validation", val_pair), ("test", test_pair)):
        for sid, cohort in zip(pair, ("healthy", "abnormal")):
            if subjects[sid].cohort != cohort:
                raise CohortMismatchError(f"{pair_name} pair expects {sid} to be {cohort}, "
                                          f"but it is {subjects[sid].cohort}")
    train = tuple(sorted(s for s in subjects if s not in seen))
    return SplitPlan(train, tuple(val_pair), tuple(test_pair))
