"""Recordings, subject metadata, CSV ingestion and synthetic data.

Canonical recording CSV: UTF-8, comma separated, one header row, one sample
per row. Header names are matched case-insensitively: ``time`` (seconds,
optional), ``vm``, ``st``, ``bf``, ``rf`` and ``angle`` (degrees, optional).

Manifest CSV: header ``file,subject_id,cohort,abnormality,activity``; ``file``
is resolved relative to the manifest's directory.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from limbnet.errors import (CompletenessError, DuplicateRecordingError, MissingColumnError,
                            NonNumericError, ParseError, RowWidthError, SampleRateError,
                            UnknownActivityError, ValidationError)

SAMPLE_RATE = 1000
CHANNELS = ("vm", "st", "bf", "rf")
ACTIVITIES = ("standing_knee_flexion", "sitting_knee_extension", "gait")
COHORTS = ("healthy", "abnormal")
ABNORMALITIES = ("ACL", "meniscus", "sciatic", "none")
DEFAULT_LABEL_MAP = {name: i for i, name in enumerate(ACTIVITIES)}
MANIFEST_FIELDS = ("file", "subject_id", "cohort", "abnormality", "activity")


@dataclass(frozen=True)
class SubjectMeta:
    subject_id: str
    cohort: str
    abnormality: str = "none"

    def __post_init__(self):
        if self.cohort not in COHORTS:
            raise ValidationError(f"unknown cohort {self.cohort!r}")
        if self.abnormality not in ABNORMALITIES:
            raise ValidationError(f"unknown abnormality {self.abnormality!r}")
        if self.cohort == "healthy" and self.abnormality != "none":
            raise ValidationError(f"healthy subject {self.subject_id} cannot have "
                                  f"abnormality {self.abnormality}")


@dataclass
class Recording:
    meta: SubjectMeta
    activity: str
    semg: np.ndarray                      # (4, N), rows ordered VM, ST, BF, RF
    sample_rate: int = SAMPLE_RATE
    knee_angle: np.ndarray | None = None

    def __post_init__(self):
        if self.activity not in ACTIVITIES:
            raise UnknownActivityError(f"unknown activity {self.activity!r}")
        self.semg = np.asarray(self.semg, dtype=np.float64)
        if self.semg.ndim != 2 or self.semg.shape[0] != len(CHANNELS) or self.semg.shape[1] < 1:
            raise ValidationError(f"semg must be 4 x N with N >= 1, got {self.semg.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise SampleRateError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        if self.knee_angle is not None:
            self.knee_angle = np.asarray(self.knee_angle, dtype=np.float64)
            if self.knee_angle.shape != (self.n_samples,):
                raise ValidationError("knee_angle length must match the sEMG length")

    @property
    def n_samples(self) -> int:
        return self.semg.shape[1]


@dataclass
class Dataset:
    recordings: list[Recording]
    label_map: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_LABEL_MAP))

    def __post_init__(self):
        if sorted(self.label_map) != sorted(ACTIVITIES) or \
                sorted(self.label_map.values()) != list(range(len(ACTIVITIES))):
            raise ValidationError(f"label_map must map the three activities onto 0..2, "
                                  f"got {self.label_map}")

    def subjects(self) -> dict[str, SubjectMeta]:
        return {r.meta.subject_id: r.meta for r in self.recordings}

    def for_subjects(self, ids) -> list[Recording]:
        ids = set(ids)
        return [r for r in self.recordings if r.meta.subject_id in ids]


# ---------------------------------------------------------------- CSV recordings

_FILENAME_RE = re.compile(
    r"^(?P<subject>[^_]+)_(?P<cohort>healthy|abnormal)(?:-(?P<abn>ACL|meniscus|sciatic))?"
    r"_(?P<activity>[a-z_]+)$")


def meta_from_filename(path) -> tuple[SubjectMeta, str]:
    """Parse ``<subject>_<cohort>[-<abnormality>]_<activity>.csv``."""
    m = _FILENAME_RE.match(Path(path).stem)
    if not m or m["activity"] not in ACTIVITIES:
        raise ParseError("file name does not follow <subject>_<cohort>[-<abnormality>]_<activity>",
                         path)
    return SubjectMeta(m["subject"], m["cohort"], m["abn"] or "none"), m["activity"]


def _resolve_columns(header: list[str], column_map: dict[str, str] | None, path) -> dict[str, int]:
    # canonical name -> column index in the file
    lowered = [h.strip().lower() for h in header]
    wanted = {name: name for name in CHANNELS + ("time", "angle")}
    if column_map:
        wanted.update({k.lower(): v for k, v in column_map.items()})
    found = {}
    for name, col in wanted.items():
        col = col.strip().lower()
        if col in lowered:
            found[name] = lowered.index(col)
        elif name in CHANNELS:
            raise MissingColumnError(col.upper() if col in CHANNELS else col, path)
    return found


def read_semg_csv(path, column_map: dict[str, str] | None = None
                  ) -> tuple[np.ndarray, np.ndarray | None]:
    """Parse a recording CSV into ``(semg (4, N), knee_angle or None)``.

    Rows are kept in file order. A ``time`` column, when present, must step at
    1 ms; a leading ``# sample_rate=<hz>`` comment line is also honoured.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = None
        declared_rate = None
        for row in reader:
            if row and row[0].lstrip().startswith("#"):
                m = re.match(r"#\s*sample_rate\s*[=:]\s*([0-9.]+)", ",".join(row).strip())
                if m:
                    declared_rate = float(m[1])
                continue
            header = row
            break
        if header is None:
            raise ParseError("empty file", path, 1)
        header_line = reader.line_num
        if declared_rate is not None and declared_rate != SAMPLE_RATE:
            raise SampleRateError(f"declared sample rate {declared_rate:g} Hz, expected "
                                  f"{SAMPLE_RATE} Hz", path, 1)
        cols = _resolve_columns(header, column_map, path)
        wanted = [cols[c] for c in CHANNELS]
        has_time, has_angle = "time" in cols, "angle" in cols
        values, times, angles = [], [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise RowWidthError(f"expected {len(header)} fields, got {len(row)}", path, line)
            try:
                values.append([float(row[i]) for i in wanted])
                if has_time:
                    times.append(float(row[cols["time"]]))
                if has_angle:
                    angles.append(float(row[cols["angle"]]))
            except ValueError as exc:
                raise NonNumericError(f"non-numeric cell ({exc})", path, line) from None
    if not values:
        raise ParseError("no data rows", path, header_line)
    if len(times) > 1:
        steps = np.diff(times)
        bad = np.flatnonzero(np.abs(steps - 1.0 / SAMPLE_RATE) > 0.01 / SAMPLE_RATE)
        if bad.size:
            line = header_line + int(bad[0]) + 2
            raise SampleRateError(f"time step {steps[bad[0]]:g} s does not match "
                                  f"{SAMPLE_RATE} Hz", path, line)
    semg = np.array(values, dtype=np.float64).T
    return semg, (np.array(angles) if has_angle else None)


def load_recording(path, column_map: dict[str, str] | None = None, meta: SubjectMeta | None = None,
                   activity: str | None = None) -> Recording:
    """Load one recording; metadata falls back to the file-name convention."""
    if meta is None or activity is None:
        parsed_meta, parsed_activity = meta_from_filename(path)
        meta = meta or parsed_meta
        activity = activity or parsed_activity
    semg, angle = read_semg_csv(path, column_map)
    return Recording(meta, activity, semg, SAMPLE_RATE, angle)


def write_recording(recording: Recording, path) -> None:
    path = Path(path)
    header = ["time", *CHANNELS]
    columns = [np.arange(recording.n_samples) / recording.sample_rate, *recording.semg]
    if recording.knee_angle is not None:
        header.append("angle")
        columns.append(recording.knee_angle)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        # repr round-trips float64 exactly
        for row in zip(*columns):
            writer.writerow([repr(float(v)) for v in row])


def canonical_filename(meta: SubjectMeta, activity: str) -> str:
    cohort = meta.cohort if meta.abnormality == "none" else f"{meta.cohort}-{meta.abnormality}"
    return f"{meta.subject_id}_{cohort}_{activity}.csv"


def convert_csv(src, dst, column_map: dict[str, str], time_column: str | None = None,
                angle_column: str | None = None) -> int:
    """Rewrite a vendor export as a canonical CSV; returns the sample count.

    ``column_map`` maps each of vm/st/bf/rf to the export's column name.
    """
    mapping = dict(column_map)
    if time_column:
        mapping["time"] = time_column
    if angle_column:
        mapping["angle"] = angle_column
    semg, angle = read_semg_csv(src, mapping)
    meta = SubjectMeta("converted", "healthy")
    write_recording(Recording(meta, ACTIVITIES[0], semg, SAMPLE_RATE, angle), dst)
    return semg.shape[1]


# ---------------------------------------------------------------- manifests

def load_dataset(manifest_path, strict: bool = False, column_map: dict[str, str] | None = None,
                 label_map: dict[str, int] | None = None) -> Dataset:
    """One recording per manifest row.

    ``strict`` additionally demands 22 subjects (11 per cohort), each with all
    three activities.
    """
    manifest_path = Path(manifest_path)
    recordings: list[Recording] = []
    seen = set()
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip().lower() for f in reader.fieldnames or []]
        for name in MANIFEST_FIELDS:
            if name not in fields:
                raise MissingColumnError(name, manifest_path)
        reader.fieldnames = fields
        for row in reader:
            line = reader.line_num
            activity = row["activity"].strip()
            if activity not in ACTIVITIES:
                raise UnknownActivityError(f"{manifest_path}:{line}: unknown activity {activity!r}")
            subject = row["subject_id"].strip()
            key = (subject, activity)
            if key in seen:
                raise DuplicateRecordingError(f"{manifest_path}:{line}: duplicate recording for "
                                              f"subject {subject}, activity {activity}")
            seen.add(key)
            try:
                meta = SubjectMeta(subject, row["cohort"].strip(),
                                   (row["abnormality"] or "none").strip() or "none")
            except ValidationError as exc:
                raise ParseError(str(exc), manifest_path, line) from None
            recordings.append(load_recording(manifest_path.parent / row["file"].strip(),
                                             column_map, meta, activity))
    dataset = Dataset(recordings, dict(label_map or DEFAULT_LABEL_MAP))
    if strict:
        check_complete(dataset)
    return dataset


def check_complete(dataset: Dataset, n_per_cohort: int = 11) -> None:
    subjects = dataset.subjects()
    per_cohort = {c: sum(1 for m in subjects.values() if m.cohort == c) for c in COHORTS}
    if per_cohort != {c: n_per_cohort for c in COHORTS}:
        raise CompletenessError(f"expected {n_per_cohort} subjects per cohort, got {per_cohort}")
    have = {(r.meta.subject_id, r.activity) for r in dataset.recordings}
    missing = sorted((s, a) for s in subjects for a in ACTIVITIES if (s, a) not in have)
    if missing:
        listed = ", ".join(f"{s}/{a}" for s, a in missing)
        raise CompletenessError(f"missing recordings: {listed}")


def write_dataset(dataset: Dataset, directory) -> Path:
    """Write every recording plus ``manifest.csv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for rec in dataset.recordings:
            name = canonical_filename(rec.meta, rec.activity)
            write_recording(rec, directory / name)
            writer.writerow([name, rec.meta.subject_id, rec.meta.cohort, rec.meta.abnormality,
                             rec.activity])
    return manifest


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SignatureParams:
    """Per-class signal recipe for synthetic recordings.

    ``amplitudes[c][ch]`` and ``frequencies[c][ch]`` (Hz) define one sinusoid
    per channel; ``noise`` is the white-noise standard deviation and
    ``subject_jitter`` the relative per-subject amplitude spread.
    """

    amplitudes: tuple = ((1.0, 0.3, 0.3, 1.0),
                         (0.3, 1.0, 1.0, 0.3),
                         (1.0, 1.0, 1.0, 1.0))
    frequencies: tuple = ((25.0, 40.0, 40.0, 25.0),
                          (60.0, 35.0, 35.0, 60.0),
                          (90.0, 120.0, 120.0, 90.0))
    noise: float = 0.25
    subject_jitter: float = 0.15


_ABNORMAL_CYCLE = ("ACL",) * 6 + ("meniscus",) * 4 + ("sciatic",)


def synthetic_subjects(n_subjects: int) -> list[SubjectMeta]:
    """First half healthy (``H01``...), second half abnormal (``A01``...)."""
    n_healthy = (n_subjects + 1) // 2
    metas = [SubjectMeta(f"H{i + 1:02d}", "healthy") for i in range(n_healthy)]
    metas += [SubjectMeta(f"A{i + 1:02d}", "abnormal", _ABNORMAL_CYCLE[i % len(_ABNORMAL_CYCLE)])
              for i in range(n_subjects - n_healthy)]
    return metas


def generate_synthetic_dataset(n_subjects: int = 22, samples_per_recording: int = 2560,
                               params: SignatureParams | None = None,
                               rng: np.random.Generator | None = None) -> Dataset:
    """Seeded stand-in for the real recordings: every subject performs every activity."""
    params = params or SignatureParams()
    if n_subjects < 3:
        raise ValidationError("need at least 3 subjects")
    if samples_per_recording < 1:
        raise ValidationError("samples_per_recording must be positive")
    amps = np.asarray(params.amplitudes, dtype=float)
    freqs = np.asarray(params.frequencies, dtype=float)
    if amps.shape != (len(ACTIVITIES), len(CHANNELS)) or freqs.shape != amps.shape:
        raise ValidationError("amplitudes and frequencies must be 3 x 4")
    if params.noise < 0 or params.subject_jitter < 0 or np.any(freqs <= 0):
        raise ValidationError("noise, jitter and frequencies must be non-negative/positive")
    if rng is None:
        rng = np.random.default_rng(0)
    t = np.arange(samples_per_recording) / SAMPLE_RATE
    recordings = []
    for meta in synthetic_subjects(n_subjects):
        scale = 1.0 + params.subject_jitter * rng.uniform(-1.0, 1.0, size=len(CHANNELS))
        for c, activity in enumerate(ACTIVITIES):
            phase = rng.uniform(0.0, 2.0 * np.pi, size=len(CHANNELS))
            clean = (amps[c] * scale)[:, None] * np.sin(2.0 * np.pi * freqs[c][:, None] * t
                                                        + phase[:, None])
            noise = params.noise * rng.standard_normal(clean.shape)
            angle = 30.0 + 20.0 * np.sin(2.0 * np.pi * 1.0 * t)
            recordings.append(Recording(meta, activity, clean + noise, SAMPLE_RATE, angle))
    return Dataset(recordings)
