"""Corpus format, on-disk I/O, and the split/scenario protocol.

Canonical layout: `<root>/<subject>/<session>/<type>_<idx>.wav` plus a
matching `.csv` motion trace, with one `manifest.json` at the root holding an
array of `{subject_id, session_id, breath_type, duration_s, audio_path,
motion_path}` entries. Other layouts need an import adapter.
"""

from __future__ import annotations

import csv
import json
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dsp import MotionTrace, Waveform
from .errors import ConfigError, DataError

BREATH_TYPES = ("normal", "deep", "strong")

AUDIO_RATE = 44100
MOTION_RATE = 50.0

MOTION_CSV_HEADER = ["t", "ax", "ay", "az", "gx", "gy", "gz"]

_MANIFEST_KEYS = {"subject_id", "session_id", "breath_type", "duration_s", "audio_path", "motion_path"}


@dataclass(frozen=True)
class InstanceRecord:
    """Manifest entry referencing one labeled recording."""

    subject_id: str
    session_id: str
    breath_type: str
    duration_s: float
    audio_path: str
    motion_path: str

    def __post_init__(self):
        if self.breath_type not in BREATH_TYPES:
            raise DataError(f"unknown breath type {self.breath_type!r} for {self.subject_id}/{self.session_id}")
        if self.duration_s <= 0:
            raise DataError(f"non-positive duration for {self.instance_id}")

    @property
    def instance_id(self) -> str:
        return f"{self.subject_id}/{self.session_id}/{self.breath_type}"

    def to_json(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "session_id": self.session_id,
            "breath_type": self.breath_type,
            "duration_s": self.duration_s,
            "audio_path": self.audio_path,
            "motion_path": self.motion_path,
        }


@dataclass(frozen=True)
class BreathInstance:
    """One loaded recording: raw audio plus the 6-channel chest-motion trace."""

    record: InstanceRecord
    audio: Waveform
    motion: MotionTrace

    def __post_init__(self):
        if abs(self.audio.duration - self.motion.duration) > 0.02:
            raise DataError(
                f"audio ({self.audio.duration:.3f}s) and motion ({self.motion.duration:.3f}s) "
                f"spans differ by more than 20 ms for {self.record.instance_id}"
            )

    @property
    def subject_id(self) -> str:
        return self.record.subject_id

    @property
    def breath_type(self) -> str:
        return self.record.breath_type


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable collection of instance records, optionally rooted on disk."""

    records: tuple[InstanceRecord, ...]
    root: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            raise DataError("manifest holds no instances")
        ids = [r.instance_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate instance ids in manifest: {dupes[:5]}")

    @property
    def subjects(self) -> tuple[str, ...]:
        return tuple(sorted({r.subject_id for r in self.records}))

    def by_id(self) -> dict[str, InstanceRecord]:
        return {r.instance_id: r for r in self.records}

    def of_type(self, breath_type: str) -> list[InstanceRecord]:
        if breath_type not in BREATH_TYPES:
            raise ConfigError(f"unknown breath type {breath_type!r}")
        return [r for r in self.records if r.breath_type == breath_type]

    def counts_per_subject(self, breath_type: str | None = None) -> dict[str, int]:
        counts: dict[str, int] = {s: 0 for s in self.subjects}
        for r in self.records:
            if breath_type is None or r.breath_type == breath_type:
                counts[r.subject_id] += 1
        return counts


def save_wav(path: Path, w: Waveform) -> None:
    """Write mono 16-bit PCM; samples are clipped to [-1, 1] first."""
    data = np.clip(w.samples, -1.0, 1.0)
    pcm = np.round(data * 32767.0).astype("<i2")
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(w.rate))
        f.writeframes(pcm.tobytes())


def load_wav(path: Path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as f:
            if f.getnchannels() != 1 or f.getsampwidth() != 2:
                raise DataError(f"{path}: expected mono 16-bit PCM")
            rate = f.getframerate()
            pcm = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: not a readable WAV file ({exc})") from exc
    return Waveform(pcm.astype(np.float64) / 32767.0, float(rate))


def save_motion_csv(path: Path, m: MotionTrace) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MOTION_CSV_HEADER)
        tick = 1.0 / m.rate
        for i, row in enumerate(m.samples):
            writer.writerow([f"{i * tick:.2f}"] + [f"{v:.6f}" for v in row])


def load_motion_csv(path: Path) -> MotionTrace:
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != MOTION_CSV_HEADER:
                raise DataError(f"{path}: bad motion CSV header {header!r}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 7:
                    raise DataError(f"{path}:{lineno}: expected 7 columns, got {len(row)}")
                rows.append([float(v) for v in row[1:]])
    except OSError as exc:
        raise DataError(f"{path}: cannot read motion CSV ({exc})") from exc
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric motion value ({exc})") from exc
    if not rows:
        raise DataError(f"{path}: motion CSV holds no samples")
    return MotionTrace(np.asarray(rows, dtype=np.float64), MOTION_RATE)


def save_manifest(manifest: DatasetManifest, root: Path) -> Path:
    """Write `manifest.json` (a plain array of instance entries) under root."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    path = root / "manifest.json"
    with open(path, "w") as f:
        json.dump([r.to_json() for r in manifest.records], f, indent=1)
        f.write("\n")
    return path


def load_manifest(path: Path, verify_files: bool = True) -> DatasetManifest:
    """Load and validate a manifest; `path` may be the dataset root or the
    manifest.json itself."""
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    if not manifest_path.exists():
        raise DataError(f"no manifest at {manifest_path}")
    root = manifest_path.parent
    with open(manifest_path) as f:
        try:
            entries = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(entries, list):
        raise DataError(f"{manifest_path}: manifest must be a JSON array")

    records = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or set(entry) != _MANIFEST_KEYS:
            raise DataError(f"{manifest_path}: entry {i} has keys {sorted(entry) if isinstance(entry, dict) else entry}, expected {sorted(_MANIFEST_KEYS)}")
        records.append(InstanceRecord(**entry))
    manifest = DatasetManifest(tuple(records), root=root)
    if verify_files:
        for r in manifest.records:
            _verify_instance_files(root, r)
    return manifest


def _verify_instance_files(root: Path, r: InstanceRecord) -> None:
    audio_path = root / r.audio_path
    motion_path = root / r.motion_path
    if not audio_path.exists():
        raise DataError(f"instance {r.instance_id}: missing audio file {audio_path}")
    if not motion_path.exists():
        raise DataError(f"instance {r.instance_id}: missing motion file {motion_path}")
    with wave.open(str(audio_path), "rb") as f:
        audio_dur = f.getnframes() / f.getframerate()
    if abs(audio_dur - r.duration_s) > 0.001:
        raise DataError(
            f"instance {r.instance_id}: audio length {audio_dur:.4f}s disagrees with "
            f"manifest duration {r.duration_s:.4f}s"
        )
    with open(motion_path) as f:
        n_rows = sum(1 for _ in f) - 1
    if abs(n_rows / MOTION_RATE - r.duration_s) > 1.5 / MOTION_RATE:
        raise DataError(
            f"instance {r.instance_id}: motion length {n_rows / MOTION_RATE:.4f}s disagrees "
            f"with manifest duration {r.duration_s:.4f}s"
        )


def load_instance(manifest: DatasetManifest, record: InstanceRecord) -> BreathInstance:
    if manifest.root is None:
        raise DataError(f"manifest has no on-disk root; cannot load {record.instance_id}")
    audio_path = manifest.root / record.audio_path
    motion_path = manifest.root / record.motion_path
    if not audio_path.exists():
        raise DataError(f"instance {record.instance_id}: missing audio file {audio_path}")
    if not motion_path.exists():
        raise DataError(f"instance {record.instance_id}: missing motion file {motion_path}")
    return BreathInstance(record, load_wav(audio_path), load_motion_csv(motion_path))


def save_instance(root: Path, record: InstanceRecord, audio: Waveform, motion: MotionTrace) -> None:
    save_wav(Path(root) / record.audio_path, audio)
    save_motion_csv(Path(root) / record.motion_path, motion)


@dataclass(frozen=True)
class SplitSpec:
    """Per-subject random holdout: 5 validation + 5 test instances, the rest
    train; all sets hold instance ids of a single breath type."""

    breath_type: str
    seed: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def all_ids(self) -> set[str]:
        return set(self.train) | set(self.val) | set(self.test)


VAL_PER_SUBJECT = 5
TEST_PER_SUBJECT = 5


def make_split(manifest: DatasetManifest, breath_type: str, seed: int) -> SplitSpec:
    """Hold out 5 validation and 5 test instances per subject, uniformly at
    random; every subject needs at least 11 instances of the type."""
    records = manifest.of_type(breath_type)
    if not records:
        raise DataError(f"manifest holds no {breath_type!r} instances")
    by_subject: dict[str, list[str]] = {}
    for r in records:
        by_subject.setdefault(r.subject_id, []).append(r.instance_id)

    needed = VAL_PER_SUBJECT + TEST_PER_SUBJECT + 1
    short = sorted(s for s, ids in by_subject.items() if len(ids) < needed)
    if short:
        raise DataError(
            f"subjects with fewer than {needed} {breath_type!r} instances: {', '.join(short)}"
        )

    rng = np.random.default_rng([seed, 11])
    train, val, test = [], [], []
    for subject in sorted(by_subject):
        ids = sorted(by_subject[subject])
        order = rng.permutation(len(ids))
        picked = [ids[i] for i in order]
        val.extend(picked[:VAL_PER_SUBJECT])
        test.extend(picked[VAL_PER_SUBJECT : VAL_PER_SUBJECT + TEST_PER_SUBJECT])
        train.extend(picked[VAL_PER_SUBJECT + TEST_PER_SUBJECT :])
    return SplitSpec(breath_type, seed, tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)))


@dataclass(frozen=True)
class Trial:
    claimed_subject: str
    instance_id: str
    genuine: bool


@dataclass(frozen=True)
class VerificationScenario:
    """Trial roster for one verification protocol.

    Kind 1 enrolls every subject and attacks each with the other subjects'
    test instances. Kind 2 removes 4 seed-chosen subjects from enrollment and
    training; all of their instances attack every enrolled subject, alongside
    the enrolled-others' test instances.
    """

    kind: int
    breath_type: str
    seed: int
    enrolled_subjects: tuple[str, ...]
    held_out_subjects: tuple[str, ...]
    trials: tuple[Trial, ...]

    def genuine_count(self) -> int:
        return sum(1 for t in self.trials if t.genuine)

    def impostor_count(self) -> int:
        return sum(1 for t in self.trials if not t.genuine)


HELD_OUT_SUBJECTS = 4
SCENARIO1_SUBJECTS = 20


def make_scenario(manifest: DatasetManifest, split: SplitSpec, kind: int, seed: int) -> VerificationScenario:
    by_id = manifest.by_id()
    subjects = tuple(sorted({by_id[i].subject_id for i in split.all_ids()}))
    test_by_subject: dict[str, list[str]] = {s: [] for s in subjects}
    for i in sorted(split.test):
        test_by_subject[by_id[i].subject_id].append(i)

    if kind == 1:
        if len(subjects) != SCENARIO1_SUBJECTS:
            raise DataError(
                f"scenario 1 requires exactly {SCENARIO1_SUBJECTS} enrolled subjects "
                f"(got {len(subjects)}) so each has {(SCENARIO1_SUBJECTS - 1) * TEST_PER_SUBJECT} impostor trials"
            )
        enrolled = subjects
        held_out: tuple[str, ...] = ()
    elif kind == 2:
        if len(subjects) < HELD_OUT_SUBJECTS + 1:
            raise DataError(
                f"scenario 2 needs at least {HELD_OUT_SUBJECTS + 1} subjects, got {len(subjects)}"
            )
        rng = np.random.default_rng([seed, 22])
        picked = rng.choice(len(subjects), size=HELD_OUT_SUBJECTS, replace=False)
        held_out = tuple(sorted(subjects[i] for i in picked))
        enrolled = tuple(s for s in subjects if s not in held_out)
    else:
        raise ConfigError(f"scenario kind must be 1 or 2, got {kind}")

    held_out_ids = [i for i in sorted(split.all_ids()) if by_id[i].subject_id in held_out]

    trials = []
    for claimed in enrolled:
        for i in test_by_subject[claimed]:
            trials.append(Trial(claimed, i, True))
        for other in enrolled:
            if other == claimed:
                continue
            for i in test_by_subject[other]:
                trials.append(Trial(claimed, i, False))
        for i in held_out_ids:
            trials.append(Trial(claimed, i, False))
    return VerificationScenario(kind, split.breath_type, seed, enrolled, held_out, tuple(trials))


def restrict_split(manifest: DatasetManifest, split: SplitSpec, subjects) -> SplitSpec:
    """Filter a split down to the given subjects (e.g. scenario-2 enrollment)."""
    keep = set(subjects)
    by_id = manifest.by_id()

    def flt(ids):
        return tuple(i for i in ids if by_id[i].subject_id in keep)

    return SplitSpec(split.breath_type, split.seed, flt(split.train), flt(split.val), flt(split.test))
