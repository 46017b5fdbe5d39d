import json

import numpy as np
import pytest

from breathauth.dataset import (
    BreathInstance,
    DatasetManifest,
    InstanceRecord,
    SplitSpec,
    load_instance,
    load_manifest,
    load_motion_csv,
    load_wav,
    make_scenario,
    make_split,
    restrict_split,
    save_instance,
    save_manifest,
    save_motion_csv,
    save_wav,
)
from breathauth.dsp import MotionTrace, Waveform
from breathauth.errors import ConfigError, DataError


def meta_manifest(counts, breath_type="normal"):
    """Metadata-only manifest: counts maps subject -> instances per type."""
    records = []
    for subject, n in counts.items():
        for i in range(n):
            session = f"ses{i:03d}"
            stem = f"{subject}/{session}/{breath_type}_000"
            records.append(
                InstanceRecord(subject, session, breath_type, 2.0, f"{stem}.wav", f"{stem}.csv")
            )
    return DatasetManifest(tuple(records))


def toy_instance(subject="s000", session="ses000", breath_type="normal", dur=1.0):
    n_audio = int(round(dur * 44100))
    n_motion = int(round(dur * 50))
    rng = np.random.default_rng(abs(hash((subject, session))) % 2**32)
    audio = np.round(rng.uniform(-0.5, 0.5, n_audio) * 32767) / 32767
    motion = np.round(rng.normal(0, 0.05, (n_motion, 6)), 6)
    stem = f"{subject}/{session}/{breath_type}_000"
    record = InstanceRecord(subject, session, breath_type, dur, f"{stem}.wav", f"{stem}.csv")
    return BreathInstance(record, Waveform(audio, 44100), MotionTrace(motion, 50.0))


class TestSignalFiles:
    def test_wav_roundtrip_exact(self, tmp_path):
        inst = toy_instance()
        save_wav(tmp_path / "a.wav", inst.audio)
        loaded = load_wav(tmp_path / "a.wav")
        assert loaded.rate == 44100
        assert np.array_equal(loaded.samples, inst.audio.samples)

    def test_motion_csv_roundtrip_exact(self, tmp_path):
        inst = toy_instance()
        save_motion_csv(tmp_path / "m.csv", inst.motion)
        loaded = load_motion_csv(tmp_path / "m.csv")
        assert np.array_equal(loaded.samples, inst.motion.samples)

    def test_motion_csv_five_columns_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,ax,ay,az,gx\n0.00,1,2,3,4\n")
        with pytest.raises(DataError):
            load_motion_csv(path)

    def test_motion_csv_short_row_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,ax,ay,az,gx,gy,gz\n0.00,1,2,3\n")
        with pytest.raises(DataError):
            load_motion_csv(path)


class TestManifestIO:
    def test_roundtrip_identity(self, tmp_path):
        instances = [toy_instance(s, ses) for s in ("s000", "s001") for ses in ("ses000", "ses001")]
        manifest = DatasetManifest(tuple(i.record for i in instances), root=tmp_path)
        for inst in instances:
            save_instance(tmp_path, inst.record, inst.audio, inst.motion)
        save_manifest(manifest, tmp_path)
        loaded = load_manifest(tmp_path)
        assert loaded.records == manifest.records

        # Loaded signals are bit-identical to what was generated.
        original = instances[0]
        reloaded = load_instance(loaded, loaded.records[0])
        assert np.array_equal(reloaded.audio.samples, original.audio.samples)
        assert np.array_equal(reloaded.motion.samples, original.motion.samples)

    def test_missing_wav_names_instance(self, tmp_path):
        inst = toy_instance()
        save_instance(tmp_path, inst.record, inst.audio, inst.motion)
        manifest = DatasetManifest((inst.record,), root=tmp_path)
        save_manifest(manifest, tmp_path)
        (tmp_path / inst.record.audio_path).unlink()
        with pytest.raises(DataError, match=inst.record.instance_id):
            load_manifest(tmp_path)

    def test_duration_mismatch_rejected(self, tmp_path):
        inst = toy_instance(dur=1.0)
        bad_record = InstanceRecord(
            inst.record.subject_id, inst.record.session_id, inst.record.breath_type,
            2.0, inst.record.audio_path, inst.record.motion_path,
        )
        save_instance(tmp_path, bad_record, inst.audio, inst.motion)
        save_manifest(DatasetManifest((bad_record,), root=tmp_path), tmp_path)
        with pytest.raises(DataError, match="disagrees"):
            load_manifest(tmp_path)

    def test_schema_violation_rejected(self, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps([{"subject_id": "s0"}]))
        with pytest.raises(DataError, match="keys"):
            load_manifest(tmp_path)

    def test_instance_span_mismatch_rejected(self):
        rec = InstanceRecord("s0", "ses0", "normal", 1.0, "a.wav", "m.csv")
        audio = Waveform(np.zeros(44100), 44100)
        motion = MotionTrace(np.zeros((30, 6)), 50.0)  # 0.6 s vs 1.0 s audio
        with pytest.raises(DataError, match="20 ms"):
            BreathInstance(rec, audio, motion)


class TestMakeSplit:
    def test_paper_scale_counts(self):
        # 15 subjects x 41 + 5 subjects x 40 = 815 instances of one type.
        counts = {f"s{i:03d}": (41 if i < 15 else 40) for i in range(20)}
        manifest = meta_manifest(counts)
        split = make_split(manifest, "normal", seed=0)
        assert len(split.val) == 100
        assert len(split.test) == 100
        assert len(split.train) == 615

    def test_boundary_eleven_instances(self):
        manifest = meta_manifest({"s000": 11, "s001": 12})
        split = make_split(manifest, "normal", seed=1)
        per_train = [i for i in split.train if i.startswith("s000/")]
        assert len(per_train) == 1

    def test_too_few_instances_lists_subject(self):
        manifest = meta_manifest({"s000": 10, "s001": 30})
        with pytest.raises(DataError, match="s000"):
            make_split(manifest, "normal", seed=0)

    def test_same_seed_identical(self):
        manifest = meta_manifest({f"s{i:03d}": 20 for i in range(5)})
        assert make_split(manifest, "normal", 9) == make_split(manifest, "normal", 9)

    def test_different_seeds_differ(self):
        manifest = meta_manifest({f"s{i:03d}": 20 for i in range(5)})
        base = make_split(manifest, "normal", 0)
        assert any(
            make_split(manifest, "normal", s).val != base.val for s in range(1, 11)
        )

    def test_partition_no_loss_no_duplication(self):
        manifest = meta_manifest({f"s{i:03d}": 17 for i in range(4)})
        split = make_split(manifest, "normal", 3)
        all_ids = {r.instance_id for r in manifest.of_type("normal")}
        assert split.all_ids() == all_ids
        assert len(split.train) + len(split.val) + len(split.test) == len(all_ids)
        assert not (set(split.train) & set(split.val))
        assert not (set(split.train) & set(split.test))
        assert not (set(split.val) & set(split.test))


class TestMakeScenario:
    def _paper_manifest(self):
        return meta_manifest({f"s{i:03d}": 20 for i in range(20)})

    def test_kind1_counts(self):
        manifest = self._paper_manifest()
        split = make_split(manifest, "normal", 0)
        scenario = make_scenario(manifest, split, 1, 0)
        assert scenario.genuine_count() == 100
        assert scenario.impostor_count() == 1900
        per = {}
        for t in scenario.trials:
            g, i = per.get(t.claimed_subject, (0, 0))
            per[t.claimed_subject] = (g + t.genuine, i + (not t.genuine))
        assert all(v == (5, 95) for v in per.values())

    def test_kind1_requires_twenty_subjects(self):
        manifest = meta_manifest({f"s{i:03d}": 20 for i in range(6)})
        split = make_split(manifest, "normal", 0)
        with pytest.raises(DataError, match="20"):
            make_scenario(manifest, split, 1, 0)

    def test_kind2_excludes_held_out_from_training(self):
        manifest = self._paper_manifest()
        split = make_split(manifest, "normal", 0)
        scenario = make_scenario(manifest, split, 2, 5)
        assert len(scenario.held_out_subjects) == 4
        assert set(scenario.held_out_subjects).isdisjoint(scenario.enrolled_subjects)
        reduced = restrict_split(manifest, split, scenario.enrolled_subjects)
        by_id = manifest.by_id()
        train_subjects = {by_id[i].subject_id for i in reduced.train}
        assert train_subjects.isdisjoint(scenario.held_out_subjects)

    def test_kind2_held_out_instances_attack_every_enrolled(self):
        manifest = self._paper_manifest()
        split = make_split(manifest, "normal", 0)
        scenario = make_scenario(manifest, split, 2, 5)
        by_id = manifest.by_id()
        held_ids = {r.instance_id for r in manifest.of_type("normal")
                    if r.subject_id in scenario.held_out_subjects}
        for claimed in scenario.enrolled_subjects:
            attacking = {t.instance_id for t in scenario.trials
                         if t.claimed_subject == claimed and not t.genuine}
            assert held_ids <= attacking

    def test_kind2_needs_five_subjects(self):
        manifest = meta_manifest({f"s{i:03d}": 20 for i in range(4)})
        split = make_split(manifest, "normal", 0)
        with pytest.raises(DataError):
            make_scenario(manifest, split, 2, 0)

    def test_bad_kind_rejected(self):
        manifest = self._paper_manifest()
        split = make_split(manifest, "normal", 0)
        with pytest.raises(ConfigError):
            make_scenario(manifest, split, 3, 0)


def test_manifest_duplicate_ids_rejected():
    rec = InstanceRecord("s0", "ses0", "normal", 1.0, "a.wav", "m.csv")
    with pytest.raises(DataError, match="duplicate"):
        DatasetManifest((rec, rec))
