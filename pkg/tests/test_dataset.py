import csv
from dataclasses import replace

import numpy as np
import pytest

from limbnet import dataset as ds
from limbnet.errors import (CompletenessError, DuplicateRecordingError, MissingColumnError,
                            NonNumericError, ParseError, RowWidthError, SampleRateError,
                            UnknownActivityError, ValidationError)
from limbnet.pipeline import build_frames
from oracles import nearest_mean_energy_accuracy


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return path


def minimal_recording(path, n=5):
    rows = [["time", "vm", "st", "bf", "rf"]]
    rows += [[f"{i / 1000:.3f}", i, 2 * i, 3 * i, 4 * i] for i in range(n)]
    return write_rows(path, rows)


class TestReadCsv:
    def test_minimal(self, tmp_path):
        semg, angle = ds.read_semg_csv(minimal_recording(tmp_path / "r.csv"))
        assert semg.shape == (4, 5) and angle is None
        np.testing.assert_array_equal(semg[3], [0, 4, 8, 12, 16])

    def test_header_case_and_order(self, tmp_path):
        path = write_rows(tmp_path / "r.csv", [["RF", "BF", "ST", "VM"], [4, 3, 2, 1]])
        semg, _ = ds.read_semg_csv(path)
        np.testing.assert_array_equal(semg[:, 0], [1, 2, 3, 4])

    def test_missing_rf(self, tmp_path):
        path = write_rows(tmp_path / "r.csv", [["vm", "st", "bf"], [1, 2, 3]])
        with pytest.raises(MissingColumnError) as exc:
            ds.read_semg_csv(path)
        assert exc.value.column == "RF"
        assert "RF" in str(exc.value)

    def test_row_width(self, tmp_path):
        path = write_rows(tmp_path / "r.csv", [["vm", "st", "bf", "rf"], [1, 2, 3, 4], [1, 2, 3]])
        with pytest.raises(RowWidthError) as exc:
            ds.read_semg_csv(path)
        assert exc.value.line == 3

    def test_non_numeric(self, tmp_path):
        path = write_rows(tmp_path / "r.csv", [["vm", "st", "bf", "rf"], [1, 2, 3, 4],
                                               [1, "x", 3, 4]])
        with pytest.raises(NonNumericError) as exc:
            ds.read_semg_csv(path)
        assert exc.value.line == 3
        assert str(exc.value).split(": ")[0].endswith("r.csv:3")

    def test_wrong_time_step(self, tmp_path):
        rows = [["time", "vm", "st", "bf", "rf"]] + [[i / 500, 0, 0, 0, 0] for i in range(4)]
        with pytest.raises(SampleRateError):
            ds.read_semg_csv(write_rows(tmp_path / "r.csv", rows))

    def test_declared_rate(self, tmp_path):
        ok = write_rows(tmp_path / "ok.csv", [["# sample_rate=1000"], ["vm", "st", "bf", "rf"],
                                              [1, 2, 3, 4]])
        assert ds.read_semg_csv(ok)[0].shape == (4, 1)
        bad = write_rows(tmp_path / "bad.csv", [["# sample_rate=2000"], ["vm", "st", "bf", "rf"],
                                                [1, 2, 3, 4]])
        with pytest.raises(SampleRateError):
            ds.read_semg_csv(bad)

    def test_empty(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        with pytest.raises(ParseError):
            ds.read_semg_csv(tmp_path / "e.csv")
        write_rows(tmp_path / "h.csv", [["vm", "st", "bf", "rf"]])
        with pytest.raises(ParseError):
            ds.read_semg_csv(tmp_path / "h.csv")

    def test_column_map(self, tmp_path):
        path = write_rows(tmp_path / "r.csv", [["EMG1", "EMG2", "EMG3", "EMG4", "knee"],
                                               [1, 2, 3, 4, 45]])
        semg, angle = ds.read_semg_csv(path, {"vm": "EMG1", "st": "EMG2", "bf": "EMG3",
                                              "rf": "EMG4", "angle": "knee"})
        np.testing.assert_array_equal(semg[:, 0], [1, 2, 3, 4])
        np.testing.assert_array_equal(angle, [45])

    def test_parse_errors_are_validation_errors(self):
        for cls in (MissingColumnError, RowWidthError, NonNumericError, SampleRateError):
            assert issubclass(cls, ValidationError)


class TestRecording:
    def test_round_trip(self, tmp_path, rng):
        meta = ds.SubjectMeta("A03", "abnormal", "meniscus")
        rec = ds.Recording(meta, "gait", rng.normal(size=(4, 300)), 1000, rng.normal(size=300))
        path = tmp_path / ds.canonical_filename(meta, "gait")
        ds.write_recording(rec, path)
        back = ds.load_recording(path)
        assert back.meta == meta and back.activity == "gait"
        np.testing.assert_allclose(back.semg, rec.semg, rtol=0, atol=1e-9)
        np.testing.assert_allclose(back.knee_angle, rec.knee_angle, rtol=0, atol=1e-9)

    def test_filename_convention(self):
        meta, act = ds.meta_from_filename("x/H07_healthy_sitting_knee_extension.csv")
        assert meta == ds.SubjectMeta("H07", "healthy") and act == "sitting_knee_extension"
        with pytest.raises(ParseError):
            ds.meta_from_filename("H07_healthy_running.csv")

    @pytest.mark.parametrize("kwargs,err", [
        (dict(activity="running"), UnknownActivityError),
        (dict(sample_rate=500), SampleRateError),
        (dict(semg=np.zeros((3, 10))), ValidationError),
    ])
    def test_invalid(self, kwargs, err):
        base = dict(meta=ds.SubjectMeta("H01", "healthy"), activity="gait",
                    semg=np.zeros((4, 10)), sample_rate=1000)
        base.update(kwargs)
        with pytest.raises(err):
            ds.Recording(**base)

    def test_meta_validation(self):
        with pytest.raises(ValidationError):
            ds.SubjectMeta("H01", "healthy", "ACL")
        with pytest.raises(ValidationError):
            ds.SubjectMeta("X", "unknown")


class TestManifest:
    def test_load_written_dataset(self, small_dataset_dir):
        data = ds.load_dataset(small_dataset_dir)
        assert len(data.recordings) == 18
        assert sorted(data.subjects()) == ["A01", "A02", "A03", "H01", "H02", "H03"]

    def _manifest(self, tmp_path, rows):
        minimal_recording(tmp_path / "a.csv")
        return write_rows(tmp_path / "manifest.csv", [list(ds.MANIFEST_FIELDS)] + rows)

    def test_duplicate(self, tmp_path):
        row = ["a.csv", "H01", "healthy", "none", "gait"]
        with pytest.raises(DuplicateRecordingError):
            ds.load_dataset(self._manifest(tmp_path, [row, row]))

    def test_unknown_activity(self, tmp_path):
        with pytest.raises(UnknownActivityError):
            ds.load_dataset(self._manifest(tmp_path, [["a.csv", "H01", "healthy", "none", "run"]]))

    def test_missing_manifest_column(self, tmp_path):
        path = write_rows(tmp_path / "m.csv", [["file", "subject_id"], ["a.csv", "H01"]])
        with pytest.raises(MissingColumnError):
            ds.load_dataset(path)

    def test_strict_requires_complete_grid(self, full_dataset_dir, tmp_path):
        data = ds.load_dataset(full_dataset_dir, strict=True)
        assert len(data.subjects()) == 22 and len(data.recordings) == 66
        partial = ds.Dataset(data.recordings[:-1])
        with pytest.raises(CompletenessError, match="A11/gait"):
            ds.check_complete(partial)

    def test_strict_rejects_small(self, small_dataset_dir):
        with pytest.raises(CompletenessError):
            ds.load_dataset(small_dataset_dir, strict=True)

    def test_label_map_validation(self, synthetic_dataset):
        with pytest.raises(ValidationError):
            ds.Dataset(synthetic_dataset.recordings, {"gait": 0})


class TestSynthetic:
    def test_seeded(self):
        a = ds.generate_synthetic_dataset(4, 300, rng=np.random.default_rng(5))
        b = ds.generate_synthetic_dataset(4, 300, rng=np.random.default_rng(5))
        for ra, rb in zip(a.recordings, b.recordings):
            np.testing.assert_array_equal(ra.semg, rb.semg)

    def test_cohorts(self):
        metas = ds.synthetic_subjects(22)
        assert sum(m.cohort == "healthy" for m in metas) == 11
        abn = [m.abnormality for m in metas if m.cohort == "abnormal"]
        assert (abn.count("ACL"), abn.count("meniscus"), abn.count("sciatic")) == (6, 4, 1)

    def test_zero_noise_is_pure_sinusoid(self):
        params = replace(ds.SignatureParams(), noise=0.0)
        data = ds.generate_synthetic_dataset(3, 500, params, np.random.default_rng(1))
        freqs = np.asarray(params.frequencies)
        for rec in data.recordings:
            c = ds.ACTIVITIES.index(rec.activity)
            for ch in range(4):
                # a sampled sinusoid obeys x[n+1] + x[n-1] = 2 cos(w) x[n]
                x = rec.semg[ch]
                w = 2 * np.pi * freqs[c, ch] / ds.SAMPLE_RATE
                np.testing.assert_allclose(x[2:] + x[:-2], 2 * np.cos(w) * x[1:-1], atol=1e-12)

    def test_classes_separable_by_energy(self, synthetic_dataset):
        subjects = sorted(synthetic_dataset.subjects())
        train = build_frames(synthetic_dataset, subjects[:18])
        test = build_frames(synthetic_dataset, subjects[18:])
        assert nearest_mean_energy_accuracy(train, test) > 0.90

    def test_invalid_params(self):
        with pytest.raises(ValidationError):
            ds.generate_synthetic_dataset(2)
        with pytest.raises(ValidationError):
            ds.generate_synthetic_dataset(4, params=replace(ds.SignatureParams(), noise=-1))


def test_convert(tmp_path):
    src = write_rows(tmp_path / "vendor.csv",
                     [["t", "A", "B", "C", "D", "K"]]
                     + [[i / 1000, i, i + 1, i + 2, i + 3, 10 * i] for i in range(6)])
    n = ds.convert_csv(src, tmp_path / "out.csv", {"vm": "A", "st": "B", "bf": "C", "rf": "D"},
                       time_column="t", angle_column="K")
    assert n == 6
    semg, angle = ds.read_semg_csv(tmp_path / "out.csv")
    np.testing.assert_array_equal(semg[:, 2], [2, 3, 4, 5])
    np.testing.assert_array_equal(angle, np.arange(6) * 10)
