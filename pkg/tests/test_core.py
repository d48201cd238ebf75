import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from exprfv.core import (DataError, ExpressionSequence, LabeledDataset, SymptomRecord,
                         normalize_sequence, scale_preset, validate_dataset)

from conftest import make_dataset


def test_presets():
    panss = scale_preset("PANSS-NEG")
    assert (panss.min_score, panss.max_score, panss.W) == (1, 7, 3)
    cains = scale_preset("CAINS-EXP")
    assert (cains.min_score, cains.max_score, cains.W) == (0, 4, 4)
    with pytest.raises(DataError):
        scale_preset("SANS")


def test_sequence_rejects_empty_and_ragged():
    with pytest.raises(DataError):
        ExpressionSequence("a", np.zeros((0, 2)), ("x", "y"))
    with pytest.raises(DataError):
        ExpressionSequence("a", np.zeros((3, 2)), ("x",))


class TestValidate:
    def test_well_formed(self, small_dataset):
        assert validate_dataset(small_dataset) == []

    def test_score_out_of_range(self):
        ds = make_dataset()
        bad = SymptomRecord("v0", (9, 1, 1), 7)
        ds = LabeledDataset(ds.sequences, (bad, ds.records[1]), ds.scale)
        report = validate_dataset(ds)
        assert len(report) == 1
        assert report[0].kind == "range" and "flat_affect=9" in report[0].message

    def test_missing_record(self):
        ds = make_dataset()
        ds = LabeledDataset(ds.sequences, ds.records[:1], ds.scale)
        report = validate_dataset(ds)
        assert [v.kind for v in report] == ["correspondence"]
        assert report[0].video_id == "v1"

    def test_nan_and_range_entries(self):
        ds = make_dataset()
        frames = ds.sequences[0].frames.copy()
        frames[0, 0] = np.nan
        frames[1, 1] = 1.5
        seq = ExpressionSequence("v0", frames, ds.sequences[0].expression_names)
        ds = LabeledDataset((seq, ds.sequences[1]), ds.records, ds.scale)
        assert sorted(v.kind for v in validate_dataset(ds)) == ["nan", "range"]

    def test_coverage_option(self, small_dataset):
        report = validate_dataset(small_dataset, 0.9, {"v0": 0.95, "v1": 0.5})
        assert [(v.kind, v.video_id) for v in report] == [("coverage", "v1")]

    def test_ids_sorted(self):
        ds = make_dataset(n_videos=3)
        shuffled = LabeledDataset(ds.sequences[::-1], ds.records, ds.scale)
        assert shuffled.video_ids == ["v0", "v1", "v2"]


class TestNormalize:
    def test_constant_column(self):
        seq = ExpressionSequence("a", np.full((3, 1), 0.3), ("x",))
        np.testing.assert_allclose(normalize_sequence(seq).frames, 0.0, atol=1e-15)

    def test_two_frames(self):
        seq = ExpressionSequence("a", np.array([[0.0], [1.0]]), ("x",))
        np.testing.assert_array_equal(normalize_sequence(seq).frames, [[-0.5], [0.5]])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 6)),
                  elements=st.floats(0, 1)))
    def test_columns_sum_to_zero(self, frames):
        out = normalize_sequence(ExpressionSequence("a", frames, tuple(map(str, range(frames.shape[1]))))).frames
        T = frames.shape[0]
        # separate summation pass in python floats
        for j in range(frames.shape[1]):
            assert abs(sum(float(v) for v in out[:, j])) <= 1e-9 * T
        assert out.shape == frames.shape
        assert np.all(np.abs(out) <= 1.0)
        twice = normalize_sequence(normalize_sequence(ExpressionSequence("a", frames, tuple(map(str, range(frames.shape[1]))))))
        np.testing.assert_allclose(twice.frames, out, atol=1e-9, rtol=0)
