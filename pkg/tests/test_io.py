import json

import numpy as np
import pytest

from exprfv.core import ExpressionSequence, LabeledDataset, SymptomRecord, scale_preset, validate_dataset
from exprfv.io import (FormatError, dumps_model, load_config, load_dataset, load_gmm, load_labels,
                       load_model, load_sequence, load_sequences, loads_model, save_config,
                       save_dataset, save_gmm, save_model, save_sequences)
from exprfv.fisher import fv_length
from exprfv.pipeline import ModelBundle, PipelineConfig
from exprfv.regression import RefinableStack, init_dense

from conftest import make_dataset
from test_gmm import random_gmm


def make_bundle(K=2, N=3, scale_name="CAINS-EXP", seed=0):
    rng = np.random.default_rng(seed)
    scale = scale_preset(scale_name)
    gmm = random_gmm(rng, K, N)
    stack = RefinableStack.from_gmm(gmm, init_dense(fv_length(K, N), scale.W, seed=seed), scale)
    return ModelBundle(stack, init_dense(scale.W, 1, seed=seed + 1), PipelineConfig(K=K, scale=scale_name),
                       tuple(f"e{i}" for i in range(N)), stage_log=[{"stage": "x", "loss": 0.1}],
                       train_ids=["a", "b"])


class TestSequences:
    def test_structure(self, tmp_path):
        p = tmp_path / "vid7.csv"
        p.write_text("a,b\n0.1,0.2\n0.3,0.4\n")
        seq = load_sequence(p)
        assert seq.video_id == "vid7" and seq.frames.shape == (2, 2)
        assert seq.expression_names == ("a", "b")

    def test_wrong_column_count(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("a,b\n0.1,0.2\n0.1,0.2,0.3\n")
        with pytest.raises(FormatError) as err:
            load_sequence(p)
        assert err.value.line == 3 and "v.csv:3" in str(err.value)

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("a\n0.5\nabc\n")
        with pytest.raises(FormatError) as err:
            load_sequence(p)
        assert err.value.line == 3

    @pytest.mark.parametrize("text", ["", "# only a comment\n", "a,b\n", "a,a\n1,2\n"])
    def test_degenerate_files(self, tmp_path, text):
        p = tmp_path / "v.csv"
        p.write_text(text)
        with pytest.raises(FormatError):
            load_sequence(p)

    def test_round_trip(self, tmp_path, rng):
        seqs = [ExpressionSequence(f"s{i}", rng.uniform(size=(7, 3)), ("x", "y", "z"), 29.97)
                for i in range(3)]
        save_sequences(seqs, tmp_path)
        back = load_sequences(tmp_path)
        for a, b in zip(seqs, back):
            assert a.video_id == b.video_id and a.frame_rate_hz == b.frame_rate_hz
            assert a.frames.tobytes() == b.frames.tobytes()


class TestLabels:
    def test_panss(self, tmp_path):
        p = tmp_path / "labels.json"
        p.write_text(json.dumps({"scale": "PANSS-NEG",
                                 "symptom_names": ["flat_affect", "poor_rapport", "lack_of_spontaneity"],
                                 "records": [{"video_id": "a", "scores": [1, 2, 3], "total": 20}]}))
        recs, scale = load_labels(p)
        assert scale.W == 3 and recs[0].symptom_scores == (1, 2, 3)

    def test_cains_default_names(self, tmp_path):
        p = tmp_path / "labels.json"
        p.write_text(json.dumps({"scale": "CAINS-EXP", "records": []}))
        assert load_labels(p)[1].W == 4

    def test_unknown_preset(self, tmp_path):
        p = tmp_path / "labels.json"
        p.write_text(json.dumps({"scale": "BPRS", "records": []}))
        with pytest.raises(FormatError):
            load_labels(p)

    def test_zero_under_panss_is_violation(self, tmp_path):
        ds = make_dataset()
        recs = (SymptomRecord("v0", (0, 1, 1), 7), ds.records[1])
        save_dataset(LabeledDataset(ds.sequences, recs, ds.scale), tmp_path)
        report = validate_dataset(load_dataset(tmp_path))
        assert len(report) == 1 and report[0].kind == "range"

    def test_non_integer_scores(self, tmp_path):
        p = tmp_path / "labels.json"
        p.write_text(json.dumps({"scale": "CAINS-EXP",
                                 "records": [{"video_id": "a", "scores": [1.5, 1, 1, 1], "total": 4}]}))
        with pytest.raises(FormatError):
            load_labels(p)

    def test_bad_json_has_line(self, tmp_path):
        p = tmp_path / "labels.json"
        p.write_text('{\n"scale": "CAINS-EXP",\n"records": [\n')
        with pytest.raises(FormatError) as err:
            load_labels(p)
        assert err.value.line is not None

    def test_dataset_round_trip(self, tmp_path):
        ds = make_dataset(n_videos=3, scale="CAINS-EXP")
        save_dataset(ds, tmp_path)
        back = load_dataset(tmp_path)
        assert back.records == ds.records and back.scale == ds.scale
        for a, b in zip(ds.sequences, back.sequences):
            assert a.frames.tobytes() == b.frames.tobytes()


class TestModel:
    def test_save_load_save(self, tmp_path):
        b = make_bundle()
        save_model(b, tmp_path / "m.json")
        first = (tmp_path / "m.json").read_text()
        save_model(load_model(tmp_path / "m.json"), tmp_path / "m2.json")
        assert (tmp_path / "m2.json").read_text() == first

    def test_parameter_bytes(self, tmp_path):
        b = make_bundle()
        back = loads_model(dumps_model(b))
        for k, v in b.stack.params().items():
            assert back.stack.params()[k].tobytes() == v.tobytes()
        assert back.fc2.weights.tobytes() == b.fc2.weights.tobytes()
        assert back.config == b.config

    def test_checksum(self):
        text = dumps_model(make_bundle())
        doc = json.loads(text)
        doc["payload"]["fc2"]["biases"][0] += 1.0
        with pytest.raises(FormatError, match="checksum"):
            loads_model(json.dumps(doc))

    def test_version(self):
        doc = json.loads(dumps_model(make_bundle()))
        doc["version"] = 99
        with pytest.raises(FormatError, match="version"):
            loads_model(json.dumps(doc))

    def test_truncated(self):
        text = dumps_model(make_bundle())
        with pytest.raises(FormatError):
            loads_model(text[: len(text) // 2])

    def test_fc1_input_dimension_k16_n11(self):
        doc = json.loads(dumps_model(make_bundle(K=16, N=11)))
        assert doc["payload"]["fc1"]["in_dim"] == 368

    def test_gmm_file(self, tmp_path, rng):
        g = random_gmm(rng, 3, 2)
        save_gmm(g, tmp_path / "g.json")
        back = load_gmm(tmp_path / "g.json")
        assert back.means.tobytes() == g.means.tobytes()
        save_model(make_bundle(), tmp_path / "m.json")
        assert load_gmm(tmp_path / "m.json").K == 2


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = PipelineConfig(K=7, scale="PANSS-NEG", seed=3)
        save_config(cfg, tmp_path / "c.json")
        assert load_config(tmp_path / "c.json") == cfg

    def test_yaml(self, tmp_path):
        (tmp_path / "c.yaml").write_text("K: 4\nrefine:\n  learning_rate: 0.01\n  epochs: 3\n")
        cfg = load_config(tmp_path / "c.yaml")
        assert cfg.K == 4 and cfg.refine.epochs == 3

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.json").write_text('{"K": 4, "nope": 1}')
        with pytest.raises(FormatError):
            load_config(tmp_path / "c.json")
