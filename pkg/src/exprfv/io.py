"""Text file formats for sequences, labels, configs, models and reports.

Layout of a dataset directory::

    <root>/labels.json
    <root>/sequences/<video_id>.csv

Each sequence file holds an optional ``# frame_rate_hz=<value>`` line, a
header of expression names and one row of probabilities per frame.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .core import (ExpressionSequence, LabeledDataset, SymptomRecord, SymptomScaleSpec,
                   scale_preset)
from .gmm import GaussianMixture
from .pipeline import ColumnScaling, ModelBundle, OutputScaling, PipelineConfig
from .regression import DenseLayer, RefinableStack

MODEL_FORMAT = "exprfv-model"
MODEL_VERSION = 1


class FormatError(ValueError):
    """Malformed input file; carries the path and 1-based line number when known."""

    def __init__(self, path, message, line: Optional[int] = None):
        self.path = str(path)
        self.line = line
        loc = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{loc}: {message}")


def _fmt(x: float) -> str:
    return repr(float(x))


# -- sequences ---------------------------------------------------------------

def save_sequence(seq: ExpressionSequence, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# frame_rate_hz={_fmt(seq.frame_rate_hz)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(seq.expression_names)
        for row in seq.frames:
            w.writerow([_fmt(v) for v in row])


def save_sequences(seqs: Iterable[ExpressionSequence], directory) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for seq in seqs:
        p = directory / f"{seq.video_id}.csv"
        save_sequence(seq, p)
        paths.append(p)
    return paths


def load_sequence(path) -> ExpressionSequence:
    path = Path(path)
    frame_rate = 25.0
    header = None
    rows = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                key, _, value = text[1:].strip().partition("=")
                if key.strip() == "frame_rate_hz":
                    try:
                        frame_rate = float(value)
                    except ValueError:
                        raise FormatError(path, f"bad frame rate {value!r}", lineno) from None
                continue
            fields = next(csv.reader([text]))
            if header is None:
                header = [f.strip() for f in fields]
                if len(set(header)) != len(header) or any(not h for h in header):
                    raise FormatError(path, "header must list distinct expression names", lineno)
                continue
            if len(fields) != len(header):
                raise FormatError(path, f"expected {len(header)} columns, found {len(fields)}", lineno)
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise FormatError(path, f"non-numeric value ({exc})", lineno) from None
    if header is None:
        raise FormatError(path, "missing header row")
    if not rows:
        raise FormatError(path, "no frames")
    return ExpressionSequence(path.stem, np.array(rows), tuple(header), frame_rate)


def load_sequences(path) -> List[ExpressionSequence]:
    """Load one ``.csv`` file or every ``.csv`` in a directory, sorted by id."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise FormatError(path, "no .csv sequence files")
        return sorted((load_sequence(f) for f in files), key=lambda s: s.video_id)
    return [load_sequence(path)]


# -- labels ------------------------------------------------------------------

def save_labels(records: Iterable[SymptomRecord], scale: SymptomScaleSpec, path) -> None:
    doc = {
        "scale": scale.scale_name,
        "symptom_names": list(scale.symptom_names),
        "records": [{"video_id": r.video_id, "scores": list(r.symptom_scores),
                     "total": r.total_score}
                    for r in sorted(records, key=lambda r: r.video_id)],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_labels(path) -> Tuple[List[SymptomRecord], SymptomScaleSpec]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict) or "scale" not in doc or "records" not in doc:
        raise FormatError(path, "expected an object with 'scale' and 'records'")
    try:
        scale = scale_preset(doc["scale"], doc.get("symptom_names"))
    except ValueError as exc:
        raise FormatError(path, str(exc)) from None
    records = []
    for i, r in enumerate(doc["records"]):
        try:
            scores = r["scores"]
            if any(not isinstance(s, int) or isinstance(s, bool) for s in scores) or \
                    not isinstance(r["total"], int):
                raise FormatError(path, f"record {i}: scores must be integers")
            records.append(SymptomRecord(str(r["video_id"]), tuple(scores), r["total"]))
        except (KeyError, TypeError) as exc:
            raise FormatError(path, f"record {i}: missing or malformed field {exc}") from None
    return records, scale


def save_dataset(dataset: LabeledDataset, root) -> None:
    root = Path(root)
    save_sequences(dataset.sequences, root / "sequences")
    save_labels(dataset.records, dataset.scale, root / "labels.json")


def load_dataset(root) -> LabeledDataset:
    root = Path(root)
    records, scale = load_labels(root / "labels.json")
    seqs = load_sequences(root / "sequences")
    return LabeledDataset(tuple(seqs), tuple(records), scale)


# -- config ------------------------------------------------------------------

def load_config(path) -> PipelineConfig:
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix in (".yaml", ".yml"):
            import yaml
            doc = yaml.safe_load(text) or {}
        else:
            doc = json.loads(text)
    except Exception as exc:
        raise FormatError(path, f"unreadable config: {exc}") from None
    try:
        return PipelineConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise FormatError(path, str(exc)) from None


def save_config(config: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


# -- models ------------------------------------------------------------------

def _arr(a):
    return np.asarray(a, dtype=np.float64).tolist()


def _dense_doc(layer: DenseLayer) -> dict:
    return {"in_dim": layer.in_dim, "out_dim": layer.out_dim, "activation": layer.activation,
            "weights": _arr(layer.weights), "biases": _arr(layer.biases)}


def _dense_from(doc) -> DenseLayer:
    layer = DenseLayer(np.array(doc["weights"], dtype=np.float64).reshape(doc["out_dim"], doc["in_dim"]),
                       np.array(doc["biases"], dtype=np.float64), doc["activation"])
    return layer


def _scaling_doc(s: Optional[OutputScaling]):
    return None if s is None else {"in_lo": s.in_lo, "in_hi": s.in_hi,
                                   "out_lo": s.out_lo, "out_hi": s.out_hi}


def _scaling_from(d) -> Optional[OutputScaling]:
    return None if d is None else OutputScaling(d["in_lo"], d["in_hi"], d["out_lo"], d["out_hi"])


def bundle_payload(bundle: ModelBundle) -> dict:
    st = bundle.stack
    gmm = st.gmm
    scale = st.scale
    return {
        "config": bundle.config.to_dict(),
        "expression_names": list(bundle.expression_names),
        "scale": {"scale_name": scale.scale_name, "symptom_names": list(scale.symptom_names),
                  "min_score": scale.min_score, "max_score": scale.max_score,
                  "total_min": scale.total_min, "total_max": scale.total_max},
        "gmm": {"K": gmm.K, "N": gmm.N, "weights": _arr(gmm.weights), "means": _arr(gmm.means),
                "variances": _arr(gmm.variances), "logits": _arr(st.logits),
                "log_vars": _arr(st.log_vars), "variance_floor": st.variance_floor,
                "posterior_threshold": st.posterior_threshold},
        "fc1": _dense_doc(st.fc1),
        "fc2": _dense_doc(bundle.fc2),
        "symptom_scaling": None if bundle.symptom_scaling is None else
        [_scaling_doc(c) for c in bundle.symptom_scaling.columns],
        "total_scaling": _scaling_doc(bundle.total_scaling),
        "stage_log": bundle.stage_log,
        "train_ids": list(bundle.train_ids),
    }


def _canonical(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def dumps_model(bundle: ModelBundle) -> str:
    payload = bundle_payload(bundle)
    digest = hashlib.sha256(_canonical(payload).encode()).hexdigest()
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "checksum": digest, "payload": payload}
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def save_model(bundle: ModelBundle, path) -> None:
    Path(path).write_text(dumps_model(bundle))


def loads_model(text: str, path="<model>") -> ModelBundle:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"truncated or invalid checkpoint: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise FormatError(path, "not an exprfv model checkpoint")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(path, f"checkpoint version {doc.get('version')!r}, "
                                f"this build reads version {MODEL_VERSION}")
    payload = doc.get("payload")
    if hashlib.sha256(_canonical(payload).encode()).hexdigest() != doc.get("checksum"):
        raise FormatError(path, "checksum mismatch")
    try:
        sc = payload["scale"]
        scale = SymptomScaleSpec(**sc)
        g = payload["gmm"]
        K, N = g["K"], g["N"]
        fc1 = _dense_from(payload["fc1"])
        stack = RefinableStack(np.array(g["logits"], dtype=np.float64),
                               np.array(g["means"], dtype=np.float64).reshape(K, N),
                               np.array(g["log_vars"], dtype=np.float64).reshape(K, N),
                               fc1, scale, g["variance_floor"], g["posterior_threshold"])
        ss = payload["symptom_scaling"]
        return ModelBundle(
            stack=stack,
            fc2=_dense_from(payload["fc2"]),
            config=PipelineConfig.from_dict(payload["config"]),
            expression_names=tuple(payload["expression_names"]),
            symptom_scaling=None if ss is None else ColumnScaling(tuple(_scaling_from(c) for c in ss)),
            total_scaling=_scaling_from(payload["total_scaling"]),
            stage_log=payload["stage_log"],
            train_ids=list(payload["train_ids"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(path, f"malformed checkpoint payload: {exc}") from None


def load_model(path) -> ModelBundle:
    path = Path(path)
    return loads_model(path.read_text(), path)


def save_gmm(gmm: GaussianMixture, path) -> None:
    doc = {"format": "exprfv-gmm", "version": MODEL_VERSION, "weights": _arr(gmm.weights),
           "means": _arr(gmm.means), "variances": _arr(gmm.variances)}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_gmm(path) -> GaussianMixture:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON: {exc.msg}", exc.lineno) from None
    if doc.get("format") == MODEL_FORMAT:
        return loads_model(path.read_text(), path).gmm
    if doc.get("format") != "exprfv-gmm":
        raise FormatError(path, "not a mixture file")
    return GaussianMixture(doc["weights"], doc["means"], doc["variances"])


# -- reports -----------------------------------------------------------------

def write_rows(rows: List[dict], path, fieldnames=None) -> None:
    rows = list(rows)
    fieldnames = fieldnames or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
