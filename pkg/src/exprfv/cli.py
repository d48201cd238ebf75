"""Command line entry point: ``exprfv <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as fio
from .core import normalize_sequence, validate_dataset
from .fisher import encode
from .gmm import fit_em
from .pipeline import (PipelineConfig, band_masks, frequency_matrix, loocv, predict_video,
                       run_training_stages)
from .stats import correlation_table

log = logging.getLogger("exprfv")


def _config(args) -> PipelineConfig:
    cfg = fio.load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed,
                      refine=replace(cfg.refine, seed=args.seed),
                      fc2=replace(cfg.fc2, seed=args.seed))
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _figures(args):
    if args.no_figures:
        return None
    from . import plotting
    return plotting


def cmd_synth(args):
    from .synthetic import SyntheticSpec, generate_synthetic
    spec = SyntheticSpec(V=args.videos, T_range=tuple(args.frames), N=args.expressions,
                         K_true=args.components, noise_sd=args.noise, scale=args.scale,
                         seed=0 if args.seed is None else args.seed)
    dataset, manifest = generate_synthetic(spec)
    out = _out(args)
    fio.save_dataset(dataset, out)
    fio.write_json(manifest, out / "manifest.json")
    print(f"wrote {dataset.V} videos to {out}")


def _dataset(path):
    return fio.load_dataset(path)


def cmd_validate(args):
    dataset = _dataset(args.dataset)
    detected = json.loads(Path(args.detected).read_text()) if args.detected else None
    report = validate_dataset(dataset, args.min_detected, detected)
    rows = [{"kind": v.kind, "video_id": v.video_id or "", "message": v.message} for v in report]
    if args.out:
        out = _out(args)
        fio.write_rows(rows, out / "validation.csv", ["kind", "video_id", "message"])
        fio.write_json({"valid": not report, "violations": rows}, out / "validation.json")
    for v in report:
        print(v)
    print(f"{dataset.V} videos, {len(report)} violation(s)")
    return 1 if report else 0


def cmd_fit_gmm(args):
    cfg = _config(args)
    seqs = fio.load_sequences(args.sequences)
    pooled = np.concatenate([normalize_sequence(s).frames for s in seqs])
    res = fit_em(pooled, cfg.K, cfg.em_config())
    out = _out(args)
    fio.save_gmm(res.gmm, out / "gmm.json")
    fio.write_rows([{"iteration": i, "log_likelihood": ll} for i, ll in enumerate(res.log_likelihoods)],
                   out / "em_trace.csv")
    fio.write_json({"K": cfg.K, "frames": pooled.shape[0], "iterations": res.n_iter,
                    "converged": res.converged, "reseeded": res.reseeded}, out / "em_summary.json")
    plotting = _figures(args)
    if plotting:
        plotting.plot_em_trace(res.log_likelihoods, out / "em_trace.png")
    print(f"EM: {res.n_iter} iterations, log-likelihood {res.log_likelihoods[-1]:.6g}")


def cmd_train(args):
    cfg = _config(args)
    dataset = _dataset(args.dataset)
    problems = validate_dataset(dataset)
    if problems:
        raise ValueError("dataset invalid: " + "; ".join(map(str, problems[:5])))
    bundle = run_training_stages(dataset, cfg)
    out = _out(args)
    fio.save_model(bundle, out / "model.json")
    losses = bundle.stage_log[1]["losses"]
    fio.write_rows([{"epoch": i, "loss": l} for i, l in enumerate(losses)], out / "loss_trace.csv")
    fio.write_json([{k: v for k, v in e.items() if k != "losses"} for e in bundle.stage_log],
                   out / "stage_log.json")
    plotting = _figures(args)
    if plotting:
        plotting.plot_loss_trace(losses, out / "loss_trace.png")
    for entry in bundle.stage_log:
        print(entry["stage"], {k: v for k, v in entry.items() if k not in ("stage", "losses")})


def cmd_encode(args):
    cfg = _config(args)
    gmm = fio.load_gmm(args.model)
    seqs = fio.load_sequences(args.sequences)
    out = _out(args)
    rows = []
    for s in seqs:
        fv = encode(normalize_sequence(s), gmm, cfg.posterior_threshold)
        rows.append([s.video_id] + [repr(float(v)) for v in fv.values])
    import csv
    with open(out / "fisher_vectors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id"] + [f"fv{i}" for i in range(len(rows[0]) - 1)])
        w.writerows(rows)
    print(f"encoded {len(rows)} sequences, length {len(rows[0]) - 1}")


def cmd_predict(args):
    bundle = fio.load_model(args.model)
    seqs = fio.load_sequences(args.sequences)
    scale = bundle.scale
    rows = []
    for s in seqs:
        p = predict_video(bundle, s)
        row = {"video_id": s.video_id}
        row.update({n: v for n, v in zip(scale.symptom_names, p.symptom_scores)})
        row["total"] = p.total
        rows.append(row)
    out = _out(args)
    fio.write_rows(rows, out / "predictions.csv")
    fio.write_json(rows, out / "predictions.json")
    for r in rows:
        print(r)


def cmd_loocv(args):
    cfg = _config(args)
    dataset = _dataset(args.dataset)
    res = loocv(dataset, cfg, n_jobs=args.threads)
    out = _out(args)
    scale = dataset.scale
    fold_rows = []
    for f in res.folds:
        row = {"video_id": f.held_out_id}
        for n, p, t in zip(scale.symptom_names, f.predicted.symptom_scores, f.truth.symptom_scores):
            row[f"{n}_pred"], row[f"{n}_true"] = p, t
        row["total_pred"], row["total_true"] = f.predicted.total_score, f.truth.total_score
        fold_rows.append(row)
    fio.write_rows(fold_rows, out / "folds.csv")
    fio.write_json({"folds": [{"held_out_id": f.held_out_id, "train_ids": list(f.train_ids)}
                              for f in res.folds]}, out / "fold_manifest.json")
    metric_rows = [{"target": k, **v} for k, v in res.metrics.items()]
    fio.write_rows(metric_rows, out / "metrics.csv", ["target", "pcc", "mae", "rmse"])
    fio.write_json(res.metrics, out / "metrics.json")
    lines = [f"{'target':<24}{'PCC':>8}{'MAE':>8}{'RMSE':>8}"]
    lines += [f"{r['target']:<24}{r['pcc']:>8.3f}{r['mae']:>8.3f}{r['rmse']:>8.3f}" for r in metric_rows]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    plotting = _figures(args)
    if plotting:
        plotting.plot_predictions(res.folds, scale, out / "predictions.png")
    print("\n".join(lines))


def cmd_correlate(args):
    cfg = _config(args)
    dataset = _dataset(args.dataset)
    F = frequency_matrix(dataset, cfg.binarize_threshold)
    masks = None if args.no_band else band_masks(F, args.band)
    names = list(dataset.sequences[0].expression_names)
    table = correlation_table(F, dataset.symptom_matrix(), dataset.totals(), names,
                              list(dataset.scale.symptom_names), masks)
    out = _out(args)
    fio.write_rows([{"video_id": vid, **{n: float(v) for n, v in zip(names, row)}}
                    for vid, row in zip(dataset.video_ids, F)], out / "frequencies.csv")
    rows = list(table.rows())
    fio.write_rows(rows, out / "correlations.csv")
    fio.write_json(rows, out / "correlations.json")
    (out / "correlations.txt").write_text(table.render() + "\n")
    plotting = _figures(args)
    if plotting:
        plotting.plot_correlation_heatmap(table, out / "correlations.png")
    print(table.render())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML file mirroring PipelineConfig")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="parallel LOOCV folds")
    common.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="exprfv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic labeled dataset")
    p.add_argument("--videos", type=int, default=40)
    p.add_argument("--frames", type=int, nargs=2, default=(500, 2000), metavar=("MIN", "MAX"))
    p.add_argument("--expressions", type=int, default=11)
    p.add_argument("--components", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--scale", default="CAINS-EXP")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", parents=[common], help="check a dataset against its invariants")
    p.add_argument("dataset")
    p.add_argument("--min-detected", type=float, default=None)
    p.add_argument("--detected", help="JSON map video_id -> fraction of frames with a face")
    p.set_defaults(func=cmd_validate, out=None)

    p = sub.add_parser("fit-gmm", parents=[common], help="stage 2: EM on pooled frames")
    p.add_argument("sequences", help="directory of sequence CSV files")
    p.set_defaults(func=cmd_fit_gmm)

    p = sub.add_parser("train", parents=[common], help="stages 2-4 on a labeled dataset")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", parents=[common], help="Fisher Vectors for sequences")
    p.add_argument("model", help="gmm.json or model.json")
    p.add_argument("sequences")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("predict", parents=[common], help="integer symptom scores")
    p.add_argument("model")
    p.add_argument("sequences")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("loocv", parents=[common], help="leave-one-subject-out evaluation")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_loocv)

    p = sub.add_parser("correlate", parents=[common], help="frequency/symptom Spearman table")
    p.add_argument("dataset")
    p.add_argument("--band", type=float, default=1.5, help="outlier band width in sigmas")
    p.add_argument("--no-band", action="store_true")
    p.set_defaults(func=cmd_correlate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except Exception as exc:  # noqa: BLE001 - reported as a structured error
        if args.verbose:
            log.exception("command failed")
        err = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("path", "line", "stage", "tensor"):
            if getattr(exc, attr, None) is not None:
                err[attr] = getattr(exc, attr)
        print(json.dumps(err), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
