"""Command line entry point: ``falldet <subcommand> ...``.

Every successful subcommand prints one JSON summary on stdout.  Domain
failures print one JSON line ``{"error": ..., "message": ...}`` on stderr and
exit 1; usage errors exit 2.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import tempfile
from pathlib import Path


from . import detector as det
from .domain import load_recording, save_recording
from .errors import FallDetError
from .metrics import roc_auc, youden_threshold
from .models import ModelKind, ModelSpec, load_model, parse_kind, save_model, score_windows, train_model
from .preprocess import PreprocessConfig, ScalerMethod, ScalerParams, build_dataset, load_dataset, save_dataset
from .simgen import ScenarioConfig, simulate_suite
from .transport import (ChannelFault, Decision, FaultyChannel, IngestServer, LocalChannel, Store, TcpChannel,
                        TcpIngestServer, client_session, load_all)

REC_SUFFIX = ".frec"


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _recording_paths(src: str) -> list[Path]:
    p = Path(src)
    if p.is_dir():
        paths = sorted(p.glob(f"*{REC_SUFFIX}"))
        if not paths:
            raise FileNotFoundError(f"no {REC_SUFFIX} files in {p}")
        return paths
    return [p]


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(a) -> dict:
    cfg = ScenarioConfig(n_recordings=a.recordings, target_fall_ratio=a.fall_ratio,
                         mean_duration_ms=a.duration_ms, seed=a.seed, w=a.w)
    recs = simulate_suite(cfg, n_subjects=a.subjects)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    falls = {}
    for rec in recs:
        save_recording(rec, out / f"{rec.recording_id}{REC_SUFFIX}")
        falls[rec.recording_id] = sum(1 for e in rec.events if e.kind.value == "FALL_SIGNAL")
    return {"command": "simulate", "out": str(out), "recordings": len(recs), "falls": falls,
            "total_falls": sum(falls.values())}


def cmd_serve(a) -> dict:
    store = Store(a.store_dir)
    srv = TcpIngestServer(IngestServer(store, a.allowlist), a.host, a.port)
    _emit({"command": "serve", "listening": f"{a.host}:{srv.port}", "store_dir": str(a.store_dir)})
    sys.stdout.flush()
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.server_close()
    return {"command": "serve", "stopped": True, "mutations": store.mutations}


def cmd_collect(a) -> dict:
    store = Store(a.store_dir)
    ingest = IngestServer(store, [a.source_addr])
    tcp = None
    if a.net:
        tcp = TcpIngestServer(ingest, "127.0.0.1", 0)
        tcp.start_background()
    sessions = []
    try:
        for i, path in enumerate(_recording_paths(a.recordings)):
            rec = load_recording(path)
            inner = TcpChannel("127.0.0.1", tcp.port) if tcp else LocalChannel(ingest, a.source_addr)
            ch = FaultyChannel(inner, ChannelFault(a.drop_prob, a.reorder_prob, a.seed + i))
            decision = Decision.Cancel if rec.recording_id in a.cancel else Decision.Save
            out = client_session(rec, ch, decision, budget=a.budget)
            ch.close()
            sessions.append(dict(out.to_json(), recording_id=rec.recording_id))
    finally:
        if tcp:
            tcp.shutdown()
            tcp.server_close()
    return {"command": "collect", "store_dir": str(a.store_dir), "sessions": sessions,
            "saved": sum(s["status"] == "Save" for s in sessions),
            "orphan_chunks": len(store.orphan_chunks())}


def cmd_preprocess(a) -> dict:
    if a.store_dir:
        recs = load_all(Store(a.store_dir))
    else:
        recs = [load_recording(p) for p in _recording_paths(a.recordings)]
    cfg = PreprocessConfig(w=a.w, lag_ms=a.lag_ms, stride=a.stride, scaler=ScalerMethod(a.scaler), seed=a.seed)
    ds = build_dataset(recs, cfg, dataset_id=Path(a.out).stem)
    save_dataset(ds, a.out)
    scaler_path = a.scaler_out or str(Path(a.out).with_suffix(".scaler.json"))
    ds.scaler.save(scaler_path)
    head = ds.header()
    return {"command": "preprocess", "out": a.out, "scaler": scaler_path, "recordings": len(recs),
            "windows": len(ds.y), "fall_ratio": round(ds.fall_ratio(), 6), "splits": head.get("split_sizes")}


def cmd_train(a) -> dict:
    ds = load_dataset(a.dataset)
    kind = parse_kind(a.model)
    spec = ModelSpec(kind, k=a.k, hidden_width=a.width, epochs=a.epochs, seed=a.seed)
    log = None
    if a.verbose:
        def log(m):
            print(json.dumps(m.to_json()), file=sys.stderr)
    model = train_model(spec, ds.train, ds.val, scaler=ds.scaler, w=ds.w, log=log)
    save_model(model, a.out)
    best = model.history[model.best_epoch] if model.history else None
    return {"command": "train", "model": kind.value, "out": a.out, "train_windows": len(ds.train),
            "best_epoch": model.best_epoch, "val_auc": best.val_auc if best else None,
            "epochs_run": len(model.history)}


def _threshold_from_val(model, ds) -> float:
    val = ds.val
    return youden_threshold(score_windows(model, val.X), val.y)


def cmd_eval(a) -> dict:
    model = load_model(a.model)
    ds = load_dataset(a.dataset)
    tau = a.threshold if a.threshold is not None else _threshold_from_val(model, ds)
    part = ds.part(a.split)
    scores = score_windows(model, part.X)
    rep = roc_auc(scores, part.y, tau)
    report = {
        "command": "eval", "model": model.spec.kind.value, "split": a.split, "n_pos": rep.n_pos,
        "n_neg": rep.n_neg, "auc": rep.auc, "threshold": tau, "at_threshold": rep.at_threshold.to_json(),
        "best_epoch": model.best_epoch,
    }
    if model.history:
        report["best_epoch_metrics"] = model.history[model.best_epoch].to_json()
    if a.report:
        Path(a.report).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
        report["report"] = a.report
    if a.roc_csv:
        with open(a.roc_csv, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["threshold", "fpr", "tpr"])
            for t, (fpr, tpr) in zip(rep.thresholds, rep.roc):
                wr.writerow([t, fpr, tpr])
        report["roc_csv"] = a.roc_csv
    return report


def cmd_detect(a) -> dict:
    model = load_model(a.model)
    scaler = ScalerParams.load(a.scaler)
    if a.threshold is None:
        if not a.dataset:
            raise ValueError("give --threshold or a --dataset to derive one from its validation split")
        tau = _threshold_from_val(model, load_dataset(a.dataset))
    else:
        tau = a.threshold
    if a.recording:
        rec = load_recording(a.recording)
    else:
        rec = simulate_suite(ScenarioConfig(n_recordings=1, seed=a.seed, w=model.w), n_subjects=1)[0]
    location = det.Location(a.lat, a.lon, a.address)
    outbox = a.outbox or str(Path(tempfile.gettempdir()) / "falldet-outbox.jsonl")
    runtime = det.DetectorRuntime(model, scaler, tau, a.refractory_ms)
    ctl = det.AlertController(rec.profile, location, det.OutboxSink(outbox), a.timeout_ms)
    responses = det.parse_responses(Path(a.responses).read_text()) if a.responses else []
    res = det.replay(rec, runtime, ctl, responses)
    return dict(res.summary(), command="detect", recording_id=rec.recording_id, threshold=tau, outbox=outbox)


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="falldet", description="Fall detection data pipeline")
    p.add_argument("--config", help="JSON file of flag defaults, keyed by flag name")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic recordings")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--recordings", type=int, default=20)
    s.add_argument("--subjects", type=int, default=5)
    s.add_argument("--fall-ratio", type=float, default=0.22)
    s.add_argument("--duration-ms", type=int, default=117_000)
    s.add_argument("--w", type=int, default=20, help="window size the fall ratio is targeted at")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("serve", help="run the ingest server over TCP")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8750)
    s.add_argument("--allowlist", type=lambda v: [x.strip() for x in v.split(",") if x.strip()],
                   default=["127.0.0.1"])
    s.add_argument("--store-dir", required=True)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("collect", help="upload recordings through the chunked protocol")
    s.add_argument("--recordings", required=True, help="recording file or directory")
    s.add_argument("--store-dir", required=True)
    s.add_argument("--drop-prob", type=float, default=0.0)
    s.add_argument("--reorder-prob", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--budget", type=int, default=10)
    s.add_argument("--cancel", nargs="*", default=[], help="recording ids to cancel instead of save")
    s.add_argument("--source-addr", default="127.0.0.1")
    s.add_argument("--net", action="store_true", help="use a real TCP socket")
    s.set_defaults(func=cmd_collect)

    s = sub.add_parser("preprocess", help="window, label, split and scale")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--store-dir")
    g.add_argument("--recordings")
    s.add_argument("--w", type=int, default=20)
    s.add_argument("--lag-ms", type=int, default=0)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--scaler", default="Standardise", choices=[m.value for m in ScalerMethod])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--scaler-out")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="fit a model on a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--model", required=True, help="|".join(k.value for k in ModelKind))
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--width", type=int, default=500)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="ROC/AUC report for a model on a dataset split")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--threshold", type=float)
    s.add_argument("--report")
    s.add_argument("--roc-csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("detect", help="replay a recording through the live detector")
    s.add_argument("--model", required=True)
    s.add_argument("--scaler", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--recording")
    g.add_argument("--live-sim", action="store_true", help="generate a fresh recording to replay")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threshold", type=float)
    s.add_argument("--dataset", help="derive the threshold from this dataset's validation split")
    s.add_argument("--outbox")
    s.add_argument("--responses", help="lines of '<t_ms> ok|help'")
    s.add_argument("--refractory-ms", type=int, default=det.REFRACTORY_MS)
    s.add_argument("--timeout-ms", type=int, default=det.ESCALATION_TIMEOUT_MS)
    s.add_argument("--lat", type=float, default=det.DEFAULT_LOCATION.latitude)
    s.add_argument("--lon", type=float, default=det.DEFAULT_LOCATION.longitude)
    s.add_argument("--address", default=det.DEFAULT_LOCATION.address)
    s.set_defaults(func=cmd_detect)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        cfg = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {known.config}: {exc}")
    if not isinstance(cfg, dict):
        parser.error("config must be a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            dests = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in cfg.items() if k in dests})
            for a in sp._actions:
                if a.dest in cfg:
                    a.required = False


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    _apply_config(parser, argv)
    args = parser.parse_args(argv)
    try:
        _emit(args.func(args))
    except (FallDetError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
