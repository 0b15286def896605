"""Command-line entry point.

Subcommands: ``synth``, ``train``, ``detect``, ``eval``, ``bench``, ``model info``
and ``run`` (a synth -> train -> detect -> eval pipeline described by a JSON
manifest). Every invocation writes a run manifest; every output file is written
to a ``.tmp`` sibling first and renamed into place.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_csv, make_windows, minmax_normalize, split_train_val, write_csv, write_json
from .detector import best_f1_threshold, detect, evaluate, multi_entity_average, threshold_labels, window_scores
from .errors import CleanetError, ConfigurationError
from .model import ConjugateModel, ModelConfig, make_variant, model_info
from .synth import SynthConfig, generate
from .trainer import CONTRASTIVE_MODES, TrainConfig, train

try:
    import resource
except ImportError:  # pragma: no cover - not available on Windows
    resource = None

log = logging.getLogger("cleanet")

VARIANTS = ("conjugate", "flattened", "time_only", "feature_only")


class UsageError(Exception):
    """Bad combination of flags; reported with exit status 2."""


def _peak_memory_kb() -> int | None:
    if resource is None:
        return None
    return int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss)


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("CLEANET_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"CLEANET_SEED must be an integer, got {env!r}") from None


def _threshold_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {text!r}") from None


class Manifest:
    """Collects what a run needs to be replayed and writes it on exit."""

    def __init__(self, subcommand: str, argv: list[str], path):
        self.path = Path(path) if path else None
        self.data = {
            "tool": "cleanet",
            "version": __version__,
            "subcommand": subcommand,
            "argv": list(argv),
            "config": {},
            "seed": None,
            "inputs": {},
            "outputs": {},
            "platform": {"python": platform.python_version(), "numpy": np.__version__,
                         "machine": platform.machine(), "system": platform.system()},
            "started_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        self._t0 = time.perf_counter()

    def finish(self, status: str, error: str | None = None) -> None:
        self.data["status"] = status
        if error:
            self.data["error"] = error
        self.data["wall_clock_s"] = time.perf_counter() - self._t0
        self.data["peak_memory_kb"] = _peak_memory_kb()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            write_json(self.path, self.data)


def _sibling(path, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + suffix)


# -- synth -------------------------------------------------------------------

def cmd_synth(args, man: Manifest) -> int:
    cfg = SynthConfig(d=args.d, T=args.t, test_T=args.test_t, rho=args.rho,
                      anomaly_rate=args.anomaly_rate, seed=args.seed)
    data = generate(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"train": out / "train.csv", "test": out / "test.csv", "train_mask": out / "train_mask.csv"}
    write_csv(paths["train"], data.train)
    write_csv(paths["test"], data.test, data.test_labels)
    tmp = paths["train_mask"].with_name("train_mask.csv.tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "contaminated"])
        writer.writerows(enumerate(data.train_mask.tolist()))
    tmp.replace(paths["train_mask"])
    man.data["config"] = {**cfg.to_dict(), "period_range": list(cfg.period_range)}
    man.data["outputs"] = {k: str(v) for k, v in paths.items()}
    print(json.dumps({"train_contaminated": int(data.train_mask.sum()),
                      "test_anomalous": int(data.test_labels.sum()),
                      "injections": len(data.train_injections) + len(data.test_injections)}))
    return 0


# -- train -------------------------------------------------------------------

def _train_config(args) -> TrainConfig:
    if args.baseline and args.lam is not None:
        raise UsageError("--baseline disables the contrastive term; it cannot be combined with --lambda")
    base = dict(
        epochs=args.epochs, batch_size=args.batch, lr=args.lr, patience=args.patience, seed=args.seed,
        variant=args.variant, hidden_time=args.hidden_time, hidden_feature=args.hidden_feature,
        cont_k=args.cont_k, cont_alpha=args.cont_alpha, cont_tau=args.cont_tau, temperature=args.temp,
        num_s=args.num_s, infonce=args.infonce, warmup_epochs=args.warmup,
    )
    if args.baseline:
        return TrainConfig.baseline(**base)
    lam = 0.1 if args.lam is None else args.lam
    return TrainConfig(lam=lam, contrastive=args.contrastive, **base)


def cmd_train(args, man: Manifest) -> int:
    config = _train_config(args)
    config.validate()
    series, _ = load_csv(args.data, label_col=args.label_col)
    norm, stats = minmax_normalize(series)
    tr, va = split_train_val(make_windows(norm, args.window, args.stride), args.val_ratio)
    if len(tr) < 2:
        raise ConfigurationError(f"only {len(tr)} training windows; lower --window or supply more data")
    lines = []

    def emit(rec):
        line = json.dumps(rec, sort_keys=True)
        lines.append(line)
        print(line, flush=True)

    model, report = train(tr, va, config)
    for rec in report.epochs:
        emit({"type": "epoch", **rec})
    model.norm_stats = stats
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    report.checkpoint_path = str(out)
    emit({"type": "summary", "best_epoch": report.best_epoch, "best_val_error": report.best_val_error,
          "stopped_early": report.stopped_early, "checkpoint_path": str(out),
          "n_train_windows": len(tr), "n_val_windows": len(va)})
    outputs = {"model": str(out)}
    report_path = Path(args.report) if args.report else _sibling(out, ".train.jsonl")
    tmp = report_path.with_name(report_path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(report_path)
    outputs["report"] = str(report_path)
    if args.profile_csv and report.profile is not None:
        report.profile.to_csv(args.profile_csv)
        outputs["profile"] = args.profile_csv
    if args.clusters_csv and report.partition is not None:
        report.partition.to_csv(args.clusters_csv)
        outputs["clusters"] = args.clusters_csv
    man.data["config"] = {**config.to_dict(), "window": args.window, "stride": args.stride or args.window,
                          "val_ratio": args.val_ratio, "label_col": args.label_col}
    man.data["inputs"] = {"data": str(args.data)}
    man.data["outputs"] = outputs
    return 0


# -- detect ------------------------------------------------------------------

def _test_windows(model: ConjugateModel, path, label_col):
    series, labels = load_csv(path, label_col=label_col)
    if model.norm_stats is None:
        raise ConfigurationError("checkpoint carries no normalization statistics")
    norm, _ = minmax_normalize(series, model.norm_stats)
    w = model.config.w
    return series, labels, make_windows(norm, w, w, cover_tail=True)


def cmd_detect(args, man: Manifest) -> int:
    model = ConjugateModel.load(args.model)
    series, labels, windows = _test_windows(model, args.data, args.label_col)
    rep = detect(model, windows, series.T, labels, args.threshold, entity_id=series.entity_id)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_json(out, rep.to_dict())
    outputs = {"report": str(out)}
    if args.dump_scores:
        rep.dump_scores(args.dump_scores, labels)
        outputs["scores"] = args.dump_scores
    man.data["config"] = {"threshold": args.threshold, "label_col": args.label_col, "window": model.config.w,
                          "stride": model.config.w}
    man.data["inputs"] = {"model": str(args.model), "data": str(args.data)}
    man.data["outputs"] = outputs
    print(json.dumps({k: rep.to_dict()[k] for k in ("threshold", "precision", "recall", "f1")}))
    return 0


# -- eval --------------------------------------------------------------------

def _read_scores(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "score" not in rows[0]:
        raise ConfigurationError(f"{path}: expected a 'score' column")
    scores = np.array([float(r["score"]) for r in rows])
    labels = np.array([int(r["label"]) for r in rows]) if "label" in rows[0] else None
    return scores, labels


def cmd_eval(args, man: Manifest) -> int:
    if args.reports:
        reports = [json.loads(Path(p).read_text()) for p in args.reports]
        m = multi_entity_average(reports)
        result = {"entities": len(reports), "precision": m.precision, "recall": m.recall, "f1": m.f1}
        man.data["inputs"] = {"reports": list(args.reports)}
    else:
        scores, labels = _read_scores(args.scores)
        if args.labels:
            _, labels = load_csv(args.labels, label_col=args.label_col)
        if labels is None:
            raise ConfigurationError("no labels: add a 'label' column to the scores file or pass --labels")
        if args.threshold == "auto":
            thr, m = best_f1_threshold(scores, labels)
        else:
            thr = args.threshold
            m = evaluate(threshold_labels(scores, thr), labels)
        result = {"threshold": thr if np.isfinite(thr) else str(thr), **m.as_dict()}
        man.data["inputs"] = {"scores": str(args.scores), **({"labels": str(args.labels)} if args.labels else {})}
    man.data["config"] = {"threshold": args.threshold}
    if args.out:
        write_json(args.out, result)
        man.data["outputs"] = {"result": str(args.out)}
    print(json.dumps(result, sort_keys=True))
    return 0


# -- bench / model info --------------------------------------------------------

def cmd_bench(args, man: Manifest) -> int:
    if args.reps < 3:
        raise ConfigurationError("--reps must be at least 3")
    model = ConjugateModel.load(args.model)
    _, _, windows = _test_windows(model, args.data, args.label_col)
    x = windows.windows
    window_scores(model, x[:1])  # warm-up
    times = []
    for _ in range(args.reps):
        t0 = time.perf_counter()
        window_scores(model, x)
        times.append(time.perf_counter() - t0)
    median = float(np.median(times))
    result = {
        "repetitions": args.reps,
        "n_windows": int(len(x)),
        "median_inference_s": median,
        "per_window_ms": 1000.0 * median / len(x),
        "times_s": times,
        "parameters": model.n_params,
        "macs_per_window": model.macs_per_window(),
        "peak_memory_kb": _peak_memory_kb(),
    }
    if args.out:
        write_json(args.out, result)
        man.data["outputs"] = {"result": str(args.out)}
    man.data["config"] = {"reps": args.reps}
    man.data["inputs"] = {"model": str(args.model), "data": str(args.data)}
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_model_info(args, man: Manifest) -> int:
    if args.model:
        model = ConjugateModel.load(args.model)
        man.data["inputs"] = {"model": str(args.model)}
    else:
        if args.d is None or args.w is None:
            raise UsageError("model info needs --model or both --d and --w")
        model = make_variant(ModelConfig(args.d, args.w, args.hidden_time, args.hidden_feature, 1, args.variant), 0)
    info = model_info(model)
    man.data["config"] = {k: info[k] for k in ("variant", "d", "w", "hidden_time", "hidden_feature", "n_layers")}
    if args.out:
        write_json(args.out, info)
        man.data["outputs"] = {"info": str(args.out)}
    print(json.dumps(info, sort_keys=True))
    return 0


# -- run (pipeline) ------------------------------------------------------------

PIPELINE_SECTIONS = ("out_dir", "seed", "synth", "data", "train", "detect")


def resolve_pipeline(spec: dict, out_dir: str | None = None) -> dict:
    """Fill every default so the stored manifest alone reproduces the run."""
    unknown = set(spec) - set(PIPELINE_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown pipeline manifest keys: {sorted(unknown)}")
    seed = int(spec.get("seed", 0))
    synth = {**SynthConfig().to_dict(), "seed": seed, **spec.get("synth", {})}
    synth["period_range"] = list(synth["period_range"])
    for name in ("spike_len", "shift_len", "shift_sd", "spike_sd", "drift_len", "correlated_len", "latent_sd"):
        synth[name] = list(synth[name])
    data = {"window": 100, "stride": None, "val_ratio": 0.8, **spec.get("data", {})}
    train_cfg = {**TrainConfig(seed=seed).to_dict(), **spec.get("train", {})}
    TrainConfig.from_dict(train_cfg).validate()
    detect_cfg = {"threshold": "auto", "dump_scores": False, **spec.get("detect", {})}
    return {"out_dir": out_dir or spec.get("out_dir", "cleanet-run"), "seed": seed, "synth": synth,
            "data": data, "train": train_cfg, "detect": detect_cfg}


def run_pipeline(spec: dict, man: Manifest) -> int:
    from .pipeline import prepare

    out = Path(spec["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    stage = "synth"
    try:
        s = spec["synth"]
        synth_cfg = SynthConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in s.items()})
        data = generate(synth_cfg)
        write_csv(out / "train.csv", data.train)
        write_csv(out / "test.csv", data.test, data.test_labels)
        stage = "train"
        prep = prepare(data.train, data.test, spec["data"]["window"], spec["data"]["stride"],
                       spec["data"]["val_ratio"])
        model, report = train(prep.train, prep.val, TrainConfig.from_dict(spec["train"]))
        model.norm_stats = prep.stats
        model.save(out / "model.json")
        lines = [json.dumps({"type": "epoch", **e}, sort_keys=True) for e in report.epochs]
        tmp = out / "train_report.jsonl.tmp"
        tmp.write_text("\n".join(lines) + "\n")
        tmp.replace(out / "train_report.jsonl")
        stage = "detect"
        rep = detect(model, prep.test, prep.test_T, data.test_labels, spec["detect"]["threshold"],
                     entity_id=f"synth-{synth_cfg.seed}")
        stage = "eval"
        result = rep.to_dict()
        result["train"] = {"best_epoch": report.best_epoch, "best_val_error": report.best_val_error,
                           "epochs_run": len(report.epochs), "stopped_early": report.stopped_early}
        write_json(out / "report.json", result)
        if spec["detect"]["dump_scores"]:
            rep.dump_scores(out / "scores.csv", data.test_labels)
    except ConfigurationError as exc:
        raise ConfigurationError(f"stage {stage} failed: {exc}") from exc
    except Exception as exc:
        raise RuntimeError(f"stage {stage} failed: {exc}") from exc
    man.data["config"] = {"pipeline": spec}
    man.data["seed"] = spec["seed"]
    man.data["outputs"] = {name: str(out / name) for name in ("train.csv", "test.csv", "model.json",
                                                              "train_report.jsonl", "report.json")}
    print(json.dumps({k: result[k] for k in ("threshold", "precision", "recall", "f1")}))
    return 0


def cmd_run(args, man: Manifest) -> int:
    raw = json.loads(Path(args.manifest_file).read_text())
    if "subcommand" in raw:  # a manifest written by an earlier run: replay it
        if raw["subcommand"] == "run":
            spec = raw["config"]["pipeline"]
        else:
            return main(raw["argv"])
    else:
        spec = raw
    spec = resolve_pipeline(spec, args.out_dir)
    if not args.manifest:
        man.path = Path(spec["out_dir"]) / "manifest.json"
    man.data["inputs"] = {"manifest": str(args.manifest_file)}
    return run_pipeline(spec, man)


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cleanet", description="Contamination-resilient MTS anomaly detection.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="default: $CLEANET_SEED or 0")
        sp.add_argument("--manifest", default=None, help="where to write the run manifest")

    s = sub.add_parser("synth", help="generate a contaminated synthetic dataset")
    s.add_argument("--d", type=int, default=8)
    s.add_argument("--t", type=int, default=20000)
    s.add_argument("--test-t", type=int, default=None)
    s.add_argument("--rho", type=float, default=0.1)
    s.add_argument("--anomaly-rate", type=float, default=0.1)
    s.add_argument("--out-dir", required=True)
    common(s)

    t = sub.add_parser("train", help="train a model on a CSV series")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path (JSON)")
    t.add_argument("--report", default=None, help="TrainReport JSON lines (default: next to --out)")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--lambda", dest="lam", type=float, default=None, help="contrastive weight (default 0.1)")
    t.add_argument("--baseline", action="store_true", help="plain reconstruction training, no CRTF")
    t.add_argument("--variant", choices=VARIANTS, default="conjugate")
    t.add_argument("--lr", type=float, default=1e-2)
    t.add_argument("--patience", type=int, default=5)
    t.add_argument("--warmup", type=int, default=1)
    t.add_argument("--hidden-time", type=int, default=16)
    t.add_argument("--hidden-feature", type=int, default=16)
    t.add_argument("--window", type=int, default=100)
    t.add_argument("--stride", type=int, default=None, help="default: the window length")
    t.add_argument("--val-ratio", type=float, default=0.8, help="training share of the split")
    t.add_argument("--label-col", default="label")
    t.add_argument("--cont-k", type=int, default=10)
    t.add_argument("--cont-alpha", type=float, default=100.0)
    t.add_argument("--cont-tau", type=_threshold_arg, default="auto")
    t.add_argument("--contrastive", choices=CONTRASTIVE_MODES, default="on")
    t.add_argument("--temp", type=float, default=0.1)
    t.add_argument("--num-s", type=int, default=3)
    t.add_argument("--infonce", action="store_true", help="include positives in the denominator")
    t.add_argument("--profile-csv", default=None)
    t.add_argument("--clusters-csv", default=None)
    common(t)

    d = sub.add_parser("detect", help="score a CSV series with a trained model")
    d.add_argument("--model", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--threshold", type=_threshold_arg, default="auto")
    d.add_argument("--out", required=True)
    d.add_argument("--dump-scores", default=None, help="per-timestamp scores CSV")
    d.add_argument("--label-col", default="label")
    common(d)

    e = sub.add_parser("eval", help="P/R/F1 from a scores CSV, or average entity reports")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--scores")
    src.add_argument("--reports", nargs="+")
    e.add_argument("--labels", default=None, help="CSV with a label column (if the scores file has none)")
    e.add_argument("--label-col", default="label")
    e.add_argument("--threshold", type=_threshold_arg, default="auto")
    e.add_argument("--out", default=None)
    common(e)

    b = sub.add_parser("bench", help="inference time, parameters, MACs and memory")
    b.add_argument("--model", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--label-col", default="label")
    b.add_argument("--out", default=None)
    common(b)

    m = sub.add_parser("model", help="model utilities")
    msub = m.add_subparsers(dest="model_command", required=True)
    mi = msub.add_parser("info", help="parameter count and MACs")
    mi.add_argument("--model", default=None, help="checkpoint; otherwise describe a fresh model")
    mi.add_argument("--d", type=int, default=None)
    mi.add_argument("--w", type=int, default=None)
    mi.add_argument("--variant", choices=VARIANTS, default="conjugate")
    mi.add_argument("--hidden-time", type=int, default=16)
    mi.add_argument("--hidden-feature", type=int, default=16)
    mi.add_argument("--out", default=None)
    common(mi)

    r = sub.add_parser("run", help="synth -> train -> detect -> eval from a pipeline manifest")
    r.add_argument("manifest_file")
    r.add_argument("--out-dir", default=None, help="overrides the manifest's out_dir")
    common(r)
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval,
            "bench": cmd_bench, "model": cmd_model_info, "run": cmd_run}


def _manifest_path(args) -> Path | None:
    if args.manifest:
        return Path(args.manifest)
    if args.command == "synth":
        return Path(args.out_dir) / "synth.manifest.json"
    if args.command in ("train", "detect"):
        return _sibling(args.out, ".manifest.json")
    if args.command == "run":
        return None  # decided once the out_dir is known
    out = getattr(args, "out", None)
    if out:
        return _sibling(out, ".manifest.json")
    name = "model-info" if args.command == "model" else args.command
    return Path(f"cleanet-{name}.manifest.json")


def _run(args, argv) -> int:
    args.seed = _resolve_seed(args.seed)
    man = Manifest(args.command if args.command != "model" else "model info", argv, _manifest_path(args))
    man.data["seed"] = args.seed
    try:
        code = COMMANDS[args.command](args, man)
    except BaseException as exc:
        man.finish("error", f"{type(exc).__name__}: {exc}")
        raise
    man.finish("ok")
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be positive")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return _run(args, argv)
        return _run(args, argv)
    except (UsageError, ConfigurationError) as exc:
        parser.error(str(exc))  # exits with status 2
    except (CleanetError, OSError, RuntimeError, ValueError, KeyError) as exc:
        print(f"cleanet: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
