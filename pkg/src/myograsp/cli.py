"""Command line interface: generate, preprocess, train, evaluate, report.

Configuration precedence per command: built-in defaults < config file
(plain ``key = value`` lines) < environment variables prefixed MYOGRASP_
< explicit command-line flags.  Results accumulate in an append-only CSV
keyed by (model, protocol, fold, ada, seed) so a full experiment grid can
be assembled incrementally from independent processes.

Exit codes: 0 success, 2 configuration error, 3 IO/data error, 4 numeric
failure (NaN loss).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys

import numpy as np

from . import datapipe, splits, synthgen
from .errors import ConfigError, DataError, NumericError
from .metrics import angle_ranges, nrmse, rmse
from .network import Network, NetworkConfig, load_checkpoint, save_checkpoint
from .numerics import derive_rng
from .training import TargetStats, TrainConfig, predict, train

log = logging.getLogger("myograsp.cli")

ENV_PREFIX = "MYOGRASP_"
RESULTS_HEADER = "metric,model,protocol,ada,fold,seed,value"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def _coerce(value: str, target_type):
    if target_type is bool:
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {value!r}")
    try:
        return target_type(value)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {target_type.__name__} from {value!r}") from exc


def read_config_file(path) -> dict:
    """Plain key = value lines; '#' starts a comment."""
    out = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return out


def resolve_config(cls, args: argparse.Namespace, flag_names: dict):
    """Layer defaults, config file, MYOGRASP_* environment and flags."""
    field_types = {f.name: f.type for f in dataclasses.fields(cls)}
    type_map = {"int": int, "float": float, "str": str, "bool": bool}
    values = {}

    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        unknown = set(file_values) - set(field_types)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)

    for name in field_types:
        env = os.environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            values[name] = env

    coerced = {}
    for name, raw in values.items():
        t = field_types[name]
        t = type_map.get(t, t) if isinstance(t, str) else t
        coerced[name] = _coerce(raw, t) if isinstance(raw, str) else raw

    for field_name, flag in flag_names.items():
        val = getattr(args, flag, None)
        if val is not None:
            coerced[field_name] = val

    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    flags = {"n_subjects": "subjects", "sessions_per_subject": "sessions",
             "session_seconds": "seconds", "mode": "mode", "seed": "seed",
             "noise_std": "noise_std", "emg_rate": "emg_rate",
             "angle_rate": "angle_rate",
             "subject_mixing_perturbation": "perturbation"}
    cfg = resolve_config(synthgen.SynthConfig, args, flags)
    manifest = synthgen.write_dataset(cfg, args.out)
    n = len(manifest["recordings"])
    log.info("generated %d recordings (%d stream files) under %s",
             n, 2 * n, args.out)
    print(os.path.join(args.out, "manifest.json"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class PreprocessConfig:
    stride: int = 8
    max_gap: float = datapipe.MAX_GAP_MS
    emg_cutoff: float = datapipe.EMG_CUTOFF_HZ
    angle_cutoff: float = datapipe.ANGLE_CUTOFF_HZ
    target_margin: int = datapipe.EDGE_MARGIN_ROWS


def cmd_preprocess(args) -> int:
    flags = {"stride": "stride", "max_gap": "max_gap",
             "emg_cutoff": "emg_cutoff", "angle_cutoff": "angle_cutoff",
             "target_margin": "target_margin"}
    cfg = resolve_config(PreprocessConfig, args, flags)
    manifest = datapipe.read_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))

    window_sets = []
    for entry in manifest["recordings"]:
        emg = datapipe.read_stream_csv(os.path.join(base, entry["emg"]),
                                       entry["subject"], entry["session"],
                                       "emg", manifest["emg_rate"])
        ang = datapipe.read_stream_csv(os.path.join(base, entry["angles"]),
                                       entry["subject"], entry["session"],
                                       "angles", manifest["angle_rate"])
        ws, _ = datapipe.preprocess_session(
            emg, ang, stride=cfg.stride, max_gap=cfg.max_gap,
            emg_cutoff=cfg.emg_cutoff, angle_cutoff=cfg.angle_cutoff,
            target_margin=cfg.target_margin)
        window_sets.append(ws)
    combined = datapipe.concat_windows(window_sets)

    meta = {"mode": manifest["mode"], "n_angles": manifest["n_angles"],
            "emg_rate": manifest["emg_rate"], "stride": cfg.stride,
            "max_gap": cfg.max_gap, "target_margin": cfg.target_margin,
            "linear_baseline_nrmse": manifest.get("linear_baseline_nrmse")}
    datapipe.save_archive(args.out, combined, meta)
    log.info("archived %d windows from %d sessions to %s",
             len(combined), len(window_sets), args.out)
    print(args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class TrainRunConfig:
    model: str = "gru"
    protocol: str = "intra"
    fold: int = 0
    ada: bool = False
    seed: int = 0
    hidden: int = 256
    layers: int = 2
    predictor_hidden: int = 256
    learning_rate: float = 0.001
    max_epochs: int = 30
    patience: int = 8
    batch_size: int = 64
    disc_loss_weight: float = 1.0


def _canonical_protocol(name: str) -> str:
    if name in ("intra", "intra-session"):
        return "intra-session"
    if name in ("inter-session", "inter-subject"):
        return name
    raise ConfigError(f"unknown protocol {name!r}")


def checkpoint_name(model: str, protocol: str, fold: int, seed: int, ada: bool) -> str:
    tag = "_ada" if ada else ""
    return f"{model}_{protocol}_fold{fold}_seed{seed}{tag}"


def cmd_train(args) -> int:
    flags = {"model": "model", "protocol": "protocol", "fold": "fold",
             "ada": "ada", "seed": "seed", "hidden": "hidden",
             "layers": "layers", "predictor_hidden": "predictor_hidden",
             "learning_rate": "lr", "max_epochs": "epochs",
             "patience": "patience", "batch_size": "batch_size",
             "disc_loss_weight": "disc_weight"}
    cfg = resolve_config(TrainRunConfig, args, flags)
    protocol = _canonical_protocol(cfg.protocol)
    if cfg.ada and protocol == "intra-session":
        raise ConfigError("--ada requires a multi-domain protocol "
                          "(inter-session or inter-subject)")
    if cfg.model not in ("vanilla", "gru", "sru"):
        raise ConfigError(f"unknown model {cfg.model!r}")

    window_set, meta = datapipe.load_archive(args.archive)
    plan = splits.make_split(protocol, window_set, meta["sessions"],
                             cfg.fold, cfg.seed)
    train_idx = plan.indices(splits.TRAIN)
    val_idx = plan.indices(splits.VALIDATION)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise DataError(f"split produced empty train ({len(train_idx)}) or "
                        f"validation ({len(val_idx)}) set")
    log.info("split %s fold %d: %s", protocol, cfg.fold, plan.counts())

    stats = datapipe.channel_stats(window_set, train_idx)
    _, train_targets = window_set.materialize(train_idx)
    target_stats = TargetStats.fit(train_targets)
    domains = plan.domain_labels[train_idx] if cfg.ada else None
    train_src = datapipe.WindowSource(window_set, train_idx, stats, domains)
    val_src = datapipe.WindowSource(window_set, val_idx, stats)

    net_cfg = NetworkConfig(
        cell_type=cfg.model, input_channels=8, hidden_size=cfg.hidden,
        num_recurrent_layers=cfg.layers, predictor_hidden=cfg.predictor_hidden,
        output_angles=int(meta["n_angles"]), use_discriminator=cfg.ada,
        num_domains=plan.num_domains if cfg.ada else 0)
    net = Network.init(net_cfg, derive_rng(cfg.seed, "init"))
    train_cfg = TrainConfig(learning_rate=cfg.learning_rate,
                            max_epochs=cfg.max_epochs, patience=cfg.patience,
                            batch_size=cfg.batch_size,
                            disc_loss_weight=cfg.disc_loss_weight,
                            seed=cfg.seed)
    net, report = train(net, train_src, val_src, train_cfg, target_stats)

    os.makedirs(args.out_dir, exist_ok=True)
    stem = checkpoint_name(cfg.model, protocol, cfg.fold, cfg.seed, cfg.ada)
    ckpt_path = os.path.join(args.out_dir, stem + ".ckpt")
    save_checkpoint(ckpt_path, net, meta={
        "model": cfg.model, "protocol": protocol, "fold": cfg.fold,
        "seed": cfg.seed, "ada": cfg.ada, "mode": meta["mode"],
        "norm_mean": stats.mean.tolist(), "norm_std": stats.std.tolist(),
        "target_mean": target_stats.mean.tolist(),
        "target_std": target_stats.std.tolist(),
        "best_epoch": report.best_epoch,
        "best_val_nrmse": report.best_val_nrmse})
    report.to_csv(os.path.join(args.out_dir, stem + "_report.csv"))
    if args.split_audit:
        plan.to_csv(args.split_audit, window_set)
    log.info("best epoch %d (val NRMSE %.4f), stopped at epoch %d",
             report.best_epoch, report.best_val_nrmse, report.stopping_epoch)
    print(ckpt_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def append_results(path, rows) -> None:
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        if new:
            fh.write(RESULTS_HEADER + "\n")
        w = csv.writer(fh)
        for row in rows:
            w.writerow(row)


def cmd_evaluate(args) -> int:
    net, meta = load_checkpoint(args.checkpoint)
    window_set, archive_meta = datapipe.load_archive(args.archive)
    if int(archive_meta["n_angles"]) != net.config.output_angles:
        raise ConfigError(
            f"checkpoint predicts {net.config.output_angles} angles but archive "
            f"holds {archive_meta['n_angles']} ({archive_meta['mode']} mode)")

    protocol = _canonical_protocol(args.protocol or meta["protocol"])
    fold = meta["fold"] if args.fold is None else args.fold
    seed = int(meta["seed"])
    plan = splits.make_split(protocol, window_set, archive_meta["sessions"],
                             fold, seed)
    test_idx = plan.indices(splits.TEST)
    if len(test_idx) == 0:
        raise DataError("split produced an empty test set")

    stats = datapipe.NormStats(mean=np.asarray(meta["norm_mean"]),
                               std=np.asarray(meta["norm_std"]))
    xs, ys = window_set.materialize(test_idx)
    preds = predict(net, stats.apply(xs))
    if "target_mean" in meta:
        preds = TargetStats(mean=np.asarray(meta["target_mean"]),
                            std=np.asarray(meta["target_std"])).denormalize(preds)
    test_rmse = rmse(preds, ys)
    test_nrmse = nrmse(preds, ys, angle_ranges(ys))

    ada = "true" if meta["ada"] else "false"
    rows = [["rmse", meta["model"], protocol, ada, fold, seed, f"{test_rmse:.10g}"],
            ["nrmse", meta["model"], protocol, ada, fold, seed, f"{test_nrmse:.10g}"]]
    append_results(args.results, rows)
    log.info("%s fold %d: rmse=%.4f nrmse=%.4f on %d test windows",
             protocol, fold, test_rmse, test_nrmse, len(test_idx))

    if args.dump_trajectories:
        order = np.argsort(window_set.end_ts[test_idx], kind="stable")
        n_angles = ys.shape[1]
        header = ("end_timestamp_ms,"
                  + ",".join(f"true{i}" for i in range(n_angles)) + ","
                  + ",".join(f"pred{i}" for i in range(n_angles)))
        data = np.column_stack([window_set.end_ts[test_idx][order],
                                ys[order], preds[order]])
        np.savetxt(args.dump_trajectories, data, fmt="%.6f", delimiter=",",
                   header=header, comments="")
    print(f"rmse={test_rmse:.6f} nrmse={test_nrmse:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

_COLUMNS = [("intra-session", None), ("inter-session", "false"),
            ("inter-session", "true"), ("inter-subject", "false"),
            ("inter-subject", "true")]
_COLUMN_TITLES = ["Intra session", "Inter session", "Inter session ADA",
                  "Inter subjects", "Inter subjects ADA"]


def read_results(path) -> list:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read results file {path}: {exc}") from exc
    if not rows:
        raise DataError(f"results file {path} is empty")
    return rows


def aggregate_results(rows):
    cells = {}
    for row in rows:
        key = (row["metric"], row["model"], row["protocol"], row["ada"])
        cells.setdefault(key, []).append(float(row["value"]))
    out = {}
    for key, values in cells.items():
        arr = np.asarray(values)
        out[key] = (float(arr.mean()), float(arr.std()), len(arr))
    return out


def format_table(agg) -> str:
    metrics = sorted({k[0] for k in agg})
    models = sorted({k[1] for k in agg})
    lines = []
    widths = [max(len(t), 15) for t in _COLUMN_TITLES]
    name_w = max([len(m) for m in models] + [10])
    header = f"{'Metric':8} {'Model':{name_w}} " + " ".join(
        f"{t:>{w}}" for t, w in zip(_COLUMN_TITLES, widths))
    lines.append(header)
    lines.append("-" * len(header))
    for metric in metrics:
        for model in models:
            cells = []
            for (protocol, ada), w in zip(_COLUMNS, widths):
                candidates = ([(metric, model, protocol, a) for a in ("false", "true")]
                              if ada is None else [(metric, model, protocol, ada)])
                found = next((agg[k] for k in candidates if k in agg), None)
                if found is None:
                    cells.append(f"{'-':>{w}}")
                else:
                    mean, std, _ = found
                    cells.append(f"{mean:.4f}±{std:.4f}".rjust(w))
            lines.append(f"{metric:8} {model:{name_w}} " + " ".join(cells))
    return "\n".join(lines)


def cmd_report(args) -> int:
    rows = read_results(args.results)
    agg = aggregate_results(rows)
    table = format_table(agg)
    print(table)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "model", "protocol", "ada", "mean", "std", "n"])
            for (metric, model, protocol, ada), (mean, std, n) in sorted(agg.items()):
                w.writerow([metric, model, protocol, ada,
                            f"{mean:.10g}", f"{std:.10g}", n])
        log.info("aggregated %d result rows into %s", len(rows), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="myograsp",
        description="Recurrent-network gesture regression on multichannel "
                    "emg-style recordings")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--config", help="key = value config file")
    g.add_argument("--seed", type=int)
    g.add_argument("--subjects", type=int)
    g.add_argument("--sessions", type=int)
    g.add_argument("--seconds", type=float)
    g.add_argument("--mode", choices=["immobile", "mobile"])
    g.add_argument("--noise-std", dest="noise_std", type=float)
    g.add_argument("--emg-rate", dest="emg_rate", type=float)
    g.add_argument("--angle-rate", dest="angle_rate", type=float)
    g.add_argument("--perturbation", type=float,
                   help="subject mixing perturbation (domain gap strength)")
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="align, filter and window a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output archive (.npz)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--stride", type=int)
    p.add_argument("--max-gap", dest="max_gap", type=float)
    p.add_argument("--emg-cutoff", dest="emg_cutoff", type=float)
    p.add_argument("--angle-cutoff", dest="angle_cutoff", type=float)
    p.add_argument("--target-margin", dest="target_margin", type=int)
    p.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="train a model on an archive")
    t.add_argument("--archive", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--model", choices=["vanilla", "gru", "sru"])
    t.add_argument("--protocol",
                   choices=["intra", "intra-session", "inter-session", "inter-subject"])
    t.add_argument("--fold", type=int)
    t.add_argument("--ada", action="store_const", const=True, default=None,
                   help="adversarial domain adaptation")
    t.add_argument("--seed", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--predictor-hidden", dest="predictor_hidden", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--disc-weight", dest="disc_weight", type=float)
    t.add_argument("--split-audit", help="write the split plan CSV here")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on its test fold")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--archive", required=True)
    e.add_argument("--results", required=True, help="append-only results CSV")
    e.add_argument("--protocol",
                   choices=["intra", "intra-session", "inter-session", "inter-subject"])
    e.add_argument("--fold", type=int)
    e.add_argument("--dump-trajectories",
                   help="write predicted vs true angle time series CSV")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="aggregate a results CSV into a table")
    r.add_argument("--results", required=True)
    r.add_argument("--out", help="also write the aggregated CSV here")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_IO
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
