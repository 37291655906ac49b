"""Desk-scale trend check: SRU vs GRU across protocols, with/without ADA.

Used to calibrate the synthetic generator and the acceptance thresholds;
prints mean NRMSE per (model, protocol, ada) cell over the given seeds.
"""

import argparse
import logging
import time
import warnings

import numpy as np

from myograsp import datapipe, splits, synthgen
from myograsp.metrics import angle_ranges, nrmse
from myograsp.network import Network, NetworkConfig
from myograsp.numerics import derive_rng
from myograsp.training import TargetStats, TrainConfig, predict, train


def build_dataset(seed, n_subjects=3, n_sessions=5, seconds=60.0, stride=64):
    cfg = synthgen.SynthConfig(n_subjects=n_subjects, sessions_per_subject=n_sessions,
                               session_seconds=seconds, seed=seed)
    window_sets, sessions = [], []
    floor = None
    for subj in range(cfg.n_subjects):
        for sess in range(cfg.sessions_per_subject):
            emg, ang, _ = synthgen.generate_session(cfg, subj, sess)
            if subj == 0 and sess == 0:
                floor = synthgen.linear_baseline_nrmse(emg, ang)
            ws, rec = datapipe.preprocess_session(emg, ang, stride=stride)
            window_sets.append(ws)
            sessions.append({"subject": subj, "session": sess,
                             "t_start": float(rec.timestamps_ms[0]),
                             "t_end": float(rec.timestamps_ms[-1])})
    return datapipe.concat_windows(window_sets), sessions, floor


def run_one(ws, sessions, model, protocol, ada, seed, epochs, hidden=32,
            pred_hidden=64, batch=128, fold=0, lr=0.001):
    plan = splits.make_split(protocol, ws, sessions, fold, seed)
    tr, va, te = plan.indices(0), plan.indices(1), plan.indices(2)
    stats = datapipe.channel_stats(ws, tr)
    _, ytr = ws.materialize(tr)
    target_stats = TargetStats.fit(ytr)
    domains = plan.domain_labels[tr] if ada else None
    train_src = datapipe.WindowSource(ws, tr, stats, domains)
    val_src = datapipe.WindowSource(ws, va, stats)
    ncfg = NetworkConfig(cell_type=model, hidden_size=hidden,
                         predictor_hidden=pred_hidden, output_angles=15,
                         use_discriminator=ada,
                         num_domains=plan.num_domains if ada else 0)
    net = Network.init(ncfg, derive_rng(seed, "init"))
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        net, report = train(net, train_src, val_src,
                            TrainConfig(learning_rate=lr, max_epochs=epochs,
                                        patience=epochs, batch_size=batch, seed=seed),
                            target_stats)
    xs, ys = ws.materialize(te)
    preds = target_stats.denormalize(predict(net, stats.apply(xs)))
    value = nrmse(preds, ys, angle_ranges(ys))
    return value, time.perf_counter() - t0, [e.seconds for e in report.epochs]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--stride", type=int, default=64)
    ap.add_argument("--seconds", type=float, default=60.0)
    args = ap.parse_args()
    logging.disable(logging.INFO)

    cells_grid = [("sru", "intra", False), ("gru", "intra", False),
                  ("sru", "inter-session", False), ("gru", "inter-session", False),
                  ("sru", "inter-session", True), ("gru", "inter-session", True),
                  ("sru", "inter-subject", False), ("gru", "inter-subject", False),
                  ("sru", "inter-subject", True), ("gru", "inter-subject", True)]
    results = {k: [] for k in cells_grid}
    for seed in args.seeds:
        ws, sessions, floor = build_dataset(seed, seconds=args.seconds,
                                            stride=args.stride)
        print(f"seed {seed}: {len(ws)} windows, floor {floor:.4f}")
        for model, protocol, ada in cells_grid:
            value, elapsed, _ = run_one(ws, sessions, model, protocol, ada,
                                        seed, args.epochs, hidden=args.hidden)
            results[(model, protocol, ada)].append(value)
            print(f"  {model:4s} {protocol:14s} ada={int(ada)}: "
                  f"nrmse {value:.4f} ({elapsed:.0f}s)")
    print("\nmeans over seeds:")
    means = {}
    for key, vals in results.items():
        means[key] = float(np.mean(vals))
        print(f"  {key}: {means[key]:.4f}  (runs: {[round(v, 4) for v in vals]})")

    sru_i, gru_i = means[("sru", "intra", False)], means[("gru", "intra", False)]
    sru_s, gru_s = means[("sru", "inter-session", False)], means[("gru", "inter-session", False)]
    print("\ntrend (a) intra:        sru %.4f vs gru %.4f -> %s" %
          (sru_i, gru_i, "OK" if sru_i <= gru_i * 1.02 else "FAIL"))
    print("trend (a) inter-sess:   sru %.4f vs gru %.4f -> %s" %
          (sru_s, gru_s, "OK" if sru_s <= gru_s * 1.02 else "FAIL"))
    for model in ("sru", "gru"):
        no = means[(model, "inter-subject", False)]
        yes = means[(model, "inter-subject", True)]
        print("trend (b) %s inter-subj: ada %.4f vs no-ada %.4f -> %s" %
              (model, yes, no, "OK" if yes <= no * 1.02 else "FAIL"))
        gap = means[(model, "inter-subject", False)] / means[(model, "intra", False)]
        print("   domain gap %s: inter-subject/intra = %.2f" % (model, gap))
    for model in ("sru", "gru"):
        no = means[(model, "inter-session", False)]
        yes = means[(model, "inter-session", True)]
        print("trend (c) %s inter-sess: ada %.4f vs no-ada %.4f (paper: ada worse)" %
              (model, yes, no))


if __name__ == "__main__":
    main()
