"""Probe for the end-to-end learning criterion at the default dataset scale.

Builds the default synthetic dataset in memory, trains the SRU intra-session
and reports NRMSE against the untrained network and the linear floor, with
wall-clock timing per stage.
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


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--subjects", type=int, default=5)
    ap.add_argument("--sessions", type=int, default=8)
    ap.add_argument("--seconds", type=float, default=240.0)
    ap.add_argument("--stride", type=int, default=256)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--lr", type=float, default=0.002)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.disable(logging.INFO)

    t0 = time.perf_counter()
    cfg = synthgen.SynthConfig(n_subjects=args.subjects,
                               sessions_per_subject=args.sessions,
                               session_seconds=args.seconds, seed=args.seed)
    window_sets, sessions = [], []
    floor = None
    for subj in range(cfg.n_subjects):
        for sess in range(cfg.sessions_per_subject):
            emg, ang, _ = synthgen.generate_session(cfg, subj, sess)
            if subj == 0 and sess == 0:
                floor = synthgen.linear_baseline_nrmse(emg, ang)
            ws, rec = datapipe.preprocess_session(emg, ang, stride=args.stride)
            window_sets.append(ws)
            sessions.append({"subject": subj, "session": sess,
                             "t_start": float(rec.timestamps_ms[0]),
                             "t_end": float(rec.timestamps_ms[-1])})
    ws = datapipe.concat_windows(window_sets)
    t_data = time.perf_counter() - t0
    print(f"data: {len(ws)} windows, floor {floor:.4f} ({t_data:.0f}s)")

    plan = splits.intra_session_split(ws, sessions, args.seed)
    tr, va, te = plan.indices(0), plan.indices(1), plan.indices(2)
    stats = datapipe.channel_stats(ws, tr)
    _, ytr = ws.materialize(tr)
    tstats = TargetStats.fit(ytr)
    xs, ys = ws.materialize(te)
    xs = stats.apply(xs)

    ncfg = NetworkConfig(cell_type="sru", hidden_size=args.hidden,
                         predictor_hidden=args.hidden, output_angles=15)
    net = Network.init(ncfg, derive_rng(args.seed, "init"))
    untrained = nrmse(tstats.denormalize(predict(net, xs)), ys, angle_ranges(ys))
    mean_pred = nrmse(np.tile(ytr.mean(axis=0), (len(ys), 1)), ys, angle_ranges(ys))
    print(f"untrained {untrained:.4f}, mean-predictor {mean_pred:.4f}, "
          f"targets 0.5*untrained={0.5 * untrained:.4f}, 1.2*floor={1.2 * floor:.4f}")

    t1 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        net, report = train(net, datapipe.WindowSource(ws, tr, stats),
                            datapipe.WindowSource(ws, va, stats),
                            TrainConfig(learning_rate=args.lr, max_epochs=args.epochs,
                                        patience=args.epochs, batch_size=args.batch,
                                        seed=args.seed), tstats)
    t_train = time.perf_counter() - t1
    trained = nrmse(tstats.denormalize(predict(net, xs)), ys, angle_ranges(ys))
    med_epoch = np.median([e.seconds for e in report.epochs])
    print(f"trained {trained:.4f} after {len(report.epochs)} epochs "
          f"({t_train:.0f}s, median epoch {med_epoch:.1f}s)")
    print("val curve:", [round(e.val_nrmse, 4) for e in report.epochs])
    ok1 = trained < 0.5 * untrained
    ok2 = trained < 1.2 * floor
    print(f"total {time.perf_counter() - t0:.0f}s; "
          f"0.5*untrained {'OK' if ok1 else 'FAIL'}, 1.2*floor {'OK' if ok2 else 'FAIL'}")


if __name__ == "__main__":
    main()
