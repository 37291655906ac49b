import hashlib
import json
import os

import numpy as np
import pytest

from myograsp import cli
from myograsp.cli import main


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


GEN_ARGS = ["--subjects", "2", "--sessions", "3", "--seconds", "16", "--seed", "4"]


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["generate", "--out", str(out)] + GEN_ARGS) == 0
    return out


@pytest.fixture(scope="module")
def archive_path(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("arch") / "samples.npz"
    code = main(["preprocess", "--manifest", str(dataset_dir / "manifest.json"),
                 "--out", str(out), "--stride", "64"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def checkpoint_path(archive_path, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("ckpt")
    code = main(["train", "--archive", str(archive_path),
                 "--out-dir", str(out_dir), "--model", "gru",
                 "--protocol", "intra", "--seed", "1", "--hidden", "8",
                 "--predictor-hidden", "8", "--epochs", "2", "--patience", "2",
                 "--batch-size", "32"])
    assert code == 0
    return out_dir / "gru_intra-session_fold0_seed1.ckpt"


class TestGenerate:
    def test_file_count(self, dataset_dir):
        names = os.listdir(dataset_dir)
        # subjects x sessions x 2 streams + per-session latents + manifest
        assert len([n for n in names if n.endswith(".csv")]) == 2 * 3 * 2 + 3
        assert "manifest.json" in names

    def test_rerun_byte_identical(self, dataset_dir, tmp_path):
        out = tmp_path / "again"
        assert main(["generate", "--out", str(out)] + GEN_ARGS) == 0
        for name in os.listdir(dataset_dir):
            assert sha(out / name) == sha(dataset_dir / name), name

    def test_invalid_mode_exits_config(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("mode = sideways\n")
        code = main(["generate", "--out", str(tmp_path / "x"),
                     "--config", str(cfg)])
        assert code == cli.EXIT_CONFIG

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("warp_factor = 9\n")
        code = main(["generate", "--out", str(tmp_path / "x"), "--config", str(cfg)])
        assert code == cli.EXIT_CONFIG

    def test_config_file_and_env_precedence(self, tmp_path, monkeypatch):
        cfg = tmp_path / "gen.cfg"
        cfg.write_text("n_subjects = 1\nsessions_per_subject = 1\n"
                       "session_seconds = 14\nseed = 9\n")
        out1 = tmp_path / "o1"
        assert main(["generate", "--out", str(out1), "--config", str(cfg)]) == 0
        assert len([n for n in os.listdir(out1) if n.endswith("_emg.csv")]) == 1
        # env var overrides the file value
        monkeypatch.setenv("MYOGRASP_N_SUBJECTS", "2")
        out2 = tmp_path / "o2"
        assert main(["generate", "--out", str(out2), "--config", str(cfg)]) == 0
        assert len([n for n in os.listdir(out2) if n.endswith("_emg.csv")]) == 2


class TestPreprocess:
    def test_archive_exists_and_is_idempotent(self, dataset_dir, archive_path,
                                              tmp_path):
        again = tmp_path / "again.npz"
        assert main(["preprocess", "--manifest", str(dataset_dir / "manifest.json"),
                     "--out", str(again), "--stride", "64"]) == 0
        assert sha(archive_path) == sha(again)

    def test_window_count_arithmetic(self, archive_path):
        from myograsp.datapipe import load_archive
        ws, meta = load_archive(archive_path)
        # per session: 16 s * 200 Hz = 3200 aligned rows (minus alignment
        # drops), margin 64 at both ends, stride 64
        rows = meta["sessions"][0]["rows"]
        margin, stride, window = 64, 64, 128
        starts = np.arange(0, rows - window + 1, stride)
        targets = starts + window - 1
        expected = int(((targets >= margin) & (targets < rows - margin)).sum())
        per_session = np.bincount(ws.rec_index)
        assert per_session[0] == expected

    def test_zero_max_gap_fails_with_io_code(self, dataset_dir, tmp_path):
        code = main(["preprocess", "--manifest", str(dataset_dir / "manifest.json"),
                     "--out", str(tmp_path / "x.npz"), "--max-gap", "0"])
        assert code == cli.EXIT_IO

    def test_missing_manifest(self, tmp_path):
        code = main(["preprocess", "--manifest", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "x.npz")])
        assert code == cli.EXIT_IO


class TestTrain:
    def test_checkpoint_and_report_written(self, checkpoint_path):
        assert checkpoint_path.exists()
        report = checkpoint_path.with_name("gru_intra-session_fold0_seed1_report.csv")
        lines = report.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_rmse,val_nrmse,seconds"
        assert len(lines) <= 1 + 2

    def test_ada_on_intra_rejected(self, archive_path, tmp_path):
        code = main(["train", "--archive", str(archive_path),
                     "--out-dir", str(tmp_path), "--model", "gru",
                     "--protocol", "intra", "--ada"])
        assert code == cli.EXIT_CONFIG

    def test_retrain_is_deterministic(self, archive_path, checkpoint_path,
                                      tmp_path):
        out_dir = tmp_path / "redo"
        assert main(["train", "--archive", str(archive_path),
                     "--out-dir", str(out_dir), "--model", "gru",
                     "--protocol", "intra", "--seed", "1", "--hidden", "8",
                     "--predictor-hidden", "8", "--epochs", "2",
                     "--patience", "2", "--batch-size", "32"]) == 0
        redo = out_dir / checkpoint_path.name
        assert sha(redo) == sha(checkpoint_path)

    def test_split_audit(self, archive_path, tmp_path):
        audit = tmp_path / "plan.csv"
        assert main(["train", "--archive", str(archive_path),
                     "--out-dir", str(tmp_path), "--model", "sru",
                     "--protocol", "inter-session", "--fold", "1", "--seed", "0",
                     "--hidden", "8", "--predictor-hidden", "8", "--epochs", "1",
                     "--patience", "1", "--batch-size", "32",
                     "--split-audit", str(audit)]) == 0
        header = audit.read_text().splitlines()[0]
        assert header.startswith("sample_id,protocol,fold")


class TestEvaluate:
    def test_appends_two_rows(self, archive_path, checkpoint_path, tmp_path):
        results = tmp_path / "results.csv"
        assert main(["evaluate", "--checkpoint", str(checkpoint_path),
                     "--archive", str(archive_path),
                     "--results", str(results)]) == 0
        lines = results.read_text().strip().splitlines()
        assert lines[0] == "metric,model,protocol,ada,fold,seed,value"
        assert len(lines) == 3
        assert lines[1].startswith("rmse,gru,intra-session,false,0,1,")
        assert lines[2].startswith("nrmse,gru,intra-session,false,0,1,")

    def test_trajectory_dump(self, archive_path, checkpoint_path, tmp_path):
        results = tmp_path / "r.csv"
        dump = tmp_path / "traj.csv"
        assert main(["evaluate", "--checkpoint", str(checkpoint_path),
                     "--archive", str(archive_path), "--results", str(results),
                     "--dump-trajectories", str(dump)]) == 0
        header = dump.read_text().splitlines()[0]
        assert header.startswith("end_timestamp_ms,true0")
        assert ",pred0" in header

    def test_mode_mismatch_rejected(self, checkpoint_path, tmp_path):
        # build an 18-angle (mobile) archive: the 15-angle checkpoint must fail
        out = tmp_path / "mobile"
        assert main(["generate", "--out", str(out), "--subjects", "1",
                     "--sessions", "1", "--seconds", "16", "--mode", "mobile",
                     "--seed", "0"]) == 0
        arch = tmp_path / "mobile.npz"
        assert main(["preprocess", "--manifest", str(out / "manifest.json"),
                     "--out", str(arch), "--stride", "64"]) == 0
        code = main(["evaluate", "--checkpoint", str(checkpoint_path),
                     "--archive", str(arch), "--results", str(tmp_path / "r.csv")])
        assert code == cli.EXIT_CONFIG

    def test_perfect_oracle_scores_zero_rmse(self, archive_path, checkpoint_path,
                                             tmp_path, monkeypatch):
        # inject targets as predictions: the metric floor must be exactly 0
        from myograsp.datapipe import load_archive
        from myograsp import splits as sp
        from myograsp.network import load_checkpoint
        from myograsp.training import TargetStats
        import numpy as _np
        net, meta = load_checkpoint(checkpoint_path)
        ws, ameta = load_archive(archive_path)
        plan = sp.make_split(meta["protocol"], ws, ameta["sessions"],
                             meta["fold"], meta["seed"])
        _, ys = ws.materialize(plan.indices(sp.TEST))
        tstats = TargetStats(mean=_np.asarray(meta["target_mean"]),
                             std=_np.asarray(meta["target_std"]))
        # evaluate de-normalises, so the oracle supplies normalised targets
        monkeypatch.setattr(cli, "predict",
                            lambda net, x, chunk=256: tstats.normalize(ys))

        results = tmp_path / "oracle.csv"
        assert main(["evaluate", "--checkpoint", str(checkpoint_path),
                     "--archive", str(archive_path), "--results", str(results)]) == 0
        rows = results.read_text().strip().splitlines()[1:]
        assert float(rows[0].split(",")[-1]) < 1e-12
        assert float(rows[1].split(",")[-1]) < 1e-12


class TestReport:
    def make_results(self, path, rows):
        path.write_text("metric,model,protocol,ada,fold,seed,value\n"
                        + "\n".join(rows) + "\n")

    def test_aggregation_two_seeds(self, tmp_path, capsys):
        results = tmp_path / "results.csv"
        self.make_results(results, [
            "nrmse,sru,intra-session,false,0,0,0.20",
            "nrmse,sru,intra-session,false,0,1,0.10",
        ])
        out = tmp_path / "agg.csv"
        assert main(["report", "--results", str(results), "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "metric,model,protocol,ada,mean,std,n"
        metric, model, protocol, ada, mean, std, n = lines[1].split(",")
        assert float(mean) == pytest.approx(0.15)
        assert float(std) == pytest.approx(0.05)   # population std over 2 runs
        assert n == "2"

    def test_single_run_std_zero(self, tmp_path):
        results = tmp_path / "results.csv"
        self.make_results(results, ["rmse,gru,intra-session,false,0,0,12.5"])
        out = tmp_path / "agg.csv"
        assert main(["report", "--results", str(results), "--out", str(out)]) == 0
        assert out.read_text().strip().splitlines()[1].split(",")[5] == "0"

    def test_dash_cells_for_missing_combos(self, tmp_path, capsys):
        # a gaussian-process-style baseline without ADA rows renders "-"
        results = tmp_path / "results.csv"
        self.make_results(results, [
            "nrmse,gaussian-process,intra-session,false,0,0,0.24",
            "nrmse,gaussian-process,inter-session,false,0,0,0.19",
            "nrmse,sru,intra-session,false,0,0,0.15",
        ])
        assert main(["report", "--results", str(results)]) == 0
        table = capsys.readouterr().out
        gp_line = next(l for l in table.splitlines() if "gaussian-process" in l)
        assert gp_line.count("-") >= 3
        assert "0.1900" in gp_line

    def test_empty_results_fails(self, tmp_path):
        results = tmp_path / "results.csv"
        results.write_text("metric,model,protocol,ada,fold,seed,value\n")
        assert main(["report", "--results", str(results)]) == cli.EXIT_IO


class TestConfigFileParsing:
    def test_comments_and_whitespace(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# a comment\n\n  stride = 32  # trailing\n")
        assert cli.read_config_file(cfg) == {"stride": "32"}

    def test_malformed_line(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("stride 32\n")
        with pytest.raises(cli.ConfigError):
            cli.read_config_file(cfg)

    def test_boolean_coercion(self):
        assert cli._coerce("true", bool) is True
        assert cli._coerce("0", bool) is False
        with pytest.raises(cli.ConfigError):
            cli._coerce("maybe", bool)
