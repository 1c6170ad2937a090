import csv

import pytest

from rulattack import cli
from rulattack import data as dp
from rulattack.models import build, load, preset, save


@pytest.fixture()
def out_dir(tmp_path):
    return tmp_path / "out"


def run_cli(args):
    return cli.main([str(a) for a in args])


def make_checkpoints(fd001, out_dir, families=("lstm", "gru", "cnn"), seq_len=None):
    """Untrained scaled checkpoints with the pipeline's stats bundled."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, family in enumerate(families):
        spec = preset(family, scaled=True, n_channels=fd001.stats.n_channels)
        if seq_len is not None:
            from dataclasses import replace
            spec = replace(spec, seq_len=seq_len)
        model = build(spec, seed=50 + i, norm_stats=fd001.stats)
        path = out_dir / f"{family}.ckpt"
        save(model, path)
        paths.append(path)
    return paths


def test_default_sweep_grid_has_14_epsilons():
    assert len(cli.DEFAULT_SWEEP_EPSILONS) == 14
    assert cli.DEFAULT_SWEEP_EPSILONS[0] == 0.1
    assert cli.DEFAULT_SWEEP_EPSILONS[-1] == 1.4


def test_missing_data_dir_exits_2(tmp_path, capsys):
    code = run_cli(["train", "--data-dir", tmp_path / "nowhere", "--out",
                    tmp_path / "out"])
    assert code == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("DataNotFound:")
    assert "\n" not in err


def test_missing_config_file_exits_2(tmp_path, capsys):
    code = run_cli(["train", "--config", tmp_path / "absent.ini"])
    assert code == 2
    assert capsys.readouterr().err.startswith("DataNotFound:")


def test_epsilon_out_of_range_exits_3(fd001, out_dir, capsys):
    [ckpt] = make_checkpoints(fd001, out_dir, families=("gru",))
    code = run_cli(["attack", "--data-dir", fd001.data_dir, "--out", out_dir,
                    "--model", ckpt, "--kind", "fgsm", "--epsilon", "2.0"])
    assert code == 3
    assert capsys.readouterr().err.startswith("EpsilonOutOfRange:")


def test_corrupt_checkpoint_exits_2(fd001, out_dir, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    code = run_cli(["attack", "--data-dir", fd001.data_dir, "--out", out_dir,
                    "--model", bad, "--kind", "fgsm", "--epsilon", "0.3"])
    assert code == 2
    assert capsys.readouterr().err.startswith("CorruptCheckpoint:")


def test_piecewise_too_short_engine_exits_3(fd001, out_dir, capsys):
    # a model longer than some filtered engines
    [ckpt] = make_checkpoints(fd001, out_dir, families=("gru",), seq_len=200)
    short_engine = min(fd001.subset_trajectories, key=lambda t: t.n_cycles)
    assert short_engine.n_cycles < 200
    code = run_cli(["piecewise", "--data-dir", fd001.data_dir, "--out", out_dir,
                    "--model", ckpt, "--engine", short_engine.unit_id,
                    "--epsilon", "0.1", "--iterations", "1"])
    assert code == 3
    assert capsys.readouterr().err.startswith("TooShort:")


def test_piecewise_unknown_engine_exits_2(fd001, out_dir, capsys):
    [ckpt] = make_checkpoints(fd001, out_dir, families=("gru",))
    code = run_cli(["piecewise", "--data-dir", fd001.data_dir, "--out", out_dir,
                    "--model", ckpt, "--engine", 100000])
    assert code == 2
    assert capsys.readouterr().err.startswith("DataNotFound:")


def test_ingest_writes_cache_and_honors_out_flag(fd001, tmp_path, capsys):
    config = tmp_path / "run.ini"
    config.write_text(
        f"[run]\ndata_dir = {fd001.data_dir}\noutput_dir = {tmp_path/'ignored'}\n")
    out = tmp_path / "flag_out"
    code = run_cli(["ingest", "--config", config, "--out", out, "--seq-len", "20"])
    assert code == 0
    cache = out / "FD001_eval_windows.csv"
    assert cache.is_file()
    assert not (tmp_path / "ignored").exists()
    windows, stats, meta = dp.load_dataset(cache)
    assert meta["seq_len"] == 20
    assert stats == fd001.stats
    assert len(windows) == len(fd001.subset_trajectories)


def test_train_then_attack_flow(fd001, out_dir, capsys):
    code = run_cli(["train", "--data-dir", fd001.data_dir, "--out", out_dir,
                    "--families", "gru", "--max-epochs", "1", "--stride", "8",
                    "--seed", "3"])
    assert code == 0
    ckpt = out_dir / "gru_FD001.ckpt"
    history = out_dir / "history_gru_FD001.csv"
    assert ckpt.is_file() and history.is_file()
    rows = list(csv.reader(history.open()))
    assert rows[0] == ["epoch", "train_mse", "val_mse"]
    assert len(rows) == 2  # 1 epoch

    model = load(ckpt)
    assert model.norm_stats == fd001.stats

    code = run_cli(["attack", "--data-dir", fd001.data_dir, "--out", out_dir,
                    "--model", ckpt, "--kind", "fgsm", "--epsilon", "0.3"])
    assert code == 0
    report = out_dir / "attack_fgsm_gru_FD001.csv"
    parsed = list(csv.reader(report.open()))
    assert parsed[0][0] == "engine_id"
    assert parsed[-1][0] == "RMSE"
    assert len(parsed) == 1 + len(fd001.subset_trajectories) + 1
    signatures = list((out_dir / "signatures").glob("signature_fgsm_engine*.csv"))
    assert len(signatures) == len(fd001.subset_trajectories)


def test_predict_command(fd001, out_dir, capsys):
    [ckpt] = make_checkpoints(fd001, out_dir, families=("gru",))
    code = run_cli(["predict", "--data-dir", fd001.data_dir, "--out", out_dir,
                    "--model", ckpt])
    assert code == 0
    parsed = list(csv.reader((out_dir / "predictions_gru.csv").open()))
    assert parsed[0] == ["engine_id", "true_rul", "prediction"]
    assert parsed[-1][0] == "RMSE"


def test_sweep_command_row_per_epsilon(fd001, out_dir, tmp_path):
    [ckpt] = make_checkpoints(fd001, out_dir, families=("gru",))
    config = tmp_path / "run.ini"
    config.write_text("[attack]\niterations = 2\n")
    code = run_cli(["sweep", "--config", config, "--data-dir", fd001.data_dir,
                    "--out", out_dir, "--model", ckpt,
                    "--epsilons", "0.0,0.1,0.2"])
    assert code == 0
    parsed = list(csv.reader((out_dir / "sweep_gru.csv").open()))
    assert len(parsed) == 1 + 3
    assert parsed[1][1] == parsed[1][2]  # eps=0: both kinds equal clean RMSE


def test_transfer_command_six_entries(fd001, out_dir, tmp_path):
    ckpts = make_checkpoints(fd001, out_dir)
    config = tmp_path / "run.ini"
    config.write_text("[attack]\niterations = 1\n")
    code = run_cli(["transfer", "--config", config, "--data-dir", fd001.data_dir,
                    "--out", out_dir, "--epsilon", "0.2", "--models", *ckpts])
    assert code == 0
    parsed = list(csv.reader((out_dir / "transfer_FD001.csv").open()))
    assert parsed[0] == ["source", "target", "fgsm_rmse", "bim_rmse"]
    assert len(parsed) == 1 + 6
    names = {(r[0], r[1]) for r in parsed[1:]}
    assert all(src != tgt for src, tgt in names)


def test_environment_variable_points_at_data(fd001, out_dir, monkeypatch):
    [ckpt] = make_checkpoints(fd001, out_dir, families=("gru",))
    monkeypatch.setenv(cli.ENV_DATA_DIR, str(fd001.data_dir))
    code = run_cli(["predict", "--out", out_dir, "--model", ckpt])
    assert code == 0
