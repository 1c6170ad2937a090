"""Shared fixtures: dataset files, the normalized pipeline, and the three
trained desk-scale models the reproduction suites evaluate.

Set CMAPSS_DATA_DIR to a directory holding the real FD001 files to run
against the NASA distribution; otherwise a synthetic replica with the
same shape statistics is generated once per session.
"""

import os
import time
from pathlib import Path
from types import SimpleNamespace

import pytest

from rulattack import data as dp
from rulattack import synthetic
from rulattack.models import TrainConfig, build, preset, train
from rulattack.seeds import stream

SEED = 7
RUL_CAP = 130.0
TRAIN_STRIDE = 2
MAX_EPOCHS = 16
FAMILIES = ("lstm", "gru", "cnn")


def _real_data_dir():
    root = os.environ.get("CMAPSS_DATA_DIR")
    if not root:
        return None
    root = Path(root)
    names = ("train_FD001.txt", "test_FD001.txt", "RUL_FD001.txt")
    if all((root / name).is_file() for name in names):
        return root
    return None


@pytest.fixture(scope="session")
def synth_paths(tmp_path_factory):
    real = _real_data_dir()
    if real is not None:
        return (real / "train_FD001.txt", real / "test_FD001.txt", real / "RUL_FD001.txt")
    out = tmp_path_factory.mktemp("cmapss")
    return synthetic.generate(out, seed=2024)


@pytest.fixture(scope="session")
def fd001(synth_paths):
    """Parsed, normalized, filtered pipeline products."""
    train_path, test_path, rul_path = synth_paths
    with open(train_path) as fh:
        train_records = dp.parse_cmapss(fh)
    with open(test_path) as fh:
        test_records = dp.parse_cmapss(fh)
    with open(rul_path) as fh:
        ruls = dp.parse_rul_file(fh)
    stats = dp.select_informative_channels(train_records)
    train_trajectories = dp.normalize(train_records, stats)
    test_trajectories = dp.attach_rul(dp.normalize(test_records, stats), ruls)
    subset_trajectories = dp.filter_min_cycles(test_trajectories, dp.DEFAULT_MIN_CYCLES)
    return SimpleNamespace(
        data_dir=train_path.parent,
        stats=stats,
        n_test_engines=len({r.unit_id for r in test_records}),
        train_trajectories=train_trajectories,
        test_trajectories=test_trajectories,
        subset_trajectories=subset_trajectories,
    )


@pytest.fixture(scope="session")
def trained(fd001):
    """The three scaled models trained on the FD001 split, plus timings."""
    models, histories, subsets = {}, {}, {}
    t0 = time.time()
    for family in FAMILIES:
        spec = preset(family, scaled=True, n_channels=fd001.stats.n_channels)
        windows = dp.make_windows(fd001.train_trajectories, spec.seq_len, RUL_CAP,
                                  stride=TRAIN_STRIDE)
        family_seed = int(stream(SEED, f"model-{family}").integers(0, 2**31 - 1))
        model = build(spec, seed=family_seed, norm_stats=fd001.stats)
        cfg = TrainConfig(max_epochs=MAX_EPOCHS, early_stop_patience=10, seed=family_seed)
        models[family], histories[family] = train(model, windows, cfg)
        subsets[family] = dp.terminal_windows(fd001.subset_trajectories,
                                              spec.seq_len, RUL_CAP)
    return SimpleNamespace(
        models=models,
        histories=histories,
        subsets=subsets,
        rul_cap=RUL_CAP,
        train_seconds=time.time() - t0,
    )
