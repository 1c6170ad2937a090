"""Synthetic turbofan degradation data in the C-MAPSS file format.

Generates train/test/RUL text files shaped like the FD001 sub-dataset:
100 run-to-failure training engines, 100 truncated test engines of which
exactly 37 have at least 150 cycles, 21 sensor columns of which 7 are
constant, and a single operating condition. Degradation follows an
exponential rise (or fall) toward each sensor's end-of-life level, so
remaining life is recoverable from the window content.

Intended for tests, demos, and environments where the NASA distribution
is not available; the files parse through the same pipeline as the real
ones.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .seeds import stream

# sensor number (1-based) -> (baseline, end-of-life shift); None = constant
SENSOR_PROFILE = {
    1: (518.67, None),
    2: (642.0, 4.0),
    3: (1585.0, 35.0),
    4: (1400.0, 40.0),
    5: (14.62, None),
    6: (21.61, None),
    7: (554.0, -7.0),
    8: (2388.0, 2.5),
    9: (9050.0, 120.0),
    10: (1.30, None),
    11: (47.3, 3.0),
    12: (521.5, -7.5),
    13: (2388.0, 2.8),
    14: (8130.0, 110.0),
    15: (8.44, 0.33),
    16: (0.03, None),
    17: (392.0, 8.0),
    18: (2388.0, None),
    19: (100.0, None),
    20: (38.9, -1.7),
    21: (23.37, -1.0),
}

N_TRAIN_ENGINES = 100
N_TEST_ENGINES = 100
N_LONG_TEST_ENGINES = 37   # engines with >= 150 cycles
DECAY_CYCLES = 60.0        # e-folding of the degradation signal in RUL
NOISE_FRACTION = 0.04      # measurement noise relative to the EOL shift


def _engine_rows(rng, unit_id: int, observed: int, total_life: int) -> list:
    bias = {
        s: rng.normal(0.0, NOISE_FRACTION * abs(shift)) if shift is not None else 0.0
        for s, (_, shift) in SENSOR_PROFILE.items()
    }
    rows = []
    for cycle in range(1, observed + 1):
        rul = total_life - cycle
        settings = (
            rng.normal(-0.0007, 0.001),
            rng.normal(-0.0004, 0.0003),
            100.0,
        )
        sensors = []
        for s in range(1, 22):
            base, shift = SENSOR_PROFILE[s]
            if shift is None:
                sensors.append(base)
                continue
            level = base + bias[s] + shift * np.exp(-rul / DECAY_CYCLES)
            sensors.append(level + rng.normal(0.0, NOISE_FRACTION * abs(shift)))
        fields = [str(unit_id), str(cycle)]
        fields += [f"{v:.4f}" for v in settings]
        fields += [f"{v:.4f}" for v in sensors]
        rows.append(" ".join(fields))
    return rows


def generate(out_dir, dataset: str = "FD001", seed: int = 2024) -> tuple:
    """Write ``train_/test_/RUL_<dataset>.txt`` into ``out_dir``.

    Deterministic for a given seed. Returns the three paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng_train = stream(seed, "synthetic-train")
    train_rows = []
    for unit in range(1, N_TRAIN_ENGINES + 1):
        life = int(rng_train.integers(140, 331))
        train_rows += _engine_rows(rng_train, unit, observed=life, total_life=life)

    rng_test = stream(seed, "synthetic-test")
    lengths = np.concatenate([
        rng_test.integers(150, 301, size=N_LONG_TEST_ENGINES),
        rng_test.integers(40, 150, size=N_TEST_ENGINES - N_LONG_TEST_ENGINES),
    ])
    rng_test.shuffle(lengths)
    test_rows, ruls = [], []
    for unit in range(1, N_TEST_ENGINES + 1):
        observed = int(lengths[unit - 1])
        rul = int(rng_test.integers(10, 146))
        ruls.append(rul)
        test_rows += _engine_rows(rng_test, unit, observed=observed,
                                  total_life=observed + rul)

    paths = (
        out_dir / f"train_{dataset}.txt",
        out_dir / f"test_{dataset}.txt",
        out_dir / f"RUL_{dataset}.txt",
    )
    paths[0].write_text("\n".join(train_rows) + "\n", encoding="utf-8")
    paths[1].write_text("\n".join(test_rows) + "\n", encoding="utf-8")
    paths[2].write_text("\n".join(str(r) for r in ruls) + "\n", encoding="utf-8")
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Generate C-MAPSS-format synthetic turbofan data.")
    parser.add_argument("out_dir", help="directory for the generated files")
    parser.add_argument("--dataset", default="FD001")
    parser.add_argument("--seed", type=int, default=2024)
    args = parser.parse_args(argv)
    for path in generate(args.out_dir, dataset=args.dataset, seed=args.seed):
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
