"""Command-line pipeline: ingest, train, predict, attack, piecewise, sweep,
transfer.

Runs are driven by an INI-style config file plus flag overrides; the
``CMAPSS_DATA_DIR`` environment variable may point at the data directory.
Every artifact (checkpoints, CSV reports, optional plots) lands in the
configured output directory, and identical (config, seed) pairs produce
byte-identical outputs with workers=1.

Exit codes: 0 success, 2 input/data errors, 3 domain errors, 4 internal.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import data as dp
from . import evaluation as ev
from .attacks import AttackConfig, craft_batch, write_signature_csvs
from .errors import DataError, DataNotFound, DomainError, RulAttackError
from .models import TrainConfig, build, load, predict, preset, save, train
from .seeds import stream

ENV_DATA_DIR = "CMAPSS_DATA_DIR"
EXIT_OK, EXIT_DATA, EXIT_DOMAIN, EXIT_INTERNAL = 0, 2, 3, 4
DEFAULT_FAMILIES = ("lstm", "gru", "cnn")
DEFAULT_SWEEP_EPSILONS = [round(0.1 * k, 1) for k in range(1, 15)]


@dataclass
class RunConfig:
    """Resolved run settings: defaults < config file < environment < flags."""
    data_dir: Path = Path("data")
    dataset: str = "FD001"
    output_dir: Path = Path("out")
    seed: int = 0
    min_cycles: int = dp.DEFAULT_MIN_CYCLES
    rul_cap: float = dp.DEFAULT_RUL_CAP
    scaled: bool = True
    families: tuple = DEFAULT_FAMILIES
    workers: int = 1
    stride: int = 1
    plot: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    attack_epsilon: float = 0.3
    attack_iterations: int = 100
    clip_to_data_range: bool = False


def _resolve_config(args) -> RunConfig:
    rc = RunConfig()
    if os.environ.get(ENV_DATA_DIR):
        rc.data_dir = Path(os.environ[ENV_DATA_DIR])

    train_kwargs = {"seed": rc.seed}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise DataNotFound(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        run = parser["run"] if parser.has_section("run") else {}
        if "data_dir" in run:
            rc.data_dir = Path(run["data_dir"])
        rc.dataset = run.get("dataset", rc.dataset)
        if "output_dir" in run:
            rc.output_dir = Path(run["output_dir"])
        rc.seed = int(run.get("seed", rc.seed))
        rc.min_cycles = int(run.get("min_cycles", rc.min_cycles))
        rc.rul_cap = float(run.get("rul_cap", rc.rul_cap))
        if "scaled" in run:
            rc.scaled = parser.getboolean("run", "scaled")
        if "families" in run:
            rc.families = tuple(f.strip() for f in run["families"].split(",") if f.strip())
        rc.workers = int(run.get("workers", rc.workers))
        rc.stride = int(run.get("stride", rc.stride))
        if parser.has_section("train"):
            tr = parser["train"]
            for key, cast in (("learning_rate", float), ("batch_size", int),
                              ("max_epochs", int), ("early_stop_patience", int),
                              ("validation_fraction", float)):
                if key in tr:
                    train_kwargs[key] = cast(tr[key])
        if parser.has_section("attack"):
            at = parser["attack"]
            rc.attack_epsilon = float(at.get("epsilon", rc.attack_epsilon))
            rc.attack_iterations = int(at.get("iterations", rc.attack_iterations))
            if "clip_to_data_range" in at:
                rc.clip_to_data_range = parser.getboolean("attack", "clip_to_data_range")

    if getattr(args, "data_dir", None):
        rc.data_dir = Path(args.data_dir)
    if getattr(args, "out", None):
        rc.output_dir = Path(args.out)
    if getattr(args, "seed", None) is not None:
        rc.seed = args.seed
    if getattr(args, "workers", None) is not None:
        rc.workers = args.workers
    if getattr(args, "scaled", None) is not None:
        rc.scaled = args.scaled
    if getattr(args, "plot", False):
        rc.plot = True
    if getattr(args, "max_epochs", None) is not None:
        train_kwargs["max_epochs"] = args.max_epochs
    if getattr(args, "stride", None) is not None:
        rc.stride = args.stride
    if getattr(args, "families", None):
        rc.families = tuple(f.strip() for f in args.families.split(",") if f.strip())

    train_kwargs["seed"] = rc.seed
    rc.train = TrainConfig(**train_kwargs)
    return rc


# -- shared pipeline steps -----------------------------------------------------

def _read_lines(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.readlines()


def _load_split(rc: RunConfig):
    """Parse raw files; fit stats on the training split."""
    train_path, test_path, rul_path = dp.dataset_paths(rc.data_dir, rc.dataset)
    train_records = dp.parse_cmapss(_read_lines(train_path))
    test_records = dp.parse_cmapss(_read_lines(test_path))
    ruls = dp.parse_rul_file(_read_lines(rul_path))
    stats = dp.select_informative_channels(train_records)
    return train_records, test_records, ruls, stats


def _test_trajectories(rc: RunConfig, stats, test_records=None, ruls=None):
    if test_records is None:
        _, test_path, rul_path = dp.dataset_paths(rc.data_dir, rc.dataset)
        test_records = dp.parse_cmapss(_read_lines(test_path))
        ruls = dp.parse_rul_file(_read_lines(rul_path))
    trajectories = dp.attach_rul(dp.normalize(test_records, stats), ruls)
    return dp.filter_min_cycles(trajectories, rc.min_cycles)


def _eval_subset(rc: RunConfig, model):
    trajectories = _test_trajectories(rc, model.norm_stats)
    return dp.terminal_windows(trajectories, model.spec.seq_len, rc.rul_cap), trajectories


def _out_path(rc: RunConfig, name: str) -> Path:
    rc.output_dir.mkdir(parents=True, exist_ok=True)
    return rc.output_dir / name


def _attack_config(rc: RunConfig, kind: str, epsilon=None, iterations=None) -> AttackConfig:
    return AttackConfig(
        kind=kind,
        epsilon=rc.attack_epsilon if epsilon is None else epsilon,
        iterations=rc.attack_iterations if iterations is None else iterations,
        clip_to_data_range=rc.clip_to_data_range,
    )


# -- commands --------------------------------------------------------------------

def cmd_ingest(rc: RunConfig, args) -> int:
    train_records, test_records, ruls, stats = _load_split(rc)
    seq_len = args.seq_len
    if args.split == "train":
        trajectories = dp.normalize(train_records, stats)
        windows = dp.make_windows(trajectories, seq_len, rc.rul_cap, stride=rc.stride)
    else:
        trajectories = _test_trajectories(rc, stats, test_records, ruls)
        windows = dp.terminal_windows(trajectories, seq_len, rc.rul_cap)
    path = _out_path(rc, f"{rc.dataset}_{args.split}_windows.csv")
    dp.save_dataset(path, windows, stats, seq_len, rc.rul_cap, rc.stride)
    sensors = ",".join(str(c + 1) for c in stats.kept_channels)
    print(f"ingest: {len(windows)} windows from {len(trajectories)} engines -> {path}")
    print(f"ingest: kept sensors [{sensors}]")
    return EXIT_OK


def cmd_train(rc: RunConfig, args) -> int:
    train_records, _, _, stats = _load_split(rc)
    trajectories = dp.normalize(train_records, stats)
    for family in rc.families:
        spec = preset(family, scaled=rc.scaled, n_channels=stats.n_channels)
        windows = dp.make_windows(trajectories, spec.seq_len, rc.rul_cap, stride=rc.stride)
        family_seed = int(stream(rc.seed, f"model-{family}").integers(0, 2**31 - 1))
        model = build(spec, seed=family_seed, norm_stats=stats)
        cfg = TrainConfig(
            learning_rate=rc.train.learning_rate, batch_size=rc.train.batch_size,
            max_epochs=rc.train.max_epochs, early_stop_patience=rc.train.early_stop_patience,
            seed=family_seed, validation_fraction=rc.train.validation_fraction)
        trained, history = train(model, windows, cfg)
        ckpt = _out_path(rc, f"{family}_{rc.dataset}.ckpt")
        save(trained, ckpt)
        hist_path = _out_path(rc, f"history_{family}_{rc.dataset}.csv")
        with open(hist_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_mse", "val_mse"])
            for row in history:
                writer.writerow([row["epoch"], repr(row["train_mse"]), repr(row["val_mse"])])
        last = history[-1]
        print(f"train: {family} epochs={last['epoch']} val_mse={last['val_mse']:.3f} -> {ckpt}")
    return EXIT_OK


def cmd_predict(rc: RunConfig, args) -> int:
    model = load(args.model)
    subset, _ = _eval_subset(rc, model)
    rows = [(lw.window.engine_id, lw.rul, predict(model, lw.window)) for lw in subset]
    clean_rmse = ev.rmse([r[2] for r in rows], [r[1] for r in rows])
    path = _out_path(rc, f"predictions_{Path(args.model).stem}.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["engine_id", "true_rul", "prediction"])
        for engine_id, true_rul, pred in rows:
            writer.writerow([engine_id, repr(float(true_rul)), repr(float(pred))])
        writer.writerow(["RMSE", "", repr(clean_rmse)])
    print(f"predict: {len(rows)} engines, RMSE={clean_rmse:.3f} -> {path}")
    return EXIT_OK


def cmd_attack(rc: RunConfig, args) -> int:
    model = load(args.model)
    config = _attack_config(rc, args.kind, args.epsilon, args.iterations)
    subset, _ = _eval_subset(rc, model)
    subset = sorted(subset, key=lambda lw: lw.window.engine_id)
    examples = craft_batch(model, subset, config, workers=rc.workers)
    stem = Path(args.model).stem
    report = ev.evaluate_attack(model, subset, config, model_id=stem, examples=examples)
    report_path = _out_path(rc, f"attack_{config.kind}_{stem}.csv")
    ev.write_report_csv(report, report_path)
    sig_dir = _out_path(rc, "signatures")
    write_signature_csvs(examples, sig_dir, kind=config.kind,
                         channel_ids=model.norm_stats.kept_channels
                         if model.norm_stats else None)
    print(f"attack: {config.kind} eps={config.epsilon} clean={report.clean_rmse:.3f} "
          f"attacked={report.attacked_rmse:.3f} (+{report.pct_increase:.1f}%) -> {report_path}")
    return EXIT_OK


def cmd_piecewise(rc: RunConfig, args) -> int:
    model = load(args.model)
    _, trajectories = _eval_subset(rc, model)
    matches = [t for t in trajectories if t.unit_id == args.engine]
    if not matches:
        raise DataNotFound(
            f"engine {args.engine} not in the filtered test set of {rc.dataset}")
    traj = matches[0]
    curves = {"clean": ev.piecewise_rul(model, traj, rc.rul_cap)}
    for kind in ("fgsm", "bim"):
        config = _attack_config(rc, kind, args.epsilon, args.iterations)
        curves[kind] = ev.piecewise_rul(model, traj, rc.rul_cap, attack_config=config)
    stem = Path(args.model).stem
    path = _out_path(rc, f"piecewise_engine{args.engine}_{stem}.csv")
    ev.write_piecewise_csv(path, curves)
    if rc.plot:
        ev.plot_piecewise(curves, _out_path(rc, f"piecewise_engine{args.engine}_{stem}.png"))
    print(f"piecewise: engine {args.engine}, {len(curves['clean'])} cycles -> {path}")
    return EXIT_OK


def cmd_sweep(rc: RunConfig, args) -> int:
    model = load(args.model)
    subset, _ = _eval_subset(rc, model)
    epsilons = (sorted(float(e) for e in args.epsilons.split(","))
                if args.epsilons else DEFAULT_SWEEP_EPSILONS)
    rows = ev.epsilon_sweep(model, subset, epsilons,
                            iterations=rc.attack_iterations,
                            model_id=Path(args.model).stem, workers=rc.workers)
    stem = Path(args.model).stem
    path = _out_path(rc, f"sweep_{stem}.csv")
    ev.write_sweep_csv(rows, path)
    if rc.plot:
        ev.plot_sweep(rows, _out_path(rc, f"sweep_{stem}.png"))
    print(f"sweep: {len(rows)} epsilon values -> {path}")
    return EXIT_OK


def cmd_transfer(rc: RunConfig, args) -> int:
    models = {Path(p).stem: load(p) for p in args.models}
    first = next(iter(models.values()))
    trajectories = _test_trajectories(rc, first.norm_stats)
    fgsm_cfg = _attack_config(rc, "fgsm", args.epsilon, None)
    bim_cfg = _attack_config(rc, "bim", args.epsilon, args.iterations)
    matrix = ev.transfer_matrix(models, trajectories, fgsm_cfg, bim_cfg,
                                rul_cap=rc.rul_cap, workers=rc.workers)
    path = _out_path(rc, f"transfer_{rc.dataset}.csv")
    ev.write_matrix_csv(matrix, path)
    print(f"transfer: {len(matrix.entries)} source/target pairs -> {path}")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--data-dir", help="directory with C-MAPSS text files")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--plot", action="store_true",
                        help="emit PNG charts where applicable")
    scale = common.add_mutually_exclusive_group()
    scale.add_argument("--scaled", dest="scaled", action="store_true", default=None,
                       help="use desk-scale model presets (default)")
    scale.add_argument("--full", dest="scaled", action="store_false",
                       help="use paper-scale model presets")

    parser = argparse.ArgumentParser(
        prog="rulattack",
        description="Train RUL regressors on C-MAPSS data and evaluate "
                    "FGSM/BIM adversarial attacks against them.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse, normalize, cache windows")
    p.add_argument("--seq-len", type=int, default=30)
    p.add_argument("--split", choices=("eval", "train"), default="eval")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train model checkpoints")
    p.add_argument("--families", help="comma list from lstm,gru,cnn")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--stride", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="clean predictions for a checkpoint")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("attack", parents=[common], help="craft attacks and report impact")
    p.add_argument("--model", required=True)
    p.add_argument("--kind", choices=("fgsm", "bim"), required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("piecewise", parents=[common], help="per-cycle RUL curve for one engine")
    p.add_argument("--model", required=True)
    p.add_argument("--engine", type=int, required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_piecewise)

    p = sub.add_parser("sweep", parents=[common], help="RMSE vs epsilon table")
    p.add_argument("--model", required=True)
    p.add_argument("--epsilons", help="comma list, e.g. 0.1,0.2,0.3")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("transfer", parents=[common], help="cross-model transferability grid")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_transfer)
    return parser


def _fail(exc: Exception, code: int) -> int:
    message = str(exc).replace("\n", "; ")
    print(f"{type(exc).__name__}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        rc = _resolve_config(args)
        return args.func(rc, args)
    except DataError as exc:
        return _fail(exc, EXIT_DATA)
    except DomainError as exc:
        return _fail(exc, EXIT_DOMAIN)
    except ValueError as exc:
        return _fail(exc, EXIT_DATA)
    except RulAttackError as exc:
        return _fail(exc, EXIT_INTERNAL)
    except OSError as exc:
        return _fail(exc, EXIT_DATA)
    except Exception as exc:  # pragma: no cover - safety net
        return _fail(exc, EXIT_INTERNAL)


if __name__ == "__main__":
    raise SystemExit(main())
