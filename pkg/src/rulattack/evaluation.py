"""Attack impact measurement: RMSE reports, degradation curves, epsilon
sweeps, and cross-model transferability.

The evaluation subset convention is one terminal window per engine (the
window ending at the last observed cycle) over the engines that survive
the minimum-cycles filter. Transfer between models with different
sequence lengths injects the source-crafted perturbation into the
engine's trajectory at the cycles it covers and re-cuts target-shaped
windows from the perturbed trajectory, so the transferred object is the
perturbed sensor stream rather than a model-shaped tensor.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, craft, craft_batch
from .data import DEFAULT_RUL_CAP, LabeledWindow, SensorWindow
from .errors import EmptyInput, InvalidSpec, ShapeMismatch, TooShort
from .models import predict


def rmse(predictions, truths) -> float:
    """Root mean squared error; raises on empty or mismatched inputs."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.size == 0 or t.size == 0:
        raise EmptyInput("rmse needs at least one prediction/truth pair")
    if p.shape != t.shape:
        raise ShapeMismatch("rmse", p.shape, t.shape)
    diff = p - t
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass(frozen=True)
class EngineRow:
    engine_id: int
    true_rul: float
    clean_prediction: float
    attacked_prediction: float


@dataclass(frozen=True)
class AttackReport:
    """Clean vs attacked RMSE over the evaluation subset, per engine."""
    model_id: str
    config: AttackConfig
    clean_rmse: float
    attacked_rmse: float
    pct_increase: float
    rows: tuple

    @staticmethod
    def percent_increase(clean: float, attacked: float) -> float:
        if clean == 0.0:
            return 0.0 if attacked == 0.0 else float("inf")
        return 100.0 * (attacked - clean) / clean


def evaluate_attack(model, subset, config: AttackConfig, model_id: str = "model",
                    workers: int = 1, examples=None) -> AttackReport:
    """Craft per-engine adversarial examples and compare RMSE before/after.

    Pass pre-crafted ``examples`` (aligned with the subset sorted by engine
    id) to reuse them instead of crafting again.
    """
    subset = sorted(subset, key=lambda lw: lw.window.engine_id)
    if not subset:
        raise EmptyInput("evaluation subset is empty")
    truths = [lw.rul for lw in subset]
    clean = [predict(model, lw.window) for lw in subset]
    if examples is None:
        examples = craft_batch(model, subset, config, workers=workers)
    elif len(examples) != len(subset):
        raise ShapeMismatch("evaluate_attack", (len(examples),), (len(subset),))
    attacked = [predict(model, ex.perturbed) for ex in examples]
    clean_rmse = rmse(clean, truths)
    attacked_rmse = rmse(attacked, truths)
    rows = tuple(
        EngineRow(engine_id=lw.window.engine_id, true_rul=lw.rul,
                  clean_prediction=c, attacked_prediction=a)
        for lw, c, a in zip(subset, clean, attacked)
    )
    return AttackReport(
        model_id=model_id, config=config, clean_rmse=clean_rmse,
        attacked_rmse=attacked_rmse,
        pct_increase=AttackReport.percent_increase(clean_rmse, attacked_rmse),
        rows=rows,
    )


@dataclass(frozen=True)
class PiecewisePoint:
    cycle: int
    true_rul: float
    clean_prediction: float
    attacked_prediction: float | None = None


def piecewise_rul(model, trajectory, rul_cap: float = DEFAULT_RUL_CAP,
                  attack_config: AttackConfig | None = None) -> list:
    """Per-cycle RUL curve for one engine, optionally under attack.

    For each cycle from ``seq_len`` to the end, predicts on the window
    ending there; with a config, also crafts and predicts the attacked
    window. True piece-wise RUL is emitted alongside.
    """
    seq_len = model.spec.seq_len
    if trajectory.n_cycles < seq_len:
        raise TooShort(trajectory.unit_id, trajectory.n_cycles, seq_len)
    points = []
    for t in range(seq_len, trajectory.n_cycles + 1):
        window = SensorWindow(values=trajectory.values[t - seq_len:t],
                              engine_id=trajectory.unit_id, end_cycle=t)
        true_rul = trajectory.rul_at(t, rul_cap)
        clean = predict(model, window)
        attacked = None
        if attack_config is not None:
            attacked = predict(model, craft(model, window, true_rul, attack_config).perturbed)
        points.append(PiecewisePoint(cycle=t, true_rul=true_rul,
                                     clean_prediction=clean,
                                     attacked_prediction=attacked))
    return points


def epsilon_sweep(model, subset, epsilons, kinds=("fgsm", "bim"),
                  iterations: int = 100, model_id: str = "model",
                  workers: int = 1) -> list:
    """Attacked RMSE per epsilon for each kind (BIM at alpha = eps/I).

    Returns rows of ``{"epsilon", "fgsm_rmse", "bim_rmse"}`` (missing
    kinds map to None). Epsilons must be sorted ascending.
    """
    epsilons = [float(e) for e in epsilons]
    if sorted(epsilons) != epsilons:
        raise ValueError("epsilons must be sorted ascending")
    rows = []
    for eps in epsilons:
        row = {"epsilon": eps, "fgsm_rmse": None, "bim_rmse": None}
        for kind in kinds:
            config = AttackConfig(kind=kind, epsilon=eps, iterations=iterations)
            report = evaluate_attack(model, subset, config, model_id=model_id,
                                     workers=workers)
            row[f"{kind}_rmse"] = report.attacked_rmse
        rows.append(row)
    return rows


@dataclass(frozen=True)
class TransferMatrix:
    """RMSE on target models of examples crafted on source models.

    ``entries[(source, target)]`` holds ``(fgsm_rmse, bim_rmse)`` for every
    ordered pair of distinct models; ``clean_rmse`` gives each model's
    unattacked subset RMSE.
    """
    model_ids: tuple
    clean_rmse: dict
    entries: dict


def perturbed_trajectories(model, trajectories, config: AttackConfig,
                           rul_cap: float = DEFAULT_RUL_CAP,
                           workers: int = 1) -> dict:
    """Craft on each engine's terminal window and inject the perturbation
    back into the trajectory (zero elsewhere). Returns unit_id -> values."""
    seq_len = model.spec.seq_len
    eligible = [t for t in trajectories if t.n_cycles >= seq_len]
    subset = [
        LabeledWindow(
            window=SensorWindow(values=t.values[t.n_cycles - seq_len:t.n_cycles],
                                engine_id=t.unit_id, end_cycle=t.n_cycles),
            rul=t.rul_at(t.n_cycles, rul_cap))
        for t in eligible
    ]
    examples = craft_batch(model, subset, config, workers=workers)
    out = {}
    for traj, ex in zip(eligible, examples):
        values = traj.values.copy()
        values[traj.n_cycles - seq_len:] = ex.perturbed.values
        out[traj.unit_id] = values
    return out


def transfer_matrix(models: dict, trajectories, fgsm_cfg: AttackConfig,
                    bim_cfg: AttackConfig, rul_cap: float = DEFAULT_RUL_CAP,
                    workers: int = 1) -> TransferMatrix:
    """Black-box grid: craft on each source, evaluate RMSE on each target.

    Adversarial trajectories are crafted once per source model and reused
    across all targets. Models must share the normalization channel set;
    sequence lengths may differ (windows are re-cut per target).
    """
    names = list(models)
    if len(names) < 2:
        return TransferMatrix(model_ids=tuple(names), clean_rmse={}, entries={})

    stats = [m.norm_stats for m in models.values() if m.norm_stats is not None]
    if len(stats) > 1 and any(s.kept_channels != stats[0].kept_channels for s in stats[1:]):
        raise InvalidSpec("transfer requires models sharing the channel set")

    max_len = max(m.spec.seq_len for m in models.values())
    usable = [t for t in trajectories if t.n_cycles >= max_len]
    if not usable:
        raise EmptyInput("no engine is long enough for every model")
    labels = [t.rul_at(t.n_cycles, rul_cap) for t in usable]

    def target_window(traj, seq_len, values=None):
        vals = traj.values if values is None else values
        return SensorWindow(values=vals[traj.n_cycles - seq_len:traj.n_cycles],
                            engine_id=traj.unit_id, end_cycle=traj.n_cycles)

    clean = {}
    for name, model in models.items():
        preds = [predict(model, target_window(t, model.spec.seq_len)) for t in usable]
        clean[name] = rmse(preds, labels)

    crafted = {}
    for name, model in models.items():
        crafted[name] = {
            "fgsm": perturbed_trajectories(model, usable, fgsm_cfg, rul_cap, workers),
            "bim": perturbed_trajectories(model, usable, bim_cfg, rul_cap, workers),
        }

    entries = {}
    for src in names:
        for tgt in names:
            if src == tgt:
                continue
            tgt_model = models[tgt]
            pair = []
            for kind in ("fgsm", "bim"):
                streams = crafted[src][kind]
                preds = [
                    predict(tgt_model,
                            target_window(t, tgt_model.spec.seq_len, streams[t.unit_id]))
                    for t in usable
                ]
                pair.append(rmse(preds, labels))
            entries[(src, tgt)] = tuple(pair)
    return TransferMatrix(model_ids=tuple(names), clean_rmse=clean, entries=entries)


# -- CSV / plot emission --------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def write_report_csv(report: AttackReport, path) -> None:
    """Header, one row per engine, then a summary RMSE line."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["engine_id", "true_rul", "clean_prediction", "attacked_prediction"])
        for row in report.rows:
            writer.writerow([row.engine_id, _fmt(row.true_rul),
                             _fmt(row.clean_prediction), _fmt(row.attacked_prediction)])
        writer.writerow(["RMSE", _fmt(report.pct_increase),
                         _fmt(report.clean_rmse), _fmt(report.attacked_rmse)])


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epsilon", "fgsm_rmse", "bim_rmse"])
        for row in rows:
            writer.writerow([_fmt(row["epsilon"]), _fmt(row["fgsm_rmse"]),
                             _fmt(row["bim_rmse"])])


def write_matrix_csv(matrix: TransferMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "target", "fgsm_rmse", "bim_rmse"])
        for (src, tgt), (f_rmse, b_rmse) in sorted(matrix.entries.items()):
            writer.writerow([src, tgt, _fmt(f_rmse), _fmt(b_rmse)])


def write_piecewise_csv(path, curves: dict) -> None:
    """Merge one clean curve with attacked curves keyed by attack kind.

    ``curves`` maps a label ("clean", "fgsm", ...) to a point list from
    :func:`piecewise_rul`; all curves must share their cycle axis.
    """
    labels = list(curves)
    base = curves[labels[0]]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycle", "true_rul", "clean_prediction"]
                        + [f"{k}_prediction" for k in labels if k != "clean"])
        for i, point in enumerate(base):
            row = [point.cycle, _fmt(point.true_rul), _fmt(point.clean_prediction)]
            for k in labels:
                if k == "clean":
                    continue
                other = curves[k][i]
                row.append(_fmt(other.attacked_prediction))
            writer.writerow(row)


def plot_sweep(rows, path) -> None:
    """Optional line chart of the epsilon sweep (requires matplotlib)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    eps = [r["epsilon"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for kind, marker in (("fgsm", "o"), ("bim", "s")):
        ys = [r[f"{kind}_rmse"] for r in rows]
        if any(y is not None for y in ys):
            ax.plot(eps, ys, marker=marker, label=kind.upper())
    ax.set_xlabel("epsilon")
    ax.set_ylabel("RMSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_piecewise(curves: dict, path) -> None:
    """Optional line chart of piece-wise RUL curves (requires matplotlib)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    base = curves["clean"]
    cycles = [p.cycle for p in base]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(cycles, [p.true_rul for p in base], "--", label="true RUL")
    ax.plot(cycles, [p.clean_prediction for p in base], label="predicted")
    for kind, points in curves.items():
        if kind == "clean":
            continue
        ax.plot(cycles, [p.attacked_prediction for p in points], label=kind.upper())
    ax.set_xlabel("cycle")
    ax.set_ylabel("RUL")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
