"""Untargeted gradient-sign attacks on RUL regressors.

FGSM takes one step of size epsilon along the sign of the input gradient
of the squared-error loss; BIM iterates smaller steps (alpha, by default
epsilon/iterations) and clips the accumulated perturbation back into the
epsilon-box after every step, re-evaluating the gradient at the current
perturbed window each iteration. ``sign(0)`` is 0, so a dead gradient
leaves the window untouched and flags the result.

Perturbation arithmetic runs in float64 on the normalized [0, 1] scale
regardless of the model's compute dtype; epsilon is dimensionless on that
scale and capped at 1.4. By default the perturbed window is NOT clamped
to the valid data range, matching the attack definitions; pass
``clip_to_data_range=True`` to stay within [0, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SensorWindow
from .errors import EpsilonOutOfRange
from .models import loss_and_input_gradient, predict

MAX_EPSILON = 1.4
DEFAULT_ITERATIONS = 100


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not (0.0 <= epsilon <= MAX_EPSILON):
        raise EpsilonOutOfRange(f"epsilon must lie in [0, {MAX_EPSILON}], got {epsilon}")
    return epsilon


@dataclass(frozen=True)
class AttackConfig:
    """Crafting parameters; ``alpha`` defaults to ``epsilon / iterations``."""
    kind: str
    epsilon: float
    iterations: int = DEFAULT_ITERATIONS
    alpha: float | None = None
    clip_to_data_range: bool = False
    use_model_prediction: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", str(self.kind).lower())
        if self.kind not in ("fgsm", "bim"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        object.__setattr__(self, "epsilon", _check_epsilon(self.epsilon))
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive when given")

    @property
    def step_size(self) -> float:
        return self.alpha if self.alpha is not None else self.epsilon / self.iterations


@dataclass(frozen=True)
class AdversarialExample:
    """Original window, its perturbed twin, and the crafted perturbation.

    ``perturbation`` is the crafted delta before any data-range clamping;
    ``zero_gradient`` marks windows the model was locally blind to.
    """
    original: SensorWindow
    perturbed: SensorWindow
    perturbation: np.ndarray
    label_used: float
    zero_gradient: bool = False

    def __post_init__(self):
        arr = np.asarray(self.perturbation, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "perturbation", arr)


def _resolve_label(model, window, rul_label, use_model_prediction) -> float:
    if use_model_prediction:
        return predict(model, window)
    return float(rul_label)


def _finish(window, eta, label, moved, clip_to_data_range) -> AdversarialExample:
    perturbed_values = window.values + eta
    if clip_to_data_range:
        perturbed_values = np.clip(perturbed_values, 0.0, 1.0)
    perturbed = SensorWindow(values=perturbed_values, engine_id=window.engine_id,
                             end_cycle=window.end_cycle)
    return AdversarialExample(original=window, perturbed=perturbed, perturbation=eta,
                              label_used=label, zero_gradient=not moved)


def craft_fgsm(model, window: SensorWindow, rul_label: float, epsilon: float,
               clip_to_data_range: bool = False,
               use_model_prediction: bool = False) -> AdversarialExample:
    """One-step attack: ``M' = M + epsilon * sign(grad_M J(M, label))``."""
    epsilon = _check_epsilon(epsilon)
    label = _resolve_label(model, window, rul_label, use_model_prediction)
    _, g = loss_and_input_gradient(model, window, label)
    sign = np.sign(g.astype(np.float64))
    eta = epsilon * sign
    return _finish(window, eta, label, moved=bool(sign.any()),
                   clip_to_data_range=clip_to_data_range)


def craft_bim(model, window: SensorWindow, rul_label: float, epsilon: float,
              iterations: int = DEFAULT_ITERATIONS, alpha: float | None = None,
              clip_to_data_range: bool = False,
              use_model_prediction: bool = False) -> AdversarialExample:
    """Iterated attack with per-step epsilon-box clipping.

    With ``iterations=1, alpha=epsilon`` this degenerates to
    :func:`craft_fgsm` bit for bit.
    """
    epsilon = _check_epsilon(epsilon)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    step = epsilon / iterations if alpha is None else float(alpha)
    if alpha is not None and step <= 0:
        raise ValueError("alpha must be positive when given")
    label = _resolve_label(model, window, rul_label, use_model_prediction)

    eta = np.zeros_like(window.values)
    moved = False
    for _ in range(iterations):
        current = SensorWindow(values=window.values + eta,
                               engine_id=window.engine_id, end_cycle=window.end_cycle)
        _, g = loss_and_input_gradient(model, current, label)
        sign = np.sign(g.astype(np.float64))
        moved = moved or bool(sign.any())
        eta = np.clip(eta + step * sign, -epsilon, epsilon)
    return _finish(window, eta, label, moved=moved,
                   clip_to_data_range=clip_to_data_range)


def craft(model, window: SensorWindow, rul_label: float,
          config: AttackConfig) -> AdversarialExample:
    """Craft one example per the config's kind."""
    if config.kind == "fgsm":
        return craft_fgsm(model, window, rul_label, config.epsilon,
                          clip_to_data_range=config.clip_to_data_range,
                          use_model_prediction=config.use_model_prediction)
    return craft_bim(model, window, rul_label, config.epsilon,
                     iterations=config.iterations, alpha=config.alpha,
                     clip_to_data_range=config.clip_to_data_range,
                     use_model_prediction=config.use_model_prediction)


def craft_batch(model, labeled_windows, config: AttackConfig,
                workers: int = 1) -> list:
    """Craft per labeled window, preserving order.

    Results are elementwise identical to single-window calls; batching is
    a convenience only. Fails fast on the first model error.
    """
    labeled_windows = list(labeled_windows)
    if workers > 1 and len(labeled_windows) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(
                lambda lw: craft(model, lw.window, lw.rul, config), labeled_windows))
    return [craft(model, lw.window, lw.rul, config) for lw in labeled_windows]


def write_signature_csvs(examples, out_dir, kind: str, channel_ids=None) -> list:
    """One CSV per engine with original vs perturbed traces.

    Columns: cycle, sensor (1-based sensor number when ``channel_ids``
    gives the kept raw indices, else the window column), original,
    perturbed. Reproduces the per-sensor attack-signature plots.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for ex in examples:
        window = ex.original
        t_len, n_ch = window.values.shape
        labels = ([c + 1 for c in channel_ids] if channel_ids is not None
                  else list(range(n_ch)))
        path = out_dir / f"signature_{kind}_engine{window.engine_id}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cycle", "sensor", "original", "perturbed"])
            start = window.end_cycle - t_len + 1
            for row in range(t_len):
                for col in range(n_ch):
                    writer.writerow([
                        start + row,
                        labels[col],
                        repr(float(window.values[row, col])),
                        repr(float(ex.perturbed.values[row, col])),
                    ])
        paths.append(path)
    return paths
