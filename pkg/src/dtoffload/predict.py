"""Digital-twin forecasting: two link-throughput predictors and a task-rate
predictor, each an Elman recurrent regressor pretrained on simulated traces.

Predictors carry multiplicative input/output scales only (derived from the
training split), so an all-zero net on an all-zero window forecasts exactly 0.
Throughput forecasts are clamped at 0. Trained predictors are frozen during
RL training; RL results are reproducible given the predictor checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .config import ValidationError, make_rng
from .nn import ElmanRegressor, load_checkpoint, save_checkpoint


@dataclass(frozen=True)
class PredictorSpec:
    """Architecture of one predictor."""

    history_len: int
    rnn_width: int
    dense: Tuple[int, ...]
    horizon: int
    chunk: int = 1

    def __post_init__(self):
        if self.history_len <= 0 or self.rnn_width <= 0 or any(d <= 0 for d in self.dense):
            raise ValidationError("widths must be positive")
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if self.history_len % self.chunk != 0:
            raise ValidationError("history length must be a multiple of the chunk")


# The 50-slot window enters the RNN five slots per step (ten 256-cell steps);
# the task-rate window enters one slot per step.
THROUGHPUT_SPEC = PredictorSpec(history_len=50, rnn_width=256, dense=(512, 256),
                                horizon=10, chunk=5)
TASK_RATE_SPEC = PredictorSpec(history_len=5, rnn_width=128, dense=(512,),
                               horizon=1, chunk=1)


class Predictor:
    """A frozen-after-training scalar forecaster over a fixed history window."""

    def __init__(self, spec: PredictorSpec, seed: int = 0,
                 x_scale: float = 1.0, y_scale: float = 1.0,
                 flat: np.ndarray | None = None):
        self.spec = spec
        self.net = ElmanRegressor(spec.history_len, spec.rnn_width, spec.dense,
                                  chunk=spec.chunk, rng=make_rng(seed, 7), flat=flat)
        self.x_scale = float(x_scale)
        self.y_scale = float(y_scale)

    def predict(self, window) -> float:
        """Forecast from one history window; clamped at 0.

        The net regresses the deviation from the window's own mean, so scaling
        is purely multiplicative and an all-zero window under zero weights
        forecasts exactly 0."""
        window = np.asarray(window, dtype=np.float64)
        if window.ndim != 1 or window.shape[0] != self.spec.history_len:
            raise ValueError(f"window length {window.shape} != {self.spec.history_len}")
        wm = float(window.mean())
        y, _ = self.net.forward((window[None, :] - wm) / self.x_scale)
        return float(max(0.0, wm + y[0] * self.y_scale))

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.float64)
        if windows.shape[1] != self.spec.history_len:
            raise ValueError("window length mismatch")
        wm = windows.mean(axis=1)
        y, _ = self.net.forward((windows - wm[:, None]) / self.x_scale)
        return np.maximum(0.0, wm + y * self.y_scale)

    def save(self, path: str) -> None:
        meta = np.array([self.spec.history_len, self.spec.rnn_width,
                         self.spec.horizon, self.spec.chunk, len(self.spec.dense),
                         *self.spec.dense], dtype=np.float64)
        scales = np.array([self.x_scale, self.y_scale])
        from .nn import flat_views
        save_checkpoint(path, [meta, scales] + flat_views(self.net.flat, self.net.shapes))

    @classmethod
    def load(cls, path: str) -> "Predictor":
        arrays = load_checkpoint(path)
        meta, scales = arrays[0], arrays[1]
        n_dense = int(meta[4])
        spec = PredictorSpec(
            history_len=int(meta[0]), rnn_width=int(meta[1]), horizon=int(meta[2]),
            chunk=int(meta[3]), dense=tuple(int(d) for d in meta[5:5 + n_dense]))
        flat = np.concatenate([a.ravel() for a in arrays[2:]])
        return cls(spec, x_scale=float(scales[0]), y_scale=float(scales[1]), flat=flat)


def make_windows(series: np.ndarray, history: int, horizon: int,
                 next_value_target: bool = False):
    """Sliding windows plus targets: mean of the next `horizon` values, or the
    single next value for the task-rate predictor."""
    series = np.asarray(series, dtype=np.float64)
    n = series.shape[0] - history - horizon + 1
    if n < 2:
        raise ValidationError(
            f"trace of {series.shape[0]} slots is shorter than history+horizon")
    idx = np.arange(history) + np.arange(n)[:, None]
    X = series[idx]
    if next_value_target:
        y = series[history:history + n]
    else:
        hidx = np.arange(horizon) + (np.arange(n) + history)[:, None]
        y = series[hidx].mean(axis=1)
    return X, y


def relative_accuracy(pred: np.ndarray, true: np.ndarray) -> float:
    """1 - mean(|pred - true| / true); the artifact's accuracy definition."""
    denom = np.maximum(np.abs(true), 1e-9)
    return float(1.0 - np.mean(np.abs(pred - true) / denom))


def pretrain(predictor: Predictor, series: np.ndarray, epochs: int = 3,
             batch: int = 64, lr: float = 1e-3, seed: int = 0,
             holdout: float = 0.2, next_value_target: bool | None = None) -> dict:
    """Supervised regression on a simulated trace; returns an accuracy report.

    The last `holdout` fraction of windows is held out; the report carries the
    trained accuracy and the window-mean oracle's accuracy on the same split.
    """
    spec = predictor.spec
    if next_value_target is None:
        next_value_target = spec.horizon == 1
    X, y = make_windows(series, spec.history_len, spec.horizon, next_value_target)
    n_test = max(1, int(holdout * X.shape[0]))
    X_train, y_train = X[:-n_test], y[:-n_test]
    X_test, y_test = X[-n_test:], y[-n_test:]

    wm = X_train.mean(axis=1)
    X_res = X_train - wm[:, None]
    y_res = y_train - wm
    predictor.x_scale = max(1e-9, float(np.max(np.abs(X_res))))
    predictor.y_scale = max(1e-9, float(np.max(np.abs(y_res))))
    Xn, yn = X_res / predictor.x_scale, y_res / predictor.y_scale

    net = predictor.net
    rng = make_rng(seed, 11)
    n = Xn.shape[0]
    acc = np.zeros_like(net.flat)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            sel = order[lo:lo + batch]
            pred, cache = net.forward(Xn[sel])
            dy = 2.0 * (pred - yn[sel]) / sel.shape[0]
            grad = net.backward(cache, dy)
            acc *= 0.99
            acc += 0.01 * grad * grad
            net.flat -= lr * grad / (np.sqrt(acc) + 1e-8)

    pred_test = predictor.predict_batch(X_test)
    oracle_test = X_test.mean(axis=1)
    report = {
        "accuracy": relative_accuracy(pred_test, y_test),
        "oracle_accuracy": relative_accuracy(oracle_test, y_test),
        "train_windows": int(n),
        "test_windows": int(n_test),
    }
    return report


class TrainedPredictors:
    """Bundle plugged into the env: two throughput nets plus the task-rate net."""

    def __init__(self, mec: Predictor, cloud: Predictor, task_rate: Predictor):
        self.mec = mec
        self.cloud = cloud
        self.task_rate = task_rate

    def predict_rates(self, mec_window: np.ndarray, cloud_window: np.ndarray):
        return self.mec.predict(mec_window), self.cloud.predict(cloud_window)

    def predict_task_rate(self, lam_window: np.ndarray) -> float:
        return self.task_rate.predict(lam_window)

    @classmethod
    def load_dir(cls, directory: str) -> "TrainedPredictors":
        import os
        return cls(
            mec=Predictor.load(os.path.join(directory, "throughput_mec.ckpt")),
            cloud=Predictor.load(os.path.join(directory, "throughput_cloud.ckpt")),
            task_rate=Predictor.load(os.path.join(directory, "task_rate.ckpt")),
        )

    def save_dir(self, directory: str) -> None:
        import os
        os.makedirs(directory, exist_ok=True)
        self.mec.save(os.path.join(directory, "throughput_mec.ckpt"))
        self.cloud.save(os.path.join(directory, "throughput_cloud.ckpt"))
        self.task_rate.save(os.path.join(directory, "task_rate.ckpt"))
