"""Losses, the training and fine-tuning loops, and evaluation metrics.

The distance term is the mean Euclidean point error in millimetres, the force
term the squared error in newtons; the total is ``alpha * L_d + L_f``.
Batches may mix cloud sizes, so gradients are accumulated one sample at a
time and applied with a single Adam step per batch.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, asdict

import numpy as np

from softsurf import autodiff as ad
from softsurf.core import Sample, make_rng, mean_euclidean_distance
from softsurf.datasets import augment_subsample
from softsurf.errors import ConfigError, DivergenceError
from softsurf.model import ModelConfig, cgnn_forward, forward_arrays, init_weights


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    batch_size: int = 32
    lr: float = 1e-4
    alpha: float = 88.0
    augment_fraction: float = 0.0  # 0 disables subsampling
    seed: int = 0

    def validate(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not 0 <= self.augment_fraction <= 1:
            raise ConfigError(
                f"augment_fraction must be in [0, 1], got {self.augment_fraction}"
            )


def loss_distance(y_true: np.ndarray, y_pred: ad.Tensor) -> ad.Tensor:
    """Mean Euclidean distance between target and predicted clouds (mm)."""
    target = ad.tensor(y_true, dtype=y_pred.data.dtype)
    if target.shape != y_pred.shape:
        raise ValueError(
            f"target cloud shape {target.shape} does not match prediction {y_pred.shape}"
        )
    return ad.reduce_mean(ad.sqrt_sum_rows(ad.sub(target, y_pred)))


def loss_total(
    y_true: np.ndarray,
    y_pred: ad.Tensor,
    df_true: float,
    df_pred: ad.Tensor,
    alpha: float,
) -> ad.Tensor:
    """alpha * L_d + squared force error."""
    l_d = loss_distance(y_true, y_pred)
    df_t = ad.tensor(np.asarray(df_true), dtype=df_pred.data.dtype)
    l_f = ad.square(ad.sub(df_pred, df_t))
    return ad.add(ad.scale(l_d, alpha), l_f)


def sample_loss(
    sample: Sample, params: dict, model_config: ModelConfig, alpha: float
) -> ad.Tensor:
    """Forward pass and total loss for one sample."""
    delta_x, delta_f = cgnn_forward(
        sample.input_points, sample.condition, params, model_config
    )
    x = ad.tensor(sample.input_points, dtype=delta_x.data.dtype)
    y_pred = ad.add(x, delta_x)
    return loss_total(
        sample.target_points(), y_pred, sample.target_force_change, delta_f, alpha
    )


@dataclass
class Metrics:
    """Per-sample evaluation records plus their aggregates (std is the
    population standard deviation)."""

    mean_ld: np.ndarray  # (S,) mm
    max_ld: np.ndarray  # (S,) mm
    force_abs_error: np.ndarray  # (S,) N
    force_sq_error: np.ndarray  # (S,) N^2

    @property
    def n_samples(self) -> int:
        return len(self.mean_ld)

    @property
    def force_mse(self) -> float:
        return float(np.mean(self.force_sq_error))

    def summary(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "force_mse": self.force_mse,
            "force_abs_error_mean": float(np.mean(self.force_abs_error)),
            "force_abs_error_std": float(np.std(self.force_abs_error)),
            "mean_ld_mean": float(np.mean(self.mean_ld)),
            "mean_ld_std": float(np.std(self.mean_ld)),
            "max_ld_mean": float(np.mean(self.max_ld)),
            "max_ld_std": float(np.std(self.max_ld)),
        }

    def records(self) -> list[dict]:
        return [
            {
                "sample": i,
                "mean_ld": float(self.mean_ld[i]),
                "max_ld": float(self.max_ld[i]),
                "force_abs_error": float(self.force_abs_error[i]),
                "force_sq_error": float(self.force_sq_error[i]),
            }
            for i in range(self.n_samples)
        ]


def evaluate(
    samples: list[Sample],
    params: dict | None,
    model_config: ModelConfig,
) -> Metrics:
    """Evaluate on full clouds. ``params=None`` scores the identity predictor
    (zero displacement, zero force change), the data-scale baseline."""
    if not samples:
        raise ValueError("cannot evaluate an empty sample list")
    mean_ld = np.empty(len(samples))
    max_ld = np.empty(len(samples))
    f_abs = np.empty(len(samples))
    f_sq = np.empty(len(samples))
    for i, s in enumerate(samples):
        if params is None:
            y_pred = s.input_points
            df_pred = 0.0
        else:
            delta_x, df_pred = forward_arrays(
                s.input_points, s.condition, params, model_config
            )
            y_pred = s.input_points + delta_x
        y_true = s.target_points()
        d = y_true - y_pred
        dists = np.sqrt(np.einsum("ij,ij->i", d, d))
        mean_ld[i] = dists.mean()
        max_ld[i] = dists.max()
        err = df_pred - s.target_force_change
        f_abs[i] = abs(err)
        f_sq[i] = err * err
    return Metrics(mean_ld=mean_ld, max_ld=max_ld, force_abs_error=f_abs, force_sq_error=f_sq)


def _validation_loss(
    samples: list[Sample], params: dict, model_config: ModelConfig, alpha: float
) -> dict:
    total = 0.0
    ld_sum = 0.0
    fa_sum = 0.0
    for s in samples:
        delta_x, df_pred = forward_arrays(s.input_points, s.condition, params, model_config)
        y_pred = s.input_points + delta_x
        ld = mean_euclidean_distance(s.target_points(), y_pred)
        fe = df_pred - s.target_force_change
        total += alpha * ld + fe * fe
        ld_sum += ld
        fa_sum += abs(fe)
    n = len(samples)
    return {
        "val_loss": total / n,
        "val_mean_ld": ld_sum / n,
        "val_force_abs_error": fa_sum / n,
    }


def _copy_params(params: dict) -> dict:
    return {
        name: ad.tensor(p.data.copy(), requires_grad=True, dtype=p.data.dtype)
        for name, p in params.items()
    }


@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")


def train(
    train_samples: list[Sample],
    val_samples: list[Sample],
    model_config: ModelConfig,
    train_config: TrainConfig,
    init_params: dict | None = None,
) -> TrainResult:
    """Minibatch training with per-batch Adam steps; returns the weights with
    the best validation total loss seen across epochs."""
    if not train_samples or not val_samples:
        raise ValueError("training and validation sets must be non-empty")
    model_config.validate()
    train_config.validate()

    if init_params is None:
        params = init_weights(model_config, seed=train_config.seed)
    else:
        params = _copy_params(init_params)

    opt = ad.adam_init(params, lr=train_config.lr)
    rng = make_rng(train_config.seed)
    alpha = train_config.alpha
    frac = train_config.augment_fraction

    result = TrainResult(params=_copy_params(params))
    if train_config.epochs == 0:
        return result

    n = len(train_samples)
    for epoch in range(train_config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, train_config.batch_size):
            batch = [train_samples[i] for i in order[start : start + train_config.batch_size]]
            ad.zero_grads(params)
            batch_loss = 0.0
            for s in batch:
                if 0.0 < frac < 1.0:
                    s = augment_subsample(s, frac, rng, min_points=model_config.k + 1)
                loss = ad.scale(
                    sample_loss(s, params, model_config, alpha), 1.0 / len(batch)
                )
                val = loss.item()
                if not np.isfinite(val):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, batch starting at {start}"
                    )
                batch_loss += val
                ad.backward(loss)
            ad.adam_step(params, opt)
            epoch_loss += batch_loss * len(batch)

        record = {"epoch": epoch, "train_loss": epoch_loss / n}
        record.update(_validation_loss(val_samples, params, model_config, alpha))
        result.history.append(record)
        if record["val_loss"] < result.best_val_loss:
            result.best_val_loss = record["val_loss"]
            result.best_epoch = epoch
            result.params = _copy_params(params)
    return result


def finetune(
    init_params: dict,
    train_samples: list[Sample],
    val_samples: list[Sample],
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> TrainResult:
    """Continue training every weight from a checkpoint (no layer freezing)."""
    expected = {f"{name}.{suffix}" for name, _, _ in model_config.layer_dims() for suffix in ("w", "b")}
    if set(init_params) != expected:
        raise ConfigError(
            "checkpoint parameters do not match the model configuration: "
            f"missing {sorted(expected - set(init_params))[:3]}, "
            f"unexpected {sorted(set(init_params) - expected)[:3]}"
        )
    return train(train_samples, val_samples, model_config, train_config, init_params=init_params)
