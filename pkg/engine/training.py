"""Mini-batch Adam training with early stopping for the NN, PINN and RACER kinds."""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import HISTORY_COLUMNS, TRAIN_DEFAULTS, ModelKind
from domain import DatasetSplit, Sample, SampleBatch
from engine import autodiff as ad
from engine.autodiff import Tape
from engine.losses import LossTerms, RdcWeights, mse_loss, pinn_terms, racer_terms
from errors import AutodiffError, TrainingDivergedError, ValidationError
from models.neural import NetworkConfig, Normalizer, RacerNet
from models.ovrv import OvrvParams, ovrv_accel_array

LOG = logging.getLogger(__name__)

TRAINABLE_KINDS = (ModelKind.NN, ModelKind.PINN, ModelKind.RACER)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelKind = ModelKind.RACER
    learning_rate: float = TRAIN_DEFAULTS["learning_rate"]
    batch_size: int = TRAIN_DEFAULTS["batch_size"]
    max_epochs: int = TRAIN_DEFAULTS["max_epochs"]
    patience: int = TRAIN_DEFAULTS["patience"]
    seed: int = TRAIN_DEFAULTS["seed"]
    rdc_weights: RdcWeights = field(default_factory=RdcWeights)
    alpha: float = TRAIN_DEFAULTS["alpha"]
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if self.model not in TRAINABLE_KINDS:
            raise ValidationError(f"model must be one of {[k.value for k in TRAINABLE_KINDS]}, got {self.model.value}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValidationError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ValidationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["model"] = self.model.value
        d["rdc_weights"] = list(self.rdc_weights.as_tuple())
        d["network"] = self.network.to_dict()
        return d


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    p_speed: float
    p_spacing: float
    p_rel: float
    is_best: bool = False


@dataclass
class TrainingHistory:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.records)

    @property
    def best_val_loss(self) -> float:
        return min(r.val_loss for r in self.records) if self.records else math.inf

    def checkpoint_losses(self) -> List[float]:
        """Validation loss at every epoch that improved on the best so far."""
        return [r.val_loss for r in self.records if r.is_best]

    def to_frame(self) -> pd.DataFrame:
        rows = [{c: getattr(r, c) for c in HISTORY_COLUMNS} for r in self.records]
        return pd.DataFrame(rows, columns=HISTORY_COLUMNS)

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


class Adam:
    """Adam with bias-corrected moments; eps is added outside the square root."""

    def __init__(self, params: Dict[str, np.ndarray], lr: float,
                 betas: Tuple[float, float] = TRAIN_DEFAULTS["adam_betas"],
                 eps: float = TRAIN_DEFAULTS["adam_eps"]):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            params[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def fit_normalizer(samples: Sequence[Sample]) -> Normalizer:
    """Z-score statistics from training samples only (X_phy features and targets)."""
    if not samples:
        raise ValidationError("cannot fit a normalizer on an empty training set")
    batch = SampleBatch.from_samples(samples)
    mean = batch.phy.mean(axis=0)
    std = batch.phy.std(axis=0)
    constant = std == 0.0
    t_std = float(batch.target.std())
    return Normalizer(
        mean=mean,
        std=np.where(constant, 1.0, std),
        constant=constant,
        target_mean=float(batch.target.mean()),
        target_std=t_std if t_std > 0 else 1.0,
    )


def _loss_terms(batch: SampleBatch, net: RacerNet, cfg: TrainConfig,
                ovrv: Optional[OvrvParams], tape: Tape) -> LossTerms:
    if cfg.model is ModelKind.RACER:
        return racer_terms(batch, net, cfg.rdc_weights, tape)
    if cfg.model is ModelKind.PINN:
        return pinn_terms(batch, net, ovrv, cfg.alpha, tape)
    mse = mse_loss(net.forward(batch, tape), batch.target)
    return LossTerms(mse, mse)


def penalty_means(net: RacerNet, batch: SampleBatch) -> Tuple[float, float, float]:
    """Mean ReLU(dv), ReLU(-ds), ReLU(-dr) of a model over a batch."""
    g = net.rdc_gradients(batch)
    return (
        float(np.mean(np.maximum(g[:, 0], 0.0))),
        float(np.mean(np.maximum(-g[:, 1], 0.0))),
        float(np.mean(np.maximum(-g[:, 2], 0.0))),
    )


def evaluate_loss(net: RacerNet, batch: SampleBatch, cfg: TrainConfig,
                  ovrv: Optional[OvrvParams] = None) -> float:
    """Full training objective of `cfg.model` on a batch, without recording a tape."""
    pred = net.predict(batch.seq)
    mse = float(np.mean((batch.target - pred) ** 2))
    if cfg.model is ModelKind.RACER:
        penalties = penalty_means(net, batch)
        return mse + sum(lam * p for lam, p in zip(cfg.rdc_weights.as_tuple(), penalties) if lam)
    if cfg.model is ModelKind.PINN:
        phys = float(np.mean((pred - ovrv_accel_array(batch.phy, ovrv)) ** 2))
        return cfg.alpha * mse + (1.0 - cfg.alpha) * phys
    return mse


def train_model(
    split: DatasetSplit,
    cfg: TrainConfig,
    ovrv: Optional[OvrvParams] = None,
) -> Tuple[RacerNet, TrainingHistory]:
    """
    Train a RacerNet with the loss for `cfg.model`; returns the network at its
    best validation epoch and the per-epoch history.
    """
    if cfg.model is ModelKind.PINN and ovrv is None:
        raise ValidationError("PINN training needs calibrated OVRV parameters")
    if not split.train:
        raise ValidationError("training split is empty")

    net = RacerNet(cfg.network, seq_len=split.seq_len, kind=cfg.model, name=cfg.model.value,
                   normalizer=fit_normalizer(split.train))
    names = net.parameter_names
    train_batch = SampleBatch.from_samples(split.train)
    if split.validation:
        val_batch = SampleBatch.from_samples(split.validation)
    else:
        LOG.warning("validation split is empty; early stopping monitors the training set")
        val_batch = train_batch

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.params, cfg.learning_rate)
    history = TrainingHistory()
    best_loss, best_params, wait = math.inf, net.copy_parameters(), 0
    n = len(train_batch)

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        weighted = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = train_batch.take(idx)
            tape = Tape()
            try:
                terms = _loss_terms(batch, net, cfg, ovrv, tape)
                leaves = net.bind(tape)
                grads = ad.grad(tape, terms.total, [leaves[k] for k in names])
            except AutodiffError as exc:
                raise TrainingDivergedError(str(exc), epoch) from exc
            loss = float(terms.total.value)
            if not math.isfinite(loss):
                raise TrainingDivergedError("non-finite training loss", epoch, loss)
            opt.step(net.params, dict(zip(names, grads)))
            if not all(np.all(np.isfinite(net.params[k])) for k in names):
                raise TrainingDivergedError("non-finite parameters after optimizer step", epoch, loss)
            weighted += loss * len(idx)

        train_loss = weighted / n
        val_loss = evaluate_loss(net, val_batch, cfg, ovrv)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError("non-finite validation loss", epoch, val_loss)
        p_speed, p_spacing, p_rel = penalty_means(net, train_batch)
        is_best = val_loss < best_loss
        history.records.append(EpochRecord(epoch, train_loss, val_loss, p_speed, p_spacing, p_rel, is_best))
        LOG.debug("%s epoch %d: train=%.4g val=%.4g penalties=(%.2g, %.2g, %.2g)",
                  net.name, epoch, train_loss, val_loss, p_speed, p_spacing, p_rel)
        if is_best:
            best_loss, best_params, wait = val_loss, net.copy_parameters(), 0
            history.best_epoch = epoch
        else:
            wait += 1
            if wait >= cfg.patience:
                history.stopped_early = True
                LOG.info("%s: early stop at epoch %d (best epoch %d)", net.name, epoch, history.best_epoch)
                break

    net.set_parameters(best_params)
    LOG.info("%s trained: best val loss %.4g at epoch %d of %d", net.name, best_loss, history.best_epoch, len(history))
    return net, history


@dataclass
class AlphaSelection:
    alpha: float
    scores: Dict[float, float]      # alpha -> validation data MSE
    net: RacerNet
    history: TrainingHistory


def select_alpha(
    split: DatasetSplit,
    cfg: TrainConfig,
    ovrv: OvrvParams,
    grid: Sequence[float] = TRAIN_DEFAULTS["alpha_grid"],
) -> AlphaSelection:
    """Train one PINN per alpha and keep the one with the lowest validation data MSE."""
    if not grid:
        raise ValidationError("alpha grid is empty")
    if not split.validation:
        raise ValidationError("alpha selection needs a validation split")
    val_batch = SampleBatch.from_samples(split.validation)
    best: Optional[AlphaSelection] = None
    scores: Dict[float, float] = {}
    for alpha in grid:
        net, history = train_model(split, replace(cfg, model=ModelKind.PINN, alpha=float(alpha)), ovrv)
        score = float(np.mean((val_batch.target - net.predict(val_batch.seq)) ** 2))
        scores[float(alpha)] = score
        LOG.info("PINN alpha=%.2f: validation MSE %.4g", alpha, score)
        if best is None or score < best.scores[best.alpha]:
            best = AlphaSelection(float(alpha), scores, net, history)
    return best
