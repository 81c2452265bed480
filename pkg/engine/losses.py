"""Training objectives: MSE, the PINN blend and the RDC-penalised RACER loss."""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from config import TRAIN_DEFAULTS
from domain import SampleBatch
from engine import autodiff as ad
from engine.autodiff import Tape, Var
from errors import ValidationError
from models.neural import RacerNet
from models.ovrv import OvrvParams, ovrv_accel_array


@dataclass(frozen=True)
class RdcWeights:
    speed: float = TRAIN_DEFAULTS["rdc_weights"][0]        # lambda1
    spacing: float = TRAIN_DEFAULTS["rdc_weights"][1]      # lambda2
    relative_speed: float = TRAIN_DEFAULTS["rdc_weights"][2]  # lambda3

    def __post_init__(self):
        for v in self.as_tuple():
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"RDC weights must be finite and >= 0, got {self.as_tuple()}")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.speed, self.spacing, self.relative_speed)

    @property
    def is_zero(self) -> bool:
        return not any(self.as_tuple())


@dataclass(frozen=True)
class LossTerms:
    total: Var
    mse: Var
    p_speed: Optional[Var] = None
    p_spacing: Optional[Var] = None
    p_rel: Optional[Var] = None


def mse_loss(pred, target):
    """(1/N) * sum (target - pred)^2 for pred of shape (N,) or (N, 1)."""
    if not isinstance(pred, Var):
        pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    shape = pred.shape
    if not shape or shape[0] == 0:
        raise ValidationError("mse_loss needs at least one prediction")
    if int(np.prod(shape)) != shape[0] or target.size != shape[0]:
        raise ValidationError(f"mse_loss: {shape} predictions vs {target.shape} targets")
    diff = ad.add(pred, -target.reshape(shape))
    return ad.mean(ad.mul(diff, diff))


def rdc_penalties(dv, ds, dr):
    """Batch means of ReLU(dv), ReLU(-ds), ReLU(-dr)."""
    return (
        ad.mean(ad.relu(dv)),
        ad.mean(ad.relu(ad.neg(ds))),
        ad.mean(ad.relu(ad.neg(dr))),
    )


def racer_terms(batch: SampleBatch, net: RacerNet, weights: RdcWeights, tape: Tape) -> LossTerms:
    if len(batch) == 0:
        raise ValidationError("racer_loss needs a non-empty batch")
    a_pred = net.forward(batch, tape)
    mse = mse_loss(a_pred, batch.target)
    p_speed, p_spacing, p_rel = rdc_penalties(*net.input_gradients(tape))
    total = mse
    for lam, p in zip(weights.as_tuple(), (p_speed, p_spacing, p_rel)):
        if lam:
            total = ad.add(total, ad.affine(p, lam, 0.0))
    return LossTerms(total, mse, p_speed, p_spacing, p_rel)


def racer_loss(batch: SampleBatch, net: RacerNet, weights: RdcWeights, tape: Tape) -> Var:
    """MSE + lambda1*p_speed + lambda2*p_spacing + lambda3*p_rel, on one tape."""
    return racer_terms(batch, net, weights, tape).total


def pinn_terms(batch: SampleBatch, net: RacerNet, ovrv: OvrvParams, alpha: float, tape: Tape) -> LossTerms:
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    a_nn = net.forward(batch, tape)
    data_mse = mse_loss(a_nn, batch.target)
    phys_mse = mse_loss(a_nn, ovrv_accel_array(batch.phy, ovrv))
    total = ad.add(ad.affine(data_mse, alpha, 0.0), ad.affine(phys_mse, 1.0 - alpha, 0.0))
    return LossTerms(total, data_mse)


def pinn_loss(batch: SampleBatch, net: RacerNet, ovrv: OvrvParams, alpha: float, tape: Tape) -> Var:
    """alpha * MSE(a_true, a_nn) + (1 - alpha) * MSE(a_nn, a_ovrv)."""
    return pinn_terms(batch, net, ovrv, alpha, tape).total
