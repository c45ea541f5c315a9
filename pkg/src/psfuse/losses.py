"""Least-squares adversarial, reconstruction and cycle losses and their weighted sum.

All reductions are means over every element, so the weights keep their scale
across patch sizes and batch sizes.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import as_tensor


@dataclass(frozen=True)
class LsganLabels:
    a: float = 1.0  # target the generators push fake scores towards
    b: float = 0.0  # fake label
    c: float = 1.0  # real label


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0  # cycle consistency
    lambda2: float = 5.0   # reconstruction

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")


def _toward(score, target):
    score = as_tensor(score)
    return ops.scale(ops.mse(score, np.full(score.shape, target, dtype=score.dtype)), 0.5)


def adv_gen_loss(score, a=1.0):
    """0.5 * mean((score - a)^2) over the score map."""
    return _toward(score, a)


def disc_loss(real_score, fake_score, b=0.0, c=1.0):
    """0.5 * mean((real - c)^2) + 0.5 * mean((fake - b)^2)."""
    return _toward(real_score, c) + _toward(fake_score, b)


def dc_loss_dmg(score_dmg, score_f2c, labels=LsganLabels()):
    """Coarse discriminator with the DMG output as fake and the F2C output as real."""
    if score_dmg.shape != score_f2c.shape:
        raise ValueError(f"score maps differ: {score_dmg.shape} vs {score_f2c.shape}")
    return _toward(score_dmg, labels.b) + _toward(score_f2c, labels.c)


def dc_loss_f2c(score_dmg, score_f2c, labels=LsganLabels()):
    """Roles swapped: the DMG output is real and the F2C output fake."""
    if score_dmg.shape != score_f2c.shape:
        raise ValueError(f"score maps differ: {score_dmg.shape} vs {score_f2c.shape}")
    return _toward(score_dmg, labels.c) + _toward(score_f2c, labels.b)


def recon_loss(pred, target):
    return ops.scale(ops.mse(pred, target), 0.5)


def cycle_loss(round_trip, origin):
    return ops.scale(ops.mse(round_trip, origin), 0.5)


def joint_loss(adv, cyc, rec, weights=LossWeights()):
    return adv + ops.scale(cyc, weights.lambda1) + ops.scale(rec, weights.lambda2)
