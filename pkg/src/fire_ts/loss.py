"""Composite training objective.

    total = weighted pseudo-Huber + w_fft * spectral MAE + phase smoothness

Ablations drop terms from the end: ``enhanced`` has no phase term,
``advanced`` has no phase or spectral term, and ``base`` is the plain
(unweighted) pseudo-Huber mean.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import core as F
from .core import Tensor
from .spectral import rfft

ABLATIONS = ("full", "enhanced", "advanced", "base")
PHASE_SOURCES = ("features", "output")


@dataclass
class LossConfig:
    delta: float = 1.0
    tau_hat: float = 0.9
    lam: float = 1.0
    w_fft: float = 1.0
    ablation: str = "full"
    phase_source: str = "features"

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0.0 <= self.tau_hat <= 1.0:
            raise ValueError("tau_hat must lie in [0, 1]")
        if self.lam < 0 or self.w_fft < 0:
            raise ValueError("loss weights must be non-negative")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.phase_source not in PHASE_SOURCES:
            raise ValueError(f"phase_source must be one of {PHASE_SOURCES}")

    @property
    def terms(self) -> tuple[str, ...]:
        return {
            "full": ("huber", "fft", "phase_reg"),
            "enhanced": ("huber", "fft"),
            "advanced": ("huber",),
            "base": ("huber",),
        }[self.ablation]

    @property
    def effective_tau_hat(self) -> float:
        return 1.0 if self.ablation == "base" else self.tau_hat

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossReport:
    total: Tensor
    huber: float
    fft: float
    phase_reg: float

    def as_dict(self) -> dict:
        return {"total": float(self.total.data), "huber": self.huber,
                "fft": self.fft, "phase_reg": self.phase_reg}


def _check_pair(y_true, y_pred):
    y_true = F.as_tensor(y_true)
    y_pred = F.as_tensor(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    return y_true, y_pred


def pseudo_huber_per_sample(y_true, y_pred, delta: float) -> Tensor:
    """Mean over the last axis of delta^2 (sqrt(1 + (e/delta)^2) - 1)."""
    y_true, y_pred = _check_pair(y_true, y_pred)
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = F.scale(y_true - y_pred, 1.0 / delta)
    v = F.sqrt(F.square(r) + 1.0) - 1.0
    return F.scale(F.mean(v, axis=-1), delta * delta)


def pseudo_huber(y_true, y_pred, delta: float) -> Tensor:
    return F.mean(pseudo_huber_per_sample(y_true, y_pred, delta))


def predicate_covariance(predicates: np.ndarray) -> np.ndarray:
    """(1/m) sum_s psi_s psi_s^T, normalized so each row sums to 1 when
    the predicates are all-ones."""
    psi = np.atleast_2d(np.asarray(predicates, dtype=np.float64))
    m, b = psi.shape
    return (psi.T @ psi) / (m * b)


def hybrid_weight_matrix(batch_size: int, tau_hat: float, predicates=None) -> np.ndarray:
    """tau_hat * I + (1 - tau_hat) * P; the default predicate is psi = 1."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if not 0.0 <= tau_hat <= 1.0:
        raise ValueError("tau_hat must lie in [0, 1]")
    if predicates is None:
        predicates = np.ones((1, batch_size))
    P = predicate_covariance(predicates)
    if P.shape != (batch_size, batch_size):
        raise ValueError(f"predicates give a {P.shape} matrix for batch size {batch_size}")
    return tau_hat * np.eye(batch_size) + (1.0 - tau_hat) * P


def weighted_huber(losses: Tensor, W: np.ndarray) -> Tensor:
    """(1/B) 1^T W l for per-sample losses ``l``."""
    losses = F.as_tensor(losses)
    b = losses.shape[0]
    if W.shape != (b, b):
        raise ValueError(f"weight matrix {W.shape} does not match {b} losses")
    col = F.reshape(losses, (b, 1))
    return F.scale(F.sum(F.matmul(W, col)), 1.0 / b)


def fft_loss_per_sample(y_true, y_pred) -> Tensor:
    y_true, y_pred = _check_pair(y_true, y_pred)
    diff = rfft(y_true - y_pred)
    return F.mean(F.modulus(diff), axis=-1)


def fft_loss(y_true, y_pred) -> Tensor:
    """Mean modulus of the one-sided spectral difference (batch-averaged)."""
    return F.mean(fft_loss_per_sample(y_true, y_pred))


def phase_regularizer(phases, lam: float) -> Tensor:
    """lam / (D-1) * sum of squared first differences along the last axis,
    averaged over any leading axes."""
    phases = F.as_tensor(phases)
    D = phases.shape[-1]
    if D < 2:
        raise ValueError("phase regularizer needs at least 2 phase features")
    diff = F.take(phases, (..., slice(1, None))) - F.take(phases, (..., slice(None, -1)))
    per = F.mean(F.square(diff), axis=-1)
    return F.scale(F.mean(per), lam)


def output_phases(y_pred) -> Tensor:
    """Phase of the forecast's spectrum, the alternative regularization target."""
    _, phase = F.polar_decompose(rfft(F.as_tensor(y_pred)))
    return phase


def composite(y_true, y_pred, phases, config: LossConfig) -> LossReport:
    """Sum of the active terms.  ``y_*`` are ``[B, L_pred]`` (or ``[L_pred]``);
    ``phases`` are the ``[B, D]`` phase features, or ignored when the
    configuration takes phases from the output spectrum."""
    y_true, y_pred = _check_pair(y_true, y_pred)
    if y_pred.ndim == 1:
        y_true = F.reshape(y_true, (1, -1))
        y_pred = F.reshape(y_pred, (1, -1))
    b = y_pred.shape[0]
    per = pseudo_huber_per_sample(y_true, y_pred, config.delta)
    if config.ablation == "base":
        huber = F.mean(per)
    else:
        huber = weighted_huber(per, hybrid_weight_matrix(b, config.effective_tau_hat))
    total = huber
    fft_v = 0.0
    phase_v = 0.0
    if "fft" in config.terms:
        f = F.scale(fft_loss(y_true, y_pred), config.w_fft)
        fft_v = float(f.data)
        total = total + f
    if "phase_reg" in config.terms:
        if config.phase_source == "output":
            phases = output_phases(y_pred)
        r = phase_regularizer(phases, config.lam)
        phase_v = float(r.data)
        total = total + r
    return LossReport(total, float(huber.data), fft_v, phase_v)
